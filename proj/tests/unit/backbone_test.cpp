#include <gtest/gtest.h>

#include "support/fixtures.hpp"
#include "meses/backbone.hpp"

using namespace meses;

namespace {

struct Clique {
  ModelConfig cfg = fixture::desk_model();
  CliqueDims dims;
  CliqueMasks masks;
  Tensor x;
  ParamRegistry params;
  std::unique_ptr<Backbone> bb;

  explicit Clique(std::size_t B = 2, std::size_t T = 5, std::size_t C = 3, bool bypass = false, std::size_t L = 2) {
    cfg.T = T;
    cfg.C = C;
    cfg.L = L;
    cfg.bypass_cooc = bypass;
    Rng rng(11);
    bb = std::make_unique<Backbone>(cfg, params, rng);
    dims = {B, T, C, cfg.F, cfg.d_f()};
    masks.peer_masked.assign(B * T * C, 0);
    masks.seq_pad.assign(B * T, 0);
    // Window 0 pads its last two positions; slot 2 of every event is a padded peer.
    for (std::size_t t = T - 2; t < T; ++t) masks.seq_pad[t] = 1;
    for (std::size_t bt = 0; bt < B * T; ++bt) masks.peer_masked[bt * C + C - 1] = 1;
    x = Tensor({B * T * C * cfg.F, cfg.d_f()});
    Rng r(5);
    for (auto& v : x.storage()) v = uniform(r, -1, 1);
  }

  std::size_t row(std::size_t b, std::size_t t, std::size_t c, std::size_t f = 0) const {
    return (((b * dims.T + t) * dims.C + c) * dims.F + f) * dims.d_f;
  }

  Tensor forward(const Tensor& in) const {
    ag::Tape tape(false);
    return bb->forward(tape, tape.constant(in), dims, masks).value();
  }
  Tensor blocks(const Tensor& in, std::size_t n) const {
    ag::Tape tape(false);
    return bb->run_blocks(tape, tape.constant(in), dims, masks, n).value();
  }
};

bool focal_equal_on_real(const Clique& s, const Tensor& a, const Tensor& b) {
  const std::size_t d = s.cfg.d;
  for (std::size_t bt = 0; bt < s.dims.B * s.dims.T; ++bt) {
    if (s.masks.seq_pad[bt]) continue;
    for (std::size_t k = 0; k < d; ++k)
      if (a.data()[bt * d + k] != b.data()[bt * d + k]) return false;
  }
  return true;
}

}  // namespace

TEST(Backbone, OutputShape) {
  Clique s;
  const auto h = s.forward(s.x);
  EXPECT_EQ(h.shape(), (Shape{s.dims.B * s.dims.T, s.cfg.d}));
}

TEST(Backbone, ZeroBlocksIsFlattenedFocalInput) {
  Clique s(2, 5, 3, false, 0);
  const auto h = s.forward(s.x);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t k = 0; k < s.cfg.d; ++k)
        EXPECT_EQ(h.data()[(b * 5 + t) * s.cfg.d + k], s.x.data()[s.row(b, t, 0) + k]);
}

TEST(Backbone, MaskedPeerSlotDoesNotInfluenceFocal) {
  Clique s;
  Tensor y = s.x;
  for (std::size_t k = 0; k < s.cfg.F * s.cfg.d_f(); ++k) y.data()[s.row(1, 2, 2) + k] += 3.0;
  EXPECT_TRUE(focal_equal_on_real(s, s.forward(s.x), s.forward(y)));
}

TEST(Backbone, PaddedPositionDoesNotInfluenceRealPositions) {
  Clique s;
  Tensor y = s.x;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < s.cfg.F * s.cfg.d_f(); ++k) y.data()[s.row(0, 4, c) + k] -= 2.0;
  EXPECT_TRUE(focal_equal_on_real(s, s.forward(s.x), s.forward(y)));
}

TEST(Backbone, UnmaskedPeerDoesInfluenceFocal) {
  Clique s;
  Tensor y = s.x;
  y.data()[s.row(1, 2, 1)] += 1.0;
  EXPECT_FALSE(focal_equal_on_real(s, s.forward(s.x), s.forward(y)));
}

TEST(Backbone, FocalValuesNeverReachPeerSlots) {
  Clique s;
  Tensor y = s.x;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 5; ++t) y.data()[s.row(b, t, 0, 1) + 1] += 0.7;
  for (std::size_t n = 1; n <= s.cfg.L; ++n) {
    const auto a = s.blocks(s.x, n), b = s.blocks(y, n);
    const std::size_t slot = s.cfg.F * s.cfg.d_f();
    for (std::size_t bt = 0; bt < 10; ++bt)
      for (std::size_t c = 1; c < 3; ++c)
        for (std::size_t k = 0; k < slot; ++k)
          ASSERT_EQ(a.data()[(bt * 3 + c) * slot + k], b.data()[(bt * 3 + c) * slot + k]) << "block " << n;
  }
}

TEST(Backbone, CrossAttentionLeavesPeersUnchanged) {
  Clique s;
  ag::Tape tape(false);
  const auto in = tape.constant(s.x);
  const auto out = s.bb->peer_cross_attention(tape, 0, in, s.dims, s.masks);
  const auto seq = s.bb->sequence_attention(tape, 0, in, s.dims, s.masks);
  const std::size_t slot = s.cfg.F * s.cfg.d_f();
  for (std::size_t bt = 0; bt < 10; ++bt)
    for (std::size_t c = 1; c < 3; ++c)
      for (std::size_t k = 0; k < slot; ++k) {
        ASSERT_EQ(out.value().data()[(bt * 3 + c) * slot + k], s.x.data()[(bt * 3 + c) * slot + k]);
        ASSERT_EQ(seq.value().data()[(bt * 3 + c) * slot + k], s.x.data()[(bt * 3 + c) * slot + k]);
      }
}

TEST(Backbone, AllPeersMaskedMeansSelfAttention) {
  // With only slot 0 visible the attention output is v(focal), so the
  // result does not depend on the other slots at all.
  Clique s(1, 2, 3);
  for (std::size_t bt = 0; bt < 2; ++bt) s.masks.peer_masked[bt * 3 + 1] = 1;
  Tensor y = s.x;
  for (std::size_t k = 0; k < 2 * s.cfg.F * s.cfg.d_f(); ++k) y.data()[s.row(0, 0, 1) + k] += 9.0;
  ag::Tape tape(false);
  const auto a = s.bb->peer_cross_attention(tape, 0, tape.constant(s.x), s.dims, s.masks);
  const auto b = s.bb->peer_cross_attention(tape, 0, tape.constant(y), s.dims, s.masks);
  for (std::size_t f = 0; f < s.cfg.F; ++f)
    for (std::size_t k = 0; k < s.cfg.d_f(); ++k)
      EXPECT_EQ(a.value().data()[s.row(0, 0, 0, f) + k], b.value().data()[s.row(0, 0, 0, f) + k]);
}

TEST(Backbone, BypassEqualsSkippedSubLayer) {
  Clique bypass(2, 5, 3, true);
  Clique ref(2, 5, 3, false);
  ag::Tape tape(false);
  ag::Var x = tape.constant(ref.x);
  for (std::size_t l = 0; l < ref.cfg.L; ++l) {
    x = ref.bb->feature_attention(tape, l, x, ref.dims);
    x = ref.bb->sequence_attention(tape, l, x, ref.dims, ref.masks);
  }
  const auto expect = bypass.blocks(bypass.x, bypass.cfg.L);
  EXPECT_EQ(expect.storage(), x.value().storage());
  ag::Tape t2(false);
  EXPECT_EQ(bypass.bb->peer_cross_attention(t2, 0, t2.constant(bypass.x), bypass.dims, bypass.masks).value().storage(),
            bypass.x.storage());
}

TEST(Backbone, BatchPermutationPermutesOutputs) {
  Clique s;
  s.masks.seq_pad.assign(10, 0);
  Tensor y(s.x.shape());
  const std::size_t per = s.x.size() / 2;
  std::copy(s.x.data() + per, s.x.data() + 2 * per, y.data());
  std::copy(s.x.data(), s.x.data() + per, y.data() + per);
  const auto a = s.forward(s.x), b = s.forward(y);
  const std::size_t half = a.size() / 2;
  for (std::size_t i = 0; i < half; ++i) {
    EXPECT_EQ(a.data()[i], b.data()[half + i]);
    EXPECT_EQ(a.data()[half + i], b.data()[i]);
  }
}

TEST(Backbone, SingleTokenAxes) {
  // T = 1 and C = 1 still run and keep shapes.
  Clique s(2, 1, 1);
  s.masks.seq_pad.assign(2, 0);
  s.masks.peer_masked.assign(2, 0);
  EXPECT_EQ(s.forward(s.x).shape(), (Shape{2, s.cfg.d}));
}

TEST(Backbone, RejectsMaskedFocal) {
  Clique s;
  s.masks.peer_masked[0] = 1;
  EXPECT_THROW(s.forward(s.x), std::invalid_argument);
}
