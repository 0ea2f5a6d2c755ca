#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <iterator>

#include "meses/checkpoint.hpp"
#include "meses/gradcheck.hpp"

using namespace meses;
namespace ag = meses::ag;

namespace {

Parameter& rand_param(ParamRegistry& reg, const std::string& name, Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(s));
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  return reg.add(name, std::move(t));
}

void expect_all_pass(ParamRegistry& reg, const LossBuilder& f) {
  GradCheckOptions opt;
  opt.n_coords = 1000;
  auto rep = grad_check(reg, f, opt);
  EXPECT_GT(rep.checked, 0u);
  EXPECT_EQ(rep.passed, rep.checked) << "max rel error " << rep.max_rel_error;
}

}  // namespace

TEST(GradCheck, LinearFunctionIsExactToRounding) {
  Rng rng(1);
  ParamRegistry reg;
  auto& w = rand_param(reg, "w", {6}, rng);
  std::vector<double> c = {1, -2, 3, 0.5, 7, -1};
  auto rep = grad_check(reg, [&](ag::Tape& t) { return ag::weighted_sum(t.param(w), c); }, {});
  EXPECT_EQ(rep.skipped, 0u);
  EXPECT_LT(rep.max_rel_error, 1e-9);
}

TEST(GradCheck, ReluKinkCoordinateIsSkipped) {
  ParamRegistry reg;
  auto& w = reg.add("w", Tensor({2}, std::vector<double>{1e-6, 0.7}));
  auto rep = grad_check(reg, [&](ag::Tape& t) { return ag::sum(ag::relu(t.param(w))); }, {});
  ASSERT_EQ(rep.coords.size(), 2u);
  for (const auto& c : rep.coords) EXPECT_EQ(c.skipped, c.index == 0);
}

TEST(GradCheck, ElementwiseOps) {
  Rng rng(2);
  ParamRegistry reg;
  auto& a = rand_param(reg, "a", {3, 4}, rng, 0.2, 1.5);
  auto& b = rand_param(reg, "b", {3, 4}, rng);
  expect_all_pass(reg, [&](ag::Tape& t) {
    auto x = t.param(a), y = t.param(b);
    auto s = ag::add(ag::mul(ag::log(x), ag::sin(y)), ag::sub(ag::exp(y), ag::sqrt(x)));
    s = ag::add(s, ag::softplus(ag::scale(y, 3.0)));
    s = ag::add(s, ag::sigmoid(ag::add_scalar(ag::square(y), -0.3)));
    s = ag::add(s, ag::clamp_min(ag::scale(y, 2.0), 0.25));
    s = ag::add(s, ag::reshape(ag::logsumexp(ag::reshape(ag::mul(x, y), {3, 4, 1})), {3, 4}));
    return ag::mean(s);
  });
}

TEST(GradCheck, MatmulLinearLayerNormSoftmax) {
  Rng rng(3);
  ParamRegistry reg;
  auto& x = rand_param(reg, "x", {5, 4}, rng);
  auto& w = rand_param(reg, "w", {4, 6}, rng);
  auto& b = rand_param(reg, "b", {6}, rng);
  auto& g = rand_param(reg, "g", {6}, rng);
  auto& be = rand_param(reg, "be", {6}, rng);
  auto& w2 = rand_param(reg, "w2", {3, 6}, rng);
  auto& c = rand_param(reg, "c", {5}, rng);
  ag::Mask mask(15, 0);
  mask[4] = mask[8] = 1;
  expect_all_pass(reg, [&](ag::Tape& t) {
    auto h = ag::layer_norm(ag::linear(t.param(x), t.param(w), t.param(b)), t.param(g), t.param(be));
    h = ag::mul_col(h, t.param(c));
    auto s = ag::softmax(ag::matmul_nt(h, t.param(w2)), &mask);
    auto ls = ag::log_softmax(ag::matmul_nt(h, t.param(w2)), &mask);
    std::vector<double> wts(15);
    for (std::size_t i = 0; i < 15; ++i) wts[i] = std::cos(static_cast<double>(i));
    return ag::add(ag::weighted_sum(s, wts), ag::weighted_sum(ls, wts));
  });
}

TEST(GradCheck, ShapeOps) {
  Rng rng(4);
  ParamRegistry reg;
  auto& x = rand_param(reg, "x", {2, 3, 4}, rng);
  auto& y = rand_param(reg, "y", {2, 2, 4}, rng);
  expect_all_pass(reg, [&](ag::Tape& t) {
    auto px = t.param(x);
    auto cat = ag::concat({px, t.param(y)}, 1);                    // (2,5,4)
    auto perm = ag::permute(cat, {2, 0, 1});                       // (4,2,5)
    auto sl = ag::slice(perm, 2, 1, 3);                            // (4,2,3)
    auto r = ag::reshape(sl, {8, 3});
    auto gathered = ag::gather_rows(r, {0, 3, 3, 7});
    auto scattered = ag::scatter_rows(gathered, {1, 0, 4, 2}, 5);
    auto tr = ag::transpose(scattered);                            // (3,5)
    auto picked = ag::pick(tr, {4, 0, 2});
    auto l2 = ag::l2_normalize(ag::reshape(px, {6, 4}));
    std::vector<double> w(3 * 5);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * static_cast<double>(i) - 0.5;
    return ag::add(ag::add(ag::weighted_sum(tr, w), ag::sum(ag::square(picked))),
                   ag::sum(ag::sin(ag::sum_cols(l2))));
  });
}

TEST(GradCheck, MaskedMultiHeadAttention) {
  Rng rng(5);
  ParamRegistry reg;
  auto& q = rand_param(reg, "q", {3 * 2, 6}, rng);
  auto& k = rand_param(reg, "k", {3 * 4, 6}, rng);
  auto& v = rand_param(reg, "v", {3 * 4, 6}, rng);
  ag::Mask mask = {0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 1};
  expect_all_pass(reg, [&](ag::Tape& t) {
    auto o = ag::attention(t.param(q), t.param(k), t.param(v), 3, 2, 4, 2, mask);
    std::vector<double> w(o.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + static_cast<double>(i));
    return ag::weighted_sum(o, w);
  });
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  Rng rng(6);
  ParamRegistry reg;
  rand_param(reg, "enc.w", {3, 5}, rng);
  rand_param(reg, "enc.b", {5}, rng);
  reg.add("scalar", Tensor(Shape{}, 0.1));
  const std::string a = ::testing::TempDir() + "ckpt_a.bin", b = ::testing::TempDir() + "ckpt_b.bin";
  save_checkpoint(a, reg, {{"d", 40}});
  ParamRegistry loaded;
  auto manifest = load_checkpoint(a, loaded, true);
  EXPECT_EQ(manifest["d"], 40);
  save_checkpoint(b, loaded, manifest);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(a), slurp(b));
  for (std::size_t i = 0; i < reg.size(); ++i) EXPECT_EQ(reg[i].value, loaded[i].value);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  ParamRegistry reg;
  reg.add("w", Tensor({2, 2}, 1.0));
  const std::string p = ::testing::TempDir() + "ckpt_c.bin";
  save_checkpoint(p, reg, {});
  ParamRegistry other;
  other.add("w", Tensor({4}, 0.0));
  EXPECT_THROW(load_checkpoint(p, other), FormatError);
}
