#include "meses/backbone.hpp"

#include <stdexcept>

namespace meses {

Backbone::Backbone(const ModelConfig& cfg, ParamRegistry& params, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  for (std::size_t l = 0; l < cfg.L; ++l) {
    const std::string p = "bb." + std::to_string(l) + ".";
    feat_.push_back(make_layer(p + "feat.", params, rng));
    xattn_.push_back(make_layer(p + "xattn.", params, rng));
    seq_.push_back(make_layer(p + "seq.", params, rng));
  }
}

Backbone::Layer Backbone::make_layer(const std::string& prefix, ParamRegistry& params, Rng& rng) const {
  const std::size_t df = cfg_.d_f(), dff = cfg_.d;
  Layer L{};
  L.ln1_g = &params.add_constant(prefix + "ln1_g", {df}, 1.0);
  L.ln1_b = &params.add_constant(prefix + "ln1_b", {df}, 0.0);
  L.wq = &params.add_uniform(prefix + "wq", {df, df}, df, rng);
  L.bq = &params.add_constant(prefix + "bq", {df}, 0.0);
  L.wk = &params.add_uniform(prefix + "wk", {df, df}, df, rng);
  L.bk = &params.add_constant(prefix + "bk", {df}, 0.0);
  L.wv = &params.add_uniform(prefix + "wv", {df, df}, df, rng);
  L.bv = &params.add_constant(prefix + "bv", {df}, 0.0);
  L.wo = &params.add_uniform(prefix + "wo", {df, df}, df, rng);
  L.bo = &params.add_constant(prefix + "bo", {df}, 0.0);
  L.ln2_g = &params.add_constant(prefix + "ln2_g", {df}, 1.0);
  L.ln2_b = &params.add_constant(prefix + "ln2_b", {df}, 0.0);
  L.w1 = &params.add_uniform(prefix + "w1", {df, dff}, df, rng);
  L.b1 = &params.add_constant(prefix + "b1", {dff}, 0.0);
  L.w2 = &params.add_uniform(prefix + "w2", {dff, df}, dff, rng);
  L.b2 = &params.add_constant(prefix + "b2", {df}, 0.0);
  return L;
}

ag::Var Backbone::encoder_layer(ag::Tape& tape, const Layer& p, ag::Var xq, ag::Var xkv, bool self,
                                std::size_t groups, std::size_t nq, std::size_t nk,
                                const ag::Mask& key_masked) const {
  const ag::Var g1 = tape.param(*p.ln1_g), b1 = tape.param(*p.ln1_b);
  const ag::Var hq = ag::layer_norm(xq, g1, b1);
  const ag::Var hkv = self ? hq : ag::layer_norm(xkv, g1, b1);
  const ag::Var q = ag::linear(hq, tape.param(*p.wq), tape.param(*p.bq));
  const ag::Var k = ag::linear(hkv, tape.param(*p.wk), tape.param(*p.bk));
  const ag::Var v = ag::linear(hkv, tape.param(*p.wv), tape.param(*p.bv));
  const ag::Var a = ag::attention(q, k, v, groups, nq, nk, cfg_.H, key_masked);
  const ag::Var h = ag::add(xq, ag::linear(a, tape.param(*p.wo), tape.param(*p.bo)));
  const ag::Var h2 = ag::layer_norm(h, tape.param(*p.ln2_g), tape.param(*p.ln2_b));
  const ag::Var m = ag::linear(ag::relu(ag::linear(h2, tape.param(*p.w1), tape.param(*p.b1))), tape.param(*p.w2),
                               tape.param(*p.b2));
  return ag::add(h, m);
}

ag::Var Backbone::feature_attention(ag::Tape& tape, std::size_t l, ag::Var x, const CliqueDims& dims) const {
  return encoder_layer(tape, feat_.at(l), x, x, true, dims.slots(), dims.F, dims.F, {});
}

ag::Var Backbone::peer_cross_attention(ag::Tape& tape, std::size_t l, ag::Var x, const CliqueDims& dims,
                                       const CliqueMasks& masks) const {
  if (cfg_.bypass_cooc) return x;
  const auto [B, T, C, F, df] = dims;
  const ag::Var x5 = ag::reshape(x, {B, T, C, F, df});
  // Keys grouped by (b, t, f) with the C slots as tokens.
  const ag::Var keys = ag::reshape(ag::permute(x5, {0, 1, 3, 2, 4}), {B * T * F * C, df});
  const ag::Var focal = ag::slice(x5, 2, 0, 1);  // (B, T, 1, F, df)
  const ag::Var q = ag::reshape(focal, {B * T * F, df});
  ag::Mask km(B * T * F * C);
  for (std::size_t bt = 0; bt < B * T; ++bt)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t c = 0; c < C; ++c) km[(bt * F + f) * C + c] = masks.peer_masked[bt * C + c];
  const ag::Var upd = encoder_layer(tape, xattn_.at(l), q, keys, false, B * T * F, 1, C, km);
  const ag::Var new_focal = ag::reshape(upd, {B, T, 1, F, df});
  if (C == 1) return ag::reshape(new_focal, {B * T * F, df});
  const ag::Var out = ag::concat({new_focal, ag::slice(x5, 2, 1, C - 1)}, 2);
  return ag::reshape(out, {B * T * C * F, df});
}

ag::Var Backbone::sequence_attention(ag::Tape& tape, std::size_t l, ag::Var x, const CliqueDims& dims,
                                     const CliqueMasks& masks) const {
  const auto [B, T, C, F, df] = dims;
  const ag::Var x5 = ag::reshape(x, {B, T, C, F, df});
  const ag::Var focal = ag::slice(x5, 2, 0, 1);                                        // (B,T,1,F,df)
  const ag::Var tok = ag::reshape(ag::permute(ag::reshape(focal, {B, T, F, df}), {0, 2, 1, 3}), {B * F * T, df});
  ag::Mask km(B * F * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t t = 0; t < T; ++t) km[(b * F + f) * T + t] = masks.seq_pad[b * T + t];
  const ag::Var upd = encoder_layer(tape, seq_.at(l), tok, tok, true, B * F, T, T, km);
  const ag::Var new_focal = ag::reshape(ag::permute(ag::reshape(upd, {B, F, T, df}), {0, 2, 1, 3}), {B, T, 1, F, df});
  if (C == 1) return ag::reshape(new_focal, {B * T * F, df});
  return ag::reshape(ag::concat({new_focal, ag::slice(x5, 2, 1, C - 1)}, 2), {B * T * C * F, df});
}

ag::Var Backbone::run_blocks(ag::Tape& tape, ag::Var x, const CliqueDims& dims, const CliqueMasks& masks,
                             std::size_t n_blocks) const {
  if (x.shape() != Shape{dims.slots() * dims.F, dims.d_f}) throw ShapeError("Backbone: input shape mismatch");
  if (masks.peer_masked.size() != dims.slots() || masks.seq_pad.size() != dims.B * dims.T)
    throw ShapeError("Backbone: mask size mismatch");
  for (std::size_t bt = 0; bt < dims.B * dims.T; ++bt)
    if (masks.peer_masked[bt * dims.C]) throw std::invalid_argument("Backbone: focal slot may not be masked");
  for (std::size_t l = 0; l < n_blocks; ++l) {
    x = feature_attention(tape, l, x, dims);
    x = peer_cross_attention(tape, l, x, dims, masks);
    x = sequence_attention(tape, l, x, dims, masks);
  }
  return x;
}

ag::Var Backbone::forward(ag::Tape& tape, ag::Var x, const CliqueDims& dims, const CliqueMasks& masks) const {
  const ag::Var out = run_blocks(tape, x, dims, masks, cfg_.L);
  const ag::Var focal = ag::slice(ag::reshape(out, {dims.B * dims.T, dims.C, dims.F * dims.d_f}), 1, 0, 1);
  return ag::reshape(focal, {dims.B * dims.T, dims.F * dims.d_f});
}

}  // namespace meses
