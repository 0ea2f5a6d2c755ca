#pragma once

// Factorized-attention backbone over the (B, T, C, F, d_f) clique tensor.
// Rows of the input are ordered (b, t, c, f); slot c = 0 is the focal event.

#include <string>
#include <vector>

#include "meses/autograd.hpp"
#include "meses/config.hpp"
#include "meses/params.hpp"

namespace meses {

struct CliqueDims {
  std::size_t B = 0, T = 0, C = 0, F = 0, d_f = 0;
  std::size_t slots() const { return B * T * C; }
};

/// Masks of one batch. peer_masked: B*T*C entries (1 = padded peer; slot 0
/// never set). seq_pad: B*T entries (1 = padded position).
struct CliqueMasks {
  std::vector<std::uint8_t> peer_masked;
  std::vector<std::uint8_t> seq_pad;
};

class Backbone {
 public:
  /// Registers "bb.{l}.{feat,xattn,seq}.*" parameters in `params`.
  Backbone(const ModelConfig& cfg, ParamRegistry& params, Rng& rng);

  /// x: (B*T*C*F, d_f). Returns the focal readout (B*T, d).
  ag::Var forward(ag::Tape& tape, ag::Var x, const CliqueDims& dims, const CliqueMasks& masks) const;

  /// Runs the first `n_blocks` blocks and returns the full tensor, rows (b,t,c,f).
  ag::Var run_blocks(ag::Tape& tape, ag::Var x, const CliqueDims& dims, const CliqueMasks& masks,
                     std::size_t n_blocks) const;

  // Individual sub-layers of block l; inputs and outputs are full tensors.
  ag::Var feature_attention(ag::Tape& tape, std::size_t l, ag::Var x, const CliqueDims& dims) const;
  ag::Var peer_cross_attention(ag::Tape& tape, std::size_t l, ag::Var x, const CliqueDims& dims,
                               const CliqueMasks& masks) const;
  ag::Var sequence_attention(ag::Tape& tape, std::size_t l, ag::Var x, const CliqueDims& dims,
                             const CliqueMasks& masks) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  struct Layer {
    Parameter *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo, *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
  };
  Layer make_layer(const std::string& prefix, ParamRegistry& params, Rng& rng) const;
  /// Pre-LN encoder layer. xq: (groups*nq, d_f) queries, xkv: (groups*nk, d_f)
  /// keys/values (pass the same Var for self-attention).
  ag::Var encoder_layer(ag::Tape& tape, const Layer& p, ag::Var xq, ag::Var xkv, bool self, std::size_t groups,
                        std::size_t nq, std::size_t nk, const ag::Mask& key_masked) const;

  ModelConfig cfg_;
  std::vector<Layer> feat_, xattn_, seq_;
};

}  // namespace meses
