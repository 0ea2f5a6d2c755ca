#pragma once

// Pre-training heads and losses plus the fine-tune heads.

#include <optional>
#include <vector>

#include "meses/autograd.hpp"
#include "meses/config.hpp"
#include "meses/params.hpp"

namespace meses {

/// Mean of softplus(z) - y z over rows with valid[i] != 0.
/// Throws std::invalid_argument when no row is valid.
ag::Var masked_bce(ag::Var logits, const std::vector<double>& y, const std::vector<std::uint8_t>& valid);

class NoiseHead {
 public:
  NoiseHead(std::size_t d, ParamRegistry& params, Rng& rng);
  /// H (n, d) -> logits (n).
  ag::Var logits(ag::Tape& tape, ag::Var H) const;

 private:
  Parameter *w_, *b_;
};

class PrototypeProjector {
 public:
  PrototypeProjector(std::size_t d, std::size_t h_proj, std::size_t d_f, ParamRegistry& params, Rng& rng);
  /// H (n, d) -> unit rows (n, d_f).
  ag::Var project(ag::Tape& tape, ag::Var H) const;

 private:
  Parameter *w1_, *b1_, *w2_, *b2_;
};

/// InfoNCE over anchors. `anchor_rows` index rows of H, `anchor_entities`
/// their entities; P is the full prototype table. The candidate set is the
/// sorted distinct anchor entities. Returns nullopt when there are no anchors.
std::optional<ag::Var> prototype_loss(ag::Tape& tape, ag::Var H, ag::Var P, const PrototypeProjector& proj,
                                      const std::vector<std::size_t>& anchor_rows,
                                      const std::vector<std::size_t>& anchor_entities, double beta);

ag::Var joint_loss(ag::Var noise, std::optional<ag::Var> proto, double gamma);

/// Three-layer MLP d -> d -> d -> 1 giving one anomaly logit per row.
class AnomalyHead {
 public:
  AnomalyHead(std::size_t d, ParamRegistry& params, Rng& rng);
  ag::Var logits(ag::Tape& tape, ag::Var H) const;

 private:
  Parameter *w1_, *b1_, *w2_, *b2_, *w3_, *b3_;
};

/// Candidate list of one query in the sampled softmax; slot 0 is the target.
std::vector<std::size_t> poi_candidates(std::size_t target, const std::vector<std::size_t>& batch_targets,
                                        std::size_t n_contexts, std::size_t n_neg, Rng& rng);

class PoiHead {
 public:
  PoiHead(std::size_t d, std::size_t n_contexts, ParamRegistry& params, Rng& rng);
  /// Query MLP d -> d -> d.
  ag::Var query(ag::Tape& tape, ag::Var H) const;
  /// Scores against every context, (n, n_contexts), before temperature.
  ag::Var scores(ag::Tape& tape, ag::Var q) const;
  /// Rows of the POI embedding table.
  ag::Var embedding(ag::Tape& tape, const std::vector<std::size_t>& ids) const;
  /// Sampled-softmax cross-entropy averaged over queries.
  ag::Var loss(ag::Tape& tape, ag::Var q, const std::vector<std::size_t>& targets, std::size_t n_neg,
               double temperature, Rng& rng) const;
  std::size_t n_contexts() const { return n_contexts_; }

 private:
  std::size_t n_contexts_;
  Parameter *w1_, *b1_, *w2_, *b2_, *emb_;
};

/// One evaluated mixture over the time delta (hours).
struct Mixture {
  std::vector<double> weight, mean, scale;

  double pdf(double x) const;
  double log_pdf(double x) const;
  double cdf(double x) const;
  /// Probability mass in [delta - w, delta + w].
  double mass_within(double delta, double w) const;
  /// Highest-density point: 512-point grid over mean +- 4 scale, then
  /// golden-section refinement around the best grid cell.
  double mode() const;
};

class GmmTimeHead {
 public:
  GmmTimeHead(std::size_t d, std::size_t k, ParamRegistry& params, Rng& rng);
  /// q (n, d) and next-context embeddings e (n, d) -> raw parameters (n, 3K).
  ag::Var raw(ag::Tape& tape, ag::Var q, ag::Var e) const;
  /// Mean negative log-likelihood of deltas under the mixtures of `raw`.
  ag::Var nll(ag::Var raw, const std::vector<double>& deltas) const;
  /// Decodes row i of an evaluated raw tensor.
  Mixture mixture(const Tensor& raw, std::size_t i) const;
  std::size_t k() const { return k_; }

  static constexpr double kMinScale = 1e-3;

 private:
  std::size_t k_;
  Parameter *w1_, *b1_, *w2_, *b2_;
};

}  // namespace meses
