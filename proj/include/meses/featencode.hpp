#pragma once

// Per-event feature tokens: multi-scale location encoding, Time2Vec start
// and stop tokens, factored entity prototypes and the activity projection.

#include <array>
#include <vector>

#include "meses/autograd.hpp"
#include "meses/config.hpp"
#include "meses/params.hpp"
#include "meses/schema.hpp"

namespace meses {

/// Geometric ladder from lambda_min to lambda_max, endpoints exact.
std::vector<double> space2vec_scales(std::size_t n, double lambda_min, double lambda_max);

/// 6 * scales.size() values: for each scale, for each of the three lattice
/// directions, (cos rho, sin rho).
std::vector<double> location_pe(const std::array<double, 2>& coords, const std::vector<double>& scales);

/// tau modulo the period (24 h or 168 h), or tau itself for Period::none.
double wrap_time(double tau, Period period);

/// Token order within an event.
enum Token : std::size_t { kLoc = 0, kStart = 1, kStop = 2, kEntity = 3 };

class FeatureEncoder {
 public:
  /// Registers "enc.*" parameters in `params`.
  FeatureEncoder(const ModelConfig& cfg, std::size_t n_entities, std::size_t n_activities, ParamRegistry& params,
                 Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<double>& scales() const { return scales_; }
  std::size_t n_entities() const { return n_entities_; }

  /// (n, d_f) location tokens.
  ag::Var encode_location(ag::Tape& tape, const std::vector<std::array<double, 2>>& coords) const;
  /// (n, d_f) Time2Vec tokens.
  ag::Var encode_time(ag::Tape& tape, const std::vector<double>& taus) const;
  /// Full prototype table P, (n_entities, d_f).
  ag::Var prototypes(ag::Tape& tape) const;

  /// (n, F*d_f): one row per event, tokens [loc, start, stop, entity?, activity].
  ag::Var embed(ag::Tape& tape, const std::vector<EventRecord>& events, const Substrate& substrate) const;

 private:
  ModelConfig cfg_;
  std::size_t n_entities_;
  std::size_t n_activities_;
  std::vector<double> scales_;
  Parameter* w_loc_;
  Parameter* t2v_w_;
  Parameter* t2v_b_;
  Parameter* proto_q_;
  Parameter* proto_wp_;
  Parameter* act_w_;
};

}  // namespace meses
