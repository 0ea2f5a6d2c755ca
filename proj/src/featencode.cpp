#include "meses/featencode.hpp"

#include <cmath>
#include <stdexcept>

namespace meses {

std::vector<double> space2vec_scales(std::size_t n, double lambda_min, double lambda_max) {
  if (n == 0) throw std::invalid_argument("space2vec_scales: n must be >= 1");
  std::vector<double> s(n);
  if (n == 1) {
    s[0] = lambda_min;
    return s;
  }
  const double ratio = lambda_max / lambda_min;
  for (std::size_t i = 0; i < n; ++i)
    s[i] = lambda_min * std::pow(ratio, static_cast<double>(i) / static_cast<double>(n - 1));
  s.front() = lambda_min;
  s.back() = lambda_max;
  return s;
}

std::vector<double> location_pe(const std::array<double, 2>& coords, const std::vector<double>& scales) {
  static const double kA[3][2] = {{1.0, 0.0}, {-0.5, std::sqrt(3.0) / 2.0}, {-0.5, -std::sqrt(3.0) / 2.0}};
  std::vector<double> pe;
  pe.reserve(6 * scales.size());
  for (double lambda : scales) {
    for (const auto& a : kA) {
      const double rho = (a[0] * coords[0] + a[1] * coords[1]) / lambda;
      pe.push_back(std::cos(rho));
      pe.push_back(std::sin(rho));
    }
  }
  return pe;
}

double wrap_time(double tau, Period period) {
  double p = 0.0;
  switch (period) {
    case Period::daily: p = 24.0; break;
    case Period::weekly: p = 168.0; break;
    case Period::none: return tau;
  }
  double r = std::fmod(tau, p);
  if (r < 0) r += p;
  return r;
}

FeatureEncoder::FeatureEncoder(const ModelConfig& cfg, std::size_t n_entities, std::size_t n_activities,
                               ParamRegistry& params, Rng& rng)
    : cfg_(cfg), n_entities_(n_entities), n_activities_(n_activities) {
  cfg_.validate();
  if (n_entities == 0 || n_activities == 0) throw std::invalid_argument("FeatureEncoder: empty entity or activity set");
  scales_ = space2vec_scales(cfg.n_scales, cfg.lambda_min, cfg.lambda_max);
  const std::size_t df = cfg.d_f();
  const std::size_t npe = 6 * cfg.n_scales;
  w_loc_ = &params.add_uniform("enc.loc.w", {npe, df}, npe, rng);
  t2v_w_ = &params.add_uniform("enc.t2v.w", {1, df}, 1, rng);
  t2v_b_ = &params.add_constant("enc.t2v.b", {df}, 0.0);
  proto_q_ = &params.add_uniform("enc.proto.q", {n_entities, cfg.proto_rank}, 1, rng);
  proto_wp_ = &params.add_uniform("enc.proto.wp", {cfg.proto_rank, df}, cfg.proto_rank, rng);
  act_w_ = &params.add_uniform("enc.act.w", {n_activities, df}, n_activities, rng);
}

ag::Var FeatureEncoder::encode_location(ag::Tape& tape, const std::vector<std::array<double, 2>>& coords) const {
  const std::size_t npe = 6 * scales_.size();
  Tensor pe({coords.size(), npe});
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto row = location_pe(coords[i], scales_);
    std::copy(row.begin(), row.end(), pe.data() + i * npe);
  }
  return ag::relu(ag::matmul(tape.constant(std::move(pe)), tape.param(*w_loc_)));
}

ag::Var FeatureEncoder::encode_time(ag::Tape& tape, const std::vector<double>& taus) const {
  Tensor x({taus.size(), 1});
  for (std::size_t i = 0; i < taus.size(); ++i) x.data()[i] = wrap_time(taus[i], cfg_.period);
  const ag::Var lin = ag::add_bias(ag::matmul(tape.constant(std::move(x)), tape.param(*t2v_w_)), tape.param(*t2v_b_));
  const std::size_t df = cfg_.d_f();
  if (df == 1) return lin;
  return ag::concat({ag::slice(lin, 1, 0, 1), ag::sin(ag::slice(lin, 1, 1, df - 1))}, 1);
}

ag::Var FeatureEncoder::prototypes(ag::Tape& tape) const {
  return ag::matmul(tape.param(*proto_q_), tape.param(*proto_wp_));
}

ag::Var FeatureEncoder::embed(ag::Tape& tape, const std::vector<EventRecord>& events,
                              const Substrate& substrate) const {
  const std::size_t n = events.size();
  if (n == 0) throw std::invalid_argument("FeatureEncoder::embed: no events");
  std::vector<std::array<double, 2>> coords(n);
  std::vector<double> taus(2 * n);
  std::vector<std::size_t> ent(n), act(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = events[i];
    coords[i] = substrate.at(e.context_id).coords;
    taus[i] = e.t_start;
    taus[n + i] = e.has_duration ? e.t_start + e.duration : e.t_start;
    if (e.entity_id >= n_entities_) throw std::out_of_range("FeatureEncoder::embed: entity id out of range");
    if (e.activity >= n_activities_) throw std::out_of_range("FeatureEncoder::embed: activity out of range");
    ent[i] = e.entity_id;
    act[i] = e.activity;
  }
  const ag::Var loc = encode_location(tape, coords);
  const ag::Var time = encode_time(tape, taus);
  std::vector<ag::Var> tokens{loc, ag::slice(time, 0, 0, n), ag::slice(time, 0, n, n)};
  if (!cfg_.drop_entity_token) tokens.push_back(ag::gather_rows(prototypes(tape), ent));
  tokens.push_back(ag::gather_rows(tape.param(*act_w_), act));
  return ag::concat(tokens, 1);
}

}  // namespace meses
