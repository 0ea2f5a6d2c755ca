#pragma once

// Small corpora and batches shared by unit and acceptance tests.

#include <memory>
#include <vector>

#include "meses/cooc.hpp"
#include "meses/model.hpp"
#include "meses/perturb.hpp"
#include "meses/synthgen.hpp"

namespace fixture {

struct DeskBatch {
  meses::Generated gen;
  meses::CoocIndex index;
  std::vector<meses::PerturbedWindow> windows;
  meses::Batch batch;
};

/// Desk-sized corpus (20 entities, 16 contexts) and a corrupted batch of B
/// windows of length T with peers from an index over the whole corpus.
inline DeskBatch desk_batch(std::uint64_t seed, std::size_t B = 4, std::size_t T = 16, std::size_t C = 4,
                            std::size_t events_per_entity = 40, double p_norm = 0.0) {
  DeskBatch out;
  meses::GenConfig g;
  g.n_entities = 20;
  g.n_contexts = 16;
  g.hotspot_count = 3;
  g.events_per_entity = events_per_entity;
  g.seed = seed;
  out.gen = meses::generate(g);
  const auto& ev = out.gen.corpus.events;
  std::vector<std::size_t> rows(ev.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  out.index = meses::CoocIndex::build(ev, rows, g.n_contexts, meses::Partition::all);
  auto windows = meses::chunk_windows(ev, rows, T);
  meses::PerturbConfig pc;
  pc.p_norm = p_norm;
  meses::Rng rng = meses::derive_rng(seed, {99});
  const std::size_t stride = windows.size() / B;
  for (std::size_t b = 0; b < B; ++b)
    out.windows.push_back(meses::corrupt(windows[b * stride], out.gen.corpus.substrate, pc, rng));
  std::vector<const meses::PerturbedWindow*> ptrs;
  for (const auto& w : out.windows) ptrs.push_back(&w);
  out.batch = meses::assemble_batch(ptrs, C, {&out.index, &out.gen.corpus.events, 0.0});
  return out;
}

inline meses::ModelConfig desk_model() {
  meses::ModelConfig m;
  m.d = 40;
  m.F = 5;
  m.L = 2;
  m.H = 2;
  m.T = 16;
  m.C = 4;
  return m;
}

}  // namespace fixture
