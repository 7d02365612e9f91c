#pragma once

#include <cstdint>
#include <vector>

#include "ckd/dataio.hpp"
#include "ckd/rng.hpp"

namespace ckd {

// Easy-to-hard scheduling: samples are scored by a difficulty measure that
// grows with sequence length and shrinks with item popularity, sorted, split
// into near-equal buckets, and released to the trainer one bucket prefix at
// a time before switching to uniform sampling.

struct CurriculumConfig {
  double alpha = 0.5;              // popularity discount in the difficulty score
  std::size_t num_buckets = 4;
  std::size_t epochs_per_stage = 1;
  bool enabled = true;
};

struct CurriculumPlan {
  std::vector<std::size_t> ordered_samples;  // ids, ascending difficulty
  std::vector<std::size_t> bucket_bounds;    // B+1 cuts into ordered_samples
  std::vector<double> ordered_scores;        // difficulty, aligned with order
  std::size_t stage = 0;                     // last stage handed out (0 = none)

  std::size_t num_buckets() const { return bucket_bounds.size() - 1; }
};

// Difficulty of one training sequence: length ratio minus alpha times the
// mean popularity of its items. Larger values are harder samples.
double ssl_score(const std::vector<std::int64_t>& sample,
                 const PopularityTable& stats, std::size_t n_max, double alpha);

// Scores every sample (n_max = longest sample in the list), sorts ascending
// with ties broken by ascending sample id, and cuts into num_buckets parts
// whose sizes differ by at most one (earlier buckets take the extra).
CurriculumPlan build_plan(
    const std::vector<std::vector<std::int64_t>>& samples,
    const PopularityTable& stats, const CurriculumConfig& config);

// Union of buckets 1..r (r is 1-based); r = num_buckets yields every sample.
std::vector<std::size_t> stage_samples(const CurriculumPlan& plan,
                                       std::size_t r);

// One epoch's visit order over the given ids: a seeded uniform shuffle.
// Used both inside stages and for the post-curriculum / disabled phases.
std::vector<std::size_t> epoch_stream(std::vector<std::size_t> ids, Rng& rng);

}  // namespace ckd
