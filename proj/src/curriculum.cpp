#include "ckd/curriculum.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace ckd {

double ssl_score(const std::vector<std::int64_t>& sample,
                 const PopularityTable& stats, std::size_t n_max,
                 double alpha) {
  if (sample.empty()) throw std::runtime_error("ssl_score: empty sample");
  if (n_max < sample.size())
    throw std::runtime_error("ssl_score: n_max " + std::to_string(n_max) +
                             " below sample length " +
                             std::to_string(sample.size()));
  if (alpha < 0.0) throw std::runtime_error("ssl_score: negative alpha");
  const double n = static_cast<double>(sample.size());
  double pop_sum = 0.0;
  for (std::int64_t item : sample) pop_sum += stats.pop_of(item);
  return n / static_cast<double>(n_max) - alpha * pop_sum / n;
}

CurriculumPlan build_plan(
    const std::vector<std::vector<std::int64_t>>& samples,
    const PopularityTable& stats, const CurriculumConfig& config) {
  if (samples.empty()) throw std::runtime_error("build_plan: no samples");
  if (config.num_buckets == 0)
    throw std::runtime_error("build_plan: num_buckets must be positive");
  if (config.epochs_per_stage == 0)
    throw std::runtime_error("build_plan: epochs_per_stage must be positive");

  std::size_t n_max = 0;
  for (const auto& s : samples) n_max = std::max(n_max, s.size());

  std::vector<double> score(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    score[i] = ssl_score(samples[i], stats, n_max, config.alpha);

  CurriculumPlan plan;
  plan.ordered_samples.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) plan.ordered_samples[i] = i;
  std::sort(plan.ordered_samples.begin(), plan.ordered_samples.end(),
            [&](std::size_t a, std::size_t b) {
              if (score[a] != score[b]) return score[a] < score[b];
              return a < b;
            });
  plan.ordered_scores.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    plan.ordered_scores[i] = score[plan.ordered_samples[i]];

  const std::size_t buckets = config.num_buckets;
  const std::size_t base = samples.size() / buckets;
  const std::size_t extra = samples.size() % buckets;
  plan.bucket_bounds.resize(buckets + 1);
  plan.bucket_bounds[0] = 0;
  for (std::size_t b = 0; b < buckets; ++b)
    plan.bucket_bounds[b + 1] = plan.bucket_bounds[b] + base + (b < extra ? 1 : 0);
  return plan;
}

std::vector<std::size_t> stage_samples(const CurriculumPlan& plan,
                                       std::size_t r) {
  if (r < 1 || r > plan.num_buckets())
    throw std::runtime_error("stage_samples: stage " + std::to_string(r) +
                             " out of range 1.." +
                             std::to_string(plan.num_buckets()));
  return {plan.ordered_samples.begin(),
          plan.ordered_samples.begin() +
              static_cast<std::ptrdiff_t>(plan.bucket_bounds[r])};
}

std::vector<std::size_t> epoch_stream(std::vector<std::size_t> ids, Rng& rng) {
  rng.shuffle(ids);
  return ids;
}

}  // namespace ckd
