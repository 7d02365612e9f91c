#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ckd/dataio.hpp"
#include "ckd/model.hpp"

namespace ckd {

// Full-corpus leave-one-out ranking: every item the user has not already
// interacted with competes with the held-out target; no candidate sampling.

struct MetricReport {
  std::vector<int> cutoffs;
  std::vector<double> recall;  // aligned with cutoffs
  std::vector<double> ndcg;
  std::size_t users = 0;

  double recall_at(int k) const { return metric_at(recall, k); }
  double ndcg_at(int k) const { return metric_at(ndcg, k); }

 private:
  double metric_at(const std::vector<double>& values, int k) const {
    for (std::size_t i = 0; i < cutoffs.size(); ++i)
      if (cutoffs[i] == k) return values[i];
    throw std::runtime_error("metric report: cutoff " + std::to_string(k) +
                             " not recorded");
  }
};

// Rank of the target among all unseen items: 1 + strictly-better count, with
// ties counted against the target (pessimistic).
inline std::size_t rank_from_scores(const std::vector<double>& scores,
                                    const std::vector<char>& excluded,
                                    std::size_t target) {
  std::size_t greater = 0, ties = 0;
  const double t = scores[target];
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j == target || excluded[j]) continue;
    if (scores[j] > t) ++greater;
    else if (scores[j] == t) ++ties;
  }
  return 1 + greater + ties;
}

// recall = hit within the cutoff; ndcg = discounted gain of a single
// relevant item at `rank`, zero outside the cutoff.
inline std::pair<double, double> metrics_at_k(std::size_t rank, int k) {
  if (rank < 1) throw std::runtime_error("metrics_at_k: rank must be >= 1");
  if (k < 1) throw std::runtime_error("metrics_at_k: cutoff must be >= 1");
  if (rank > static_cast<std::size_t>(k)) return {0.0, 0.0};
  return {1.0, 1.0 / std::log2(static_cast<double>(rank) + 1.0)};
}

template <typename T>
std::size_t rank_target(const SequentialModel<T>& model,
                        const std::vector<std::int64_t>& prefix,
                        std::int64_t target) {
  const std::size_t vocab = model.vocab();
  if (target < 0 || static_cast<std::size_t>(target) >= vocab)
    throw std::runtime_error("rank_target: target " + std::to_string(target) +
                             " out of vocabulary");
  // The caller's prefix may be arbitrarily long; the model sees the most
  // recent window it was built for.
  std::vector<std::int64_t> window = prefix;
  if (window.size() > model.config().max_len)
    window.assign(prefix.end() - static_cast<std::ptrdiff_t>(model.config().max_len),
                  prefix.end());
  Tensor<T> u = model.encode(window);

  std::vector<std::int64_t> all(vocab);
  for (std::size_t j = 0; j < vocab; ++j) all[j] = static_cast<std::int64_t>(j);
  std::vector<T> raw = model.score_items(u, all);
  std::vector<double> scores(vocab);
  for (std::size_t j = 0; j < vocab; ++j) scores[j] = static_cast<double>(raw[j]);

  std::vector<char> excluded(vocab, 0);
  for (std::int64_t v : prefix)
    if (v >= 0 && static_cast<std::size_t>(v) < vocab)
      excluded[static_cast<std::size_t>(v)] = 1;
  excluded[static_cast<std::size_t>(target)] = 0;  // target always competes
  return rank_from_scores(scores, excluded, static_cast<std::size_t>(target));
}

template <typename T>
MetricReport evaluate_split(const SequentialModel<T>& model,
                            const std::vector<EvalRow>& rows,
                            const std::vector<int>& cutoffs) {
  if (rows.empty()) throw std::runtime_error("evaluate: empty split");
  for (int k : cutoffs)
    if (k < 1) throw std::runtime_error("evaluate: cutoffs must be >= 1");
  MetricReport report;
  report.cutoffs = cutoffs;
  report.recall.assign(cutoffs.size(), 0.0);
  report.ndcg.assign(cutoffs.size(), 0.0);
  report.users = rows.size();
  for (const EvalRow& row : rows) {
    const std::size_t rank = rank_target(model, row.prefix, row.target);
    for (std::size_t i = 0; i < cutoffs.size(); ++i) {
      auto [r, n] = metrics_at_k(rank, cutoffs[i]);
      report.recall[i] += r;
      report.ndcg[i] += n;
    }
  }
  for (std::size_t i = 0; i < cutoffs.size(); ++i) {
    report.recall[i] /= static_cast<double>(rows.size());
    report.ndcg[i] /= static_cast<double>(rows.size());
  }
  return report;
}

// Rendering (implemented in eval.cpp).
std::string report_to_json(const MetricReport& report);
std::string report_to_text(const MetricReport& report);

}  // namespace ckd
