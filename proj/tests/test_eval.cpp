#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "ckd/eval.hpp"
#include "ckd/model.hpp"
#include "ckd/rng.hpp"
#include "doctest.h"

using namespace ckd;

namespace {

ModelConfig pool_config(std::size_t d = 4) {
  ModelConfig cfg;
  cfg.embedding_dim = d;
  cfg.heads = 1;
  cfg.layers = 1;
  cfg.max_len = 10;
  cfg.dropout = 0.0;
  cfg.arch = Arch::mean_pool;
  return cfg;
}

// Independent reranking oracle: sort every non-excluded candidate's score
// descending and place the target after all better-or-equal competitors.
std::size_t oracle_rank(const SequentialModel<double>& model,
                        const std::vector<std::int64_t>& prefix,
                        std::int64_t target) {
  std::vector<std::int64_t> window = prefix;
  if (window.size() > model.config().max_len)
    window.assign(prefix.end() - static_cast<std::ptrdiff_t>(model.config().max_len),
                  prefix.end());
  Tensor<double> u = model.encode(window);
  std::set<std::int64_t> seen(prefix.begin(), prefix.end());
  seen.erase(target);
  std::vector<double> competitors;
  double target_score = 0.0;
  for (std::size_t j = 0; j < model.vocab(); ++j) {
    const auto id = static_cast<std::int64_t>(j);
    const double s = model.score_items(u, {id})[0];
    if (id == target) {
      target_score = s;
    } else if (!seen.count(id)) {
      competitors.push_back(s);
    }
  }
  std::sort(competitors.begin(), competitors.end(), std::greater<>());
  std::size_t rank = 1;
  for (double s : competitors) {
    if (s >= target_score) ++rank;
    else break;
  }
  return rank;
}

}  // namespace

TEST_CASE("metrics_at_k hand values") {
  auto [r1, n1] = metrics_at_k(1, 10);
  CHECK(r1 == 1.0);
  CHECK(n1 == 1.0);
  auto [r3, n3] = metrics_at_k(3, 10);
  CHECK(r3 == 1.0);
  CHECK(n3 == doctest::Approx(0.5).epsilon(1e-12));  // 1/log2(4)
  auto [r11, n11] = metrics_at_k(11, 10);
  CHECK(r11 == 0.0);
  CHECK(n11 == 0.0);
  CHECK_THROWS_AS(metrics_at_k(0, 10), std::runtime_error);
  CHECK_THROWS_AS(metrics_at_k(1, 0), std::runtime_error);
}

TEST_CASE("rank_from_scores applies the pessimistic tie rule") {
  // target holds the unique maximum → rank 1
  std::vector<double> s1 = {5, 1, 2, 3};
  std::vector<char> none(4, 0);
  CHECK(rank_from_scores(s1, none, 0) == 1);

  // target tied with one other item at the max → rank 2
  std::vector<double> s2 = {5, 5, 2, 3};
  CHECK(rank_from_scores(s2, none, 0) == 2);

  // strictly lowest → rank = candidate count
  std::vector<double> s3 = {-1, 5, 2, 3};
  CHECK(rank_from_scores(s3, none, 0) == 4);

  // exclusions shrink the candidate pool
  std::vector<char> excl = {0, 1, 0, 0};
  CHECK(rank_from_scores(s3, excl, 0) == 3);
}

TEST_CASE("rank_target excludes prefix items but never the target") {
  auto m = SequentialModel<double>::init(pool_config(2), 4, 1);
  auto& emb = m.params()->ref("item_emb");
  // u from prefix {0}: u = e_0. Scores = e_0 · e_j.
  emb.at(0, 0) = 1; emb.at(0, 1) = 0;
  emb.at(1, 0) = 2; emb.at(1, 1) = 0;   // best, but in prefix when excluded
  emb.at(2, 0) = 1.5; emb.at(2, 1) = 0;
  emb.at(3, 0) = 0.5; emb.at(3, 1) = 0;

  // prefix {0,1}: candidates {2,3} plus target. Target 3 loses only to 2.
  CHECK(rank_target(m, {0, 1}, 3) == 2);
  // target is itself within the prefix: it still competes
  CHECK(rank_target(m, {0, 1}, 1) == 1);
  CHECK_THROWS_AS(rank_target(m, {0}, 4), std::runtime_error);
}

TEST_CASE("rank_target agrees with the exhaustive reranking oracle") {
  Rng rng(2025);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t vocab = 2 + rng.below(19);  // |V| ≤ 20
    auto m = SequentialModel<double>::init(pool_config(3), vocab,
                                           1000 + trial);
    const std::size_t plen = 1 + rng.below(std::min<std::size_t>(vocab, 6));
    std::vector<std::int64_t> prefix(plen);
    for (auto& v : prefix) v = static_cast<std::int64_t>(rng.below(vocab));
    const auto target = static_cast<std::int64_t>(rng.below(vocab));
    CHECK(rank_target(m, prefix, target) == oracle_rank(m, prefix, target));
  }
}

TEST_CASE("evaluate_split: perfect model scores 1 everywhere") {
  // Embeddings arranged so each user's target is the argmax.
  auto m = SequentialModel<double>::init(pool_config(2), 3, 1);
  auto& emb = m.params()->ref("item_emb");
  emb.at(0, 0) = 1; emb.at(0, 1) = 0;
  emb.at(1, 0) = 5; emb.at(1, 1) = 0;
  emb.at(2, 0) = -5; emb. at(2, 1) = 0;

  std::vector<EvalRow> rows;
  EvalRow row;
  row.user = 0;
  row.prefix = {0};
  row.target = 1;
  rows.push_back(row);

  auto report = evaluate_split(m, rows, {5, 10});
  CHECK(report.users == 1);
  CHECK(report.recall_at(5) == 1.0);
  CHECK(report.ndcg_at(10) == 1.0);
}

TEST_CASE("evaluate_split counts users and stays monotone in K") {
  Rng rng(9);
  auto m = SequentialModel<double>::init(pool_config(4), 30, 77);
  std::vector<EvalRow> rows;
  for (std::size_t u = 0; u < 10; ++u) {
    EvalRow row;
    row.user = u;
    row.prefix = {static_cast<std::int64_t>(rng.below(30)),
                  static_cast<std::int64_t>(rng.below(30))};
    row.target = static_cast<std::int64_t>(rng.below(30));
    rows.push_back(row);
  }
  auto report = evaluate_split(m, rows, {1, 5, 10, 20});
  CHECK(report.users == 10);
  for (std::size_t i = 1; i < report.cutoffs.size(); ++i) {
    CHECK(report.recall[i] >= report.recall[i - 1]);
    CHECK(report.ndcg[i] >= report.ndcg[i - 1]);
  }
  for (std::size_t i = 0; i < report.cutoffs.size(); ++i) {
    CHECK(report.recall[i] >= 0.0);
    CHECK(report.recall[i] <= 1.0);
    CHECK(report.ndcg[i] <= report.recall[i]);  // gain ≤ hit indicator
  }
}

TEST_CASE("random model recall matches the uniform-ranking null") {
  // With random parameters and a random target, the target's rank is uniform
  // over the candidate pool; Recall@10 should be ~10/|candidates|.
  Rng rng(31337);
  const std::size_t vocab = 100;
  const int users = 1000;
  std::vector<EvalRow> rows;
  for (int u = 0; u < users; ++u) {
    EvalRow row;
    row.user = static_cast<std::size_t>(u);
    row.prefix = {static_cast<std::int64_t>(rng.below(vocab))};
    std::int64_t t;
    do {
      t = static_cast<std::int64_t>(rng.below(vocab));
    } while (t == row.prefix[0]);
    row.target = t;
    rows.push_back(row);
  }
  auto m = SequentialModel<double>::init(pool_config(8), vocab, 4242);
  auto report = evaluate_split(m, rows, {10});
  const double p = 10.0 / 99.0;  // one prefix item excluded
  const double sigma = std::sqrt(p * (1 - p) / users);
  CHECK(report.recall_at(10) > p - 3 * sigma);
  CHECK(report.recall_at(10) < p + 3 * sigma);
}

TEST_CASE("report rendering") {
  MetricReport r;
  r.cutoffs = {5, 10};
  r.recall = {0.25, 0.5};
  r.ndcg = {0.125, 0.25};
  r.users = 42;
  auto json = report_to_json(r);
  CHECK(json.find("\"recall@5\": 0.250000") != std::string::npos);
  CHECK(json.find("\"ndcg@10\": 0.250000") != std::string::npos);
  CHECK(json.find("\"users\": 42") != std::string::npos);
  auto text = report_to_text(r);
  CHECK(text.find("5\t0.250000\t0.125000") != std::string::npos);
  CHECK(text.find("users\t42") != std::string::npos);
}
