#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ckd/curriculum.hpp"
#include "ckd/dataio.hpp"
#include "ckd/eval.hpp"
#include "ckd/graph.hpp"
#include "ckd/model.hpp"
#include "ckd/teacher.hpp"
#include "ckd/training.hpp"

namespace ckd {

// Multi-teacher distillation: each teacher's raw scores over the batch's
// candidate items become a tempered probability row; per-user teacher
// weights are adjusted by cross-teacher consistency; the weighted blend
// becomes the supervision distribution q that the student's in-batch
// softmax p is pulled toward alongside the usual next-item cross-entropy.

enum class WeightMode { consistency, fixed };
enum class KdCandidates { in_batch, full_corpus };

// Direction of the distillation divergence. forward: sum_j p_j log(p_j/q_j)
// (the default); reverse: sum_j q_j log(q_j/p_j), the direction most
// distillation setups use, kept switchable for comparison.
enum class KdDirection { forward, reverse };

const char* weight_mode_name(WeightMode mode);
WeightMode weight_mode_from_string(const std::string& name);
const char* kd_candidates_name(KdCandidates mode);
KdCandidates kd_candidates_from_string(const std::string& name);
const char* kd_direction_name(KdDirection dir);
KdDirection kd_direction_from_string(const std::string& name);

struct DistillationConfig {
  double temperature = 0.2;  // teacher softmax temperature
  double kd_weight = 1.0;    // lambda: KD term weight; 0 disables distillation
  double epsilon = 0.05;     // consistency threshold for excluding a teacher
  WeightMode weight_mode = WeightMode::consistency;
  KdCandidates kd_candidates = KdCandidates::in_batch;
  KdDirection kd_direction = KdDirection::forward;
  std::size_t batch_size = 512;

  void validate() const;
};

// Tempered softmax over a candidate set, computed with max subtraction.
std::vector<double> teacher_inbatch_distribution(
    const std::vector<double>& raw, double temperature);

// Per-teacher disagreement for one user: D_k = sum_j sum_{k'!=k}
// (rows[k][j] - rows[k'][j])^2. Lower is more consistent with the panel.
std::vector<double> teacher_disagreements(
    const std::vector<std::vector<double>>& rows);

// Weight adjustment for one user. fixed mode (or a single teacher) keeps the
// base weights. Otherwise, if the largest disagreement reaches epsilon, that
// teacher (smallest index on ties) is dropped and its weight is split evenly
// over the rest; weights always sum back to 1.
std::vector<double> consistency_weights(
    const std::vector<std::vector<double>>& rows,
    const std::vector<double>& base_weights, double epsilon, WeightMode mode);

// Convex blend of the teachers' probability rows, renormalized as a
// numerical safeguard (a true no-op when every row sums to 1).
std::vector<double> blended_supervision(
    const std::vector<double>& weights,
    const std::vector<std::vector<double>>& rows);

struct LossParts {
  double ce = 0.0;
  double kd = 0.0;
  double total = 0.0;
};

// Reference (non-graph) losses for one user row: p = softmax(logits),
// L_CE = -log p[positive], L_KD per the configured direction with q floored
// at 1e-12 before any log, total = L_CE + lambda * L_KD.
LossParts batch_losses(const std::vector<double>& logits, std::size_t positive,
                       const std::vector<double>& q, double lambda,
                       KdDirection direction = KdDirection::forward);

// Full weighting pipeline for one batch: raw[k][i] holds teacher k's raw
// scores for user i over the candidate set. Produces each user's adjusted
// weights and supervision row.
struct BatchBlend {
  std::vector<std::vector<double>> q;        // per user, over candidates
  std::vector<std::vector<double>> weights;  // per user, per teacher
};

BatchBlend blend_batch(
    const std::vector<std::vector<std::vector<double>>>& raw,
    const std::vector<double>& base_weights, const DistillationConfig& config);

struct DistillResult {
  std::vector<std::string> log_lines;  // one per epoch, tab-separated
  std::size_t epochs_run = 0;
  double best_valid_ndcg = 0.0;
};

// Renders one metrics-log line:
// epoch<TAB>stage<TAB>L_CE<TAB>L_KD<TAB>valid_recall@10<TAB>valid_ndcg@10
std::string metrics_log_line(std::size_t epoch, std::size_t stage, double ce,
                             double kd, double recall10, double ndcg10);

// Curriculum-scheduled distillation training. Bucket stages run first (one
// shuffled pass over each difficulty prefix per configured stage epoch, the
// stage number logged), then uniform epochs over everything until the epoch
// budget is exhausted or validation NDCG@10 stops improving for `patience`
// consecutive epochs (stage logged as 0). The best-validation student is
// kept. With kd_weight = 0 the teacher machinery is never touched, so a run
// is bitwise identical to a plain cross-entropy baseline on the same seed.
template <typename T>
DistillResult distill_train(SequentialModel<T>& student,
                            const TeacherPanel& panel,
                            const SplitDataset& data,
                            const DistillationConfig& dconf,
                            const CurriculumConfig& cconf,
                            const TrainSettings& opt, std::uint64_t seed) {
  dconf.validate();
  // An empty panel and a zero blend weight both mean plain supervised
  // training; either alone disables every teacher code path so the two
  // baselines trace identically.
  const bool use_kd = dconf.kd_weight > 0.0 && panel.size() > 0;
  if (use_kd) panel.validate(student.vocab());

  const auto pairs = make_train_pairs(data, student.config().max_len);
  if (pairs.empty())
    throw std::runtime_error("train: no users with enough history");

  // Difficulty is scored on exactly what the student sees per pair: the
  // windowed prefix plus its positive.
  std::vector<std::vector<std::int64_t>> slices;
  slices.reserve(pairs.size());
  for (const auto& p : pairs) {
    auto s = p.prefix;
    s.push_back(p.positive);
    slices.push_back(std::move(s));
  }
  const auto stats = popularity_table(data.train, student.vocab());
  const auto plan = build_plan(slices, stats, cconf);
  const std::size_t stage_epochs_total =
      cconf.enabled ? plan.num_buckets() * cconf.epochs_per_stage : 0;

  // Teacher contexts are fixed per user for the whole run.
  std::vector<std::vector<std::int64_t>> contexts;
  if (use_kd) {
    contexts.resize(data.train.size());
    for (const auto& p : pairs)
      contexts[p.user] = distill_context(data.train[p.user]);
  }
  std::vector<std::int64_t> corpus_items;
  if (use_kd && dconf.kd_candidates == KdCandidates::full_corpus) {
    corpus_items.resize(student.vocab());
    for (std::size_t i = 0; i < corpus_items.size(); ++i)
      corpus_items[i] = static_cast<std::int64_t>(i);
  }

  AdamOptimizer<T> adam(student.params(), static_cast<T>(opt.lr),
                        static_cast<T>(opt.l2));
  Rng shuffle_rng(derive_seed(seed, "train.shuffle"));
  Rng dropout_rng(derive_seed(seed, "train.dropout"));

  std::vector<std::size_t> all_ids(pairs.size());
  for (std::size_t i = 0; i < all_ids.size(); ++i) all_ids[i] = i;

  const bool use_valid = !data.valid.empty();
  auto best = snapshot_params(*student.params());
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;

  DistillResult result;
  for (std::size_t epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    // Which samples this epoch sees, and the stage tag for the log.
    std::size_t stage = 0;
    std::vector<std::size_t> ids;
    if (cconf.enabled && epoch <= stage_epochs_total) {
      stage = 1 + (epoch - 1) / cconf.epochs_per_stage;
      ids = stage_samples(plan, stage);
    } else {
      ids = all_ids;
    }
    const auto order = epoch_stream(ids, shuffle_rng);

    double ce_sum = 0.0;
    double kd_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += dconf.batch_size) {
      const std::size_t stop =
          std::min(order.size(), start + dconf.batch_size);
      std::vector<const TrainPair*> rows;
      rows.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i)
        rows.push_back(&pairs[order[i]]);

      BatchCandidates cand;
      if (use_kd && dconf.kd_candidates == KdCandidates::full_corpus) {
        cand.items = corpus_items;
        for (const TrainPair* row : rows)
          cand.pos_index.push_back(static_cast<std::size_t>(row->positive));
      } else {
        cand = batch_candidates(rows);
      }

      ValueGraph<T> g(student.params());
      const auto nodes =
          build_ce_loss(g, student, rows, cand, true, &dropout_rng);
      int loss_node = nodes.ce;
      int kd_node = -1;
      if (use_kd) {
        // The teacher side is host double arithmetic entering the graph as
        // constants; only the student distribution p carries gradient.
        std::vector<std::vector<std::vector<double>>> raw(panel.size());
        for (std::size_t k = 0; k < panel.size(); ++k) {
          raw[k].reserve(rows.size());
          for (const TrainPair* row : rows)
            raw[k].push_back(panel.teachers[k]->scores(
                row->user, contexts[row->user], cand.items));
        }
        const auto blend = blend_batch(raw, panel.base_weights, dconf);

        const std::size_t b = rows.size();
        const std::size_t c = cand.items.size();
        if (dconf.kd_direction == KdDirection::forward) {
          // sum_ij p_ij * (log p_ij - log max(q_ij, 1e-12))
          Tensor<T> neg_log_q = Tensor<T>::zeros({b, c});
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < c; ++j)
              neg_log_q.at(i, j) = static_cast<T>(
                  -std::log(std::max(blend.q[i][j], 1e-12)));
          kd_node = g.sum(g.mul(
              nodes.probs,
              g.add(g.log(nodes.probs), g.constant(std::move(neg_log_q)))));
        } else {
          // sum_ij q_ij log q_ij - sum_ij q_ij log p_ij
          Tensor<T> neg_q = Tensor<T>::zeros({b, c});
          double q_entropy = 0.0;  // sum q log q, a constant in the loss
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              const double qv = blend.q[i][j];
              neg_q.at(i, j) = static_cast<T>(-qv);
              if (qv > 0.0) q_entropy += qv * std::log(qv);
            }
          kd_node = g.affine(
              g.sum(g.mul(g.constant(std::move(neg_q)), g.log(nodes.probs))),
              T(1), static_cast<T>(q_entropy));
        }
        loss_node = g.add(
            nodes.ce,
            g.affine(kd_node, static_cast<T>(dconf.kd_weight), T(0)));
      }

      const auto grads = g.gradients(loss_node);
      ce_sum += static_cast<double>(g.value_of(nodes.ce)[0]);
      if (kd_node >= 0)
        kd_sum += static_cast<double>(g.value_of(kd_node)[0]);
      adam.step(grads);
    }

    double recall10 = 0.0;
    double ndcg10 = 0.0;
    if (use_valid) {
      const auto report = evaluate_split(student, data.valid, {10});
      recall10 = report.recall_at(10);
      ndcg10 = report.ndcg_at(10);
    }
    const double denom = static_cast<double>(order.size());
    result.log_lines.push_back(metrics_log_line(
        epoch, stage, ce_sum / denom, kd_sum / denom, recall10, ndcg10));
    ++result.epochs_run;

    if (!use_valid) continue;
    if (ndcg10 > best_metric) {
      best_metric = ndcg10;
      best = snapshot_params(*student.params());
      bad_epochs = 0;
    } else if (stage == 0 && ++bad_epochs >= opt.patience) {
      break;  // converged: uniform phase stopped improving
    }
  }
  if (use_valid) {
    restore_params(*student.params(), best);
    result.best_valid_ndcg = best_metric;
  }
  return result;
}

}  // namespace ckd
