#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ckd/curriculum.hpp"
#include "ckd/dataio.hpp"
#include "ckd/eval.hpp"
#include "ckd/graph.hpp"
#include "ckd/model.hpp"
#include "ckd/optimizer.hpp"
#include "ckd/rng.hpp"

namespace ckd {

// Shared training plumbing: positive-pair construction, in-batch candidate
// sets, and the cross-entropy objective over those candidates. One user
// contributes one (prefix → next item) pair per epoch, the label being the
// last item of the user's train slice so held-out targets never leak in.

struct TrainPair {
  std::size_t user = 0;
  std::vector<std::int64_t> prefix;  // already truncated to the model window
  std::int64_t positive = 0;
};

// The prediction context belonging to a user's train slice: everything
// before its final (label) item. Users with a single interaction keep it.
inline std::vector<std::int64_t> distill_context(
    const std::vector<std::int64_t>& train_seq) {
  if (train_seq.size() < 2) return train_seq;
  return {train_seq.begin(), train_seq.end() - 1};
}

inline std::vector<TrainPair> make_train_pairs(const SplitDataset& split,
                                               std::size_t max_len) {
  std::vector<TrainPair> pairs;
  for (std::size_t u = 0; u < split.train.size(); ++u) {
    const auto& seq = split.train[u];
    if (seq.size() < 2) continue;  // nothing to predict from
    TrainPair pair;
    pair.user = u;
    pair.positive = seq.back();
    const std::size_t start =
        seq.size() - 1 > max_len ? seq.size() - 1 - max_len : 0;
    pair.prefix.assign(seq.begin() + static_cast<std::ptrdiff_t>(start),
                       seq.end() - 1);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

// Deduplicated in-batch candidate set (first-appearance order) plus each
// row's index of its own positive within that set.
struct BatchCandidates {
  std::vector<std::int64_t> items;
  std::vector<std::size_t> pos_index;
};

inline BatchCandidates batch_candidates(
    const std::vector<const TrainPair*>& rows) {
  BatchCandidates out;
  std::unordered_map<std::int64_t, std::size_t> where;
  out.pos_index.reserve(rows.size());
  for (const TrainPair* row : rows) {
    auto [it, fresh] = where.emplace(row->positive, out.items.size());
    if (fresh) out.items.push_back(row->positive);
    out.pos_index.push_back(it->second);
  }
  return out;
}

template <typename T>
struct CeNodes {
  int scores = -1;  // batch × candidates raw logits
  int probs = -1;   // row-softmax of scores
  int ce = -1;      // scalar: summed cross-entropy over the batch
};

// Appends encoders for every row plus the in-batch softmax cross-entropy.
template <typename T>
CeNodes<T> build_ce_loss(ValueGraph<T>& g, const SequentialModel<T>& model,
                         const std::vector<const TrainPair*>& rows,
                         const BatchCandidates& cand, bool train_mode,
                         Rng* rng) {
  if (rows.empty()) throw std::runtime_error("build_ce_loss: empty batch");
  const std::size_t d = model.config().embedding_dim;
  const int cand_node = g.gather(g.param("item_emb"), cand.items);
  std::vector<int> score_rows;
  score_rows.reserve(rows.size());
  for (const TrainPair* row : rows) {
    const int u = model.build_encoder(g, row->prefix, train_mode, rng);
    const int s = g.matmul(cand_node, g.reshape(u, {d, 1}));
    score_rows.push_back(g.reshape(s, {1, cand.items.size()}));
  }
  CeNodes<T> nodes;
  nodes.scores = g.stack_rows(score_rows);
  nodes.probs = g.softmax_row(nodes.scores);

  Tensor<T> one_hot = Tensor<T>::zeros({rows.size(), cand.items.size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    one_hot.at(i, cand.pos_index[i]) = T(1);
  nodes.ce = g.affine(
      g.sum(g.mul(g.log(nodes.probs), g.constant(std::move(one_hot)))),
      T(-1), T(0));
  return nodes;
}

struct TrainSettings {
  double lr = 0.001;
  double l2 = 1e-5;
  std::size_t batch_size = 512;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
};

// Parameter snapshot for keep-best-on-valid behavior.
template <typename T>
std::map<std::string, Tensor<T>> snapshot_params(const ParameterStore<T>& store) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, value] : store) out.emplace(name, value);
  return out;
}

template <typename T>
void restore_params(ParameterStore<T>& store,
                    const std::map<std::string, Tensor<T>>& snap) {
  for (auto& [name, value] : store) value = snap.at(name);
}

// One cross-entropy training phase with uniform epoch shuffles and early
// stopping on validation NDCG@10 (the best-validation parameters win).
// Returns the per-epoch mean training loss for diagnostics.
template <typename T>
std::vector<double> train_ce_phase(SequentialModel<T>& model,
                                   const SplitDataset& split,
                                   const TrainSettings& settings,
                                   std::uint64_t seed) {
  const auto pairs = make_train_pairs(split, model.config().max_len);
  if (pairs.empty())
    throw std::runtime_error("train: no users with enough history");

  AdamOptimizer<T> opt(model.params(), static_cast<T>(settings.lr),
                       static_cast<T>(settings.l2));
  Rng shuffle_rng(derive_seed(seed, "train.shuffle"));
  Rng dropout_rng(derive_seed(seed, "train.dropout"));

  std::vector<std::size_t> ids(pairs.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;

  // Without validation rows there is no early-stop signal: run the full
  // budget and keep the final parameters.
  const bool use_valid = !split.valid.empty();
  auto best = snapshot_params(*model.params());
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  std::vector<double> epoch_losses;

  for (std::size_t epoch = 1; epoch <= settings.max_epochs; ++epoch) {
    const auto order = epoch_stream(ids, shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += settings.batch_size) {
      const std::size_t stop =
          std::min(order.size(), start + settings.batch_size);
      std::vector<const TrainPair*> rows;
      rows.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) rows.push_back(&pairs[order[i]]);
      const auto cand = batch_candidates(rows);
      ValueGraph<T> g(model.params());
      const auto nodes = build_ce_loss(g, model, rows, cand, true, &dropout_rng);
      const auto grads = g.gradients(nodes.ce);
      loss_sum += static_cast<double>(g.value_of(nodes.ce)[0]);
      opt.step(grads);
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(pairs.size()));

    if (!use_valid) continue;
    const double metric = evaluate_split(model, split.valid, {10}).ndcg_at(10);
    if (metric > best_metric) {
      best_metric = metric;
      best = snapshot_params(*model.params());
      bad_epochs = 0;
    } else if (++bad_epochs >= settings.patience) {
      break;
    }
  }
  if (use_valid) restore_params(*model.params(), best);
  return epoch_losses;
}

}  // namespace ckd
