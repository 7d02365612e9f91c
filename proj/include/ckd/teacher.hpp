#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ckd/dataio.hpp"
#include "ckd/model.hpp"
#include "ckd/training.hpp"

namespace ckd {

// Frozen teacher access. A teacher is anything that can hand back raw item
// logits for a user's interaction context; the two concrete sources are a
// loaded model queried live and a precomputed score matrix on disk. Both
// must agree (up to float32 storage) for the same underlying model, so the
// rest of the pipeline never cares which one it is talking to.

// On-disk precomputed logits: one float32 row per user over a full item
// vocabulary, written little-endian behind a "CKDS" magic.
struct ScoreMatrix {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<float> logits;  // row-major, num_users x num_items

  float at(std::size_t user, std::size_t item) const {
    return logits[user * num_items + item];
  }

  void save(const std::string& path) const;
  static ScoreMatrix open(const std::string& path);
};

class Teacher {
 public:
  virtual ~Teacher() = default;

  // Raw (pre-temperature) logits for the candidate items, given the user's
  // prediction context. Implementations may ignore either the user id or
  // the context, depending on where their knowledge lives.
  virtual std::vector<double> scores(
      std::size_t user, const std::vector<std::int64_t>& context,
      const std::vector<std::int64_t>& candidates) const = 0;

  // Number of items the teacher can score; must cover the student's vocab.
  virtual std::size_t vocab() const = 0;

  virtual std::string describe() const = 0;
};

// Live teacher: a frozen model scoring candidates on demand. Encoded user
// representations are cached per (user, context) since the context of a
// given user never changes within a training run.
template <typename T>
class ModelTeacher : public Teacher {
 public:
  explicit ModelTeacher(SequentialModel<T> model, std::string label = "model")
      : model_(std::move(model)), label_(std::move(label)) {}

  std::vector<double> scores(
      std::size_t user, const std::vector<std::int64_t>& context,
      const std::vector<std::int64_t>& candidates) const override {
    if (context.empty())
      throw std::runtime_error("teacher: empty context for user " +
                               std::to_string(user));
    if (user >= reps_.size()) reps_.resize(user + 1);
    auto& slot = reps_[user];
    if (!slot.valid || slot.context != context) {
      slot.rep = model_.encode(window(context), false, nullptr);
      slot.context = context;
      slot.valid = true;
    }
    const auto scored = model_.score_items(slot.rep, candidates);
    std::vector<double> out(scored.size());
    for (std::size_t c = 0; c < scored.size(); ++c)
      out[c] = static_cast<double>(scored[c]);
    return out;
  }

  std::size_t vocab() const override { return model_.vocab(); }
  std::string describe() const override { return label_; }
  const SequentialModel<T>& model() const { return model_; }

 private:
  std::vector<std::int64_t> window(
      const std::vector<std::int64_t>& context) const {
    const std::size_t n = model_.config().max_len;
    if (context.size() <= n) return context;
    return {context.end() - static_cast<std::ptrdiff_t>(n), context.end()};
  }

  struct CachedRep {
    bool valid = false;
    std::vector<std::int64_t> context;
    Tensor<T> rep;
  };

  SequentialModel<T> model_;
  std::string label_;
  mutable std::vector<CachedRep> reps_;
};

// File teacher: looks rows up in a precomputed score matrix, so the context
// argument is unused — the scores were fixed when the matrix was exported.
class FileTeacher : public Teacher {
 public:
  explicit FileTeacher(ScoreMatrix matrix, std::string label = "file")
      : matrix_(std::move(matrix)), label_(std::move(label)) {}

  std::vector<double> scores(
      std::size_t user, const std::vector<std::int64_t>& /*context*/,
      const std::vector<std::int64_t>& candidates) const override {
    if (candidates.empty())
      throw std::runtime_error("teacher: empty candidate list");
    if (user >= matrix_.num_users)
      throw std::runtime_error("teacher: user id out of range: " +
                               std::to_string(user));
    std::vector<double> out(candidates.size(), 0.0);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const auto item = candidates[c];
      if (item < 0 || static_cast<std::size_t>(item) >= matrix_.num_items)
        throw std::runtime_error("teacher: item id out of range: " +
                                 std::to_string(item));
      out[c] = static_cast<double>(
          matrix_.at(user, static_cast<std::size_t>(item)));
    }
    return out;
  }

  std::size_t vocab() const override { return matrix_.num_items; }
  std::string describe() const override { return label_; }

 private:
  ScoreMatrix matrix_;
  std::string label_;
};

// A panel of teachers with base blending weights that sum to one.
struct TeacherPanel {
  std::vector<std::shared_ptr<const Teacher>> teachers;
  std::vector<double> base_weights;

  std::size_t size() const { return teachers.size(); }
  void validate(std::size_t student_vocab) const;
};

// Precompute one row of logits per user over the teacher's entire item
// vocabulary, using the same per-user context the distillation loop asks
// live teachers for.
template <typename T>
ScoreMatrix export_score_matrix(const SequentialModel<T>& model,
                                const SplitDataset& split) {
  ModelTeacher<T> oracle(model);
  ScoreMatrix out;
  out.num_users = split.train.size();
  out.num_items = model.vocab();
  out.logits.resize(out.num_users * out.num_items);
  std::vector<std::int64_t> all_items(out.num_items);
  for (std::size_t i = 0; i < all_items.size(); ++i)
    all_items[i] = static_cast<std::int64_t>(i);
  for (std::size_t u = 0; u < out.num_users; ++u) {
    const auto context = distill_context(split.train[u]);
    const auto row = oracle.scores(u, context, all_items);
    for (std::size_t i = 0; i < row.size(); ++i)
      out.logits[u * out.num_items + i] = static_cast<float>(row[i]);
  }
  return out;
}

// Train a fresh model on a sequence of datasets (each phase continues from
// the previous phase's parameters), e.g. source-domain pretraining followed
// by target-domain fine-tuning. A zero-epoch budget returns the freshly
// initialized model untouched.
template <typename T>
SequentialModel<T> pretrain_teacher(
    const std::vector<const SplitDataset*>& phases, std::size_t vocab,
    const ModelConfig& config, const TrainSettings& settings,
    std::uint64_t seed) {
  if (phases.empty()) throw std::runtime_error("pretrain: no datasets");
  auto model = SequentialModel<T>::init(config, vocab, seed);
  if (settings.max_epochs == 0) return model;
  for (std::size_t i = 0; i < phases.size(); ++i)
    train_ce_phase(model, *phases[i], settings,
                   derive_seed(seed, "pretrain.phase", i));
  return model;
}

}  // namespace ckd
