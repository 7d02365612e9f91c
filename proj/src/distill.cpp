#include "ckd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace ckd {

const char* weight_mode_name(WeightMode mode) {
  return mode == WeightMode::consistency ? "consistency" : "fixed";
}

WeightMode weight_mode_from_string(const std::string& name) {
  if (name == "consistency") return WeightMode::consistency;
  if (name == "fixed") return WeightMode::fixed;
  throw std::runtime_error("unknown weight mode '" + name + "'");
}

const char* kd_candidates_name(KdCandidates mode) {
  return mode == KdCandidates::in_batch ? "in_batch" : "full_corpus";
}

KdCandidates kd_candidates_from_string(const std::string& name) {
  if (name == "in_batch") return KdCandidates::in_batch;
  if (name == "full_corpus") return KdCandidates::full_corpus;
  throw std::runtime_error("unknown candidate mode '" + name + "'");
}

const char* kd_direction_name(KdDirection dir) {
  return dir == KdDirection::forward ? "forward" : "reverse";
}

KdDirection kd_direction_from_string(const std::string& name) {
  if (name == "forward") return KdDirection::forward;
  if (name == "reverse") return KdDirection::reverse;
  throw std::runtime_error("unknown divergence direction '" + name + "'");
}

void DistillationConfig::validate() const {
  if (!(temperature > 0.0))
    throw std::runtime_error("distill: temperature must be positive");
  if (!(kd_weight >= 0.0))
    throw std::runtime_error("distill: kd_weight must be non-negative");
  if (!(epsilon >= 0.0))
    throw std::runtime_error("distill: epsilon must be non-negative");
  if (batch_size < 2)
    throw std::runtime_error("distill: batch size must be at least 2");
}

std::vector<double> teacher_inbatch_distribution(
    const std::vector<double>& raw, double temperature) {
  if (!(temperature > 0.0))
    throw std::runtime_error("distill: temperature must be positive");
  if (raw.empty())
    throw std::runtime_error("distill: empty score row");
  double mx = raw[0];
  for (double v : raw) {
    if (!std::isfinite(v))
      throw std::runtime_error("distill: non-finite teacher score");
    mx = std::max(mx, v);
  }
  std::vector<double> out(raw.size());
  double z = 0.0;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    out[j] = std::exp((raw[j] - mx) / temperature);
    z += out[j];
  }
  for (double& v : out) v /= z;
  return out;
}

std::vector<double> teacher_disagreements(
    const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw std::runtime_error("distill: no teacher rows");
  const std::size_t width = rows[0].size();
  for (const auto& r : rows)
    if (r.size() != width)
      throw std::runtime_error("distill: ragged teacher rows");
  std::vector<double> d(rows.size(), 0.0);
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t k2 = 0; k2 < rows.size(); ++k2) {
      if (k2 == k) continue;
      for (std::size_t j = 0; j < width; ++j) {
        const double diff = rows[k][j] - rows[k2][j];
        d[k] += diff * diff;
      }
    }
  return d;
}

std::vector<double> consistency_weights(
    const std::vector<std::vector<double>>& rows,
    const std::vector<double>& base_weights, double epsilon, WeightMode mode) {
  if (base_weights.empty())
    throw std::runtime_error("distill: no teacher weights");
  if (rows.size() != base_weights.size())
    throw std::runtime_error("distill: " + std::to_string(rows.size()) +
                             " rows for " +
                             std::to_string(base_weights.size()) + " weights");
  if (mode == WeightMode::fixed || base_weights.size() == 1)
    return base_weights;

  const auto d = teacher_disagreements(rows);
  std::size_t worst = 0;
  for (std::size_t k = 1; k < d.size(); ++k)
    if (d[k] > d[worst]) worst = k;  // strict: ties keep the smallest index
  if (d[worst] < epsilon) return base_weights;

  const double share =
      base_weights[worst] / static_cast<double>(base_weights.size() - 1);
  std::vector<double> out(base_weights.size());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = k == worst ? 0.0 : base_weights[k] + share;
  return out;
}

std::vector<double> blended_supervision(
    const std::vector<double>& weights,
    const std::vector<std::vector<double>>& rows) {
  if (rows.size() != weights.size())
    throw std::runtime_error("distill: " + std::to_string(rows.size()) +
                             " rows for " + std::to_string(weights.size()) +
                             " weights");
  if (rows.empty()) throw std::runtime_error("distill: no teacher rows");
  const std::size_t width = rows[0].size();
  std::vector<double> q(width, 0.0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].size() != width)
      throw std::runtime_error("distill: ragged teacher rows");
    for (std::size_t j = 0; j < width; ++j) q[j] += weights[k] * rows[k][j];
  }
  double z = 0.0;
  for (double v : q) z += v;
  if (!(z > 0.0))
    throw std::runtime_error("distill: blended supervision has zero mass");
  for (double& v : q) v /= z;
  return q;
}

LossParts batch_losses(const std::vector<double>& logits, std::size_t positive,
                       const std::vector<double>& q, double lambda,
                       KdDirection direction) {
  if (logits.empty()) throw std::runtime_error("distill: empty logits row");
  if (positive >= logits.size())
    throw std::runtime_error("distill: positive index out of range");
  if (q.size() != logits.size())
    throw std::runtime_error("distill: q row size mismatch");

  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    p[j] = std::exp(logits[j] - mx);
    z += p[j];
  }
  for (double& v : p) v /= z;

  LossParts parts;
  parts.ce = -std::log(p[positive]);
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double qf = std::max(q[j], 1e-12);
    if (direction == KdDirection::forward) {
      if (p[j] > 0.0) parts.kd += p[j] * (std::log(p[j]) - std::log(qf));
    } else {
      if (q[j] > 0.0)
        parts.kd += q[j] * (std::log(q[j]) - std::log(std::max(p[j], 1e-12)));
    }
  }
  parts.total = parts.ce + lambda * parts.kd;
  if (!std::isfinite(parts.total))
    throw std::runtime_error("distill: non-finite loss");
  return parts;
}

BatchBlend blend_batch(
    const std::vector<std::vector<std::vector<double>>>& raw,
    const std::vector<double>& base_weights,
    const DistillationConfig& config) {
  if (raw.empty()) throw std::runtime_error("distill: no teacher scores");
  const std::size_t teachers = raw.size();
  const std::size_t users = raw[0].size();
  for (const auto& t : raw)
    if (t.size() != users)
      throw std::runtime_error("distill: ragged teacher batches");

  BatchBlend out;
  out.q.reserve(users);
  out.weights.reserve(users);
  std::vector<std::vector<double>> rows(teachers);
  for (std::size_t i = 0; i < users; ++i) {
    for (std::size_t k = 0; k < teachers; ++k)
      rows[k] = teacher_inbatch_distribution(raw[k][i], config.temperature);
    auto w = consistency_weights(rows, base_weights, config.epsilon,
                                 config.weight_mode);
    out.q.push_back(blended_supervision(w, rows));
    out.weights.push_back(std::move(w));
  }
  return out;
}

std::string metrics_log_line(std::size_t epoch, std::size_t stage, double ce,
                             double kd, double recall10, double ndcg10) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu\t%zu\t%.6f\t%.6f\t%.6f\t%.6f", epoch,
                stage, ce, kd, recall10, ndcg10);
  return buf;
}

}  // namespace ckd
