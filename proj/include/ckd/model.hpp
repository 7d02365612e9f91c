#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ckd/binio.hpp"
#include "ckd/graph.hpp"
#include "ckd/rng.hpp"
#include "ckd/tensor.hpp"

namespace ckd {

enum class Arch { attention, mean_pool };

inline std::string arch_name(Arch a) {
  return a == Arch::attention ? "attention" : "mean_pool";
}

inline Arch arch_from_string(const std::string& s) {
  if (s == "attention") return Arch::attention;
  if (s == "mean_pool") return Arch::mean_pool;
  throw std::runtime_error("model: unknown architecture '" + s + "'");
}

struct ModelConfig {
  std::size_t embedding_dim = 300;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t max_len = 50;
  double dropout = 0.1;
  Arch arch = Arch::attention;

  void validate() const {
    if (embedding_dim == 0 || heads == 0 || layers == 0 || max_len == 0)
      throw std::runtime_error("model config: counts must be positive");
    if (embedding_dim % heads != 0)
      throw std::runtime_error(
          "model config: embedding_dim " + std::to_string(embedding_dim) +
          " not divisible by heads " + std::to_string(heads));
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::runtime_error("model config: dropout must be in [0,1)");
  }
};

// Sequential recommender over one item vocabulary. The attention variant is
// a causally masked self-attention encoder whose last-position output is the
// user representation; mean_pool simply averages item embeddings. Scoring is
// a dot product against the same (tied) item embedding table used for input.
template <typename T>
class SequentialModel {
 public:
  static constexpr std::uint32_t kCheckpointVersion = 1;

  SequentialModel(ModelConfig config, std::size_t vocab,
                  std::shared_ptr<ParameterStore<T>> params)
      : config_(config), vocab_(vocab), params_(std::move(params)) {
    config_.validate();
    if (vocab_ == 0) throw std::runtime_error("model: vocab must be positive");
  }

  // Fresh parameters from a symmetric uniform distribution scaled by 1/sqrt(d).
  static SequentialModel init(const ModelConfig& config, std::size_t vocab,
                              std::uint64_t seed) {
    config.validate();
    if (vocab == 0) throw std::runtime_error("model: vocab must be positive");
    auto params = std::make_shared<ParameterStore<T>>();
    Rng rng(derive_seed(seed, "model.init"));
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.embedding_dim));
    const auto draw = [&](const std::string& name,
                          std::vector<std::size_t> dims) {
      std::size_t n = 1;
      for (std::size_t d : dims) n *= d;
      std::vector<T> data(n);
      for (T& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
      params->add(name, Tensor<T>(std::move(dims), std::move(data)));
    };

    const std::size_t d = config.embedding_dim;
    draw("item_emb", {vocab, d});
    if (config.arch == Arch::attention) {
      draw("pos_emb", {config.max_len, d});
      const std::size_t dh = d / config.heads;
      for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string lp = "l" + std::to_string(l) + ".";
        for (std::size_t h = 0; h < config.heads; ++h) {
          const std::string hp = lp + "h" + std::to_string(h) + ".";
          draw(hp + "wq", {d, dh});
          draw(hp + "wk", {d, dh});
          draw(hp + "wv", {d, dh});
          draw(hp + "wo", {dh, d});
        }
        draw(lp + "ffn.w1", {d, d});
        draw(lp + "ffn.b1", {d});
        draw(lp + "ffn.w2", {d, d});
        draw(lp + "ffn.b2", {d});
      }
    }
    return SequentialModel(config, vocab, std::move(params));
  }

  const ModelConfig& config() const { return config_; }
  std::size_t vocab() const { return vocab_; }
  std::shared_ptr<ParameterStore<T>> params() const { return params_; }

  // Closed-form count; must equal the store's total entries by construction.
  std::size_t param_count() const {
    const std::size_t d = config_.embedding_dim;
    std::size_t n = vocab_ * d;
    if (config_.arch == Arch::attention) {
      n += config_.max_len * d;
      n += config_.layers * (4 * d * d + 2 * d * d + 2 * d);
    }
    return n;
  }

  // Appends the encoder for one sequence to `g`; returns a 1×d node holding
  // the user representation (the final position's output). Training mode
  // records dropout masks from `rng`.
  int build_encoder(ValueGraph<T>& g, const std::vector<std::int64_t>& seq,
                    bool train_mode, Rng* rng = nullptr) const {
    const int rows = build_encoder_rows(g, seq, train_mode, rng);
    if (config_.arch == Arch::mean_pool) return rows;  // already 1×d
    return g.gather(rows, {static_cast<std::int64_t>(seq.size()) - 1});
  }

  // Per-position encoder outputs (L×d) for the attention variant; the
  // mean_pool variant has a single pooled row.
  int build_encoder_rows(ValueGraph<T>& g, const std::vector<std::int64_t>& seq,
                         bool train_mode, Rng* rng = nullptr) const {
    validate_sequence(seq);
    if (train_mode && config_.dropout > 0.0 && rng == nullptr)
      throw std::runtime_error("encode: training mode needs an RNG for dropout");
    const std::size_t L = seq.size();
    const std::size_t d = config_.embedding_dim;

    const auto drop = [&](int node) {
      if (config_.dropout == 0.0) return node;
      static Rng dummy(0);
      return g.dropout(node, config_.dropout, train_mode ? *rng : dummy,
                       train_mode);
    };

    int e = g.gather(g.param("item_emb"), seq);
    if (config_.arch == Arch::mean_pool) {
      int x = drop(e);
      // Row-mean via an all-ones left vector: (1/L) * ones(1×L) · X.
      int ones = g.constant(Tensor<T>({1, L}, std::vector<T>(L, T(1))));
      return g.affine(g.matmul(ones, x), T(1) / static_cast<T>(L), T(0));
    }

    std::vector<std::int64_t> positions(L);
    for (std::size_t t = 0; t < L; ++t)
      positions[t] = static_cast<std::int64_t>(t);
    int x = drop(g.add(e, g.gather(g.param("pos_emb"), positions)));

    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string lp = "l" + std::to_string(l) + ".";
      // Multi-head attention; summing per-head output projections is
      // equivalent to concatenating heads and projecting once.
      int attn = -1;
      for (std::size_t h = 0; h < config_.heads; ++h) {
        const std::string hp = lp + "h" + std::to_string(h) + ".";
        int q = g.matmul(x, g.param(hp + "wq"));
        int k = g.matmul(x, g.param(hp + "wk"));
        int v = g.matmul(x, g.param(hp + "wv"));
        int head = g.matmul(g.masked_attention(q, k, v), g.param(hp + "wo"));
        attn = attn < 0 ? head : g.add(attn, head);
      }
      x = g.layer_norm(g.add(x, drop(attn)));

      // Position-wise feed-forward with a softplus nonlinearity,
      // log(exp(z)+1), composed from the graph's primitive ops.
      int z = g.add_row(g.matmul(x, g.param(lp + "ffn.w1")),
                        g.param(lp + "ffn.b1"));
      int act = g.log(g.affine(g.exp(z), T(1), T(1)));
      int f = g.add_row(g.matmul(act, g.param(lp + "ffn.w2")),
                        g.param(lp + "ffn.b2"));
      x = g.layer_norm(g.add(x, drop(f)));
    }
    return x;
  }

  // Convenience one-shot encode (always deterministic in eval mode).
  Tensor<T> encode(const std::vector<std::int64_t>& seq, bool train_mode = false,
                   Rng* rng = nullptr) const {
    ValueGraph<T> g(params_);
    int u = build_encoder(g, seq, train_mode, rng);
    g.mark_output(u, "u");
    return g.evaluate().at("u");
  }

  // Dot products against the tied embedding table, in input order.
  std::vector<T> score_items(const Tensor<T>& u,
                             const std::vector<std::int64_t>& items) const {
    if (items.empty()) throw std::runtime_error("score_items: empty item list");
    const std::size_t d = config_.embedding_dim;
    if (u.numel() != d)
      throw std::runtime_error("score_items: representation has " +
                               std::to_string(u.numel()) + " entries, expected " +
                               std::to_string(d));
    const Tensor<T>& emb = params_->get("item_emb");
    std::vector<T> scores(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      const std::int64_t j = items[i];
      if (j < 0 || static_cast<std::size_t>(j) >= vocab_)
        throw std::runtime_error("score_items: item id " + std::to_string(j) +
                                 " out of vocabulary");
      T s = T(0);
      for (std::size_t x = 0; x < d; ++x)
        s += u[x] * emb.at(static_cast<std::size_t>(j), x);
      scores[i] = s;
    }
    return scores;
  }

  // ---- checkpointing ----
  // Format: "CKDM", u32 version, u32 tensor count, then per tensor:
  // u32 name length, name bytes, u32 rank, rank u64 dims, f32 data (LE).
  // A "__meta__" tensor carries (arch, d, H, L, N_max, vocab, dropout) so a
  // checkpoint alone reconstructs the model.

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    out.write("CKDM", 4);
    write_u32(out, kCheckpointVersion);

    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    tensors.emplace_back("__meta__", meta_tensor());
    for (const auto& [name, value] : *params_)
      tensors.emplace_back(name, value.template cast<float>());

    write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, value] : tensors) {
      write_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u32(out, static_cast<std::uint32_t>(value.dims().size()));
      for (std::size_t dim : value.dims()) write_u64(out, dim);
      for (std::size_t i = 0; i < value.numel(); ++i) write_f32(out, value[i]);
    }
    if (!out)
      throw std::runtime_error("checkpoint: write failed for '" + path + "'");
  }

  static SequentialModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    const std::string magic = read_bytes(in, 4, "checkpoint");
    if (magic != "CKDM")
      throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    const std::uint32_t version = read_u32(in, "checkpoint");
    if (version != kCheckpointVersion)
      throw std::runtime_error("checkpoint: unsupported version " +
                               std::to_string(version));
    const std::uint32_t count = read_u32(in, "checkpoint");

    std::map<std::string, Tensor<float>> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t name_len = read_u32(in, "checkpoint");
      if (name_len == 0 || name_len > 4096)
        throw std::runtime_error("checkpoint: implausible tensor name length");
      const std::string name = read_bytes(in, name_len, "checkpoint");
      const std::uint32_t rank = read_u32(in, "checkpoint");
      if (rank == 0 || rank > 8)
        throw std::runtime_error("checkpoint: tensor '" + name +
                                 "' has invalid rank");
      std::vector<std::size_t> dims(rank);
      std::size_t numel = 1;
      for (auto& dim : dims) {
        dim = static_cast<std::size_t>(read_u64(in, "checkpoint"));
        if (dim == 0 || dim > (1u << 30))
          throw std::runtime_error("checkpoint: tensor '" + name +
                                   "' has implausible dimensions");
        numel *= dim;
        if (numel > (1u << 30))
          throw std::runtime_error("checkpoint: tensor '" + name +
                                   "' has implausible dimensions");
      }
      std::vector<float> data(numel);
      for (auto& v : data) v = read_f32(in, "checkpoint");
      tensors.emplace(name, Tensor<float>(std::move(dims), std::move(data)));
    }
    // Trailing bytes mean the writer and reader disagree about the format.
    if (in.peek() != std::char_traits<char>::eof())
      throw std::runtime_error("checkpoint: trailing bytes in '" + path + "'");

    auto meta_it = tensors.find("__meta__");
    if (meta_it == tensors.end())
      throw std::runtime_error("checkpoint: missing __meta__ tensor");
    const Tensor<float>& meta = meta_it->second;
    if (meta.numel() != 7)
      throw std::runtime_error("checkpoint: malformed __meta__ tensor");
    ModelConfig config;
    config.arch = meta[0] == 0.0f ? Arch::attention : Arch::mean_pool;
    config.embedding_dim = static_cast<std::size_t>(meta[1]);
    config.heads = static_cast<std::size_t>(meta[2]);
    config.layers = static_cast<std::size_t>(meta[3]);
    config.max_len = static_cast<std::size_t>(meta[4]);
    const std::size_t vocab = static_cast<std::size_t>(meta[5]);
    config.dropout = static_cast<double>(meta[6]);
    tensors.erase(meta_it);

    // Rebuild via init to get the canonical parameter set, then overwrite.
    SequentialModel model = SequentialModel::init(config, vocab, 0);
    std::size_t expected = model.params_->size();
    if (tensors.size() != expected)
      throw std::runtime_error("checkpoint: expected " +
                               std::to_string(expected) + " tensors, found " +
                               std::to_string(tensors.size()));
    for (auto& [name, value] : *model.params_) {
      auto it = tensors.find(name);
      if (it == tensors.end())
        throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
      if (it->second.dims() != value.dims())
        throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                                 it->second.shape_string() + ", expected " +
                                 value.shape_string());
      value = it->second.template cast<T>();
    }
    return model;
  }

  // Cross-check against an externally configured shape (e.g. a config file).
  void require_config(const ModelConfig& expected, std::size_t vocab) const {
    const auto mismatch = [](const std::string& what, std::size_t got,
                             std::size_t want) {
      throw std::runtime_error("checkpoint: " + what + " is " +
                               std::to_string(got) + ", config expects " +
                               std::to_string(want));
    };
    if (config_.arch != expected.arch)
      throw std::runtime_error("checkpoint: architecture " +
                               arch_name(config_.arch) + ", config expects " +
                               arch_name(expected.arch));
    if (config_.embedding_dim != expected.embedding_dim)
      mismatch("embedding_dim", config_.embedding_dim, expected.embedding_dim);
    if (config_.heads != expected.heads) mismatch("heads", config_.heads, expected.heads);
    if (config_.layers != expected.layers) mismatch("layers", config_.layers, expected.layers);
    if (config_.max_len != expected.max_len) mismatch("max_len", config_.max_len, expected.max_len);
    if (vocab_ != vocab) mismatch("vocab", vocab_, vocab);
  }

 private:
  void validate_sequence(const std::vector<std::int64_t>& seq) const {
    if (seq.empty()) throw std::runtime_error("encode: empty sequence");
    if (seq.size() > config_.max_len)
      throw std::runtime_error("encode: sequence length " +
                               std::to_string(seq.size()) + " exceeds max_len " +
                               std::to_string(config_.max_len));
    for (std::int64_t v : seq)
      if (v < 0 || static_cast<std::size_t>(v) >= vocab_)
        throw std::runtime_error("encode: item id " + std::to_string(v) +
                                 " out of vocabulary");
  }

  Tensor<float> meta_tensor() const {
    return Tensor<float>({7}, {config_.arch == Arch::attention ? 0.0f : 1.0f,
                               static_cast<float>(config_.embedding_dim),
                               static_cast<float>(config_.heads),
                               static_cast<float>(config_.layers),
                               static_cast<float>(config_.max_len),
                               static_cast<float>(vocab_),
                               static_cast<float>(config_.dropout)});
  }

  ModelConfig config_;
  std::size_t vocab_;
  std::shared_ptr<ParameterStore<T>> params_;
};

}  // namespace ckd
