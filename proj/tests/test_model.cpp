#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ckd/model.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace ckd;

namespace {

ModelConfig small_attention() {
  ModelConfig cfg;
  cfg.embedding_dim = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.max_len = 6;
  cfg.dropout = 0.1;
  cfg.arch = Arch::attention;
  return cfg;
}

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ckd_model_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("init_model is deterministic and validates its config") {
  auto a = SequentialModel<double>::init(small_attention(), 10, 5);
  auto b = SequentialModel<double>::init(small_attention(), 10, 5);
  auto c = SequentialModel<double>::init(small_attention(), 10, 6);
  bool same = true, diff = false;
  for (const auto& [name, value] : *a.params()) {
    const auto& bv = b.params()->get(name);
    const auto& cv = c.params()->get(name);
    for (std::size_t i = 0; i < value.numel(); ++i) {
      same = same && value[i] == bv[i];
      diff = diff || value[i] != cv[i];
    }
  }
  CHECK(same);
  CHECK(diff);

  ModelConfig bad = small_attention();
  bad.embedding_dim = 3;  // not divisible by heads=2
  CHECK_THROWS_AS(SequentialModel<double>::init(bad, 10, 1), std::runtime_error);
  CHECK_THROWS_AS(SequentialModel<double>::init(small_attention(), 0, 1),
                  std::runtime_error);
}

TEST_CASE("parameter count matches the closed form") {
  ModelConfig cfg;
  cfg.embedding_dim = 4;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.max_len = 6;
  cfg.arch = Arch::attention;
  auto m = SequentialModel<double>::init(cfg, 10, 1);
  // item 10*4 + pos 6*4 + layer: heads 2*(3*4*2 + 2*4) + ffn (16+4+16+4)
  // = 40 + 24 + (4*16 + 2*16 + 2*4) = 40 + 24 + 104 = 168
  CHECK(m.param_count() == 168);
  CHECK(m.params()->total_entries() == m.param_count());

  ModelConfig pool = cfg;
  pool.arch = Arch::mean_pool;
  auto p = SequentialModel<double>::init(pool, 10, 1);
  CHECK(p.param_count() == 40);
  CHECK(p.params()->total_entries() == 40);
}

TEST_CASE("parameter count is invariant to everything but vocab and config") {
  // Same config and vocab → same count, regardless of seed or data history.
  auto a = SequentialModel<double>::init(small_attention(), 33, 1);
  auto b = SequentialModel<double>::init(small_attention(), 33, 999);
  CHECK(a.param_count() == b.param_count());
}

TEST_CASE("mean_pool of a single item is that item's embedding") {
  ModelConfig cfg;
  cfg.embedding_dim = 4;
  cfg.heads = 1;
  cfg.layers = 1;
  cfg.max_len = 5;
  cfg.dropout = 0.1;
  cfg.arch = Arch::mean_pool;
  auto m = SequentialModel<double>::init(cfg, 6, 3);
  auto u = m.encode({4});
  const auto& emb = m.params()->get("item_emb");
  for (std::size_t x = 0; x < 4; ++x)
    CHECK(u[x] == doctest::Approx(emb.at(4, x)).epsilon(1e-15));
}

TEST_CASE("mean_pool averages the sequence's embeddings") {
  ModelConfig cfg;
  cfg.embedding_dim = 3;
  cfg.heads = 1;
  cfg.layers = 1;
  cfg.max_len = 5;
  cfg.dropout = 0.0;
  cfg.arch = Arch::mean_pool;
  auto m = SequentialModel<double>::init(cfg, 5, 3);
  auto u = m.encode({1, 3});
  const auto& emb = m.params()->get("item_emb");
  for (std::size_t x = 0; x < 3; ++x)
    CHECK(u[x] == doctest::Approx(0.5 * (emb.at(1, x) + emb.at(3, x))).epsilon(1e-14));
}

TEST_CASE("attention encode is deterministic in eval mode") {
  auto m = SequentialModel<double>::init(small_attention(), 12, 9);
  auto u1 = m.encode({3, 1, 7, 2});
  auto u2 = m.encode({3, 1, 7, 2});
  for (std::size_t x = 0; x < u1.numel(); ++x) CHECK(u1[x] == u2[x]);
}

TEST_CASE("attention representation ignores items after the final position") {
  // The representation of a prefix equals the prefix-position output of a
  // longer sequence, because the causal mask hides the future.
  auto m = SequentialModel<double>::init(small_attention(), 12, 9);
  auto u_prefix = m.encode({3, 1, 7});

  ValueGraph<double> g(m.params());
  int rows = m.build_encoder_rows(g, {3, 1, 7, 2, 5}, false);
  g.mark_output(g.gather(rows, {2}), "u_at_2");
  auto out = g.evaluate();
  REQUIRE(out.at("u_at_2").numel() == u_prefix.numel());
  for (std::size_t x = 0; x < u_prefix.numel(); ++x)
    CHECK(out.at("u_at_2")[x] == u_prefix[x]);  // bitwise
}

TEST_CASE("encode validates sequences") {
  auto m = SequentialModel<double>::init(small_attention(), 12, 9);
  CHECK_THROWS_AS(m.encode({}), std::runtime_error);
  CHECK_THROWS_AS(m.encode({0, 1, 2, 3, 4, 5, 0}), std::runtime_error);  // > max_len
  CHECK_THROWS_AS(m.encode({12}), std::runtime_error);                   // OOV
  CHECK_THROWS_AS(m.encode({-1}), std::runtime_error);
}

TEST_CASE("score_items computes dot products in order") {
  ModelConfig cfg;
  cfg.embedding_dim = 2;
  cfg.heads = 1;
  cfg.layers = 1;
  cfg.max_len = 4;
  cfg.arch = Arch::mean_pool;
  auto m = SequentialModel<double>::init(cfg, 3, 1);
  auto& emb = m.params()->ref("item_emb");
  emb.at(0, 0) = 3;
  emb.at(0, 1) = 4;
  emb.at(1, 0) = 3;
  emb.at(1, 1) = 4;
  emb.at(2, 0) = -1;
  emb.at(2, 1) = 2;

  Tensor<double> u({2}, {1, 2});
  auto scores = m.score_items(u, {0, 1, 2});
  CHECK(scores[0] == 11.0);      // [1,2]·[3,4]
  CHECK(scores[1] == scores[0]); // identical embeddings tie
  CHECK(scores[2] == 3.0);

  Tensor<double> zero({2}, {0, 0});
  for (double s : m.score_items(zero, {0, 1, 2})) CHECK(s == 0.0);

  CHECK_THROWS_AS(m.score_items(u, {}), std::runtime_error);
  CHECK_THROWS_AS(m.score_items(u, {3}), std::runtime_error);
}

TEST_CASE("full encode+score+loss graph passes the gradient check") {
  ModelConfig cfg;
  cfg.embedding_dim = 6;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.max_len = 5;
  cfg.dropout = 0.2;
  cfg.arch = Arch::attention;
  auto m = SequentialModel<double>::init(cfg, 9, 21);

  Rng drop_rng(77);
  ValueGraph<double> g(m.params());
  int u = m.build_encoder(g, {1, 4, 2, 8}, true, &drop_rng);
  // in-batch softmax cross-entropy against candidate items {2,5,7}
  int cand = g.gather(g.param("item_emb"), {2, 5, 7});
  int scores = g.reshape(g.matmul(cand, g.reshape(u, {6, 1})), {1, 3});
  int p = g.softmax_row(scores);
  int one_hot = g.constant(Tensor<double>({1, 3}, {0, 1, 0}));
  int loss = g.affine(g.sum(g.mul(g.log(p), one_hot)), -1.0, 0.0);
  CHECK(g.grad_check(loss, 1e-5) < 1e-4);
}

TEST_CASE("checkpoint round trip is bitwise for the on-disk precision") {
  auto m = SequentialModel<float>::init(small_attention(), 12, 4);
  auto path = temp_path("roundtrip.ckpt");
  m.save(path);
  auto r = SequentialModel<float>::load(path);
  CHECK(r.vocab() == 12);
  CHECK(r.config().embedding_dim == 8);
  CHECK(r.config().arch == Arch::attention);
  for (const auto& [name, value] : *m.params()) {
    const auto& rv = r.params()->get(name);
    REQUIRE(rv.dims() == value.dims());
    for (std::size_t i = 0; i < value.numel(); ++i) CHECK(rv[i] == value[i]);
  }

  // Resaving the loaded model reproduces the file byte for byte.
  auto path2 = temp_path("roundtrip2.ckpt");
  r.save(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
}

TEST_CASE("checkpoint round trip through double preserves stored values") {
  auto m = SequentialModel<double>::init(small_attention(), 7, 4);
  auto path = temp_path("roundtrip_f64.ckpt");
  m.save(path);
  auto r = SequentialModel<double>::load(path);
  for (const auto& [name, value] : *m.params()) {
    const auto& rv = r.params()->get(name);
    for (std::size_t i = 0; i < value.numel(); ++i)
      CHECK(rv[i] == static_cast<double>(static_cast<float>(value[i])));
  }
}

TEST_CASE("checkpoint load rejects damaged files") {
  auto path = temp_path("bad_magic.ckpt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE" << std::string(64, '\0');
  }
  CHECK_THROWS_WITH_AS(SequentialModel<double>::load(path),
                       doctest::Contains("bad magic"), std::runtime_error);

  auto m = SequentialModel<double>::init(small_attention(), 7, 4);
  auto good = temp_path("good.ckpt");
  m.save(good);
  std::ifstream in(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  auto trunc = temp_path("trunc.ckpt");
  {
    std::ofstream out(trunc, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_WITH_AS(SequentialModel<double>::load(trunc),
                       doctest::Contains("truncated"), std::runtime_error);

  CHECK_THROWS_AS(SequentialModel<double>::load(temp_path("missing.ckpt")),
                  std::runtime_error);
}

TEST_CASE("require_config flags a dimension mismatch") {
  auto m = SequentialModel<double>::init(small_attention(), 7, 4);
  ModelConfig other = small_attention();
  other.embedding_dim = 16;
  other.heads = 2;
  CHECK_THROWS_WITH_AS(m.require_config(other, 7),
                       doctest::Contains("embedding_dim"), std::runtime_error);
  CHECK_THROWS_AS(m.require_config(small_attention(), 8), std::runtime_error);
  CHECK_NOTHROW(m.require_config(small_attention(), 7));
}

TEST_CASE("float engine encodes without blowing up") {
  auto m = SequentialModel<float>::init(small_attention(), 12, 9);
  auto u = m.encode({3, 1, 7, 2});
  CHECK(u.numel() == 8);
}
