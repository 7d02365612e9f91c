#include "ckd/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "ckd/rng.hpp"

namespace ckd {

namespace {

// Strict base-10 integer; the whole token must be consumed.
bool parse_i64(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stoll(s, &pos, 10);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

}  // namespace

InteractionDataset load_interactions(const std::string& path,
                                     const std::string& domain_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_interactions: cannot open '" + path + "'");

  InteractionDataset ds;
  ds.domain_tag = domain_tag.empty()
                      ? std::filesystem::path(path).stem().string()
                      : domain_tag;

  std::unordered_map<std::string, std::size_t> user_ids, item_ids;
  // (timestamp, file order, item) per user; stable order resolves ties.
  std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> raw;

  std::string line;
  std::size_t line_no = 0;
  std::int64_t order = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line[0] == '#') continue;
    const auto fail = [&](const std::string& why) {
      throw std::runtime_error("load_interactions: " + path + " line " +
                               std::to_string(line_no) + ": " + why);
    };
    std::size_t t1 = line.find('\t');
    std::size_t t2 = t1 == std::string::npos ? std::string::npos
                                             : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos ||
        line.find('\t', t2 + 1) != std::string::npos)
      fail("expected user<TAB>item<TAB>timestamp");
    const std::string user = line.substr(0, t1);
    const std::string item = line.substr(t1 + 1, t2 - t1 - 1);
    const std::string stamp = line.substr(t2 + 1);
    if (user.empty() || item.empty()) fail("empty user or item id");
    std::int64_t ts = 0;
    if (!parse_i64(stamp, ts)) fail("bad timestamp '" + stamp + "'");

    auto [uit, unew] = user_ids.emplace(user, ds.user_names.size());
    if (unew) {
      ds.user_names.push_back(user);
      raw.emplace_back();
    }
    auto [iit, inew] = item_ids.emplace(item, ds.item_names.size());
    if (inew) ds.item_names.push_back(item);
    raw[uit->second].push_back({ts, static_cast<std::int64_t>(iit->second)});
    ++order;
  }
  if (order == 0)
    throw std::runtime_error("load_interactions: " + path + ": no interactions");

  ds.sequences.resize(raw.size());
  for (std::size_t u = 0; u < raw.size(); ++u) {
    auto& events = raw[u];
    std::stable_sort(events.begin(), events.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    ds.sequences[u].reserve(events.size());
    for (const auto& [ts, item] : events) ds.sequences[u].push_back(item);
  }
  return ds;
}

void write_interactions(const std::string& path, const InteractionDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("write_interactions: cannot open '" + path + "'");
  for (std::size_t u = 0; u < ds.sequences.size(); ++u) {
    for (std::size_t t = 0; t < ds.sequences[u].size(); ++t) {
      const std::int64_t item = ds.sequences[u][t];
      out << ds.user_names[u] << '\t'
          << ds.item_names[static_cast<std::size_t>(item)] << '\t' << (t + 1)
          << '\n';
    }
  }
  if (!out)
    throw std::runtime_error("write_interactions: write failed for '" + path + "'");
}

SplitDataset leave_one_out_split(const InteractionDataset& ds) {
  SplitDataset split;
  split.train.resize(ds.num_users());
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    const auto& seq = ds.sequences[u];
    if (seq.size() < 3) {
      split.train[u] = seq;
      continue;
    }
    const std::size_t n = seq.size();
    split.train[u].assign(seq.begin(), seq.begin() + (n - 2));
    EvalRow valid;
    valid.user = u;
    valid.prefix.assign(seq.begin(), seq.begin() + (n - 2));
    valid.target = seq[n - 2];
    split.valid.push_back(std::move(valid));
    EvalRow test;
    test.user = u;
    test.prefix.assign(seq.begin(), seq.begin() + (n - 1));
    test.target = seq[n - 1];
    split.test.push_back(std::move(test));
  }
  return split;
}

PopularityTable popularity_table(
    const std::vector<std::vector<std::int64_t>>& train_sequences,
    std::size_t num_items) {
  PopularityTable table;
  table.counts.assign(num_items, 0);
  std::int64_t total = 0;
  for (const auto& seq : train_sequences) {
    for (std::int64_t item : seq) {
      if (item < 0 || static_cast<std::size_t>(item) >= num_items)
        throw std::runtime_error("popularity_table: item id " +
                                 std::to_string(item) + " out of range");
      ++table.counts[static_cast<std::size_t>(item)];
      ++total;
    }
  }
  if (total == 0)
    throw std::runtime_error("popularity_table: zero interactions");
  const std::int64_t top =
      *std::max_element(table.counts.begin(), table.counts.end());
  table.pop.resize(num_items);
  for (std::size_t v = 0; v < num_items; ++v)
    table.pop[v] = static_cast<double>(table.counts[v]) /
                   static_cast<double>(top);
  return table;
}

DomainGroup load_domain_group(const std::vector<std::string>& paths) {
  if (paths.empty())
    throw std::runtime_error("load_domain_group: no dataset paths");
  DomainGroup group;
  std::unordered_map<std::string, std::int64_t> union_ids;
  for (const std::string& path : paths) {
    InteractionDataset ds = load_interactions(path);
    std::vector<std::int64_t> remap(ds.num_items());
    for (std::size_t v = 0; v < ds.num_items(); ++v) {
      auto [it, fresh] =
          union_ids.emplace(ds.item_names[v],
                            static_cast<std::int64_t>(group.item_names.size()));
      if (fresh) group.item_names.push_back(ds.item_names[v]);
      remap[v] = it->second;
    }
    for (auto& seq : ds.sequences)
      for (auto& item : seq) item = remap[static_cast<std::size_t>(item)];
    group.domains.push_back(std::move(ds));
    if (group.domains.size() == 1) group.target_items = group.item_names.size();
  }
  // Earlier domains were remapped before the union grew; refresh their copy
  // of the shared name table so num_items() is the union size everywhere.
  for (auto& ds : group.domains) ds.item_names = group.item_names;
  return group;
}

// ---- synthetic generator ----

namespace {

void validate(const SyntheticSpec& spec) {
  const auto fail = [](const std::string& why) {
    throw std::runtime_error("generate_synthetic: " + why);
  };
  if (spec.num_domains < 2) fail("num_domains must be >= 2");
  if (spec.users_per_domain.size() != spec.num_domains)
    fail("users_per_domain must list one count per domain");
  if (spec.items_per_domain.size() != spec.num_domains)
    fail("items_per_domain must list one count per domain");
  if (spec.catalog_items == 0) fail("catalog_items must be positive");
  for (std::size_t n : spec.users_per_domain)
    if (n == 0) fail("users_per_domain entries must be positive");
  for (std::size_t n : spec.items_per_domain) {
    if (n == 0) fail("items_per_domain entries must be positive");
    if (n > spec.catalog_items) fail("domain catalog larger than shared pool");
  }
  if (spec.latent_dim == 0) fail("latent_dim must be positive");
  if (spec.archetypes == 0) fail("archetypes must be positive");
  if (spec.avg_len < 3.0) fail("avg_len must be at least 3");
  if (spec.noise < 0.0) fail("noise must be non-negative");
}

}  // namespace

std::vector<std::string> generate_synthetic(const SyntheticSpec& spec,
                                            const std::string& out_dir,
                                            SyntheticTrace* trace) {
  validate(spec);
  std::filesystem::create_directories(out_dir);

  // Shared latent state: item factors and user archetypes.
  Rng factor_rng(derive_seed(spec.seed, "synth.factors"));
  std::vector<std::vector<double>> item_factors(spec.catalog_items);
  const double factor_scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
  for (auto& f : item_factors) {
    f.resize(spec.latent_dim);
    for (double& x : f) x = factor_rng.normal() * factor_scale;
  }
  Rng arch_rng(derive_seed(spec.seed, "synth.archetypes"));
  std::vector<std::vector<double>> archetype(spec.archetypes);
  for (auto& a : archetype) {
    a.resize(spec.latent_dim);
    for (double& x : a) x = arch_rng.normal();
  }

  if (trace) trace->top_item.assign(spec.num_domains, {});
  std::vector<std::string> paths;
  for (std::size_t d = 0; d < spec.num_domains; ++d) {
    Rng rng(derive_seed(spec.seed, "synth.domain", d));

    // Domain catalog: random subset of the shared pool.
    std::vector<std::size_t> pool(spec.catalog_items);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    rng.shuffle(pool);
    std::vector<std::size_t> items(pool.begin(),
                                   pool.begin() + spec.items_per_domain[d]);

    const std::string path =
        (std::filesystem::path(out_dir) / ("domain_" + std::to_string(d) + ".tsv"))
            .string();
    std::ofstream out(path, std::ios::binary);
    if (!out)
      throw std::runtime_error("generate_synthetic: cannot open '" + path + "'");

    if (trace) trace->top_item[d].resize(spec.users_per_domain[d]);
    for (std::size_t u = 0; u < spec.users_per_domain[d]; ++u) {
      // User taste: a shared archetype plus personal variation.
      const auto& base = archetype[rng.below(spec.archetypes)];
      std::vector<double> taste(spec.latent_dim);
      for (std::size_t x = 0; x < spec.latent_dim; ++x)
        taste[x] = base[x] + 0.25 * rng.normal();

      std::vector<double> score(items.size());
      std::size_t best = 0;
      for (std::size_t i = 0; i < items.size(); ++i) {
        double s = 0.0;
        const auto& f = item_factors[items[i]];
        for (std::size_t x = 0; x < spec.latent_dim; ++x) s += taste[x] * f[x];
        score[i] = s;
        if (s > score[best]) best = i;
      }
      if (trace) trace->top_item[d][u] = items[best];

      // Sequence length: uniform around the target mean, at least 3.
      std::size_t len = static_cast<std::size_t>(
          std::llround(spec.avg_len * rng.uniform(0.5, 1.5)));
      len = std::max<std::size_t>(len, 3);
      len = std::min(len, items.size());

      // Gumbel perturbation then top-k: noise 0 degenerates to pure argmax
      // ranking, so the user's best item is always selected.
      std::vector<std::size_t> order(items.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::vector<double> key(items.size());
      for (std::size_t i = 0; i < items.size(); ++i)
        key[i] = score[i] + spec.noise * rng.gumbel();
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (key[a] != key[b]) return key[a] > key[b];
        return a < b;
      });
      std::vector<std::size_t> chosen(order.begin(), order.begin() + len);
      rng.shuffle(chosen);  // temporal order is independent of preference rank

      for (std::size_t t = 0; t < chosen.size(); ++t)
        out << 'u' << u << '\t' << 'i' << items[chosen[t]] << '\t' << (t + 1)
            << '\n';
    }
    if (!out)
      throw std::runtime_error("generate_synthetic: write failed for '" + path +
                               "'");
    paths.push_back(path);
  }
  return paths;
}

}  // namespace ckd
