#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ckd {

// One domain's interaction log with densely re-indexed users and items.
// Sequences are chronological; original string ids are kept for writing and
// for cross-domain vocabulary alignment.
struct InteractionDataset {
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
  std::vector<std::vector<std::int64_t>> sequences;  // per user, time order
  std::string domain_tag;

  std::size_t num_users() const { return sequences.size(); }
  std::size_t num_items() const { return item_names.size(); }
};

// Held-out evaluation row: predict `target` from `prefix`.
struct EvalRow {
  std::size_t user = 0;
  std::vector<std::int64_t> prefix;
  std::int64_t target = 0;
};

// Leave-one-out split. `train` is indexed by user id and contains the
// sequence with the last two items removed (or the full sequence for users
// too short to contribute held-out rows).
struct SplitDataset {
  std::vector<std::vector<std::int64_t>> train;
  std::vector<EvalRow> valid;
  std::vector<EvalRow> test;
};

// Per-item interaction frequency normalized so the most frequent item is 1.
struct PopularityTable {
  std::vector<std::int64_t> counts;
  std::vector<double> pop;

  double pop_of(std::int64_t item) const {
    if (item < 0 || static_cast<std::size_t>(item) >= pop.size()) return 0.0;
    return pop[static_cast<std::size_t>(item)];
  }
};

// Several domains mapped onto one shared item vocabulary. The first loaded
// domain is the transfer target and its items occupy ids [0, target_items),
// so target-local ids are valid indices into the union space as-is.
struct DomainGroup {
  std::vector<InteractionDataset> domains;  // sequences use union item ids
  std::vector<std::string> item_names;      // union vocabulary
  std::size_t target_items = 0;             // item count of domains[0]
};

InteractionDataset load_interactions(const std::string& path,
                                     const std::string& domain_tag = "");

void write_interactions(const std::string& path, const InteractionDataset& ds);

SplitDataset leave_one_out_split(const InteractionDataset& ds);

PopularityTable popularity_table(
    const std::vector<std::vector<std::int64_t>>& train_sequences,
    std::size_t num_items);

DomainGroup load_domain_group(const std::vector<std::string>& paths);

// Seeded multi-domain generator. Domains draw their catalogs from one shared
// pool of latent item factors and their users from shared archetypes, so
// preferences transfer across domains while each domain keeps its own users.
struct SyntheticSpec {
  std::size_t num_domains = 0;
  std::vector<std::size_t> users_per_domain;
  std::vector<std::size_t> items_per_domain;  // catalog subset size per domain
  std::size_t catalog_items = 0;              // shared item pool size
  std::size_t latent_dim = 8;
  std::size_t archetypes = 8;
  double avg_len = 8.0;   // target mean sequence length
  double noise = 0.5;     // Gumbel noise scale on preference scores
  std::uint64_t seed = 0;
};

// Debug view for tests: the argmax-preference item per user and domain,
// computed from the exact scores the generator sampled from.
struct SyntheticTrace {
  std::vector<std::vector<std::size_t>> top_item;  // [domain][user] → global id
};

// Writes domain_<d>.tsv under out_dir and returns the paths in domain order.
// Byte-identical output for identical specs.
std::vector<std::string> generate_synthetic(const SyntheticSpec& spec,
                                            const std::string& out_dir,
                                            SyntheticTrace* trace = nullptr);

}  // namespace ckd
