#include "ckd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ckd {
namespace {

using nlohmann::json;

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
  throw std::runtime_error("config: " + why + " '" + key + "'");
}

std::string scoped(const std::string& scope, const std::string& key) {
  return scope.empty() ? key : scope + "." + key;
}

void expect_object(const json& node, const std::string& scope) {
  if (!node.is_object()) bad_key(scope, "expected an object at");
}

void expect_keys(const json& node, const std::string& scope,
                 const std::set<std::string>& allowed) {
  expect_object(node, scope.empty() ? "(root)" : scope);
  for (const auto& [key, value] : node.items())
    if (!allowed.count(key)) bad_key(scoped(scope, key), "unknown key");
}

double want_number(const json& node, const std::string& key) {
  if (!node.is_number()) bad_key(key, "expected a number for");
  return node.get<double>();
}

std::uint64_t want_count(const json& node, const std::string& key) {
  if (!node.is_number_unsigned() && !(node.is_number_integer() &&
                                      node.get<std::int64_t>() >= 0))
    bad_key(key, "expected a non-negative integer for");
  return node.get<std::uint64_t>();
}

bool want_bool(const json& node, const std::string& key) {
  if (!node.is_boolean()) bad_key(key, "expected true/false for");
  return node.get<bool>();
}

std::string want_string(const json& node, const std::string& key) {
  if (!node.is_string()) bad_key(key, "expected a string for");
  return node.get<std::string>();
}

// Per-domain counts accept a single integer (shared by all domains) or an
// explicit per-domain array.
std::vector<std::size_t> want_counts(const json& node, const std::string& key,
                                     std::size_t domains) {
  std::vector<std::size_t> out;
  if (node.is_array()) {
    for (const auto& v : node) out.push_back(want_count(v, key));
  } else {
    out.assign(domains, want_count(node, key));
  }
  return out;
}

void parse_model(const json& node, const std::string& scope, ModelConfig* m) {
  expect_keys(node, scope,
              {"embedding_dim", "heads", "layers", "max_len", "dropout",
               "arch"});
  if (node.contains("embedding_dim"))
    m->embedding_dim = want_count(node["embedding_dim"],
                                  scoped(scope, "embedding_dim"));
  if (node.contains("heads"))
    m->heads = want_count(node["heads"], scoped(scope, "heads"));
  if (node.contains("layers"))
    m->layers = want_count(node["layers"], scoped(scope, "layers"));
  if (node.contains("max_len"))
    m->max_len = want_count(node["max_len"], scoped(scope, "max_len"));
  if (node.contains("dropout"))
    m->dropout = want_number(node["dropout"], scoped(scope, "dropout"));
  if (node.contains("arch")) {
    const auto name = want_string(node["arch"], scoped(scope, "arch"));
    try {
      m->arch = arch_from_string(name);
    } catch (const std::runtime_error&) {
      bad_key(scoped(scope, "arch"), "invalid value for");
    }
  }
}

// Applies "a.b.c=value" onto the document. The value text is parsed as JSON
// when possible and kept as a string otherwise, so flags like
// `--override distill.temperature=0.5` and `--override model.arch=mean_pool`
// both work.
void apply_override(json& doc, const std::string& entry) {
  const auto eq = entry.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::runtime_error("config: override must look like key=value: '" +
                             entry + "'");
  const std::string dotted = entry.substr(0, eq);
  const std::string value_text = entry.substr(eq + 1);

  json value;
  try {
    value = json::parse(value_text);
  } catch (const json::parse_error&) {
    value = value_text;  // bare strings come through unquoted
  }

  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) bad_key(dotted, "empty override key");

  json* node = &doc;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) bad_key(dotted, "override path does not name");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) bad_key(dotted, "override path does not name");
  (*node)[parts.back()] = value;
}

RunConfig from_json(json doc, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) apply_override(doc, o);

  expect_keys(doc, "",
              {"seed", "precision", "data", "synthetic", "model",
               "teacher_train", "teachers", "distill", "curriculum",
               "optimizer", "eval", "sweep"});

  RunConfig run;
  if (!doc.contains("seed")) bad_key("seed", "missing required key");
  run.seed = want_count(doc["seed"], "seed");

  if (doc.contains("precision")) {
    run.precision = want_string(doc["precision"], "precision");
    if (run.precision != "f32" && run.precision != "f64")
      bad_key("precision", "invalid value for");
  }

  if (doc.contains("data")) {
    const auto& d = doc["data"];
    expect_keys(d, "data", {"target", "sources"});
    if (d.contains("target"))
      run.data_target = want_string(d["target"], "data.target");
    if (d.contains("sources")) {
      if (!d["sources"].is_array())
        bad_key("data.sources", "expected an array for");
      for (const auto& s : d["sources"])
        run.data_sources.push_back(want_string(s, "data.sources"));
    }
  }

  if (doc.contains("synthetic")) {
    const auto& s = doc["synthetic"];
    expect_keys(s, "synthetic",
                {"num_domains", "users_per_domain", "items_per_domain",
                 "catalog_items", "latent_dim", "archetypes", "avg_len",
                 "noise", "out_dir"});
    if (s.contains("num_domains"))
      run.synthetic.num_domains =
          want_count(s["num_domains"], "synthetic.num_domains");
    if (s.contains("users_per_domain"))
      run.synthetic.users_per_domain =
          want_counts(s["users_per_domain"], "synthetic.users_per_domain",
                      run.synthetic.num_domains);
    if (s.contains("items_per_domain"))
      run.synthetic.items_per_domain =
          want_counts(s["items_per_domain"], "synthetic.items_per_domain",
                      run.synthetic.num_domains);
    if (s.contains("catalog_items"))
      run.synthetic.catalog_items =
          want_count(s["catalog_items"], "synthetic.catalog_items");
    if (s.contains("latent_dim"))
      run.synthetic.latent_dim =
          want_count(s["latent_dim"], "synthetic.latent_dim");
    if (s.contains("archetypes"))
      run.synthetic.archetypes =
          want_count(s["archetypes"], "synthetic.archetypes");
    if (s.contains("avg_len"))
      run.synthetic.avg_len = want_number(s["avg_len"], "synthetic.avg_len");
    if (s.contains("noise"))
      run.synthetic.noise = want_number(s["noise"], "synthetic.noise");
    if (s.contains("out_dir"))
      run.synthetic_out = want_string(s["out_dir"], "synthetic.out_dir");
  }

  if (doc.contains("model")) parse_model(doc["model"], "model", &run.model);

  if (doc.contains("teacher_train")) {
    const auto& t = doc["teacher_train"];
    expect_keys(t, "teacher_train", {"model", "sources", "tune_on_target"});
    if (t.contains("model"))
      parse_model(t["model"], "teacher_train.model", &run.teacher_train.model);
    if (t.contains("sources")) {
      if (!t["sources"].is_array())
        bad_key("teacher_train.sources", "expected an array for");
      for (const auto& v : t["sources"])
        run.teacher_train.sources.push_back(
            want_count(v, "teacher_train.sources"));
    }
    if (t.contains("tune_on_target"))
      run.teacher_train.tune_on_target =
          want_bool(t["tune_on_target"], "teacher_train.tune_on_target");
  }

  if (doc.contains("teachers")) {
    if (!doc["teachers"].is_array())
      bad_key("teachers", "expected an array for");
    for (std::size_t i = 0; i < doc["teachers"].size(); ++i) {
      const auto& t = doc["teachers"][i];
      const std::string scope = "teachers[" + std::to_string(i) + "]";
      expect_keys(t, scope, {"kind", "path", "weight"});
      TeacherRef ref;
      if (!t.contains("kind")) bad_key(scope + ".kind", "missing required key");
      ref.kind = want_string(t["kind"], scope + ".kind");
      if (ref.kind != "checkpoint" && ref.kind != "scores")
        bad_key(scope + ".kind", "invalid value for");
      if (!t.contains("path")) bad_key(scope + ".path", "missing required key");
      ref.path = want_string(t["path"], scope + ".path");
      if (t.contains("weight")) {
        ref.weight = want_number(t["weight"], scope + ".weight");
        if (ref.weight < 0.0) bad_key(scope + ".weight", "invalid value for");
      }
      run.teachers.push_back(std::move(ref));
    }
  }

  if (doc.contains("distill")) {
    const auto& d = doc["distill"];
    expect_keys(d, "distill",
                {"temperature", "kd_weight", "epsilon", "weight_mode",
                 "kd_candidates", "kd_direction", "batch_size"});
    if (d.contains("temperature"))
      run.distill.temperature =
          want_number(d["temperature"], "distill.temperature");
    if (d.contains("kd_weight"))
      run.distill.kd_weight = want_number(d["kd_weight"], "distill.kd_weight");
    if (d.contains("epsilon"))
      run.distill.epsilon = want_number(d["epsilon"], "distill.epsilon");
    if (d.contains("batch_size"))
      run.distill.batch_size =
          want_count(d["batch_size"], "distill.batch_size");
    try {
      if (d.contains("weight_mode"))
        run.distill.weight_mode = weight_mode_from_string(
            want_string(d["weight_mode"], "distill.weight_mode"));
      if (d.contains("kd_candidates"))
        run.distill.kd_candidates = kd_candidates_from_string(
            want_string(d["kd_candidates"], "distill.kd_candidates"));
      if (d.contains("kd_direction"))
        run.distill.kd_direction = kd_direction_from_string(
            want_string(d["kd_direction"], "distill.kd_direction"));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("config: " + std::string(e.what()));
    }
  }

  if (doc.contains("curriculum")) {
    const auto& c = doc["curriculum"];
    expect_keys(c, "curriculum",
                {"alpha", "num_buckets", "epochs_per_stage", "enabled"});
    if (c.contains("alpha"))
      run.curriculum.alpha = want_number(c["alpha"], "curriculum.alpha");
    if (c.contains("num_buckets"))
      run.curriculum.num_buckets =
          want_count(c["num_buckets"], "curriculum.num_buckets");
    if (c.contains("epochs_per_stage"))
      run.curriculum.epochs_per_stage =
          want_count(c["epochs_per_stage"], "curriculum.epochs_per_stage");
    if (c.contains("enabled"))
      run.curriculum.enabled = want_bool(c["enabled"], "curriculum.enabled");
  }

  if (doc.contains("optimizer")) {
    const auto& o = doc["optimizer"];
    expect_keys(o, "optimizer", {"lr", "l2", "max_epochs", "patience"});
    if (o.contains("lr")) run.optimizer.lr = want_number(o["lr"], "optimizer.lr");
    if (o.contains("l2")) run.optimizer.l2 = want_number(o["l2"], "optimizer.l2");
    if (o.contains("max_epochs"))
      run.optimizer.max_epochs =
          want_count(o["max_epochs"], "optimizer.max_epochs");
    if (o.contains("patience"))
      run.optimizer.patience = want_count(o["patience"], "optimizer.patience");
  }

  if (doc.contains("eval")) {
    const auto& e = doc["eval"];
    expect_keys(e, "eval", {"cutoffs"});
    if (e.contains("cutoffs")) {
      if (!e["cutoffs"].is_array())
        bad_key("eval.cutoffs", "expected an array for");
      run.cutoffs.clear();
      for (const auto& v : e["cutoffs"]) {
        const auto k = want_count(v, "eval.cutoffs");
        if (k == 0) bad_key("eval.cutoffs", "invalid value for");
        run.cutoffs.push_back(static_cast<int>(k));
      }
      if (run.cutoffs.empty()) bad_key("eval.cutoffs", "invalid value for");
    }
  }

  if (doc.contains("sweep")) {
    const auto& s = doc["sweep"];
    expect_keys(s, "sweep",
                {"temperature", "kd_weight", "alpha", "embedding_dim"});
    const auto numbers = [&](const char* key, std::vector<double>* out) {
      if (!s.contains(key)) return;
      if (!s[key].is_array())
        bad_key(std::string("sweep.") + key, "expected an array for");
      for (const auto& v : s[key])
        out->push_back(want_number(v, std::string("sweep.") + key));
    };
    numbers("temperature", &run.sweep.temperature);
    numbers("kd_weight", &run.sweep.kd_weight);
    numbers("alpha", &run.sweep.alpha);
    if (s.contains("embedding_dim")) {
      if (!s["embedding_dim"].is_array())
        bad_key("sweep.embedding_dim", "expected an array for");
      for (const auto& v : s["embedding_dim"])
        run.sweep.embedding_dim.push_back(
            want_count(v, "sweep.embedding_dim"));
    }
  }

  // Range validation, naming keys rather than internals.
  try {
    run.model.validate();
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("config: model: " + std::string(e.what()));
  }
  try {
    run.distill.validate();
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("config: " + std::string(e.what()));
  }
  if (run.curriculum.alpha < 0)
    bad_key("curriculum.alpha", "invalid value for");
  if (run.curriculum.num_buckets == 0)
    bad_key("curriculum.num_buckets", "invalid value for");
  if (run.curriculum.epochs_per_stage == 0)
    bad_key("curriculum.epochs_per_stage", "invalid value for");
  if (!(run.optimizer.lr > 0)) bad_key("optimizer.lr", "invalid value for");
  if (run.optimizer.l2 < 0) bad_key("optimizer.l2", "invalid value for");

  // Panel weights: all-or-none, and when present they must make a convex
  // combination (checked to the same tolerance the panel enforces).
  std::size_t weighted = 0;
  double weight_sum = 0.0;
  for (const auto& t : run.teachers)
    if (t.weight >= 0.0) {
      ++weighted;
      weight_sum += t.weight;
    }
  if (weighted != 0 && weighted != run.teachers.size())
    bad_key("teachers", "either all or no teacher weights must be set in");
  if (weighted > 0 && std::abs(weight_sum - 1.0) > 1e-12)
    bad_key("teachers", "teacher weights must sum to 1 in");

  run.synthetic.seed = run.seed;
  return run;
}

}  // namespace

RunConfig parse_config(const std::string& text,
                       const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config: not valid JSON: " +
                             std::string(e.what()));
  }
  return from_json(std::move(doc), overrides);
}

RunConfig load_config(const std::string& path,
                      const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), overrides);
}

}  // namespace ckd
