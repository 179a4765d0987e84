#pragma once

// Flat key=value experiment configuration: parsing, strict schema validation,
// and construction of the tree / spectral model / walk kernel it describes.
//
// Format: one `key = value` pair per line; `#` starts a comment; blank lines
// ignored. Dotted keys form sections (walk.p, lambda.3, levy_F.2:0.1).
// Unknown and duplicate keys are schema errors, so typos fail fast instead of
// silently running a default experiment.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ultra/common.hpp"
#include "ultra/laplacian.hpp"
#include "ultra/spherical.hpp"
#include "ultra/tree.hpp"
#include "ultra/walk.hpp"

namespace ultra {

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    out.push_back(trim(s.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

}  // namespace detail

// Raw key/value table with consumption tracking: every key must be read by
// the schema walk or the config is rejected.
class ConfigTable {
 public:
  std::string raw_text;

  static ConfigTable parse_text(const std::string& text) {
    ConfigTable t;
    t.raw_text = text;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::string s = detail::trim(line);
      if (s.empty()) continue;
      auto eq = s.find('=');
      if (eq == std::string::npos)
        fail_schema("config line " + std::to_string(lineno) + ": expected 'key = value'");
      std::string key = detail::trim(s.substr(0, eq));
      std::string val = detail::trim(s.substr(eq + 1));
      if (key.empty())
        fail_schema("config line " + std::to_string(lineno) + ": empty key");
      if (!t.kv_.emplace(key, val).second) fail_schema("duplicate config key '" + key + "'");
    }
    return t;
  }

  static ConfigTable parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_schema("cannot read config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string raw(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) fail_schema("missing config key '" + key + "'");
    used_.insert(key);
    return it->second;
  }

  std::string get_string(const std::string& key) { return raw(key); }
  std::string get_string(const std::string& key, const std::string& def) {
    return has(key) ? raw(key) : def;
  }

  Rat get_rat(const std::string& key) {
    const std::string s = raw(key);
    try {
      return parse_rat(s);
    } catch (const Error&) {
      fail_schema("config key '" + key + "': expected a rational, got '" + s + "'");
    }
  }

  long get_long(const std::string& key) {
    const std::string s = raw(key);
    try {
      size_t pos = 0;
      long v = std::stol(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing text");
      return v;
    } catch (const std::exception&) {
      fail_schema("config key '" + key + "': expected an integer, got '" + s + "'");
    }
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t def) {
    if (!has(key)) return def;
    const std::string s = raw(key);
    try {
      if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
      size_t pos = 0;
      std::uint64_t v = std::stoull(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing text");
      return v;
    } catch (const std::exception&) {
      fail_schema("config key '" + key + "': expected a nonnegative integer, got '" + s + "'");
    }
  }

  double get_double(const std::string& key, double def) {
    if (!has(key)) return def;
    const std::string s = raw(key);
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing text");
      return v;
    } catch (const std::exception&) {
      fail_schema("config key '" + key + "': expected a number, got '" + s + "'");
    }
  }

  // "a..b" with a <= b; both ends may be negative.
  std::pair<int, int> get_range(const std::string& key) {
    const std::string s = raw(key);
    auto dots = s.find("..");
    if (dots == std::string::npos)
      fail_schema("config key '" + key + "': expected a range 'a..b', got '" + s + "'");
    auto num = [&](const std::string& part) -> int {
      try {
        size_t pos = 0;
        long v = std::stol(part, &pos);
        if (pos != part.size()) throw std::invalid_argument("trailing text");
        return static_cast<int>(v);
      } catch (const std::exception&) {
        fail_schema("config key '" + key + "': bad range endpoint '" + part + "'");
      }
    };
    int a = num(detail::trim(s.substr(0, dots)));
    int b = num(detail::trim(s.substr(dots + 2)));
    if (a > b) fail_schema("config key '" + key + "': range is empty (" + s + ")");
    return {a, b};
  }

  // All keys of the form `prefix<rest>`, as (rest, value); marks them used.
  std::vector<std::pair<std::string, std::string>> entries_with_prefix(const std::string& prefix) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, v] : kv_)
      if (k.size() > prefix.size() && k.compare(0, prefix.size(), prefix) == 0) {
        used_.insert(k);
        out.emplace_back(k.substr(prefix.size()), v);
      }
    return out;
  }

  // Keys `prefix<int>` as (level, value); rejects non-integer suffixes.
  std::vector<std::pair<int, std::string>> level_entries(const std::string& prefix) {
    std::vector<std::pair<int, std::string>> out;
    for (auto& [rest, v] : entries_with_prefix(prefix)) {
      try {
        size_t pos = 0;
        long k = std::stol(rest, &pos);
        if (pos != rest.size()) throw std::invalid_argument("trailing text");
        out.emplace_back(static_cast<int>(k), v);
      } catch (const std::exception&) {
        fail_schema("config key '" + prefix + rest + "': suffix must be a level index");
      }
    }
    return out;
  }

  void require_all_consumed() const {
    for (const auto& [k, v] : kv_)
      if (!used_.count(k)) fail_schema("unknown config key '" + k + "'");
  }

 private:
  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

enum class ModelKind { none, lambda, choice, levy, levy_aniso, stable };

inline WalkKind walk_kind_from_name(const std::string& name) {
  if (name == "ft41") return WalkKind::ft41;
  if (name == "ft43") return WalkKind::ft43;
  if (name == "ft46") return WalkKind::ft46;
  if (name == "ft47") return WalkKind::ft47;
  fail_schema("config key 'walk.kind': expected ft41|ft43|ft46|ft47, got '" + name + "'");
}

struct ExperimentConfig {
  std::string raw_text;  // exact config bytes, hashed into the manifest

  LeveledTreeSpec tree;
  MetricKind metric = MetricKind::exponent;

  ModelKind model_kind = ModelKind::none;
  std::map<int, Rat> lambda_map;                 // model = lambda.*
  std::map<int, Rat> choice_map;                 // model = choice.* (averaging rates)
  LevySequence levy_a;                           // model = levy_a.*
  std::optional<LevyMeasureAnisotropic> levy_F;  // model = levy_F.*
  unsigned stable_p = 0;                         // model = alpha, p
  long stable_alpha = 0;

  std::optional<WalkKind> walk_kind;
  std::optional<Rat> walk_p;
  long walk_alpha = 0;
  std::optional<int> truncation;
  std::uint64_t seed = 0;
  std::uint64_t trajectories = 100000;

  std::string experiment;  // driver selected by `run`
  std::string theorem;     // convergence target: ft41|ft43|ft46|ft47
  Rat t = Rat(1);
  int n_lo = 1, n_hi = 6;
  double tolerance = 1e-3;
  std::optional<int> depth;
  std::optional<int> resolution;
  std::optional<std::string> start;
  std::string out_dir;

  bool has_model() const { return model_kind != ModelKind::none; }

  SpectralModel<Rat> model() const {
    switch (model_kind) {
      case ModelKind::lambda:
        return model_from_eigenvalues<Rat>(tree, lambda_map);
      case ModelKind::choice:
        return model_from_rates<Rat>(tree, choice_map);
      case ModelKind::levy:
        return model_from_levy(tree, levy_a);
      case ModelKind::levy_aniso:
        return model_from_levy(tree, levy_F->derived_scales());
      case ModelKind::stable:
        return stable_model_exact(tree, stable_p, stable_alpha);
      case ModelKind::none:
        break;
    }
    fail_schema("config has no model keys (lambda.* | choice.* | levy_a.* | levy_F.* | alpha,p)");
  }

  LevySequence scales() const {
    switch (model_kind) {
      case ModelKind::levy:
        return levy_a;
      case ModelKind::levy_aniso:
        return levy_F->derived_scales();
      case ModelKind::stable:
        return stable_levy_sequence(tree, stable_p, stable_alpha);
      case ModelKind::lambda:
      case ModelKind::choice:
      case ModelKind::none:
        break;
    }
    // Eigenvalues alone leave the window-bottom scale free, so lambda/choice
    // models cannot name a unique scale sequence.
    fail_schema("a scale sequence requires model keys levy_a.* | levy_F.* | alpha,p");
  }

  WalkKernel kernel() const {
    if (!walk_kind) fail_schema("missing config key 'walk.kind'");
    WalkKernel k = [&]() -> WalkKernel {
      switch (*walk_kind) {
        case WalkKind::ft41:
          if (!walk_p) fail_schema("walk.kind = ft41 requires walk.p");
          return walk_ft41(tree, *walk_p);
        case WalkKind::ft43: {
          long a = walk_alpha != 0 ? walk_alpha : stable_alpha;
          if (a == 0) fail_schema("walk.kind = ft43 requires walk.alpha (or model key alpha)");
          if (tree.degrees.empty()) fail_schema("walk.kind = ft43 requires branching degrees");
          return walk_ft43(tree, tree.degrees.front(), a);
        }
        case WalkKind::ft46:
          return walk_ft46(tree, scales());
        case WalkKind::ft47:
          if (!levy_F) fail_schema("walk.kind = ft47 requires levy_F.* keys");
          return walk_ft47(*levy_F);
      }
      fail_schema("unrecognized walk kind");
    }();
    if (truncation) k = truncate_walk(k, *truncation);
    return k;
  }
};

inline ExperimentConfig build_config(ConfigTable& tab) {
  ExperimentConfig cfg;
  cfg.raw_text = tab.raw_text;

  // Tree.
  const std::string mode = tab.get_string("mode");
  if (mode == "compact")
    cfg.tree.mode = Mode::compact;
  else if (mode == "noncompact")
    cfg.tree.mode = Mode::noncompact;
  else
    fail_schema("config key 'mode': expected compact|noncompact, got '" + mode + "'");

  auto [klo, khi] = tab.get_range("window");
  cfg.tree.k_min = klo;
  cfg.tree.k_max = khi;

  const bool deg_list = tab.has("degrees");
  auto deg_levels = tab.level_entries("degrees.");
  if (deg_list && !deg_levels.empty())
    fail_schema("give 'degrees' as a list or as per-level 'degrees.<k>' keys, not both");
  auto parse_degree = [](const std::string& where, const std::string& s) -> unsigned {
    try {
      size_t pos = 0;
      long v = std::stol(s, &pos);
      if (pos != s.size() || v < 0) throw std::invalid_argument("bad");
      return static_cast<unsigned>(v);
    } catch (const std::exception&) {
      fail_schema("config key '" + where + "': expected a branching degree, got '" + s + "'");
    }
  };
  if (deg_list) {
    for (const std::string& cell : detail::split_list(tab.raw("degrees")))
      cfg.tree.degrees.push_back(parse_degree("degrees", cell));
  } else if (!deg_levels.empty()) {
    std::map<int, unsigned> by_level;
    for (auto& [k, v] : deg_levels)
      if (!by_level.emplace(k, parse_degree("degrees." + std::to_string(k), v)).second)
        fail_schema("duplicate config key 'degrees." + std::to_string(k) + "'");
    for (int k = cfg.tree.k_min; k < cfg.tree.k_max; ++k) {
      auto it = by_level.find(k);
      if (it == by_level.end())
        fail_schema("missing config key 'degrees." + std::to_string(k) + "'");
      cfg.tree.degrees.push_back(it->second);
    }
    if (by_level.size() != static_cast<size_t>(cfg.tree.k_max - cfg.tree.k_min))
      fail_schema("per-level 'degrees.<k>' keys outside the window");
  } else {
    fail_schema("missing config key 'degrees'");
  }

  if (tab.has("metric_base")) cfg.tree.metric_base = tab.get_rat("metric_base");
  if (tab.has("metric")) {
    const std::string m = tab.get_string("metric");
    if (m == "exponent")
      cfg.metric = MetricKind::exponent;
    else if (m == "haar")
      cfg.metric = MetricKind::haar_norm;
    else
      fail_schema("config key 'metric': expected exponent|haar, got '" + m + "'");
  }
  cfg.tree.validate();

  // Model keys: exactly one group may be present.
  auto lam = tab.level_entries("lambda.");
  auto cho = tab.level_entries("choice.");
  auto lev = tab.level_entries("levy_a.");
  auto fent = tab.entries_with_prefix("levy_F.");
  const bool has_stable = tab.has("alpha") || tab.has("p");
  const int groups =
      int(!lam.empty()) + int(!cho.empty()) + int(!lev.empty()) + int(!fent.empty()) + int(has_stable);
  if (groups > 1)
    fail_schema("model keys are mutually exclusive: give one of lambda.* | choice.* | levy_a.* | levy_F.* | alpha,p");

  auto model_rat = [&](const std::string& where, const std::string& s) -> Rat {
    try {
      return parse_rat(s);
    } catch (const Error&) {
      fail_schema("config key '" + where + "': expected a rational, got '" + s + "'");
    }
  };
  if (!lam.empty()) {
    cfg.model_kind = ModelKind::lambda;
    for (auto& [k, v] : lam) cfg.lambda_map[k] = model_rat("lambda." + std::to_string(k), v);
  } else if (!cho.empty()) {
    cfg.model_kind = ModelKind::choice;
    for (auto& [k, v] : cho) cfg.choice_map[k] = model_rat("choice." + std::to_string(k), v);
  } else if (!lev.empty()) {
    cfg.model_kind = ModelKind::levy;
    for (auto& [k, v] : lev) cfg.levy_a.a[k] = model_rat("levy_a." + std::to_string(k), v);
  } else if (!fent.empty()) {
    cfg.model_kind = ModelKind::levy_aniso;
    LevyMeasureAnisotropic F;
    F.tree = cfg.tree;
    bool saw_depth = false;
    for (auto& [rest, v] : fent) {
      if (rest == "depth") {
        F.depth = static_cast<int>(tab.get_long("levy_F.depth"));
        saw_depth = true;
      } else if (rest == "tail") {
        F.tail_above = model_rat("levy_F.tail", v);
      } else {
        F.leaves[parse_vertex(cfg.tree, rest)] = model_rat("levy_F." + rest, v);
      }
    }
    if (!saw_depth) fail_schema("missing config key 'levy_F.depth'");
    F.validate();
    cfg.levy_F = F;
  } else if (has_stable) {
    cfg.model_kind = ModelKind::stable;
    if (!tab.has("alpha") || !tab.has("p"))
      fail_schema("the stable model requires both 'alpha' and 'p'");
    long p = tab.get_long("p");
    if (p < 2) fail_schema("config key 'p': expected an integer >= 2");
    cfg.stable_p = static_cast<unsigned>(p);
    cfg.stable_alpha = tab.get_long("alpha");
    if (cfg.stable_alpha <= 0) fail_schema("config key 'alpha': expected a positive integer");
  }

  // Walk keys.
  if (tab.has("walk.kind")) cfg.walk_kind = walk_kind_from_name(tab.get_string("walk.kind"));
  if (tab.has("walk.p")) cfg.walk_p = tab.get_rat("walk.p");
  if (tab.has("walk.alpha")) cfg.walk_alpha = tab.get_long("walk.alpha");
  if (tab.has("walk.truncation"))
    cfg.truncation = static_cast<int>(tab.get_long("walk.truncation"));
  cfg.seed = tab.get_u64("seed", 0);
  cfg.trajectories = tab.get_u64("trajectories", 100000);

  // Experiment keys.
  cfg.experiment = tab.get_string("experiment", "");
  cfg.theorem = tab.get_string("theorem", "");
  if (!cfg.theorem.empty()) (void)walk_kind_from_name(cfg.theorem);  // same token set
  if (tab.has("t")) {
    cfg.t = tab.get_rat("t");
    if (cfg.t <= 0) fail_schema("config key 't': expected a positive time");
  }
  if (tab.has("n_range")) {
    auto [a, b] = tab.get_range("n_range");
    cfg.n_lo = a;
    cfg.n_hi = b;
  }
  cfg.tolerance = tab.get_double("tolerance", 1e-3);
  if (tab.has("depth")) cfg.depth = static_cast<int>(tab.get_long("depth"));
  if (tab.has("resolution")) cfg.resolution = static_cast<int>(tab.get_long("resolution"));
  if (tab.has("start")) cfg.start = tab.get_string("start");
  cfg.out_dir = tab.get_string("out", "");

  tab.require_all_consumed();

  // Validate whatever model/walk the keys describe before any computation.
  if (cfg.has_model()) (void)cfg.model();
  if (cfg.walk_kind) (void)cfg.kernel();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  ConfigTable tab = ConfigTable::parse_file(path);
  return build_config(tab);
}

}  // namespace ultra
