// ultradiff: configuration-driven front end for diffusion on homogeneous
// ultrametric spaces. Subcommands delegate to the header-only library and
// persist deterministic CSV artifacts plus a JSON manifest; see README.md for
// the config key reference.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ultra/boundary.hpp"
#include "ultra/config.hpp"
#include "ultra/converge.hpp"
#include "ultra/io.hpp"
#include "ultra/ultra.hpp"

namespace {

using namespace ultra;

struct Flags {
  std::string config_path;
  std::string theorem;  // converge positional
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  double tolerance = 0.0;
  bool tolerance_set = false;
  std::string t_override;
  bool svg = false;
};

struct Session {
  ExperimentConfig cfg;
  std::filesystem::path out_dir;
  std::chrono::steady_clock::time_point t0;
  bool svg = false;

  void emit(const std::string& name, const std::string& content) const {
    write_file_atomic(out_dir / name, content);
  }

  void write_manifest() const {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    emit("manifest", manifest_json(hash_hex(cfg.raw_text), cfg.seed, secs));
  }
};

Session open_session(const Flags& f) {
  Session s;
  s.t0 = std::chrono::steady_clock::now();
  s.cfg = load_config(f.config_path);
  if (f.seed_set) s.cfg.seed = f.seed;
  if (f.tolerance_set) s.cfg.tolerance = f.tolerance;
  if (!f.t_override.empty()) {
    s.cfg.t = parse_rat(f.t_override);
    if (s.cfg.t <= 0) fail_schema("--t: expected a positive time");
  }
  s.svg = f.svg;
  std::string out = !f.out.empty() ? f.out : (!s.cfg.out_dir.empty() ? s.cfg.out_dir : "out");
  s.out_dir = out;
  return s;
}

// ---------------------------------------------------------------- tree info

void drive_tree_info(Session& s) {
  const LeveledTreeSpec& spec = s.cfg.tree;
  std::cout << "mode=" << (spec.mode == Mode::compact ? "compact" : "noncompact") << " window=["
            << spec.k_min << "," << spec.k_max << "] metric_base=" << rat_str(spec.metric_base)
            << "\n";
  CsvWriter csv({"level", "degree", "ball_mass", "vertex_count"});
  Int count(1);
  for (int k = spec.k_min; k <= spec.k_max; ++k) {
    const std::string deg = k < spec.k_max ? std::to_string(spec.q(k)) : "";
    csv.row({std::to_string(k), deg, rat_str(spec.m(k)), count.get_str()});
    std::cout << "level " << k << ": degree " << (deg.empty() ? "-" : deg) << " ball_mass "
              << rat_str(spec.m(k)) << " vertices " << count.get_str() << "\n";
    if (k < spec.k_max) count *= spec.q(k);
  }
  s.emit("tree.csv", csv.str());
}

// ----------------------------------------------------------------- spectrum

void drive_spectrum(Session& s) {
  SpectralModel<Rat> model = s.cfg.model();
  CsvWriter csv({"k", "lambda"});
  for (int k = model.tree.k_min; k < model.tree.k_max; ++k) {
    csv.row({std::to_string(k), rat_str(model.eigenvalue(k))});
    std::cout << "k=" << k << " lambda=" << rat_str(model.eigenvalue(k)) << "\n";
  }
  s.emit("spectrum.csv", csv.str());
}

// --------------------------------------------------------------------- heat

void drive_heat(Session& s) {
  SpectralModel<Rat> model = s.cfg.model();
  const LeveledTreeSpec& spec = model.tree;
  const double t = to_double(s.cfg.t);
  HeatDensity d = heat_density(model, t);
  CsvWriter csv({"k", "density"});
  for (int k = spec.k_min; k < spec.k_max; ++k)
    csv.row({std::to_string(k), format_double(d.shell_value.at(k))});
  csv.row({std::to_string(spec.k_max), format_double(d.bottom_value)});
  s.emit("heat.csv", csv.str());

  SphericalMeasure<double> mu = heat_measure(model, t);
  CsvWriter tr({"k", "value"});
  for (int k = spec.k_min + 1; k <= spec.k_max; ++k)
    tr.row({std::to_string(k), format_double(spherical_transform(spec, mu, k))});
  s.emit("transform.csv", tr.str());
  std::cout << "heat density at t=" << format_double(t) << ": window mass "
            << format_double(d.mass) << ", bottom value " << format_double(d.bottom_value)
            << "\n";
}

// --------------------------------------------------------------- walk exact

int default_table_depth(const WalkKernel& K) {
  return std::min(K.bottom_level(), K.tree.k_min + 4);
}

void drive_walk_exact(Session& s) {
  WalkKernel K = s.cfg.kernel();
  const int depth = s.cfg.depth ? *s.cfg.depth : default_table_depth(K);
  PassageTable T = first_passage(K, depth);
  CsvWriter csv({"vertex", "F_up", "F_down", "G_self", "G_to_root"});
  for (const auto& [u, e] : T.at)
    csv.row({format_vertex(u), rat_str(e.f_up), rat_str(e.f_down), rat_str(e.g_self),
             rat_str(e.g_root)});
  s.emit("first_passage.csv", csv.str());
  const VertexAddress root = spine_vertex(K.tree, K.tree.k_min);
  std::cout << walk_kind_name(K.kind) << " first-passage table to depth " << depth << ": "
            << T.at.size() << " vertices, G(o,o)=" << rat_str(T.entry(root).g_self) << "\n";
}

// ------------------------------------------------------------ walk simulate

void drive_walk_simulate(Session& s) {
  WalkKernel K = s.cfg.kernel();
  const LeveledTreeSpec& spec = K.tree;
  const VertexAddress start = s.cfg.start ? parse_vertex(spec, *s.cfg.start)
                                          : spine_vertex(spec, std::max(0, spec.k_min));
  const int res =
      s.cfg.resolution ? *s.cfg.resolution : std::min(K.bottom_level(), spec.k_min + 2);
  if (res <= spec.k_min || res > K.bottom_level())
    fail_schema("resolution outside (k_min, bottom level]");
  PassageTable T = first_passage(K, std::max(res, start.level));

  SimulateOptions opt;
  opt.start = start;
  opt.resolution = res;
  opt.trajectories = s.cfg.trajectories;
  opt.seed = s.cfg.seed;
  SimulateResult r = simulate(K, opt);
  const double N = static_cast<double>(s.cfg.trajectories);

  CsvWriter csv({"vertex", "mass_exact", "mass_mc", "stderr"});
  Rat window_sum(0);
  double worst_z = 0.0;
  auto push = [&](const std::string& name, const Rat& exact, std::uint64_t hits) {
    const double mc = static_cast<double>(hits) / N;
    const double se = std::sqrt(std::max(mc * (1.0 - mc), 0.0) / N);
    csv.row({name, rat_str(exact), format_double(mc), format_double(se)});
    const double diff = std::abs(mc - to_double(exact));
    if (se > 0) worst_z = std::max(worst_z, diff / se);
  };
  for (const VertexAddress& u : enumerate_level(spec, res)) {
    const Rat exact = harmonic_measure(T, start, u);
    window_sum += exact;
    auto it = r.hits.find(u);
    push(format_vertex(u), exact, it == r.hits.end() ? 0 : it->second);
  }
  if (spec.mode == Mode::noncompact) push("escape", Rat(1) - window_sum, r.escaped);
  s.emit("hitting.csv", csv.str());
  std::cout << walk_kind_name(K.kind) << " simulate: " << s.cfg.trajectories
            << " trajectories from " << format_vertex(start) << " at resolution " << res
            << ", seed " << s.cfg.seed << ", worst |z| " << format_double(worst_z) << "\n";
}

// --------------------------------------------------------------------- naim

void drive_naim(Session& s) {
  WalkKernel K = s.cfg.kernel();
  const LeveledTreeSpec& spec = K.tree;
  const int n = s.cfg.depth ? *s.cfg.depth : std::min(K.bottom_level(), spec.k_min + 3);
  PassageTable T = first_passage(K, n);
  const auto cond = conductances(K, n);
  const std::vector<VertexAddress> level_n = enumerate_level(spec, n);

  CsvWriter csv({"function", "network_energy", "boundary_energy"});
  bool all_equal = true;
  for (int lvl = spec.k_min; lvl < n; ++lvl) {
    for (const VertexAddress& v : enumerate_level(spec, lvl)) {
      for (unsigned c = 0; c < spec.q(lvl); ++c) {
        VertexAddress u = v;
        u.level += 1;
        u.digits.push_back(c);
        const std::vector<Rat> vals = generator_pair_function(T, level_n, v, u);
        std::map<VertexAddress, Rat> f;
        for (size_t i = 0; i < level_n.size(); ++i) f[level_n[i]] = vals[i];
        const Rat en = dirichlet_energy(K, n, f);
        const Rat eb = boundary_energy(K, n, f);
        csv.row({"pair_" + format_vertex(u), rat_str(en), rat_str(eb)});
        if (en != eb) all_equal = false;
      }
    }
  }
  s.emit("energy.csv", csv.str());

  // Predicted boundary-generator spectrum: each interior vertex v contributes
  // the eigenvalue 1/G(v,o) with multiplicity q_{level(v)} - 1; constants lie
  // in the kernel.
  std::map<Rat, Int> mult;
  mult[Rat(0)] = 1;
  for (int lvl = spec.k_min; lvl < n; ++lvl)
    for (const VertexAddress& v : enumerate_level(spec, lvl)) {
      const PassageEntry& e = T.entry(v);
      const Rat g_vo = e.g_root;
      mult[Rat(1) / g_vo] += static_cast<long>(spec.q(lvl)) - 1;
    }
  std::cout << "boundary generator at resolution " << n << " (" << level_n.size()
            << " boundary cells), predicted spectrum:\n";
  for (const auto& [lam, m] : mult)
    std::cout << "  eigenvalue " << rat_str(lam) << " multiplicity " << m.get_str() << "\n";

  std::vector<VertexAddress> verts;
  RatMatrix L = boundary_generator(T, cond, n, verts);
  for (size_t i = 0; i < verts.size(); ++i) {
    Rat row_sum(0);
    for (size_t j = 0; j < verts.size(); ++j) row_sum += L.at(i, j);
    if (row_sum != 0) fail_assert("boundary generator row does not annihilate constants");
  }
  std::cout << "Douglas identity rows: " << (all_equal ? "all exact" : "MISMATCH") << "\n";
  if (!all_equal)
    fail_assert("network energy != boundary double sum for some pair function");
}

// ----------------------------------------------------------------- converge

void drive_converge(Session& s, const std::string& thm) {
  const ExperimentConfig& cfg = s.cfg;
  ConvergeReport rep;
  if (thm == "ft41") {
    if (!cfg.walk_p) fail_schema("converge ft41 requires walk.p");
    rep = converge_ft41(cfg.tree, *cfg.walk_p, cfg.t, cfg.n_lo, cfg.n_hi, cfg.tolerance);
  } else if (thm == "ft43") {
    const long a = cfg.walk_alpha != 0 ? cfg.walk_alpha : cfg.stable_alpha;
    if (a == 0) fail_schema("converge ft43 requires walk.alpha (or model key alpha)");
    if (cfg.tree.degrees.empty()) fail_schema("converge ft43 requires branching degrees");
    rep = converge_ft43(cfg.tree, cfg.tree.degrees.front(), a, cfg.t, cfg.n_lo, cfg.n_hi,
                        cfg.tolerance);
  } else if (thm == "ft46") {
    rep = converge_ft46(cfg.tree, cfg.scales(), cfg.t, cfg.n_lo, cfg.n_hi, cfg.tolerance);
  } else if (thm == "ft47") {
    if (!cfg.levy_F) fail_schema("converge ft47 requires levy_F.* keys");
    rep = converge_ft47(*cfg.levy_F, cfg.t, cfg.n_lo, cfg.n_hi, cfg.tolerance);
  } else {
    fail_schema("converge theorem must be ft41|ft43|ft46|ft47, got '" + thm + "'");
  }

  CsvWriter csv({"theorem", "n", "k_or_char", "scaled_power", "target", "abs_error"});
  for (const ConvergeRow& r : rep.rows)
    csv.row({rep.theorem, std::to_string(r.n), std::to_string(r.index), format_double(r.value),
             format_double(r.target), format_double(r.abs_error)});
  s.emit("converge.csv", csv.str());

  if (thm == "ft47") {
    const LevyMeasureAnisotropic& F = *cfg.levy_F;
    const int res = F.depth;
    const Int N = quotient_order(F.tree, res);
    CsvWriter lk({"char_index", "real", "imag"});
    for (Int j(0); j < N; ++j) {
      CharExponent e = lk_exponent_char(F, j, res);
      lk.row({j.get_str(), format_double(e.value.real()), format_double(e.value.imag())});
    }
    s.emit("lk.csv", lk.str());
  }

  if (s.svg) {
    std::vector<std::pair<double, double>> pts;
    for (size_t i = 0; i < rep.levels.size(); ++i)
      pts.emplace_back(static_cast<double>(rep.levels[i]), rep.sup_error[i]);
    s.emit("converge.svg",
           svg_line_chart("sup error vs n (" + rep.theorem + ")", "n", "sup error", pts));
  }

  for (size_t i = 0; i < rep.levels.size(); ++i)
    std::cout << "n=" << rep.levels[i] << " sup_error=" << format_double(rep.sup_error[i])
              << "\n";
  std::cout << "sup error nonincreasing: " << (rep.sup_nonincreasing ? "yes" : "NO")
            << "; final " << format_double(rep.sup_error.empty() ? 0.0 : rep.sup_error.back())
            << " vs tolerance " << format_double(rep.tolerance) << ": "
            << (rep.final_below_tolerance ? "pass" : "FAIL") << "\n";
  if (!rep.sup_nonincreasing)
    fail_assert("sup error failed to decrease along the level sweep for " + rep.theorem);
  if (!rep.final_below_tolerance)
    fail_assert("final sup error " + format_double(rep.sup_error.back()) + " above tolerance " +
                format_double(rep.tolerance) + " for " + rep.theorem);
}

// ------------------------------------------------------------------- stable

void drive_stable(Session& s) {
  const ExperimentConfig& cfg = s.cfg;
  if (cfg.model_kind != ModelKind::stable)
    fail_schema("stable requires the model keys 'alpha' and 'p'");
  const LeveledTreeSpec& spec = cfg.tree;
  const double alpha = static_cast<double>(cfg.stable_alpha);
  const double t = to_double(cfg.t);
  SphericalMeasure<double> mu = drop_limit_measure(spec, cfg.stable_p, alpha, t);
  // Normalization is checked against an independent shell-by-shell summation
  // of the density series well beyond the window, not against the windowed
  // measure's own escape bookkeeping.
  const double mass = drop_series_mass(cfg.stable_p, alpha, t, spec.k_min - 40, spec.k_max + 40);

  const int res = cfg.resolution ? *cfg.resolution : spec.k_max;
  const int min_level = cfg.depth ? *cfg.depth : spec.k_min + 2;
  StableFit fit = check_stable(spec, mu, alpha, res, min_level, cfg.metric);

  CsvWriter tr({"k", "value"});
  for (const StableFitRow& r : fit.rows) tr.row({std::to_string(r.level), format_double(r.mu_hat)});
  s.emit("transform.csv", tr.str());

  std::cout << "stable density p=" << cfg.stable_p << " alpha=" << format_double(alpha)
            << " t=" << format_double(t) << ": series total mass " << format_double(mass)
            << ", window mass " << format_double(mu.window_mass()) << "\n";
  std::cout << "fit mu_hat = exp(-c |xi|^alpha): c=" << format_double(fit.c) << " over "
            << fit.rows.size() << " shells, max rel residual "
            << format_double(fit.max_rel_residual) << "\n";
  if (std::abs(mass - 1.0) > 1e-8)
    fail_assert("limit density mass " + format_double(mass) + " differs from 1 beyond 1e-8");
  if (!(fit.c > 0)) fail_assert("fitted stable exponent constant is not positive");
  if (fit.max_rel_residual > cfg.tolerance)
    fail_assert("stable fit residual " + format_double(fit.max_rel_residual) +
                " above tolerance " + format_double(cfg.tolerance));
}

// ---------------------------------------------------------------------- run

void drive_run(Session& s) {
  const std::string& e = s.cfg.experiment;
  if (e.empty()) fail_schema("`run` needs the config key 'experiment'");
  if (e == "tree_info")
    drive_tree_info(s);
  else if (e == "spectrum")
    drive_spectrum(s);
  else if (e == "heat")
    drive_heat(s);
  else if (e == "walk_exact")
    drive_walk_exact(s);
  else if (e == "walk_simulate")
    drive_walk_simulate(s);
  else if (e == "naim")
    drive_naim(s);
  else if (e == "converge") {
    if (s.cfg.theorem.empty()) fail_schema("experiment=converge needs the config key 'theorem'");
    drive_converge(s, s.cfg.theorem);
  } else if (e == "stable")
    drive_stable(s);
  else
    fail_schema("unknown experiment '" + e +
                "' (tree_info|spectrum|heat|walk_exact|walk_simulate|naim|converge|stable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ultradiff: diffusion on homogeneous ultrametric spaces"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&f](CLI::App* c) {
    c->add_option("config", f.config_path, "experiment config file")->required();
    c->add_option("--seed", f.seed, "override the config seed")
        ->each([&f](const std::string&) { f.seed_set = true; });
    c->add_option("--out", f.out, "output directory (artifact paths are relative to it)");
    c->add_option("--tolerance", f.tolerance, "override the config tolerance")
        ->each([&f](const std::string&) { f.tolerance_set = true; });
    c->add_flag("--svg", f.svg, "also write an SVG chart where supported");
  };

  CLI::App* run = app.add_subcommand("run", "execute the experiment named in the config");
  add_common(run);
  CLI::App* tree = app.add_subcommand("tree", "tree utilities");
  tree->require_subcommand(1);
  CLI::App* tinfo = tree->add_subcommand("info", "window, degrees, ball masses");
  add_common(tinfo);
  CLI::App* spectrum = app.add_subcommand("spectrum", "hierarchical Laplacian eigenvalues");
  add_common(spectrum);
  CLI::App* heat = app.add_subcommand("heat", "radial heat kernel density");
  add_common(heat);
  heat->add_option("--t", f.t_override, "time (rational or scientific)");
  CLI::App* walk = app.add_subcommand("walk", "random-walk tables and simulation");
  walk->require_subcommand(1);
  CLI::App* wexact = walk->add_subcommand("exact", "first-passage and Green table");
  add_common(wexact);
  CLI::App* wsim = walk->add_subcommand("simulate", "Monte Carlo boundary hits vs exact law");
  add_common(wsim);
  CLI::App* naim = app.add_subcommand("naim", "boundary kernel, generator, Douglas energies");
  add_common(naim);
  CLI::App* conv = app.add_subcommand("converge", "transform-space limit theorem sweep");
  conv->add_option("theorem", f.theorem, "ft41|ft43|ft46|ft47")->required();
  add_common(conv);
  conv->add_option("--t", f.t_override, "semigroup time");
  CLI::App* stable = app.add_subcommand("stable", "stable density mass and Fourier fit");
  add_common(stable);
  stable->add_option("--t", f.t_override, "semigroup time");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad usage is a schema problem
  }

  try {
    Session s = open_session(f);
    if (run->parsed())
      drive_run(s);
    else if (tinfo->parsed())
      drive_tree_info(s);
    else if (spectrum->parsed())
      drive_spectrum(s);
    else if (heat->parsed())
      drive_heat(s);
    else if (wexact->parsed())
      drive_walk_exact(s);
    else if (wsim->parsed())
      drive_walk_simulate(s);
    else if (naim->parsed())
      drive_naim(s);
    else if (conv->parsed())
      drive_converge(s, f.theorem);
    else if (stable->parsed())
      drive_stable(s);
    s.write_manifest();
    return 0;
  } catch (const ultra::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.code()) {
      case ultra::Errc::schema:
        return 2;
      case ultra::Errc::cap:
        return 3;
      default:
        return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
