#include <catch2/catch_amalgamated.hpp>

#include <ultra/walk.hpp>

#include <cmath>
#include <map>
#include <vector>

using namespace ultra;

namespace {

LeveledTreeSpec compact_homogeneous(unsigned q, int depth) {
  LeveledTreeSpec spec;
  spec.mode = Mode::compact;
  spec.k_min = 0;
  spec.k_max = depth;
  spec.degrees.assign(static_cast<size_t>(depth), q);
  return spec;
}

LeveledTreeSpec noncompact_homogeneous(unsigned q, int k_min, int k_max) {
  LeveledTreeSpec spec;
  spec.mode = Mode::noncompact;
  spec.k_min = k_min;
  spec.k_max = k_max;
  spec.degrees.assign(static_cast<size_t>(k_max - k_min), q);
  return spec;
}

LeveledTreeSpec noncompact_mixed() {
  LeveledTreeSpec spec;
  spec.mode = Mode::noncompact;
  spec.k_min = -2;
  spec.k_max = 3;
  spec.degrees = {3u, 2u, 2u, 3u, 2u};
  return spec;
}

LevySequence geometric_scales(const LeveledTreeSpec& spec, Rat first, Rat ratio) {
  LevySequence s;
  Rat v = first;
  for (int k = spec.k_min; k <= spec.k_max; ++k) {
    s.a[k] = v;
    v *= ratio;
  }
  return s;
}

// The anisotropic levy measure used across the suite: window [-3,4], degrees
// 2,2,2,2,3,2,2, leaves at mixed depths, two with mass zero.
LevyMeasureAnisotropic aniso_measure() {
  LeveledTreeSpec spec;
  spec.mode = Mode::noncompact;
  spec.k_min = -3;
  spec.k_max = 4;
  spec.degrees = {2u, 2u, 2u, 2u, 3u, 2u, 2u};
  LevyMeasureAnisotropic F;
  F.tree = spec;
  F.depth = 4;
  F.tail_above = Rat(1, 16);
  auto leaf = [&](const char* text, Rat w) { F.leaves[parse_vertex(spec, text)] = w; };
  leaf("-2:1", Rat(1, 8));
  leaf("-1:0.1", Rat(1, 4));
  leaf("0:0.0.1", Rat(1, 2));
  leaf("2:0.0.0.1.0", Rat(3, 2));
  leaf("2:0.0.0.1.1", Rat(1, 2));
  leaf("2:0.0.0.1.2", Rat(0));
  leaf("2:0.0.0.0.1", Rat(5));
  leaf("2:0.0.0.0.2", Rat(0));
  leaf("3:0.0.0.0.0.1", Rat(20));
  leaf("4:0.0.0.0.0.0.1", Rat(80));
  return F;
}

void require_stochastic_rows(const WalkKernel& K, int depth) {
  for (int lvl = K.tree.k_min; lvl <= depth; ++lvl)
    for (const VertexAddress& u : enumerate_level(K.tree, lvl)) {
      if (lvl < K.bottom_level()) {
        Rat total(0);
        for (const Move& m : kernel_row(K, u)) {
          REQUIRE(m.prob >= 0);
          total += m.prob;
        }
        // The window root of a noncompact kernel keeps its upward mass
        // outside the window; everywhere else rows are fully materialized.
        Rat expected = lvl == K.tree.k_min ? Rat(1) - up_probability(K, u) : Rat(1);
        REQUIRE(total == expected);
      } else {
        // At the kernel bottom the down moves dive into virtual subtrees;
        // the up step plus the total dive mass must still fill the row.
        REQUIRE(up_probability(K, u) + down_total(K, u) == Rat(1));
      }
    }
}

}  // namespace

TEST_CASE("kernel constructors validate their preconditions", "[walk]") {
  LeveledTreeSpec compact = compact_homogeneous(2, 4);
  LeveledTreeSpec wide = noncompact_homogeneous(2, -2, 3);

  REQUIRE_THROWS_AS(walk_ft41(wide, Rat(1, 3)), Error);
  REQUIRE_THROWS_AS(walk_ft41(compact, Rat(1, 2)), Error);
  REQUIRE_THROWS_AS(walk_ft41(compact, Rat(0)), Error);
  REQUIRE_NOTHROW(walk_ft41(compact, Rat(1, 3)));

  REQUIRE_THROWS_AS(walk_ft43(compact, 2, 1), Error);
  REQUIRE_THROWS_AS(walk_ft43(noncompact_mixed(), 2, 1), Error);
  REQUIRE_THROWS_AS(walk_ft43(wide, 2, 0), Error);
  REQUIRE_NOTHROW(walk_ft43(wide, 2, 1));

  LevySequence s = geometric_scales(wide, Rat(1, 4), Rat(2));
  REQUIRE_NOTHROW(walk_ft46(wide, s));
  REQUIRE_THROWS_AS(walk_ft46(compact, s), Error);
  LevySequence flat = geometric_scales(wide, Rat(1), Rat(1));
  REQUIRE_THROWS_AS(walk_ft46(wide, flat), Error);

  LevyMeasureAnisotropic F = aniso_measure();
  REQUIRE_NOTHROW(walk_ft47(F));
  LevyMeasureAnisotropic shallow = F;
  shallow.depth = 3;
  for (auto it = shallow.leaves.begin(); it != shallow.leaves.end();)
    if (it->first.level > 3)
      it = shallow.leaves.erase(it);
    else
      ++it;
  shallow.leaves[parse_vertex(F.tree, "3:0.0.0.0.0.1")] = Rat(100);
  REQUIRE_THROWS_AS(walk_ft47(shallow), Error);  // depth must reach the window bottom

  WalkKernel K = walk_ft41(compact, Rat(1, 3));
  REQUIRE_THROWS_AS(truncate_walk(K, 0), Error);
  REQUIRE_THROWS_AS(truncate_walk(K, 5), Error);
  REQUIRE_NOTHROW(truncate_walk(K, 2));
  REQUIRE_THROWS_AS(cut_spine(K, 2), Error);  // spine cuts are for the scale walks
}

TEST_CASE("kernel rows are stochastic for all four kinds", "[walk]") {
  require_stochastic_rows(walk_ft41(compact_homogeneous(3, 3), Rat(2, 7)), 3);
  require_stochastic_rows(walk_ft43(noncompact_homogeneous(2, -2, 3), 2, 1), 2);
  LeveledTreeSpec mixed = noncompact_mixed();
  require_stochastic_rows(walk_ft46(mixed, geometric_scales(mixed, Rat(1, 3), Rat(3))), 2);
  require_stochastic_rows(walk_ft47(aniso_measure()), 3);

  SECTION("truncated rows are forced upward") {
    WalkKernel K = truncate_walk(walk_ft41(compact_homogeneous(2, 4), Rat(1, 3)), 2);
    REQUIRE(K.bottom_level() == 2);
    for (const VertexAddress& u : enumerate_level(K.tree, 2)) {
      REQUIRE(up_probability(K, u) == Rat(1));
      REQUIRE(down_total(K, u) == Rat(0));
      REQUIRE_THROWS_AS(down_moves(K, u), Error);  // nothing materialized below
    }
    require_stochastic_rows(K, 2);
  }

  SECTION("a spine cut removes the downward spine move") {
    LeveledTreeSpec wide = noncompact_homogeneous(2, -2, 3);
    WalkKernel K = cut_spine(walk_ft46(wide, geometric_scales(wide, Rat(1, 4), Rat(2))), 1);
    VertexAddress sp = spine_vertex(wide, 1);
    for (const Move& m : down_moves(K, sp)) REQUIRE_FALSE(is_spine(m.to));
    require_stochastic_rows(K, 2);
  }
}

TEST_CASE("drift walk first-passage table matches hand values", "[walk]") {
  SECTION("binary tree, p = 1/3") {
    WalkKernel K = walk_ft41(compact_homogeneous(2, 6), Rat(1, 3));
    REQUIRE(K.ratio() == Rat(2));
    PassageTable T = first_passage(K, 3);
    VertexAddress o = root_vertex(K.tree);
    VertexAddress v = child(K.tree, o, 0u);
    // Upward first passage is p/(1-p) = 1/2 at every non-root vertex.
    for (int lvl = 1; lvl <= 3; ++lvl)
      for (const VertexAddress& u : enumerate_level(K.tree, lvl))
        REQUIRE(T.entry(u).f_up == Rat(1, 2));
    // Downward first passage from the root to a fixed child: 2/3.
    REQUIRE(T.entry(v).f_down == Rat(2, 3));
    // Green values: G(o,o) = 2, G(v,v) = 9/4, G(v,o) = 2^{1-k}.
    REQUIRE(T.entry(o).g_self == Rat(2));
    REQUIRE(T.entry(o).g_root == Rat(2));
    REQUIRE(T.entry(v).g_self == Rat(9, 4));
    for (int lvl = 1; lvl <= 3; ++lvl)
      for (const VertexAddress& u : enumerate_level(K.tree, lvl)) {
        REQUIRE(T.entry(u).g_root == drift_green_root(K.ratio(), lvl));
        REQUIRE(green_between(T, u, o) == T.entry(u).g_root);
      }
    // G(o,v) = F(o -> v) g(v,v) = (2/3)(9/4) = 3/2.
    REQUIRE(green_between(T, o, v) == Rat(3, 2));
  }

  SECTION("ternary tree, p = 1/4") {
    WalkKernel K = walk_ft41(compact_homogeneous(3, 4), Rat(1, 4));
    REQUIRE(K.ratio() == Rat(3));
    PassageTable T = first_passage(K, 2);
    VertexAddress o = root_vertex(K.tree);
    VertexAddress v = child(K.tree, o, 2u);
    REQUIRE(T.entry(v).f_up == Rat(1, 3));
    REQUIRE(T.entry(v).f_down == Rat(3, 7));
    REQUIRE(T.entry(o).g_self == Rat(3, 2));
    REQUIRE(T.entry(v).g_self == Rat(14, 9));
    REQUIRE(green_between(T, v, o) == Rat(1, 2));
    REQUIRE(T.entry(v).g_root == drift_green_root(Rat(3), 1));
  }
}

TEST_CASE("passage tables are independent of the tabulated depth", "[walk]") {
  struct Probe {
    WalkKernel K;
    int shallow;
  };
  LeveledTreeSpec mixed = noncompact_mixed();
  std::vector<Probe> probes;
  probes.push_back({walk_ft41(compact_homogeneous(2, 5), Rat(2, 5)), 2});
  probes.push_back({walk_ft43(noncompact_homogeneous(2, -2, 4), 2, 2), 2});
  probes.push_back({walk_ft46(mixed, geometric_scales(mixed, Rat(1, 5), Rat(2))), 1});
  probes.push_back({walk_ft47(aniso_measure()), 2});
  for (const Probe& probe : probes) {
    PassageTable a = first_passage(probe.K, probe.shallow);
    PassageTable b = first_passage(probe.K, probe.shallow + 1);
    for (const auto& [u, e] : a.at) {
      const PassageEntry& f = b.entry(u);
      REQUIRE(e.f_up == f.f_up);
      REQUIRE(e.f_down == f.f_down);
      REQUIRE(e.g_self == f.g_self);
      REQUIRE(e.g_root == f.g_root);
    }
  }
}

TEST_CASE("drift hitting law: closed form equals the absorbing-chain solve", "[walk]") {
  struct Probe {
    unsigned q;
    Rat p;
  };
  for (const Probe& probe : {Probe{2u, Rat(1, 3)}, Probe{3u, Rat(2, 5)}}) {
    WalkKernel K = walk_ft41(compact_homogeneous(probe.q, 4), probe.p);
    for (int n = 1; n <= 3; ++n) {
      VertexAddress start = spine_vertex(K.tree, n);
      std::map<VertexAddress, Rat> solved = drift_hitting_solve(K, n, start);
      SphericalMeasure<Rat> law = drift_hitting_law(K, n);

      // Exact probability distribution over the sphere.
      Rat total(0);
      for (const auto& [x, w] : solved) total += w;
      REQUIRE(total == Rat(1));
      REQUIRE(law.total() == Rat(1));

      // Group the solved masses by confluent level with the start.
      std::map<int, Rat> shells;
      Rat atom(0);
      for (const auto& [x, w] : solved) {
        if (x == start)
          atom += w;
        else
          shells[confluent(K.tree, start, x).level] += w;
      }
      REQUIRE(atom == law.atom);
      for (int lvl = 0; lvl < n; ++lvl) {
        Rat expected = law.shells.count(lvl) ? law.shells.at(lvl) : Rat(0);
        Rat got = shells.count(lvl) ? shells.at(lvl) : Rat(0);
        REQUIRE(got == expected);
      }

      // Transform of the law agrees with the closed form at every index.
      for (int k = 0; k <= n; ++k)
        REQUIRE(spherical_transform(K.tree, law, k) == drift_transform(K.ratio(), n, k));
    }
  }
}

TEST_CASE("drop walk structure", "[walk]") {
  WalkKernel K = walk_ft43(noncompact_homogeneous(2, -3, 3), 2, 1);
  REQUIRE(K.drop == Rat(2));

  SECTION("constant upward rate 1/(1+s) and first passage 1/2") {
    PassageTable T = first_passage(K, 2);
    for (int lvl = K.tree.k_min; lvl <= 2; ++lvl)
      for (const VertexAddress& u : enumerate_level(K.tree, lvl)) {
        if (lvl > K.tree.k_min) REQUIRE(up_probability(K, u) == Rat(1, 3));
        if (lvl > K.tree.k_min) REQUIRE(T.entry(u).f_up == Rat(1, 2));
      }
  }

  SECTION("ball masses plus the upward escape account for everything") {
    PassageTable T = first_passage(K, 2);
    VertexAddress root = root_vertex(K.tree);
    for (const VertexAddress& start :
         {spine_vertex(K.tree, 0), parse_vertex(K.tree, "1:0.1.0.1"), root}) {
      // In the windowed reading, stepping up from the window root escapes for
      // good; each visit to the root escapes with its upward rate.
      Rat escape = green_between(T, start, root) * up_probability(K, root);
      for (int res = K.tree.k_min + 1; res <= 2; ++res) {
        Rat total(0);
        for (const VertexAddress& u : enumerate_level(K.tree, res))
          total += harmonic_measure(T, start, u);
        REQUIRE(total + escape == Rat(1));
      }
    }
  }
}

TEST_CASE("harmonic measure: drift walk from the root is uniform", "[walk]") {
  WalkKernel K = walk_ft41(compact_homogeneous(2, 5), Rat(1, 3));
  PassageTable T = first_passage(K, 3);
  for (int res = 1; res <= 3; ++res)
    for (const VertexAddress& u : enumerate_level(K.tree, res))
      REQUIRE(harmonic_measure(T, u) == K.tree.m(res));

  SECTION("coarsening: ball masses sum over children") {
    VertexAddress start = parse_vertex(K.tree, "3:1.0.1");
    for (int res = 1; res < 3; ++res)
      for (const VertexAddress& u : enumerate_level(K.tree, res)) {
        Rat kids(0);
        for (unsigned d = 0; d < K.tree.q(res); ++d)
          kids += harmonic_measure(T, start, child(K.tree, u, d));
        REQUIRE(kids == harmonic_measure(T, start, u));
      }
  }

  SECTION("an off-center start weights its own branch") {
    VertexAddress start = parse_vertex(K.tree, "2:1.1");
    Rat own = harmonic_measure(T, start, parse_vertex(K.tree, "1:1"));
    Rat other = harmonic_measure(T, start, parse_vertex(K.tree, "1:0"));
    REQUIRE(own + other == Rat(1));
    REQUIRE(own > other);
  }
}

TEST_CASE("radial scale walk limit law: three exact routes agree", "[walk]") {
  LeveledTreeSpec mixed = noncompact_mixed();
  LevySequence s = geometric_scales(mixed, Rat(2, 7), Rat(3));
  WalkKernel K = walk_ft46(mixed, s);
  for (int n : {1, 2}) {
    SphericalMeasure<Rat> closed = limit_distribution_ft46(K, n);
    REQUIRE(closed.total() == Rat(1));
    REQUIRE(closed.atom == Rat(0));

    BoundaryLaw per_ball = radial_law_per_ball(mixed, closed, n);
    BoundaryLaw solved = last_exit_solve(K, n);
    REQUIRE(solved.total() == Rat(1));
    REQUIRE(solved.spine == Rat(0));
    REQUIRE(solved.escape == closed.escape);
    for (const auto& [u, w] : per_ball.ball) REQUIRE(solved.ball.at(u) == w);

    PassageTable T = first_passage(K, n);
    VertexAddress start = spine_vertex(mixed, n - 1);
    for (const auto& [u, w] : solved.ball)
      REQUIRE(harmonic_measure(T, start, u) == w);

    for (int k = mixed.k_min + 1; k <= n; ++k) {
      Rat st = scale_transform(mixed, s, n, k);
      REQUIRE(st == spherical_transform(mixed, closed, k));
      Rat mag = st < 0 ? Rat(-st) : st;
      REQUIRE(mag <= Rat(1));
    }
  }
}

TEST_CASE("anisotropic walk limit law: per-ball masses solve exactly", "[walk]") {
  LevyMeasureAnisotropic F = aniso_measure();
  WalkKernel K = walk_ft47(F);
  for (int n : {2, 3}) {
    BoundaryLaw closed = limit_distribution_ft47(K, n);
    BoundaryLaw solved = last_exit_solve(K, n);
    REQUIRE(closed.total() == Rat(1));
    REQUIRE(solved.total() == Rat(1));
    REQUIRE(solved.escape == closed.escape);
    for (const auto& [u, w] : closed.ball) REQUIRE(solved.ball.at(u) == w);

    PassageTable T = first_passage(K, n);
    VertexAddress start = spine_vertex(F.tree, n - 1);
    for (const auto& [u, w] : closed.ball)
      REQUIRE(harmonic_measure(T, start, u) == w);
  }

  SECTION("zero-mass balls carry zero limit mass") {
    BoundaryLaw law = limit_distribution_ft47(K, 2);
    REQUIRE(law.ball.at(parse_vertex(F.tree, "2:0.0.0.1.2")) == Rat(0));
    REQUIRE(law.ball.at(parse_vertex(F.tree, "2:0.0.0.0.2")) == Rat(0));
    REQUIRE(law.ball.at(parse_vertex(F.tree, "2:0.0.0.0.1")) == Rat(5) / K.scales.at(2));
  }

  SECTION("a radial levy measure degenerates to the radial walk, ball for ball") {
    LeveledTreeSpec mixed = noncompact_mixed();
    LevySequence s = geometric_scales(mixed, Rat(1, 2), Rat(2));
    WalkKernel radial = walk_ft46(mixed, s);
    WalkKernel aniso = walk_ft47(spherical_levy_measure(mixed, s, mixed.k_max));
    for (int n : {1, 2}) {
      BoundaryLaw a = limit_distribution_ft47(aniso, n);
      BoundaryLaw b = radial_law_per_ball(mixed, limit_distribution_ft46(radial, n), n);
      REQUIRE(a.escape == b.escape);
      for (const auto& [u, w] : b.ball) REQUIRE(a.ball.at(u) == w);
    }
    // The kernels themselves agree move for move.
    for (int lvl = mixed.k_min; lvl <= 2; ++lvl)
      for (const VertexAddress& u : enumerate_level(mixed, lvl)) {
        REQUIRE(up_probability(radial, u) == up_probability(aniso, u));
        std::vector<Move> mr = down_moves(radial, u);
        std::vector<Move> ma = down_moves(aniso, u);
        REQUIRE(mr.size() == ma.size());
        for (size_t i = 0; i < mr.size(); ++i) {
          REQUIRE(mr[i].to == ma[i].to);
          REQUIRE(mr[i].prob == ma[i].prob);
        }
      }
  }
}

TEST_CASE("conductances are positive on transient kernels", "[walk]") {
  WalkKernel K = walk_ft41(compact_homogeneous(2, 4), Rat(1, 3));
  std::map<VertexAddress, Rat> c = conductances(K, 3);
  REQUIRE_FALSE(c.empty());
  for (const auto& [u, value] : c) REQUIRE(value > 0);
}

TEST_CASE("monte carlo agrees with the exact laws", "[walk]") {
  SECTION("drift walk, binary tree") {
    WalkKernel K = walk_ft41(compact_homogeneous(2, 4), Rat(1, 3));
    PassageTable T = first_passage(K, 2);
    SimulateOptions opt;
    opt.start = root_vertex(K.tree);
    opt.resolution = 2;
    opt.trajectories = 20000;
    opt.seed = 42;
    SimulateResult r = simulate(K, opt);
    REQUIRE(r.escaped == 0);
    std::uint64_t total = 0;
    for (const auto& [u, n] : r.hits) total += n;
    REQUIRE(total == opt.trajectories);
    for (const VertexAddress& u : enumerate_level(K.tree, 2)) {
      double p = to_double(harmonic_measure(T, opt.start, u));
      double mean = static_cast<double>(opt.trajectories) * p;
      double sd = std::sqrt(mean * (1.0 - p));
      std::uint64_t hits = r.hits.count(u) ? r.hits.at(u) : 0;
      REQUIRE(std::abs(static_cast<double>(hits) - mean) <= 4.0 * sd);
    }
  }

  SECTION("anisotropic walk with escape mass") {
    WalkKernel K = walk_ft47(aniso_measure());
    BoundaryLaw law = limit_distribution_ft47(K, 2);
    SimulateOptions opt;
    opt.start = spine_vertex(K.tree, 1);
    opt.resolution = 2;
    opt.trajectories = 20000;
    opt.seed = 7;
    SimulateResult r = simulate(K, opt);
    double pe = to_double(law.escape);
    double mean = static_cast<double>(opt.trajectories) * pe;
    REQUIRE(std::abs(static_cast<double>(r.escaped) - mean) <=
            4.0 * std::sqrt(mean * (1.0 - pe)));
    for (const auto& [u, w] : law.ball) {
      double p = to_double(w);
      double m = static_cast<double>(opt.trajectories) * p;
      double sd = std::sqrt(m * (1.0 - p) + 1e-12);
      std::uint64_t hits = r.hits.count(u) ? r.hits.at(u) : 0;
      REQUIRE(std::abs(static_cast<double>(hits) - m) <= 4.0 * sd + 1e-9);
    }
  }

  SECTION("identical seeds reproduce identical counts") {
    WalkKernel K = walk_ft41(compact_homogeneous(2, 4), Rat(1, 3));
    SimulateOptions opt;
    opt.start = root_vertex(K.tree);
    opt.resolution = 2;
    opt.trajectories = 5000;
    opt.seed = 99;
    SimulateResult a = simulate(K, opt);
    SimulateResult b = simulate(K, opt);
    REQUIRE(a.hits == b.hits);
    REQUIRE(a.interior_steps == b.interior_steps);
    opt.seed = 100;
    SimulateResult c = simulate(K, opt);
    REQUIRE(a.hits != c.hits);
  }
}
