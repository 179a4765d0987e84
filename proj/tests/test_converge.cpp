#include <catch2/catch_amalgamated.hpp>

#include <ultra/converge.hpp>

#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <random>
#include <vector>

using namespace ultra;
using Catch::Approx;
using Catch::Matchers::Message;

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

// Rows of a report restricted to one approximation level n.
std::vector<ConvergeRow> rows_at(const ConvergeReport& rep, int n) {
  std::vector<ConvergeRow> out;
  for (const ConvergeRow& row : rep.rows)
    if (row.n == n) out.push_back(row);
  return out;
}

}  // namespace

TEST_CASE("integer powering helpers behave on corner cases", "[converge]") {
  CHECK(floor_product(Rat(3, 2), Rat(7, 3)) == 3);  // floor(7/2)
  CHECK(floor_product(Rat(1), Rat(5)) == 5);
  CHECK(floor_product(Rat(2, 3), Rat(1, 2)) == 0);
  CHECK(real_power(-2.0, Int(3)) == Approx(-8.0));
  CHECK(real_power(-2.0, Int(4)) == Approx(16.0));
  CHECK(real_power(0.5, Int(10)) == Approx(std::pow(0.5, 10)));
  CHECK(real_power(0.0, Int(3)) == 0.0);
}

TEST_CASE("drift report: structure, targets, and monotone approach", "[converge]") {
  LeveledTreeSpec spec = compact_homogeneous(2, 6);
  ConvergeReport rep = converge_ft41(spec, Rat(1, 3), Rat(1), 1, 6, 2e-2);

  CHECK(rep.theorem == "FT41");
  CHECK(rep.t == Approx(1.0));
  CHECK(rep.tolerance == Approx(2e-2));
  REQUIRE(rep.levels == std::vector<int>{1, 2, 3, 4, 5, 6});
  // Level n contributes one row per transform index 1..n.
  REQUIRE(rep.rows.size() == 21);
  REQUIRE(rep.sup_error.size() == 6);

  for (const ConvergeRow& row : rep.rows) {
    CHECK_FALSE(row.is_char);
    CHECK(row.index >= 1);
    CHECK(row.index <= row.n);
    // Semigroup target e^{-t r^{k-1}} with ratio r = (1-p)/p = 2.
    CHECK(row.target == Approx(std::exp(-std::pow(2.0, static_cast<double>(row.index - 1))))
                            .epsilon(1e-12));
    CHECK(row.abs_error == Approx(std::abs(row.value - row.target)).margin(1e-15));
  }

  // Sup column matches its rows and the approach is monotone.
  for (size_t i = 0; i < rep.levels.size(); ++i) {
    double sup = 0.0;
    for (const ConvergeRow& row : rows_at(rep, rep.levels[i]))
      sup = std::max(sup, row.abs_error);
    CHECK(rep.sup_error[i] == Approx(sup).margin(1e-15));
  }
  CHECK(rep.sup_nonincreasing);
  CHECK(rep.monotone_from_below);
  CHECK(rep.final_below_tolerance);
  CHECK(rep.sup_error.back() > 1e-3);
  CHECK(rep.sup_error.back() < 2e-2);
  CHECK(rep.sup_error.front() > 0.3);  // level 1 is still far from the semigroup

  // The coarsest transform row climbs toward e^{-t} from below.
  double prev = -1.0;
  for (int n = 1; n <= 6; ++n)
    for (const ConvergeRow& row : rows_at(rep, n))
      if (row.index == 1) {
        CHECK(row.value <= std::exp(-1.0) + 1e-12);
        CHECK(row.value >= prev - 1e-12);
        prev = row.value;
      }

  // Independent recomputation of one row from the frozen closed forms.
  std::vector<ConvergeRow> n3 = rows_at(rep, 3);
  REQUIRE(drift_scale(Rat(2), 3) == Rat(7));
  REQUIRE(drift_transform(Rat(2), 3, 2) == Rat(2, 3));
  CHECK(n3.at(1).value == Approx(std::pow(2.0 / 3.0, 7)).epsilon(1e-12));
}

TEST_CASE("drift report rejects bad inputs", "[converge]") {
  LeveledTreeSpec spec = compact_homogeneous(2, 4);
  CHECK_THROWS_MATCHES(converge_ft41(noncompact_mixed(), Rat(1, 3), Rat(1), 1, 2, 1e-2), Error,
                       Message("the drift theorem runs on a compact tree"));
  CHECK_THROWS_MATCHES(converge_ft41(spec, Rat(1, 2), Rat(1), 1, 2, 1e-2), Error,
                       Message("drift walk needs 0 < p < 1/2"));
  CHECK_THROWS_MATCHES(converge_ft41(spec, Rat(1, 3), Rat(1), 0, 2, 1e-2), Error,
                       Message("level range outside [1, k_max]"));
  CHECK_THROWS_MATCHES(converge_ft41(spec, Rat(1, 3), Rat(1), 1, 5, 1e-2), Error,
                       Message("level range outside [1, k_max]"));
  CHECK_THROWS_MATCHES(converge_ft41(spec, Rat(1, 3), Rat(1), 3, 2, 1e-2), Error,
                       Message("level range outside [1, k_max]"));
}

TEST_CASE("drift report matches Monte Carlo sums of hitting draws", "[converge][mc]") {
  // Independent probabilistic route to the powered-transform column: draw
  // i.i.d. samples from the sphere-3 hitting law, add them in the quotient
  // group, and compare empirical characters of the sum with the report.
  LeveledTreeSpec spec = compact_homogeneous(2, 3);
  WalkKernel K = walk_ft41(spec, Rat(1, 3));
  SphericalMeasure<Rat> law = drift_hitting_law(K, 3);
  REQUIRE(law.total() == Rat(1));

  // Class masses by confluent level with the all-zero start vertex, and the
  // coset ranks each class occupies (rank digit at k_min is least significant).
  const double w0 = to_double(law.shells.at(0));
  const double w1 = to_double(law.shells.at(1));
  const double w2 = to_double(law.shells.at(2));
  REQUIRE(w0 + w1 + w2 + to_double(law.atom) == Approx(1.0).epsilon(1e-14));

  Int power = floor_product(Rat(1), drift_scale(Rat(2), 3));
  REQUIRE(power == 7);

  std::mt19937_64 rng(20240817u);
  auto uniform01 = [&]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  const long trials = 40000;
  std::complex<double> sum_j1, sum_j2, sum_j4;
  const double tau = 2.0 * std::numbers::pi / 8.0;
  for (long trial = 0; trial < trials; ++trial) {
    unsigned long s = 0;
    for (long step = 0; step < 7; ++step) {
      double x = uniform01();
      unsigned long rank;
      if (x < w0)
        rank = 1 + 2 * (rng() & 3);  // confluent level 0: odd ranks
      else if (x < w0 + w1)
        rank = 2 + 4 * (rng() & 1);  // confluent level 1: ranks 2, 6
      else if (x < w0 + w1 + w2)
        rank = 4;  // confluent level 2
      else
        rank = 0;  // returned to the start coset
      s = (s + rank) % 8;
    }
    sum_j1 += std::complex<double>(std::cos(tau * static_cast<double>(s)),
                                   std::sin(tau * static_cast<double>(s)));
    sum_j2 += std::complex<double>(std::cos(tau * static_cast<double>(2 * s % 8)),
                                   std::sin(tau * static_cast<double>(2 * s % 8)));
    sum_j4 += std::complex<double>(std::cos(tau * static_cast<double>(4 * s % 8)),
                                   std::sin(tau * static_cast<double>(4 * s % 8)));
  }
  std::complex<double> emp_j1 = sum_j1 / static_cast<double>(trials);
  std::complex<double> emp_j2 = sum_j2 / static_cast<double>(trials);
  std::complex<double> emp_j4 = sum_j4 / static_cast<double>(trials);

  // chi_4 has character level 1, chi_2 level 2, chi_1 level 3.
  REQUIRE(character_level(spec, Int(4), 3) == 1);
  REQUIRE(character_level(spec, Int(2), 3) == 2);
  REQUIRE(character_level(spec, Int(1), 3) == 3);
  double exact1 = real_power(to_double(drift_transform(Rat(2), 3, 1)), power);
  double exact2 = real_power(to_double(drift_transform(Rat(2), 3, 2)), power);
  double exact3 = real_power(to_double(drift_transform(Rat(2), 3, 3)), power);
  const double bound = 0.035;  // 4.5 sigma on each component at 40000 trials
  CHECK(std::abs(emp_j4 - exact1) < bound);
  CHECK(std::abs(emp_j2 - exact2) < bound);
  CHECK(std::abs(emp_j1 - exact3) < bound);

  // The same empirical means sit within Monte Carlo range of the report rows.
  ConvergeReport rep = converge_ft41(spec, Rat(1, 3), Rat(1), 3, 3, 1.0);
  std::vector<ConvergeRow> n3 = rows_at(rep, 3);
  REQUIRE(n3.size() == 3);
  CHECK(n3.at(0).value == Approx(exact1).epsilon(1e-12));
  CHECK(std::abs(emp_j4 - n3.at(0).value) < bound);
  CHECK(std::abs(emp_j2 - n3.at(1).value) < bound);
}

TEST_CASE("drop report approaches the stable semigroup", "[converge]") {
  LeveledTreeSpec spec = noncompact_homogeneous(2, -4, 4);
  ConvergeReport rep = converge_ft43(spec, 2, 1, Rat(1), 1, 4, 5e-2);

  CHECK(rep.theorem == "FT43");
  REQUIRE(rep.levels == std::vector<int>{1, 2, 3, 4});
  // Level n holds rows for every transform index in [k_min+1, n].
  REQUIRE(rep.rows.size() == 26);
  CHECK(rep.rows.front().index == spec.k_min + 1);

  for (const ConvergeRow& row : rep.rows) {
    CHECK_FALSE(row.is_char);
    CHECK(row.index >= spec.k_min + 1);
    CHECK(row.index <= row.n);
    CHECK(row.target ==
          Approx(std::exp(-std::pow(2.0, static_cast<double>(row.index)))).epsilon(1e-12));
  }
  CHECK(rep.sup_nonincreasing);
  CHECK(rep.final_below_tolerance);
  CHECK(rep.sup_error.back() > 5e-3);
  CHECK(rep.sup_error.back() < 5e-2);
  for (size_t i = 1; i < rep.sup_error.size(); ++i)
    CHECK(rep.sup_error[i] < 0.75 * rep.sup_error[i - 1]);

  // One row recomputed from the frozen closed forms.
  WalkKernel K = walk_ft43(spec, 2, 1);
  REQUIRE(drop_transform(K, 2, 0) == Rat(6, 7));
  REQUIRE(drop_scale(K, 2) == Rat(8));
  std::vector<ConvergeRow> n2 = rows_at(rep, 2);
  REQUIRE(n2.size() == 6);
  CHECK(n2.at(3).index == 0);
  CHECK(n2.at(3).value == Approx(std::pow(6.0 / 7.0, 8)).epsilon(1e-12));

  CHECK_THROWS_MATCHES(converge_ft43(spec, 2, 1, Rat(1), -4, 2, 1e-2), Error,
                       Message("level range outside window"));
  CHECK_THROWS_MATCHES(converge_ft43(spec, 2, 1, Rat(1), 1, 5, 1e-2), Error,
                       Message("level range outside window"));
  CHECK_THROWS(converge_ft43(compact_homogeneous(2, 3), 2, 1, Rat(1), 1, 2, 1e-2));
  CHECK_THROWS(converge_ft43(noncompact_mixed(), 3, 1, Rat(1), 1, 2, 1e-2));
}

TEST_CASE("radial scale report approaches its semigroup", "[converge]") {
  LeveledTreeSpec spec = noncompact_homogeneous(3, -2, 3);
  LevySequence scales = geometric_scales(spec, Rat(1, 9), Rat(3));  // a_k = 3^k
  ConvergeReport rep = converge_ft46(spec, scales, Rat(1), 1, 3, 2e-2);

  CHECK(rep.theorem == "FT46");
  REQUIRE(rep.levels == std::vector<int>{1, 2, 3});
  REQUIRE(rep.rows.size() == 3 + 4 + 5);

  // The attached spectrum is lambda_k = (q a_{k+1} - a_k)/(q-1) = 4 * 3^k.
  std::map<int, Rat> lambda = levy_to_eigenvalues(spec, scales);
  for (int k = spec.k_min; k < spec.k_max; ++k)
    REQUIRE(lambda.at(k) == Rat(4) * rat_pow(Rat(3), k));
  for (const ConvergeRow& row : rep.rows) {
    CHECK(row.target ==
          Approx(std::exp(-to_double(lambda.at(row.index - 1)))).epsilon(1e-12));
    CHECK(row.abs_error == Approx(std::abs(row.value - row.target)).margin(1e-15));
  }
  CHECK(rep.sup_nonincreasing);
  CHECK(rep.final_below_tolerance);
  CHECK(rep.sup_error.back() > 1e-3);
  CHECK(rep.sup_error.back() < 2e-2);

  // The deepest row runs through a negative transform value; real powering
  // must keep its sign.
  REQUIRE(scale_transform(spec, scales, 3, 3) == Rat(-1, 3));
  std::vector<ConvergeRow> n3 = rows_at(rep, 3);
  CHECK(n3.back().index == 3);
  CHECK(n3.back().value == Approx(-std::pow(1.0 / 3.0, 27)).epsilon(1e-12));

  CHECK_THROWS_MATCHES(converge_ft46(spec, scales, Rat(1), -2, 2, 1e-2), Error,
                       Message("level range outside window"));
  CHECK_THROWS_MATCHES(converge_ft46(spec, scales, Rat(1), 1, 4, 1e-2), Error,
                       Message("level range outside window"));
  LevySequence bad = scales;
  bad.a[2] = bad.a[1] / 2;  // decreasing
  CHECK_THROWS_MATCHES(converge_ft46(spec, bad, Rat(1), 1, 3, 1e-2), Error,
                       Message("scale sequence must be nondecreasing"));
  LevySequence negative = scales;
  negative.a[spec.k_min] = Rat(-1);
  CHECK_THROWS_MATCHES(converge_ft46(spec, negative, Rat(1), 1, 3, 1e-2), Error,
                       Message("scale sequence must be positive"));
  LeveledTreeSpec compact = compact_homogeneous(3, 3);
  CHECK_THROWS(converge_ft46(compact, geometric_scales(compact, Rat(1), Rat(3)), Rat(1), 1, 3,
                             1e-2));
}

TEST_CASE("anisotropic character report approaches the jump semigroup", "[converge]") {
  LevyMeasureAnisotropic F = aniso_measure();
  const LeveledTreeSpec& spec = F.tree;
  ConvergeReport rep = converge_ft47(F, Rat(1), 1, 2, 0.5);

  CHECK(rep.theorem == "FT47");
  REQUIRE(rep.levels == std::vector<int>{1, 2});
  // One row per character of the quotient: 16 at level 1, 48 at level 2.
  REQUIRE(quotient_order(spec, 1) == 16);
  REQUIRE(quotient_order(spec, 2) == 48);
  REQUIRE(rep.rows.size() == 64);

  for (const ConvergeRow& row : rep.rows) {
    CHECK(row.is_char);
    CHECK(row.abs_error >= std::abs(row.value - row.target) - 1e-15);
  }
  // The trivial character is exact at every level.
  for (int n : {1, 2}) {
    ConvergeRow zero = rows_at(rep, n).front();
    REQUIRE(zero.index == 0);
    CHECK(zero.value == Approx(1.0).margin(1e-15));
    CHECK(zero.target == Approx(1.0).margin(1e-15));
    CHECK(zero.abs_error < 1e-15);
  }
  CHECK(rep.sup_error.at(1) < rep.sup_error.at(0));
  CHECK(rep.final_below_tolerance);

  // Targets are the moduli of the semigroup values e^{-t LK(chi)}.
  for (long j : {1L, 5L, 17L, 40L}) {
    CharExponent ce = lk_exponent_char(F, Int(j), 2);
    const ConvergeRow& row = rows_at(rep, 2).at(static_cast<size_t>(j));
    REQUIRE(row.index == j);
    CHECK(row.target == Approx(std::exp(-ce.value.real())).epsilon(1e-12));
  }

  // Against the spherically symmetric measure with the same derived scales,
  // the level-2 character carries a real exponent tied to the spectrum:
  // LK(chi) + dropped tail = lambda_1.
  LevySequence scales = F.derived_scales();
  LevyMeasureAnisotropic F_rad = spherical_levy_measure(spec, scales, F.depth);
  std::map<int, Rat> lambda = levy_to_eigenvalues(spec, scales);
  REQUIRE(character_level(spec, Int(1), 2) == 2);
  CharExponent radial = lk_exponent_char(F_rad, Int(1), 2);
  CHECK(std::abs(radial.value.imag()) < 1e-12);
  CHECK(radial.value.real() + radial.dropped_tail ==
        Approx(to_double(lambda.at(1))).epsilon(1e-12));

  CHECK_THROWS_MATCHES(converge_ft47(F, Rat(1), -3, 2, 0.5), Error,
                       Message("level range outside window"));
  CHECK_THROWS_MATCHES(converge_ft47(F, Rat(1), 1, 5, 0.5), Error,
                       Message("level range outside window"));
}

TEST_CASE("drop limit density: prefix identities and ball masses", "[converge]") {
  // Shell mass of the limit density equals the difference of consecutive
  // ball masses: an algebraic identity between the two closed forms.
  for (auto [base, alpha, t] : {std::tuple<unsigned, double, double>{2u, 1.0, 1.0},
                                {2u, 1.0, 0.3},
                                {3u, 2.0, 0.7}}) {
    double p = static_cast<double>(base);
    for (int K = -4; K <= 3; ++K) {
      double lhs = drop_ball_mass(base, alpha, t, K) - drop_ball_mass(base, alpha, t, K + 1);
      double vol = std::pow(p, -K) - std::pow(p, -K - 1);
      double rhs = drop_density_value(base, alpha, t, K) * vol;
      CHECK(lhs == Approx(rhs).margin(1e-14));
    }
  }

  // The density climbs toward the origin and the ball masses shrink with
  // depth, filling up the space as the ball grows.
  for (int j = -6; j <= 3; ++j) {
    CHECK(drop_density_value(2, 1.0, 1.0, j) > 0.0);
    CHECK(drop_density_value(2, 1.0, 1.0, j + 1) > drop_density_value(2, 1.0, 1.0, j));
    CHECK(drop_ball_mass(2, 1.0, 1.0, j + 1) < drop_ball_mass(2, 1.0, 1.0, j));
  }
  CHECK(drop_ball_mass(2, 1.0, 1.0, -30) == Approx(1.0).margin(1e-8));
  CHECK(drop_ball_mass(2, 1.0, 1.0, 3) > 0.0);
  CHECK(drop_ball_mass(2, 1.0, 1.0, 3) < 1.0);

  // Shell-by-shell summation normalizes to 1 once the range is wide enough;
  // a narrow range visibly misses mass, so the check is not vacuous.
  CHECK(drop_series_mass(2, 1.0, 1.0, -45, 45) == Approx(1.0).margin(1e-9));
  CHECK(drop_series_mass(3, 2.0, 0.5, -40, 40) == Approx(1.0).margin(1e-9));
  CHECK(drop_series_mass(2, 1.0, 1.0, -2, 2) < 0.9);
}

TEST_CASE("drop limit measure carries unit mass and the stable transform", "[converge]") {
  LeveledTreeSpec spec = noncompact_homogeneous(2, -30, 4);
  SphericalMeasure<double> mu = drop_limit_measure(spec, 2, 1.0, 1.0);

  CHECK(mu.resolution == 4);
  REQUIRE(mu.shells.size() == 34);
  for (const auto& [k, w] : mu.shells) CHECK(w > 0.0);
  CHECK(mu.atom > 0.0);
  // This window captures the law to within the acceptance mass tolerance.
  CHECK(mu.escape >= 0.0);
  CHECK(mu.escape <= 1e-8);
  CHECK(mu.window_mass() == Approx(1.0).margin(1e-8));

  // Dual route: the density construction must reproduce the stable
  // spherical transform e^{-t p^{k alpha}} shell-integral by shell-integral.
  SphericalMeasure<double> inside = mu;
  inside.escape = 0.0;
  for (int k = -3; k <= 4; ++k) {
    double target = std::exp(-std::pow(2.0, static_cast<double>(k)));
    CHECK(spherical_transform(spec, inside, k) == Approx(target).margin(1e-10));
  }

  CHECK_THROWS_MATCHES(drop_limit_measure(compact_homogeneous(2, 3), 2, 1.0, 1.0), Error,
                       Message("the drop limit law lives on a noncompact window"));
  CHECK_THROWS(drop_limit_measure(noncompact_mixed(), 3, 1.0, 1.0));
}

TEST_CASE("return-law measure reproduces the drop transforms exactly", "[converge]") {
  LeveledTreeSpec spec = noncompact_homogeneous(2, -8, 2);
  WalkKernel K = walk_ft43(spec, 2, 1);
  SphericalMeasure<Rat> mu = drop_sigma_measure(spec, 2, 1, 2);

  CHECK(mu.resolution == 2);
  CHECK(mu.total() == Rat(1));
  CHECK(mu.escape == 1 - drop_transform(K, 2, spec.k_min));
  CHECK(mu.window_mass() == drop_transform(K, 2, spec.k_min));
  for (int k = spec.k_min + 1; k <= 2; ++k)
    CHECK(spherical_transform(spec, mu, k) == drop_transform(K, 2, k));

  CHECK_THROWS_MATCHES(drop_sigma_measure(spec, 2, 1, -8), Error,
                       Message("return level outside window"));
  CHECK_THROWS_MATCHES(drop_sigma_measure(spec, 2, 1, 3), Error,
                       Message("return level outside window"));
}

TEST_CASE("dilation shifts shells and matches the stable self-similarity", "[converge]") {
  // Halving the time of the alpha = 1 limit law is the same as pushing every
  // shell one level deeper: nu_{t/2} = dilate(nu_t).
  LeveledTreeSpec narrow = noncompact_homogeneous(2, -30, 3);
  LeveledTreeSpec wide = noncompact_homogeneous(2, -30, 4);
  SphericalMeasure<double> nu_t = drop_limit_measure(narrow, 2, 1.0, 1.0);
  SphericalMeasure<double> nu_half = drop_limit_measure(wide, 2, 1.0, 0.5);
  SphericalMeasure<double> shifted = dilate_radial(wide, nu_t, 1);

  CHECK(shifted.resolution == 4);
  CHECK(shifted.atom == Approx(nu_half.atom).epsilon(1e-12));
  for (const auto& [k, w] : shifted.shells)
    CHECK(w == Approx(nu_half.shells.at(k)).epsilon(1e-12).margin(1e-15));

  // Shifting past either window edge is rejected.
  CHECK_THROWS_MATCHES(dilate_radial(narrow, nu_t, 1), Error,
                       Message("dilation leaves the window below"));
  SphericalMeasure<double> tiny;
  tiny.resolution = 0;
  tiny.shells[-2] = 0.5;
  CHECK_THROWS_MATCHES(dilate_radial(noncompact_mixed(), tiny, -1), Error,
                       Message("dilation leaves the window above"));

  // Dilation by zero is the identity.
  SphericalMeasure<double> same = dilate_radial(narrow, nu_t, 0);
  CHECK(same.resolution == nu_t.resolution);
  CHECK(same.atom == nu_t.atom);
  CHECK(same.shells == nu_t.shells);
}

TEST_CASE("stable fit recovers the exponent family", "[converge]") {
  LeveledTreeSpec spec = noncompact_homogeneous(2, -6, 3);

  SECTION("drop limit law: c equals the time parameter") {
    SphericalMeasure<double> mu = drop_limit_measure(spec, 2, 1.0, 1.0);
    StableFit fit = check_stable(spec, mu, 1.0, 3, -4);
    REQUIRE(fit.rows.size() == 8);
    for (size_t i = 0; i < fit.rows.size(); ++i) {
      const StableFitRow& row = fit.rows[i];
      CHECK(row.level == -4 + static_cast<int>(i));
      CHECK(row.norm == Approx(std::pow(2.0, row.level)).epsilon(1e-14));
      CHECK(row.mu_hat == Approx(std::exp(-std::pow(2.0, row.level))).epsilon(1e-12));
    }
    CHECK(fit.c == Approx(1.0).margin(1e-12));
    CHECK(fit.max_rel_residual < 1e-12);

    StableFit half = check_stable(spec, drop_limit_measure(spec, 2, 1.0, 0.5), 1.0, 3, -4);
    CHECK(half.c == Approx(0.5).margin(1e-12));
    CHECK(half.max_rel_residual < 1e-12);
  }

  SECTION("heat measure of the stable model carries the same Fourier data") {
    SpectralModel<double> model = stable_model_real(spec, 2, 1.0);
    SphericalMeasure<double> heat = heat_measure(model, 2.0);
    StableFit fit = check_stable(spec, heat, 1.0, 3, -4);
    CHECK(fit.c == Approx(1.0).margin(1e-12));
    CHECK(fit.max_rel_residual < 1e-12);

    // Spectral route and density route agree transform value by transform
    // value, not just in the fitted constant.
    StableFit drop = check_stable(spec, drop_limit_measure(spec, 2, 1.0, 1.0), 1.0, 3, -4);
    REQUIRE(fit.rows.size() == drop.rows.size());
    for (size_t i = 0; i < fit.rows.size(); ++i)
      CHECK(fit.rows[i].mu_hat == Approx(drop.rows[i].mu_hat).epsilon(1e-12));
  }

  SECTION("haar-norm metric and non-integer exponents") {
    LeveledTreeSpec spec3 = noncompact_homogeneous(3, -5, 2);
    SphericalMeasure<double> mu3 = drop_limit_measure(spec3, 3, 1.0, 1.0);
    StableFit haar = check_stable(spec3, mu3, 1.0, 2, -3, MetricKind::haar_norm);
    CHECK(haar.c == Approx(1.0).margin(1e-10));
    CHECK(haar.max_rel_residual < 1e-10);

    // The exponent metric uses base 2 by default, so the same law fits with
    // alpha = log_2(3) there.
    StableFit expo = check_stable(spec3, mu3, std::log2(3.0), 2, -3, MetricKind::exponent);
    CHECK(expo.c == Approx(1.0).margin(1e-9));
    CHECK(expo.max_rel_residual < 1e-9);
  }

  SECTION("rejections") {
    SphericalMeasure<double> mu = drop_limit_measure(spec, 2, 1.0, 1.0);
    CHECK_THROWS_MATCHES(check_stable(spec, mu, 1.0, 3, -5), Error,
                         Message("character level too coarse for the windowed transform to be exact"));
    CHECK_THROWS_MATCHES(check_stable(spec, mu, 1.0, 4, -4), Error,
                         Message("bad character level range"));
    CHECK_THROWS_MATCHES(check_stable(spec, mu, 1.0, 3, 4), Error,
                         Message("bad character level range"));

    // A measure concentrated on one shell has a negative transform row.
    LeveledTreeSpec spec3 = noncompact_homogeneous(3, -2, 2);
    SphericalMeasure<double> shell;
    shell.resolution = 2;
    shell.shells[1] = 1.0;
    CHECK_THROWS_MATCHES(check_stable(spec3, shell, 1.0, 2, 0), Error,
                         Message("nonpositive transform value in the stable fit"));
  }
}
