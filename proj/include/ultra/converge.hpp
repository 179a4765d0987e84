#pragma once

#include <cmath>
#include <complex>
#include <map>
#include <string>
#include <vector>

#include "ultra/common.hpp"
#include "ultra/group.hpp"
#include "ultra/laplacian.hpp"
#include "ultra/spherical.hpp"
#include "ultra/tree.hpp"
#include "ultra/walk.hpp"

namespace ultra {

// One checked entry of a convergence table: the powered transform against
// its semigroup target. For character rows both sides are complex; the value
// and target columns then carry the modulus while abs_error is the modulus
// of the complex difference.
struct ConvergeRow {
  int n = 0;
  bool is_char = false;
  long index = 0;
  double value = 0.0;
  double target = 0.0;
  double abs_error = 0.0;
};

struct ConvergeReport {
  std::string theorem;
  double t = 0.0;
  double tolerance = 0.0;
  std::vector<int> levels;
  std::vector<ConvergeRow> rows;
  std::vector<double> sup_error;
  bool sup_nonincreasing = false;
  bool final_below_tolerance = false;
  bool monotone_from_below = true;

  void finish() {
    sup_nonincreasing = true;
    for (size_t i = 1; i < sup_error.size(); ++i)
      if (sup_error[i] > sup_error[i - 1]) sup_nonincreasing = false;
    final_below_tolerance = !sup_error.empty() && sup_error.back() <= tolerance;
  }
};

// base^e for integer e >= 0 with a possibly negative base.
inline double real_power(double base, const Int& e) {
  double a = std::pow(std::abs(base), e.get_d());
  if (base < 0 && mpz_odd_p(e.get_mpz_t())) a = -a;
  return a;
}

// ----- Compact drift walk: powers of the sphere return law -----

inline ConvergeReport converge_ft41(const LeveledTreeSpec& spec, const Rat& p, const Rat& t,
                                    int n_lo, int n_hi, double tolerance) {
  spec.validate();
  if (spec.mode != Mode::compact) fail_schema("the drift theorem runs on a compact tree");
  if (!(p > 0 && p < Rat(1, 2))) fail_schema("drift walk needs 0 < p < 1/2");
  if (n_lo < 1 || n_hi > spec.k_max || n_lo > n_hi) fail_schema("level range outside [1, k_max]");
  Rat ratio = (1 - p) / p;
  double t_d = to_double(t);
  double q_d = to_double(ratio);
  ConvergeReport rep;
  rep.theorem = "FT41";
  rep.t = t_d;
  rep.tolerance = tolerance;
  double prev_first = -1.0;
  for (int n = n_lo; n <= n_hi; ++n) {
    rep.levels.push_back(n);
    Int power = floor_product(t, drift_scale(ratio, n));
    double sup = 0.0;
    for (int k = 1; k <= n; ++k) {
      ConvergeRow row;
      row.n = n;
      row.index = k;
      row.value = real_power(to_double(drift_transform(ratio, n, k)), power);
      row.target = std::exp(-t_d * std::pow(q_d, k - 1));
      row.abs_error = std::abs(row.value - row.target);
      sup = std::max(sup, row.abs_error);
      if (k == 1) {
        if (row.value > row.target + 1e-12) rep.monotone_from_below = false;
        if (prev_first >= 0.0 && row.value < prev_first - 1e-12) rep.monotone_from_below = false;
        prev_first = row.value;
      }
      rep.rows.push_back(row);
    }
    rep.sup_error.push_back(sup);
  }
  rep.finish();
  return rep;
}

// ----- Noncompact drop walk: powers of the return law under dilation -----

inline ConvergeReport converge_ft43(const LeveledTreeSpec& spec, unsigned base, long alpha,
                                    const Rat& t, int n_lo, int n_hi, double tolerance) {
  WalkKernel K = walk_ft43(spec, base, alpha);  // validates mode and degrees
  if (n_lo <= spec.k_min || n_hi > spec.k_max || n_lo > n_hi)
    fail_schema("level range outside window");
  double t_d = to_double(t);
  double s_d = to_double(K.drop);
  ConvergeReport rep;
  rep.theorem = "FT43";
  rep.t = t_d;
  rep.tolerance = tolerance;
  for (int n = n_lo; n <= n_hi; ++n) {
    rep.levels.push_back(n);
    Int power = floor_product(t, drop_scale(K, n));
    double sup = 0.0;
    for (int k = spec.k_min + 1; k <= n; ++k) {
      ConvergeRow row;
      row.n = n;
      row.index = k;
      row.value = real_power(to_double(drop_transform(K, n, k)), power);
      row.target = std::exp(-t_d * std::pow(s_d, k));
      row.abs_error = std::abs(row.value - row.target);
      sup = std::max(sup, row.abs_error);
      rep.rows.push_back(row);
    }
    rep.sup_error.push_back(sup);
  }
  rep.finish();
  return rep;
}

// ----- Radial scale walk: powers of the limit law -----

inline ConvergeReport converge_ft46(const LeveledTreeSpec& spec, const LevySequence& scales,
                                    const Rat& t, int n_lo, int n_hi, double tolerance) {
  spec.validate();
  validate_levy(spec, scales);
  if (spec.mode != Mode::noncompact) fail_schema("the scale theorem runs on a noncompact tree");
  if (n_lo <= spec.k_min || n_hi > spec.k_max || n_lo > n_hi)
    fail_schema("level range outside window");
  std::map<int, Rat> lambda = levy_to_eigenvalues(spec, scales);
  double t_d = to_double(t);
  ConvergeReport rep;
  rep.theorem = "FT46";
  rep.t = t_d;
  rep.tolerance = tolerance;
  for (int n = n_lo; n <= n_hi; ++n) {
    rep.levels.push_back(n);
    Int power = floor_product(t, scales.at(n));
    double sup = 0.0;
    for (int k = spec.k_min + 1; k <= n; ++k) {
      Rat tr = scale_transform(spec, scales, n, k);
      if (abs_val(tr) > 1) fail_assert("limit-law transform leaves the unit interval");
      ConvergeRow row;
      row.n = n;
      row.index = k;
      row.value = real_power(to_double(tr), power);
      row.target = std::exp(-t_d * to_double(lambda.at(k - 1)));
      row.abs_error = std::abs(row.value - row.target);
      sup = std::max(sup, row.abs_error);
      rep.rows.push_back(row);
    }
    rep.sup_error.push_back(sup);
  }
  rep.finish();
  return rep;
}

// ----- Anisotropic scale walk: character transforms of the limit law -----

// The windowed limit law is renormalized to the window (the escape mass is
// conditioned away); its character transform is 1 - LK(chi)/(a_n - a_{k_min})
// where LK is the windowed jump-measure integral of (1 - chi). The target is
// the semigroup value exp(-t LK(chi)); the dropped upper tail cancels to
// first order between the two sides.
inline ConvergeReport converge_ft47(const LevyMeasureAnisotropic& F, const Rat& t, int n_lo,
                                    int n_hi, double tolerance) {
  F.validate();
  const LeveledTreeSpec& spec = F.tree;
  LevySequence scales = F.derived_scales();
  if (n_lo <= spec.k_min || n_hi > spec.k_max || n_lo > n_hi)
    fail_schema("level range outside window");
  double t_d = to_double(t);
  ConvergeReport rep;
  rep.theorem = "FT47";
  rep.t = t_d;
  rep.tolerance = tolerance;
  for (int n = n_lo; n <= n_hi; ++n) {
    check_quotient_enumerable(spec, n);
    rep.levels.push_back(n);
    Int power = floor_product(t, scales.at(n));
    long N = quotient_order(spec, n).get_si();
    Rat window = scales.at(n) - scales.at(spec.k_min);
    if (!(window > 0)) fail_assert("empty window mass in the limit law");
    double window_d = to_double(window);
    double sup = 0.0;
    for (long j = 0; j < N; ++j) {
      CharExponent ce = lk_exponent_char(F, Int(j), n);
      std::complex<double> hat = 1.0 - ce.value / window_d;
      double r = std::abs(hat);
      double ang = std::arg(hat);
      double mag = real_power(r, power);
      double rot = ang * power.get_d();
      std::complex<double> powered = mag * std::complex<double>(std::cos(rot), std::sin(rot));
      std::complex<double> target = std::exp(-t_d * ce.value);
      ConvergeRow row;
      row.n = n;
      row.is_char = true;
      row.index = j;
      row.value = std::abs(powered);
      row.target = std::abs(target);
      row.abs_error = std::abs(powered - target);
      sup = std::max(sup, row.abs_error);
      rep.rows.push_back(row);
    }
    rep.sup_error.push_back(sup);
  }
  rep.finish();
  return rep;
}

// ----- Drop-walk limit density and return measures -----

// S(j) = sum_{k <= j} p^k exp(-t p^{k alpha}), truncated where terms stop
// contributing in double precision.
inline double drop_density_prefix(unsigned base, double alpha, double t, int j) {
  double p = static_cast<double>(base);
  double sum = 0.0;
  for (int k = j; k > j - 400; --k) {
    double term = std::pow(p, k) * std::exp(-t * std::pow(p, k * alpha));
    sum += term;
    if (term < 1e-22 * sum && term < 1e-22) break;
  }
  return sum;
}

// Density value of the time-t drop-walk limit law on shell j (constant
// there), with respect to the Haar measure normalized by m(0) = 1.
inline double drop_density_value(unsigned base, double alpha, double t, int j) {
  double p = static_cast<double>(base);
  double c0 = (p - 1.0) / p;
  double tail = std::pow(p, j + 1) * std::exp(-t * std::pow(p, (j + 1) * alpha)) / (p - 1.0);
  return c0 * (drop_density_prefix(base, alpha, t, j) - tail);
}

// Ball mass of the limit law: mu(B_K) = c0 m(K) S(K).
inline double drop_ball_mass(unsigned base, double alpha, double t, int K) {
  double p = static_cast<double>(base);
  double c0 = (p - 1.0) / p;
  return c0 * std::pow(p, -K) * drop_density_prefix(base, alpha, t, K);
}

// Total mass of the limit density summed shell by shell over [j_lo, j_hi].
// Unlike the windowed measure (whose escape field is the bookkeeping
// complement), this is an independent normalization check of the series.
inline double drop_series_mass(unsigned base, double alpha, double t, int j_lo, int j_hi) {
  double p = static_cast<double>(base);
  double sum = 0.0;
  for (int j = j_lo; j <= j_hi; ++j) {
    double vol = std::pow(p, -j) - std::pow(p, -j - 1);
    sum += vol * drop_density_value(base, alpha, t, j);
  }
  return sum;
}

// Windowed radial representation of the limit law: shell masses on
// [k_min, k_max-1] plus the bottom ball as atom. The remaining mass above
// the window ball is reported as escape.
inline SphericalMeasure<double> drop_limit_measure(const LeveledTreeSpec& spec, unsigned base,
                                                   double alpha, double t) {
  require_homogeneous(spec, base);
  if (spec.mode != Mode::noncompact) fail_schema("the drop limit law lives on a noncompact window");
  SphericalMeasure<double> mu;
  mu.resolution = spec.k_max;
  for (int j = spec.k_min; j < spec.k_max; ++j) {
    double vol = to_double(spec.m(j) - spec.m(j + 1));
    mu.shells[j] = vol * drop_density_value(base, alpha, t, j);
  }
  mu.atom = drop_ball_mass(base, alpha, t, spec.k_max);
  double win = mu.window_mass();
  mu.escape = win < 1.0 ? 1.0 - win : 0.0;
  return mu;
}

// Windowed radial law of the level-n return measure of the drop walk, from
// the closed-form transforms. The window mass uses the transform at the
// window root; the discrepancy is the sub-window tail of relative size
// O(drop^{k_min - n}).
inline SphericalMeasure<Rat> drop_sigma_measure(const LeveledTreeSpec& spec, unsigned base,
                                                long alpha, int n) {
  WalkKernel K = walk_ft43(spec, base, alpha);
  if (n <= spec.k_min || n > spec.k_max) fail_schema("return level outside window");
  std::map<int, Rat> h;
  for (int k = spec.k_min + 1; k <= n; ++k) h[k] = drop_transform(K, n, k);
  Rat mass = drop_transform(K, n, spec.k_min);
  SphericalMeasure<Rat> mu = measure_from_transform<Rat>(spec, n, h, mass);
  mu.escape = 1 - mass;
  return mu;
}

// Dilation of a radial measure: every shell moves `shift` levels deeper.
template <class T>
inline SphericalMeasure<T> dilate_radial(const LeveledTreeSpec& spec, const SphericalMeasure<T>& mu,
                                         int shift) {
  if (mu.resolution + shift > spec.k_max) fail_schema("dilation leaves the window below");
  SphericalMeasure<T> out;
  out.resolution = mu.resolution + shift;
  out.atom = mu.atom;
  out.escape = mu.escape;
  for (const auto& [k, w] : mu.shells) {
    if (k + shift < spec.k_min) fail_schema("dilation leaves the window above");
    out.shells[k + shift] = w;
  }
  return out;
}

// ----- Stable-law Fourier fit -----

struct StableFitRow {
  long char_index = 0;
  int level = 0;
  double norm = 0.0;
  double mu_hat = 0.0;
  double fitted = 0.0;
  double rel_residual = 0.0;
};

struct StableFit {
  double c = 0.0;
  double max_rel_residual = 0.0;
  std::vector<StableFitRow> rows;
};

// Fits mu_hat(xi) = exp(-c |xi|^alpha) over the character-norm shells of the
// quotient at `res`, using one representative character per level in
// [min_level, res]. The measure must be radial on spec's window with zero
// escape field (sub-probability tails above the window are fine: characters
// of level >= k_min + 2 cannot see them).
inline StableFit check_stable(const LeveledTreeSpec& spec, const SphericalMeasure<double>& mu,
                              double alpha, int res, int min_level,
                              MetricKind kind = MetricKind::exponent) {
  if (min_level < spec.k_min + 2)
    fail_schema("character level too coarse for the windowed transform to be exact");
  if (res < min_level || res > spec.k_max) fail_schema("bad character level range");
  check_quotient_enumerable(spec, res);
  SphericalMeasure<double> windowed = mu;
  windowed.escape = 0.0;  // tails above the window are invisible to these characters
  std::vector<double> profile = radial_profile(spec, windowed, res);
  Int N = quotient_order(spec, res);
  StableFit fit;
  double num = 0.0, den = 0.0;
  for (int m = min_level; m <= res; ++m) {
    Int Rm(1);
    for (int i = spec.k_min; i < m; ++i) Rm *= static_cast<long>(spec.q(i));
    Int j = N / Rm;  // representative character of level exactly m
    std::complex<double> hat = profile_char_transform(profile, j);
    if (std::abs(hat.imag()) > 1e-9) fail_assert("radial transform with a nonreal value");
    StableFitRow row;
    row.char_index = j.get_si();
    row.level = character_level(spec, j, res);
    if (row.level != m) fail_assert("representative character has the wrong level");
    row.norm = character_norm(spec, j, res, kind);
    row.mu_hat = hat.real();
    if (!(row.mu_hat > 0)) fail_assert("nonpositive transform value in the stable fit");
    fit.rows.push_back(row);
    double x = std::pow(row.norm, alpha);
    num += -std::log(row.mu_hat) * x;
    den += x * x;
  }
  if (den == 0.0) fail_assert("degenerate stable fit");
  fit.c = num / den;
  for (StableFitRow& row : fit.rows) {
    row.fitted = std::exp(-fit.c * std::pow(row.norm, alpha));
    row.rel_residual = std::abs(row.mu_hat - row.fitted) / std::abs(row.mu_hat);
    fit.max_rel_residual = std::max(fit.max_rel_residual, row.rel_residual);
  }
  return fit;
}

}  // namespace ultra
