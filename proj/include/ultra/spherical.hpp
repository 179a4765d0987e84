#pragma once

#include <complex>
#include <map>
#include <vector>

#include "ultra/common.hpp"
#include "ultra/function.hpp"
#include "ultra/group.hpp"
#include "ultra/tree.hpp"

namespace ultra {

// Spherical basis function of index k: 1 on the level-k ball around the
// reference point, -1/(q_{k-1}-1) on the surrounding level-(k-1) shell, 0
// outside. Within the window ball the index k_min gives the constant 1.
template <class T = Rat>
T phi_shell_value(const LeveledTreeSpec& spec, int k, int shell) {
  if (k < spec.k_min || k > spec.k_max) fail_schema("spherical index outside window");
  if (shell < spec.k_min || shell > spec.k_max) fail_schema("shell level outside window");
  if (shell >= k) return T(1);
  if (shell == k - 1) {
    Rat v = Rat(-1) / Rat(static_cast<long>(spec.q(k - 1)) - 1);
    if constexpr (std::is_same_v<T, Rat>)
      return v;
    else
      return to_double(v);
  }
  return T(0);
}

inline Rat phi_eval(const LeveledTreeSpec& spec, int k, const BoundaryPoint& x) {
  int lvl = confluent_level(spec, x, boundary_zero());
  return phi_shell_value<Rat>(spec, k, std::min(lvl, spec.k_max));
}

inline RatFunction phi_function(const LeveledTreeSpec& spec, int k) {
  if (k == spec.k_min) return RatFunction::constant(spec, Rat(1));
  RatFunction f = RatFunction::constant(spec, Rat(0));
  f.set_on_ball(spine_vertex(spec, k - 1), Rat(-1) / Rat(static_cast<long>(spec.q(k - 1)) - 1));
  f.set_on_ball(spine_vertex(spec, k), Rat(1));
  return f;
}

// Squared L2 norm of phi_k against the reference measure.
inline Rat phi_norm_sq(const LeveledTreeSpec& spec, int k) {
  if (k == spec.k_min) return spec.m(spec.k_min);
  Rat q1 = Rat(static_cast<long>(spec.q(k - 1)) - 1);
  return spec.m(k) * spec.q(k - 1) / q1;
}

// Spherically symmetric measure on the window ball, stored radially: shell k
// holds the mass of B_k \ B_{k+1} around the reference point for k in
// [k_min, resolution); `atom` is the mass of the level-`resolution` ball,
// read as uniformly spread when finer structure is needed; `escape` is mass
// outside the window ball (it meets every phi_k with k > k_min in the value
// 0 and is excluded from transforms at k_min).
template <class T = Rat>
struct SphericalMeasure {
  int resolution = 0;
  std::map<int, T> shells;
  T atom = T(0);
  T escape = T(0);

  T total() const {
    T s = atom + escape;
    for (const auto& [k, w] : shells) s += w;
    return s;
  }

  T window_mass() const {
    T s = atom;
    for (const auto& [k, w] : shells) s += w;
    return s;
  }
};

template <class T>
void validate_measure(const LeveledTreeSpec& spec, const SphericalMeasure<T>& mu) {
  if (mu.resolution < spec.k_min || mu.resolution > spec.k_max)
    fail_schema("measure resolution outside window");
  for (const auto& [k, w] : mu.shells) {
    if (k < spec.k_min || k >= mu.resolution) fail_schema("measure shell outside range");
    if (w < T(0)) fail_schema("negative shell mass");
  }
  if (mu.atom < T(0) || mu.escape < T(0)) fail_schema("negative mass");
}

// Tail mass of the level-k ball, k in [k_min, k_max], reading the atom as
// uniform on its ball below the resolution.
template <class T>
T ball_tail(const LeveledTreeSpec& spec, const SphericalMeasure<T>& mu, int k) {
  if (k <= mu.resolution) {
    T s = mu.atom;
    for (const auto& [j, w] : mu.shells)
      if (j >= k) s += w;
    return s;
  }
  if constexpr (std::is_same_v<T, Rat>)
    return mu.atom * spec.m(k) / spec.m(mu.resolution);
  else
    return mu.atom * to_double(spec.m(k) / spec.m(mu.resolution));
}

// <mu, phi_k>; defined for k in [k_min, k_max] via the uniform reading of the
// atom. Escape mass is only allowed when phi_k vanishes outside the window
// ball, i.e. k > k_min.
template <class T>
T spherical_transform(const LeveledTreeSpec& spec, const SphericalMeasure<T>& mu, int k) {
  validate_measure(spec, mu);
  if (k < spec.k_min || k > spec.k_max) fail_schema("transform index outside window");
  if (k == spec.k_min) {
    if (!(mu.escape == T(0)))
      fail_unsupported("transform at k_min needs the measure inside the window ball");
    return mu.window_mass();
  }
  T tk = ball_tail(spec, mu, k);
  T tk1 = ball_tail(spec, mu, k - 1);
  Rat f = Rat(1) / Rat(static_cast<long>(spec.q(k - 1)) - 1);
  if constexpr (std::is_same_v<T, Rat>)
    return tk - (tk1 - tk) * f;
  else
    return tk - (tk1 - tk) * to_double(f);
}

// Rebuilds the radial measure from transform values h_k for k in
// [k_min+1, resolution] and the total window mass. Ball tails follow the
// recurrence t_k = (h_k (q_{k-1}-1) + t_{k-1}) / q_{k-1}.
template <class T>
SphericalMeasure<T> measure_from_transform(const LeveledTreeSpec& spec, int resolution,
                                           const std::map<int, T>& h, T window_mass = T(1)) {
  if (resolution < spec.k_min || resolution > spec.k_max)
    fail_schema("measure resolution outside window");
  SphericalMeasure<T> mu;
  mu.resolution = resolution;
  T prev = window_mass;
  for (int k = spec.k_min + 1; k <= resolution; ++k) {
    auto it = h.find(k);
    if (it == h.end()) fail_schema("missing transform value at index " + std::to_string(k));
    Rat qm1(static_cast<long>(spec.q(k - 1)) - 1);
    T tk;
    if constexpr (std::is_same_v<T, Rat>)
      tk = (it->second * qm1 + prev) / Rat(spec.q(k - 1));
    else
      tk = (it->second * to_double(qm1) + prev) / static_cast<double>(spec.q(k - 1));
    mu.shells[k - 1] = prev - tk;
    prev = tk;
  }
  mu.atom = prev;
  return mu;
}

// Convolution of radial measures via the transform: spherical transforms
// multiply under convolution, and the uniform reading of atoms keeps the
// product exact down to the finer of the two resolutions.
template <class T>
SphericalMeasure<T> convolve(const LeveledTreeSpec& spec, const SphericalMeasure<T>& a,
                             const SphericalMeasure<T>& b) {
  validate_measure(spec, a);
  validate_measure(spec, b);
  if (!(a.escape == T(0)) || !(b.escape == T(0)))
    fail_unsupported("convolution needs both measures inside the window ball");
  int res = std::max(a.resolution, b.resolution);
  std::map<int, T> h;
  for (int k = spec.k_min + 1; k <= res; ++k)
    h[k] = spherical_transform(spec, a, k) * spherical_transform(spec, b, k);
  return measure_from_transform<T>(spec, res, h, a.window_mass() * b.window_mass());
}

template <class T>
SphericalMeasure<T> convolution_power(const LeveledTreeSpec& spec, const SphericalMeasure<T>& a,
                                      const Int& n) {
  if (n < 1) fail_schema("convolution power needs n >= 1");
  std::map<int, T> h;
  for (int k = spec.k_min + 1; k <= a.resolution; ++k) {
    T base = spherical_transform(spec, a, k);
    // Exact fast power for rationals; pow for doubles.
    if constexpr (std::is_same_v<T, Rat>) {
      Rat out(1);
      Rat b = base;
      Int e = n;
      while (e > 0) {
        if (mpz_odd_p(e.get_mpz_t())) out *= b;
        b *= b;
        e /= 2;
      }
      h[k] = out;
    } else {
      h[k] = std::pow(base, n.get_d());
    }
  }
  T mass = a.window_mass();
  if constexpr (std::is_same_v<T, Rat>) {
    if (mass != 1) fail_unsupported("convolution powers expect a probability measure");
  }
  return measure_from_transform<T>(spec, a.resolution, h, T(1));
}

// Uniform probability measure on the level-k ball.
template <class T = Rat>
SphericalMeasure<T> uniform_ball(const LeveledTreeSpec& spec, int k) {
  SphericalMeasure<T> mu;
  mu.resolution = k;
  mu.atom = T(1);
  return mu;
}

// Per-coset mass vector of a radial measure on the quotient at resolution
// `res` (rank order). Shell masses spread evenly over their cosets.
template <class T>
std::vector<T> radial_profile(const LeveledTreeSpec& spec, const SphericalMeasure<T>& mu,
                              int res) {
  validate_measure(spec, mu);
  if (!(mu.escape == T(0))) fail_unsupported("profiles need the measure inside the window ball");
  if (res < mu.resolution) fail_schema("profile resolution coarser than the measure");
  check_quotient_enumerable(spec, res);
  size_t n = quotient_order(spec, res).get_ui();
  std::vector<T> out(n, T(0));
  // Mass of each level-res coset: determined by the confluent level of the
  // coset with 0, i.e. the level of the lowest nonzero digit of its rank.
  Rat m_res = spec.m(res);
  for (size_t r = 0; r < n; ++r) {
    BoundaryPoint x = from_rank(spec, Int(static_cast<unsigned long>(r)), res);
    int lvl = res;
    for (int j = spec.k_min; j < res; ++j)
      if (x.digit_at(j) != 0) {
        lvl = j;
        break;
      }
    T mass;
    if (lvl >= mu.resolution) {
      // Inside the atom ball: uniform share.
      Rat share = m_res / spec.m(mu.resolution);
      if constexpr (std::is_same_v<T, Rat>)
        mass = mu.atom * share;
      else
        mass = mu.atom * to_double(share);
    } else {
      auto it = mu.shells.find(lvl);
      T w = it == mu.shells.end() ? T(0) : it->second;
      Rat share = m_res / (spec.m(lvl) - spec.m(lvl + 1));
      if constexpr (std::is_same_v<T, Rat>)
        mass = w * share;
      else
        mass = w * to_double(share);
    }
    out[r] = mass;
  }
  return out;
}

// Exact group convolution of per-coset vectors (cyclic, by rank).
template <class T>
std::vector<T> group_convolve(const std::vector<T>& a, const std::vector<T>& b) {
  require(a.size() == b.size(), "profile sizes differ");
  size_t n = a.size();
  std::vector<T> out(n, T(0));
  for (size_t i = 0; i < n; ++i) {
    if (a[i] == T(0)) continue;
    for (size_t j = 0; j < n; ++j) out[(i + j) % n] += a[i] * b[j];
  }
  return out;
}

// Radializes a per-coset vector back to shell masses; exact when the vector
// is genuinely radial, otherwise averages within shells.
template <class T>
SphericalMeasure<T> spherize(const LeveledTreeSpec& spec, const std::vector<T>& profile,
                             int res) {
  SphericalMeasure<T> mu;
  mu.resolution = res;
  size_t n = quotient_order(spec, res).get_ui();
  require(profile.size() == n, "profile size mismatch");
  for (size_t r = 0; r < n; ++r) {
    BoundaryPoint x = from_rank(spec, Int(static_cast<unsigned long>(r)), res);
    int lvl = res;
    for (int j = spec.k_min; j < res; ++j)
      if (x.digit_at(j) != 0) {
        lvl = j;
        break;
      }
    if (lvl == res)
      mu.atom += profile[r];
    else
      mu.shells[lvl] += profile[r];
  }
  return mu;
}

// Fourier coefficient of a per-coset vector at character j.
template <class T>
std::complex<double> profile_char_transform(const std::vector<T>& profile, const Int& j) {
  size_t n = profile.size();
  std::complex<double> sum(0.0, 0.0);
  for (size_t r = 0; r < n; ++r) {
    double angle = 2.0 * std::numbers::pi *
                   static_cast<double>((j.get_ui() % n) * static_cast<unsigned long>(r) % n) /
                   static_cast<double>(n);
    sum += to_double(profile[r]) * std::complex<double>(std::cos(angle), std::sin(angle));
  }
  return sum;
}

// Nondecreasing positive scale sequence a_k on window levels; a_k is the mass
// a Levy measure puts outside the level-k ball.
struct LevySequence {
  std::map<int, Rat> a;  // keys exactly [k_min, k_max]

  Rat at(int k) const {
    auto it = a.find(k);
    if (it == a.end()) fail_schema("scale sequence missing level " + std::to_string(k));
    return it->second;
  }
};

inline void validate_levy(const LeveledTreeSpec& spec, const LevySequence& s) {
  for (int k = spec.k_min; k <= spec.k_max; ++k) {
    Rat v = s.at(k);
    if (v <= 0) fail_schema("scale sequence must be positive");
    if (k > spec.k_min && v < s.at(k - 1)) fail_schema("scale sequence must be nondecreasing");
  }
}

// Spectrum attached to a scale sequence: lambda_k = (q_k a_{k+1} - a_k)/(q_k - 1)
// for k in [k_min, k_max).
inline std::map<int, Rat> levy_to_eigenvalues(const LeveledTreeSpec& spec, const LevySequence& s) {
  validate_levy(spec, s);
  std::map<int, Rat> lambda;
  for (int k = spec.k_min; k < spec.k_max; ++k) {
    Rat q(spec.q(k));
    lambda[k] = (q * s.at(k + 1) - s.at(k)) / (q - 1);
  }
  return lambda;
}

// Inverts the spectrum map given the scale at the window top:
// a_{k+1} = ((q_k - 1) lambda_k + a_k) / q_k.
inline LevySequence eigenvalues_to_levy(const LeveledTreeSpec& spec,
                                        const std::map<int, Rat>& lambda, const Rat& a_k_min) {
  LevySequence s;
  s.a[spec.k_min] = a_k_min;
  for (int k = spec.k_min; k < spec.k_max; ++k) {
    auto it = lambda.find(k);
    if (it == lambda.end()) fail_schema("spectrum missing level " + std::to_string(k));
    Rat q(spec.q(k));
    s.a[k + 1] = ((q - 1) * it->second + s.a[k]) / q;
  }
  validate_levy(spec, s);
  return s;
}

// Levy measure with per-ball masses: disjoint side balls (leaves) down to
// level `depth`, splitting uniformly below, plus mass outside the window
// ball. Spine balls are never leaves; the spine shell at level k is the sum
// of the leaves in the side subtree attached at level k.
struct LevyMeasureAnisotropic {
  LeveledTreeSpec tree;
  int depth = 0;
  std::map<VertexAddress, Rat> leaves;
  Rat tail_above = 0;

  Rat spine_shell(int k) const {
    Rat s(0);
    for (const auto& [u, w] : leaves)
      if (subtree_index(tree, u) == k) s += w;
    return s;
  }

  // a_k = mass outside the level-k ball around the reference point.
  LevySequence derived_scales() const {
    LevySequence s;
    Rat acc = tail_above;
    s.a[tree.k_min] = acc;
    for (int k = tree.k_min; k < tree.k_max; ++k) {
      acc += spine_shell(k);
      s.a[k + 1] = acc;
    }
    return s;
  }

  // Mass of the ball below a non-spine vertex u (uniform below the leaves).
  Rat ball_mass(const VertexAddress& u) const {
    validate_vertex(tree, u);
    if (is_spine(u)) fail_schema("per-ball masses are kept for side balls only");
    Rat s(0);
    for (const auto& [v, w] : leaves) {
      if (is_ancestor(v, u)) return w * tree.m(u.level) / tree.m(v.level);
      if (is_ancestor(u, v)) s += w;
    }
    return s;
  }

  void validate() const {
    tree.validate();
    if (depth <= tree.k_min || depth > tree.k_max) fail_schema("levy depth outside window");
    if (tail_above < 0) fail_schema("negative tail mass");
    for (const auto& [u, w] : leaves) {
      validate_vertex(tree, u);
      if (u.level > depth) fail_schema("levy leaf deeper than the declared depth");
      if (is_spine(u)) fail_schema("levy leaves must avoid the spine");
      if (w < 0) fail_schema("negative levy leaf mass");
    }
    for (auto i = leaves.begin(); i != leaves.end(); ++i)
      for (auto j = std::next(i); j != leaves.end(); ++j)
        if (is_ancestor(i->first, j->first) || is_ancestor(j->first, i->first))
          fail_schema("levy leaves must be disjoint balls");
    // Every side subtree along the spine down to `depth` must be tiled by
    // leaves: measure of the leaves under each side child equals its ball.
    for (int k = tree.k_min; k < depth; ++k) {
      VertexAddress spine = spine_vertex(tree, k);
      for (unsigned d = 1; d < tree.q(k); ++d) {
        VertexAddress side = child(tree, spine, d);
        Rat covered(0);
        bool any = false;
        for (const auto& [u, w] : leaves)
          if (is_ancestor(side, u)) {
            covered += tree.m(u.level);
            any = true;
          }
        if (!any || covered != tree.m(side.level))
          fail_schema("levy leaves must tile every side subtree down to the depth");
      }
    }
  }
};

// Radial Levy measure attached to a scale sequence: the side children of the
// spine at level k share the shell mass a_{k+1} - a_k evenly.
inline LevyMeasureAnisotropic spherical_levy_measure(const LeveledTreeSpec& spec,
                                                     const LevySequence& s, int depth) {
  validate_levy(spec, s);
  LevyMeasureAnisotropic F;
  F.tree = spec;
  F.depth = depth;
  F.tail_above = s.at(spec.k_min);
  for (int k = spec.k_min; k < depth; ++k) {
    Rat shell = s.at(k + 1) - s.at(k);
    Rat each = shell / Rat(static_cast<long>(spec.q(k)) - 1);
    VertexAddress spine = spine_vertex(spec, k);
    for (unsigned d = 1; d < spec.q(k); ++d) F.leaves[child(spec, spine, d)] = each;
  }
  F.validate();
  return F;
}

// Exact exponent of the semigroup attached to a scale sequence at spherical
// index k: the integral of (1 - phi_k) against the Levy measure, including
// the mass above the window. Equals lambda_{k-1} of the attached spectrum.
inline Rat lk_exponent_spherical(const LeveledTreeSpec& spec, const LevySequence& s, int k) {
  if (k <= spec.k_min || k > spec.k_max) fail_schema("exponent index needs k_min < k <= k_max");
  validate_levy(spec, s);
  Rat sum = s.at(spec.k_min);  // (1 - phi_k) == 1 above the window ball
  for (int j = spec.k_min; j <= k - 1; ++j) {
    Rat shell = s.at(j + 1) - s.at(j);
    Rat one_minus_phi = Rat(1) - phi_shell_value<Rat>(spec, k, j);
    sum += shell * one_minus_phi;
  }
  return sum;
}

struct CharExponent {
  std::complex<double> value;  // sum over window side balls of F(ball)(1 - chi)
  double dropped_tail;         // mass above the window, not seen by the sum
};

// Windowed exponent at character j of the quotient at resolution `res`:
// integral of (1 - chi_j) against the per-ball Levy masses inside the window
// ball. chi_j is constant on level-res balls, so the sum is exact there; the
// spine ball contributes zero because chi_j is 1 on it.
inline CharExponent lk_exponent_char(const LevyMeasureAnisotropic& F, const Int& j, int res) {
  const LeveledTreeSpec& spec = F.tree;
  if (res > F.depth) fail_schema("character resolution finer than the levy depth");
  check_quotient_enumerable(spec, res);
  std::complex<double> sum(0.0, 0.0);
  for (const auto& [u, w] : F.leaves) {
    if (w == 0) continue;
    if (u.level <= res) {
      // chi_j varies within the leaf ball down to level res; expand the leaf
      // into its level-res descendants, each carrying w * m(res)/m(u.level).
      std::vector<VertexAddress> cells{u};
      for (int lvl = u.level; lvl < res; ++lvl) {
        std::vector<VertexAddress> next;
        for (const VertexAddress& v : cells)
          for (unsigned d = 0; d < spec.q(lvl); ++d) next.push_back(child(spec, v, d));
        cells = std::move(next);
        if (cells.size() > kEnumerationCap)
          fail_cap("character exponent expansion exceeds the enumeration cap");
      }
      double cw = to_double(w * spec.m(res) / spec.m(u.level));
      for (const VertexAddress& cell : cells) {
        std::complex<double> chi = character(spec, j, boundary_of(spec, cell), res);
        sum += cw * (std::complex<double>(1.0, 0.0) - chi);
      }
    } else {
      // Leaf deeper than the resolution: chi_j is constant on its level-res
      // ancestor ball, which contains the whole leaf.
      VertexAddress anc = ancestor_at(spec, u, res);
      std::complex<double> chi = character(spec, j, boundary_of(spec, anc), res);
      sum += to_double(w) * (std::complex<double>(1.0, 0.0) - chi);
    }
  }
  return CharExponent{sum, to_double(F.tail_above)};
}

}  // namespace ultra
