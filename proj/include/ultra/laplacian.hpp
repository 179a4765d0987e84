#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "ultra/common.hpp"
#include "ultra/function.hpp"
#include "ultra/linalg.hpp"
#include "ultra/spherical.hpp"
#include "ultra/tree.hpp"

namespace ultra {

// Hierarchical Laplacian in spectral form: lambda_k is the eigenvalue carried
// by mean-zero functions that are constant on level-(k+1) balls inside a
// level-k ball, for k in [k_min, k_max). Built either from per-level
// averaging rates C_k >= 0 (lambda_k = sum of C_j, j <= k, necessarily
// nondecreasing) or from eigenvalues directly.
template <class T = Rat>
struct SpectralModel {
  LeveledTreeSpec tree;
  std::map<int, T> lambda;  // keys exactly [k_min, k_max)

  T eigenvalue(int k) const {
    auto it = lambda.find(k);
    if (it == lambda.end()) fail_schema("eigenvalue index outside [k_min, k_max)");
    return it->second;
  }

  // Averaging rate at level k: C_k = lambda_k - lambda_{k-1}.
  T rate(int k) const {
    if (k == tree.k_min) return eigenvalue(k);
    return eigenvalue(k) - eigenvalue(k - 1);
  }

  bool nondecreasing() const {
    for (int k = tree.k_min + 1; k < tree.k_max; ++k)
      if (eigenvalue(k) < eigenvalue(k - 1)) return false;
    return true;
  }

  void validate() const {
    tree.validate();
    if (lambda.size() != static_cast<size_t>(tree.k_max - tree.k_min))
      fail_schema("need one eigenvalue per level in [k_min, k_max)");
    for (const auto& [k, v] : lambda) {
      if (k < tree.k_min || k >= tree.k_max) fail_schema("eigenvalue level outside window");
      if (v < T(0)) fail_schema("eigenvalues must be nonnegative");
    }
  }
};

template <class T>
SpectralModel<T> model_from_rates(const LeveledTreeSpec& spec, const std::map<int, T>& rates) {
  spec.validate();
  SpectralModel<T> m;
  m.tree = spec;
  T acc = T(0);
  for (int k = spec.k_min; k < spec.k_max; ++k) {
    auto it = rates.find(k);
    T c = it == rates.end() ? T(0) : it->second;
    if (c < T(0)) fail_schema("averaging rates must be nonnegative");
    acc += c;
    m.lambda[k] = acc;
  }
  return m;
}

template <class T>
SpectralModel<T> model_from_eigenvalues(const LeveledTreeSpec& spec,
                                        const std::map<int, T>& lambda) {
  SpectralModel<T> m;
  m.tree = spec;
  m.lambda = lambda;
  m.validate();
  return m;
}

inline SpectralModel<Rat> model_from_levy(const LeveledTreeSpec& spec, const LevySequence& s) {
  return model_from_eigenvalues<Rat>(spec, levy_to_eigenvalues(spec, s));
}

// Mean-zero eigenfunction attached to a vertex v and one of its children u:
// the normalized difference of ball indicators. Carries eigenvalue
// lambda_{level(v)}.
inline RatFunction eigenfunction(const LeveledTreeSpec& spec, const VertexAddress& v,
                                 const VertexAddress& u) {
  validate_vertex(spec, v);
  validate_vertex(spec, u);
  if (u.level != v.level + 1 || !is_ancestor(v, u))
    fail_schema("eigenfunction needs a vertex and one of its children");
  RatFunction f = RatFunction::constant(spec, Rat(0));
  f.set_on_ball(v, Rat(-1) / spec.m(v.level));
  f.set_on_ball(u, Rat(1) / spec.m(u.level) - Rat(1) / spec.m(v.level));
  return f;
}

// Applies the Laplacian as the rate-weighted sum of averaging defects:
// (L f) = sum_k C_k (f - f averaged over level-k balls).
template <class T>
LocallyConstantFunction<T> apply_laplacian(const SpectralModel<T>& model,
                                           const LocallyConstantFunction<T>& f) {
  model.validate();
  int res = f.resolution();
  LocallyConstantFunction<T> out = LocallyConstantFunction<T>::constant(model.tree, T(0));
  for (int k = model.tree.k_min; k < res; ++k) {
    T c = model.rate(k);
    if (c == T(0)) continue;
    LocallyConstantFunction<T> defect = f - f.project(k);
    defect *= c;
    out += defect;
  }
  return out;
}

// Same operator in telescoped spectral form:
// (L f) = sum_k lambda_k (P_{k+1} f - P_k f), exact on the window.
template <class T>
LocallyConstantFunction<T> apply_laplacian_spectral(const SpectralModel<T>& model,
                                                    const LocallyConstantFunction<T>& f) {
  model.validate();
  int res = f.resolution();
  LocallyConstantFunction<T> out = LocallyConstantFunction<T>::constant(model.tree, T(0));
  for (int k = model.tree.k_min; k < res; ++k) {
    T lam = model.eigenvalue(k);
    if (lam == T(0)) continue;
    LocallyConstantFunction<T> band = f.project(k + 1) - f.project(k);
    band *= lam;
    out += band;
  }
  return out;
}

// Dense generator on the level-n vertex set (entries indexed as in
// enumerate_level): row sums vanish, off-diagonal entries depend only on the
// confluent level of the two vertices.
inline RatMatrix truncated_generator(const SpectralModel<Rat>& model, int n) {
  model.validate();
  const LeveledTreeSpec& spec = model.tree;
  if (n <= spec.k_min || n > spec.k_max) fail_schema("generator level outside (k_min, k_max]");
  std::vector<VertexAddress> verts = enumerate_level(spec, n);
  const size_t N = verts.size();
  // Entry for confluent level w: lambda_{n-1} [i==j] - S(w) with
  // S(w) = sum_{k_min <= k <= min(w, n-1)} C_k m(n)/m(k).
  Rat mn = spec.m(n);
  std::vector<Rat> prefix(static_cast<size_t>(n - spec.k_min) + 1);
  Rat acc(0);
  for (int w = spec.k_min; w <= n; ++w) {
    if (w <= n - 1) acc += model.rate(w) * mn / spec.m(w);
    prefix[static_cast<size_t>(w - spec.k_min)] = acc;
  }
  RatMatrix L(N, N);
  Rat lam_top = model.eigenvalue(n - 1);
  for (size_t i = 0; i < N; ++i)
    for (size_t j = 0; j < N; ++j) {
      int w = confluent(spec, verts[i], verts[j]).level;
      L.at(i, j) = (i == j ? lam_top : Rat(0)) - prefix[static_cast<size_t>(w - spec.k_min)];
    }
  return L;
}

// Heat semigroup at time t on the level-n vertex set, assembled spectrally:
// exp(-t L_n) = P_{k_min} + sum_k exp(-t lambda_{k-1}) (P_k - P_{k-1}).
// Entries depend only on the confluent level, so a prefix table suffices.
template <class T>
Eigen::MatrixXd heat_kernel_matrix(const SpectralModel<T>& model, int n, double t) {
  model.validate();
  const LeveledTreeSpec& spec = model.tree;
  if (n <= spec.k_min || n > spec.k_max) fail_schema("heat level outside (k_min, k_max]");
  std::vector<VertexAddress> verts = enumerate_level(spec, n);
  const size_t N = verts.size();
  double mn = to_double(spec.m(n));
  // Coefficient of the level-k projection in the grouped spectral sum.
  std::vector<double> coef(static_cast<size_t>(n - spec.k_min) + 1, 0.0);
  auto expl = [&](int k) { return std::exp(-t * to_double(model.eigenvalue(k))); };
  for (int k = spec.k_min; k <= n; ++k) {
    double c;
    if (k == spec.k_min)
      c = 1.0 - expl(spec.k_min);
    else if (k < n)
      c = expl(k - 1) - expl(k);
    else
      c = expl(n - 1);
    coef[static_cast<size_t>(k - spec.k_min)] = c;
  }
  // Prefix sums S(w) = m(n) * sum_{k <= w} coef_k / m(k); entry = S(confluent).
  std::vector<double> prefix(coef.size(), 0.0);
  double acc = 0.0;
  for (int k = spec.k_min; k <= n; ++k) {
    acc += coef[static_cast<size_t>(k - spec.k_min)] / to_double(spec.m(k));
    prefix[static_cast<size_t>(k - spec.k_min)] = mn * acc;
  }
  Eigen::MatrixXd E(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  for (size_t i = 0; i < N; ++i)
    for (size_t j = 0; j < N; ++j) {
      int w = confluent(spec, verts[i], verts[j]).level;
      E(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          prefix[static_cast<size_t>(w - spec.k_min)];
    }
  return E;
}

// Radial heat density at time t: value of the heat kernel density (with
// respect to the reference measure) on each shell around the reference point,
// plus the value on the deepest ball.
struct HeatDensity {
  std::map<int, double> shell_value;  // shells k in [k_min, k_max)
  double bottom_value = 0.0;          // on the level-k_max ball
  double mass = 0.0;                  // integral over the window ball
};

template <class T>
HeatDensity heat_density(const SpectralModel<T>& model, double t) {
  model.validate();
  const LeveledTreeSpec& spec = model.tree;
  HeatDensity out;
  auto expl = [&](int k) { return std::exp(-t * to_double(model.eigenvalue(k))); };
  // Running sum of exp(-t lambda_{k-1}) (1/m_k - 1/m_{k-1}) from k_min+1 up.
  double base = 1.0 / to_double(spec.m(spec.k_min));
  double acc = base;
  for (int j = spec.k_min; j < spec.k_max; ++j) {
    // Value on shell j: partial sum through k = j, then the negative band of
    // phi_{j+1}, which contributes -exp(-t lambda_j)/m_j.
    double v = acc - expl(j) / to_double(spec.m(j));
    out.shell_value[j] = v;
    out.mass += v * to_double(spec.shell_mass(j));
    acc += expl(j) * (1.0 / to_double(spec.m(j + 1)) - 1.0 / to_double(spec.m(j)));
  }
  out.bottom_value = acc;
  out.mass += acc * to_double(spec.m(spec.k_max));
  return out;
}

// Radial law of the heat semigroup at time t as a measure: transforms are
// exp(-t lambda_{k-1}).
template <class T>
SphericalMeasure<double> heat_measure(const SpectralModel<T>& model, double t) {
  model.validate();
  const LeveledTreeSpec& spec = model.tree;
  std::map<int, double> h;
  for (int k = spec.k_min + 1; k <= spec.k_max; ++k)
    h[k] = std::exp(-t * to_double(model.eigenvalue(k - 1)));
  return measure_from_transform<double>(spec, spec.k_max, h, 1.0);
}

// ----- Stable scale model on a homogeneous window (all degrees p) -----

inline void require_homogeneous(const LeveledTreeSpec& spec, unsigned p) {
  for (unsigned d : spec.degrees)
    if (d != p) fail_schema("stable scale model needs all branching degrees equal to p");
}

inline Rat stable_lambda_exact(unsigned p, long alpha, int k) {
  return rat_pow(Rat(static_cast<long>(p)), static_cast<long>(alpha) * k);
}

inline double stable_lambda(unsigned p, double alpha, int k) {
  return std::pow(static_cast<double>(p), alpha * static_cast<double>(k));
}

// Model with eigenvalues lambda_k = p^{k alpha}.
inline SpectralModel<Rat> stable_model_exact(const LeveledTreeSpec& spec, unsigned p, long alpha) {
  require_homogeneous(spec, p);
  if (alpha <= 0) fail_schema("stability exponent must be positive");
  std::map<int, Rat> lam;
  for (int k = spec.k_min; k < spec.k_max; ++k) lam[k] = stable_lambda_exact(p, alpha, k);
  return model_from_eigenvalues<Rat>(spec, lam);
}

inline SpectralModel<double> stable_model_real(const LeveledTreeSpec& spec, unsigned p,
                                               double alpha) {
  require_homogeneous(spec, p);
  if (alpha <= 0) fail_schema("stability exponent must be positive");
  std::map<int, double> lam;
  for (int k = spec.k_min; k < spec.k_max; ++k) lam[k] = stable_lambda(p, alpha, k);
  return model_from_eigenvalues<double>(spec, lam);
}

// Normalizing constant of the fractional derivative kernel in dimension
// `dim`: (p^alpha - 1) / (1 - p^{-alpha-dim}).
inline Rat stable_kernel_constant_exact(unsigned p, long alpha, long dim = 1) {
  Rat pa = rat_pow(Rat(static_cast<long>(p)), alpha);
  Rat pd = rat_pow(Rat(static_cast<long>(p)), -(alpha + dim));
  return (pa - 1) / (1 - pd);
}

inline double stable_kernel_constant(unsigned p, double alpha, double dim = 1.0) {
  double pd = static_cast<double>(p);
  return (std::pow(pd, alpha) - 1.0) / (1.0 - std::pow(pd, -alpha - dim));
}

// Scale sequence whose attached spectrum is exactly lambda_k = p^{k alpha}:
// a_k = p^{k alpha} (p - 1) / (p^{alpha+1} - 1).
inline LevySequence stable_levy_sequence(const LeveledTreeSpec& spec, unsigned p, long alpha) {
  require_homogeneous(spec, p);
  Rat coef = Rat(static_cast<long>(p) - 1) /
             (rat_pow(Rat(static_cast<long>(p)), alpha + 1) - 1);
  LevySequence s;
  for (int k = spec.k_min; k <= spec.k_max; ++k)
    s.a[k] = coef * stable_lambda_exact(p, alpha, k);
  validate_levy(spec, s);
  return s;
}

// Windowed fractional derivative in integral form: for f locally constant,
// (D f)(x) = C(p, alpha) * integral over the window ball of
// (f(x) - f(y)) / |x - y|^{alpha+1} dy, with |.| the exponent metric of base
// p. The result is constant on each leaf ball of f, so the sparse partition
// survives; what the window drops is O(p^{k_min alpha}).
inline RatFunction stable_integral_apply(const LeveledTreeSpec& spec, unsigned p, long alpha,
                                         const RatFunction& f) {
  require_homogeneous(spec, p);
  if (alpha <= 0) fail_schema("stability exponent must be positive");
  Rat C = stable_kernel_constant_exact(p, alpha, 1);
  RatFunction out = RatFunction::constant(spec, Rat(0));
  f.for_each_leaf([&](const VertexAddress& u, const Rat& fu) {
    Rat total(0);
    // Integrals of f over the ancestor balls of u, innermost first.
    for (int j = spec.k_min; j < u.level; ++j) {
      VertexAddress aj = ancestor_at(spec, u, j);
      VertexAddress aj1 = ancestor_at(spec, u, j + 1);
      Rat shell_int = f.integral_on(aj) - f.integral_on(aj1);
      Rat shell_vol = spec.m(j) - spec.m(j + 1);
      // Kernel value on the shell at confluent level j: p^{j (alpha+1)}.
      Rat kernel = rat_pow(Rat(static_cast<long>(p)), (alpha + 1) * static_cast<long>(j));
      total += kernel * (fu * shell_vol - shell_int);
    }
    out.set_on_ball(u, C * total);
  });
  return out;
}

}  // namespace ultra
