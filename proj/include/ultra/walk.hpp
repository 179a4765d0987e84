#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <thread>
#include <vector>

#include "ultra/common.hpp"
#include "ultra/linalg.hpp"
#include "ultra/rng.hpp"
#include "ultra/spherical.hpp"
#include "ultra/tree.hpp"

namespace ultra {

// The four nearest-neighbour walk families. Tokens follow the config
// interface: ft41 drifts down a compact rooted tree, ft43 drops down the
// homogeneous noncompact tree, ft46/ft47 are the scale-sequence walks with a
// one-way spine (radial and per-ball anisotropic variants).
enum class WalkKind { ft41, ft43, ft46, ft47 };

inline const char* walk_kind_name(WalkKind k) {
  switch (k) {
    case WalkKind::ft41: return "ft41";
    case WalkKind::ft43: return "ft43";
    case WalkKind::ft46: return "ft46";
    case WalkKind::ft47: return "ft47";
  }
  return "?";
}

struct WalkKernel {
  WalkKind kind = WalkKind::ft41;
  LeveledTreeSpec tree;
  Rat p;                        // ft41: upward probability, 0 < p < 1/2
  unsigned base = 0;            // ft43: branching degree p
  long alpha = 0;               // ft43: stability exponent (integer for exact rows)
  Rat drop;                     // ft43: p^alpha
  LevySequence scales;          // ft46/ft47
  LevyMeasureAnisotropic levy;  // ft47 only
  std::optional<int> truncation;  // forced-up reflection at this level
  std::optional<int> spine_cut;   // ft46/47 variant: spine vertex at this level forced up

  // Downward/upward ratio: ft41 has (1-p)/p, ft43 has p^alpha.
  Rat ratio() const {
    switch (kind) {
      case WalkKind::ft41: return (1 - p) / p;
      case WalkKind::ft43: return drop;
      default: fail_schema("ratio defined for the drift and drop walks only");
    }
  }

  Rat f(int k) const {
    if (k < tree.k_min || k >= tree.k_max) fail_schema("scale ratio outside window");
    return scales.at(k) / scales.at(k + 1);
  }

  int bottom_level() const { return truncation ? *truncation : tree.k_max; }
};

inline WalkKernel walk_ft41(const LeveledTreeSpec& spec, const Rat& p) {
  spec.validate();
  if (spec.mode != Mode::compact) fail_schema("the drift walk needs a compact tree");
  if (!(p > 0 && p < Rat(1, 2)))
    fail_schema("drift walk needs 0 < p < 1/2; p >= 1/2 is not transient toward the boundary");
  WalkKernel k;
  k.kind = WalkKind::ft41;
  k.tree = spec;
  k.p = p;
  return k;
}

inline WalkKernel walk_ft43(const LeveledTreeSpec& spec, unsigned base, long alpha) {
  spec.validate();
  if (spec.mode != Mode::noncompact) fail_schema("the drop walk needs a noncompact tree");
  for (unsigned d : spec.degrees)
    if (d != base) fail_schema("the drop walk needs all branching degrees equal to its base");
  if (alpha <= 0) fail_schema("the drop walk needs a positive integer exponent");
  WalkKernel k;
  k.kind = WalkKind::ft43;
  k.tree = spec;
  k.base = base;
  k.alpha = alpha;
  k.drop = rat_pow(Rat(static_cast<long>(base)), alpha);
  return k;
}

inline void check_scale_transience(const LeveledTreeSpec& spec, const LevySequence& s) {
  bool strict = false;
  for (int k = spec.k_min; k < spec.k_max; ++k)
    if (s.at(k) < s.at(k + 1)) strict = true;
  if (!strict) fail_schema("flat scale sequence gives a non-transient walk");
}

inline WalkKernel walk_ft46(const LeveledTreeSpec& spec, const LevySequence& s) {
  spec.validate();
  if (spec.mode != Mode::noncompact) fail_schema("scale walks need a noncompact tree");
  validate_levy(spec, s);
  check_scale_transience(spec, s);
  WalkKernel k;
  k.kind = WalkKind::ft46;
  k.tree = spec;
  k.scales = s;
  return k;
}

inline WalkKernel walk_ft47(const LevyMeasureAnisotropic& F) {
  F.validate();
  if (F.tree.mode != Mode::noncompact) fail_schema("scale walks need a noncompact tree");
  if (F.depth != F.tree.k_max)
    fail_schema("the anisotropic walk needs per-ball masses down to the window bottom");
  LevySequence s = F.derived_scales();
  validate_levy(F.tree, s);
  check_scale_transience(F.tree, s);
  WalkKernel k;
  k.kind = WalkKind::ft47;
  k.tree = F.tree;
  k.scales = s;
  k.levy = F;
  return k;
}

inline WalkKernel truncate_walk(WalkKernel k, int n) {
  if (n <= k.tree.k_min || n > k.tree.k_max) fail_schema("truncation level outside window");
  k.truncation = n;
  return k;
}

// Variant of the scale walks that removes the subtree below the spine vertex
// at level n and sends that vertex up with probability 1.
inline WalkKernel cut_spine(WalkKernel k, int n) {
  if (k.kind != WalkKind::ft46 && k.kind != WalkKind::ft47)
    fail_schema("the spine cut applies to scale walks only");
  if (n <= k.tree.k_min || n > k.tree.k_max) fail_schema("spine cut level outside window");
  k.spine_cut = n;
  return k;
}

struct Move {
  VertexAddress to;
  Rat prob;
};

inline Rat up_probability(const WalkKernel& K, const VertexAddress& u) {
  validate_vertex(K.tree, u);
  if (K.truncation && u.level == *K.truncation) return Rat(1);
  if (K.spine_cut && u.level == *K.spine_cut && is_spine(u)) return Rat(1);
  switch (K.kind) {
    case WalkKind::ft41:
      return u.level == K.tree.k_min ? Rat(0) : K.p;
    case WalkKind::ft43:
      return Rat(1) / (1 + K.drop);
    case WalkKind::ft46:
    case WalkKind::ft47: {
      int j = subtree_index(K.tree, u);
      if (j >= K.tree.k_max)
        fail_schema("the spine vertex at the window bottom has no defined row");
      Rat fj = K.f(j);
      return fj / (1 + fj);
    }
  }
  fail_assert("unknown walk kind");
}

inline Rat down_total(const WalkKernel& K, const VertexAddress& u) {
  return Rat(1) - up_probability(K, u);
}

// Materialized child moves; only meaningful above the kernel's bottom level.
inline std::vector<Move> down_moves(const WalkKernel& K, const VertexAddress& u) {
  if (u.level >= K.bottom_level()) fail_schema("no materialized children at the bottom level");
  if (K.spine_cut && u.level == *K.spine_cut && is_spine(u)) return {};
  const LeveledTreeSpec& spec = K.tree;
  unsigned q = spec.q(u.level);
  Rat total = down_total(K, u);
  std::vector<Move> out;
  out.reserve(q);
  switch (K.kind) {
    case WalkKind::ft41:
    case WalkKind::ft43: {
      Rat each = total / q;
      for (unsigned d = 0; d < q; ++d) out.push_back({child(spec, u, d), each});
      return out;
    }
    case WalkKind::ft46: {
      if (is_spine(u)) {
        out.push_back({child(spec, u, 0), Rat(0)});  // one-way spine edge
        Rat each = total / Rat(static_cast<long>(q) - 1);
        for (unsigned d = 1; d < q; ++d) out.push_back({child(spec, u, d), each});
      } else {
        Rat each = total / q;
        for (unsigned d = 0; d < q; ++d) out.push_back({child(spec, u, d), each});
      }
      return out;
    }
    case WalkKind::ft47: {
      if (is_spine(u)) {
        out.push_back({child(spec, u, 0), Rat(0)});
        Rat shell = K.levy.spine_shell(u.level);
        if (shell == 0) {
          // No mass in this side shell: fall back to the radial split.
          Rat each = total / Rat(static_cast<long>(q) - 1);
          for (unsigned d = 1; d < q; ++d) out.push_back({child(spec, u, d), each});
        } else {
          for (unsigned d = 1; d < q; ++d) {
            VertexAddress w = child(spec, u, d);
            out.push_back({w, total * K.levy.ball_mass(w) / shell});
          }
        }
      } else {
        Rat fu = K.levy.ball_mass(u);
        if (fu == 0) {
          Rat each = total / q;
          for (unsigned d = 0; d < q; ++d) out.push_back({child(spec, u, d), each});
        } else {
          for (unsigned d = 0; d < q; ++d) {
            VertexAddress w = child(spec, u, d);
            out.push_back({w, total * K.levy.ball_mass(w) / fu});
          }
        }
      }
      return out;
    }
  }
  fail_assert("unknown walk kind");
}

// Materialized row of the kernel. The noncompact root's upward move leaves
// the window and is not listed; its probability is up_probability(root).
inline std::vector<Move> kernel_row(const WalkKernel& K, const VertexAddress& u) {
  std::vector<Move> out;
  Rat up = up_probability(K, u);
  if (up > 0 && u.level > K.tree.k_min) out.push_back({parent(K.tree, u), up});
  if (u.level < K.bottom_level() && !(K.spine_cut && u.level == *K.spine_cut && is_spine(u)))
    for (Move& m : down_moves(K, u)) out.push_back(std::move(m));
  return out;
}

// Upward step probability inside the (virtual) subtree hanging below a
// vertex at the materialization boundary.
inline Rat subtree_up_step(const WalkKernel& K, const VertexAddress& u) {
  switch (K.kind) {
    case WalkKind::ft41: return K.p;
    case WalkKind::ft43: return Rat(1) / (1 + K.drop);
    case WalkKind::ft46:
    case WalkKind::ft47: {
      // Children of u stay in the side subtree indexed by u, except that the
      // spine vertex dives only into its own side subtree (the spine edge
      // carries probability 0).
      int j = subtree_index(K.tree, u);
      Rat fj = K.f(j);
      return fj / (1 + fj);
    }
  }
  fail_assert("unknown walk kind");
}

// Probability that one (virtual) downward step from u eventually returns to
// u: the upward passage min(1, beta/(1-beta)) of the constant-rate subtree.
inline Rat bottom_return(const WalkKernel& K, const VertexAddress& u) {
  Rat beta = subtree_up_step(K, u);
  if (2 * beta >= 1) return Rat(1);
  return beta / (1 - beta);
}

// ----- Exact first-passage and Green quantities -----

struct PassageEntry {
  Rat f_up;    // first-passage probability to the parent
  Rat f_down;  // first-passage probability from the parent to this vertex
  Rat g_self;  // expected visits starting at the vertex
  Rat g_root;  // Green value toward the window root
};

struct PassageTable {
  WalkKernel kernel;
  int depth = 0;
  std::map<VertexAddress, PassageEntry> at;

  const PassageEntry& entry(const VertexAddress& u) const {
    auto it = at.find(u);
    if (it == at.end()) fail_schema("vertex missing from the passage table");
    return it->second;
  }
};

// Computes exact first-passage probabilities and Green values on the levels
// [k_min, depth]. Virtual subtrees below `depth` enter through the exact
// one-dive return probability, so every value is an exact infinite-tree (or
// truncated-kernel) quantity.
inline PassageTable first_passage(const WalkKernel& K, int depth) {
  const LeveledTreeSpec& spec = K.tree;
  if (depth <= spec.k_min || depth > K.bottom_level())
    fail_schema("passage depth outside (k_min, bottom level]");
  spec.check_enumerable(depth);
  PassageTable T;
  T.kernel = K;
  T.depth = depth;

  bool scale_kind = (K.kind == WalkKind::ft46 || K.kind == WalkKind::ft47);
  auto skip = [&](const VertexAddress& u) {
    // The spine vertex at the window bottom has no defined row; it is also
    // unreachable (the spine edge above it carries probability 0).
    return scale_kind && u.level == spec.k_max && is_spine(u) && !K.truncation;
  };

  // Upward passes, deepest level first.
  for (int lvl = depth; lvl > spec.k_min; --lvl) {
    for (const VertexAddress& u : enumerate_level(spec, lvl)) {
      if (skip(u)) continue;
      Rat below(0);
      if (u.level < depth) {
        for (const Move& m : down_moves(K, u)) {
          if (m.prob == 0) continue;
          below += m.prob * T.at.at(m.to).f_up;
        }
      } else if (down_total(K, u) > 0) {
        below = down_total(K, u) * bottom_return(K, u);
      }
      Rat up = up_probability(K, u);
      Rat denom = 1 - below;
      if (denom <= 0) fail_assert("walk returns below almost surely; no upward passage");
      PassageEntry e;
      e.f_up = up / denom;
      T.at[u] = e;
    }
  }
  // Root entry.
  {
    VertexAddress root = root_vertex(spec);
    PassageEntry e;
    e.f_up = 0;
    e.f_down = 0;
    T.at[root] = e;
  }
  // Downward pass, shallow to deep: first passage from the parent.
  for (int lvl = spec.k_min + 1; lvl <= depth; ++lvl) {
    for (const VertexAddress& u : enumerate_level(spec, lvl)) {
      if (skip(u)) continue;
      VertexAddress up_v = parent(spec, u);
      PassageEntry& pe = T.at.at(up_v);
      Rat avoid = up_probability(K, up_v) * pe.f_down;
      for (const Move& m : down_moves(K, up_v)) {
        if (m.to == u || m.prob == 0) continue;
        avoid += m.prob * T.at.at(m.to).f_up;
      }
      Rat direct(0);
      for (const Move& m : down_moves(K, up_v))
        if (m.to == u) direct = m.prob;
      Rat denom = 1 - avoid;
      if (denom <= 0) fail_assert("no transient route from the parent");
      T.at.at(u).f_down = direct / denom;
    }
  }
  // Green values.
  for (auto& [u, e] : T.at) {
    Rat ret = up_probability(K, u) * e.f_down;
    if (u.level < depth) {
      for (const Move& m : down_moves(K, u)) {
        if (m.prob == 0) continue;
        ret += m.prob * T.at.at(m.to).f_up;
      }
    } else if (down_total(K, u) > 0) {
      ret += down_total(K, u) * bottom_return(K, u);
    }
    if (ret >= 1) fail_assert("recurrent vertex in passage table");
    e.g_self = Rat(1) / (1 - ret);
  }
  // Green toward the window root: multiply first-passage values up the
  // ancestor chain.
  VertexAddress root = root_vertex(spec);
  Rat g_root_self = T.at.at(root).g_self;
  for (auto& [u, e] : T.at) {
    Rat f(1);
    VertexAddress v = u;
    while (v.level > spec.k_min) {
      f *= T.at.at(v).f_up;
      v = parent(spec, v);
    }
    e.g_root = f * g_root_self;
  }
  return T;
}

// First-passage probability between two table vertices along the tree path.
inline Rat passage_product(const PassageTable& T, const VertexAddress& from,
                           const VertexAddress& to) {
  const LeveledTreeSpec& spec = T.kernel.tree;
  VertexAddress w = confluent(spec, from, to);
  Rat f(1);
  VertexAddress v = from;
  while (v.level > w.level) {
    f *= T.entry(v).f_up;
    v = parent(spec, v);
  }
  // Descend from w to `to`: multiply the stored parent-to-child passages.
  std::vector<VertexAddress> chain;
  v = to;
  while (v.level > w.level) {
    chain.push_back(v);
    v = parent(spec, v);
  }
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) f *= T.entry(*it).f_down;
  return f;
}

inline Rat green_between(const PassageTable& T, const VertexAddress& from,
                         const VertexAddress& to) {
  return passage_product(T, from, to) * T.entry(to).g_self;
}

// Conductances of a reversible kernel, normalized to 1 at the window root.
inline std::map<VertexAddress, Rat> conductances(const WalkKernel& K, int depth) {
  if (K.kind != WalkKind::ft41 && K.kind != WalkKind::ft43)
    fail_schema("conductances need a reversible kernel (one-way spine edges break reversibility)");
  const LeveledTreeSpec& spec = K.tree;
  std::map<VertexAddress, Rat> c;
  c[root_vertex(spec)] = 1;
  for (int lvl = spec.k_min; lvl < depth; ++lvl)
    for (const VertexAddress& u : enumerate_level(spec, lvl)) {
      Rat cu = c.at(u);
      for (const Move& m : down_moves(K, u)) {
        Rat back = up_probability(K, m.to);
        if (back == 0) fail_assert("one-way edge in a reversible kernel");
        c[m.to] = cu * m.prob / back;
      }
    }
  return c;
}

// ----- Drift walk (ft41): sphere hitting law -----

// Probability of ascending j levels before returning to the start sphere,
// for the reflected start: (r-1)/(r^j - 1) with r the down/up ratio.
inline Rat ascent_probability(const Rat& ratio, int j) {
  if (j <= 0) return Rat(1);
  return (ratio - 1) / (rat_pow(ratio, j) - 1);
}

// Per-vertex mass of the sphere-n hitting law at confluent level lvl with the
// start (lvl = n is the start vertex itself).
inline Rat drift_hitting_value(const LeveledTreeSpec& spec, const Rat& ratio, int n, int lvl) {
  if (lvl < 0 || lvl > n) fail_schema("confluent level outside [0, n]");
  int k = n - lvl;
  Rat sum(0);
  for (int j = std::max(1, k); j <= n - 1; ++j) {
    Rat landing = spec.m(n) / spec.m(n - j);
    sum += (ascent_probability(ratio, j) - ascent_probability(ratio, j + 1)) * landing;
  }
  sum += ascent_probability(ratio, n) * spec.m(n);
  return sum;
}

// The hitting law as a radial measure around the start vertex: shell `lvl`
// collects the vertices whose confluent with the start sits at level lvl.
inline SphericalMeasure<Rat> drift_hitting_law(const WalkKernel& K, int n) {
  if (K.kind != WalkKind::ft41) fail_schema("hitting law needs the drift walk kind");
  const LeveledTreeSpec& spec = K.tree;
  if (n <= 0 || n > spec.k_max) fail_schema("sphere level outside window");
  SphericalMeasure<Rat> mu;
  mu.resolution = n;
  for (int lvl = 0; lvl < n; ++lvl) {
    Rat count = (spec.m(lvl) - spec.m(lvl + 1)) / spec.m(n);
    mu.shells[lvl] = count * drift_hitting_value(spec, K.ratio(), n, lvl);
  }
  mu.atom = drift_hitting_value(spec, K.ratio(), n, n);
  return mu;
}

// Spherical transform of the hitting law in closed form; 1 for k <= 0.
inline Rat drift_transform(const Rat& ratio, int n, int k) {
  if (k <= 0) return Rat(1);
  if (k > n) fail_schema("transform index beyond the hitting resolution");
  return 1 - (ratio - 1) / (rat_pow(ratio, n - k + 1) - 1);
}

// Scaling count: 1 + r + ... + r^{n-1}.
inline Rat drift_scale(const Rat& ratio, int n) {
  return (rat_pow(ratio, n) - 1) / (ratio - 1);
}

// Green value toward the root in closed form: r^{1-k}/(r-1) on sphere k.
inline Rat drift_green_root(const Rat& ratio, int k) {
  return rat_pow(ratio, 1 - k) / (ratio - 1);
}

// Exact absorbing-chain solve of the sphere-n hitting law: rows of the first
// re-entry matrix from the forced-up start. Returns the distribution over
// level-n vertices for the given start vertex.
inline std::map<VertexAddress, Rat> drift_hitting_solve(const WalkKernel& K, int n,
                                                        const VertexAddress& start) {
  if (K.kind != WalkKind::ft41) fail_schema("hitting solve needs the drift walk kind");
  const LeveledTreeSpec& spec = K.tree;
  if (start.level != n) fail_schema("start must lie on the target sphere");
  spec.check_enumerable(n);
  // Interior states: levels 0..n-1. Targets: level-n vertices (absorbing).
  std::vector<VertexAddress> interior;
  std::map<VertexAddress, size_t> index;
  for (int lvl = 0; lvl < n; ++lvl)
    for (const VertexAddress& u : enumerate_level(spec, lvl)) {
      index[u] = interior.size();
      interior.push_back(u);
    }
  std::vector<VertexAddress> targets = enumerate_level(spec, n);
  std::map<VertexAddress, size_t> tindex;
  for (size_t i = 0; i < targets.size(); ++i) tindex[targets[i]] = i;
  const size_t ni = interior.size(), nt = targets.size();
  RatMatrix A(ni, ni);  // I - Q
  RatMatrix R(ni, nt);
  for (size_t i = 0; i < ni; ++i) {
    A.at(i, i) = 1;
    const VertexAddress& u = interior[i];
    Rat up = up_probability(K, u);
    if (up > 0) A.at(i, index.at(parent(spec, u))) -= up;
    for (const Move& m : down_moves(K, u)) {
      if (m.to.level == n)
        R.at(i, tindex.at(m.to)) += m.prob;
      else
        A.at(i, index.at(m.to)) -= m.prob;
    }
  }
  RatMatrix H = rat_solve(A, R);
  // The forced first step moves the start to its parent.
  size_t row = index.at(parent(spec, start));
  std::map<VertexAddress, Rat> out;
  for (size_t j = 0; j < nt; ++j) out[targets[j]] = H.at(row, j);
  return out;
}

// ----- Drop walk (ft43): closed forms -----

inline Rat drop_transform(const WalkKernel& K, int n, int k) {
  if (K.kind != WalkKind::ft43) fail_schema("drop transform needs the drop walk kind");
  if (k >= n) return Rat(0);
  return 1 - (K.drop - 1) / (rat_pow(K.drop, n + 1 - k) - 1);
}

inline Rat drop_scale(const WalkKernel& K, int n) {
  return rat_pow(K.drop, n + 1) / (K.drop - 1);
}

// ----- Scale walks (ft46/ft47): limit distributions -----

struct BoundaryLaw {
  int resolution = 0;
  std::map<VertexAddress, Rat> ball;  // masses on non-spine level-`resolution` balls
  Rat spine = 0;                      // mass of the spine ball (always 0 in the limit laws)
  Rat escape = 0;                     // mass that left the window upward

  Rat total() const {
    Rat s = spine + escape;
    for (const auto& [u, w] : ball) s += w;
    return s;
  }
};

inline Rat scale_transform(const LeveledTreeSpec& spec, const LevySequence& s, int n, int k) {
  if (k <= spec.k_min || k > spec.k_max) fail_schema("transform index needs k_min < k <= k_max");
  Rat q(static_cast<long>(spec.q(k - 1)));
  Rat lam = (q * s.at(k) - s.at(k - 1)) / (q - 1);  // lambda_{k-1}
  return 1 - lam / s.at(n);
}

// Radial limit law of the ft46 walk started at the spine vertex o_{n-1}.
inline SphericalMeasure<Rat> limit_distribution_ft46(const WalkKernel& K, int n) {
  if (K.kind != WalkKind::ft46) fail_schema("radial limit law needs the radial scale walk");
  const LeveledTreeSpec& spec = K.tree;
  if (n <= spec.k_min || n > spec.k_max) fail_schema("resolution outside window");
  SphericalMeasure<Rat> mu;
  mu.resolution = n;
  for (int k = spec.k_min; k < n; ++k)
    mu.shells[k] = (K.scales.at(k + 1) - K.scales.at(k)) / K.scales.at(n);
  mu.atom = 0;
  mu.escape = K.scales.at(spec.k_min) / K.scales.at(n);
  return mu;
}

// Per-ball limit law of the ft47 walk started at o_{n-1}: mass F(u)/a_n on
// each non-spine level-n ball.
inline BoundaryLaw limit_distribution_ft47(const WalkKernel& K, int n) {
  if (K.kind != WalkKind::ft47) fail_schema("per-ball limit law needs the anisotropic walk");
  const LeveledTreeSpec& spec = K.tree;
  if (n <= spec.k_min || n > spec.k_max) fail_schema("resolution outside window");
  spec.check_enumerable(n);
  BoundaryLaw law;
  law.resolution = n;
  Rat an = K.scales.at(n);
  for (const VertexAddress& u : enumerate_level(spec, n)) {
    if (is_spine(u)) continue;
    law.ball[u] = K.levy.ball_mass(u) / an;
  }
  law.escape = K.scales.at(spec.k_min) / an;
  return law;
}

// Spreads a radial law into per-ball masses (uniform within each shell).
inline BoundaryLaw radial_law_per_ball(const LeveledTreeSpec& spec,
                                       const SphericalMeasure<Rat>& mu, int n) {
  if (mu.resolution != n) fail_schema("radial law resolution mismatch");
  spec.check_enumerable(n);
  BoundaryLaw law;
  law.resolution = n;
  law.escape = mu.escape;
  law.spine = mu.atom;
  for (const VertexAddress& u : enumerate_level(spec, n)) {
    if (is_spine(u)) continue;
    int lvl = subtree_index(spec, u);
    auto it = mu.shells.find(lvl);
    Rat w = it == mu.shells.end() ? Rat(0) : it->second;
    // Vertices in shell lvl: ball count (m_lvl - m_{lvl+1})/m_n.
    Rat count = (spec.m(lvl) - spec.m(lvl + 1)) / spec.m(n);
    law.ball[u] = w / count;
  }
  return law;
}

// Independent last-exit computation of the limit law: the mass of a boundary
// ball is the expected number of visits to its vertex times the probability
// of a final dive below it.
inline BoundaryLaw last_exit_solve(const WalkKernel& K, int n) {
  if (K.kind != WalkKind::ft46 && K.kind != WalkKind::ft47)
    fail_schema("last-exit laws are for the scale walks");
  const LeveledTreeSpec& spec = K.tree;
  if (n <= spec.k_min || n > spec.k_max) fail_schema("resolution outside window");
  PassageTable T = first_passage(K, n);
  VertexAddress start = spine_vertex(spec, n - 1);
  BoundaryLaw law;
  law.resolution = n;
  for (const VertexAddress& u : enumerate_level(spec, n)) {
    if (is_spine(u)) continue;
    Rat G = green_between(T, start, u);
    Rat esc = down_total(K, u) * (1 - bottom_return(K, u));
    law.ball[u] = G * esc;
  }
  law.spine = 0;
  VertexAddress root = root_vertex(spec);
  law.escape = green_between(T, start, root) * up_probability(K, root);
  return law;
}

// ----- Harmonic measure (any transient kind) -----

// nu_start(boundary ball below u). A trajectory ends below u iff it is
// eventually absorbed in u's subtree; renewal at visits to u gives the stay
// probability s_u = (1 - F_up(u)) / (1 - F_up(u) F_down(u)). Starting outside
// the subtree, the end lies below u iff the walk hits u and then stays:
// F(start -> u) s_u. Starting inside, the end can stay below u without ever
// visiting u, so count the complement: leaving forever costs reaching u and
// then escaping, 1 - F(start -> u)(1 - s_u).
inline Rat harmonic_measure(const PassageTable& T, const VertexAddress& start,
                            const VertexAddress& u) {
  if (u.level <= T.kernel.tree.k_min) fail_schema("harmonic measure needs a non-root vertex");
  const PassageEntry& e = T.entry(u);
  Rat stay = (1 - e.f_up) / (1 - e.f_up * e.f_down);
  Rat reach = passage_product(T, start, u);
  if (is_ancestor(u, start) || u == start) return 1 - reach * (1 - stay);
  return reach * stay;
}

inline Rat harmonic_measure(const PassageTable& T, const VertexAddress& u) {
  return harmonic_measure(T, root_vertex(T.kernel.tree), u);
}

// ----- Monte Carlo -----

struct SimulateOptions {
  VertexAddress start;
  int resolution = 0;
  std::uint64_t trajectories = 0;
  std::uint64_t seed = 0;
  std::uint64_t max_steps = 50'000'000;
  int threads = 0;  // 0: use ULTRADIFF_THREADS or 1
};

struct SimulateResult {
  std::map<VertexAddress, std::uint64_t> hits;  // resolution-level ball of the limit end
  std::uint64_t escaped = 0;
  std::uint64_t interior_steps = 0;
  std::uint64_t interior_up_steps = 0;
};

namespace detail {

struct RowThresholds {
  double up = 0.0;
  double self = 0.0;                   // bottom rows: collapsed dive that returned
  std::vector<double> child_cut;       // cumulative thresholds over children
  std::vector<unsigned> child_digit;
};

inline RowThresholds make_row(const WalkKernel& K, const VertexAddress& u) {
  RowThresholds r;
  Rat up = up_probability(K, u);
  r.up = to_double(up);
  if (u.level >= K.bottom_level()) {
    Rat dt = down_total(K, u);
    r.self = r.up + to_double(dt * bottom_return(K, u));
    return r;
  }
  r.self = r.up;
  double acc = r.up;
  for (const Move& m : down_moves(K, u)) {
    if (m.prob == 0) continue;
    acc += to_double(m.prob);
    r.child_cut.push_back(acc);
    r.child_digit.push_back(m.to.digits.back());
  }
  if (!r.child_cut.empty()) r.child_cut.back() = 1.0;  // guard against rounding gaps
  return r;
}

}  // namespace detail

inline int thread_count_from_env() {
  if (const char* env = std::getenv("ULTRADIFF_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// Samples limit boundary balls. Exactness of the sampling scheme: at the
// window bottom a downward dive either returns (probability handled in the
// collapsed self-move) or traps the walk below the current vertex forever,
// which pins the resolution-level ball without materializing deeper levels.
inline SimulateResult simulate(const WalkKernel& K, const SimulateOptions& opt) {
  const LeveledTreeSpec& spec = K.tree;
  validate_vertex(spec, opt.start);
  if (opt.resolution <= spec.k_min || opt.resolution > K.bottom_level())
    fail_schema("simulation resolution outside (k_min, bottom level]");
  if (K.truncation) fail_schema("truncated kernels do not converge to the boundary");
  if (opt.trajectories == 0) fail_schema("need at least one trajectory");
  spec.check_enumerable(opt.resolution);

  int n_threads = opt.threads > 0 ? opt.threads : thread_count_from_env();
  std::uint64_t per = opt.trajectories / static_cast<std::uint64_t>(n_threads);
  std::vector<SimulateResult> parts(static_cast<size_t>(n_threads));

  auto run_range = [&](std::uint64_t lo, std::uint64_t hi, SimulateResult& res) {
    std::map<VertexAddress, detail::RowThresholds> cache;
    auto row_of = [&](const VertexAddress& u) -> const detail::RowThresholds& {
      auto it = cache.find(u);
      if (it == cache.end()) it = cache.emplace(u, detail::make_row(K, u)).first;
      return it->second;
    };
    const bool noncompact = spec.mode == Mode::noncompact;
    for (std::uint64_t traj = lo; traj < hi; ++traj) {
      CounterRng rng(opt.seed, traj);
      VertexAddress u = opt.start;
      std::uint64_t steps = 0;
      while (true) {
        if (++steps > opt.max_steps)
          fail_assert("trajectory exceeded the step cap before absorption");
        const detail::RowThresholds& row = row_of(u);
        double x = rng.next_double();
        bool bottom = u.level >= K.bottom_level();
        bool interior = u.level > spec.k_min && !bottom;
        if (interior) {
          res.interior_steps += 1;
          if (x < row.up) res.interior_up_steps += 1;
        }
        if (x < row.up) {
          if (u.level == spec.k_min) {
            if (!noncompact) fail_assert("upward move at a compact root");
            res.escaped += 1;
            break;
          }
          u = parent(spec, u);
          continue;
        }
        if (bottom) {
          if (x < row.self) continue;  // dived and returned
          res.hits[ancestor_at(spec, u, opt.resolution)] += 1;
          break;
        }
        auto it = std::upper_bound(row.child_cut.begin(), row.child_cut.end(), x);
        if (it == row.child_cut.end()) --it;
        size_t pick = static_cast<size_t>(it - row.child_cut.begin());
        u = child(spec, u, row.child_digit[pick]);
      }
    }
  };

  std::vector<std::thread> workers;
  std::uint64_t lo = 0;
  for (int t = 0; t < n_threads; ++t) {
    std::uint64_t hi = (t == n_threads - 1) ? opt.trajectories : lo + per;
    workers.emplace_back(run_range, lo, hi, std::ref(parts[static_cast<size_t>(t)]));
    lo = hi;
  }
  for (std::thread& w : workers) w.join();

  SimulateResult out;
  for (const SimulateResult& p : parts) {
    for (const auto& [u, c] : p.hits) out.hits[u] += c;
    out.escaped += p.escaped;
    out.interior_steps += p.interior_steps;
    out.interior_up_steps += p.interior_up_steps;
  }
  return out;
}

}  // namespace ultra
