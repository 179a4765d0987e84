#pragma once

#include <map>
#include <vector>

#include "ultra/common.hpp"
#include "ultra/linalg.hpp"
#include "ultra/tree.hpp"
#include "ultra/walk.hpp"

namespace ultra {

// ----- Martin kernel -----

// K(u, x) = F(u, u^x)/F(o, u^x) where u^x is the confluent of the vertex
// with the boundary point and o the window root.
inline Rat martin_kernel(const PassageTable& T, const VertexAddress& u, const BoundaryPoint& x) {
  const LeveledTreeSpec& spec = T.kernel.tree;
  VertexAddress w = confluent(spec, u, x);
  VertexAddress root = root_vertex(spec);
  return passage_product(T, u, w) / passage_product(T, root, w);
}

// Martin kernel toward the upper end of the spine (the reference end of the
// noncompact construction). The ratio F(v, b)/F(o, b) over spine vertices b
// above both arguments is b-free; we evaluate it at the highest needed one.
inline Rat martin_kernel_spine(const PassageTable& T, const VertexAddress& v) {
  const LeveledTreeSpec& spec = T.kernel.tree;
  if (spec.mode != Mode::noncompact) fail_schema("the spine end exists in noncompact mode only");
  int s = subtree_index(spec, v);
  int m = std::min(s, 0);
  VertexAddress b = spine_vertex(spec, m);
  VertexAddress o = spine_vertex(spec, 0);
  return passage_product(T, v, b) / passage_product(T, o, b);
}

// ----- Naim kernel -----

// Theta_base(x, y) = c(base) / (G(base,base) F(base,w) F(w,base)) at the
// confluent w of two distinct boundary points.
inline Rat naim_at_confluent(const PassageTable& T, const std::map<VertexAddress, Rat>& cond,
                             const VertexAddress& base, const VertexAddress& w) {
  Rat g = T.entry(base).g_self;
  Rat down = passage_product(T, base, w);
  Rat up = passage_product(T, w, base);
  return cond.at(base) / (g * down * up);
}

inline Rat naim_kernel(const PassageTable& T, const std::map<VertexAddress, Rat>& cond,
                       const BoundaryPoint& x, const BoundaryPoint& y) {
  const LeveledTreeSpec& spec = T.kernel.tree;
  if (x.digits == y.digits)
    fail_assert("Naim kernel at coincident boundary points is infinite");
  VertexAddress w = confluent(spec, x, y);
  return naim_at_confluent(T, cond, root_vertex(spec), w);
}

// ----- Boundary generator -----

// The jump generator on functions over level-n boundary balls:
//   (L f)_i = sum_j Theta(i,j) nu_j (f_i - f_j).
// Its spectrum is {1/G(v, o) : v interior} together with 0.
inline RatMatrix boundary_generator(const PassageTable& T, const std::map<VertexAddress, Rat>& cond,
                                    int n, std::vector<VertexAddress>& vertices_out) {
  const LeveledTreeSpec& spec = T.kernel.tree;
  if (n <= spec.k_min || n > T.depth) fail_schema("generator resolution outside the table");
  vertices_out = enumerate_level(spec, n);
  const size_t N = vertices_out.size();
  VertexAddress root = root_vertex(spec);
  std::vector<Rat> nu(N);
  for (size_t i = 0; i < N; ++i) nu[i] = harmonic_measure(T, vertices_out[i]);
  RatMatrix L(N, N);
  for (size_t i = 0; i < N; ++i)
    for (size_t j = 0; j < N; ++j) {
      if (i == j) continue;
      VertexAddress w = confluent(spec, vertices_out[i], vertices_out[j]);
      Rat theta = naim_at_confluent(T, cond, root, w);
      L.at(i, j) = -theta * nu[j];
      L.at(i, i) += theta * nu[j];
    }
  return L;
}

// Pair eigenfunction of the boundary generator: supported on the ball below
// v, with value jumps across the child u. Expected eigenvalue: 1/G(v, o).
inline std::vector<Rat> generator_pair_function(const PassageTable& T,
                                                const std::vector<VertexAddress>& vertices,
                                                const VertexAddress& v, const VertexAddress& u) {
  if (!(u.level == v.level + 1)) fail_schema("pair function needs a parent and one of its children");
  Rat nu_v(0), nu_u(0);
  std::vector<int> region(vertices.size(), 0);
  for (size_t i = 0; i < vertices.size(); ++i) {
    if (is_ancestor(v, vertices[i]) || v == vertices[i]) {
      Rat m = harmonic_measure(T, vertices[i]);
      region[i] = 1;
      nu_v += m;
      if (is_ancestor(u, vertices[i]) || u == vertices[i]) {
        region[i] = 2;
        nu_u += m;
      }
    }
  }
  if (nu_u == 0 || nu_v == 0) fail_assert("pair function over zero-measure balls");
  std::vector<Rat> f(vertices.size(), Rat(0));
  for (size_t i = 0; i < vertices.size(); ++i) {
    if (region[i] == 2)
      f[i] = Rat(1) / nu_u - Rat(1) / nu_v;
    else if (region[i] == 1)
      f[i] = -Rat(1) / nu_v;
  }
  return f;
}

// ----- Dirichlet energy (dual routes, exact) -----

// Variant of the passage computation for the finite network truncated at
// level n with absorbing bottom: no virtual dives, bottom vertices never
// move, and the noncompact root's missing upward edge is renormalized away
// (the network chain redistributes that mass over the root's children).
inline PassageTable first_passage_absorbing(const WalkKernel& K, int n) {
  const LeveledTreeSpec& spec = K.tree;
  if (n <= spec.k_min || n > K.bottom_level()) fail_schema("depth outside (k_min, bottom level]");
  spec.check_enumerable(n);
  PassageTable T;
  T.kernel = K;
  T.depth = n;
  auto net_up = [&](const VertexAddress& u) -> Rat {
    return u.level == spec.k_min ? Rat(0) : up_probability(K, u);
  };
  auto net_moves = [&](const VertexAddress& u) {
    std::vector<Move> moves = down_moves(K, u);
    if (u.level == spec.k_min) {
      Rat keep = 1 - up_probability(K, u);
      if (keep <= 0) fail_assert("network root with no downward mass");
      for (Move& m : moves) m.prob /= keep;
    }
    return moves;
  };
  for (int lvl = n; lvl > spec.k_min; --lvl)
    for (const VertexAddress& u : enumerate_level(spec, lvl)) {
      PassageEntry e;
      if (lvl == n) {
        e.f_up = 0;  // absorbed
      } else {
        Rat below(0);
        for (const Move& m : net_moves(u)) {
          if (m.prob == 0) continue;
          below += m.prob * T.at.at(m.to).f_up;
        }
        Rat denom = 1 - below;
        if (denom <= 0) fail_assert("absorbing network returns below almost surely");
        e.f_up = net_up(u) / denom;
      }
      T.at[u] = e;
    }
  {
    PassageEntry e;
    e.f_up = 0;
    e.f_down = 0;
    T.at[root_vertex(spec)] = e;
  }
  for (int lvl = spec.k_min + 1; lvl <= n; ++lvl)
    for (const VertexAddress& u : enumerate_level(spec, lvl)) {
      VertexAddress up_v = parent(spec, u);
      PassageEntry& pe = T.at.at(up_v);
      Rat avoid = net_up(up_v) * pe.f_down;
      Rat direct(0);
      for (const Move& m : net_moves(up_v)) {
        if (m.to == u) {
          direct = m.prob;
          continue;
        }
        if (m.prob == 0) continue;
        avoid += m.prob * T.at.at(m.to).f_up;
      }
      Rat denom = 1 - avoid;
      if (denom <= 0) fail_assert("no route from the parent in the absorbing network");
      T.at.at(u).f_down = direct / denom;
    }
  for (auto& [u, e] : T.at) {
    if (u.level == n) {
      e.g_self = 1;  // visited once, then absorbed
      continue;
    }
    Rat ret = net_up(u) * e.f_down;
    for (const Move& m : net_moves(u)) {
      if (m.prob == 0) continue;
      ret += m.prob * T.at.at(m.to).f_up;
    }
    if (ret >= 1) fail_assert("recurrent vertex in the absorbing network");
    e.g_self = Rat(1) / (1 - ret);
  }
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

// Exact harmonic extension of boundary data on level n to the truncated
// network (levels k_min..n), by a rational linear solve.
inline std::map<VertexAddress, Rat> harmonic_extension(const WalkKernel& K, int n,
                                                       const std::map<VertexAddress, Rat>& f) {
  const LeveledTreeSpec& spec = K.tree;
  spec.check_enumerable(n);
  std::vector<VertexAddress> interior;
  std::map<VertexAddress, size_t> index;
  for (int lvl = spec.k_min; lvl < n; ++lvl)
    for (const VertexAddress& u : enumerate_level(spec, lvl)) {
      index[u] = interior.size();
      interior.push_back(u);
    }
  const size_t ni = interior.size();
  RatMatrix A(ni, ni);
  RatMatrix b(ni, 1);
  for (size_t i = 0; i < ni; ++i) {
    const VertexAddress& u = interior[i];
    A.at(i, i) = 1;
    // Network harmonicity: h(u) is the kernel average over network
    // neighbours, with the root's missing upward edge renormalized away.
    Rat up = up_probability(K, u);
    Rat norm(1);
    if (u.level == spec.k_min) norm = 1 - up;
    if (u.level > spec.k_min) A.at(i, index.at(parent(spec, u))) -= up / norm;
    for (const Move& m : down_moves(K, u)) {
      if (m.prob == 0) continue;
      if (m.to.level == n)
        b.at(i, 0) += (m.prob / norm) * f.at(m.to);
      else
        A.at(i, index.at(m.to)) -= m.prob / norm;
    }
  }
  RatMatrix h = rat_solve(A, b);
  std::map<VertexAddress, Rat> out;
  for (size_t i = 0; i < ni; ++i) out[interior[i]] = h.at(i, 0);
  for (const auto& [u, val] : f) out[u] = val;
  return out;
}

// Network energy of the harmonic extension: sum over tree edges of
// c(edge) (h(u') - h(u))^2 with c(edge) = c(u') p(u', u).
inline Rat dirichlet_energy(const WalkKernel& K, int n, const std::map<VertexAddress, Rat>& f) {
  const LeveledTreeSpec& spec = K.tree;
  std::map<VertexAddress, Rat> h = harmonic_extension(K, n, f);
  std::map<VertexAddress, Rat> c = conductances(K, n);
  Rat energy(0);
  for (int lvl = spec.k_min; lvl < n; ++lvl)
    for (const VertexAddress& u : enumerate_level(spec, lvl)) {
      Rat cu = c.at(u);
      for (const Move& m : down_moves(K, u)) {
        if (m.prob == 0) continue;
        Rat diff = h.at(u) - h.at(m.to);
        energy += cu * m.prob * diff * diff;
      }
    }
  return energy;
}

// Boundary double-sum route of the same energy, with the truncated network's
// own kernel and hitting measure (the finite Douglas identity):
//   1/2 sum_{u != v} (f_u - f_v)^2 Theta(u, v) nu(u) nu(v).
inline Rat boundary_energy(const WalkKernel& K, int n, const std::map<VertexAddress, Rat>& f) {
  const LeveledTreeSpec& spec = K.tree;
  PassageTable T = first_passage_absorbing(K, n);
  std::map<VertexAddress, Rat> c = conductances(K, n);
  std::vector<VertexAddress> verts = enumerate_level(spec, n);
  VertexAddress root = root_vertex(spec);
  // The network's vertex weight at the root omits the missing upward edge.
  c.at(root) *= 1 - up_probability(K, root);
  std::vector<Rat> nu(verts.size());
  for (size_t i = 0; i < verts.size(); ++i) nu[i] = passage_product(T, root, verts[i]);
  Rat energy(0);
  for (size_t i = 0; i < verts.size(); ++i)
    for (size_t j = i + 1; j < verts.size(); ++j) {
      VertexAddress w = confluent(spec, verts[i], verts[j]);
      Rat theta = naim_at_confluent(T, c, root, w);
      Rat diff = f.at(verts[i]) - f.at(verts[j]);
      energy += diff * diff * theta * nu[i] * nu[j];
    }
  return energy;
}

// ----- Rescaled Naim kernel and its closed form (noncompact) -----

// J(x, y): rescale the Naim kernel while moving the base point up the spine,
// J_m = Theta_b(x,y) nu_b(ball below the reference vertex)^2 with b the spine
// vertex m levels above the reference; stop when two successive values agree
// exactly. Stabilization failing inside the window raises an error.
inline Rat rescaled_naim(const PassageTable& T, const std::map<VertexAddress, Rat>& cond,
                         const VertexAddress& w) {
  const LeveledTreeSpec& spec = T.kernel.tree;
  if (spec.mode != Mode::noncompact) fail_schema("the rescaled kernel lives on the noncompact boundary");
  if (spec.k_min > -1) fail_schema("window too small: no spine vertices above the reference");
  VertexAddress o = spine_vertex(spec, 0);
  bool have_prev = false;
  Rat prev;
  for (int m = 1; -m >= spec.k_min; ++m) {
    VertexAddress b = spine_vertex(spec, -m);
    Rat theta = naim_at_confluent(T, cond, b, w);
    Rat mass = harmonic_measure(T, b, o);
    Rat J = theta * mass * mass;
    if (have_prev && J == prev) return J;
    prev = J;
    have_prev = true;
  }
  fail_assert("window too small: rescaled kernel did not stabilize before the window root");
}

inline Rat rescaled_naim(const PassageTable& T, const std::map<VertexAddress, Rat>& cond,
                         const BoundaryPoint& x, const BoundaryPoint& y) {
  const LeveledTreeSpec& spec = T.kernel.tree;
  if (x.digits == y.digits) fail_assert("rescaled kernel at coincident boundary points is infinite");
  return rescaled_naim(T, cond, confluent(spec, x, y));
}

// Closed form j(v) = theta^2 G(v,v) / (K(v, spine end)^2 c(v)); the global
// constant theta^2 is fitted once from the stabilized limit.
inline Rat kigami_j(const PassageTable& T, const std::map<VertexAddress, Rat>& cond,
                    const Rat& theta_sq, const VertexAddress& v) {
  Rat K = martin_kernel_spine(T, v);
  return theta_sq * T.entry(v).g_self / (K * K * cond.at(v));
}

// Fit of theta^2 at one confluent vertex: theta^2 = J(v) K(v)^2 c(v)/G(v,v).
inline Rat kigami_theta_sq(const PassageTable& T, const std::map<VertexAddress, Rat>& cond,
                           const VertexAddress& v) {
  Rat J = rescaled_naim(T, cond, v);
  Rat K = martin_kernel_spine(T, v);
  return J * K * K * cond.at(v) / T.entry(v).g_self;
}

}  // namespace ultra
