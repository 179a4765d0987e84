#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ultra/common.hpp"

namespace ultra {

// A leveled tree is materialized on a finite window of levels
// [k_min, k_max]. Compact mode roots the tree at level 0 (balls shrink as the
// level grows); noncompact mode has a reference end "above" the window and
// horocycles indexed by all window levels, with level 0 carrying the reference
// ball of measure 1.
enum class Mode { compact, noncompact };

// Two homogeneous ultrametrics on the boundary: exponent distance
// base^(-confluent level), and the Haar-norm distance m(confluent level).
enum class MetricKind { exponent, haar_norm };

struct LeveledTreeSpec {
  Mode mode = Mode::compact;
  int k_min = 0;
  int k_max = 0;
  std::vector<unsigned> degrees;  // q_k for k in [k_min, k_max), each >= 2
  Rat metric_base = Rat(2);       // base for the exponent metric, > 1

  void validate() const {
    if (k_min >= k_max) fail_schema("window requires k_min < k_max");
    if (mode == Mode::compact && k_min != 0) fail_schema("compact window must start at level 0");
    if (mode == Mode::noncompact && (k_min > 0 || k_max < 0))
      fail_schema("noncompact window must contain level 0");
    if (degrees.size() != static_cast<size_t>(k_max - k_min))
      fail_schema("need one branching degree per level in [k_min, k_max)");
    for (unsigned d : degrees)
      if (d < 2) fail_schema("branching degrees must be >= 2");
    if (metric_base <= 1) fail_schema("metric base must exceed 1");
  }

  // Branching degree q_k below level k, for k in [k_min, k_max).
  unsigned q(int k) const {
    if (k < k_min || k >= k_max) fail_schema("level " + std::to_string(k) + " has no degree");
    return degrees[static_cast<size_t>(k - k_min)];
  }

  // Reference measure of a level-k ball: m(0) = 1, m(k+1) = m(k)/q_k.
  Rat m(int k) const {
    if (k < k_min || k > k_max) fail_schema("level " + std::to_string(k) + " outside window");
    Rat out(1);
    for (int j = 0; j < k; ++j) out /= q(j);
    for (int j = k; j < 0; ++j) out *= q(j);
    out.canonicalize();
    return out;
  }

  // Mass of the shell B_k \ B_{k+1} around any point, k in [k_min, k_max).
  Rat shell_mass(int k) const { return m(k) - m(k + 1); }

  // Number of vertices at level k (equivalently balls of level k in the window
  // ball).
  Int level_size(int k) const {
    if (k < k_min || k > k_max) fail_schema("level " + std::to_string(k) + " outside window");
    Int n(1);
    for (int j = k_min; j < k; ++j) n *= q(j);
    return n;
  }

  // Enforces the enumeration cap before any dense materialization at level k.
  void check_enumerable(int k) const {
    Int n = level_size(k);
    if (n > kEnumerationCap)
      fail_cap("level " + std::to_string(k) + " holds " + n.get_str() +
               " vertices, above the enumeration cap " + std::to_string(kEnumerationCap));
  }
};

// Address of a window vertex: its level plus the branch digits chosen at
// levels k_min, ..., level-1 (digits.size() == level - k_min). The window root
// at level k_min has no digits.
struct VertexAddress {
  int level = 0;
  std::vector<unsigned> digits;

  friend auto operator<=>(const VertexAddress&, const VertexAddress&) = default;

  // Digit chosen at level j (the branch taken from level j down to j+1).
  unsigned digit_at(int j, int k_min) const {
    int i = j - k_min;
    if (i < 0 || i >= static_cast<int>(digits.size())) fail_assert("digit index outside address");
    return digits[static_cast<size_t>(i)];
  }
};

inline VertexAddress root_vertex(const LeveledTreeSpec& spec) {
  return VertexAddress{spec.k_min, {}};
}

inline void validate_vertex(const LeveledTreeSpec& spec, const VertexAddress& u) {
  if (u.level < spec.k_min || u.level > spec.k_max) fail_schema("vertex level outside window");
  if (u.digits.size() != static_cast<size_t>(u.level - spec.k_min))
    fail_schema("vertex digit count must equal level - k_min");
  for (int j = spec.k_min; j < u.level; ++j)
    if (u.digits[static_cast<size_t>(j - spec.k_min)] >= spec.q(j))
      fail_schema("vertex digit exceeds branching degree");
}

inline VertexAddress parent(const LeveledTreeSpec& spec, const VertexAddress& u) {
  if (u.level <= spec.k_min) fail_schema("window root has no parent");
  VertexAddress out = u;
  out.level -= 1;
  out.digits.pop_back();
  return out;
}

inline VertexAddress child(const LeveledTreeSpec& spec, const VertexAddress& u, unsigned digit) {
  if (u.level >= spec.k_max) fail_schema("vertex at window bottom has no materialized children");
  if (digit >= spec.q(u.level)) fail_schema("child digit exceeds branching degree");
  VertexAddress out = u;
  out.level += 1;
  out.digits.push_back(digit);
  return out;
}

inline VertexAddress ancestor_at(const LeveledTreeSpec& spec, const VertexAddress& u, int level) {
  if (level < spec.k_min || level > u.level) fail_schema("ancestor level outside [k_min, level]");
  VertexAddress out;
  out.level = level;
  out.digits.assign(u.digits.begin(), u.digits.begin() + (level - spec.k_min));
  return out;
}

inline bool is_ancestor(const VertexAddress& anc, const VertexAddress& u) {
  if (anc.level > u.level) return false;
  return std::equal(anc.digits.begin(), anc.digits.end(), u.digits.begin());
}

// Boundary point of the window ball: a digit string over all levels
// [k_min, k_max), stored sparsely (absent level means digit 0). The all-zero
// point is the reference point; in noncompact mode its finite-level vertices
// form the spine toward the reference end.
struct BoundaryPoint {
  std::map<int, unsigned> digits;

  friend auto operator<=>(const BoundaryPoint&, const BoundaryPoint&) = default;

  unsigned digit_at(int j) const {
    auto it = digits.find(j);
    return it == digits.end() ? 0u : it->second;
  }
};

inline void validate_boundary(const LeveledTreeSpec& spec, const BoundaryPoint& x) {
  for (const auto& [j, d] : x.digits) {
    if (j < spec.k_min || j >= spec.k_max) fail_schema("boundary digit level outside window");
    if (d >= spec.q(j)) fail_schema("boundary digit exceeds branching degree");
  }
}

inline BoundaryPoint boundary_zero() { return BoundaryPoint{}; }

// Canonical embedding of a vertex as the boundary point continuing with zeros.
inline BoundaryPoint boundary_of(const LeveledTreeSpec& spec, const VertexAddress& u) {
  BoundaryPoint x;
  for (int j = spec.k_min; j < u.level; ++j) {
    unsigned d = u.digit_at(j, spec.k_min);
    if (d != 0) x.digits[j] = d;
  }
  return x;
}

// The level-k vertex whose ball contains x.
inline VertexAddress vertex_of(const LeveledTreeSpec& spec, const BoundaryPoint& x, int k) {
  if (k < spec.k_min || k > spec.k_max) fail_schema("vertex level outside window");
  VertexAddress u;
  u.level = k;
  u.digits.reserve(static_cast<size_t>(k - spec.k_min));
  for (int j = spec.k_min; j < k; ++j) u.digits.push_back(x.digit_at(j));
  return u;
}

// First level at which the digit strings of x and y part ways; equal points
// never part ways inside the window, reported as k_max.
inline int confluent_level(const LeveledTreeSpec& spec, const BoundaryPoint& x,
                           const BoundaryPoint& y) {
  for (int j = spec.k_min; j < spec.k_max; ++j)
    if (x.digit_at(j) != y.digit_at(j)) return j;
  return spec.k_max;
}

// Deepest common vertex of two boundary points (their confluent). Undefined
// when the points coincide on the whole window.
inline VertexAddress confluent(const LeveledTreeSpec& spec, const BoundaryPoint& x,
                               const BoundaryPoint& y) {
  int lvl = confluent_level(spec, x, y);
  if (lvl == spec.k_max)
    fail_assert("confluent undefined: boundary points agree on the whole window");
  return vertex_of(spec, x, lvl);
}

// Deepest common vertex of two window vertices. confluent(u, u) == u.
inline VertexAddress confluent(const LeveledTreeSpec& spec, const VertexAddress& u,
                               const VertexAddress& v) {
  int top = std::min(u.level, v.level);
  int lvl = top;
  for (int j = spec.k_min; j < top; ++j) {
    if (u.digit_at(j, spec.k_min) != v.digit_at(j, spec.k_min)) {
      lvl = j;
      break;
    }
  }
  return ancestor_at(spec, u, lvl);
}

// Deepest common vertex of a vertex and a boundary point.
inline VertexAddress confluent(const LeveledTreeSpec& spec, const VertexAddress& u,
                               const BoundaryPoint& x) {
  int lvl = u.level;
  for (int j = spec.k_min; j < u.level; ++j) {
    if (u.digit_at(j, spec.k_min) != x.digit_at(j)) {
      lvl = j;
      break;
    }
  }
  return ancestor_at(spec, u, lvl);
}

// Horocycle index of a vertex with respect to the reference end: the number of
// the level set it lies on. Only meaningful in noncompact mode.
inline int horocycle_number(const LeveledTreeSpec& spec, const VertexAddress& u) {
  if (spec.mode != Mode::noncompact) fail_schema("horocycle numbers need noncompact mode");
  validate_vertex(spec, u);
  return u.level;
}

// Graph distance between two window vertices via their confluent.
inline int tree_distance(const LeveledTreeSpec& spec, const VertexAddress& u,
                         const VertexAddress& v) {
  VertexAddress w = confluent(spec, u, v);
  return (u.level - w.level) + (v.level - w.level);
}

inline Rat ultrametric(const LeveledTreeSpec& spec, const BoundaryPoint& x, const BoundaryPoint& y,
                       MetricKind kind) {
  if (x == y) return Rat(0);
  int lvl = confluent_level(spec, x, y);
  switch (kind) {
    case MetricKind::exponent:
      return rat_pow(spec.metric_base, -static_cast<long>(lvl));
    case MetricKind::haar_norm:
      return spec.m(lvl);
  }
  fail_assert("unknown metric kind");
}

// All vertices at level k in lexicographic digit order; cap enforced.
inline std::vector<VertexAddress> enumerate_level(const LeveledTreeSpec& spec, int k) {
  spec.check_enumerable(k);
  std::vector<VertexAddress> out;
  out.reserve(spec.level_size(k).get_ui());
  VertexAddress u;
  u.level = k;
  u.digits.assign(static_cast<size_t>(k - spec.k_min), 0u);
  while (true) {
    out.push_back(u);
    int j = k - 1;
    for (; j >= spec.k_min; --j) {
      size_t i = static_cast<size_t>(j - spec.k_min);
      if (u.digits[i] + 1 < spec.q(j)) {
        u.digits[i] += 1;
        std::fill(u.digits.begin() + static_cast<long>(i) + 1, u.digits.end(), 0u);
        break;
      }
    }
    if (j < spec.k_min) break;
  }
  return out;
}

// Vertex on the spine (all-zero address) at level k.
inline VertexAddress spine_vertex(const LeveledTreeSpec& spec, int k) {
  if (k < spec.k_min || k > spec.k_max) fail_schema("level outside window");
  VertexAddress u;
  u.level = k;
  u.digits.assign(static_cast<size_t>(k - spec.k_min), 0u);
  return u;
}

inline bool is_spine(const VertexAddress& u) {
  return std::all_of(u.digits.begin(), u.digits.end(), [](unsigned d) { return d == 0; });
}

// Index of the side subtree containing u: the largest k such that the spine
// vertex at level k is an ancestor of u but the one at level k+1 is not.
// Spine vertices report their own level.
inline int subtree_index(const LeveledTreeSpec& spec, const VertexAddress& u) {
  for (size_t i = 0; i < u.digits.size(); ++i)
    if (u.digits[i] != 0) return spec.k_min + static_cast<int>(i);
  return u.level;
}

inline std::string format_vertex(const VertexAddress& u) {
  std::string out = std::to_string(u.level) + ":";
  for (size_t i = 0; i < u.digits.size(); ++i) {
    if (i) out += '.';
    out += std::to_string(u.digits[i]);
  }
  return out;
}

// Parses "level:d.d.d" (digit part empty for the window root).
inline VertexAddress parse_vertex(const LeveledTreeSpec& spec, const std::string& text) {
  auto colon = text.find(':');
  if (colon == std::string::npos) fail_schema("vertex must look like 'level:d.d.d'");
  VertexAddress u;
  try {
    u.level = std::stoi(text.substr(0, colon));
  } catch (const std::exception&) {
    fail_schema("bad vertex level in '" + text + "'");
  }
  std::string rest = text.substr(colon + 1);
  size_t pos = 0;
  while (pos < rest.size()) {
    size_t dot = rest.find('.', pos);
    if (dot == std::string::npos) dot = rest.size();
    try {
      u.digits.push_back(static_cast<unsigned>(std::stoul(rest.substr(pos, dot - pos))));
    } catch (const std::exception&) {
      fail_schema("bad vertex digit in '" + text + "'");
    }
    pos = dot + 1;
  }
  validate_vertex(spec, u);
  return u;
}

}  // namespace ultra
