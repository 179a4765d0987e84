#pragma once

#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include "ultra/common.hpp"
#include "ultra/tree.hpp"

namespace ultra {

// The window ball carries a transitive abelian action: digit strings add with
// carries toward increasing level, making the quotient of the level-k_min ball
// by the level-`res` subgroup a cyclic group of order q_{k_min} * ... *
// q_{res-1}. Ranks realize that isomorphism with level k_min as the least
// significant digit.

inline Int quotient_order(const LeveledTreeSpec& spec, int res) {
  if (res < spec.k_min || res > spec.k_max) fail_schema("quotient resolution outside window");
  Int n(1);
  for (int j = spec.k_min; j < res; ++j) n *= spec.q(j);
  return n;
}

inline void check_quotient_enumerable(const LeveledTreeSpec& spec, int res) {
  Int n = quotient_order(spec, res);
  if (n > kEnumerationCap)
    fail_cap("quotient of order " + n.get_str() + " exceeds the enumeration cap " +
             std::to_string(kEnumerationCap));
}

// Rank of x in the cyclic quotient at resolution `res`.
inline Int group_rank(const LeveledTreeSpec& spec, const BoundaryPoint& x, int res) {
  Int rank(0);
  Int place(1);
  for (int j = spec.k_min; j < res; ++j) {
    rank += place * x.digit_at(j);
    place *= spec.q(j);
  }
  return rank;
}

inline BoundaryPoint from_rank(const LeveledTreeSpec& spec, Int rank, int res) {
  if (rank < 0) fail_schema("rank must be nonnegative");
  BoundaryPoint x;
  for (int j = spec.k_min; j < res; ++j) {
    Int q(spec.q(j));
    Int digit = rank % q;
    if (digit != 0) x.digits[j] = static_cast<unsigned>(digit.get_ui());
    rank /= q;
  }
  if (rank != 0) fail_schema("rank exceeds quotient order");
  return x;
}

// Digit addition with carry toward increasing level; carries leaving the
// window are dropped (addition in the quotient at resolution k_max).
inline BoundaryPoint group_add(const LeveledTreeSpec& spec, const BoundaryPoint& x,
                               const BoundaryPoint& y) {
  BoundaryPoint out;
  unsigned carry = 0;
  for (int j = spec.k_min; j < spec.k_max; ++j) {
    unsigned s = x.digit_at(j) + y.digit_at(j) + carry;
    unsigned q = spec.q(j);
    carry = s / q;
    s %= q;
    if (s != 0) out.digits[j] = s;
  }
  return out;
}

inline BoundaryPoint group_negate(const LeveledTreeSpec& spec, const BoundaryPoint& x) {
  // Two's-complement style: complement every digit, then add one unit at the
  // least significant level.
  BoundaryPoint out;
  bool all_zero = true;
  for (const auto& [j, d] : x.digits)
    if (d != 0) all_zero = false;
  if (all_zero) return out;
  unsigned carry = 1;
  for (int j = spec.k_min; j < spec.k_max; ++j) {
    unsigned q = spec.q(j);
    unsigned s = (q - 1 - x.digit_at(j)) + carry;
    carry = s / q;
    s %= q;
    if (s != 0) out.digits[j] = s;
  }
  return out;
}

// Character chi_j of the cyclic quotient at resolution `res`, evaluated at x.
inline std::complex<double> character(const LeveledTreeSpec& spec, const Int& j,
                                      const BoundaryPoint& x, int res) {
  Int n = quotient_order(spec, res);
  Int r = group_rank(spec, x, res);
  Int phase = (j * r) % n;
  double angle = 2.0 * std::numbers::pi * phase.get_d() / n.get_d();
  return {std::cos(angle), std::sin(angle)};
}

// Smallest level m such that chi_j is trivial on the level-m subgroup of the
// quotient at resolution `res`. The trivial character reports k_min.
inline int character_level(const LeveledTreeSpec& spec, const Int& j, int res) {
  Int n = quotient_order(spec, res);
  if (j < 0 || j >= n) fail_schema("character index outside [0, quotient order)");
  Int place(1);
  for (int m = spec.k_min; m <= res; ++m) {
    // chi_j is trivial on the level-m subgroup iff (n / place(m)) divides j.
    Int modulus = n / place;
    if (j % modulus == 0) return m;
    if (m < res) place *= spec.q(m);
  }
  fail_assert("character level search fell through");
}

// Scale of the character: the norm of a dual-group element whose level is
// character_level, under the chosen metric.
inline double character_norm(const LeveledTreeSpec& spec, const Int& j, int res, MetricKind kind) {
  int m = character_level(spec, j, res);
  switch (kind) {
    case MetricKind::exponent:
      return std::pow(to_double(spec.metric_base), static_cast<double>(m));
    case MetricKind::haar_norm:
      return 1.0 / to_double(spec.m(m));
  }
  fail_assert("unknown metric kind");
}

}  // namespace ultra
