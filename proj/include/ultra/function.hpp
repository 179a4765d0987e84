#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <type_traits>
#include <utility>
#include <vector>

#include "ultra/common.hpp"
#include "ultra/tree.hpp"

namespace ultra {

// Locally constant scalar function on the window ball, stored as a partition
// tree: every node is either a leaf carrying the constant value on its ball or
// splits into q_k children. Deep windows stay cheap as long as the function is
// coarse on most of the ball, which is what makes exact arithmetic viable at
// depth 40 and beyond.
template <class T>
class LocallyConstantFunction {
 public:
  using Scalar = T;

  static LocallyConstantFunction constant(const LeveledTreeSpec& spec, T value) {
    spec.validate();
    LocallyConstantFunction f(spec);
    f.root_.value = std::move(value);
    return f;
  }

  // Indicator of the ball below u.
  static LocallyConstantFunction indicator(const LeveledTreeSpec& spec, const VertexAddress& u) {
    LocallyConstantFunction f = constant(spec, T(0));
    f.set_on_ball(u, T(1));
    return f;
  }

  // Builds from ball/value pairs; later entries overwrite the ball they name.
  static LocallyConstantFunction from_values(const LeveledTreeSpec& spec,
                                             const std::map<VertexAddress, T>& values) {
    LocallyConstantFunction f = constant(spec, T(0));
    for (const auto& [u, v] : values) f.set_on_ball(u, v);
    return f;
  }

  const LeveledTreeSpec& tree() const { return spec_; }

  // Overwrites the function with the given value on the ball below u.
  void set_on_ball(const VertexAddress& u, T value) {
    validate_vertex(spec_, u);
    Node* node = &root_;
    for (int j = spec_.k_min; j < u.level; ++j) {
      expand(*node, j);
      node = &node->kids[u.digit_at(j, spec_.k_min)];
    }
    node->kids.clear();
    node->value = std::move(value);
  }

  // Deepest level at which the function is refined.
  int resolution() const { return node_depth(root_, spec_.k_min); }

  T at(const BoundaryPoint& x) const {
    const Node* node = &root_;
    int j = spec_.k_min;
    while (!node->leaf()) {
      node = &node->kids[x.digit_at(j)];
      ++j;
    }
    return node->value;
  }

  // Value on the ball below u; the function must be constant there.
  T value_on(const VertexAddress& u) const {
    validate_vertex(spec_, u);
    const Node* node = &root_;
    for (int j = spec_.k_min; j < u.level && !node->leaf(); ++j)
      node = &node->kids[u.digit_at(j, spec_.k_min)];
    if (node->leaf()) return node->value;
    T probe = first_leaf_value(*node);
    if (!subtree_constant(*node, probe))
      fail_assert("function is not constant on the requested ball");
    return probe;
  }

  T integral() const { return node_integral(root_, spec_.k_min); }

  T integral_on(const VertexAddress& u) const {
    validate_vertex(spec_, u);
    const Node* node = &root_;
    for (int j = spec_.k_min; j < u.level; ++j) {
      if (node->leaf()) return node->value * scalar_of(spec_.m(u.level));
      node = &node->kids[u.digit_at(j, spec_.k_min)];
    }
    return node_integral(*node, u.level);
  }

  // Conditional average over level-k balls: constant on each level-k ball,
  // preserving ball integrals.
  LocallyConstantFunction project(int k) const {
    if (k < spec_.k_min || k > spec_.k_max) fail_schema("projection level outside window");
    LocallyConstantFunction out(spec_);
    out.root_ = project_node(root_, spec_.k_min, k);
    return out;
  }

  void for_each_leaf(const std::function<void(const VertexAddress&, const T&)>& fn) const {
    VertexAddress u = root_vertex(spec_);
    walk_leaves(root_, u, fn);
  }

  LocallyConstantFunction& operator+=(const LocallyConstantFunction& o) {
    root_ = combine(root_, o.root_, spec_.k_min, [](const T& a, const T& b) { return a + b; });
    return *this;
  }
  LocallyConstantFunction& operator-=(const LocallyConstantFunction& o) {
    root_ = combine(root_, o.root_, spec_.k_min, [](const T& a, const T& b) { return a - b; });
    return *this;
  }
  LocallyConstantFunction& operator*=(const T& s) {
    scale_node(root_, s);
    return *this;
  }
  friend LocallyConstantFunction operator+(LocallyConstantFunction a,
                                           const LocallyConstantFunction& b) {
    a += b;
    return a;
  }
  friend LocallyConstantFunction operator-(LocallyConstantFunction a,
                                           const LocallyConstantFunction& b) {
    a -= b;
    return a;
  }
  friend LocallyConstantFunction operator*(const T& s, LocallyConstantFunction f) {
    f *= s;
    return f;
  }

  // Pointwise product of the two functions.
  LocallyConstantFunction pointwise_product(const LocallyConstantFunction& o) const {
    LocallyConstantFunction out(spec_);
    out.root_ = combine(root_, o.root_, spec_.k_min, [](const T& a, const T& b) { return a * b; });
    return out;
  }

  // Integral of f*g against the reference measure.
  T inner(const LocallyConstantFunction& o) const { return pointwise_product(o).integral(); }

  // Pointwise equality (partition shapes may differ).
  friend bool operator==(const LocallyConstantFunction& a, const LocallyConstantFunction& b) {
    Node diff = combine(a.root_, b.root_, a.spec_.k_min,
                        [](const T& x, const T& y) { return x - y; });
    return subtree_constant(diff, T(0));
  }

  // Largest |f - g| over the window ball.
  friend T max_abs_difference(const LocallyConstantFunction& a, const LocallyConstantFunction& b) {
    Node diff = combine(a.root_, b.root_, a.spec_.k_min,
                        [](const T& x, const T& y) { return x - y; });
    T best = T(0);
    max_abs_node(diff, best);
    return best;
  }

 private:
  struct Node {
    T value{};
    std::vector<Node> kids;  // empty == leaf; else exactly q(level) entries
    bool leaf() const { return kids.empty(); }
  };

  explicit LocallyConstantFunction(const LeveledTreeSpec& spec) : spec_(spec) {}

  static T scalar_of(const Rat& r) {
    if constexpr (std::is_same_v<T, Rat>)
      return r;
    else
      return to_double(r);
  }

  void expand(Node& node, int level) const {
    if (!node.leaf()) return;
    unsigned q = spec_.q(level);
    node.kids.assign(q, Node{node.value, {}});
  }

  static int node_depth(const Node& node, int level) {
    if (node.leaf()) return level;
    int best = level;
    for (const Node& kid : node.kids) best = std::max(best, node_depth(kid, level + 1));
    return best;
  }

  T node_integral(const Node& node, int level) const {
    if (node.leaf()) return node.value * scalar_of(spec_.m(level));
    T sum = T(0);
    for (const Node& kid : node.kids) sum += node_integral(kid, level + 1);
    return sum;
  }

  Node project_node(const Node& node, int level, int k) const {
    if (node.leaf()) return node;  // already constant below here
    if (level == k) {
      T avg = node_integral(node, level) / scalar_of(spec_.m(level));
      return Node{avg, {}};
    }
    Node out;
    out.kids.reserve(node.kids.size());
    for (const Node& kid : node.kids) out.kids.push_back(project_node(kid, level + 1, k));
    return out;
  }

  static T first_leaf_value(const Node& node) {
    const Node* n = &node;
    while (!n->leaf()) n = &n->kids.front();
    return n->value;
  }

  static bool subtree_constant(const Node& node, const T& v) {
    if (node.leaf()) return node.value == v;
    for (const Node& kid : node.kids)
      if (!subtree_constant(kid, v)) return false;
    return true;
  }

  static void scale_node(Node& node, const T& s) {
    if (node.leaf()) {
      node.value = node.value * s;
      return;
    }
    for (Node& kid : node.kids) scale_node(kid, s);
  }

  static void max_abs_node(const Node& node, T& best) {
    if (node.leaf()) {
      T a = abs_val(node.value);
      if (a > best) best = a;
      return;
    }
    for (const Node& kid : node.kids) max_abs_node(kid, best);
  }

  template <class Op>
  static Node combine(const Node& a, const Node& b, int level, Op op) {
    if (a.leaf() && b.leaf()) return Node{op(a.value, b.value), {}};
    const size_t q = a.leaf() ? b.kids.size() : a.kids.size();
    if (!a.leaf() && !b.leaf() && a.kids.size() != b.kids.size())
      fail_assert("functions live on different trees");
    Node out;
    out.kids.reserve(q);
    Node spread;  // stand-in when one side is constant across this split
    for (size_t i = 0; i < q; ++i) {
      const Node& ka = a.leaf() ? (spread = Node{a.value, {}}, spread) : a.kids[i];
      const Node& kb = b.leaf() ? (spread = Node{b.value, {}}, spread) : b.kids[i];
      out.kids.push_back(combine(ka, kb, level + 1, op));
    }
    // Collapse when all children agree as leaves.
    bool uniform = true;
    for (const Node& kid : out.kids)
      if (!kid.leaf() || !(kid.value == out.kids.front().value)) {
        uniform = false;
        break;
      }
    if (uniform) return Node{out.kids.front().value, {}};
    return out;
  }

  void walk_leaves(const Node& node, VertexAddress& u,
                   const std::function<void(const VertexAddress&, const T&)>& fn) const {
    if (node.leaf()) {
      fn(u, node.value);
      return;
    }
    for (unsigned d = 0; d < node.kids.size(); ++d) {
      u.level += 1;
      u.digits.push_back(d);
      walk_leaves(node.kids[d], u, fn);
      u.digits.pop_back();
      u.level -= 1;
    }
  }

  LeveledTreeSpec spec_;
  Node root_;
};

using RatFunction = LocallyConstantFunction<Rat>;
using RealFunction = LocallyConstantFunction<double>;

}  // namespace ultra
