#pragma once

// Independent central-difference oracle for the reverse-mode tests. It only
// re-evaluates forward passes and never touches the tape's backward path.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "spjscc/numcore/ops.hpp"

namespace spjscc::testing {

using numcore::NodeId;
using numcore::Tape;
using numcore::Tensor;

// Builds a graph from the given leaves and returns its scalar output node.
using GraphBuilder = std::function<NodeId(Tape<double>&, const std::vector<NodeId>&)>;

inline double evaluate(const GraphBuilder& build, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<NodeId> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.variable(t));
  return tape.value(build(tape, leaves))[0];
}

inline std::vector<Tensor<double>> numeric_gradients(const GraphBuilder& build,
                                                     std::vector<Tensor<double>> inputs,
                                                     double h = 1e-5) {
  std::vector<Tensor<double>> out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double> g(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double up = evaluate(build, inputs);
      inputs[k][i] = saved - h;
      const double down = evaluate(build, inputs);
      inputs[k][i] = saved;
      g[i] = (up - down) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline std::vector<Tensor<double>> analytic_gradients(const GraphBuilder& build,
                                                      const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<NodeId> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.variable(t));
  const NodeId out = build(tape, leaves);
  auto grads = tape.backward(out);
  std::vector<Tensor<double>> result;
  for (NodeId l : leaves) result.push_back(grads[l]);
  return result;
}

// Elementwise |a - n| / max(|a|, |n|, floor), maximised over every entry.
inline double max_relative_error(const std::vector<Tensor<double>>& a,
                                 const std::vector<Tensor<double>>& n, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      const double denom = std::max({std::abs(a[k][i]), std::abs(n[k][i]), floor});
      worst = std::max(worst, std::abs(a[k][i] - n[k][i]) / denom);
    }
  }
  return worst;
}

inline double gradient_check(const GraphBuilder& build, const std::vector<Tensor<double>>& inputs) {
  return max_relative_error(analytic_gradients(build, inputs), numeric_gradients(build, inputs));
}

inline Tensor<double> random_tensor(numcore::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// Values bounded away from zero so kinks (relu, prelu) are never straddled by h.
inline Tensor<double> random_tensor_off_zero(numcore::Shape shape, std::mt19937_64& rng) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.values()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

// Reduces any node to a scalar through a fixed random projection so every
// output entry contributes a distinct weight.
inline NodeId project(Tape<double>& tape, NodeId node, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto r = random_tensor(tape.value(node).shape(), rng);
  return numcore::ops::sum(tape, numcore::ops::mul(tape, node, tape.constant(std::move(r))));
}

}  // namespace spjscc::testing
