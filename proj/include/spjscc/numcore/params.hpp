#pragma once

#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spjscc/numcore/tape.hpp"

namespace spjscc::numcore {

// Named, insertion-ordered parameter tensors. Storage is always 32-bit; a
// 64-bit tape receives an exact widening copy.
class ParamSet {
 public:
  void add(std::string name, Tensor<float> value);
  bool contains(const std::string& name) const;
  const Tensor<float>& get(const std::string& name) const;
  Tensor<float>& get(const std::string& name);

  const std::vector<std::pair<std::string, Tensor<float>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<float>>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  // SHA-256 over names, shapes and raw values, as lowercase hex.
  std::string content_hash() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<std::pair<std::string, Tensor<float>>> entries_;
  std::map<std::string, std::size_t> index_;
};

// He-normal weights scaled by fan-in; used for conv and dense layers.
Tensor<float> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

// Parameter nodes for one forward pass.
template <typename T>
class BoundParams {
 public:
  NodeId operator[](const std::string& name) const;
  const std::vector<std::pair<std::string, NodeId>>& nodes() const { return nodes_; }
  // Points an existing name at another node (e.g. a leaf under test).
  void rebind(const std::string& name, NodeId id);

 private:
  template <typename U>
  friend BoundParams<U> bind(Tape<U>& tape, const ParamSet& params, bool trainable);
  std::vector<std::pair<std::string, NodeId>> nodes_;
  std::map<std::string, NodeId> index_;
};

template <typename T>
BoundParams<T> bind(Tape<T>& tape, const ParamSet& params, bool trainable);

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Adam with the usual defaults. The step is all-or-nothing: a non-finite
// gradient anywhere leaves every parameter and moment untouched.
class Adam {
 public:
  struct Options {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
  };

  Adam() : Adam(Options{}) {}
  explicit Adam(Options options);

  // grads are matched to params by name; params without a gradient are skipped.
  void step(ParamSet& params, const std::map<std::string, Tensor<float>>& grads);

  long steps_taken() const { return t_; }
  const Options& options() const { return options_; }
  void set_lr(float lr);

 private:
  Options options_;
  long t_ = 0;
  std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> moments_;
};

// Collects named parameter gradients from a reverse pass.
template <typename T>
std::map<std::string, Tensor<float>> collect_gradients(const BoundParams<T>& bound,
                                                       const Gradients<T>& grads);

}  // namespace spjscc::numcore
