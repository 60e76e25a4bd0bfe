#include "spjscc/numcore/params.hpp"

#include <cmath>
#include <cstring>

#include "spjscc/numcore/digest.hpp"
#include "spjscc/numcore/kernels.hpp"

namespace spjscc::numcore {

void ParamSet::add(std::string name, Tensor<float> value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamSet::contains(const std::string& name) const { return index_.count(name) != 0; }

const Tensor<float>& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

Tensor<float>& ParamSet::get(const std::string& name) {
  return const_cast<Tensor<float>&>(std::as_const(*this).get(name));
}

std::size_t ParamSet::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : entries_) total += t.size();
  return total;
}

std::string ParamSet::content_hash() const {
  Sha256 digest;
  for (const auto& [name, t] : entries_) {
    digest.update(name.data(), name.size() + 1);
    for (std::size_t d : t.shape()) {
      const std::uint64_t dim = d;
      digest.update(&dim, sizeof dim);
    }
    digest.update(t.data(), t.size() * sizeof(float));
  }
  return digest.hex();
}

Tensor<float> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<float> t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
  for (float& v : t.values()) v = dist(rng);
  return t;
}

template <typename T>
NodeId BoundParams<T>::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("parameter '" + name + "' not bound");
  return it->second;
}

template <typename T>
void BoundParams<T>::rebind(const std::string& name, NodeId id) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("parameter '" + name + "' not bound");
  it->second = id;
  for (auto& [n, node] : nodes_) {
    if (n == name) node = id;
  }
}

template <typename T>
BoundParams<T> bind(Tape<T>& tape, const ParamSet& params, bool trainable) {
  BoundParams<T> bound;
  for (const auto& [name, value] : params.entries()) {
    Tensor<T> v = value.template cast<T>();
    NodeId id = trainable ? tape.variable(std::move(v), name) : tape.constant(std::move(v), name);
    bound.nodes_.emplace_back(name, id);
    bound.index_.emplace(name, id);
  }
  return bound;
}

template <typename T>
std::map<std::string, Tensor<float>> collect_gradients(const BoundParams<T>& bound,
                                                       const Gradients<T>& grads) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, id] : bound.nodes()) out.emplace(name, grads[id].template cast<float>());
  return out;
}

template class BoundParams<float>;
template class BoundParams<double>;
template BoundParams<float> bind<float>(Tape<float>&, const ParamSet&, bool);
template BoundParams<double> bind<double>(Tape<double>&, const ParamSet&, bool);
template std::map<std::string, Tensor<float>> collect_gradients<float>(const BoundParams<float>&,
                                                                      const Gradients<float>&);
template std::map<std::string, Tensor<float>> collect_gradients<double>(const BoundParams<double>&,
                                                                       const Gradients<double>&);

Adam::Adam(Options options) : options_(options) {
  if (!(options_.lr > 0.0f)) throw std::invalid_argument("adam: learning rate must be > 0");
}

void Adam::set_lr(float lr) {
  if (!(lr > 0.0f)) throw std::invalid_argument("adam: learning rate must be > 0");
  options_.lr = lr;
}

void Adam::step(ParamSet& params, const std::map<std::string, Tensor<float>>& grads) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw std::invalid_argument("adam: gradient for unknown '" + name + "'");
    if (g.shape() != params.get(name).shape()) {
      throw ShapeError("adam: gradient " + to_string(g.shape()) + " does not match '" + name +
                       "' " + to_string(params.get(name).shape()));
    }
    if (!g.all_finite()) throw NonFiniteGradient("adam: non-finite gradient for '" + name + "'");
  }
  ++t_;
  const kernels::AdamArgs<float> args{
      options_.lr, options_.beta1, options_.beta2, options_.eps,
      1.0f - static_cast<float>(std::pow(static_cast<double>(options_.beta1), t_)),
      1.0f - static_cast<float>(std::pow(static_cast<double>(options_.beta2), t_))};
  const auto& table = kernels::active_table<float>();
  for (auto& [name, p] : params.entries()) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    auto& [m, v] = moments_[name];
    if (m.empty()) {
      m.assign(p.size(), 0.0f);
      v.assign(p.size(), 0.0f);
    }
    table.adam_update(p.size(), p.data(), it->second.data(), m.data(), v.data(), args);
  }
}

}  // namespace spjscc::numcore
