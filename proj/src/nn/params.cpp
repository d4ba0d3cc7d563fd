#include "lsmtcr/nn/params.hpp"

#include <cmath>
#include <stdexcept>

namespace lsmtcr::nn {

ParamSet ParamSet::create(const std::vector<ParamSpec>& layout, Rng& rng) {
  ParamSet set;
  set.items_.reserve(layout.size());
  for (const auto& spec : layout) {
    if (set.index_.count(spec.name)) throw std::invalid_argument("duplicate parameter name '" + spec.name + "'");
    std::vector<double> values(element_count(spec.shape), 0.0);
    switch (spec.init) {
      case Init::zeros:
        break;
      case Init::ones:
        std::fill(values.begin(), values.end(), 1.0);
        break;
      case Init::xavier_uniform: {
        if (spec.shape.size() != 2) throw std::invalid_argument("xavier init needs a matrix: " + spec.name);
        const double bound = spec.gain * std::sqrt(6.0 / static_cast<double>(spec.shape[0] + spec.shape[1]));
        for (double& v : values) v = rng.uniform(-bound, bound);
        break;
      }
    }
    set.index_.emplace(spec.name, set.items_.size());
    set.items_.push_back({spec.name, Tensor(spec.shape, std::move(values), true), true, spec.decay});
  }
  return set;
}

void ParamSet::add(Parameter param) {
  if (index_.count(param.name)) throw std::invalid_argument("duplicate parameter name '" + param.name + "'");
  index_.emplace(param.name, items_.size());
  items_.push_back(std::move(param));
}

bool ParamSet::contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

const Tensor& ParamSet::get(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return items_[it->second].tensor;
}

Parameter& ParamSet::at(std::string_view name) {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
  return items_[it->second];
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

void ParamSet::apply_freeze(const std::function<bool(const std::string&)>& frozen) {
  for (auto& p : items_) p.trainable = !frozen(p.name);
}

std::size_t count_parameters(const std::vector<ParamSpec>& layout) {
  std::size_t n = 0;
  for (const auto& spec : layout) n += element_count(spec.shape);
  return n;
}

bool glob_match(std::string_view pattern, std::string_view name) {
  std::size_t p = 0, n = 0, star = std::string_view::npos, mark = 0;
  while (n < name.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = n;
    } else if (p < pattern.size() && pattern[p] == name[n]) {
      ++p;
      ++n;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      n = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

}  // namespace lsmtcr::nn
