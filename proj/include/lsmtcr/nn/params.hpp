#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lsmtcr/nn/tensor.hpp"
#include "lsmtcr/util/random.hpp"

namespace lsmtcr::nn {

enum class Init { xavier_uniform, zeros, ones };

/// One entry of a model's parameter layout. Layouts are the single source of
/// truth for names and shapes: models allocate from them and parameter counts
/// are computed from them without allocating.
struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::xavier_uniform;
  bool decay = false;  // weight matrices only
  double gain = 1.0;   // scales the xavier bound
};

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
  bool decay = false;
};

class ParamSet {
 public:
  ParamSet() = default;

  /// Allocates every spec in order. Xavier-uniform draws U(-a, a) with
  /// a = sqrt(6 / (fan_in + fan_out)), fan_in = shape[0], fan_out = shape[1].
  static ParamSet create(const std::vector<ParamSpec>& layout, Rng& rng);

  /// Appends an existing parameter; the tensor handle is shared, not copied.
  void add(Parameter param);

  bool contains(std::string_view name) const;
  /// Throws std::out_of_range naming the parameter.
  const Tensor& get(std::string_view name) const;
  Parameter& at(std::string_view name);

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }

  std::size_t scalar_count() const;
  void zero_grad();

  /// Sets trainable = !frozen(name) for every parameter.
  void apply_freeze(const std::function<bool(const std::string&)>& frozen);

 private:
  std::vector<Parameter> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::size_t count_parameters(const std::vector<ParamSpec>& layout);

/// Shell-style match where '*' matches any run of characters.
bool glob_match(std::string_view pattern, std::string_view name);

}  // namespace lsmtcr::nn
