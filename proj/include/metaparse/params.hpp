#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "metaparse/rng.hpp"
#include "metaparse/tensor.hpp"

namespace metaparse {

using ParamMap = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

// Named parameter collection. std::map keeps iteration order stable so
// initialization, updates and checkpoints are deterministic.
struct ModelParams {
  ParamMap values;

  bool has(const std::string& name) const { return values.count(name) > 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  void add(const std::string& name, Tensor t);
  std::size_t total_size() const;
};

// Registers a tensor initialized uniformly in [-0.08, 0.08].
void add_uniform(ModelParams& p, const std::string& name,
                 std::vector<std::size_t> shape, Rng& rng);
// Registers a zero tensor (biases, start states).
void add_zeros(ModelParams& p, const std::string& name,
               std::vector<std::size_t> shape);

struct AdamState {
  ParamMap m;
  ParamMap v;
  std::uint64_t t = 0;
};

// Bias-corrected Adam; epsilon sits outside the square root. Gradients
// missing from `grads` are treated as zero. Shapes must match parameters.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// Checkpoint: `<path>` holds packed little-endian f64 arrays, `<path>.manifest`
// lists one array per line as "name dim0xdim1x... byte_offset".
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace metaparse
