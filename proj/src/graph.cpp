#include "metaparse/graph.hpp"

#include <stdexcept>

namespace metaparse {

NodeId Workspace::p(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  if (params == nullptr)
    throw std::runtime_error("workspace has no parameter set");
  NodeId id = tape.leaf(params->at(name), true);
  bound_.emplace(name, id);
  return id;
}

NodeId Workspace::dropout(NodeId x) {
  if (!train || dropout_rate <= 0.0) return x;
  if (rng == nullptr)
    throw std::runtime_error("dropout in train mode needs an rng");
  if (dropout_rate >= 1.0)
    throw std::invalid_argument("dropout rate must be below 1");
  const double keep = 1.0 - dropout_rate;
  Tensor mask = Tensor::zeros(tape.value(x).shape);
  for (double& v : mask.data)
    v = rng->uniform() < keep ? 1.0 / keep : 0.0;
  return tape.mul(x, tape.constant(std::move(mask)));
}

Gradients Workspace::grads(NodeId loss) const {
  std::vector<Tensor> node_grads = tape.backward(loss);
  Gradients out;
  for (const auto& [name, t] : params->values) {
    auto it = bound_.find(name);
    if (it != bound_.end() && !node_grads[it->second].data.empty()) {
      out.emplace(name, std::move(node_grads[it->second]));
    } else {
      out.emplace(name, Tensor::zeros(t.shape));
    }
  }
  return out;
}

}  // namespace metaparse
