#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "metaparse/tensor.hpp"

namespace metaparse {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = 0xFFFFFFFFu;

// Reverse-mode autodiff over a flat op tape. Recording order is topological
// by construction; backward() makes one reverse sweep and visits each op
// exactly once. Tapes are single-threaded; independent tapes may live on
// independent threads.
class Tape {
 public:
  NodeId leaf(Tensor value, bool requires_grad);
  NodeId constant(Tensor value) { return leaf(std::move(value), false); }

  // y = W x  (W: [m,n], x: [n])
  NodeId matvec(NodeId w, NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId mul_const(NodeId a, double c);
  // v * s, s a scalar node broadcast over v
  NodeId scale_by_scalar(NodeId v, NodeId s);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId concat(std::span<const NodeId> parts);
  // elementwise mean of same-shaped inputs
  NodeId mean_pool(std::span<const NodeId> parts);
  // row `row` of a [V,E] table
  NodeId lookup_row(NodeId table, std::size_t row);
  // probabilities over unmasked entries; masked entries exactly 0
  NodeId softmax_masked(NodeId logits, std::vector<std::uint8_t> mask);
  // scalar log-sum-exp over unmasked entries (stable)
  NodeId logsumexp_masked(NodeId logits, std::vector<std::uint8_t> mask);
  // x / (||x|| + 1e-12)
  NodeId l2_normalize(NodeId a);
  NodeId dot(NodeId a, NodeId b);
  // scalar v[index]
  NodeId pick(NodeId v, std::size_t index);
  NodeId log(NodeId a);
  NodeId slice(NodeId v, std::size_t start, std::size_t len);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradients of a scalar loss w.r.t. every node, indexed by node id.
  // Entries for nodes outside the differentiable set are empty tensors;
  // callers should treat those as zeros. Throws if the loss is not scalar
  // or a NaN shows up during the sweep.
  std::vector<Tensor> backward(NodeId loss) const;

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kMatVec,
    kAdd,
    kSub,
    kMul,
    kMulConst,
    kScaleByScalar,
    kTanh,
    kSigmoid,
    kConcat,
    kMeanPool,
    kLookupRow,
    kSoftmaxMasked,
    kLogSumExpMasked,
    kL2Normalize,
    kDot,
    kPick,
    kLog,
    kSlice,
  };

  struct Node {
    Op op;
    bool requires_grad = false;
    Tensor value;
    std::vector<NodeId> inputs;
    std::size_t a0 = 0;  // pick/lookup index, slice start
    std::size_t a1 = 0;  // slice length
    double c0 = 0.0;     // mul_const factor
    std::vector<std::uint8_t> mask;
  };

  NodeId push(Node n);
  bool any_requires(std::span<const NodeId> ids) const;
  const Node& node(NodeId id) const { return nodes_[id]; }

  std::vector<Node> nodes_;
};

}  // namespace metaparse
