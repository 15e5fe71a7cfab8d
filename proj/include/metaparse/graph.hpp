#pragma once

#include <map>
#include <string>

#include "metaparse/params.hpp"
#include "metaparse/rng.hpp"
#include "metaparse/tape.hpp"

namespace metaparse {

// Per-forward-pass scratch state: a fresh tape plus bindings from parameter
// names to tape leaves. Build one Workspace per loss evaluation.
struct Workspace {
  Tape tape;
  const ModelParams* params = nullptr;
  bool train = false;
  double dropout_rate = 0.0;
  Rng* rng = nullptr;

  explicit Workspace(const ModelParams& p, bool train_mode = false,
                     double dropout = 0.0, Rng* r = nullptr)
      : params(&p), train(train_mode), dropout_rate(dropout), rng(r) {}

  // Parameter leaf; repeated calls with the same name share one node so the
  // backward sweep accumulates into a single gradient.
  NodeId p(const std::string& name);
  // Non-differentiable input.
  NodeId c(Tensor t) { return tape.constant(std::move(t)); }

  // Inverted dropout: identity outside training or at rate 0.
  NodeId dropout(NodeId x);

  // Gradients for every registered parameter; zeros where the loss did not
  // touch the parameter.
  Gradients grads(NodeId loss) const;

 private:
  std::map<std::string, NodeId> bound_;
};

}  // namespace metaparse
