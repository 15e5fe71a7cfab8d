#include "metaparse/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace metaparse {

namespace {

constexpr double kNormEps = 1e-12;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

NodeId Tape::push(Node n) {
  check_finite(n.value, "tape op output");
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

bool Tape::any_requires(std::span<const NodeId> ids) const {
  return std::any_of(ids.begin(), ids.end(),
                     [&](NodeId id) { return nodes_[id].requires_grad; });
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::matvec(NodeId w, NodeId x) {
  const Tensor& W = value(w);
  const Tensor& X = value(x);
  require(W.is_matrix() && X.is_vector() && W.cols() == X.numel(),
          "matvec: shape mismatch " + W.shape_str() + " x " + X.shape_str());
  const std::size_t m = W.rows(), k = W.cols();
  Tensor out = Tensor::zeros({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    const double* row = &W.data[i * k];
    for (std::size_t j = 0; j < k; ++j) s += row[j] * X.data[j];
    out.data[i] = s;
  }
  Node n;
  n.op = Op::kMatVec;
  n.inputs = {w, x};
  n.requires_grad = any_requires(n.inputs);
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.same_shape(B), "add: shape mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
  Node n;
  n.op = Op::kAdd;
  n.inputs = {a, b};
  n.requires_grad = any_requires(n.inputs);
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.same_shape(B), "sub: shape mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= B.data[i];
  Node n;
  n.op = Op::kSub;
  n.inputs = {a, b};
  n.requires_grad = any_requires(n.inputs);
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.same_shape(B), "mul: shape mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
  Node n;
  n.op = Op::kMul;
  n.inputs = {a, b};
  n.requires_grad = any_requires(n.inputs);
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::mul_const(NodeId a, double c) {
  Tensor out = value(a);
  for (double& v : out.data) v *= c;
  Node n;
  n.op = Op::kMulConst;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.c0 = c;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::scale_by_scalar(NodeId v, NodeId s) {
  const Tensor& V = value(v);
  const Tensor& S = value(s);
  require(S.is_scalar(), "scale_by_scalar: scale must be scalar");
  Tensor out = V;
  for (double& x : out.data) x *= S.data[0];
  Node n;
  n.op = Op::kScaleByScalar;
  n.inputs = {v, s};
  n.requires_grad = any_requires(n.inputs);
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId a) {
  Tensor out = value(a);
  for (double& v : out.data) v = std::tanh(v);
  Node n;
  n.op = Op::kTanh;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId a) {
  Tensor out = value(a);
  for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  Node n;
  n.op = Op::kSigmoid;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::concat(std::span<const NodeId> parts) {
  require(!parts.empty(), "concat: no inputs");
  std::size_t total = 0;
  for (NodeId id : parts) {
    require(value(id).is_vector(), "concat: inputs must be vectors");
    total += value(id).numel();
  }
  Tensor out = Tensor::zeros({total});
  std::size_t off = 0;
  for (NodeId id : parts) {
    const Tensor& t = value(id);
    std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
    off += t.numel();
  }
  Node n;
  n.op = Op::kConcat;
  n.inputs.assign(parts.begin(), parts.end());
  n.requires_grad = any_requires(n.inputs);
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::mean_pool(std::span<const NodeId> parts) {
  require(!parts.empty(), "mean_pool: no inputs");
  const Tensor& first = value(parts[0]);
  Tensor out = Tensor::zeros(first.shape);
  for (NodeId id : parts) {
    require(value(id).same_shape(first), "mean_pool: shape mismatch");
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] += value(id).data[i];
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  for (double& v : out.data) v *= inv;
  Node n;
  n.op = Op::kMeanPool;
  n.inputs.assign(parts.begin(), parts.end());
  n.requires_grad = any_requires(n.inputs);
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::lookup_row(NodeId table, std::size_t row) {
  const Tensor& T = value(table);
  require(T.is_matrix(), "lookup_row: table must be a matrix");
  require(row < T.rows(), "lookup_row: row out of range");
  const std::size_t e = T.cols();
  Tensor out = Tensor::zeros({e});
  std::copy(T.data.begin() + row * e, T.data.begin() + (row + 1) * e,
            out.data.begin());
  Node n;
  n.op = Op::kLookupRow;
  n.inputs = {table};
  n.requires_grad = nodes_[table].requires_grad;
  n.a0 = row;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::softmax_masked(NodeId logits, std::vector<std::uint8_t> mask) {
  const Tensor& L = value(logits);
  require(L.is_vector(), "softmax_masked: logits must be a vector");
  require(mask.size() == L.numel(), "softmax_masked: mask length mismatch");
  double mx = -HUGE_VAL;
  bool any = false;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      mx = std::max(mx, L.data[i]);
      any = true;
    }
  }
  require(any, "softmax_masked: all entries masked");
  Tensor out = Tensor::zeros(L.shape);
  double z = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      out.data[i] = std::exp(L.data[i] - mx);
      z += out.data[i];
    }
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.data[i] /= z;
  }
  Node n;
  n.op = Op::kSoftmaxMasked;
  n.inputs = {logits};
  n.requires_grad = nodes_[logits].requires_grad;
  n.mask = std::move(mask);
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::logsumexp_masked(NodeId logits, std::vector<std::uint8_t> mask) {
  const Tensor& L = value(logits);
  require(L.is_vector(), "logsumexp_masked: logits must be a vector");
  require(mask.size() == L.numel(), "logsumexp_masked: mask length mismatch");
  double mx = -HUGE_VAL;
  bool any = false;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      mx = std::max(mx, L.data[i]);
      any = true;
    }
  }
  require(any, "logsumexp_masked: all entries masked");
  double z = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) z += std::exp(L.data[i] - mx);
  }
  Node n;
  n.op = Op::kLogSumExpMasked;
  n.inputs = {logits};
  n.requires_grad = nodes_[logits].requires_grad;
  n.mask = std::move(mask);
  n.value = Tensor::scalar(mx + std::log(z));
  return push(std::move(n));
}

NodeId Tape::l2_normalize(NodeId a) {
  const Tensor& A = value(a);
  require(A.is_vector(), "l2_normalize: input must be a vector");
  const double norm = l2_norm(A.data);
  const double denom = norm + kNormEps;
  Tensor out = A;
  for (double& v : out.data) v /= denom;
  Node n;
  n.op = Op::kL2Normalize;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::dot(NodeId a, NodeId b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.same_shape(B) && A.is_vector(), "dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < A.data.size(); ++i) s += A.data[i] * B.data[i];
  Node n;
  n.op = Op::kDot;
  n.inputs = {a, b};
  n.requires_grad = any_requires(n.inputs);
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId Tape::pick(NodeId v, std::size_t index) {
  const Tensor& V = value(v);
  require(V.is_vector() && index < V.numel(), "pick: index out of range");
  Node n;
  n.op = Op::kPick;
  n.inputs = {v};
  n.requires_grad = nodes_[v].requires_grad;
  n.a0 = index;
  n.value = Tensor::scalar(V.data[index]);
  return push(std::move(n));
}

NodeId Tape::log(NodeId a) {
  Tensor out = value(a);
  for (double& v : out.data) v = std::log(v);
  Node n;
  n.op = Op::kLog;
  n.inputs = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId Tape::slice(NodeId v, std::size_t start, std::size_t len) {
  const Tensor& V = value(v);
  require(V.is_vector() && start + len <= V.numel() && len > 0,
          "slice: range out of bounds");
  Tensor out = Tensor::zeros({len});
  std::copy(V.data.begin() + start, V.data.begin() + start + len,
            out.data.begin());
  Node n;
  n.op = Op::kSlice;
  n.inputs = {v};
  n.requires_grad = nodes_[v].requires_grad;
  n.a0 = start;
  n.a1 = len;
  n.value = std::move(out);
  return push(std::move(n));
}

std::vector<Tensor> Tape::backward(NodeId loss) const {
  if (loss >= nodes_.size()) throw std::invalid_argument("backward: bad node");
  if (!value(loss).is_scalar()) {
    throw std::invalid_argument("backward: loss must be scalar");
  }
  std::vector<Tensor> grad(nodes_.size());
  auto ensure = [&](NodeId id) -> Tensor& {
    if (grad[id].data.empty() && nodes_[id].value.numel() > 0) {
      grad[id] = Tensor::zeros(nodes_[id].value.shape);
    }
    return grad[id];
  };
  if (!nodes_[loss].requires_grad) {
    // Loss does not depend on any differentiable leaf; all grads are zero.
    return grad;
  }
  ensure(loss).data[0] = 1.0;

  for (NodeId id = loss + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || grad[id].data.empty()) continue;
    const Tensor& g = grad[id];
    check_finite(g, "backward gradient");
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatVec: {
        const Tensor& W = nodes_[n.inputs[0]].value;
        const Tensor& X = nodes_[n.inputs[1]].value;
        const std::size_t m = W.rows(), k = W.cols();
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& gw = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j)
              gw.data[i * k + j] += g.data[i] * X.data[j];
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor& gx = ensure(n.inputs[1]);
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = g.data[i];
            const double* row = &W.data[i * k];
            for (std::size_t j = 0; j < k; ++j) gx.data[j] += row[j] * gi;
          }
        }
        break;
      }
      case Op::kAdd: {
        for (int which = 0; which < 2; ++which) {
          NodeId in = n.inputs[which];
          if (!nodes_[in].requires_grad) continue;
          Tensor& gi = ensure(in);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            gi.data[i] += g.data[i];
        }
        break;
      }
      case Op::kSub: {
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& ga = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] += g.data[i];
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor& gb = ensure(n.inputs[1]);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            gb.data[i] -= g.data[i];
        }
        break;
      }
      case Op::kMul: {
        const Tensor& A = nodes_[n.inputs[0]].value;
        const Tensor& B = nodes_[n.inputs[1]].value;
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& ga = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] += g.data[i] * B.data[i];
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor& gb = ensure(n.inputs[1]);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            gb.data[i] += g.data[i] * A.data[i];
        }
        break;
      }
      case Op::kMulConst: {
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& ga = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            ga.data[i] += g.data[i] * n.c0;
        }
        break;
      }
      case Op::kScaleByScalar: {
        const Tensor& V = nodes_[n.inputs[0]].value;
        const double s = nodes_[n.inputs[1]].value.data[0];
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& gv = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            gv.data[i] += g.data[i] * s;
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor& gs = ensure(n.inputs[1]);
          double acc = 0.0;
          for (std::size_t i = 0; i < g.data.size(); ++i)
            acc += g.data[i] * V.data[i];
          gs.data[0] += acc;
        }
        break;
      }
      case Op::kTanh: {
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& ga = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double y = n.value.data[i];
            ga.data[i] += g.data[i] * (1.0 - y * y);
          }
        }
        break;
      }
      case Op::kSigmoid: {
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& ga = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double y = n.value.data[i];
            ga.data[i] += g.data[i] * y * (1.0 - y);
          }
        }
        break;
      }
      case Op::kConcat: {
        std::size_t off = 0;
        for (NodeId in : n.inputs) {
          const std::size_t len = nodes_[in].value.numel();
          if (nodes_[in].requires_grad) {
            Tensor& gi = ensure(in);
            for (std::size_t i = 0; i < len; ++i)
              gi.data[i] += g.data[off + i];
          }
          off += len;
        }
        break;
      }
      case Op::kMeanPool: {
        const double inv = 1.0 / static_cast<double>(n.inputs.size());
        for (NodeId in : n.inputs) {
          if (!nodes_[in].requires_grad) continue;
          Tensor& gi = ensure(in);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            gi.data[i] += g.data[i] * inv;
        }
        break;
      }
      case Op::kLookupRow: {
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& gt = ensure(n.inputs[0]);
          const std::size_t e = nodes_[n.inputs[0]].value.cols();
          for (std::size_t i = 0; i < e; ++i)
            gt.data[n.a0 * e + i] += g.data[i];
        }
        break;
      }
      case Op::kSoftmaxMasked: {
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& gl = ensure(n.inputs[0]);
          double gp = 0.0;
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            if (n.mask[i]) gp += g.data[i] * n.value.data[i];
          }
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            if (n.mask[i])
              gl.data[i] += n.value.data[i] * (g.data[i] - gp);
          }
        }
        break;
      }
      case Op::kLogSumExpMasked: {
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& gl = ensure(n.inputs[0]);
          const Tensor& L = nodes_[n.inputs[0]].value;
          const double lse = n.value.data[0];
          for (std::size_t i = 0; i < L.data.size(); ++i) {
            if (n.mask[i])
              gl.data[i] += g.data[0] * std::exp(L.data[i] - lse);
          }
        }
        break;
      }
      case Op::kL2Normalize: {
        if (nodes_[n.inputs[0]].requires_grad) {
          const Tensor& X = nodes_[n.inputs[0]].value;
          const double norm = l2_norm(X.data);
          const double denom = norm + kNormEps;
          double xg = 0.0;
          for (std::size_t i = 0; i < X.data.size(); ++i)
            xg += X.data[i] * g.data[i];
          Tensor& gx = ensure(n.inputs[0]);
          const double corr =
              norm > 0.0 ? xg / (norm * denom * denom) : 0.0;
          for (std::size_t i = 0; i < X.data.size(); ++i)
            gx.data[i] += g.data[i] / denom - X.data[i] * corr;
        }
        break;
      }
      case Op::kDot: {
        const Tensor& A = nodes_[n.inputs[0]].value;
        const Tensor& B = nodes_[n.inputs[1]].value;
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& ga = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < A.data.size(); ++i)
            ga.data[i] += g.data[0] * B.data[i];
        }
        if (nodes_[n.inputs[1]].requires_grad) {
          Tensor& gb = ensure(n.inputs[1]);
          for (std::size_t i = 0; i < B.data.size(); ++i)
            gb.data[i] += g.data[0] * A.data[i];
        }
        break;
      }
      case Op::kPick: {
        if (nodes_[n.inputs[0]].requires_grad) {
          ensure(n.inputs[0]).data[n.a0] += g.data[0];
        }
        break;
      }
      case Op::kLog: {
        if (nodes_[n.inputs[0]].requires_grad) {
          const Tensor& X = nodes_[n.inputs[0]].value;
          Tensor& gx = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            gx.data[i] += g.data[i] / X.data[i];
        }
        break;
      }
      case Op::kSlice: {
        if (nodes_[n.inputs[0]].requires_grad) {
          Tensor& gv = ensure(n.inputs[0]);
          for (std::size_t i = 0; i < n.a1; ++i)
            gv.data[n.a0 + i] += g.data[i];
        }
        break;
      }
    }
  }
  return grad;
}

}  // namespace metaparse
