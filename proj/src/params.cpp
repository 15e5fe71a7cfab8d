#include "metaparse/params.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "metaparse/serialize.hpp"

namespace metaparse {

Tensor& ModelParams::at(const std::string& name) {
  auto it = values.find(name);
  if (it == values.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

void ModelParams::add(const std::string& name, Tensor t) {
  if (has(name)) throw std::invalid_argument("duplicate parameter: " + name);
  values.emplace(name, std::move(t));
}

std::size_t ModelParams::total_size() const {
  std::size_t n = 0;
  for (const auto& [name, t] : values) n += t.numel();
  return n;
}

void add_uniform(ModelParams& p, const std::string& name,
                 std::vector<std::size_t> shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-0.08, 0.08);
  p.add(name, std::move(t));
}

void add_zeros(ModelParams& p, const std::string& name,
               std::vector<std::size_t> shape) {
  p.add(name, Tensor::zeros(std::move(shape)));
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  if (state.t == 0) {
    for (const auto& [name, t] : params.values) {
      state.m.emplace(name, Tensor::zeros(t.shape));
      state.v.emplace(name, Tensor::zeros(t.shape));
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (auto& [name, theta] : params.values) {
    auto mit = state.m.find(name);
    auto vit = state.v.find(name);
    if (mit == state.m.end() || vit == state.v.end())
      throw std::invalid_argument("adam_step: unseen parameter " + name);
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    const Tensor* g = nullptr;
    auto git = grads.find(name);
    if (git != grads.end()) {
      if (!git->second.same_shape(theta))
        throw std::invalid_argument("adam_step: gradient shape mismatch for " +
                                    name);
      g = &git->second;
    }
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
      const double gi = g ? g->data[i] : 0.0;
      m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
      v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      theta.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    check_finite(theta, "adam_step parameter " + name);
  }
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write checkpoint: " + path);
  std::ofstream man(path + ".manifest");
  if (!man)
    throw std::runtime_error("cannot write checkpoint manifest: " + path);
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params.values) {
    man << name << ' ';
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
      if (i) man << 'x';
      man << t.shape[i];
    }
    man << ' ' << offset << '\n';
    for (double v : t.data) write_f64_le(bin, v);
    offset += 8 * t.numel();
  }
  if (!bin || !man) throw std::runtime_error("checkpoint write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream man(path + ".manifest");
  if (!man)
    throw std::runtime_error("cannot read checkpoint manifest: " + path);
  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read checkpoint: " + path);
  ModelParams out;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, dims;
    std::uint64_t offset = 0;
    if (!(ls >> name >> dims >> offset))
      throw std::runtime_error("malformed checkpoint manifest line: " + line);
    std::vector<std::size_t> shape;
    std::istringstream ds(dims);
    std::string piece;
    while (std::getline(ds, piece, 'x')) {
      if (piece.empty())
        throw std::runtime_error("malformed shape in manifest: " + line);
      shape.push_back(static_cast<std::size_t>(std::stoull(piece)));
    }
    Tensor t = Tensor::zeros(shape);
    bin.seekg(static_cast<std::streamoff>(offset));
    for (double& v : t.data) v = read_f64_le(bin);
    check_finite(t, "checkpoint array " + name);
    out.add(name, std::move(t));
  }
  return out;
}

}  // namespace metaparse
