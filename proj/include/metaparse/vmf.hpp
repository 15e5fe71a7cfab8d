#pragma once

#include <cstddef>
#include <vector>

#include "metaparse/graph.hpp"
#include "metaparse/rng.hpp"

namespace metaparse {

// I_{d/2}(kappa) / I_{d/2-1}(kappa), in [0, 1), monotone in kappa. Evaluated
// as a continued fraction in ratio space, so no Bessel value ever overflows.
double bessel_ratio(std::size_t d, double kappa);

// kappa * bessel_ratio(d, kappa) / 2; the constant turning squared distance
// between mean directions into a KL divergence.
double c_kappa(std::size_t d, double kappa);

// One rejection-sampled draw in canonical position: the scalar omega along
// e1 and a uniform tangent direction. Both are constants w.r.t. mu; only the
// rotation that carries e1 to mu is differentiable.
struct VmfDraw {
  double omega = 0.0;
  std::vector<double> tangent;  // uniform on the (d-2)-sphere, d-1 entries
};

VmfDraw vmf_draw(std::size_t d, double kappa, Rng& rng);

// Householder-rotates the canonical sample so e1 lands on mu; gradients flow
// to mu through the reflection.
NodeId vmf_sample_node(Workspace& ws, NodeId mu, const VmfDraw& draw);
NodeId vmf_sample_node(Workspace& ws, NodeId mu, double kappa, Rng& rng);

// Plain-double sampler for index building and Monte-Carlo tests.
std::vector<double> vmf_sample_raw(const std::vector<double>& mu, double kappa,
                                   Rng& rng);

// KL(vMF(mu1, kappa) || vMF(mu2, kappa)) = c_kappa * ||mu1 - mu2||^2.
double vmf_kl(const std::vector<double>& mu1, const std::vector<double>& mu2,
              double kappa);

struct LatentCode {
  std::vector<double> mu_x;
  std::vector<double> mu_c;
  double kappa = 0.0;
};

// Sum of per-half KLs; the retrieval distance.
double latent_distance(const LatentCode& a, const LatentCode& b);

}  // namespace metaparse
