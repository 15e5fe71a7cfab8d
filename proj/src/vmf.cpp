#include "metaparse/vmf.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "metaparse/tensor.hpp"

namespace metaparse {

namespace {

constexpr int kMaxRejectionTries = 1000;

// Gamma(a, 1) for a >= 1, Marsaglia-Tsang squeeze method.
double gamma_draw(double a, Rng& rng) {
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double beta_symmetric_draw(double a, Rng& rng) {
  const double g1 = gamma_draw(a, rng);
  const double g2 = gamma_draw(a, rng);
  return g1 / (g1 + g2);
}

std::vector<double> uniform_sphere(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (;;) {
    double norm2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
    if (norm2 > 1e-24) {
      const double inv = 1.0 / std::sqrt(norm2);
      for (double& x : v) x *= inv;
      return v;
    }
  }
}

}  // namespace

double bessel_ratio(std::size_t d, double kappa) {
  if (d < 2) throw std::invalid_argument("bessel_ratio: d must be >= 2");
  if (kappa < 0.0 || !std::isfinite(kappa))
    throw std::invalid_argument("bessel_ratio: kappa must be finite, >= 0");
  if (kappa == 0.0) return 0.0;
  const double nu = static_cast<double>(d) / 2.0;

  // I_{nu-1}/I_nu = 2 nu / x + I_{nu+1}/I_nu, unrolled into the continued
  // fraction 1/(2 nu/x + 1/(2(nu+1)/x + ...)), evaluated by modified Lentz.
  const double tiny = 1e-300;
  double f = tiny;
  double c = f;
  double dd = 0.0;
  const long max_iter = 1000000000L;
  for (long j = 1; j <= max_iter; ++j) {
    const double b = 2.0 * (nu + static_cast<double>(j - 1)) / kappa;
    dd = b + dd;
    if (dd == 0.0) dd = tiny;
    c = b + 1.0 / c;
    if (c == 0.0) c = tiny;
    dd = 1.0 / dd;
    const double delta = c * dd;
    f *= delta;
    if (std::fabs(delta - 1.0) < 1e-15) return f;
  }
  throw std::runtime_error("bessel_ratio: continued fraction stalled at d=" +
                           std::to_string(d) +
                           " kappa=" + std::to_string(kappa));
}

double c_kappa(std::size_t d, double kappa) {
  return kappa * bessel_ratio(d, kappa) / 2.0;
}

VmfDraw vmf_draw(std::size_t d, double kappa, Rng& rng) {
  if (d < 3) throw std::invalid_argument("vmf_draw: d must be >= 3");
  if (kappa <= 0.0 || !std::isfinite(kappa))
    throw std::invalid_argument("vmf_draw: kappa must be finite, > 0");
  const double m = static_cast<double>(d);
  const double b =
      (-2.0 * kappa + std::sqrt(4.0 * kappa * kappa + (m - 1.0) * (m - 1.0))) /
      (m - 1.0);
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + (m - 1.0) * std::log(1.0 - x0 * x0);

  double w = 0.0;
  bool accepted = false;
  for (int tries = 0; tries < kMaxRejectionTries; ++tries) {
    const double z = beta_symmetric_draw((m - 1.0) / 2.0, rng);
    w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = rng.uniform();
    if (kappa * w + (m - 1.0) * std::log(1.0 - x0 * w) - c >= std::log(u)) {
      accepted = true;
      break;
    }
  }
  if (!accepted)
    throw std::runtime_error("vmf_draw: rejection sampler exceeded its cap");

  VmfDraw draw;
  draw.omega = w;
  draw.tangent = uniform_sphere(d - 1, rng);
  return draw;
}

namespace {

std::vector<double> canonical_sample(std::size_t d, const VmfDraw& draw) {
  if (draw.tangent.size() != d - 1)
    throw std::invalid_argument("vmf sample: tangent dimension mismatch");
  std::vector<double> z(d);
  z[0] = draw.omega;
  const double s = std::sqrt(std::max(0.0, 1.0 - draw.omega * draw.omega));
  for (std::size_t i = 0; i + 1 < d; ++i) z[i + 1] = s * draw.tangent[i];
  return z;
}

}  // namespace

NodeId vmf_sample_node(Workspace& ws, NodeId mu, const VmfDraw& draw) {
  const std::size_t d = ws.tape.value(mu).numel();
  Tape& t = ws.tape;
  NodeId zc = ws.c(Tensor({d}, canonical_sample(d, draw)));
  Tensor e1 = Tensor::zeros({d});
  e1.data[0] = 1.0;
  NodeId u = t.l2_normalize(t.sub(ws.c(std::move(e1)), mu));
  NodeId proj = t.dot(u, zc);
  return t.sub(zc, t.mul_const(t.scale_by_scalar(u, proj), 2.0));
}

NodeId vmf_sample_node(Workspace& ws, NodeId mu, double kappa, Rng& rng) {
  return vmf_sample_node(ws, mu,
                         vmf_draw(ws.tape.value(mu).numel(), kappa, rng));
}

std::vector<double> vmf_sample_raw(const std::vector<double>& mu, double kappa,
                                   Rng& rng) {
  const std::size_t d = mu.size();
  const VmfDraw draw = vmf_draw(d, kappa, rng);
  std::vector<double> z = canonical_sample(d, draw);

  std::vector<double> u(d);
  u[0] = 1.0 - mu[0];
  for (std::size_t i = 1; i < d; ++i) u[i] = -mu[i];
  const double norm = l2_norm(u) + 1e-12;
  for (double& x : u) x /= norm;
  double proj = 0.0;
  for (std::size_t i = 0; i < d; ++i) proj += u[i] * z[i];
  for (std::size_t i = 0; i < d; ++i) z[i] -= 2.0 * proj * u[i];
  return z;
}

double vmf_kl(const std::vector<double>& mu1, const std::vector<double>& mu2,
              double kappa) {
  if (mu1.size() != mu2.size())
    throw std::invalid_argument("vmf_kl: dimension mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double diff = mu1[i] - mu2[i];
    sq += diff * diff;
  }
  return c_kappa(mu1.size(), kappa) * sq;
}

double latent_distance(const LatentCode& a, const LatentCode& b) {
  if (a.kappa != b.kappa)
    throw std::invalid_argument("latent_distance: kappa mismatch");
  return vmf_kl(a.mu_x, b.mu_x, a.kappa) + vmf_kl(a.mu_c, b.mu_c, a.kappa);
}

}  // namespace metaparse
