#include "halo/oracle.hpp"

namespace halo::oracle {

std::vector<double> numeric_gradient(const GradProbe& probe) {
  if (!(probe.epsilon > 0)) throw ConfigError("numeric_gradient: epsilon must be > 0");
  std::vector<double> theta = probe.point;
  const double base = probe.loss(theta);
  if (!std::isfinite(base)) throw DomainError("numeric_gradient: loss not finite at base point (" + probe.target + ")");
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + probe.epsilon;
    const double up = probe.loss(theta);
    theta[i] = saved - probe.epsilon;
    const double down = probe.loss(theta);
    theta[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw DomainError("numeric_gradient: non-finite loss probing " + probe.target + "[" + std::to_string(i) + "]");
    }
    grad[i] = (up - down) / (2 * probe.epsilon);
  }
  return grad;
}

}  // namespace halo::oracle
