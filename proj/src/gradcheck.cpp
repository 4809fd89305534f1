#include "lmvc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lmvc {

double gradient_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor*> params,
                      double epsilon, int max_coords, Rng& rng) {
  if (epsilon <= 0.0) throw ConfigError("gradient_check epsilon must be positive");

  for (Tensor* p : params) p->zero_grad();
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.value())) throw NumericError("gradient_check: loss is non-finite");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor* p : params) analytic.push_back(p->grad());

  size_t total = 0;
  for (Tensor* p : params) total += p->numel();
  std::vector<size_t> coords(total);
  std::iota(coords.begin(), coords.end(), 0);
  std::shuffle(coords.begin(), coords.end(), rng);
  const size_t n_check = std::min<size_t>(coords.size(), static_cast<size_t>(max_coords));

  double worst = 0.0;
  NoGradGuard ng;
  for (size_t ci = 0; ci < n_check; ++ci) {
    size_t flat = coords[ci];
    size_t pi = 0;
    while (flat >= params[pi]->numel()) flat -= params[pi++]->numel();
    double& slot = params[pi]->data()[flat];
    const double saved = slot;

    slot = saved + epsilon;
    const double up = loss_fn().value();
    slot = saved - epsilon;
    const double down = loss_fn().value();
    slot = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("gradient_check: perturbed loss is non-finite");

    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[pi][flat];
    const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace lmvc
