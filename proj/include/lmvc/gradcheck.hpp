#pragma once

#include <functional>
#include <vector>

#include "lmvc/tensor.hpp"

namespace lmvc {

// Central-difference verification of reverse-mode gradients.
//
// loss_fn must rebuild the computation from the parameters' current values
// and return a scalar tensor. Up to max_coords coordinates are sampled
// uniformly across all parameters; returns the max of
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double gradient_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor*> params,
                      double epsilon, int max_coords, Rng& rng);

}  // namespace lmvc
