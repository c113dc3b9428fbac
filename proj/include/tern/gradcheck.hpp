#pragma once

#include <functional>
#include <span>

#include "tern/autodiff.hpp"
#include "tern/rng.hpp"

namespace tern {

// Builds a graph from the current parameter values and returns the scalar
// loss node. Must be deterministic (no dropout) so finite differences are
// meaningful.
using LossBuilder = std::function<Graph::NodeId(Graph&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  int coords_checked = 0;
};

// Compares analytic gradients against central differences in 64-bit mode.
// Per coordinate: |analytic - numeric| / max(1, |analytic|). When
// sample_coords > 0 and smaller than the total coordinate count, that many
// coordinates are sampled without replacement across all parameters.
// eps must lie in [1e-7, 1e-4]; a non-finite loss raises NumericError.
GradCheckReport check_gradients(const LossBuilder& f, std::span<Parameter* const> params,
                                double eps, int sample_coords, Rng& rng);

}  // namespace tern
