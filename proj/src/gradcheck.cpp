#include "tern/gradcheck.hpp"

#include <cmath>
#include <utility>
#include <vector>

#include "tern/error.hpp"

namespace tern {

namespace {

double eval_loss(const LossBuilder& f) {
  Graph g(Precision::f64);
  const Graph::NodeId loss = f(g);
  const Tensor& v = g.value(loss);
  if (v.numel() != 1) throw ArgumentError("check_gradients: loss must be scalar");
  if (!v.all_finite()) throw NumericError("check_gradients: non-finite loss");
  return v.data[0];
}

}  // namespace

GradCheckReport check_gradients(const LossBuilder& f, std::span<Parameter* const> params,
                                double eps, int sample_coords, Rng& rng) {
  if (eps < 1e-7 || eps > 1e-4) {
    throw ArgumentError("check_gradients: eps must lie in [1e-7, 1e-4]");
  }

  for (Parameter* p : params) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
  {
    Graph g(Precision::f64);
    const Graph::NodeId loss = f(g);
    g.backward(loss);
  }
  std::vector<Tensor> analytic_grads;
  analytic_grads.reserve(params.size());
  for (Parameter* p : params) analytic_grads.push_back(p->grad);

  // Enumerate (parameter, coordinate) pairs, then optionally subsample.
  std::vector<std::pair<size_t, size_t>> coords;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    for (size_t ci = 0; ci < params[pi]->value.data.size(); ++ci) coords.emplace_back(pi, ci);
  }
  if (sample_coords > 0 && static_cast<size_t>(sample_coords) < coords.size()) {
    rng.shuffle(coords);
    coords.resize(static_cast<size_t>(sample_coords));
  }

  GradCheckReport report;
  for (auto [pi, ci] : coords) {
    Parameter* p = params[pi];
    const double saved = p->value.data[ci];
    p->value.data[ci] = saved + eps;
    const double lp = eval_loss(f);
    p->value.data[ci] = saved - eps;
    const double lm = eval_loss(f);
    p->value.data[ci] = saved;
    const double numeric = (lp - lm) / (2.0 * eps);
    const double analytic = analytic_grads[pi].data[ci];
    const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    report.max_rel_err = std::max(report.max_rel_err, rel);
    report.coords_checked += 1;
  }
  return report;
}

}  // namespace tern
