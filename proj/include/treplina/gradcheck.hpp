#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "treplina/rng.hpp"
#include "treplina/tensor.hpp"

namespace treplina {

struct GradCheckReport {
  struct PerParam {
    std::string name;
    double max_rel_error = 0.0;
    int64_t coords_checked = 0;
  };
  std::vector<PerParam> params;
  double max_rel_error = 0.0;
  int64_t coords_checked = 0;
  double epsilon = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  int64_t max_coords_per_param = 0;  // 0 = all coordinates
  uint64_t sample_seed = 0;
};

/// Compares caller-supplied analytic gradients against central finite
/// differences of f. f must be deterministic; it is re-evaluated with
/// perturbed parameter values and must not depend on prior graph state.
inline GradCheckReport compare_grads(const std::vector<std::pair<std::string, Tensor>>& params,
                                     const std::vector<std::vector<double>>& analytic,
                                     const std::function<double()>& f,
                                     const GradCheckOptions& opts = {}) {
  if (opts.epsilon <= 0.0) throw ValueError("gradient check: epsilon must be positive");
  if (analytic.size() != params.size())
    throw ValueError("gradient check: analytic gradient count does not match parameter count");
  GradCheckReport report;
  report.epsilon = opts.epsilon;
  report.tolerance = opts.tolerance;
  Rng sampler(opts.sample_seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor param = params[pi].second;
    GradCheckReport::PerParam pp;
    pp.name = params[pi].first;
    const int64_t n = param.numel();
    std::vector<int64_t> coords;
    if (opts.max_coords_per_param > 0 && n > opts.max_coords_per_param) {
      auto perm = sampler.permutation(n);
      coords.assign(perm.begin(), perm.begin() + opts.max_coords_per_param);
    } else {
      coords.resize(n);
      for (int64_t i = 0; i < n; ++i) coords[i] = i;
    }
    for (int64_t i : coords) {
      double& slot = param.mutable_value()[i];
      const double saved = slot;
      slot = saved + opts.epsilon;
      double up = f();
      slot = saved - opts.epsilon;
      double down = f();
      slot = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw ValueError("gradient check: objective is non-finite at " + pp.name);
      double numeric = (up - down) / (2.0 * opts.epsilon);
      double rel = std::abs(analytic[pi][i] - numeric) / std::max(1.0, std::abs(numeric));
      pp.max_rel_error = std::max(pp.max_rel_error, rel);
      ++pp.coords_checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, pp.max_rel_error);
    report.coords_checked += pp.coords_checked;
    report.params.push_back(std::move(pp));
  }
  report.pass = report.max_rel_error <= opts.tolerance;
  return report;
}

/// Runs f once through the graph to get analytic gradients, then checks them
/// against central finite differences.
inline GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                         const std::vector<std::pair<std::string, Tensor>>& params,
                                         const GradCheckOptions& opts = {}) {
  for (auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
  Tensor loss = f();
  if (loss.numel() != 1) throw ShapeError("gradient check: objective must be scalar");
  if (!std::isfinite(loss.item())) throw ValueError("gradient check: objective is non-finite");
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& [name, p] : params) {
    if (p.has_grad())
      analytic.push_back(p.grad());
    else
      analytic.emplace_back(p.numel(), 0.0);
  }
  for (auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
  auto scalar_f = [&f]() {
    NoGradGuard ng;
    return f().item();
  };
  return compare_grads(params, analytic, scalar_f, opts);
}

}  // namespace treplina
