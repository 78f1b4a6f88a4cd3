#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dsanet/autograd.hpp"
#include "dsanet/tensor.hpp"

namespace dsanet {

// Central finite-difference validation of the analytic gradients. Each case
// evaluates a scalar loss as a pure function of a flat coordinate vector
// (inputs and parameters concatenated); the analytic gradient from one
// backward pass is compared coordinate-wise against (f(x+h) - f(x-h)) / 2h.
//
// Error metric: |analytic - numeric| / max(|analytic|, |numeric|, 0.01).
// The absolute floor keeps near-zero coordinates from inflating the ratio.

struct CaseEval {
  double value = 0.0;
  std::vector<double> grad;  // filled only when requested
};
using FlatCaseFn =
    std::function<CaseEval(std::span<const double> flat, bool want_grad)>;

double finite_difference_worst_error(const FlatCaseFn& fn,
                                     std::vector<double> x0, double h);

struct GradCase {
  std::string name;
  // worst relative error over all coordinates, for one sampled trial
  std::function<double(std::uint64_t trial_seed, double h)> trial;
};

// All differentiable operations plus a two-block toy network.
std::vector<GradCase> standard_grad_cases();

struct GradSuiteOptions {
  std::uint64_t seed = 1;
  std::size_t trials = 10;
  double h = 1e-5;
  double tolerance = 1e-4;
  std::size_t jobs = 1;
};

struct GradCaseResult {
  std::string name;
  double worst_rel_error = 0.0;
  std::uint64_t worst_seed = 0;
};

struct GradSuiteReport {
  std::vector<GradCaseResult> results;
  double tolerance = 1e-4;
  bool all_ok() const {
    for (const GradCaseResult& r : results) {
      if (!(r.worst_rel_error < tolerance)) return false;
    }
    return true;
  }
};

GradSuiteReport run_gradient_suite(const GradSuiteOptions& options,
                                   std::span<const GradCase> extra_cases = {});

// True if any relu input on the tape sits within `margin` of the kink;
// sampled cases are redrawn when this trips so the finite-difference step
// cannot cross a nondifferentiable point.
bool has_relu_near_kink(const GradTape& tape, double margin);

}  // namespace dsanet
