#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "refpaint/tensor.hpp"

namespace refpaint {

struct GradCheckOptions {
  double step = 1e-5;           // central-difference half step
  double denom_floor = 1e-6;    // |a - n| / max(|a|, |n|, floor)
  // Raises the floor to this fraction of the group's largest analytic
  // gradient, so entries far below the group scale do not measure roundoff.
  double group_floor = 0.0;
  std::size_t max_entries = 0;  // per group; 0 checks every entry
  std::uint64_t seed = 0;       // entry sampling when max_entries > 0
};

struct GradCheckStats {
  std::string group;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of `loss` against central finite
/// differences for every named group. `loss` must rebuild the graph from the
/// current parameter values on each call.
std::vector<GradCheckStats> check_gradients(
    const std::function<Tensor<double>()>& loss,
    const std::vector<std::pair<std::string, Tensor<double>>>& groups,
    const GradCheckOptions& options = {});

/// Same check over a random sample of `count` scalars drawn across all groups,
/// reported as a single group named `name`.
GradCheckStats check_random_scalars(
    const std::function<Tensor<double>()>& loss,
    const std::vector<std::pair<std::string, Tensor<double>>>& groups, std::size_t count,
    const std::string& name, const GradCheckOptions& options = {});

/// Registered components for the command-line checker.
std::vector<std::string> gradcheck_components();

struct ComponentReport {
  std::string component;
  double threshold = 0.0;
  std::vector<GradCheckStats> groups;
  bool passed = false;
};

/// Runs the named component check; throws std::invalid_argument for unknown names.
ComponentReport run_gradcheck(const std::string& component, std::uint64_t seed);

}  // namespace refpaint
