#include "refpaint/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "refpaint/rng.hpp"

namespace refpaint {

namespace {

double rel_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

void analytic_grads(const std::function<Tensor<double>()>& loss,
                    const std::vector<std::pair<std::string, Tensor<double>>>& groups,
                    std::vector<std::vector<double>>& out) {
  for (const auto& [name, t] : groups) {
    Tensor<double> p = t;
    p.clear_grad();
  }
  loss().backward();
  out.clear();
  for (const auto& [name, t] : groups) {
    if (t.has_grad()) {
      out.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      out.emplace_back(t.numel(), 0.0);
    }
  }
}

double central_difference(const std::function<Tensor<double>()>& loss, Tensor<double> param,
                          std::size_t index, double h) {
  NoGradGuard guard;
  double& v = param.data()[index];
  const double saved = v;
  v = saved + h;
  const double plus = loss().item();
  v = saved - h;
  const double minus = loss().item();
  v = saved;
  return (plus - minus) / (2.0 * h);
}

}  // namespace

std::vector<GradCheckStats> check_gradients(
    const std::function<Tensor<double>()>& loss,
    const std::vector<std::pair<std::string, Tensor<double>>>& groups,
    const GradCheckOptions& options) {
  std::vector<std::vector<double>> grads;
  analytic_grads(loss, groups, grads);
  Rng rng(options.seed);
  std::vector<GradCheckStats> stats;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& [name, param] = groups[g];
    GradCheckStats st{name, 0.0, 0};
    double floor = options.denom_floor;
    for (double a : grads[g]) floor = std::max(floor, options.group_floor * std::abs(a));
    std::vector<std::size_t> entries(param.numel());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries > 0 && entries.size() > options.max_entries) {
      // Partial Fisher-Yates for a reproducible sample.
      for (std::size_t i = 0; i < options.max_entries; ++i) {
        std::swap(entries[i], entries[i + rng.below(entries.size() - i)]);
      }
      entries.resize(options.max_entries);
    }
    for (std::size_t idx : entries) {
      const double numeric = central_difference(loss, param, idx, options.step);
      st.max_rel_error =
          std::max(st.max_rel_error, rel_error(grads[g][idx], numeric, floor));
      ++st.checked;
    }
    stats.push_back(st);
  }
  return stats;
}

GradCheckStats check_random_scalars(
    const std::function<Tensor<double>()>& loss,
    const std::vector<std::pair<std::string, Tensor<double>>>& groups, std::size_t count,
    const std::string& name, const GradCheckOptions& options) {
  std::vector<std::vector<double>> grads;
  analytic_grads(loss, groups, grads);
  std::size_t total = 0;
  for (const auto& [n, t] : groups) total += t.numel();
  Rng rng(options.seed);
  GradCheckStats st{name, 0.0, 0};
  for (std::size_t i = 0; i < count && total > 0; ++i) {
    std::size_t flat = rng.below(total);
    std::size_t g = 0;
    while (flat >= groups[g].second.numel()) {
      flat -= groups[g].second.numel();
      ++g;
    }
    const double numeric = central_difference(loss, groups[g].second, flat, options.step);
    st.max_rel_error =
        std::max(st.max_rel_error, rel_error(grads[g][flat], numeric, options.denom_floor));
    ++st.checked;
  }
  return st;
}

}  // namespace refpaint
