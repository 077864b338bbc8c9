#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dreamrace/tensor.hpp"

namespace dreamrace {

// central-difference comparison against reverse-mode gradients.
//
// loss(with_grad): evaluates the scalar objective; when with_grad it must
// also accumulate gradients into the given parameters. The evaluation must
// be deterministic (reseed any rng inside). Runs at the precision of T;
// finite differences are only meaningful with T = double.
template <typename T>
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  long worst_index = -1;
};

template <typename T>
GradCheckReport<T> grad_check(const std::vector<Param<T>*>& params,
                              const std::function<T(bool with_grad)>& loss,
                              T eps = T(1e-5)) {
  if (eps <= T(0)) throw UsageError("grad_check: eps must be positive");
  for (auto* p : params) p->zero_grad();
  loss(true);
  std::vector<std::vector<T>> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  GradCheckReport<T> rep;
  for (size_t k = 0; k < params.size(); ++k) {
    Param<T>& p = *params[k];
    for (long i = 0; i < p.size(); ++i) {
      const T saved = p.value[i];
      p.value[i] = saved + eps;
      const T fp = loss(false);
      p.value[i] = saved - eps;
      const T fm = loss(false);
      p.value[i] = saved;
      const double numeric = double(fp - fm) / (2.0 * double(eps));
      const double rel = std::abs(double(analytic[k][i]) - numeric) /
                         std::max(1.0, std::abs(numeric));
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = p.name;
        rep.worst_index = i;
      }
    }
  }
  for (auto* p : params) p->zero_grad();
  return rep;
}

}  // namespace dreamrace
