#pragma once

// Central finite-difference gradient check shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "harlm/model.hpp"

namespace harlm::testing {

struct TensorGradError {
  std::string name;
  double norm_rel = 0.0;     // ||analytic - numeric|| / ||numeric||
  double max_elem_rel = 0.0; // max |a - n| / max(|a|, |n|, 1e-6)
};

struct GradCheck {
  std::vector<TensorGradError> tensors;
  double worst_norm_rel = 0.0;
  double worst_elem_rel = 0.0;
  std::string worst_norm_tensor;
};

inline GradCheck finite_difference_check(ModelParams<double> params, const Batch& batch, double h) {
  const std::vector<double> analytic = loss_and_grad(params, batch).grad;
  GradCheck out;
  for (const TensorInfo& t : params.layout->tensors()) {
    TensorGradError e{t.name};
    double diff2 = 0.0, num2 = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      double& w = params.data[t.offset + i];
      const double saved = w;
      w = saved + h;
      const double up = loss_and_grad(params, batch).loss;
      w = saved - h;
      const double down = loss_and_grad(params, batch).loss;
      w = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[t.offset + i];
      diff2 += (a - numeric) * (a - numeric);
      num2 += numeric * numeric;
      e.max_elem_rel = std::max(e.max_elem_rel,
                                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
    }
    e.norm_rel = std::sqrt(diff2) / std::max(std::sqrt(num2), 1e-12);
    if (e.norm_rel > out.worst_norm_rel) {
      out.worst_norm_rel = e.norm_rel;
      out.worst_norm_tensor = t.name;
    }
    out.worst_elem_rel = std::max(out.worst_elem_rel, e.max_elem_rel);
    out.tensors.push_back(e);
  }
  return out;
}

}  // namespace harlm::testing
