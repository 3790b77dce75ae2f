// Central-difference verification of tape gradients.
#ifndef MURPHY_GRADCHECK_HPP
#define MURPHY_GRADCHECK_HPP

#include "murphy/ad.hpp"
#include "murphy/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace murphy {

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[row,col]"
  std::size_t entries = 0;
};

/// |a - n| / max(|a|, |n|, 1e-6)
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

/// `loss(tape)` builds a 1x1 loss that reads every parameter in `params`
/// through Tape::parameter. Each entry is perturbed by +-eps in turn.
template <typename LossFn>
GradCheckResult check_gradients(const std::vector<NamedParameter<double>>& params, LossFn&& loss, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("check_gradients: eps must be positive");
  for (auto& p : params) p.param->zero_grad();
  {
    ad::Tape<double> tape;
    tape.backward(loss(tape));
  }
  std::vector<Mat<double>> analytic;
  for (auto& p : params) {
    if (!p.param->grad.allFinite()) throw NonFiniteGradient("non-finite gradient in " + p.name);
    analytic.push_back(p.param->grad);
  }
  auto eval = [&] {
    ad::Tape<double> tape;
    return loss(tape).value()(0, 0);
  };

  GradCheckResult out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& value = params[k].param->value;
    for (Eigen::Index c = 0; c < value.cols(); ++c) {
      for (Eigen::Index r = 0; r < value.rows(); ++r) {
        const double saved = value(r, c);
        value(r, c) = saved + eps;
        const double up = eval();
        value(r, c) = saved - eps;
        const double down = eval();
        value(r, c) = saved;
        const double numeric = (up - down) / (2 * eps);
        if (!std::isfinite(numeric)) throw NonFiniteGradient("non-finite difference in " + params[k].name);
        const double err = relative_error(analytic[k](r, c), numeric);
        ++out.entries;
        if (out.worst.empty() || err > out.max_rel_error) {
          out.max_rel_error = err;
          out.worst = params[k].name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
        }
      }
    }
  }
  return out;
}

}  // namespace murphy

#endif  // MURPHY_GRADCHECK_HPP
