// Parameter initialization and the named-parameter listing used by
// checkpoints and gradient checks.
#ifndef MURPHY_PARAMS_HPP
#define MURPHY_PARAMS_HPP

#include "murphy/ad.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace murphy {

template <typename S>
Parameter<S> glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-a, a);
  Mat<S> m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = static_cast<S>(u(rng));
  return Parameter<S>(std::move(m));
}

template <typename S>
Parameter<S> zeros(Eigen::Index rows, Eigen::Index cols) {
  return Parameter<S>(Mat<S>::Zero(rows, cols));
}

template <typename S>
Parameter<S> ones(Eigen::Index rows, Eigen::Index cols) {
  return Parameter<S>(Mat<S>::Ones(rows, cols));
}

template <typename S>
struct NamedParameter {
  std::string name;
  Parameter<S>* param;
};

/// Flattens anything with a visit(f) member into a stable, ordered listing.
template <typename S, typename Module>
std::vector<NamedParameter<S>> list_parameters(Module& module) {
  std::vector<NamedParameter<S>> out;
  module.visit([&](const std::string& name, Parameter<S>& p) { out.push_back({name, &p}); });
  return out;
}

}  // namespace murphy

#endif  // MURPHY_PARAMS_HPP
