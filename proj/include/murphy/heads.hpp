// The six classifiers and the weighted multi-task cross-entropy.
#ifndef MURPHY_HEADS_HPP
#define MURPHY_HEADS_HPP

#include "murphy/ad.hpp"
#include "murphy/hrca.hpp"
#include "murphy/params.hpp"
#include "murphy/schema.hpp"

#include <array>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace murphy {

/// Affine classifiers: S and T read the fused feature, IAO reads f_IAO and
/// I, A, O read their own component feature.
template <typename S>
struct HeadParams {
  std::array<Parameter<S>, kNumTypes> weight;
  std::array<Parameter<S>, kNumTypes> bias;

  HeadParams() = default;

  HeadParams(const LabelSchema& schema, int fused_dim, int component_dim, std::mt19937_64& rng) {
    for (auto type : kAllTypes) {
      const int i = index_of(type);
      const int in = type == AnnotationType::S || type == AnnotationType::T ? fused_dim
                     : type == AnnotationType::IAO                          ? 3 * component_dim
                                                                            : component_dim;
      weight[i] = glorot<S>(in, schema.width(type), rng);
      bias[i] = zeros<S>(1, schema.width(type));
    }
  }

  int width(AnnotationType t) const { return static_cast<int>(weight[index_of(t)].value.cols()); }

  template <typename F>
  void visit(F&& f) {
    for (auto type : kAllTypes) {
      const std::string pre = "head." + std::string(type_name(type));
      f(pre + ".w", weight[index_of(type)]);
      f(pre + ".b", bias[index_of(type)]);
    }
  }
};

template <typename S>
using LogitSet = std::array<ad::Var<S>, kNumTypes>;

template <typename S>
LogitSet<S> classify_all(const ad::Var<S>& fused, const ComponentFeatures<S>& comps, HeadParams<S>& params) {
  auto& t = fused.tape();
  auto affine = [&](AnnotationType type, const ad::Var<S>& x) {
    const int i = index_of(type);
    if (x.cols() != params.weight[i].value.rows())
      throw std::invalid_argument("classify_all: " + std::string(type_name(type)) + " head expects " +
                                  std::to_string(params.weight[i].value.rows()) + " inputs, got " +
                                  std::to_string(x.cols()));
    return ad::add_row(ad::matmul(x, t.parameter(params.weight[i])), t.parameter(params.bias[i]));
  };
  using AT = AnnotationType;
  LogitSet<S> out;
  out[index_of(AT::S)] = affine(AT::S, fused);
  out[index_of(AT::T)] = affine(AT::T, fused);
  out[index_of(AT::IAO)] = affine(AT::IAO, comps.activity);
  out[index_of(AT::I)] = affine(AT::I, comps.instrument);
  out[index_of(AT::A)] = affine(AT::A, comps.action);
  out[index_of(AT::O)] = affine(AT::O, comps.object);
  return out;
}

struct LossWeights {
  std::array<double, kNumTypes> alpha = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};

  double operator[](AnnotationType t) const { return alpha[index_of(t)]; }
};

using TargetSet = std::array<std::vector<int>, kNumTypes>;

/// Per-type batch-mean cross-entropies.
template <typename S>
std::array<ad::Var<S>, kNumTypes> per_type_losses(const LogitSet<S>& logits, const TargetSet& targets) {
  std::array<ad::Var<S>, kNumTypes> out;
  for (int i = 0; i < kNumTypes; ++i) out[i] = ad::cross_entropy(logits[i], targets[i]);
  return out;
}

/// sum_i alpha_i * CE(logits_i, targets_i).
template <typename S>
ad::Var<S> total_loss(const LogitSet<S>& logits, const TargetSet& targets, const LossWeights& weights) {
  const auto terms = per_type_losses(logits, targets);
  ad::Var<S> total = ad::scale(terms[0], static_cast<S>(weights.alpha[0]));
  for (int i = 1; i < kNumTypes; ++i) total = total + ad::scale(terms[i], static_cast<S>(weights.alpha[i]));
  return total;
}

}  // namespace murphy

#endif  // MURPHY_HEADS_HPP
