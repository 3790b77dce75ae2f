// Implicit relation learning over a mini-batch graph.
//
// Every frame of the batch is a node. For each annotation type r the
// adjacency S^r is the row-softmaxed cosine similarity M of the backbone
// features, masked during training by the label-consistency indicator A^r.
// A stack of relational graph convolutions with a self-connection then
// aggregates neighbours across all six relations:
//
//   h^{l+1}_i = relu( sum_r sum_k S^r_ik h^l_k W^l_r + h^l_i W^l_0 )
//
// after a layer normalization of F, and the result is fused as E = [F h].
#ifndef MURPHY_RELGRAPH_HPP
#define MURPHY_RELGRAPH_HPP

#include "murphy/ad.hpp"
#include "murphy/params.hpp"
#include "murphy/schema.hpp"

#include <array>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace murphy {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// M = softmax_rows(cosine(F_i, F_j)).
template <typename S>
ad::Var<S> feature_correlation(const ad::Var<S>& features) {
  if (features.rows() < 1) throw std::invalid_argument("feature_correlation: empty batch");
  return ad::softmax_rows(ad::cosine_similarity(features));
}

template <typename Derived>
Mat<typename Derived::Scalar> feature_correlation(const Eigen::MatrixBase<Derived>& features) {
  using S = typename Derived::Scalar;
  ad::Tape<S> tape;
  return feature_correlation(tape.constant(features.derived())).value();
}

/// A_ij = 1 iff labels i and j are equal.
template <typename S = double>
Mat<S> label_consistency(const std::vector<int>& labels, int num_categories) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  for (int y : labels)
    if (y < 0 || y >= num_categories)
      throw std::out_of_range("label_consistency: label " + std::to_string(y) + " outside [0," +
                              std::to_string(num_categories) + ")");
  Mat<S> a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = labels[i] == labels[j] ? S(1) : S(0);
  return a;
}

enum class GraphMode { Training, Inference };

template <typename S>
struct AdjacencySet {
  std::array<ad::Var<S>, kNumTypes> relations;
  GraphMode mode = GraphMode::Inference;
};

/// Training: S^r = M .* A^r for every relation. Inference: S^r = M.
template <typename S>
AdjacencySet<S> dynamic_adjacency(const ad::Var<S>& correlation,
                                  const std::optional<std::array<Mat<S>, kNumTypes>>& consistency, GraphMode mode) {
  AdjacencySet<S> adj;
  adj.mode = mode;
  if (mode == GraphMode::Inference) {
    if (consistency) throw std::invalid_argument("dynamic_adjacency: labels must not be used at inference");
    adj.relations.fill(correlation);
    return adj;
  }
  if (!consistency) throw std::invalid_argument("dynamic_adjacency: training mode requires label consistency");
  auto& tape = correlation.tape();
  for (int r = 0; r < kNumTypes; ++r) {
    const auto& a = (*consistency)[r];
    if (a.rows() != correlation.rows() || a.cols() != correlation.cols())
      throw std::invalid_argument("dynamic_adjacency: consistency matrix has the wrong shape");
    adj.relations[r] = ad::hadamard(correlation, tape.constant(a));
  }
  return adj;
}

struct RgcnConfig {
  bool enabled = true;
  int layers = 2;
  int hidden = 32;
  bool layer_norm = true;
  double layer_norm_eps = 1e-5;
};

template <typename S>
struct RgcnParams {
  RgcnConfig cfg;
  Parameter<S> ln_gamma, ln_beta;
  std::vector<std::array<Parameter<S>, kNumTypes>> relation;  // W^l_r
  std::vector<Parameter<S>> self;                             // W^l_0

  RgcnParams() = default;

  RgcnParams(const RgcnConfig& c, int input_dim, std::mt19937_64& rng) : cfg(c) {
    if (c.layers < 1 || c.hidden < 1 || input_dim < 1) throw std::invalid_argument("RgcnParams: bad dimensions");
    ln_gamma = ones<S>(1, input_dim);
    ln_beta = zeros<S>(1, input_dim);
    int in = input_dim;
    for (int l = 0; l < c.layers; ++l) {
      std::array<Parameter<S>, kNumTypes> w;
      for (auto& p : w) {
        p = glorot<S>(in, c.hidden, rng);
        // Six relations add up; keep the sum at the scale of one Glorot layer.
        p.value /= static_cast<S>(kNumTypes);
      }
      relation.push_back(std::move(w));
      self.push_back(glorot<S>(in, c.hidden, rng));
      in = c.hidden;
    }
  }

  int input_dim() const { return static_cast<int>(ln_gamma.value.cols()); }

  template <typename F>
  void visit(F&& f) {
    if (cfg.layer_norm) {
      f("rgcn.ln.gamma", ln_gamma);
      f("rgcn.ln.beta", ln_beta);
    }
    for (std::size_t l = 0; l < relation.size(); ++l) {
      const std::string pre = "rgcn.layer" + std::to_string(l);
      for (int r = 0; r < kNumTypes; ++r)
        f(pre + ".w_" + std::string(type_name(static_cast<AnnotationType>(r))), relation[l][r]);
      f(pre + ".w_self", self[l]);
    }
  }
};

template <typename S>
struct RgcnOutput {
  ad::Var<S> hidden;  // B x H
  ad::Var<S> fused;   // B x (D + H), [F h]
};

template <typename S>
RgcnOutput<S> rgcn_forward(const ad::Var<S>& features, const AdjacencySet<S>& adj, RgcnParams<S>& params) {
  auto& t = features.tape();
  if (features.cols() != params.input_dim())
    throw std::invalid_argument("rgcn_forward: feature width " + std::to_string(features.cols()) +
                                " does not match parameters (" + std::to_string(params.input_dim()) + ")");
  for (const auto& s : adj.relations)
    if (s.rows() != features.rows() || s.cols() != features.rows())
      throw std::invalid_argument("rgcn_forward: adjacency must be B x B");

  ad::Var<S> h = features;
  if (params.cfg.layer_norm)
    h = ad::layer_norm_rows(h, t.parameter(params.ln_gamma), t.parameter(params.ln_beta),
                            static_cast<S>(params.cfg.layer_norm_eps));
  for (std::size_t l = 0; l < params.relation.size(); ++l) {
    ad::Var<S> acc = ad::matmul(h, t.parameter(params.self[l]));
    // Relations sharing one adjacency node (inference) share the aggregate S h.
    std::size_t cached_id = static_cast<std::size_t>(-1);
    ad::Var<S> cached;
    for (int r = 0; r < kNumTypes; ++r) {
      if (adj.relations[r].id() != cached_id) {
        cached = ad::matmul(adj.relations[r], h);
        cached_id = adj.relations[r].id();
      }
      acc = acc + ad::matmul(cached, t.parameter(params.relation[l][r]));
    }
    h = ad::relu(acc);
    if (!h.value().allFinite())
      throw NonFiniteError("rgcn_forward: non-finite activation in layer " + std::to_string(l));
  }
  return {h, ad::concat_cols<S>({features, h})};
}

}  // namespace murphy

#endif  // MURPHY_RELGRAPH_HPP
