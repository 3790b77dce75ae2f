// Explicit inter-relation learning: component embedding of the fused feature
// and hierarchy-masked cross attention between classifier outputs.
//
// Classifier logits C_i (B x T_i) are lifted by a width-3 1-D convolution to
// Q_i (B x K x T_i). For a target type i and source type j the attention is
//
//   A_{i<-j}[b] = softmax_over_source( Q_j[b]^T Q_i[b] / sqrt(d) ) .* M_prior
//
// of shape T_j x T_i, masked by the binary containment prior. Two combiners
// fold the attention back into the logits:
//   full:            C^_i = C_i + sum_{j != i} C_j A_{i<-j}
//   coarse-to-fine:  C^_i = C_i + sum_{j coarser} mean_source(A_{i<-j}) .* C_i
//
// Batched 3-D tensors are stored flattened as B x (K*T) (index k*T + t) and
// B x (T_j*T_i) (index s*T_i + t).
#ifndef MURPHY_HRCA_HPP
#define MURPHY_HRCA_HPP

#include "murphy/ad.hpp"
#include "murphy/params.hpp"
#include "murphy/schema.hpp"

#include <array>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace murphy {

// ---------------------------------------------------------------------------
// Component embedding

template <typename S>
struct ComponentEmbedParams {
  std::array<Parameter<S>, 3> gamma;  // (D+H) x P for I, A, O
  std::array<Parameter<S>, 3> bias;   // 1 x P

  ComponentEmbedParams() = default;

  ComponentEmbedParams(int fused_dim, int component_dim, std::mt19937_64& rng) {
    if (fused_dim < 1 || component_dim < 1) throw std::invalid_argument("ComponentEmbedParams: bad dimensions");
    for (int c = 0; c < 3; ++c) {
      gamma[c] = glorot<S>(fused_dim, component_dim, rng);
      bias[c] = zeros<S>(1, component_dim);
    }
  }

  int fused_dim() const { return static_cast<int>(gamma[0].value.rows()); }
  int component_dim() const { return static_cast<int>(gamma[0].value.cols()); }

  template <typename F>
  void visit(F&& f) {
    static constexpr const char* kNames[3] = {"I", "A", "O"};
    for (int c = 0; c < 3; ++c) {
      f(std::string("embed.") + kNames[c] + ".gamma", gamma[c]);
      f(std::string("embed.") + kNames[c] + ".bias", bias[c]);
    }
  }
};

template <typename S>
struct ComponentFeatures {
  ad::Var<S> instrument, action, object;  // B x P each
  ad::Var<S> activity;                    // B x 3P, [f_I f_A f_O]
};

template <typename S>
ComponentFeatures<S> embed_components(const ad::Var<S>& fused, ComponentEmbedParams<S>& params) {
  if (fused.cols() != params.fused_dim())
    throw std::invalid_argument("embed_components: fused width " + std::to_string(fused.cols()) + " != " +
                                std::to_string(params.fused_dim()));
  auto& t = fused.tape();
  std::array<ad::Var<S>, 3> f;
  for (int c = 0; c < 3; ++c)
    f[c] = ad::relu(ad::add_row(ad::matmul(fused, t.parameter(params.gamma[c])), t.parameter(params.bias[c])));
  return {f[0], f[1], f[2], ad::concat_cols<S>({f[0], f[1], f[2]})};
}

// ---------------------------------------------------------------------------
// Differentiable HRCA primitives

/// Width-3, zero-padded 1-D convolution from one channel to K channels.
/// logits: B x T, weight: K x 3, bias: 1 x K. Returns B x (K*T).
template <typename S>
ad::Var<S> conv1d_embed(const ad::Var<S>& logits, const ad::Var<S>& weight, const ad::Var<S>& bias) {
  const Eigen::Index b = logits.rows(), n = logits.cols(), k = weight.rows();
  if (weight.cols() != 3 || bias.rows() != 1 || bias.cols() != k)
    throw std::invalid_argument("conv1d_embed: weight must be K x 3 and bias 1 x K");
  const Mat<S>& c = logits.value();
  const Mat<S>& w = weight.value();
  Mat<S> q(b, k * n);
  for (Eigen::Index row = 0; row < b; ++row)
    for (Eigen::Index ch = 0; ch < k; ++ch)
      for (Eigen::Index t = 0; t < n; ++t) {
        S acc = bias.value()(0, ch);
        for (Eigen::Index u = 0; u < 3; ++u) {
          const Eigen::Index src = t + u - 1;
          if (src >= 0 && src < n) acc += w(ch, u) * c(row, src);
        }
        q(row, ch * n + t) = acc;
      }
  const auto ic = logits.id(), iw = weight.id(), ib = bias.id();
  return logits.tape().push(std::move(q), {ic, iw, ib}, [=](ad::Tape<S>& tape, const Mat<S>& g) {
    const Mat<S>& cv = tape.value(ic);
    const Mat<S>& wv = tape.value(iw);
    Mat<S> dc = Mat<S>::Zero(b, n), dw = Mat<S>::Zero(k, 3), db = Mat<S>::Zero(1, k);
    for (Eigen::Index row = 0; row < b; ++row)
      for (Eigen::Index ch = 0; ch < k; ++ch)
        for (Eigen::Index t = 0; t < n; ++t) {
          const S gv = g(row, ch * n + t);
          db(0, ch) += gv;
          for (Eigen::Index u = 0; u < 3; ++u) {
            const Eigen::Index src = t + u - 1;
            if (src < 0 || src >= n) continue;
            dc(row, src) += wv(ch, u) * gv;
            dw(ch, u) += cv(row, src) * gv;
          }
        }
    tape.accumulate(ic, dc);
    tape.accumulate(iw, dw);
    tape.accumulate(ib, db);
  });
}

/// Masked cross attention from source j to target i.
/// q_target: B x (K*T_i), q_source: B x (K*T_j), prior: T_j x T_i binary.
/// Returns B x (T_j*T_i); the softmax runs over the source axis.
template <typename S>
ad::Var<S> cross_attention(const ad::Var<S>& q_target, const ad::Var<S>& q_source, const Mat<S>& prior, int width,
                           S scale_dim) {
  const Eigen::Index b = q_target.rows();
  const Eigen::Index tj = prior.rows(), ti = prior.cols();
  if (width < 1 || q_target.cols() != width * ti || q_source.cols() != width * tj || q_source.rows() != b)
    throw std::invalid_argument("cross_attention: knowledge matrix orientation does not match Q shapes (expected " +
                                std::to_string(q_source.cols() / std::max(width, 1)) + " x " +
                                std::to_string(q_target.cols() / std::max(width, 1)) + ", got " +
                                std::to_string(tj) + " x " + std::to_string(ti) + ")");
  const S inv_sqrt = S(1) / std::sqrt(scale_dim);
  auto unflatten = [width](const Mat<S>& flat, Eigen::Index row, Eigen::Index n) {
    Mat<S> m(width, n);
    for (Eigen::Index k = 0; k < width; ++k)
      for (Eigen::Index t = 0; t < n; ++t) m(k, t) = flat(row, k * n + t);
    return m;
  };
  // Pre-mask softmax per batch row, kept for the backward pass.
  std::vector<Mat<S>> probs(static_cast<std::size_t>(b));
  Mat<S> out(b, tj * ti);
  for (Eigen::Index row = 0; row < b; ++row) {
    const Mat<S> qi = unflatten(q_target.value(), row, ti);
    const Mat<S> qj = unflatten(q_source.value(), row, tj);
    Mat<S> z = (qj.transpose() * qi) * inv_sqrt;  // T_j x T_i
    Mat<S> p = ad::softmax_rows_value<S>(Mat<S>(z.transpose())).transpose();
    for (Eigen::Index s = 0; s < tj; ++s)
      for (Eigen::Index t = 0; t < ti; ++t) out(row, s * ti + t) = p(s, t) * prior(s, t);
    probs[row] = std::move(p);
  }
  const auto iti = q_target.id(), itj = q_source.id();
  return q_target.tape().push(std::move(out), {iti, itj}, [=](ad::Tape<S>& tape, const Mat<S>& g) {
    Mat<S> dqi_flat = Mat<S>::Zero(b, width * ti), dqj_flat = Mat<S>::Zero(b, width * tj);
    for (Eigen::Index row = 0; row < b; ++row) {
      const Mat<S>& p = probs[row];
      Mat<S> dp(tj, ti);
      for (Eigen::Index s = 0; s < tj; ++s)
        for (Eigen::Index t = 0; t < ti; ++t) dp(s, t) = g(row, s * ti + t) * prior(s, t);
      const RowVec<S> col_dot = p.cwiseProduct(dp).colwise().sum();
      const Mat<S> dz = p.cwiseProduct(dp - col_dot.replicate(tj, 1)) * inv_sqrt;
      const Mat<S> qi = unflatten(tape.value(iti), row, ti);
      const Mat<S> qj = unflatten(tape.value(itj), row, tj);
      const Mat<S> dqi = qj * dz;              // K x T_i
      const Mat<S> dqj = qi * dz.transpose();  // K x T_j
      for (Eigen::Index k = 0; k < width; ++k) {
        for (Eigen::Index t = 0; t < ti; ++t) dqi_flat(row, k * ti + t) = dqi(k, t);
        for (Eigen::Index s = 0; s < tj; ++s) dqj_flat(row, k * tj + s) = dqj(k, s);
      }
    }
    tape.accumulate(iti, dqi_flat);
    tape.accumulate(itj, dqj_flat);
  });
}

/// Batched C_j (1 x T_j) times A (T_j x T_i) per row. Returns B x T_i.
template <typename S>
ad::Var<S> route(const ad::Var<S>& source_logits, const ad::Var<S>& attention, Eigen::Index target_width) {
  const Eigen::Index b = source_logits.rows(), tj = source_logits.cols(), ti = target_width;
  if (attention.rows() != b || attention.cols() != tj * ti) throw std::invalid_argument("route: shape mismatch");
  const Mat<S>& c = source_logits.value();
  const Mat<S>& a = attention.value();
  Mat<S> out = Mat<S>::Zero(b, ti);
  for (Eigen::Index row = 0; row < b; ++row)
    for (Eigen::Index s = 0; s < tj; ++s)
      for (Eigen::Index t = 0; t < ti; ++t) out(row, t) += c(row, s) * a(row, s * ti + t);
  const auto ic = source_logits.id(), ia = attention.id();
  return source_logits.tape().push(std::move(out), {ic, ia}, [=](ad::Tape<S>& tape, const Mat<S>& g) {
    const Mat<S>& cv = tape.value(ic);
    const Mat<S>& av = tape.value(ia);
    Mat<S> dc = Mat<S>::Zero(b, tj), da(b, tj * ti);
    for (Eigen::Index row = 0; row < b; ++row)
      for (Eigen::Index s = 0; s < tj; ++s)
        for (Eigen::Index t = 0; t < ti; ++t) {
          dc(row, s) += g(row, t) * av(row, s * ti + t);
          da(row, s * ti + t) = g(row, t) * cv(row, s);
        }
    tape.accumulate(ic, dc);
    tape.accumulate(ia, da);
  });
}

/// Mean of A over the source axis. Returns B x T_i.
template <typename S>
ad::Var<S> source_mean(const ad::Var<S>& attention, Eigen::Index source_width, Eigen::Index target_width) {
  const Eigen::Index b = attention.rows(), tj = source_width, ti = target_width;
  if (attention.cols() != tj * ti) throw std::invalid_argument("source_mean: shape mismatch");
  Mat<S> out = Mat<S>::Zero(b, ti);
  for (Eigen::Index s = 0; s < tj; ++s) out += attention.value().middleCols(s * ti, ti);
  out /= static_cast<S>(tj);
  const auto ia = attention.id();
  return attention.tape().push(std::move(out), {ia}, [=](ad::Tape<S>& tape, const Mat<S>& g) {
    tape.accumulate(ia, (g / static_cast<S>(tj)).replicate(1, tj));
  });
}

// ---------------------------------------------------------------------------
// Assembly

enum class HrcaMode { Full, CoarseToFine };

struct HrcaConfig {
  bool enabled = true;
  HrcaMode mode = HrcaMode::CoarseToFine;
  int width = 8;  // K; also the scaling constant d
};

/// (target, source) pairs the mode needs, primary-type indices 0..2.
inline std::vector<std::pair<AnnotationType, AnnotationType>> required_pairs(HrcaMode mode) {
  using AT = AnnotationType;
  if (mode == HrcaMode::CoarseToFine) return {{AT::T, AT::S}, {AT::IAO, AT::T}, {AT::IAO, AT::S}};
  return {{AT::S, AT::T}, {AT::S, AT::IAO}, {AT::T, AT::S}, {AT::T, AT::IAO}, {AT::IAO, AT::S}, {AT::IAO, AT::T}};
}

using AttentionKey = std::pair<AnnotationType, AnnotationType>;  // (target, source)

/// logits: S, T, IAO in that order. Returns the adjusted logits in the same order.
template <typename S>
std::array<ad::Var<S>, 3> assemble(HrcaMode mode, const std::array<ad::Var<S>, 3>& logits,
                                   const std::map<AttentionKey, ad::Var<S>>& attentions) {
  auto find = [&](AnnotationType target, AnnotationType source) -> const ad::Var<S>& {
    auto it = attentions.find({target, source});
    if (it == attentions.end())
      throw std::invalid_argument("assemble: missing attention " + std::string(type_name(target)) + "<-" +
                                  std::string(type_name(source)));
    return it->second;
  };
  std::array<ad::Var<S>, 3> out = logits;
  if (mode == HrcaMode::Full) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        const auto& a = find(kPrimaryTypes[i], kPrimaryTypes[j]);
        out[i] = out[i] + route(logits[j], a, logits[i].cols());
      }
    return out;
  }
  for (int i = 1; i < 3; ++i)
    for (int j = 0; j < i; ++j) {
      const auto& a = find(kPrimaryTypes[i], kPrimaryTypes[j]);
      const auto gate = source_mean(a, logits[j].cols(), logits[i].cols());
      out[i] = out[i] + ad::hadamard(gate, logits[i]);
    }
  return out;
}

/// Containment priors oriented source x target for every ordered primary pair.
template <typename S>
struct HierarchyPriors {
  std::map<AttentionKey, Mat<S>> masks;

  HierarchyPriors() = default;

  explicit HierarchyPriors(const LabelSchema& schema) {
    using AT = AnnotationType;
    const std::array<std::pair<AT, AT>, 3> coarse_fine = {{{AT::S, AT::T}, {AT::T, AT::IAO}, {AT::S, AT::IAO}}};
    for (const auto& [coarse, fine] : coarse_fine) {
      const Mat<S> m = build_knowledge_matrix(schema, coarse, fine).matrix.template cast<S>();
      masks[{fine, coarse}] = m;                // coarse is the source
      masks[{coarse, fine}] = m.transpose();    // fine is the source
    }
  }

  const Mat<S>& at(AnnotationType target, AnnotationType source) const { return masks.at({target, source}); }
};

template <typename S>
struct HrcaParams {
  HrcaConfig cfg;
  std::array<Parameter<S>, 3> conv_weight;  // K x 3 per primary type
  std::array<Parameter<S>, 3> conv_bias;    // 1 x K

  HrcaParams() = default;

  HrcaParams(const HrcaConfig& c, std::mt19937_64& rng) : cfg(c) {
    if (c.width < 1) throw std::invalid_argument("HrcaParams: width must be >= 1");
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(3.0));
    for (int i = 0; i < 3; ++i) {
      Mat<S> w(c.width, 3);
      for (Eigen::Index k = 0; k < w.rows(); ++k)
        for (Eigen::Index u = 0; u < 3; ++u) w(k, u) = static_cast<S>(normal(rng));
      conv_weight[i] = Parameter<S>(std::move(w));
      conv_bias[i] = zeros<S>(1, c.width);
    }
  }

  template <typename F>
  void visit(F&& f) {
    for (int i = 0; i < 3; ++i) {
      const std::string pre = "hrca." + std::string(type_name(kPrimaryTypes[i]));
      f(pre + ".conv_w", conv_weight[i]);
      f(pre + ".conv_b", conv_bias[i]);
    }
  }
};

template <typename S>
struct HrcaOutput {
  std::array<ad::Var<S>, 3> adjusted;
  std::map<AttentionKey, ad::Var<S>> attentions;
};

/// Embeds the S, T, IAO logits, computes the attentions the mode requires and
/// assembles the adjusted logits.
template <typename S>
HrcaOutput<S> hrca_forward(const std::array<ad::Var<S>, 3>& logits, const HierarchyPriors<S>& priors,
                           HrcaParams<S>& params) {
  auto& t = logits[0].tape();
  std::array<ad::Var<S>, 3> q;
  for (int i = 0; i < 3; ++i)
    q[i] = conv1d_embed(logits[i], t.parameter(params.conv_weight[i]), t.parameter(params.conv_bias[i]));
  auto slot = [](AnnotationType a) { return index_of(a); };  // S, T, IAO are 0..2
  HrcaOutput<S> out;
  for (const auto& [target, source] : required_pairs(params.cfg.mode))
    out.attentions[{target, source}] = cross_attention(q[slot(target)], q[slot(source)], priors.at(target, source),
                                                       params.cfg.width, static_cast<S>(params.cfg.width));
  out.adjusted = assemble(params.cfg.mode, logits, out.attentions);
  return out;
}

}  // namespace murphy

#endif  // MURPHY_HRCA_HPP
