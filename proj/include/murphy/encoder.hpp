// Backbone producing F (B x D) from per-frame inputs. The memoryless variant
// is a dense tanh layer; the recurrent variant is a GRU whose state threads
// through consecutive calls of one sequence.
#ifndef MURPHY_ENCODER_HPP
#define MURPHY_ENCODER_HPP

#include "murphy/ad.hpp"
#include "murphy/params.hpp"

#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

namespace murphy {

enum class EncoderVariant { Memoryless, Recurrent };

struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::Memoryless;
  int input_dim = 32;
  int output_dim = 32;
  int state_dim = 32;
  /// Truncation length for back-propagation through time.
  int chunk = 64;

  void check() const {
    if (input_dim < 1 || output_dim < 1 || state_dim < 1 || chunk < 1)
      throw std::invalid_argument("EncoderConfig: dimensions must be >= 1");
  }
};

template <typename S>
class Encoder {
 public:
  /// Recurrent state carried between calls (1 x state_dim), detached from
  /// any tape. Memoryless encoders always return an empty state.
  using State = std::optional<Mat<S>>;

  struct Output {
    ad::Var<S> features;
    State state;
  };

  Encoder() = default;

  Encoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg.check();
    const int in = cfg.input_dim, out = cfg.output_dim, hs = cfg.state_dim;
    if (cfg.variant == EncoderVariant::Memoryless) {
      w_ = glorot<S>(in, out, rng);
      b_ = zeros<S>(1, out);
    } else {
      wz_ = glorot<S>(in, hs, rng);
      uz_ = glorot<S>(hs, hs, rng);
      bz_ = zeros<S>(1, hs);
      wr_ = glorot<S>(in, hs, rng);
      ur_ = glorot<S>(hs, hs, rng);
      br_ = zeros<S>(1, hs);
      wn_ = glorot<S>(in, hs, rng);
      un_ = glorot<S>(hs, hs, rng);
      bn_ = zeros<S>(1, hs);
      w_ = glorot<S>(hs, out, rng);
      b_ = zeros<S>(1, out);
    }
  }

  const EncoderConfig& config() const { return cfg_; }

  template <typename F>
  void visit(F&& f) {
    if (cfg_.variant == EncoderVariant::Recurrent) {
      f("encoder.gru.wz", wz_);
      f("encoder.gru.uz", uz_);
      f("encoder.gru.bz", bz_);
      f("encoder.gru.wr", wr_);
      f("encoder.gru.ur", ur_);
      f("encoder.gru.br", br_);
      f("encoder.gru.wn", wn_);
      f("encoder.gru.un", un_);
      f("encoder.gru.bn", bn_);
    }
    f("encoder.out.w", w_);
    f("encoder.out.b", b_);
  }

  /// Rows of `inputs` are frames; for the recurrent variant they must be in
  /// temporal order and `state` is the state after the previous call.
  Output encode(const ad::Var<S>& inputs, const State& state = std::nullopt) {
    if (inputs.cols() != cfg_.input_dim)
      throw std::invalid_argument("encode: expected " + std::to_string(cfg_.input_dim) + " input columns, got " +
                                  std::to_string(inputs.cols()));
    if (!inputs.value().allFinite()) throw std::domain_error("encode: non-finite input");
    auto& t = inputs.tape();
    if (cfg_.variant == EncoderVariant::Memoryless)
      return {ad::tanh(ad::add_row(ad::matmul(inputs, t.parameter(w_)), t.parameter(b_))), std::nullopt};

    if (state && (state->rows() != 1 || state->cols() != cfg_.state_dim))
      throw std::invalid_argument("encode: recurrent state has the wrong shape");
    const auto wz = t.parameter(wz_), uz = t.parameter(uz_), bz = t.parameter(bz_);
    const auto wr = t.parameter(wr_), ur = t.parameter(ur_), br = t.parameter(br_);
    const auto wn = t.parameter(wn_), un = t.parameter(un_), bn = t.parameter(bn_);

    ad::Var<S> h = t.constant(state ? *state : Mat<S>::Zero(1, cfg_.state_dim));
    // Input projections for the whole batch at once; the recurrence is row by row.
    const auto xz = ad::add_row(ad::matmul(inputs, wz), bz);
    const auto xr = ad::add_row(ad::matmul(inputs, wr), br);
    const auto xn = ad::add_row(ad::matmul(inputs, wn), bn);
    std::vector<ad::Var<S>> hs;
    hs.reserve(static_cast<std::size_t>(inputs.rows()));
    for (Eigen::Index k = 0; k < inputs.rows(); ++k) {
      const auto z = ad::sigmoid(ad::slice_rows(xz, k, 1) + ad::matmul(h, uz));
      const auto r = ad::sigmoid(ad::slice_rows(xr, k, 1) + ad::matmul(h, ur));
      const auto n = ad::tanh(ad::slice_rows(xn, k, 1) + ad::matmul(ad::hadamard(r, h), un));
      h = n + ad::hadamard(z, h - n);
      hs.push_back(h);
    }
    State next = Mat<S>(h.value());
    const auto hidden = ad::concat_rows(hs);
    return {ad::tanh(ad::add_row(ad::matmul(hidden, t.parameter(w_)), t.parameter(b_))), std::move(next)};
  }

 private:
  EncoderConfig cfg_;
  Parameter<S> w_, b_;
  Parameter<S> wz_, uz_, bz_, wr_, ur_, br_, wn_, un_, bn_;
};

}  // namespace murphy

#endif  // MURPHY_ENCODER_HPP
