// Full network: encoder -> relational graph convolution -> component
// embedding -> six heads -> HRCA adjustment of the S, T, IAO logits.
#ifndef MURPHY_MODEL_HPP
#define MURPHY_MODEL_HPP

#include "murphy/ad.hpp"
#include "murphy/encoder.hpp"
#include "murphy/heads.hpp"
#include "murphy/hrca.hpp"
#include "murphy/params.hpp"
#include "murphy/relgraph.hpp"
#include "murphy/schema.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>

namespace murphy {

struct ModelConfig {
  EncoderConfig encoder;
  RgcnConfig rgcn;
  HrcaConfig hrca;
  int component_dim = 16;
};

template <typename S>
class MurphyModel {
 public:
  using State = typename Encoder<S>::State;

  struct Forward {
    ad::Var<S> features;  // F
    ad::Var<S> fused;     // E (= F when the R-GCN is off)
    ComponentFeatures<S> components;
    LogitSet<S> raw;       // C_i
    LogitSet<S> adjusted;  // C^_i for S, T, IAO; C_i for I, A, O
    State state;
  };

  MurphyModel(const LabelSchema& schema, const ModelConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), priors_(schema) {
    std::mt19937_64 rng(seed);
    encoder_ = Encoder<S>(cfg.encoder, rng);
    const int d = cfg.encoder.output_dim;
    int fused = d;
    if (cfg.rgcn.enabled) {
      rgcn_ = RgcnParams<S>(cfg.rgcn, d, rng);
      fused = d + cfg.rgcn.hidden;
    }
    embed_ = ComponentEmbedParams<S>(fused, cfg.component_dim, rng);
    heads_ = HeadParams<S>(schema, fused, cfg.component_dim, rng);
    if (cfg.hrca.enabled) hrca_ = HrcaParams<S>(cfg.hrca, rng);
    for (auto t : kAllTypes) widths_[index_of(t)] = schema.width(t);
  }

  const ModelConfig& config() const { return cfg_; }
  int width(AnnotationType t) const { return widths_[index_of(t)]; }

  /// Training mode builds the label-masked adjacency from `labels`;
  /// inference mode must not receive labels.
  Forward forward(ad::Tape<S>& tape, const Mat<S>& inputs, const TargetSet* labels, GraphMode mode,
                  const State& state = std::nullopt) {
    Forward out;
    auto enc = encoder_.encode(tape.constant(inputs), state);
    out.features = enc.features;
    out.state = std::move(enc.state);
    out.fused = out.features;
    if (cfg_.rgcn.enabled) {
      const auto m = feature_correlation(out.features);
      std::optional<std::array<Mat<S>, kNumTypes>> consistency;
      if (mode == GraphMode::Training) {
        if (labels == nullptr) throw std::invalid_argument("forward: training mode requires labels");
        consistency.emplace();
        for (auto t : kAllTypes)
          (*consistency)[index_of(t)] = label_consistency<S>((*labels)[index_of(t)], width(t));
      }
      const auto adj = dynamic_adjacency(m, consistency, mode);
      out.fused = rgcn_forward(out.features, adj, rgcn_).fused;
    }
    out.components = embed_components(out.fused, embed_);
    out.raw = classify_all(out.fused, out.components, heads_);
    out.adjusted = out.raw;
    if (cfg_.hrca.enabled) {
      const auto h = hrca_forward<S>({out.raw[0], out.raw[1], out.raw[2]}, priors_, hrca_);
      for (int i = 0; i < 3; ++i) out.adjusted[i] = h.adjusted[i];
    }
    return out;
  }

  template <typename F>
  void visit(F&& f) {
    encoder_.visit(f);
    if (cfg_.rgcn.enabled) rgcn_.visit(f);
    embed_.visit(f);
    heads_.visit(f);
    if (cfg_.hrca.enabled) hrca_.visit(f);
  }

  void zero_grad() {
    visit([](const std::string&, Parameter<S>& p) { p.zero_grad(); });
  }

  Encoder<S>& encoder() { return encoder_; }
  RgcnParams<S>& rgcn() { return rgcn_; }
  ComponentEmbedParams<S>& embed() { return embed_; }
  HeadParams<S>& heads() { return heads_; }
  HrcaParams<S>& hrca() { return hrca_; }
  const HierarchyPriors<S>& priors() const { return priors_; }

 private:
  ModelConfig cfg_;
  HierarchyPriors<S> priors_;
  std::array<int, kNumTypes> widths_{};
  Encoder<S> encoder_;
  RgcnParams<S> rgcn_;
  ComponentEmbedParams<S> embed_;
  HeadParams<S> heads_;
  HrcaParams<S> hrca_;
};

}  // namespace murphy

#endif  // MURPHY_MODEL_HPP
