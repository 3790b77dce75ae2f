// Experiment plumbing: configuration, SGD training with checkpoints,
// evaluation reports, the ablation runner and module gradient checks.
#ifndef MURPHY_HARNESS_HPP
#define MURPHY_HARNESS_HPP

#include "murphy/gradcheck.hpp"
#include "murphy/heads.hpp"
#include "murphy/metrics.hpp"
#include "murphy/model.hpp"
#include "murphy/synthgen.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace murphy {

using json = nlohmann::json;

struct OptimizerConfig {
  double learning_rate = 0.01;
  double decay = 0.99;  // multiplied into the rate after every epoch
  double momentum = 0.0;
};

struct AblationConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<std::string> variants = {"baseline", "hrca_full", "hrca_c2f", "rgcn", "murphy"};
};

struct ExperimentConfig {
  std::filesystem::path schema_path = "data/rlls_schema.json";
  /// Loaded when it holds a dataset, otherwise generated (and written there
  /// when non-empty).
  std::filesystem::path data_dir;
  GenConfig generation;
  int num_styles = 3;
  double style_spread = 0.75;
  std::set<int> train_styles = {0, 1};
  std::set<int> test_styles = {2};
  FeatureConfig features;
  ModelConfig model;
  LossWeights loss;
  OptimizerConfig optimizer;
  int epochs = 20;
  int batch_size = 32;
  int eval_batch_size = 32;
  /// Model initialization and batch order. MURPHY_SEED overrides it.
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "runs/default";
  bool checkpoint_every_epoch = false;
  AblationConfig ablation;

  void check() const;
};

json config_to_json(const ExperimentConfig& cfg);
/// Relative paths resolve against `base_dir`. Missing keys keep defaults.
ExperimentConfig config_from_json(const json& doc, const std::filesystem::path& base_dir = {});
/// Reads the file and applies the MURPHY_SEED override.
ExperimentConfig load_config(const std::filesystem::path& path);
void apply_seed_override(ExperimentConfig& cfg);

json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const json& doc);

/// Dataset for the config: loaded from data_dir if present, otherwise
/// generated deterministically from the generation and feature configs.
Dataset prepare_dataset(const ExperimentConfig& cfg);

/// Contiguous frame windows of one sequence.
struct Chunk {
  int sequence;
  int start;
  int length;
};
std::vector<Chunk> make_chunks(const Dataset& data, const std::vector<int>& sequences, int chunk_size);
Mat<double> chunk_inputs(const Dataset& data, const Chunk& chunk);
TargetSet chunk_targets(const Dataset& data, const Chunk& chunk);

/// FNV-1a over the architecture and schema; stored in checkpoints.
std::string config_hash(const ModelConfig& model, const LabelSchema& schema);

struct TrainState {
  int epoch = 0;  // completed epochs
  double learning_rate = 0.01;
  std::vector<double> epoch_loss;
  std::vector<double> train_sap3;
  double best_sap3 = -1.0;
  int best_epoch = 0;
};

struct Checkpoint {
  ExperimentConfig config;
  LabelSchema schema;
  TrainState state;
  std::string hash;
  json params;    // name -> {rows, cols, data}
  json velocity;  // momentum buffers, empty without momentum
};

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, const LabelSchema& schema,
                     MurphyModel<double>& model, const TrainState& state,
                     const std::vector<Mat<double>>* velocity = nullptr);
/// Throws if the stored hash does not match the stored architecture.
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Rebuilds the model and copies the stored parameters in, checking names and
/// shapes.
MurphyModel<double> restore_model(const Checkpoint& ck);

/// Per-frame softmax scores over the given sequences, inference-mode graph.
EvalRecord predict(MurphyModel<double>& model, const Dataset& data, const std::vector<int>& sequences,
                   int chunk_size);

/// Metric report: per-type {"map"}, sap3, sap6, ed10/ed25 per primary type
/// (mean over sequences) and the same block per surgeon style.
json build_report(const EvalRecord& record, const Dataset& data, double frame_rate);

/// Report for a split name ("train" or "test") of the dataset.
json evaluate(MurphyModel<double>& model, const Dataset& data, const std::string& split, int chunk_size);

struct TrainResult {
  TrainState state;
  json report;  // best checkpoint on the test split
  std::filesystem::path best_checkpoint;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume;  // checkpoint to continue from
  std::optional<int> stop_after_epoch;          // interrupt early (testing resume)
  std::ostream* log = nullptr;
};

TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& opts = {});
TrainResult train(const ExperimentConfig& cfg, const TrainOptions& opts = {});

/// Variant overrides on top of a config: baseline (no R-GCN, no HRCA),
/// hrca_full, hrca_c2f, rgcn, murphy (R-GCN + coarse-to-fine HRCA).
ExperimentConfig ablation_variant(const ExperimentConfig& base, const std::string& variant);
json ablate(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Smallest hierarchy that still has branching at every level.
LabelSchema toy_schema();

enum class GradModule { Relgraph, Hrca, Heads, EndToEnd };
GradModule parse_grad_module(const std::string& name);
std::string grad_module_name(GradModule m);

struct GradCheckOptions {
  double eps = 1e-5;
  std::uint64_t seed = 1;
  bool zero_parameters = false;
};

/// Max relative error between tape and central-difference gradients of a
/// random projection loss on a small random instance.
GradCheckResult grad_check(GradModule module, const GradCheckOptions& opts = {});

}  // namespace murphy

#endif  // MURPHY_HARNESS_HPP
