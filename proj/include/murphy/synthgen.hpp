// Synthetic annotated procedures sampled top-down from a schema's containment
// grammar, and class-conditioned feature vectors rendered for each frame.
#ifndef MURPHY_SYNTHGEN_HPP
#define MURPHY_SYNTHGEN_HPP

#include "murphy/schema.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace murphy {

/// Per-surgeon habits: multiplicative preference over activities when a task
/// picks its next activity.
struct StyleDescriptor {
  std::vector<double> activity_preference;
};

struct GenConfig {
  int num_sequences = 60;
  int min_frames = 300;
  int max_frames = 500;
  double mean_step_frames = 55.0;
  double mean_task_frames = 25.0;
  double mean_activity_frames = 14.0;
  double mean_interlude_frames = 32.0;
  /// Probability of an under-effective interlude after each activity.
  double under_effective_rate = 0.15;
  /// Probability of returning to the previous step instead of advancing.
  double revisit_prob = 0.1;
  double frame_rate = 5.0;
  std::vector<StyleDescriptor> styles;
  std::uint64_t seed = 7;

  void check(const LabelSchema& schema) const;
};

/// Deterministic style descriptors; log-normal preferences with the given spread.
std::vector<StyleDescriptor> make_styles(const LabelSchema& schema, int count, std::uint64_t seed,
                                         double spread = 0.75);

struct FeatureConfig {
  int dim = 32;
  double class_centroid_scale = 1.0;
  double noise_scale = 0.12;
  double style_offset_scale = 0.3;
  /// Seeds the class centroids and style offsets shared by every sequence.
  std::uint64_t centroid_seed = 1234;

  void check() const;
};

struct AnnotatedSequence {
  int surgeon_id = 0;
  double frame_rate = 5.0;
  std::vector<FrameAnnotation> frames;

  int size() const { return static_cast<int>(frames.size()); }
};

/// Minimum segment length: ceil(2 s * frame_rate).
int min_segment_frames(double frame_rate);
/// Shortest legal under-effective interlude: strictly longer than 5 s.
int min_interlude_frames(double frame_rate);

/// Samples one procedure: an ordered step walk (with revisits), an ordered
/// task walk inside each step visit and a preference-weighted activity walk
/// inside each task, with geometric durations and optional interludes.
/// Deterministic in (cfg.seed, seq_index).
AnnotatedSequence sample_workflow(const LabelSchema& schema, const GenConfig& cfg, int seq_index);

/// Unit-norm centroid per activity category (reserved index included).
Eigen::MatrixXd activity_centroids(const LabelSchema& schema, const FeatureConfig& fcfg);
/// Unit-norm offset direction of one surgeon style.
Eigen::RowVectorXd style_offset(const FeatureConfig& fcfg, int surgeon_id);

/// N x D features: centroid * scale + style offset * scale + gaussian noise.
Eigen::MatrixXf render_features(const LabelSchema& schema, const AnnotatedSequence& seq, const FeatureConfig& fcfg,
                                std::uint64_t seed);

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> test;
  std::vector<int> unassigned;
  std::set<int> train_styles;
  std::set<int> test_styles;
  std::vector<std::string> warnings;
};

DatasetSplit split_dataset(const std::vector<AnnotatedSequence>& sequences, const std::set<int>& train_styles,
                           const std::set<int>& test_styles);

struct Dataset {
  LabelSchema schema;
  std::vector<AnnotatedSequence> sequences;
  std::vector<Eigen::MatrixXf> features;
  DatasetSplit split;
};

/// Render seed of sequence k, derived from the generation seed.
std::uint64_t feature_seed(std::uint64_t gen_seed, int seq_index);

Dataset generate_dataset(const LabelSchema& schema, const GenConfig& cfg, const FeatureConfig& fcfg,
                         const std::set<int>& train_styles, const std::set<int>& test_styles);

void write_features(const Eigen::MatrixXf& features, const std::filesystem::path& path);
Eigen::MatrixXf read_features(const std::filesystem::path& path);

/// Directory layout: schema.json, seq_<k>.jsonl, seq_<k>.feat, split.json.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace murphy

#endif  // MURPHY_SYNTHGEN_HPP
