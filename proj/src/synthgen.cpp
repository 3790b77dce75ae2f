#include "murphy/synthgen.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace murphy {

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

int geometric_duration(std::mt19937_64& rng, double mean, int min_len) {
  if (mean <= min_len) return min_len;
  std::geometric_distribution<int> extra(1.0 / (mean - min_len + 1.0));
  return min_len + extra(rng);
}

Eigen::RowVectorXd unit_gaussian(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::RowVectorXd v(dim);
  for (int d = 0; d < dim; ++d) v(d) = normal(rng);
  const double n = v.norm();
  return n > 0 ? Eigen::RowVectorXd(v / n) : v;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("feature file truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void GenConfig::check(const LabelSchema& schema) const {
  if (num_sequences < 0) throw std::invalid_argument("GenConfig: num_sequences must be non-negative");
  if (min_frames < 1 || max_frames < min_frames) throw std::invalid_argument("GenConfig: bad frame range");
  if (mean_step_frames < 1 || mean_task_frames < 1 || mean_activity_frames < 1 || mean_interlude_frames < 1)
    throw std::invalid_argument("GenConfig: durations must be >= 1");
  if (under_effective_rate < 0 || under_effective_rate > 1 || revisit_prob < 0 || revisit_prob > 1)
    throw std::invalid_argument("GenConfig: probabilities must lie in [0,1]");
  if (frame_rate <= 0) throw std::invalid_argument("GenConfig: frame_rate must be positive");
  if (styles.empty()) throw std::invalid_argument("GenConfig: at least one style is required");
  for (const auto& s : styles)
    if (static_cast<int>(s.activity_preference.size()) != schema.count(AnnotationType::IAO))
      throw std::invalid_argument("GenConfig: style preference size differs from activity count");
}

void FeatureConfig::check() const {
  if (dim < 1) throw std::invalid_argument("FeatureConfig: dim must be >= 1");
  if (class_centroid_scale <= 0 || noise_scale < 0 || style_offset_scale < 0)
    throw std::invalid_argument("FeatureConfig: invalid scale");
}

std::vector<StyleDescriptor> make_styles(const LabelSchema& schema, int count, std::uint64_t seed, double spread) {
  std::vector<StyleDescriptor> styles(static_cast<std::size_t>(count));
  for (int s = 0; s < count; ++s) {
    auto rng = make_rng(seed, 0x5151'0000ULL + static_cast<std::uint64_t>(s));
    std::normal_distribution<double> normal(0.0, spread);
    styles[s].activity_preference.resize(schema.count(AnnotationType::IAO));
    for (auto& w : styles[s].activity_preference) w = std::exp(normal(rng));
  }
  return styles;
}

int min_segment_frames(double frame_rate) { return std::max(1, static_cast<int>(std::ceil(2.0 * frame_rate - 1e-9))); }

int min_interlude_frames(double frame_rate) {
  return static_cast<int>(std::floor(kUnderEffectiveSeconds * frame_rate + 1e-9)) + 1;
}

AnnotatedSequence sample_workflow(const LabelSchema& schema, const GenConfig& cfg, int seq_index) {
  using AT = AnnotationType;
  cfg.check(schema);
  for (std::size_t s = 0; s < schema.step_tasks.size(); ++s)
    if (schema.step_tasks[s].empty()) throw std::invalid_argument("sample_workflow: step without tasks");
  for (std::size_t t = 0; t < schema.task_activities.size(); ++t)
    if (schema.task_activities[t].empty()) throw std::invalid_argument("sample_workflow: task without activities");

  auto rng = make_rng(cfg.seed, static_cast<std::uint64_t>(seq_index));
  AnnotatedSequence seq;
  seq.surgeon_id = seq_index % static_cast<int>(cfg.styles.size());
  seq.frame_rate = cfg.frame_rate;
  const auto& pref = cfg.styles[seq.surgeon_id].activity_preference;

  const int min_seg = min_segment_frames(cfg.frame_rate);
  const int min_gap = min_interlude_frames(cfg.frame_rate);
  const int target = std::uniform_int_distribution<int>(cfg.min_frames, cfg.max_frames)(rng);
  std::bernoulli_distribution interlude_coin(cfg.under_effective_rate);
  std::bernoulli_distribution revisit_coin(cfg.revisit_prob);

  auto& frames = seq.frames;
  auto len = [&] { return static_cast<int>(frames.size()); };
  auto room = [&] { return cfg.max_frames - len(); };
  auto append_interlude = [&](int n) {
    for (int k = 0; k < n; ++k) frames.push_back(under_effective_frame(schema, len()));
  };

  int last_activity = -1;
  int last_task = -1;
  int step = 0;
  bool done = false;
  const int num_steps = schema.count(AT::S);
  while (!done && len() < target) {
    const int step_budget = geometric_duration(rng, cfg.mean_step_frames, min_seg);
    const auto& tasks = schema.step_tasks[step];
    int used_step = 0;
    for (std::size_t ti = 0; !done && used_step < step_budget && len() < target; ++ti) {
      const int task = tasks[ti % tasks.size()];
      const int left_in_step = step_budget - used_step;
      int task_budget = std::min(geometric_duration(rng, cfg.mean_task_frames, min_seg), left_in_step);
      if (left_in_step - task_budget < min_seg) task_budget = left_in_step;

      int used_task = 0;
      while (used_task < task_budget && len() < target) {
        const auto& acts = schema.task_activities[task];
        std::vector<int> cand;
        std::vector<double> weight;
        for (int a : acts)
          if (a != last_activity) {
            cand.push_back(a);
            weight.push_back(pref[a]);
          }
        const bool prev_effective = !frames.empty() && frames.back().effective;
        if (cand.empty()) {
          // Only the previous activity is available. Within one task the
          // segment simply continues; across a task boundary the two
          // segments must be separated by an interlude.
          if (task != last_task && prev_effective) {
            const int gap = geometric_duration(rng, cfg.mean_interlude_frames, min_gap);
            if (gap > room()) {
              done = true;
              break;
            }
            append_interlude(gap);
          }
          cand.push_back(acts.front());
          weight.push_back(1.0);
        }
        const int activity = cand[std::discrete_distribution<int>(weight.begin(), weight.end())(rng)];

        const int left_in_task = task_budget - used_task;
        int dur = std::min(geometric_duration(rng, cfg.mean_activity_frames, min_seg), left_in_task);
        if (left_in_task - dur < min_seg) dur = left_in_task;
        dur = std::min(dur, room());
        if (dur < min_seg) {
          done = true;
          break;
        }
        const auto& triple = schema.activity_components[activity];
        for (int k = 0; k < dur; ++k) {
          FrameAnnotation f;
          f.frame = len();
          f.effective = true;
          f.labels = {step, task, activity, triple[0], triple[1], triple[2]};
          frames.push_back(f);
        }
        used_task += dur;
        last_activity = activity;
        last_task = task;

        if (interlude_coin(rng)) {
          const int gap = geometric_duration(rng, cfg.mean_interlude_frames, min_gap);
          if (gap <= room()) append_interlude(gap);
        }
      }
      used_step += used_task;
    }
    if (step > 0 && revisit_coin(rng))
      step -= 1;
    else
      step = (step + 1) % num_steps;
  }
  return seq;
}

Eigen::MatrixXd activity_centroids(const LabelSchema& schema, const FeatureConfig& fcfg) {
  fcfg.check();
  auto rng = make_rng(fcfg.centroid_seed, 0xC0FFEEULL);
  const int n = schema.width(AnnotationType::IAO);
  Eigen::MatrixXd c(n, fcfg.dim);
  for (int a = 0; a < n; ++a) c.row(a) = unit_gaussian(rng, fcfg.dim);
  return c;
}

Eigen::RowVectorXd style_offset(const FeatureConfig& fcfg, int surgeon_id) {
  auto rng = make_rng(fcfg.centroid_seed, 0x57'0000ULL + static_cast<std::uint64_t>(surgeon_id));
  return unit_gaussian(rng, fcfg.dim);
}

Eigen::MatrixXf render_features(const LabelSchema& schema, const AnnotatedSequence& seq, const FeatureConfig& fcfg,
                                std::uint64_t seed) {
  const Eigen::MatrixXd centroids = activity_centroids(schema, fcfg);
  const Eigen::RowVectorXd offset = style_offset(fcfg, seq.surgeon_id) * fcfg.style_offset_scale;
  auto rng = make_rng(seed, 0xFEA7ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXf out(seq.size(), fcfg.dim);
  for (int n = 0; n < seq.size(); ++n) {
    Eigen::RowVectorXd row = centroids.row(seq.frames[n].label(AnnotationType::IAO)) * fcfg.class_centroid_scale;
    if (fcfg.style_offset_scale > 0) row += offset;
    if (fcfg.noise_scale > 0)
      for (int d = 0; d < fcfg.dim; ++d) row(d) += normal(rng) * fcfg.noise_scale;
    out.row(n) = row.cast<float>();
  }
  return out;
}

DatasetSplit split_dataset(const std::vector<AnnotatedSequence>& sequences, const std::set<int>& train_styles,
                           const std::set<int>& test_styles) {
  if (train_styles.empty() || test_styles.empty())
    throw std::invalid_argument("split_dataset: train and test style sets must be non-empty");
  for (int s : train_styles)
    if (test_styles.count(s))
      throw std::invalid_argument("split_dataset: style " + std::to_string(s) + " is in both train and test");
  DatasetSplit split;
  split.train_styles = train_styles;
  split.test_styles = test_styles;
  for (int k = 0; k < static_cast<int>(sequences.size()); ++k) {
    const int s = sequences[k].surgeon_id;
    if (train_styles.count(s))
      split.train.push_back(k);
    else if (test_styles.count(s))
      split.test.push_back(k);
    else
      split.unassigned.push_back(k);
  }
  if (split.train.empty()) split.warnings.emplace_back("train side is empty");
  if (split.test.empty()) split.warnings.emplace_back("test side is empty");
  return split;
}

std::uint64_t feature_seed(std::uint64_t gen_seed, int seq_index) {
  // splitmix64 finalizer over (seed, index)
  std::uint64_t z = gen_seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(seq_index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Dataset generate_dataset(const LabelSchema& schema, const GenConfig& cfg, const FeatureConfig& fcfg,
                         const std::set<int>& train_styles, const std::set<int>& test_styles) {
  Dataset data;
  data.schema = schema;
  data.sequences.reserve(cfg.num_sequences);
  data.features.reserve(cfg.num_sequences);
  for (int k = 0; k < cfg.num_sequences; ++k) {
    data.sequences.push_back(sample_workflow(schema, cfg, k));
    data.features.push_back(render_features(schema, data.sequences.back(), fcfg, feature_seed(cfg.seed, k)));
  }
  data.split = split_dataset(data.sequences, train_styles, test_styles);
  return data;
}

void write_features(const Eigen::MatrixXf& features, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  put_u32(out, static_cast<std::uint32_t>(features.rows()));
  put_u32(out, static_cast<std::uint32_t>(features.cols()));
  for (Eigen::Index r = 0; r < features.rows(); ++r)
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
      std::uint32_t bits;
      const float v = features(r, c);
      std::memcpy(&bits, &v, sizeof bits);
      put_u32(out, bits);
    }
}

Eigen::MatrixXf read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::uint32_t rows = get_u32(in);
  const std::uint32_t cols = get_u32(in);
  Eigen::MatrixXf m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) {
      const std::uint32_t bits = get_u32(in);
      float v;
      std::memcpy(&v, &bits, sizeof v);
      m(r, c) = v;
    }
  return m;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_schema(data.schema, dir / "schema.json");
  nlohmann::ordered_json split;
  split["frame_rate"] = data.sequences.empty() ? 0.0 : data.sequences.front().frame_rate;
  split["train_styles"] = data.split.train_styles;
  split["test_styles"] = data.split.test_styles;
  split["train"] = data.split.train;
  split["test"] = data.split.test;
  auto seqs = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < data.sequences.size(); ++k) {
    const std::string stem = "seq_" + std::to_string(k);
    save_annotations(data.sequences[k].frames, dir / (stem + ".jsonl"));
    write_features(data.features[k], dir / (stem + ".feat"));
    seqs.push_back({{"index", k}, {"surgeon", data.sequences[k].surgeon_id}, {"frames", data.sequences[k].size()}});
  }
  split["sequences"] = seqs;
  std::ofstream out(dir / "split.json");
  out << split.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset data;
  data.schema = load_schema(dir / "schema.json");
  std::ifstream in(dir / "split.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "split.json").string());
  const auto split = nlohmann::json::parse(in);
  const double rate = split.at("frame_rate").get<double>();
  for (const auto& entry : split.at("sequences")) {
    const int k = entry.at("index").get<int>();
    const std::string stem = "seq_" + std::to_string(k);
    AnnotatedSequence seq;
    seq.surgeon_id = entry.at("surgeon").get<int>();
    seq.frame_rate = rate;
    seq.frames = load_annotations(dir / (stem + ".jsonl"));
    auto feat = read_features(dir / (stem + ".feat"));
    if (feat.rows() != seq.size())
      throw std::runtime_error(stem + ": feature rows do not match annotation frames");
    data.sequences.push_back(std::move(seq));
    data.features.push_back(std::move(feat));
  }
  data.split = split_dataset(data.sequences, split.at("train_styles").get<std::set<int>>(),
                             split.at("test_styles").get<std::set<int>>());
  return data;
}

}  // namespace murphy
