#include "murphy/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace murphy {

namespace fs = std::filesystem;

namespace {

std::string encoder_variant_name(EncoderVariant v) { return v == EncoderVariant::Recurrent ? "recurrent" : "memoryless"; }

EncoderVariant parse_encoder_variant(const std::string& s) {
  if (s == "memoryless") return EncoderVariant::Memoryless;
  if (s == "recurrent") return EncoderVariant::Recurrent;
  throw std::invalid_argument("unknown encoder variant '" + s + "'");
}

std::string hrca_mode_name(HrcaMode m) { return m == HrcaMode::Full ? "full" : "coarse_to_fine"; }

HrcaMode parse_hrca_mode(const std::string& s) {
  if (s == "full") return HrcaMode::Full;
  if (s == "coarse_to_fine" || s == "c2f") return HrcaMode::CoarseToFine;
  throw std::invalid_argument("unknown hrca mode '" + s + "'");
}

template <typename T>
void read_opt(const json& doc, const char* key, T& into) {
  if (doc.contains(key)) into = doc.at(key).get<T>();
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

json matrix_to_json(const Mat<double>& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Mat<double> matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw std::runtime_error("matrix entry count mismatch");
  Mat<double> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::check() const {
  if (!schema_path.empty() && !fs::exists(schema_path) && (data_dir.empty() || !fs::exists(data_dir / "split.json")))
    throw std::invalid_argument("ExperimentConfig: schema file " + schema_path.string() + " does not exist");
  if (batch_size < 1 || eval_batch_size < 1) throw std::invalid_argument("ExperimentConfig: batch size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("ExperimentConfig: epochs must be >= 0");
  if (num_styles < 1) throw std::invalid_argument("ExperimentConfig: num_styles must be >= 1");
  if (!(optimizer.learning_rate > 0) || !(optimizer.decay > 0) || optimizer.momentum < 0 || optimizer.momentum >= 1)
    throw std::invalid_argument("ExperimentConfig: invalid optimizer settings");
  if (model.encoder.input_dim != features.dim)
    throw std::invalid_argument("ExperimentConfig: encoder input_dim " + std::to_string(model.encoder.input_dim) +
                                " differs from feature dim " + std::to_string(features.dim));
  for (int s : train_styles)
    if (s < 0 || s >= num_styles) throw std::invalid_argument("ExperimentConfig: train style out of range");
  for (int s : test_styles)
    if (s < 0 || s >= num_styles) throw std::invalid_argument("ExperimentConfig: test style out of range");
  model.encoder.check();
  features.check();
}

json model_config_to_json(const ModelConfig& m) {
  return {{"encoder",
           {{"variant", encoder_variant_name(m.encoder.variant)},
            {"input_dim", m.encoder.input_dim},
            {"output_dim", m.encoder.output_dim},
            {"state_dim", m.encoder.state_dim},
            {"chunk", m.encoder.chunk}}},
          {"rgcn",
           {{"enabled", m.rgcn.enabled},
            {"layers", m.rgcn.layers},
            {"hidden", m.rgcn.hidden},
            {"layer_norm", m.rgcn.layer_norm},
            {"layer_norm_eps", m.rgcn.layer_norm_eps}}},
          {"hrca", {{"enabled", m.hrca.enabled}, {"mode", hrca_mode_name(m.hrca.mode)}, {"width", m.hrca.width}}},
          {"component_dim", m.component_dim}};
}

ModelConfig model_config_from_json(const json& doc) {
  ModelConfig m;
  if (doc.contains("encoder")) {
    const auto& e = doc.at("encoder");
    if (e.contains("variant")) m.encoder.variant = parse_encoder_variant(e.at("variant").get<std::string>());
    read_opt(e, "input_dim", m.encoder.input_dim);
    read_opt(e, "output_dim", m.encoder.output_dim);
    read_opt(e, "state_dim", m.encoder.state_dim);
    read_opt(e, "chunk", m.encoder.chunk);
  }
  if (doc.contains("rgcn")) {
    const auto& r = doc.at("rgcn");
    read_opt(r, "enabled", m.rgcn.enabled);
    read_opt(r, "layers", m.rgcn.layers);
    read_opt(r, "hidden", m.rgcn.hidden);
    read_opt(r, "layer_norm", m.rgcn.layer_norm);
    read_opt(r, "layer_norm_eps", m.rgcn.layer_norm_eps);
  }
  if (doc.contains("hrca")) {
    const auto& h = doc.at("hrca");
    read_opt(h, "enabled", m.hrca.enabled);
    if (h.contains("mode")) m.hrca.mode = parse_hrca_mode(h.at("mode").get<std::string>());
    read_opt(h, "width", m.hrca.width);
  }
  read_opt(doc, "component_dim", m.component_dim);
  return m;
}

json config_to_json(const ExperimentConfig& c) {
  const auto& g = c.generation;
  const auto& f = c.features;
  json loss = json::object();
  for (auto t : kAllTypes) loss[std::string(type_name(t))] = c.loss[t];
  return {{"schema", c.schema_path.string()},
          {"data_dir", c.data_dir.string()},
          {"generation",
           {{"num_sequences", g.num_sequences},
            {"min_frames", g.min_frames},
            {"max_frames", g.max_frames},
            {"mean_step_frames", g.mean_step_frames},
            {"mean_task_frames", g.mean_task_frames},
            {"mean_activity_frames", g.mean_activity_frames},
            {"mean_interlude_frames", g.mean_interlude_frames},
            {"under_effective_rate", g.under_effective_rate},
            {"revisit_prob", g.revisit_prob},
            {"frame_rate", g.frame_rate},
            {"seed", g.seed},
            {"num_styles", c.num_styles},
            {"style_spread", c.style_spread},
            {"train_styles", c.train_styles},
            {"test_styles", c.test_styles}}},
          {"features",
           {{"dim", f.dim},
            {"class_centroid_scale", f.class_centroid_scale},
            {"noise_scale", f.noise_scale},
            {"style_offset_scale", f.style_offset_scale},
            {"centroid_seed", f.centroid_seed}}},
          {"model", model_config_to_json(c.model)},
          {"loss_weights", loss},
          {"optimizer",
           {{"learning_rate", c.optimizer.learning_rate},
            {"decay", c.optimizer.decay},
            {"momentum", c.optimizer.momentum}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"eval_batch_size", c.eval_batch_size},
          {"seed", c.seed},
          {"output_dir", c.output_dir.string()},
          {"checkpoint_every_epoch", c.checkpoint_every_epoch},
          {"ablation", {{"seeds", c.ablation.seeds}, {"variants", c.ablation.variants}}}};
}

ExperimentConfig config_from_json(const json& doc, const fs::path& base_dir) {
  ExperimentConfig c;
  if (doc.contains("schema")) c.schema_path = resolve(doc.at("schema").get<std::string>(), base_dir);
  if (doc.contains("data_dir")) c.data_dir = resolve(doc.at("data_dir").get<std::string>(), base_dir);
  if (doc.contains("generation")) {
    const auto& g = doc.at("generation");
    read_opt(g, "num_sequences", c.generation.num_sequences);
    read_opt(g, "min_frames", c.generation.min_frames);
    read_opt(g, "max_frames", c.generation.max_frames);
    read_opt(g, "mean_step_frames", c.generation.mean_step_frames);
    read_opt(g, "mean_task_frames", c.generation.mean_task_frames);
    read_opt(g, "mean_activity_frames", c.generation.mean_activity_frames);
    read_opt(g, "mean_interlude_frames", c.generation.mean_interlude_frames);
    read_opt(g, "under_effective_rate", c.generation.under_effective_rate);
    read_opt(g, "revisit_prob", c.generation.revisit_prob);
    read_opt(g, "frame_rate", c.generation.frame_rate);
    read_opt(g, "seed", c.generation.seed);
    read_opt(g, "num_styles", c.num_styles);
    read_opt(g, "style_spread", c.style_spread);
    read_opt(g, "train_styles", c.train_styles);
    read_opt(g, "test_styles", c.test_styles);
  }
  if (doc.contains("features")) {
    const auto& f = doc.at("features");
    read_opt(f, "dim", c.features.dim);
    read_opt(f, "class_centroid_scale", c.features.class_centroid_scale);
    read_opt(f, "noise_scale", c.features.noise_scale);
    read_opt(f, "style_offset_scale", c.features.style_offset_scale);
    read_opt(f, "centroid_seed", c.features.centroid_seed);
  }
  if (doc.contains("model")) c.model = model_config_from_json(doc.at("model"));
  if (doc.contains("loss_weights")) {
    for (const auto& [key, value] : doc.at("loss_weights").items())
      c.loss.alpha[index_of(parse_type(key))] = value.get<double>();
  }
  if (doc.contains("optimizer")) {
    const auto& o = doc.at("optimizer");
    read_opt(o, "learning_rate", c.optimizer.learning_rate);
    read_opt(o, "decay", c.optimizer.decay);
    read_opt(o, "momentum", c.optimizer.momentum);
  }
  read_opt(doc, "epochs", c.epochs);
  read_opt(doc, "batch_size", c.batch_size);
  read_opt(doc, "eval_batch_size", c.eval_batch_size);
  read_opt(doc, "seed", c.seed);
  if (doc.contains("output_dir")) c.output_dir = resolve(doc.at("output_dir").get<std::string>(), base_dir);
  read_opt(doc, "checkpoint_every_epoch", c.checkpoint_every_epoch);
  if (doc.contains("ablation")) {
    read_opt(doc.at("ablation"), "seeds", c.ablation.seeds);
    read_opt(doc.at("ablation"), "variants", c.ablation.variants);
  }
  return c;
}

void apply_seed_override(ExperimentConfig& cfg) {
  const char* env = std::getenv("MURPHY_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0') throw std::invalid_argument(std::string("MURPHY_SEED is not an integer: ") + env);
  cfg.seed = v;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  auto cfg = config_from_json(json::parse(in), path.parent_path());
  apply_seed_override(cfg);
  cfg.check();
  return cfg;
}

// ---------------------------------------------------------------------------
// Data

Dataset prepare_dataset(const ExperimentConfig& cfg) {
  if (!cfg.data_dir.empty() && fs::exists(cfg.data_dir / "split.json")) return load_dataset(cfg.data_dir);
  const auto schema = load_schema(cfg.schema_path);
  GenConfig gen = cfg.generation;
  gen.styles = make_styles(schema, cfg.num_styles, gen.seed, cfg.style_spread);
  auto data = generate_dataset(schema, gen, cfg.features, cfg.train_styles, cfg.test_styles);
  if (!cfg.data_dir.empty()) save_dataset(data, cfg.data_dir);
  return data;
}

std::vector<Chunk> make_chunks(const Dataset& data, const std::vector<int>& sequences, int chunk_size) {
  if (chunk_size < 1) throw std::invalid_argument("make_chunks: chunk size must be >= 1");
  std::vector<Chunk> out;
  for (int s : sequences) {
    const int n = data.sequences.at(static_cast<std::size_t>(s)).size();
    for (int start = 0; start < n; start += chunk_size) out.push_back({s, start, std::min(chunk_size, n - start)});
  }
  return out;
}

Mat<double> chunk_inputs(const Dataset& data, const Chunk& c) {
  return data.features.at(static_cast<std::size_t>(c.sequence)).middleRows(c.start, c.length).cast<double>();
}

TargetSet chunk_targets(const Dataset& data, const Chunk& c) {
  TargetSet out;
  const auto& frames = data.sequences.at(static_cast<std::size_t>(c.sequence)).frames;
  for (auto& v : out) v.reserve(static_cast<std::size_t>(c.length));
  for (int f = c.start; f < c.start + c.length; ++f)
    for (int i = 0; i < kNumTypes; ++i) out[i].push_back(frames[static_cast<std::size_t>(f)].labels[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string config_hash(const ModelConfig& model, const LabelSchema& schema) {
  const json doc = {{"model", model_config_to_json(model)}, {"schema", schema_to_json(schema)}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(doc.dump())));
  return buf;
}

void save_checkpoint(const fs::path& path, const ExperimentConfig& cfg, const LabelSchema& schema,
                     MurphyModel<double>& model, const TrainState& st, const std::vector<Mat<double>>* velocity) {
  json params = json::object();
  model.visit([&](const std::string& name, Parameter<double>& p) { params[name] = matrix_to_json(p.value); });
  json vel = json::array();
  if (velocity != nullptr)
    for (const auto& v : *velocity) vel.push_back(matrix_to_json(v));
  const json doc = {{"format", "murphy-checkpoint/1"},
                    {"config_hash", config_hash(cfg.model, schema)},
                    {"config", config_to_json(cfg)},
                    {"schema", schema_to_json(schema)},
                    {"state",
                     {{"epoch", st.epoch},
                      {"learning_rate", st.learning_rate},
                      {"epoch_loss", st.epoch_loss},
                      {"train_sap3", st.train_sap3},
                      {"best_sap3", st.best_sap3},
                      {"best_epoch", st.best_epoch}}},
                    {"params", params},
                    {"velocity", vel}};
  write_text(path, doc.dump() + "\n");
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const json doc = json::parse(in);
  if (doc.value("format", "") != "murphy-checkpoint/1")
    throw std::runtime_error(path.string() + " is not a checkpoint");
  Checkpoint ck;
  ck.config = config_from_json(doc.at("config"));
  ck.schema = schema_from_json(doc.at("schema"));
  ck.hash = doc.at("config_hash").get<std::string>();
  const auto expect = config_hash(ck.config.model, ck.schema);
  if (ck.hash != expect)
    throw std::runtime_error("checkpoint hash mismatch: stored " + ck.hash + ", architecture gives " + expect);
  const auto& s = doc.at("state");
  ck.state.epoch = s.at("epoch").get<int>();
  ck.state.learning_rate = s.at("learning_rate").get<double>();
  ck.state.epoch_loss = s.at("epoch_loss").get<std::vector<double>>();
  ck.state.train_sap3 = s.at("train_sap3").get<std::vector<double>>();
  ck.state.best_sap3 = s.at("best_sap3").get<double>();
  ck.state.best_epoch = s.at("best_epoch").get<int>();
  ck.params = doc.at("params");
  ck.velocity = doc.at("velocity");
  return ck;
}

MurphyModel<double> restore_model(const Checkpoint& ck) {
  MurphyModel<double> model(ck.schema, ck.config.model, ck.config.seed);
  std::size_t seen = 0;
  model.visit([&](const std::string& name, Parameter<double>& p) {
    if (!ck.params.contains(name)) throw std::runtime_error("checkpoint lacks parameter " + name);
    auto m = matrix_from_json(ck.params.at(name));
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
      throw std::runtime_error("checkpoint parameter " + name + " has the wrong shape");
    p.value = std::move(m);
    p.zero_grad();
    ++seen;
  });
  if (seen != ck.params.size()) throw std::runtime_error("checkpoint holds parameters the model does not have");
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalRecord predict(MurphyModel<double>& model, const Dataset& data, const std::vector<int>& sequences,
                   int chunk_size) {
  EvalRecord rec;
  const auto chunks = make_chunks(data, sequences, chunk_size);
  Eigen::Index total = 0;
  for (const auto& c : chunks) total += c.length;
  for (auto t : kAllTypes) rec.scores[index_of(t)].resize(total, model.width(t));
  Eigen::Index row = 0;
  for (const auto& c : chunks) {
    ad::Tape<double> tape;
    const auto fwd = model.forward(tape, chunk_inputs(data, c), nullptr, GraphMode::Inference);
    for (int i = 0; i < kNumTypes; ++i)
      rec.scores[i].middleRows(row, c.length) = ad::softmax_rows_value<double>(fwd.adjusted[i].value());
    const auto& frames = data.sequences[static_cast<std::size_t>(c.sequence)].frames;
    for (int f = c.start; f < c.start + c.length; ++f) {
      for (int i = 0; i < kNumTypes; ++i) rec.labels[i].push_back(frames[static_cast<std::size_t>(f)].labels[i]);
      rec.frame_index.push_back(frames[static_cast<std::size_t>(f)].frame);
      rec.sequence_id.push_back(c.sequence);
    }
    row += c.length;
  }
  return rec;
}

namespace {

std::vector<int> argmax_rows(const Eigen::MatrixXd& scores, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) {
    Eigen::Index best;
    scores.row(static_cast<Eigen::Index>(r)).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

json report_block(const EvalRecord& rec, const std::vector<std::size_t>& rows, double frame_rate) {
  json out;
  std::map<AnnotationType, double> maps;
  for (auto t : kAllTypes) {
    const int i = index_of(t);
    Eigen::MatrixXd s(static_cast<Eigen::Index>(rows.size()), rec.scores[i].cols());
    std::vector<int> y;
    y.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      s.row(static_cast<Eigen::Index>(k)) = rec.scores[i].row(static_cast<Eigen::Index>(rows[k]));
      y.push_back(rec.labels[i][rows[k]]);
    }
    maps[t] = mean_average_precision(s, y);
    out[std::string(type_name(t))] = {{"map", maps[t]}};
  }
  out["sap3"] = compute_sap(maps, SapKind::SAP3);
  out["sap6"] = compute_sap(maps, SapKind::SAP6);

  // Frames of each sequence in record order.
  std::map<int, std::vector<std::size_t>> by_seq;
  for (auto r : rows) by_seq[rec.sequence_id[r]].push_back(r);
  // The tolerances correspond to the 2 s minimum segment and the 5 s
  // minimum interlude: 10 and 25 frames at 5 fps.
  const std::array<std::pair<const char*, int>, 2> tolerances = {
      {{"ed10", static_cast<int>(std::lround(2.0 * frame_rate))}, {"ed25", static_cast<int>(std::lround(5.0 * frame_rate))}}};
  for (const auto& [key, tol] : tolerances) {
    json block;
    for (auto t : kPrimaryTypes) {
      const int i = index_of(t);
      double sum = 0;
      for (const auto& [seq, seq_rows] : by_seq) {
        std::vector<int> gt;
        gt.reserve(seq_rows.size());
        for (auto r : seq_rows) gt.push_back(rec.labels[i][r]);
        const auto pred = argmax_rows(rec.scores[i], seq_rows);
        sum += edit_distance(frames_to_segments(gt, tol), frames_to_segments(pred, tol));
      }
      block[std::string(type_name(t))] = by_seq.empty() ? 0.0 : sum / static_cast<double>(by_seq.size());
    }
    out[key] = block;
  }
  return out;
}

}  // namespace

json build_report(const EvalRecord& rec, const Dataset& data, double frame_rate) {
  rec.check();
  std::vector<std::size_t> all(static_cast<std::size_t>(rec.size()));
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  json report = report_block(rec, all, frame_rate);
  std::map<int, std::vector<std::size_t>> by_style;
  for (auto r : all)
    by_style[data.sequences.at(static_cast<std::size_t>(rec.sequence_id[r])).surgeon_id].push_back(r);
  json styles = json::object();
  for (const auto& [style, rows] : by_style) styles[std::to_string(style)] = report_block(rec, rows, frame_rate);
  report["per_style"] = styles;
  return report;
}

json evaluate(MurphyModel<double>& model, const Dataset& data, const std::string& split, int chunk_size) {
  const std::vector<int>* seqs = nullptr;
  if (split == "train")
    seqs = &data.split.train;
  else if (split == "test")
    seqs = &data.split.test;
  else
    throw std::invalid_argument("unknown split '" + split + "' (expected train or test)");
  if (seqs->empty()) throw std::invalid_argument("split '" + split + "' is empty");
  const double rate = data.sequences.at(static_cast<std::size_t>(seqs->front())).frame_rate;
  return build_report(predict(model, data, *seqs, chunk_size), data, rate);
}

// ---------------------------------------------------------------------------
// Training

namespace {

void log_line(std::ostream* log, const std::string& line) {
  if (log != nullptr) *log << line << std::endl;
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& opts) {
  if (data.split.train.empty()) throw std::invalid_argument("train: the train split is empty");
  const auto& schema = data.schema;
  const auto hash = config_hash(cfg.model, schema);

  MurphyModel<double> model(schema, cfg.model, cfg.seed);
  TrainState st;
  st.learning_rate = cfg.optimizer.learning_rate;
  std::vector<Mat<double>> velocity;
  if (opts.resume) {
    const auto ck = read_checkpoint(*opts.resume);
    if (ck.hash != hash)
      throw std::runtime_error("checkpoint " + opts.resume->string() + " does not match the model/schema (hash " +
                               ck.hash + " vs " + hash + ")");
    model = restore_model(ck);
    st = ck.state;
    for (const auto& v : ck.velocity) velocity.push_back(matrix_from_json(v));
  }
  const auto params = list_parameters<double>(model);
  if (cfg.optimizer.momentum > 0 && velocity.empty())
    for (const auto& p : params) velocity.push_back(Mat<double>::Zero(p.param->value.rows(), p.param->value.cols()));

  const fs::path& out = cfg.output_dir;
  fs::create_directories(out);
  const auto chunks = make_chunks(data, data.split.train, cfg.batch_size);
  const auto best_path = out / "best.ckpt.json";

  for (int epoch = st.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    auto order = chunks;
    std::seed_seq sseq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                       static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(sseq);
    std::shuffle(order.begin(), order.end(), rng);

    double sum = 0;
    for (std::size_t b = 0; b < order.size(); ++b) {
      const auto& c = order[b];
      model.zero_grad();
      ad::Tape<double> tape;
      const auto targets = chunk_targets(data, c);
      const auto fwd = model.forward(tape, chunk_inputs(data, c), &targets, GraphMode::Training);
      const auto loss = total_loss(fwd.adjusted, targets, cfg.loss);
      const double v = loss.value()(0, 0);
      if (!std::isfinite(v))
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                                 " (sequence " + std::to_string(c.sequence) + ", frames " + std::to_string(c.start) +
                                 ".." + std::to_string(c.start + c.length - 1) + ")");
      tape.backward(loss);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k].param;
        if (cfg.optimizer.momentum > 0) {
          velocity[k] = cfg.optimizer.momentum * velocity[k] + p.grad;
          p.value -= st.learning_rate * velocity[k];
        } else {
          p.value -= st.learning_rate * p.grad;
        }
      }
      sum += v;
    }
    const double mean = sum / static_cast<double>(order.size());
    st.epoch_loss.push_back(mean);
    st.learning_rate *= cfg.optimizer.decay;
    st.epoch = epoch;

    const double sap3 = evaluate(model, data, "train", cfg.eval_batch_size).at("sap3").get<double>();
    st.train_sap3.push_back(sap3);
    const bool improved = sap3 > st.best_sap3;
    if (improved) {
      st.best_sap3 = sap3;
      st.best_epoch = epoch;
    }
    const auto* vel = velocity.empty() ? nullptr : &velocity;
    if (improved) save_checkpoint(best_path, cfg, schema, model, st, vel);
    save_checkpoint(out / "last.ckpt.json", cfg, schema, model, st, vel);
    if (cfg.checkpoint_every_epoch)
      save_checkpoint(out / ("epoch_" + std::to_string(epoch) + ".ckpt.json"), cfg, schema, model, st, vel);
    log_line(opts.log, "epoch " + std::to_string(epoch) + " loss " + fmt(mean, 9) + " train_sap3 " + fmt(sap3, 4) +
                           (improved ? " *" : ""));
    if (opts.stop_after_epoch && epoch >= *opts.stop_after_epoch) break;
  }

  std::ostringstream curve;
  curve << "epoch,mean_loss,train_sap3\n" << std::setprecision(17);
  for (std::size_t e = 0; e < st.epoch_loss.size(); ++e)
    curve << e + 1 << ',' << st.epoch_loss[e] << ',' << st.train_sap3[e] << '\n';
  write_text(out / "loss_curve.csv", curve.str());

  TrainResult result;
  result.state = st;
  if (opts.stop_after_epoch && st.epoch < cfg.epochs) return result;
  if (!fs::exists(best_path)) save_checkpoint(best_path, cfg, schema, model, st);
  result.best_checkpoint = best_path;
  if (!data.split.test.empty()) {
    auto best = restore_model(read_checkpoint(best_path));
    result.report = evaluate(best, data, "test", cfg.eval_batch_size);
    write_text(out / "report.json", result.report.dump(2) + "\n");
  }
  return result;
}

TrainResult train(const ExperimentConfig& cfg, const TrainOptions& opts) {
  return train(cfg, prepare_dataset(cfg), opts);
}

// ---------------------------------------------------------------------------
// Ablation

ExperimentConfig ablation_variant(const ExperimentConfig& base, const std::string& variant) {
  ExperimentConfig c = base;
  auto& m = c.model;
  if (variant == "baseline") {
    m.rgcn.enabled = false;
    m.hrca.enabled = false;
  } else if (variant == "hrca_full") {
    m.rgcn.enabled = false;
    m.hrca.enabled = true;
    m.hrca.mode = HrcaMode::Full;
  } else if (variant == "hrca_c2f") {
    m.rgcn.enabled = false;
    m.hrca.enabled = true;
    m.hrca.mode = HrcaMode::CoarseToFine;
  } else if (variant == "rgcn") {
    m.rgcn.enabled = true;
    m.hrca.enabled = false;
  } else if (variant == "murphy") {
    m.rgcn.enabled = true;
    m.hrca.enabled = true;
    m.hrca.mode = HrcaMode::CoarseToFine;
  } else {
    throw std::invalid_argument("unknown ablation variant '" + variant + "'");
  }
  return c;
}

json ablate(const ExperimentConfig& cfg, std::ostream* log) {
  if (cfg.ablation.seeds.empty()) throw std::invalid_argument("ablate: no seeds");
  const auto data = prepare_dataset(cfg);
  json summary = json::object();
  for (const auto& variant : cfg.ablation.variants) {
    json runs = json::array();
    double sap3 = 0, sap6 = 0;
    for (auto seed : cfg.ablation.seeds) {
      auto c = ablation_variant(cfg, variant);
      c.seed = seed;
      c.output_dir = cfg.output_dir / "ablation" / variant / ("seed_" + std::to_string(seed));
      log_line(log, "== " + variant + " seed " + std::to_string(seed));
      TrainOptions opts;
      opts.log = log;
      const auto r = train(c, data, opts);
      const double s3 = r.report.at("sap3").get<double>();
      const double s6 = r.report.at("sap6").get<double>();
      runs.push_back({{"seed", seed}, {"sap3", s3}, {"sap6", s6}, {"best_epoch", r.state.best_epoch}});
      sap3 += s3;
      sap6 += s6;
    }
    const auto n = static_cast<double>(cfg.ablation.seeds.size());
    summary[variant] = {{"runs", runs}, {"mean_sap3", sap3 / n}, {"mean_sap6", sap6 / n}};
    log_line(log, variant + " mean SAP3 " + fmt(sap3 / n, 4) + " SAP6 " + fmt(sap6 / n, 4));
  }
  write_text(cfg.output_dir / "ablation.json", summary.dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------
// Gradient checks

LabelSchema toy_schema() {
  LabelSchema s;
  s.names[index_of(AnnotationType::S)] = {"s0", "s1"};
  s.names[index_of(AnnotationType::T)] = {"t0", "t1", "t2"};
  s.names[index_of(AnnotationType::IAO)] = {"a0", "a1", "a2", "a3", "a4"};
  s.names[index_of(AnnotationType::I)] = {"i0", "i1"};
  s.names[index_of(AnnotationType::A)] = {"v0", "v1", "v2"};
  s.names[index_of(AnnotationType::O)] = {"o0", "o1", "o2"};
  s.step_tasks = {{0, 1}, {2}};
  s.task_activities = {{0, 1}, {2}, {3, 4}};
  s.activity_components = {{0, 0, 0}, {1, 1, 0}, {0, 2, 1}, {1, 0, 2}, {0, 1, 2}};
  check_schema(s);
  return s;
}

GradModule parse_grad_module(const std::string& name) {
  if (name == "relgraph") return GradModule::Relgraph;
  if (name == "hrca") return GradModule::Hrca;
  if (name == "heads") return GradModule::Heads;
  if (name == "end_to_end") return GradModule::EndToEnd;
  throw std::invalid_argument("unknown module '" + name + "' (relgraph, hrca, heads, end_to_end)");
}

std::string grad_module_name(GradModule m) {
  switch (m) {
    case GradModule::Relgraph: return "relgraph";
    case GradModule::Hrca: return "hrca";
    case GradModule::Heads: return "heads";
    case GradModule::EndToEnd: return "end_to_end";
  }
  return "?";
}

namespace {

Mat<double> gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat<double> m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  return m;
}

std::vector<int> random_labels(int n, int width, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, width - 1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = u(rng);
  return out;
}

template <typename Module>
void add_params(std::vector<NamedParameter<double>>& out, Module& m, const std::string& prefix = "") {
  m.visit([&](const std::string& name, Parameter<double>& p) { out.push_back({prefix + name, &p}); });
}

void zero_all(const std::vector<NamedParameter<double>>& params) {
  for (const auto& p : params) p.param->value.setZero();
}

}  // namespace

GradCheckResult grad_check(GradModule module, const GradCheckOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  const auto schema = toy_schema();
  switch (module) {
    case GradModule::Relgraph: {
      constexpr int b = 5, d = 6;
      RgcnConfig rc;
      rc.hidden = 5;
      RgcnParams<double> rp(rc, d, rng);
      Parameter<double> f(gaussian(b, d, rng));
      const std::optional<std::array<Mat<double>, kNumTypes>> no_labels;
      std::array<Mat<double>, kNumTypes> consistency;
      for (auto& a : consistency) a = label_consistency<double>(random_labels(b, 3, rng), 3);
      const Mat<double> w_train = gaussian(b, d + rc.hidden, rng);
      const Mat<double> w_infer = gaussian(b, d + rc.hidden, rng);
      std::vector<NamedParameter<double>> params;
      add_params(params, rp);
      if (opts.zero_parameters) zero_all(params);
      params.push_back({"features", &f});
      return check_gradients(
          params,
          [&](ad::Tape<double>& t) {
            const auto fv = t.parameter(f);
            const auto m = feature_correlation(fv);
            const auto train = rgcn_forward(fv, dynamic_adjacency(m, std::optional(consistency), GraphMode::Training), rp);
            const auto infer = rgcn_forward(fv, dynamic_adjacency(m, no_labels, GraphMode::Inference), rp);
            return ad::inner(train.fused, w_train) + ad::inner(infer.fused, w_infer);
          },
          opts.eps);
    }
    case GradModule::Hrca: {
      constexpr int b = 4;
      const HierarchyPriors<double> priors(schema);
      HrcaParams<double> full({true, HrcaMode::Full, 3}, rng);
      HrcaParams<double> c2f({true, HrcaMode::CoarseToFine, 3}, rng);
      std::array<Parameter<double>, 3> logits;
      std::array<Mat<double>, 3> w_full, w_c2f;
      for (int i = 0; i < 3; ++i) {
        const int width = schema.width(kPrimaryTypes[static_cast<std::size_t>(i)]);
        logits[static_cast<std::size_t>(i)] = Parameter<double>(gaussian(b, width, rng));
        w_full[static_cast<std::size_t>(i)] = gaussian(b, width, rng);
        w_c2f[static_cast<std::size_t>(i)] = gaussian(b, width, rng);
      }
      std::vector<NamedParameter<double>> params;
      add_params(params, full, "full.");
      add_params(params, c2f, "c2f.");
      if (opts.zero_parameters) zero_all(params);
      for (int i = 0; i < 3; ++i)
        params.push_back({"logits." + std::string(type_name(kPrimaryTypes[static_cast<std::size_t>(i)])),
                          &logits[static_cast<std::size_t>(i)]});
      return check_gradients(
          params,
          [&](ad::Tape<double>& t) {
            const std::array<ad::Var<double>, 3> c = {t.parameter(logits[0]), t.parameter(logits[1]),
                                                      t.parameter(logits[2])};
            const auto a = hrca_forward(c, priors, full);
            const auto z = hrca_forward(c, priors, c2f);
            auto loss = ad::inner(a.adjusted[0], w_full[0]) + ad::inner(z.adjusted[0], w_c2f[0]);
            for (std::size_t i = 1; i < 3; ++i)
              loss = loss + ad::inner(a.adjusted[i], w_full[i]) + ad::inner(z.adjusted[i], w_c2f[i]);
            return loss;
          },
          opts.eps);
    }
    case GradModule::Heads: {
      constexpr int b = 4, fused = 7, p = 4;
      ComponentEmbedParams<double> embed(fused, p, rng);
      HeadParams<double> heads(schema, fused, p, rng);
      Parameter<double> e(gaussian(b, fused, rng));
      TargetSet targets;
      for (auto t : kAllTypes) targets[index_of(t)] = random_labels(b, schema.width(t), rng);
      LossWeights weights;
      std::uniform_real_distribution<double> u(0.5, 2.0);
      for (auto& a : weights.alpha) a = u(rng);
      std::vector<NamedParameter<double>> params;
      add_params(params, embed);
      add_params(params, heads);
      if (opts.zero_parameters) zero_all(params);
      params.push_back({"fused", &e});
      return check_gradients(
          params,
          [&](ad::Tape<double>& t) {
            const auto ev = t.parameter(e);
            return total_loss(classify_all(ev, embed_components(ev, embed), heads), targets, weights);
          },
          opts.eps);
    }
    case GradModule::EndToEnd: {
      constexpr int b = 6, d = 6;
      ModelConfig a_cfg;
      a_cfg.encoder = {EncoderVariant::Memoryless, d, d, 4, 64};
      a_cfg.rgcn.hidden = 5;
      a_cfg.hrca = {true, HrcaMode::CoarseToFine, 3};
      a_cfg.component_dim = 4;
      ModelConfig b_cfg = a_cfg;
      b_cfg.encoder.variant = EncoderVariant::Recurrent;
      b_cfg.hrca.mode = HrcaMode::Full;
      MurphyModel<double> ma(schema, a_cfg, opts.seed);
      MurphyModel<double> mb(schema, b_cfg, opts.seed + 1);
      const Mat<double> x = gaussian(b, d, rng);
      TargetSet targets;
      for (auto t : kAllTypes) targets[index_of(t)] = random_labels(b, schema.width(t), rng);
      std::vector<NamedParameter<double>> params;
      add_params(params, ma, "memoryless.");
      add_params(params, mb, "recurrent.");
      if (opts.zero_parameters) zero_all(params);
      return check_gradients(
          params,
          [&](ad::Tape<double>& t) {
            const auto fa = ma.forward(t, x, &targets, GraphMode::Training);
            const auto fb = mb.forward(t, x, &targets, GraphMode::Training);
            return total_loss(fa.adjusted, targets, LossWeights{}) + total_loss(fb.adjusted, targets, LossWeights{});
          },
          opts.eps);
    }
  }
  throw std::invalid_argument("grad_check: unknown module");
}

}  // namespace murphy
