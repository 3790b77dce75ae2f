// Command-line front end: data generation, training, evaluation, ablation
// and gradient checks.
#include "murphy/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace murphy;

namespace {

int run_gen_data(const std::string& schema_path, const std::string& out, std::uint64_t seed, int sequences,
                 const std::string& config_path) {
  ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
  cfg.schema_path = schema_path;
  cfg.generation.seed = seed;
  if (sequences >= 0) cfg.generation.num_sequences = sequences;
  cfg.data_dir.clear();
  auto data = prepare_dataset(cfg);
  save_dataset(data, out);
  for (const auto& w : data.split.warnings) std::cerr << "warning: " << w << '\n';
  std::size_t frames = 0;
  for (const auto& s : data.sequences) frames += s.frames.size();
  std::cout << "wrote " << data.sequences.size() << " sequences (" << frames << " frames, " << data.split.train.size()
            << " train / " << data.split.test.size() << " test) to " << out << '\n';
  return 0;
}

int run_train(const std::string& config_path, const std::string& resume) {
  const auto cfg = load_config(config_path);
  TrainOptions opts;
  opts.log = &std::cerr;
  if (!resume.empty()) opts.resume = resume;
  const auto r = train(cfg, opts);
  std::cout << r.report.dump(2) << '\n';
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& split, const std::string& data_dir,
             const std::string& out) {
  const auto ck = read_checkpoint(checkpoint);
  ExperimentConfig cfg = ck.config;
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  const auto data = prepare_dataset(cfg);
  if (config_hash(ck.config.model, data.schema) != ck.hash)
    throw std::runtime_error("dataset schema does not match the checkpoint");
  auto model = restore_model(ck);
  const auto report = evaluate(model, data, split, cfg.eval_batch_size);
  if (!out.empty()) {
    std::ofstream f(out);
    f << report.dump(2) << '\n';
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

int run_ablate(const std::string& config_path) {
  const auto cfg = load_config(config_path);
  std::cout << ablate(cfg, &std::cerr).dump(2) << '\n';
  return 0;
}

int run_gradcheck(const std::string& module, double eps, std::uint64_t seed, bool zero, double tol) {
  const std::vector<std::string> all = {"relgraph", "hrca", "heads", "end_to_end"};
  const std::vector<std::string> mods = module == "all" ? all : std::vector<std::string>{module};
  bool ok = true;
  for (const auto& m : mods) {
    GradCheckOptions opts;
    opts.eps = eps;
    opts.seed = seed;
    opts.zero_parameters = zero;
    const auto r = grad_check(parse_grad_module(m), opts);
    const bool pass = r.max_rel_error < tol;
    ok = ok && pass;
    std::printf("%-10s max_rel_error %.3e at %s over %zu entries %s\n", m.c_str(), r.max_rel_error, r.worst.c_str(),
                r.entries, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MURPHY hierarchical workflow recognition"};
  app.require_subcommand(1);

  std::string schema = "data/rlls_schema.json", out, config, resume, checkpoint, split = "test", data_dir, module;
  std::uint64_t seed = 7, gc_seed = 1;
  int sequences = -1;
  double eps = 1e-5, tol = 1e-4;
  bool zero = false;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic annotated dataset");
  gen->add_option("--schema", schema, "label schema JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "generation seed");
  gen->add_option("--sequences", sequences, "number of sequences");
  gen->add_option("--config", config, "take generation/feature settings from an experiment config");

  auto* tr = app.add_subcommand("train", "train one configuration");
  tr->add_option("--config", config, "experiment config JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--data", data_dir, "dataset directory (default: the checkpoint's config)");
  ev->add_option("--out", out, "write the report here as well");

  auto* ab = app.add_subcommand("ablate", "run the ablation variants over the configured seeds");
  ab->add_option("--config", config, "experiment config JSON")->required()->check(CLI::ExistingFile);

  auto* gc = app.add_subcommand("gradcheck", "compare tape gradients with central differences");
  gc->add_option("--module", module, "relgraph, hrca, heads, end_to_end or all")
      ->required()
      ->check(CLI::IsMember({"relgraph", "hrca", "heads", "end_to_end", "all"}));
  gc->add_option("--eps", eps, "finite-difference step");
  gc->add_option("--seed", gc_seed, "instance seed");
  gc->add_option("--tol", tol, "pass threshold on the max relative error");
  gc->add_flag("--zero-params", zero, "zero every parameter first");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return run_gen_data(schema, out, seed, sequences, config);
    if (*tr) return run_train(config, resume);
    if (*ev) return run_eval(checkpoint, split, data_dir, out);
    if (*ab) return run_ablate(config);
    if (*gc) return run_gradcheck(module, eps, gc_seed, zero, tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
