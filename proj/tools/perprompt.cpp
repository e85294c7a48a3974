// Command-line front end: generate, train, infer, evaluate, ablate, sweep, heatmap.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "perprompt/checkpoint.hpp"
#include "perprompt/config.hpp"
#include "perprompt/errors.hpp"
#include "perprompt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace perprompt;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig config = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  if (g.seed) config.seed = *g.seed;
  config.validate();
  return config;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized prompt refinement pipeline"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();

  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset (records.jsonl, meta.json)");
  auto* train_cmd = app.add_subcommand("train", "Train, run inference on the test split and write reports");
  auto* infer_cmd = app.add_subcommand("infer", "Refine and answer test prompts with a saved checkpoint");
  std::string checkpoint_path;
  infer_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file (default <out>/checkpoint.bin)");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score <out>/inference.jsonl against its references");
  auto* ablate_cmd = app.add_subcommand("ablate", "Four-row ablation table");
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid over k and n");
  auto* heatmap_cmd = app.add_subcommand("heatmap", "Deletion-count heatmap from <out>/runlog.jsonl");
  std::size_t columns = 0;
  heatmap_cmd->add_option("--columns", columns, "Number of leading token indices (default from config)");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig config = resolve_config(g);
    const fs::path out = g.out;
    fs::create_directories(out);

    if (generate->parsed()) {
      const Dataset ds = synth_generate(config.synth, config.seed);
      save_dataset(ds, out / "records.jsonl", out / "meta.json");
      std::cout << "wrote " << ds.records.size() << " subjects to " << (out / "records.jsonl").string() << "\n";
    } else if (train_cmd->parsed()) {
      const PipelineOutputs outputs = run_pipeline(config, out);
      std::cout << format_report(outputs.report);
    } else if (infer_cmd->parsed()) {
      Experiment ex(config);
      const Checkpoint ck = load_checkpoint(checkpoint_path.empty() ? out / "checkpoint.bin" : fs::path(checkpoint_path));
      const auto& subjects = ex.split().test.empty() ? ex.split().val : ex.split().test;
      RunLog log;
      const auto records = infer(ex, ck, subjects, &log);
      write_inference(records, out / "inference.jsonl");
      log.write(out / "infer_runlog.jsonl");
      std::cout << "refined " << records.size() << " prompts into " << (out / "inference.jsonl").string() << "\n";
    } else if (evaluate_cmd->parsed()) {
      Experiment ex(config);
      const auto records = read_inference(out / "inference.jsonl");
      const auto rows = evaluate_run(records, ex.embedder(), ex.responder().id(), config.baseline,
                                     BleuOptions{config.bleu_smoothing});
      write_file(out / "report.txt", format_report(rows));
      write_file(out / "report.json", report_to_json(rows).dump(2) + "\n");
      std::cout << format_report(rows);
    } else if (ablate_cmd->parsed()) {
      const auto rows = ablate(config, out);
      write_file(out / "ablation.txt", format_ablation(rows));
      write_file(out / "ablation.json", ablation_to_json(rows).dump(2) + "\n");
      std::cout << format_ablation(rows);
    } else if (sweep_cmd->parsed()) {
      const auto points = sweep(config, out);
      write_file(out / "sweep.txt", format_sweep(points));
      write_file(out / "sweep.json", sweep_to_json(points).dump(2) + "\n");
      std::cout << format_sweep(points);
    } else if (heatmap_cmd->parsed()) {
      fs::path log_path = out / "runlog.jsonl";
      if (!fs::exists(log_path) && fs::exists(out / "infer_runlog.jsonl")) log_path = out / "infer_runlog.jsonl";
      const Matrix counts = heatmap(RunLog::read(log_path), columns ? columns : config.heatmap_columns);
      write_file(out / "heatmap.csv", heatmap_csv(counts));
      std::cout << "wrote " << counts.rows << "x" << counts.cols << " heatmap to " << (out / "heatmap.csv").string()
                << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
