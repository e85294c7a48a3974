// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Usage: acceptance <work-dir> [--only N] [--rigged-epochs E]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles/brute_force.hpp"
#include "perprompt/backends.hpp"
#include "perprompt/checkpoint.hpp"
#include "perprompt/metrics.hpp"
#include "perprompt/pipeline.hpp"
#include "perprompt/refiner.hpp"
#include "perprompt/simd.hpp"

namespace fs = std::filesystem;
using namespace perprompt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small offline pipeline configuration shared by criteria 5-8.
RunConfig small_config() {
  RunConfig c;
  c.synth = SynthConfig{60, 8, 4, 10, 1.5, 1.0};
  c.epochs = 3;
  c.seed = 11;
  c.k = 10;
  c.n = 10;
  return c;
}

// ---------------------------------------------------------------- 1
Outcome metric_oracles() {
  const auto start = Clock::now();
  using oracle::Tokens;
  std::vector<std::pair<Tokens, Tokens>> pairs = {
      {{"a", "b", "c", "d"}, {"a", "b", "c", "d"}},
      {{"a", "b", "c", "d", "e"}, {"a", "b", "c", "d"}},
      {{"a", "b", "c"}, {"a", "b", "c", "d", "e"}},
      {{"the", "cat", "sat", "on", "the", "mat"}, {"the", "cat", "is", "on", "the", "mat"}},
      {{"the", "the", "the", "the"}, {"the", "cat", "the", "mat"}},
      {{"x"}, {"y"}},
      {{"x"}, {"x"}},
      {{"a", "b"}, {"b", "a"}},
      {{"a", "b", "a", "b", "a"}, {"b", "a", "b", "a", "b"}},
      {{"a", "b", "c", "d", "e", "f", "g", "h"}, {"h", "g", "f", "e", "d", "c", "b", "a"}},
      {{"a", "a", "a"}, {"a"}},
      {{"a"}, {"a", "a", "a"}},
      {{"a", "b", "c", "d", "a", "b", "c", "d"}, {"a", "b", "c", "d"}},
      {{"p", "q", "r", "s", "t"}, {"p", "x", "r", "y", "t"}},
      {{"one", "two", "three", "four", "five", "six"}, {"two", "three", "four", "five"}},
      {{"k", "l"}, {"k", "l", "m", "n", "o", "p", "q", "r"}},
      {{"m", "n", "o", "p"}, {"q", "r", "s", "t"}},
      {{"a", "b", "c", "d", "x", "b", "c", "d"}, {"a", "b", "c", "d", "y", "b", "c", "d"}},
      {{"w", "w", "v", "w"}, {"v", "w", "w", "w", "v"}},
      {{"s", "t", "u", "v", "w", "x", "y", "z"}, {"s", "t", "u", "v", "w", "x", "y", "z"}},
      {{"s", "t", "u", "v", "q"}, {"s", "t", "u", "v", "w", "x", "y", "z"}},
      {{"a", "b", "c", "d"}, {"a", "c", "b", "d"}},
  };
  const std::size_t hand_built = pairs.size();
  std::mt19937_64 rng(20240901);
  const Tokens vocab = {"a", "b", "c", "d", "e", "f"};
  std::uniform_int_distribution<std::size_t> len(1, 8), word(0, vocab.size() - 1);
  for (int i = 0; i < 200; ++i) {
    Tokens c(len(rng)), r(len(rng));
    for (auto& t : c) t = vocab[word(rng)];
    for (auto& t : r) t = vocab[word(rng)];
    pairs.emplace_back(std::move(c), std::move(r));
  }

  HashEmbedder hash(16, 3);
  OneHotEmbedder onehot(vocab);
  double worst = 0.0;
  std::string worst_metric;
  auto track = [&](double got, double want, const char* what) {
    const double err = std::fabs(got - want);
    if (!(err <= worst)) {
      worst = err;
      worst_metric = what;
    }
  };
  for (const auto& [c, r] : pairs) {
    track(bleu4(c, r), oracle::bleu4(c, r, false), "bleu4");
    track(bleu4(c, r, {true}), oracle::bleu4(c, r, true), "bleu4-smoothed");
    for (std::size_t n : {1, 2}) {
      const auto got = rouge_n(c, r, n);
      const auto want = oracle::rouge_n(c, r, n);
      track(got.precision, want.p, "rouge-n P");
      track(got.recall, want.r, "rouge-n R");
      track(got.f1, want.f, "rouge-n F");
    }
    track(static_cast<double>(lcs_length(c, r)), static_cast<double>(oracle::lcs_exhaustive(c, r)), "lcs");
    const auto rl = rouge_l(c, r);
    const auto rl_want = oracle::rouge_l(c, r);
    track(rl.precision, rl_want.p, "rouge-l P");
    track(rl.recall, rl_want.r, "rouge-l R");
    track(rl.f1, rl_want.f, "rouge-l F");
    bool in_vocab = true;
    for (const auto& t : c) in_vocab = in_vocab && std::find(vocab.begin(), vocab.end(), t) != vocab.end();
    for (const auto& t : r) in_vocab = in_vocab && std::find(vocab.begin(), vocab.end(), t) != vocab.end();
    std::vector<EmbeddingProvider*> embedders{&hash};
    if (in_vocab) embedders.push_back(&onehot);
    for (auto* e : embedders) {
      const auto got = bertscore(c, r, *e);
      const auto want = oracle::bertscore(c, r, *e);
      track(got.precision, want.p, "bertscore P");
      track(got.recall, want.r, "bertscore R");
      track(got.f1, want.f, "bertscore F1");
    }
  }
  const double secs = seconds_since(start);
  const bool pass = worst <= 1e-9 && secs < 10.0;
  return {pass, std::to_string(hand_built) + " hand-built + 200 random pairs, max abs error " + fmt("%.3e", worst) +
                    (worst_metric.empty() ? "" : " (" + worst_metric + ")") + " (tol 1e-9), " +
                    fmt("%.2f", secs) + " s (limit 10 s)"};
}

// ---------------------------------------------------------------- 2
Outcome gradient_correctness() {
  const auto start = Clock::now();
  Rng rng(5);
  ModelParams params;
  params.encoder = make_encoder(12, EncoderConfig{8, 8, 0.0}, rng);
  params.policy = make_policy(8, 8, PolicyConfig{8, 0.0}, rng);
  HashEmbedder embedder(8, 1);

  EpisodeFixture fixture;
  std::normal_distribution<double> gauss(0.0, 1.0);
  fixture.flat.resize(12);
  for (double& v : fixture.flat) v = gauss(rng);
  std::vector<std::string> tokens;
  for (int i = 0; i < 14; ++i) tokens.push_back("tok" + std::to_string(i % 11));
  fixture.s0 = make_state("toy", tokens, 4);
  fixture.actions = {3, 0, 7, 5};
  fixture.reward = 0.7;

  const auto result = gradient_check(params, fixture, embedder, 1e-5);
  const double secs = seconds_since(start);
  const bool pass = result.max_relative_error < 1e-4 && secs < 30.0;
  return {pass, std::to_string(result.analytic.size()) + " parameters, max relative error " +
                    fmt("%.3e", result.max_relative_error) + " at " + result.worst_parameter + " (tol 1e-4), " +
                    fmt("%.2f", secs) + " s (limit 30 s)"};
}

// ---------------------------------------------------------------- 3
Outcome rigged_environment(std::size_t epochs) {
  const auto start = Clock::now();
  RunConfig config;
  config.synth = SynthConfig{50, 3, 4, 8, 1.5, 1.0};
  config.embedding_dim = 32;
  config.noise_tokens = 12;
  config.k = 10;
  config.n = 10;
  config.learning_rate = 0.005;
  config.epochs = epochs;
  config.seed = 3;
  config.responder = "mock";
  config.embedder = "hash";

  Experiment ex(config);
  const double uniform = mean_uniform_reward(ex, 10);
  const TrainResult trained = train(ex);
  const auto& rewards = trained.epoch_mean_reward;
  const std::size_t tail = std::min<std::size_t>(10, rewards.size());
  double final_mean = 0.0;
  for (std::size_t i = rewards.size() - tail; i < rewards.size(); ++i) final_mean += rewards[i];
  final_mean /= static_cast<double>(tail);

  const auto& subjects = ex.split().test.empty() ? ex.split().val : ex.split().test;
  const NoiseMass mass = measure_noise_mass(ex, trained.checkpoint, subjects);
  const double secs = seconds_since(start);
  const bool a = final_mean - uniform >= 0.01;
  const bool b = mass.policy > mass.uniform;
  const bool pass = a && b && secs < 300.0;
  return {pass, "(a) final-10-epoch reward " + fmt("%.4f", final_mean) + " vs uniform " + fmt("%.4f", uniform) +
                    " (gain " + fmt("%.4f", final_mean - uniform) + ", need >= 0.01) " + (a ? "ok" : "FAIL") +
                    "; (b) noise mass " + fmt("%.4f", mass.policy) + " vs uniform " + fmt("%.4f", mass.uniform) +
                    " over " + std::to_string(mass.subjects) + " test subjects " + (b ? "ok" : "FAIL") + "; " +
                    std::to_string(epochs) + " epochs, " + fmt("%.1f", secs) + " s (limit 300 s)"};
}

// ---------------------------------------------------------------- 4
Outcome retrieval_equivalence() {
  const auto start = Clock::now();
  const Dataset ds = synth_generate(SynthConfig{200, 35, 12, 45, 1.5, 1.0}, 17);
  const auto stats = fit_normalization(ds.records);
  std::size_t target = 0;
  for (const auto& r : ds.records) target = std::max(target, r.visit_count());
  Rng rng(17);
  const Mlp encoder = make_encoder(target * ds.metric_count(), EncoderConfig{}, rng);
  std::vector<PoolEntry> pool;
  for (const auto& r : ds.records) {
    pool.push_back({r.subject_id, encode(encoder, pad_and_flatten(r, target, stats), Mode::kEval)});
  }

  const simd::Isa original = simd::active_isa();
  std::size_t queries = 0, scalar_mismatch = 0, simd_id_mismatch = 0;
  double simd_score_error = 0.0;
  simd::set_active_isa(simd::Isa::kScalar);
  std::vector<NeighborSet> scalar_results;
  for (std::size_t k : {1, 5, 10, 50}) {
    for (const auto& q : pool) {
      const auto got = top_k_similar(q.vector, pool, k, q.id);
      const auto want = oracle::top_k(q.vector, pool, k, q.id);
      if (got != want) ++scalar_mismatch;
      scalar_results.push_back(got);
      ++queries;
    }
  }
  std::string simd_note = "no SIMD path on this CPU";
  if (simd::isa_supported(simd::Isa::kAvx2)) {
    simd::set_active_isa(simd::Isa::kAvx2);
    std::size_t i = 0;
    for (std::size_t k : {1, 5, 10, 50}) {
      for (const auto& q : pool) {
        const auto got = top_k_similar(q.vector, pool, k, q.id);
        const auto& ref = scalar_results[i++];
        bool same_ids = got.size() == ref.size();
        for (std::size_t j = 0; same_ids && j < got.size(); ++j) {
          same_ids = got[j].id == ref[j].id;
          simd_score_error = std::max(simd_score_error, std::fabs(got[j].score - ref[j].score));
        }
        if (!same_ids) ++simd_id_mismatch;
      }
    }
    simd_note = "avx2 path: " + std::to_string(simd_id_mismatch) + " id mismatches, max score diff " +
                fmt("%.1e", simd_score_error) + " (tol 1e-12)";
  }
  simd::set_active_isa(original);
  const double secs = seconds_since(start);
  const bool pass = scalar_mismatch == 0 && simd_id_mismatch == 0 && simd_score_error <= 1e-12 && secs < 5.0;
  return {pass, std::to_string(queries) + " queries (k in {1,5,10,50}, pool 200), " + std::to_string(scalar_mismatch) +
                    " exact mismatches on the scalar path; " + simd_note + "; " + fmt("%.2f", secs) +
                    " s (limit 5 s)"};
}

// ---------------------------------------------------------------- 5
Outcome structural_fidelity(const fs::path& run_dir) {
  const auto records = read_inference(run_dir / "inference.jsonl");
  std::size_t wrong_length = 0;
  for (const auto& r : records) {
    if (tokenize(r.coarse_prompt).size() != tokenize(r.refined_prompt).size() + 10 || r.deleted.size() != 10) {
      ++wrong_length;
    }
  }
  const Matrix counts = heatmap(RunLog::read(run_dir / "runlog.jsonl"), 100);
  double total = 0.0;
  for (double v : counts.data) total += v;

  // The CSV on disk must carry the same matrix.
  std::ifstream csv(run_dir / "heatmap.csv");
  std::size_t csv_rows = 0, csv_cols = 0;
  double csv_total = 0.0;
  for (std::string line; std::getline(csv, line);) {
    ++csv_rows;
    std::stringstream ss(line);
    std::size_t cols = 0;
    for (std::string cell; std::getline(ss, cell, ',');) {
      csv_total += std::stod(cell);
      ++cols;
    }
    csv_cols = std::max(csv_cols, cols);
  }
  const double expected = 10.0 * static_cast<double>(records.size());
  const bool pass = !records.empty() && wrong_length == 0 && counts.rows == 10 && counts.cols == 100 &&
                    total == expected && csv_rows == 10 && csv_cols == 100 && csv_total == expected;
  return {pass, std::to_string(records.size()) + " refined prompts, " + std::to_string(wrong_length) +
                    " with |P| != |s0| - 10; heatmap " + std::to_string(csv_rows) + "x" + std::to_string(csv_cols) +
                    " total " + fmt("%.0f", csv_total) + " (expected 10x100, total " + fmt("%.0f", expected) + ")"};
}

// ---------------------------------------------------------------- 6
Outcome determinism(const fs::path& work, fs::path& first_run) {
  const RunConfig config = small_config();
  const fs::path a = work / "determinism_a";
  const fs::path b = work / "determinism_b";
  fs::remove_all(a);
  fs::remove_all(b);
  double slowest = 0.0;
  for (const auto& dir : {a, b}) {
    const auto start = Clock::now();
    run_pipeline(config, dir);
    slowest = std::max(slowest, seconds_since(start));
  }
  first_run = a;
  std::vector<std::string> differing;
  const char* files[] = {"report.txt", "report.json", "runlog.jsonl", "inference.jsonl", "checkpoint.bin",
                         "heatmap.csv"};
  for (const char* f : files) {
    if (!fs::exists(a / f) || read_bytes(a / f) != read_bytes(b / f)) differing.emplace_back(f);
  }
  std::string list;
  for (const auto& f : differing) list += " " + f;
  const bool pass = differing.empty() && slowest < 300.0;
  return {pass, std::to_string(std::size(files)) + " artifacts compared, " + std::to_string(differing.size()) +
                    " differ" + list + "; slowest run " + fmt("%.1f", slowest) + " s (limit 300 s)"};
}

// ---------------------------------------------------------------- 7
Outcome ablation_harness(const fs::path& work, const fs::path& plain_run) {
  const RunConfig config = small_config();
  const fs::path dir = work / "ablation";
  fs::remove_all(dir);
  const auto rows = ablate(config, dir);
  const char* ids[] = {"1", "2", "3", "PMLM"};
  const AblationToggles toggles[] = {{false, true, true}, {true, false, true}, {true, true, false}, {true, true, true}};
  bool layout = rows.size() == 4;
  for (std::size_t i = 0; layout && i < 4; ++i) {
    layout = rows[i].id == ids[i] && rows[i].toggles.SP == toggles[i].SP && rows[i].toggles.PP == toggles[i].PP &&
             rows[i].toggles.PR == toggles[i].PR;
  }
  std::size_t pr_off_changed = 0, pr_off_count = 0;
  if (rows.size() == 4) {
    for (const auto& r : rows[2].inference) {
      ++pr_off_count;
      if (r.refined_prompt != r.coarse_prompt) ++pr_off_changed;
    }
  }
  // The full-model row must reproduce a plain run with the same config.
  bool full_matches_plain = false;
  if (rows.size() == 4 && !plain_run.empty()) {
    full_matches_plain = read_bytes(dir / "ablation" / "PMLM" / "report.txt") == read_bytes(plain_run / "report.txt") &&
                         read_bytes(dir / "ablation" / "PMLM" / "runlog.jsonl") ==
                             read_bytes(plain_run / "runlog.jsonl");
  }
  const bool pass = layout && pr_off_count > 0 && pr_off_changed == 0 && full_matches_plain;
  return {pass, std::string("rows ") + (layout ? "1,2,3,PMLM with expected SP/PP/PR toggles" : "MALFORMED") + "; PR-off: " +
                    std::to_string(pr_off_changed) + " of " + std::to_string(pr_off_count) +
                    " refined prompts differ from s0; full row " +
                    (full_matches_plain ? "matches" : "DOES NOT match") + " the plain run"};
}

// ---------------------------------------------------------------- 8
Outcome zero_reward_fixed_point() {
  RunConfig config = small_config();
  config.responder = "constant";
  Experiment ex(config);
  const Checkpoint init = initial_checkpoint(ex);
  const TrainResult trained = train(ex);
  std::size_t episodes = 0, nonzero = 0;
  for (const auto& e : trained.log.entries()) {
    if (e.value("type", "") != "episode") continue;
    ++episodes;
    if (e.at("reward").get<double>() != 0.0) ++nonzero;
  }
  // Bit-level comparison of every parameter.
  std::size_t differing = 0, values = 0;
  const auto before = init.params.parameters();
  const auto after = trained.checkpoint.params.parameters();
  for (std::size_t i = 0; i < before.size() && i < after.size(); ++i) {
    for (std::size_t j = 0; j < before[i].values.size(); ++j) {
      ++values;
      if (std::memcmp(&before[i].values[j], &after[i].values[j], sizeof(double)) != 0) ++differing;
    }
  }
  const bool pass = episodes > 0 && nonzero == 0 && differing == 0 && before.size() == after.size();
  return {pass, std::to_string(episodes) + " episodes, " + std::to_string(nonzero) + " nonzero rewards; " +
                    std::to_string(differing) + " of " + std::to_string(values) +
                    " parameters differ from initialization"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string work = "acceptance_work";
  int only = 0;
  std::size_t rigged_epochs = 200;
  app.add_option("work", work, "Scratch directory");
  app.add_option("--only", only, "Run a single criterion (1-8)");
  app.add_option("--rigged-epochs", rigged_epochs, "Training epochs for criterion 3")->check(CLI::Range(1, 200));
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  fs::path plain_run;
  const auto ensure_plain_run = [&] {
    if (!plain_run.empty()) return;
    const fs::path dir = fs::path(work) / "structure";
    fs::remove_all(dir);
    run_pipeline(small_config(), dir);
    plain_run = dir;
  };
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 metric oracle suite", metric_oracles},
      {"2 gradient correctness", gradient_correctness},
      {"3 rigged-environment learning", [&] { return rigged_environment(rigged_epochs); }},
      {"4 retrieval equivalence", retrieval_equivalence},
      {"6 determinism", [&] { return determinism(work, plain_run); }},
      {"5 structural fidelity",
       [&] {
         ensure_plain_run();
         return structural_fidelity(plain_run);
       }},
      {"7 ablation harness",
       [&] {
         ensure_plain_run();
         return ablation_harness(work, plain_run);
       }},
      {"8 zero-reward fixed point", zero_reward_fixed_point},
  };

  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (only != 0 && name.substr(0, name.find(' ')) != std::to_string(only)) continue;
    Outcome outcome;
    try {
      outcome = run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    if (!outcome.pass) ++failures;
    std::printf("[%s] %s: %s\n", outcome.pass ? "PASS" : "FAIL", name.c_str(), outcome.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
