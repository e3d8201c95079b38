#include "macnet/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "macnet/babi.hpp"
#include "macnet/babi_gen.hpp"
#include "macnet/checkpoint.hpp"
#include "macnet/experiments.hpp"
#include "macnet/trace.hpp"

namespace macnet {

namespace fs = std::filesystem;

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

struct DataOpts {
  std::string data_dir = "data/babi";
  std::string set_name = "en-10k";
  std::string tasks = "all";
};

struct CommonOpts {
  DataOpts data;
  uint64_t seed = 0;
  int steps = 2;
  int epochs = 100;
  int patience = 10;
  double fraction = 1.0;
  std::string out;
  std::string checkpoint;
  std::string ablation;
  int trace_limit = 100;
  int workers = 1;
};

fs::path set_dir(const DataOpts& d) {
  // Mirrors the released corpus layout: en-1k lives under "en".
  return fs::path(d.data_dir) / (d.set_name == "en-1k" ? "en" : d.set_name);
}

std::vector<int> resolve_tasks(const DataOpts& d) {
  const fs::path dir = set_dir(d);
  std::vector<int> tasks;
  if (d.tasks == "all") {
    for (int t = 1; t <= 20; ++t)
      if (fs::exists(dir / ("qa" + std::to_string(t) + "_train.txt"))) tasks.push_back(t);
    if (tasks.empty())
      throw UsageError("no qa*_train.txt files under '" + dir.string() + "'");
    return tasks;
  }
  std::stringstream ss(d.tasks);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      const int t = std::stoi(item, &used);
      if (used != item.size() || t < 1 || t > 20) throw std::invalid_argument("range");
      tasks.push_back(t);
    } catch (const std::exception&) {
      throw UsageError("bad task id '" + item + "' (expected 1..20 or 'all')");
    }
  }
  if (tasks.empty()) throw UsageError("empty task list");
  return tasks;
}

uint64_t fnv1a(const std::string& bytes, uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct LoadedData {
  ExperimentData data;
  std::vector<int> tasks;
  uint64_t corpus_hash = 0;
};

LoadedData load_data(const DataOpts& d, bool need_test = true) {
  LoadedData loaded;
  loaded.tasks = resolve_tasks(d);
  const fs::path dir = set_dir(d);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (int task : loaded.tasks) {
    for (const bool is_train : {true, false}) {
      if (!is_train && !need_test) continue;
      const fs::path path =
          dir / ("qa" + std::to_string(task) + (is_train ? "_train.txt" : "_test.txt"));
      std::ifstream in(path, std::ios::binary);
      if (!in) throw UsageError("missing data file '" + path.string() + "'");
      std::ostringstream buf;
      buf << in.rdbuf();
      h = fnv1a(path.filename().string(), h);
      h = fnv1a(buf.str(), h);
      auto samples = babi::parse_babi_text(buf.str(), task, path.stem().string());
      auto& dst = is_train ? loaded.data.train : loaded.data.test;
      dst.insert(dst.end(), samples.begin(), samples.end());
    }
  }
  loaded.corpus_hash = h;
  return loaded;
}

ModelConfig make_config(const CommonOpts& o, const std::vector<int>& tasks) {
  ModelConfig cfg;
  cfg.p = o.steps;
  cfg.epochs = o.epochs;
  cfg.patience = o.patience;
  cfg.seed = o.seed;
  cfg.fraction = o.fraction;
  cfg.tasks = tasks;
  if (!o.ablation.empty()) cfg = apply_ablation(cfg, o.ablation);
  cfg.validate();
  return cfg;
}

void write_manifest(const std::string& command, const CommonOpts& o, const ModelConfig* cfg,
                    uint64_t corpus_hash, double wall_seconds, std::ostream& err) {
  nlohmann::json m;
  m["command"] = command;
  m["artifact_version"] = kArtifactVersion;
  m["checkpoint_format_version"] = 1;
  m["trace_schema_version"] = 1;
  m["data_dir"] = o.data.data_dir;
  m["set"] = o.data.set_name;
  m["tasks"] = o.data.tasks;
  m["seed"] = o.seed;
  m["corpus_hash"] = corpus_hash;
  if (cfg) m["config"] = config_to_json(*cfg);
  m["wall_seconds"] = wall_seconds;
  const std::string path =
      (o.out.empty() ? command : o.out) + ".manifest.json";
  std::ofstream f(path, std::ios::trunc);
  if (!f) {
    err << "warning: cannot write manifest '" << path << "'\n";
    return;
  }
  f << m.dump(2) << "\n";
}

void add_data_opts(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--data-dir", o.data.data_dir, "bAbI corpus root (contains en/, en-10k/)");
  cmd->add_option("--set", o.data.set_name, "corpus size")
      ->check(CLI::IsMember({"en-1k", "en-10k"}));
  cmd->add_option("--tasks", o.data.tasks, "comma-separated task ids or 'all'");
}

void add_config(CLI::App* cmd) { cmd->set_config("--config", "", "key = value config file"); }

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compositional attention network for the bAbI tasks"};
  app.require_subcommand(1);
  CommonOpts o;

  // ---- stats ----
  auto* stats_cmd = app.add_subcommand("stats", "corpus statistics for the training split");
  add_data_opts(stats_cmd, o);
  add_config(stats_cmd);

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train a model and save the best checkpoint");
  add_data_opts(train_cmd, o);
  add_config(train_cmd);
  train_cmd->add_option("--steps", o.steps, "reasoning steps p");
  train_cmd->add_option("--epochs", o.epochs, "epoch cap");
  train_cmd->add_option("--patience", o.patience, "early-stopping patience");
  train_cmd->add_option("--seed", o.seed, "rng seed");
  train_cmd->add_option("--fraction", o.fraction, "training-set fraction (stratified)");
  train_cmd->add_option("--ablation", o.ablation, "disable one component")
      ->check(CLI::IsMember(ablation_names()));
  train_cmd->add_option("--out", o.out, "checkpoint output path");
  train_cmd->add_option("--workers", o.workers, "evaluation worker threads");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_data_opts(eval_cmd, o);
  add_config(eval_cmd);
  eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
  eval_cmd->add_option("--workers", o.workers, "evaluation worker threads");

  // ---- sweep-steps ----
  auto* steps_cmd = app.add_subcommand("sweep-steps", "train at p = 1..5 and compare");
  add_data_opts(steps_cmd, o);
  add_config(steps_cmd);
  std::string p_values = "1,2,3,4,5";
  steps_cmd->add_option("--p-values", p_values, "comma-separated step counts");
  steps_cmd->add_option("--epochs", o.epochs, "epoch cap");
  steps_cmd->add_option("--patience", o.patience, "early-stopping patience");
  steps_cmd->add_option("--seed", o.seed, "rng seed");
  steps_cmd->add_option("--out", o.out, "write per-epoch curves TSV here");

  // ---- sweep-fraction ----
  auto* frac_cmd = app.add_subcommand("sweep-fraction", "train on dataset fractions and compare");
  add_data_opts(frac_cmd, o);
  add_config(frac_cmd);
  std::string fractions = "0.1,0.25,0.5,0.75,1.0";
  frac_cmd->add_option("--fractions", fractions, "comma-separated fractions");
  frac_cmd->add_option("--steps", o.steps, "reasoning steps p");
  frac_cmd->add_option("--epochs", o.epochs, "epoch cap");
  frac_cmd->add_option("--patience", o.patience, "early-stopping patience");
  frac_cmd->add_option("--seed", o.seed, "rng seed");
  frac_cmd->add_option("--out", o.out, "manifest stem");

  // ---- ablate ----
  auto* ablate_cmd = app.add_subcommand("ablate", "paired baseline/ablated runs");
  add_data_opts(ablate_cmd, o);
  add_config(ablate_cmd);
  ablate_cmd->add_option("--ablation", o.ablation, "component to disable, or 'all'")->required();
  ablate_cmd->add_option("--steps", o.steps, "reasoning steps p");
  ablate_cmd->add_option("--epochs", o.epochs, "epoch cap");
  ablate_cmd->add_option("--patience", o.patience, "early-stopping patience");
  ablate_cmd->add_option("--seed", o.seed, "rng seed");
  ablate_cmd->add_option("--out", o.out, "manifest stem");

  // ---- gradcheck ----
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the desk model");
  add_config(grad_cmd);
  grad_cmd->add_option("--steps", o.steps, "reasoning steps p");
  grad_cmd->add_option("--seed", o.seed, "rng seed");

  // ---- trace ----
  auto* trace_cmd = app.add_subcommand("trace", "export reasoning traces for test samples");
  add_data_opts(trace_cmd, o);
  add_config(trace_cmd);
  trace_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
  trace_cmd->add_option("--trace-limit", o.trace_limit, "max traces to export");
  trace_cmd->add_option("--out", o.out, "trace .jsonl output path")->required();

  // ---- render ----
  auto* render_cmd = app.add_subcommand("render", "render traces as text and SVG heatmaps");
  add_data_opts(render_cmd, o);
  add_config(render_cmd);
  render_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
  render_cmd->add_option("--trace-limit", o.trace_limit, "max traces to render")
      ->default_val(1);
  render_cmd->add_option("--out", o.out, "directory for SVG files");

  // ---- gen-data ----
  auto* gen_cmd = app.add_subcommand("gen-data", "generate bAbI-format fixture files");
  add_config(gen_cmd);
  gen_cmd->add_option("--out", o.out, "dataset root to write")->required();
  std::string gen_set = "en-1k";
  gen_cmd->add_option("--set", gen_set, "corpus size")->check(CLI::IsMember({"en-1k", "en-10k"}));
  std::string gen_tasks = "supported";
  gen_cmd->add_option("--tasks", gen_tasks, "task ids, 'supported' for all generatable ones");
  gen_cmd->add_option("--seed", o.seed, "rng seed");
  int train_n = 0, test_n = 0;
  gen_cmd->add_option("--train-n", train_n, "questions per training file (0 = by set)");
  gen_cmd->add_option("--test-n", test_n, "questions per test file (0 = 1000)");

  std::vector<const char*> argv;
  argv.push_back("macnet");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << app.help();
    return 1;
  }

  const auto start = Clock::now();
  try {
    if (stats_cmd->parsed()) {
      LoadedData loaded = load_data(o.data, false);
      out << babi::corpus_stats(loaded.data.train).to_tsv();
      write_manifest("stats", o, nullptr, loaded.corpus_hash, seconds_since(start), err);
      return 0;
    }

    if (train_cmd->parsed()) {
      LoadedData loaded = load_data(o.data);
      ModelConfig cfg = make_config(o, loaded.tasks);
      RunOutcome run = run_training(cfg, loaded.data, &err);
      err << "best epoch " << run.train.best_epoch << " val_acc " << run.train.best_val_acc
          << "\n";
      out << run.test_report.to_tsv();
      const std::string ckpt_path = o.out.empty() ? "checkpoint.mcp" : o.out;
      save_checkpoint(run.train.best, ckpt_path);
      err << "checkpoint written to " << ckpt_path << "\n";
      CommonOpts manifest_opts = o;
      manifest_opts.out = ckpt_path;
      write_manifest("train", manifest_opts, &cfg, loaded.corpus_hash, seconds_since(start), err);
      return 0;
    }

    if (eval_cmd->parsed()) {
      Checkpoint ckpt = load_checkpoint(o.checkpoint);
      LoadedData loaded = load_data(o.data);
      Model model = Model::from_checkpoint(ckpt);
      bool warned = false;
      for (const auto& s : loaded.data.test) {
        if (warned) break;
        for (const auto& tok : s.story)
          if (!model.vocab().contains(tok)) {
            err << "warning: token '" << tok
                << "' missing from checkpoint vocabulary; scoring it as <unk>\n";
            warned = true;
            break;
          }
      }
      out << evaluate(model, loaded.data.test, o.workers).to_tsv();
      write_manifest("eval", o, nullptr, loaded.corpus_hash, seconds_since(start), err);
      return 0;
    }

    if (steps_cmd->parsed()) {
      LoadedData loaded = load_data(o.data);
      ModelConfig cfg = make_config(o, loaded.tasks);
      std::vector<int> ps;
      for (std::stringstream ss(p_values); ss.good();) {
        std::string item;
        if (!std::getline(ss, item, ',')) break;
        ps.push_back(std::stoi(item));
      }
      StepsSweepResult res = sweep_steps(cfg, loaded.data, ps, &err);
      out << res.to_tsv();
      if (!o.out.empty()) {
        std::ofstream f(o.out, std::ios::trunc);
        if (!f) throw IoError("cannot write '" + o.out + "'");
        f << res.curves_tsv();
      } else {
        out << "\n" << res.curves_tsv();
      }
      write_manifest("sweep-steps", o, &cfg, loaded.corpus_hash, seconds_since(start), err);
      return 0;
    }

    if (frac_cmd->parsed()) {
      LoadedData loaded = load_data(o.data);
      ModelConfig cfg = make_config(o, loaded.tasks);
      std::vector<double> fs_values;
      for (std::stringstream ss(fractions); ss.good();) {
        std::string item;
        if (!std::getline(ss, item, ',')) break;
        fs_values.push_back(std::stod(item));
      }
      FractionSweepResult res = sweep_fraction(cfg, loaded.data, fs_values, &err);
      out << res.to_tsv();
      write_manifest("sweep-fraction", o, &cfg, loaded.corpus_hash, seconds_since(start), err);
      return 0;
    }

    if (ablate_cmd->parsed()) {
      LoadedData loaded = load_data(o.data);
      CommonOpts base_opts = o;
      base_opts.ablation.clear();
      ModelConfig cfg = make_config(base_opts, loaded.tasks);
      std::vector<std::string> names =
          o.ablation == "all" ? ablation_names() : std::vector<std::string>{o.ablation};
      EvalReport baseline = run_training(cfg, loaded.data, &err).test_report;
      for (const auto& name : names) {
        AblationOutcome res = run_ablation(cfg, loaded.data, name, &err, &baseline);
        out << "ablation\t" << name << "\n" << res.to_tsv() << "\n";
      }
      write_manifest("ablate", o, &cfg, loaded.corpus_hash, seconds_since(start), err);
      return 0;
    }

    if (grad_cmd->parsed()) {
      GradCheckReport report = desk_gradcheck(o.steps, o.seed);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3e", report.max_rel_error);
      out << "max_rel_error\t" << buf << "\n";
      out << (report.pass ? "PASS" : "FAIL") << " at tolerance 1e-4\n";
      write_manifest("gradcheck", o, nullptr, 0, seconds_since(start), err);
      return report.pass ? 0 : 2;
    }

    if (trace_cmd->parsed() || render_cmd->parsed()) {
      Checkpoint ckpt = load_checkpoint(o.checkpoint);
      LoadedData loaded = load_data(o.data);
      Model model = Model::from_checkpoint(ckpt);
      std::vector<ReasoningTrace> traces;
      for (const auto& sample : loaded.data.test) {
        if (static_cast<int>(traces.size()) >= o.trace_limit) break;
        Model::Forward f = model.forward(sample, true);
        traces.push_back(record_trace(model, sample, f));
      }
      if (trace_cmd->parsed()) {
        export_traces(traces, o.out);
        err << traces.size() << " traces written to " << o.out << "\n";
      } else {
        const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
        std::error_code ec;
        fs::create_directories(dir, ec);
        for (const auto& t : traces) {
          out << render_text(t) << "\n";
          const fs::path svg = dir / ("trace_" + sanitize(t.sample_id) + ".svg");
          render_svg(t, svg.string());
          err << "svg written to " << svg.string() << "\n";
        }
      }
      write_manifest(trace_cmd->parsed() ? "trace" : "render", o, nullptr, loaded.corpus_hash,
                     seconds_since(start), err);
      return 0;
    }

    if (gen_cmd->parsed()) {
      std::vector<int> tasks;
      if (gen_tasks == "supported") {
        tasks = babigen::supported_tasks();
      } else {
        std::stringstream ss(gen_tasks);
        std::string item;
        while (std::getline(ss, item, ',')) tasks.push_back(std::stoi(item));
      }
      const int n_train = train_n > 0 ? train_n : (gen_set == "en-1k" ? 1000 : 10000);
      const int n_test = test_n > 0 ? test_n : 1000;
      const std::string subdir = gen_set == "en-1k" ? "en" : "en-10k";
      babigen::write_dataset(o.out, subdir, tasks, n_train, n_test, o.seed);
      err << "wrote " << tasks.size() << " tasks under " << o.out << "/" << subdir << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    err << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return 2;
  }
  err << "no subcommand\n";
  return 1;
}

}  // namespace macnet
