#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "epiglab/cli.hpp"
#include "epiglab/error.hpp"
#include "epiglab/server.hpp"

namespace fs = std::filesystem;

namespace epiglab::cli {

namespace {

/// Thrown for bad flag values detected after CLI11 parsing; exit code 2.
struct UsageError : Error {
  using Error::Error;
};

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

std::vector<Override> collect_overrides(const std::vector<std::string>& sets) {
  std::vector<Override> out;
  for (const auto& s : sets) out.push_back(parse_override(s));
  return out;
}

fs::path output_dir(const ExperimentConfig& cfg, const std::string& flag) {
  fs::path dir;
  if (!flag.empty()) {
    dir = flag;
  } else if (cfg.out_dir) {
    dir = *cfg.out_dir;
  } else if (const char* env = std::getenv("EPIGLAB_OUT"); env && *env) {
    dir = env;
  } else {
    dir = "out";
  }
  fs::create_directories(dir);
  return dir;
}

template <typename Fn>
void write_text(const fs::path& path, Fn&& fill) {
  std::ostringstream s;
  fill(s);
  write_atomically(path, s.str());
}

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_out = true) {
  cmd->add_option("-c,--config", flags.config, "Experiment config file (YAML)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--set", flags.sets, "Override a config key, e.g. --set loop.budget=50 (repeatable)");
  if (with_out) cmd->add_option("-o,--out", flags.out, "Output directory (default: config, then $EPIGLAB_OUT, then ./out)");
}

// -- run ----------------------------------------------------------------------

struct RunFlags {
  CommonFlags common;
  std::vector<std::string> methods;
  std::optional<std::size_t> seeds;
  std::optional<std::size_t> budget;
  std::optional<std::size_t> jobs;
  std::string head;
  std::string feature_source;
};

int cmd_run(const RunFlags& flags, std::ostream& out) {
  auto overrides = collect_overrides(flags.common.sets);
  if (!flags.methods.empty()) {
    std::string list = "[";
    for (const auto& m : flags.methods) {
      std::stringstream ss(m);
      for (std::string name; std::getline(ss, name, ',');) {
        try {
          method_from_string(name);
        } catch (const ConfigError& e) {
          throw UsageError(e.what());
        }
        list += (list.size() > 1 ? "," : "") + name;
      }
    }
    overrides.push_back({"loop.methods", list + "]"});
  }
  if (flags.seeds) overrides.push_back({"loop.seeds", std::to_string(*flags.seeds)});
  if (flags.budget) overrides.push_back({"loop.budget", std::to_string(*flags.budget)});
  if (!flags.head.empty()) overrides.push_back({"head.kind", flags.head});
  if (!flags.feature_source.empty()) overrides.push_back({"loop.feature_source", flags.feature_source});

  ExperimentConfig cfg = load_config(flags.common.config, overrides);
  if (flags.jobs) cfg.jobs = *flags.jobs;
  const fs::path dir = output_dir(cfg, flags.common.out);
  const auto data = std::make_shared<const DataBundle>(load_data(cfg));

  struct Job {
    Method method;
    std::uint64_t seed;
    RunRecord record;
  };
  std::vector<Job> jobs;
  for (Method m : cfg.methods) {
    for (std::uint64_t s : cfg.loop.seeds) jobs.push_back({m, s, {}});
  }

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t j; (j = next++) < jobs.size();) {
      try {
        LoopConfig lc = cfg.loop;
        lc.method = jobs[j].method;
        jobs[j].record = run(lc, data, jobs[j].seed);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.jobs, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  TaskSpec task = cfg.loop.task;
  if (task.classes_of_interest.empty()) {
    auto names = std::move(task.class_names);
    task = TaskSpec::all_classes(data->oracle.classes());
    task.class_names = std::move(names);
  }

  std::map<std::string, CurveSummary> curves;
  for (Method m : cfg.methods) {
    const std::string name = to_string(m);
    std::vector<RunRecord> records;
    for (const auto& job : jobs) {
      if (job.method != m) continue;
      const std::string stem = "record_" + name + "_seed" + std::to_string(job.seed);
      write_text(dir / (stem + ".csv"), [&](std::ostream& s) { write_record_csv(s, job.record); });
      write_atomically(dir / (stem + ".json"), record_to_json(job.record) + "\n");
      if (cfg.loop.keep_scores) {
        write_text(dir / ("scores_" + name + "_seed" + std::to_string(job.seed) + ".csv"), [&](std::ostream& s) {
          s << "step,index,score\n";
          for (const auto& r : job.record.scores) {
            std::vector<std::size_t> idx{r.index};
            std::vector<double> sc{r.score};
            write_scores_csv(s, r.step, idx, sc);
          }
        });
      }
      records.push_back(job.record);
    }
    write_text(dir / ("histogram_" + name + ".csv"), [&](std::ostream& s) {
      write_histogram_csv(s, class_histogram(records, task.effective_classes()), task.effective_names());
    });
    if (records.size() >= 2) {
      curves[name] = aggregate(records);
      write_text(dir / ("summary_" + name + ".csv"), [&](std::ostream& s) { write_summary_csv(s, curves[name]); });
    } else {
      CurveSummary single;
      for (const auto& row : records.front().rows) {
        if (!std::isnan(row.accuracy)) single.push_back({row.train_size, row.accuracy, 0.0});
      }
      curves[name] = std::move(single);
    }
    out << name << ": " << records.size() << " seed(s)";
    if (!curves[name].empty()) out << ", final accuracy " << curves[name].back().mean_accuracy;
    out << '\n';
  }
  write_atomically(dir / "curve.svg", learning_curve_svg(curves));
  out << "wrote " << dir.string() << '\n';
  return 0;
}

// -- decompose ----------------------------------------------------------------

int cmd_decompose(const CommonFlags& flags, std::ostream& out) {
  ExperimentConfig cfg = load_config(flags.config, collect_overrides(flags.sets));
  const fs::path dir = output_dir(cfg, flags.out);
  const DataBundle data = load_data(cfg);
  TaskSpec task = cfg.loop.task;
  if (task.classes_of_interest.empty()) task = TaskSpec::all_classes(data.oracle.classes());
  const LabelVector labels = apply_task(data.oracle, task);
  const EmbeddingTable& features = data.features(cfg.loop.feature_source);
  std::optional<std::vector<int>> eval_classes;
  if (task.restricts_evaluation()) {
    eval_classes.emplace(task.classes_of_interest.size());
    std::iota(eval_classes->begin(), eval_classes->end(), 0);
  }
  const SplitSpec sp = split(features.n(), cfg.loop.split, labels, cfg.loop.split_seed.value_or(0), eval_classes);
  const auto rows = size_contrast(cfg.decompose, features, labels, sp);
  const fs::path path = dir / ("scatter_" + to_string(cfg.decompose.head.kind) + ".csv");
  write_text(path, [&](std::ostream& s) { write_scatter_csv(s, rows); });
  out << rows.size() << " rows -> " << path.string() << '\n';
  return 0;
}

// -- tune-probcover -----------------------------------------------------------

int cmd_tune(const CommonFlags& flags, std::ostream& out) {
  ExperimentConfig cfg = load_config(flags.config, collect_overrides(flags.sets));
  const fs::path dir = output_dir(cfg, flags.out);
  const DataBundle data = load_data(cfg);
  const EmbeddingTable& features = data.features(cfg.loop.feature_source);
  std::vector<std::size_t> rows(features.n());
  std::iota(rows.begin(), rows.end(), 0);
  int classes = data.oracle.classes();
  if (!cfg.loop.task.classes_of_interest.empty()) classes = cfg.loop.task.effective_classes();

  ProbCoverConfig pc = cfg.loop.probcover;
  if (pc.grid.empty()) pc.grid = default_radius_grid(features, rows);
  const fs::path path = dir / "probcover_purity.csv";
  const ProbCoverTuning tuning = probcover_tune_radius(features, rows, classes, pc);
  write_text(path, [&](std::ostream& s) {
    s << "delta,purity\n";
    char buf[64];
    for (const auto& [delta, purity] : tuning.curve) {
      std::snprintf(buf, sizeof buf, "%.10g,%.10g\n", delta, purity);
      s << buf;
    }
  });
  out << "delta " << tuning.radius << '\n';
  return 0;
}

// -- synth --------------------------------------------------------------------

struct SynthFlags {
  SyntheticSpec spec;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthFlags& flags, std::ostream& out) {
  if (flags.out.empty()) throw UsageError("synth needs --out");
  const fs::path dir = flags.out;
  fs::create_directories(dir);
  const SyntheticData data = make_synthetic(flags.spec, flags.seed);
  write_embeddings(dir / "latent.emb", data.latent);
  write_embeddings(dir / "raw.emb", data.raw);
  write_labels(dir / "labels.lab", data.labels);
  nlohmann::json manifest = {{"n", data.latent.n()},
                             {"classes", flags.spec.classes},
                             {"per_class", flags.spec.per_class},
                             {"latent_dim", flags.spec.latent_dim},
                             {"raw_dim", flags.spec.raw_dim},
                             {"noise_scale", flags.spec.noise_scale},
                             {"separation", flags.spec.separation},
                             {"seed", flags.seed},
                             {"files", {{"latent", "latent.emb"}, {"raw", "raw.emb"}, {"labels", "labels.lab"}}}};
  write_atomically(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << data.latent.n() << " examples to " << dir.string() << '\n';
  return 0;
}

// -- serve --------------------------------------------------------------------

struct ServeFlags {
  CommonFlags common;
  std::string host;
  std::optional<int> port;
  std::string ui_dir;
};

int cmd_serve(const ServeFlags& flags, std::ostream& out) {
  auto overrides = collect_overrides(flags.common.sets);
  if (!flags.host.empty()) overrides.push_back({"server.host", flags.host});
  if (flags.port) overrides.push_back({"server.port", std::to_string(*flags.port)});
  ExperimentConfig cfg = load_config(flags.common.config, overrides);
  const fs::path dir = output_dir(cfg, flags.common.out);
  auto data = std::make_shared<const DataBundle>(load_data(cfg));
  const bool has_labels = !cfg.data.labels.empty() || cfg.data.synthetic.has_value();
  LoopConfig lc = cfg.loop;
  lc.method = cfg.methods.front();
  auto session = std::make_shared<LabelSession>(lc, data, cfg.server.seed, has_labels && !cfg.server.human_init);

  ServerOptions options;
  options.host = cfg.server.host;
  options.port = cfg.server.port;
  options.ui_dir = flags.ui_dir.empty() ? cfg.server.ui_dir : fs::path(flags.ui_dir);
  options.metrics_path = dir / "metrics.csv";

  // Block the signals before any thread starts so only sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Server server(session, options);
  server.start();
  out << "listening on http://" << options.host << ':' << server.port() << std::endl;
  int received = 0;
  sigwait(&signals, &received);
  server.stop();
  out << "shut down; metrics in " << options.metrics_path.string() << std::endl;
  return 0;
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian active learning over precomputed embeddings", "epiglab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "epiglab 0.3.0");

  RunFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "Run active-learning experiments over one or more seeds");
  add_common(run_cmd, run_flags.common);
  run_cmd->add_option("-m,--method", run_flags.methods,
                      "Acquisition method(s): random, bald, epig, max_entropy, kcentre, kmeans, typiclust, "
                      "probcover (comma separated or repeated)");
  run_cmd->add_option("--seeds", run_flags.seeds, "Number of seeds (0..N-1)");
  run_cmd->add_option("--budget", run_flags.budget, "Total label budget, initial labels included");
  run_cmd->add_option("-j,--jobs", run_flags.jobs, "Seeds run in parallel");
  run_cmd->add_option("--head", run_flags.head, "Head kind: forest, dropout, laplace, ensemble");
  run_cmd->add_option("--feature-source", run_flags.feature_source, "latent or raw");

  CommonFlags decompose_flags;
  auto* decompose_cmd = app.add_subcommand("decompose", "Uncertainty decomposition at a small and a large train size");
  add_common(decompose_cmd, decompose_flags);

  CommonFlags tune_flags;
  auto* tune_cmd = app.add_subcommand("tune-probcover", "Purity curve and chosen ProbCover radius");
  add_common(tune_cmd, tune_flags);

  SynthFlags synth_flags;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset (EMB1 latent and raw, LAB1 labels)");
  synth_cmd->add_option("-o,--out", synth_flags.out, "Output directory")->required();
  synth_cmd->add_option("--classes", synth_flags.spec.classes, "Number of classes")->capture_default_str();
  synth_cmd->add_option("--per-class", synth_flags.spec.per_class, "Examples per class")->capture_default_str();
  synth_cmd->add_option("--latent-dim", synth_flags.spec.latent_dim, "Latent dimension")->capture_default_str();
  synth_cmd->add_option("--raw-dim", synth_flags.spec.raw_dim, "Raw dimension (>= latent)")->capture_default_str();
  synth_cmd->add_option("--noise-scale", synth_flags.spec.noise_scale, "Raw-feature noise scale")->capture_default_str();
  synth_cmd->add_option("--separation", synth_flags.spec.separation, "Minimum centre distance")->capture_default_str();
  synth_cmd->add_option("--seed", synth_flags.seed, "Random seed")->capture_default_str();

  ServeFlags serve_flags;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the labelling UI and JSON API until interrupted");
  add_common(serve_cmd, serve_flags.common);
  serve_cmd->add_option("--host", serve_flags.host, "Bind address (default from config)");
  serve_cmd->add_option("--port", serve_flags.port, "Port; 0 picks a free one");
  serve_cmd->add_option("--ui-dir", serve_flags.ui_dir, "Built UI bundle served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (*run_cmd) return cmd_run(run_flags, out);
    if (*decompose_cmd) return cmd_decompose(decompose_flags, out);
    if (*tune_cmd) return cmd_tune(tune_flags, out);
    if (*synth_cmd) return cmd_synth(synth_flags, out);
    if (*serve_cmd) return cmd_serve(serve_flags, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace epiglab::cli
