#pragma once

// The hyperkkl command line: gen, train, eval, plot, report and replay.
// run_cli() never exits the process; it returns the exit code.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "hyperkkl/checkpoint.hpp"
#include "hyperkkl/config.hpp"
#include "hyperkkl/dynamics.hpp"
#include "hyperkkl/error.hpp"
#include "hyperkkl/eval.hpp"
#include "hyperkkl/model.hpp"
#include "hyperkkl/parallel.hpp"
#include "hyperkkl/signals.hpp"
#include "hyperkkl/training.hpp"

namespace hyperkkl::app {

namespace fs = std::filesystem;

struct Io {
  std::ostream& out;
  std::ostream& err;
};

/// State shared by one command execution.
struct Run {
  std::string command;
  Settings s;
  std::string out_dir;
  int threads = 1;
  std::map<std::string, std::string> inputs;
  std::vector<std::string> outputs;
  std::string started = utc_now();

  std::string out_path(const std::string& name) {
    outputs.push_back(name);
    return (fs::path(out_dir) / name).string();
  }
  std::string input(const std::string& path) {
    const std::string abs = fs::absolute(path).lexically_normal().string();
    if (!fs::exists(abs)) throw IoError("input file not found: " + path);
    inputs[abs] = file_hash(abs);
    return abs;
  }
};

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);
}

inline void finish(Run& r) {
  for (const auto& k : r.s.unused())
    throw ConfigError("setting '" + k + "' is not used by the " + r.command + " command");
  RunRecord rec;
  rec.command = r.command;
  rec.config = r.s.resolved();
  rec.inputs = r.inputs;
  for (const auto& name : r.outputs) rec.outputs[name] = file_hash((fs::path(r.out_dir) / name).string());
  rec.started = r.started;
  rec.finished = utc_now();
  rec.threads = r.threads;
  rec.out = r.out_dir;
  append_manifest(r.out_dir, rec);
}

// ---- gen -------------------------------------------------------------------------

inline void cmd_gen(Run& r, const Io& io) {
  const SystemSpec sys = systems::by_name(r.s.str("system.name"));
  r.s.note("system.name", sys.name);
  const SignalKind regime = parse_regime(r.s.str("data.regime"));
  r.s.note("data.regime", std::string(to_string(regime)));
  const long long n = r.s.integer("data.n", 100);
  if (n < 1 || n > 1000000) throw ConfigError("--n must be in [1, 1000000]");
  const std::uint64_t seed = r.s.u64("data.seed", 1);
  const double dt = r.s.real("data.dt", 0.05);
  const double horizon = r.s.real("data.horizon", 50.0);
  const double sigma = r.s.real("data.sigma", 0.01);
  if (!(dt > 0.0) || !(horizon > 0.0) || !(sigma >= 0.0)) throw ConfigError("dt and horizon must be > 0, sigma >= 0");
  try {
    step_count(dt, horizon);
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  const TrajectorySet set = generate_dataset(sys, regime, static_cast<int>(n), seed, dt, horizon, sigma, r.threads);
  const std::string name =
      sys.name + "_" + std::string(to_string(regime)) + "_s" + std::to_string(seed) + "_n" + std::to_string(n) + ".hkkl";
  save_dataset(r.out_path(name), set);
  io.out << "wrote " << (fs::path(r.out_dir) / name).string() << " (" << n << " trajectories, seeds " << set.seed_lo()
         << ".." << set.seed_hi() << ")\n";
}

// ---- train -----------------------------------------------------------------------

inline void write_log_csv(const std::string& path, const std::vector<LogRow>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  os << "epoch,loss_rec,loss_pde,grad_norm,level,loss_total,stage\n";
  for (const auto& row : log)
    os << row.epoch << ',' << format_double(row.loss_rec) << ',' << format_double(row.loss_pde) << ','
       << format_double(row.grad_norm) << ',' << row.level << ',' << format_double(row.loss_total) << ',' << row.stage
       << '\n';
  if (!os) throw IoError("write failed: " + path);
}

inline TrainConfig read_train_config(Settings& s) {
  TrainConfig c;
  c.epochs = static_cast<int>(s.integer("train.epochs", c.epochs));
  c.steps_per_epoch = static_cast<int>(s.integer("train.steps_per_epoch", c.steps_per_epoch));
  c.batch = static_cast<int>(s.integer("train.batch", c.batch));
  c.lr = s.real("train.lr", c.lr);
  c.lambda = s.real("train.lambda", c.lambda);
  c.clip = s.real("train.clip", c.clip);
  c.seed = s.u64("train.seed", 0);
  c.label_discard = s.real("train.label_discard", c.label_discard);
  return c;
}

inline HyperNetSpec read_hyper_spec(Settings& s, const std::string& system) {
  HyperNetSpec h;
  h.window = static_cast<int>(s.integer("hypernet.window", h.window));
  h.lstm.hidden = static_cast<int>(s.integer("hypernet.lstm_hidden", h.lstm.hidden));
  h.rank = static_cast<int>(s.integer("hypernet.rank", systems::is_chaotic(system) ? 128 : 32));
  h.chunk_size = static_cast<int>(s.integer("hypernet.chunk_size", h.chunk_size));
  h.tau = s.real("hypernet.tau", h.tau);
  if (h.window < 1 || h.lstm.hidden < 1 || h.rank < 1 || h.chunk_size < 1 || !(h.tau > 0.0))
    throw ConfigError("hypernet window, lstm_hidden, rank, chunk_size and tau must be positive");
  return h;
}

inline std::string system_of(const std::vector<TrajectorySet>& sets, Settings& s) {
  const std::string sys = sets.front().system;
  for (const auto& set : sets)
    if (set.system != sys) throw ConfigError("datasets are for different systems");
  if (s.has("system.name")) {
    const std::string want = systems::by_name(s.str("system.name")).name;
    if (want != sys) throw ConfigError("--system " + want + " does not match the dataset system " + sys);
  }
  return sys;
}

inline void cmd_train(Run& r, const Io& io) {
  const std::string phase = r.s.str("train.phase");
  if (phase != "1" && phase != "2" && phase != "curriculum")
    throw ConfigError("--phase must be 1, 2 or curriculum (got '" + phase + "')");
  std::string base_path;
  if (phase != "1") {
    if (!r.s.has("train.base"))
      throw ConfigError("phase " + phase + " requires --base CHECKPOINT (an autonomous Phase 1 checkpoint)");
    base_path = r.input(r.s.str("train.base"));
    r.s.note("train.base", base_path);
  }
  std::vector<std::string> files = r.s.list("data.files");
  if (files.empty()) throw ConfigError("train needs at least one --data FILE");
  std::string joined;
  std::vector<TrajectorySet> sets;
  for (auto& f : files) {
    f = r.input(f);
    joined += (joined.empty() ? "" : ",") + f;
    sets.push_back(load_dataset(f));
  }
  r.s.note("data.files", joined);
  const std::string system = system_of(sets, r.s);
  TrainConfig cfg = read_train_config(r.s);
  std::vector<const TrajectorySet*> ptrs;
  for (const auto& set : sets) ptrs.push_back(&set);

  TrainResult res;
  Variant variant = Variant::autonomous;
  try {
    if (phase == "1") {
      if (sets.size() != 1) throw ConfigError("phase 1 takes exactly one zero-input dataset");
      cfg.decoder_epochs = static_cast<int>(r.s.integer("train.decoder_epochs", cfg.epochs));
      cfg.collocation = static_cast<int>(r.s.integer("train.collocation", cfg.collocation));
      cfg.normalize = r.s.boolean("train.normalize", cfg.normalize);
      cfg.width = static_cast<int>(r.s.integer("train.width", systems::is_chaotic(system) ? 350 : 150));
      cfg.hidden_layers = static_cast<int>(r.s.integer("train.hidden_layers", cfg.hidden_layers));
      for (const auto& tr : sets.front().trajectories)
        if (!tr.inputs.isZero(0.0)) throw ConfigError("phase 1 needs a zero-input dataset (gen --regime zero)");
      res = phase1_train(sets.front(), cfg);
    } else {
      const ObserverModel base = from_checkpoint(load_checkpoint(base_path));
      if (base.system != system)
        throw ConfigError("base checkpoint is for '" + base.system + "' but the data is for '" + system + "'");
      if (base.variant != Variant::autonomous) throw ConfigError("--base must be an autonomous checkpoint");
      if (phase == "2") {
        variant = parse_variant(r.s.str("train.variant", "dynamic"));
        if (variant != Variant::dynamic_hyper && variant != Variant::static_hyper)
          throw ConfigError("phase 2 trains --variant dynamic or static");
        Phase2Options opt;
        opt.hyper = read_hyper_spec(r.s, system);
        if (variant == Variant::dynamic_hyper) {
          cfg.data_weight = r.s.real("train.data_weight", cfg.data_weight);
          res = phase2_dynamic(base, ptrs, cfg, opt);
        } else {
          opt.injection_width = static_cast<int>(r.s.integer("hypernet.injection_width", opt.injection_width));
          cfg.rollout = static_cast<int>(r.s.integer("train.rollout", cfg.rollout));
          res = phase2_static(base, ptrs, cfg, opt);
        }
      } else {
        variant = Variant::curriculum;
        CurriculumConfig cc;
        cc.epsilon = r.s.real("curriculum.epsilon", cc.epsilon);
        cc.patience = static_cast<int>(r.s.integer("curriculum.patience", cc.patience));
        cc.level_budget = static_cast<int>(r.s.integer("curriculum.level_budget", cc.level_budget));
        res = curriculum_train(base, ptrs, cfg, cc);
        io.out << "level transitions at epochs:";
        for (int e : res.level_epochs) io.out << ' ' << e;
        io.out << '\n';
      }
    }
  } catch (const TrainingDiverged& e) {
    const std::string stem = system + "_" + to_string(variant);
    save_checkpoint(r.out_path(stem + "_lastgood.hkkp"), to_checkpoint(e.last_good()));
    finish(r);
    throw;
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  const std::string stem = system + "_" + to_string(res.model.variant);
  save_checkpoint(r.out_path(stem + ".hkkp"), to_checkpoint(res.model));
  write_log_csv(r.out_path(stem + "_log.csv"), res.log);
  const LogRow& last = res.log.empty() ? LogRow{} : res.log.back();
  io.out << "trained " << stem << " (" << res.log.size() << " epochs, final loss " << last.loss_total << ")\n";
}

// ---- eval / plot -----------------------------------------------------------------

struct Loaded {
  std::vector<std::unique_ptr<ObserverModel>> models;
  std::vector<const ObserverModel*> chosen;
};

inline Loaded load_models(Run& r) {
  Loaded l;
  std::vector<std::string> files = r.s.list("eval.checkpoints");
  if (files.empty()) throw ConfigError("at least one --ckpt FILE is required");
  std::string joined;
  std::map<Variant, const ObserverModel*> by_variant;
  for (auto& f : files) {
    f = r.input(f);
    joined += (joined.empty() ? "" : ",") + f;
    l.models.push_back(std::make_unique<ObserverModel>(from_checkpoint(load_checkpoint(f))));
    const ObserverModel* m = l.models.back().get();
    if (by_variant.count(m->variant)) throw ConfigError("two checkpoints given for variant " + to_string(m->variant));
    by_variant[m->variant] = m;
  }
  r.s.note("eval.checkpoints", joined);
  if (r.s.has("eval.variants")) {
    std::vector<Variant> want;
    for (const auto& v : r.s.list("eval.variants")) want.push_back(parse_variant(v));
    require_variants(by_variant, want);
    for (Variant v : want) l.chosen.push_back(by_variant.at(v));
  } else {
    for (const auto& [v, m] : by_variant) l.chosen.push_back(m);
  }
  for (const auto* m : l.chosen)
    if (m->system != l.chosen.front()->system) throw ConfigError("checkpoints are for different systems");
  return l;
}

inline BenchmarkConfig read_bench(Run& r) {
  BenchmarkConfig b;
  b.regimes.clear();
  for (const auto& s : r.s.list("eval.regimes", "zero,sin,constant,square")) b.regimes.push_back(parse_regime(s));
  b.n_test = static_cast<int>(r.s.integer("eval.n_test", b.n_test));
  b.seed = r.s.u64("eval.seed", b.seed);
  b.transient = r.s.real("eval.transient", b.transient);
  b.dt = r.s.real("data.dt", b.dt);
  b.horizon = r.s.real("data.horizon", b.horizon);
  b.sigma = r.s.real("data.sigma", b.sigma);
  b.threads = r.threads;
  if (b.n_test < 1) throw ConfigError("--n-test must be at least 1");
  if (!(b.transient >= 0.0 && b.transient < 1.0)) throw ConfigError("--transient must be in [0, 1)");
  return b;
}

inline void write_plots(Run& r, const std::vector<const ObserverModel*>& models, const BenchmarkConfig& b) {
  const SystemSpec sys = models.front()->system_spec();
  for (std::size_t ri = 0; ri < b.regimes.size(); ++ri) {
    const TrajectorySet one = generate_dataset(sys, b.regimes[ri], 1, regime_seed(b, ri), b.dt, b.horizon, b.sigma);
    const Trajectory& tr = one.trajectories.front();
    for (const auto* m : models) {
      check_seed_disjoint(*m, {one.seed_lo(), one.seed_hi()});
      const Estimate e = run_observer(*m, tr);
      const std::string name = plot_name(sys.name, m->variant, b.regimes[ri]);
      std::ofstream os(r.out_path(name), std::ios::trunc);
      if (!os) throw IoError("cannot write plot " + name);
      write_svg(os, tr, e.x,
                sys.name + " / " + to_string(m->variant) + " / " + std::string(to_string(b.regimes[ri])) + " (seed " +
                    std::to_string(tr.seed) + ")");
    }
  }
}

inline void cmd_eval(Run& r, const Io& io) {
  Loaded l = load_models(r);
  const BenchmarkConfig b = read_bench(r);
  const bool plots = r.s.boolean("eval.plots", true);
  const EvalReport rep = benchmark(l.chosen, b);
  {
    std::ofstream os(r.out_path("report.csv"), std::ios::trunc);
    if (!os) throw IoError("cannot write report.csv");
    write_report_csv(os, rep);
  }
  {
    std::ofstream os(r.out_path("report.txt"), std::ios::trunc);
    if (!os) throw IoError("cannot write report.txt");
    write_report_table(os, rep);
  }
  if (plots) write_plots(r, l.chosen, b);
  write_report_table(io.out, rep);
}

inline void cmd_plot(Run& r, const Io& io) {
  Loaded l = load_models(r);
  const BenchmarkConfig b = read_bench(r);
  write_plots(r, l.chosen, b);
  io.out << "wrote " << r.outputs.size() << " plots to " << r.out_dir << '\n';
}

// ---- report ----------------------------------------------------------------------

struct CsvCell {
  std::string system, variant, regime, rmse, smape, n;
};

inline std::vector<CsvCell> read_report_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "system,variant,regime,rmse,smape,n,seed_lo,seed_hi")
    throw ConfigError(path + " is not an eval report (unexpected header)");
  std::vector<CsvCell> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = Settings::split_list(line);
    if (f.size() != 8) throw ConfigError(path + ": malformed row '" + line + "'");
    out.push_back({f[0], f[1], f[2], f[3], f[4], f[5]});
  }
  return out;
}

/// Markdown grid per system: variants as rows, regimes as columns, "rmse / smape".
inline void cmd_report(Run& r, const Io& io) {
  std::vector<std::string> files = r.s.list("eval.reports");
  if (files.empty()) throw ConfigError("report needs at least one --report-csv FILE");
  std::string joined;
  std::vector<CsvCell> cells;
  for (auto& f : files) {
    f = r.input(f);
    joined += (joined.empty() ? "" : ",") + f;
    auto c = read_report_csv(f);
    cells.insert(cells.end(), c.begin(), c.end());
  }
  r.s.note("eval.reports", joined);
  std::ostringstream md;
  std::vector<std::string> systems_seen;
  for (const auto& c : cells)
    if (std::find(systems_seen.begin(), systems_seen.end(), c.system) == systems_seen.end())
      systems_seen.push_back(c.system);
  for (const auto& sys : systems_seen) {
    std::vector<std::string> variants, regimes;
    std::map<std::pair<std::string, std::string>, const CsvCell*> at;
    for (const auto& c : cells) {
      if (c.system != sys) continue;
      if (std::find(variants.begin(), variants.end(), c.variant) == variants.end()) variants.push_back(c.variant);
      if (std::find(regimes.begin(), regimes.end(), c.regime) == regimes.end()) regimes.push_back(c.regime);
      at[{c.variant, c.regime}] = &c;
    }
    md << "## " << sys << "\n\nRMSE / SMAPE (%), lower is better.\n\n| variant |";
    for (const auto& g : regimes) md << ' ' << g << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < regimes.size(); ++i) md << "---|";
    md << '\n';
    for (const auto& v : variants) {
      md << "| " << v << " |";
      for (const auto& g : regimes) {
        const auto it = at.find({v, g});
        if (it == at.end()) {
          md << " - |";
          continue;
        }
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(4) << std::stod(it->second->rmse) << " / " << std::setprecision(2)
             << std::stod(it->second->smape);
        md << ' ' << cell.str() << " |";
      }
      md << '\n';
    }
    md << '\n';
  }
  std::ofstream os(r.out_path("report.md"), std::ios::trunc);
  if (!os) throw IoError("cannot write report.md");
  os << md.str();
  io.out << md.str();
}

// ---- dispatch --------------------------------------------------------------------

inline void dispatch(Run& r, const Io& io) {
  ensure_dir(r.out_dir);
  if (r.command == "gen") cmd_gen(r, io);
  else if (r.command == "train") cmd_train(r, io);
  else if (r.command == "eval") cmd_eval(r, io);
  else if (r.command == "plot") cmd_plot(r, io);
  else if (r.command == "report") cmd_report(r, io);
  else throw ConfigError("unknown command " + r.command);
  finish(r);
}

/// Re-executes run `id` (1-based, 0 = last) of a manifest from its recorded
/// configuration alone, optionally into another directory.
inline void replay(const std::string& manifest, int id, const std::string& out_override, int threads, const Io& io) {
  const auto runs = read_manifest(manifest);
  if (runs.empty()) throw ConfigError("manifest " + manifest + " has no runs");
  if (id < 0 || id > static_cast<int>(runs.size())) throw ConfigError("manifest has no run " + std::to_string(id));
  const RunRecord& rec = runs[static_cast<std::size_t>(id == 0 ? runs.size() - 1 : id - 1)];
  for (const auto& [path, hash] : rec.inputs) {
    if (!fs::exists(path)) throw IoError("recorded input is missing: " + path);
    if (file_hash(path) != hash) throw ConfigError("recorded input changed since the run: " + path);
  }
  Run r;
  r.command = rec.command;
  r.out_dir = out_override.empty() ? rec.out : out_override;
  r.threads = threads;
  for (const auto& [k, v] : rec.config) r.s.set_from_config(k, v);
  dispatch(r, io);
}

/// Parses argv and runs one command. Returns the process exit code:
/// 0 ok, 2 user error, 3 numeric failure, 4 I/O failure.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  const Io io{out, err};
  CLI::App cli{"hyperkkl: learned KKL observers for non-autonomous systems"};
  cli.require_subcommand(1);
  cli.fallthrough();
  std::string config_path, seed, out_dir = ".";
  int threads = 0;
  cli.add_option("--config", config_path, "INI config with [system] [data] [train] [curriculum] [hypernet] [eval]");
  cli.add_option("--seed", seed, "seed of the command (data, training or test seed)");
  cli.add_option("--out", out_dir, "output directory (holds the manifest)");
  cli.add_option("--threads", threads, "worker threads (default: HYPERKKL_THREADS or 1)")->check(CLI::NonNegativeNumber);

  // flag -> settings key, per command
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> table = {
      {"gen",
       {{"system", "system.name"}, {"regime", "data.regime"}, {"n", "data.n"}, {"dt", "data.dt"},
        {"horizon", "data.horizon"}, {"sigma", "data.sigma"}}},
      {"train",
       {{"phase", "train.phase"}, {"variant", "train.variant"}, {"system", "system.name"},
        {"base", "train.base"}, {"epochs", "train.epochs"}, {"decoder-epochs", "train.decoder_epochs"},
        {"steps-per-epoch", "train.steps_per_epoch"}, {"batch", "train.batch"}, {"lr", "train.lr"},
        {"lambda", "train.lambda"}, {"clip", "train.clip"}, {"collocation", "train.collocation"},
        {"normalize", "train.normalize"}, {"width", "train.width"}, {"hidden-layers", "train.hidden_layers"},
        {"label-discard", "train.label_discard"}, {"data-weight", "train.data_weight"},
        {"rollout", "train.rollout"}, {"epsilon", "curriculum.epsilon"}, {"patience", "curriculum.patience"},
        {"level-budget", "curriculum.level_budget"}, {"window", "hypernet.window"},
        {"lstm-hidden", "hypernet.lstm_hidden"}, {"rank", "hypernet.rank"}, {"chunk-size", "hypernet.chunk_size"},
        {"tau", "hypernet.tau"}, {"injection-width", "hypernet.injection_width"}}},
      {"eval",
       {{"variants", "eval.variants"}, {"regimes", "eval.regimes"}, {"n-test", "eval.n_test"},
        {"transient", "eval.transient"}, {"plots", "eval.plots"}, {"dt", "data.dt"}, {"horizon", "data.horizon"},
        {"sigma", "data.sigma"}}},
      {"plot",
       {{"variants", "eval.variants"}, {"regimes", "eval.regimes"}, {"dt", "data.dt"}, {"horizon", "data.horizon"},
        {"sigma", "data.sigma"}}},
      {"report", {}},
  };
  const std::map<std::string, std::pair<std::string, std::string>> lists = {
      {"train", {"data", "data.files"}},
      {"eval", {"ckpt", "eval.checkpoints"}},
      {"plot", {"ckpt", "eval.checkpoints"}},
      {"report", {"report-csv", "eval.reports"}},
  };
  const std::map<std::string, std::string> descr = {
      {"gen", "simulate a seeded dataset"},
      {"train", "train phase 1, phase 2 (dynamic|static) or the curriculum baseline"},
      {"eval", "benchmark checkpoints on held-out seeds (report + plots)"},
      {"plot", "write per-cell SVG plots"},
      {"report", "render eval reports as a markdown grid"},
  };
  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, std::vector<std::string>> list_values;
  std::map<std::string, CLI::App*> subs;
  for (auto& [cmd, flags] : table) {
    CLI::App* sc = cli.add_subcommand(cmd, descr.at(cmd));
    subs[cmd] = sc;
    for (const auto& [flag, key] : flags) sc->add_option("--" + flag, values[cmd][key], key);
    if (auto it = lists.find(cmd); it != lists.end())
      sc->add_option("--" + it->second.first, list_values[cmd], it->second.second)->delimiter(',');
  }
  std::string manifest, replay_out;
  int run_id = 0;
  CLI::App* rp = cli.add_subcommand("replay", "re-run a recorded command from a manifest");
  rp->add_option("manifest", manifest, "MANIFEST.ini path")->required();
  rp->add_option("--run", run_id, "run number (default: last)");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    const int nthreads = threads > 0 ? threads : default_threads();
    if (rp->parsed()) {
      if (!config_path.empty()) throw ConfigError("replay takes its configuration from the manifest; drop --config");
      if (!seed.empty()) throw ConfigError("replay takes its seed from the manifest; drop --seed");
      replay(manifest, run_id, cli.count("--out") ? out_dir : "", nthreads, io);
      return 0;
    }
    Run r;
    for (const auto& [cmd, sc] : subs)
      if (sc->parsed()) r.command = cmd;
    r.out_dir = out_dir;
    r.threads = nthreads;
    if (!config_path.empty()) {
      load_config_file(config_path, r.s);
      r.inputs[fs::absolute(config_path).lexically_normal().string()] = file_hash(config_path);
    }
    CLI::App* sc = subs.at(r.command);
    for (const auto& [flag, key] : table.at(r.command))
      if (sc->count("--" + flag)) r.s.set_from_flag(key, values[r.command][key]);
    if (auto it = lists.find(r.command); it != lists.end() && sc->count("--" + it->second.first)) {
      std::string joined;
      for (const auto& v : list_values[r.command]) joined += (joined.empty() ? "" : ",") + v;
      r.s.set_from_flag(it->second.second, joined);
    }
    if (!seed.empty()) {
      static const std::map<std::string, std::string> seed_key = {
          {"gen", "data.seed"}, {"train", "train.seed"}, {"eval", "eval.seed"}, {"plot", "eval.seed"}};
      const auto it = seed_key.find(r.command);
      if (it == seed_key.end()) throw ConfigError("--seed has no meaning for " + r.command);
      r.s.set_from_flag(it->second, seed);
    }
    dispatch(r, io);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace hyperkkl::app
