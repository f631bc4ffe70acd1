#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rlab/dynamics.hpp"
#include "rlab/evaluation.hpp"
#include "rlab/harness.hpp"
#include "rlab/hybridcell.hpp"
#include "rlab/netcore.hpp"
#include "rlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace rlab;

namespace {

struct Common {
  std::string config = "A";
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> system;
  std::optional<std::string> paradigm;
  std::optional<std::size_t> seeds;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  std::size_t workers = 1;
  std::string data;
  std::string checkpoint;
  std::vector<std::string> runs;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "registry name or config file path")->capture_default_str();
  cmd->add_option("--seed", c.seed, "seed (sweeps: first seed)");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--system", c.system, "duffing | vdp");
  cmd->add_option("--paradigm", c.paradigm, "tf | bptt");
  cmd->add_option("--workers", c.workers, "seed-level worker threads")->capture_default_str();
  cmd->add_option("--seeds", c.seeds, "number of seeds");
  cmd->add_option("--steps", c.steps, "optimizer steps");
  cmd->add_option("--lr", c.lr, "learning rate");
}

ExperimentConfig build_config(const Common& c) {
  ExperimentConfig cfg = resolve_config(c.config);
  if (c.system) cfg.system = parse_oscillator(*c.system);
  if (c.paradigm) cfg.paradigm = parse_paradigm(*c.paradigm);
  if (c.seeds) cfg.n_seeds = *c.seeds;
  if (c.steps) cfg.steps = *c.steps;
  if (c.lr) cfg.learning_rate = *c.lr;
  if (c.seed) cfg.seed_base = *c.seed;
  cfg = cfg.resolved();
  cfg.validate();
  return cfg;
}

std::uint64_t run_seed_of(const Common& c) { return c.seed.value_or(0); }

fs::path out_dir(const Common& c, const ExperimentConfig& cfg, const std::string& leaf) {
  if (!c.out.empty()) return c.out;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  return default_output_root() / leaf;
}

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());
  return dir;
}

Dataset dataset_for(const Common& c, const ExperimentConfig& cfg) {
  if (!c.data.empty()) {
    Dataset d = load_dataset(c.data);
    if (d.system != cfg.system)
      throw std::invalid_argument("dataset '" + c.data + "' holds " + std::string(to_string(d.system)) +
                                  " trajectories, config asks for " + std::string(to_string(cfg.system)));
    return d;
  }
  return generate_dataset(OscillatorSpec(cfg.system), make_data_config(cfg, cfg.data_seed));
}

ResidualBranch branch_for(const Common& c, const ExperimentConfig& cfg) {
  if (!c.checkpoint.empty()) return load_checkpoint(c.checkpoint).branch;
  if (cfg.arch == "oracle") return ResidualBranch::oracle(cfg.system);
  throw std::invalid_argument("--checkpoint is required unless the config uses the oracle branch");
}

HybridSystem system_for(const ExperimentConfig& cfg, ResidualBranch branch, const Dataset& data) {
  return HybridSystem{OscillatorSpec(cfg.system), std::move(branch), data.dt, cfg.integrator, data.scale};
}

int cmd_gen_data(const Common& c) {
  const ExperimentConfig cfg = build_config(c);
  const fs::path dir = ensure_dir(out_dir(c, cfg, "data"));
  const Dataset d =
      generate_dataset(OscillatorSpec(cfg.system), make_data_config(cfg, c.seed.value_or(cfg.data_seed)));
  const fs::path path = dir / ("dataset_" + std::string(to_string(cfg.system)) + ".csv");
  save_dataset(path.string(), d);
  std::cout << "wrote " << path.string() << " (" << d.train.size() << " train, " << d.test.size()
            << " test trajectories)\n";
  return 0;
}

int cmd_train(const Common& c) {
  const ExperimentConfig cfg = build_config(c);
  const std::uint64_t seed = run_seed_of(c);
  const Dataset data = dataset_for(c, cfg);
  const fs::path dir = ensure_dir(out_dir(c, cfg, "train_" + sweep_dir_name(cfg)));
  const HybridSystem h =
      system_for(cfg, ResidualBranch::initialized(build_arch(cfg), seed), data);
  const TrainReport report = train(h, data, make_train_config(cfg, seed));

  const fs::path ckpt = dir / "checkpoint.ckpt";
  const std::vector<double>& kept =
      report.status == TrainStatus::Unstable && report.checkpoint ? *report.checkpoint : report.params;
  ResidualBranch out = h.branch;
  out.set_params(kept);
  if (report.status != TrainStatus::Unstable || report.checkpoint) save_checkpoint(ckpt.string(), out, seed);
  std::ofstream js(dir / "report.json");
  write_report_json(js, report, ckpt.string());
  std::ofstream loss(dir / "loss.csv");
  loss << "step,loss\n";
  for (std::size_t i = 0; i < report.loss_history.size(); ++i)
    loss << i + 1 << ',' << format_double(report.loss_history[i]) << '\n';
  std::cout << "status " << to_string(report.status) << ", steps " << report.loss_history.size();
  if (!report.loss_history.empty()) std::cout << ", final loss " << format_double(report.loss_history.back());
  std::cout << "\nwrote " << dir.string() << '\n';
  return 0;
}

int cmd_eval(const Common& c) {
  const ExperimentConfig cfg = build_config(c);
  const Dataset data = dataset_for(c, cfg);
  const ResidualBranch branch = branch_for(c, cfg);
  const HybridSystem h = system_for(cfg, branch, data);
  const SurfaceSample s = sample_surface(branch, h.spec, GridSpec{}, data.scale);
  const double r2 = discovery_r2(s);
  const double mse = test_mse(h, data.test);
  const double roll = rollout_mse(h, data.test);
  std::cout << "discovery_r2 " << format_double(r2) << "\ntest_mse " << format_double(mse) << "\nrollout_mse "
            << format_double(roll) << '\n';
  if (!c.out.empty()) {
    std::ofstream os(ensure_dir(c.out) / "eval.csv");
    os << "discovery_r2,test_mse,rollout_mse\n"
       << format_double(r2) << ',' << format_double(mse) << ',' << format_double(roll) << '\n';
  }
  return 0;
}

int cmd_sweep(const Common& c) {
  const ExperimentConfig cfg = build_config(c);
  const fs::path dir = out_dir(c, cfg, sweep_dir_name(cfg));
  const SweepResult r = run_sweep(cfg, dir, SweepOptions{c.workers});
  std::cout << "sweep " << cfg.name << " " << to_string(cfg.system) << " " << to_string(cfg.paradigm) << ": "
            << r.rows.size() << " rows (" << r.computed_seeds << " trained), discovery R2 "
            << format_cell(r.discovery_r2.ci) << ", fingerprint " << r.fingerprint << "\nwrote " << dir.string()
            << '\n';
  return 0;
}

int cmd_aggregate(const Common& c) {
  std::vector<fs::path> dirs;
  for (const auto& r : c.runs) dirs.emplace_back(r);
  if (dirs.empty()) {
    const fs::path root = default_output_root();
    if (fs::is_directory(root))
      for (const auto& e : fs::directory_iterator(root))
        if (fs::exists(e.path() / "sweep.json")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
  }
  std::vector<SweepResult> results;
  for (const auto& d : dirs) results.push_back(load_sweep(d));
  const AggregateOutput out = aggregate_tables(results);
  const fs::path dir = c.out.empty() ? default_output_root() / "aggregate" : fs::path(c.out);
  write_aggregate(out, dir);
  std::cout << out.text << "wrote " << (dir / "table.csv").string() << " and " << (dir / "table.txt").string()
            << '\n';
  return 0;
}

int cmd_fit_symbolic(const Common& c, double threshold) {
  const ExperimentConfig cfg = build_config(c);
  const ResidualBranch branch = branch_for(c, cfg);
  const SurfaceSample s = sample_surface(branch, OscillatorSpec(cfg.system), GridSpec{}, kStateScale);
  const SymbolicFit fit = stlsq_fit(s, CandidateDictionary::monomials(3), threshold, cfg.stlsq_max_iters);
  std::ostringstream os;
  for (const auto& [name, coef] : fit.active()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", coef);
    os << name << ' ' << buf << '\n';
  }
  os << "r2 " << format_double(fit.r2) << '\n';
  std::cout << os.str();
  if (!c.out.empty()) std::ofstream(ensure_dir(c.out) / "fit.txt") << os.str();
  return 0;
}

int cmd_export_surface(const Common& c) {
  const ExperimentConfig cfg = build_config(c);
  const ResidualBranch branch = branch_for(c, cfg);
  const SurfaceSample s = sample_surface(branch, OscillatorSpec(cfg.system), GridSpec{}, kStateScale);
  const fs::path dir = ensure_dir(out_dir(c, cfg, "surface_" + std::string(to_string(cfg.system))));
  const SurfaceExport e = export_surface(s, dir);
  std::cout << "predicted range [" << format_double(e.predicted_min) << ", " << format_double(e.predicted_max)
            << "]\ntruth range [" << format_double(e.truth_min) << ", " << format_double(e.truth_max) << "]\nwrote "
            << dir.string() << '\n';
  return 0;
}

int cmd_verify_grads(const Common& c) {
  const ExperimentConfig cfg = build_config(c);
  const std::uint64_t seed = run_seed_of(c);
  const Dataset data = dataset_for(c, cfg);
  const HybridSystem h = system_for(cfg, ResidualBranch::initialized(build_arch(cfg), seed), data);
  GradCheckOptions opts;
  opts.seed = seed;
  const GradCheckReport r = verify_gradients(h, data, opts);
  std::cout << "teacher forcing max rel err " << format_double(r.tf_max_rel) << " (tol "
            << format_double(opts.tf_tolerance) << ")\nbptt max rel err " << format_double(r.bptt_max_rel)
            << " (tol " << format_double(opts.bptt_tolerance) << ")\n"
            << (r.passed ? "PASS" : "FAIL") << '\n';
  return r.passed ? 0 : 2;
}

int cmd_list_configs() {
  std::printf("%-16s %-30s %-7s %7s %4s %3s %8s %-10s %s\n", "name", "label", "family", "params", "G", "k",
              "lambda", "base", "reconstructed");
  for (const auto& cfg : builtin_configs()) {
    const Arch arch = build_arch(cfg);
    const bool kan = std::holds_alternative<KanArch>(arch);
    std::printf("%-16s %-30s %-7s %7zu %4s %3s %8s %-10s %s\n", cfg.name.c_str(), cfg.label.c_str(),
                std::string(family_name(arch)).c_str(), param_count(arch),
                kan ? std::to_string(cfg.grid_size).c_str() : "-",
                kan ? std::to_string(cfg.spline_order).c_str() : "-", kan ? format_double(cfg.l1_weight).c_str() : "-",
                kan ? (cfg.base_blend ? "blend" : "frozen-0") : "-", cfg.reconstructed ? "yes" : "no");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"residual-lab: KAN and MLP residual branches in a recurrent physics-informed integrator"};
  app.require_subcommand(1);

  Common c;
  double threshold = 0.05;
  auto* gen = app.add_subcommand("gen-data", "generate reference trajectories");
  auto* trn = app.add_subcommand("train", "train one seed");
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* swp = app.add_subcommand("sweep", "run a seed sweep");
  auto* agg = app.add_subcommand("aggregate", "build report tables from sweep directories");
  auto* fit = app.add_subcommand("fit-symbolic", "STLSQ fit of a learned residual surface");
  auto* exp = app.add_subcommand("export-surface", "write surface CSV and pixmaps");
  auto* vgr = app.add_subcommand("verify-grads", "compare analytic and finite-difference gradients");
  auto* lst = app.add_subcommand("list-configs", "print the experiment registry");

  for (auto* cmd : {gen, trn, evl, swp, agg, fit, exp, vgr, lst}) add_common(cmd, c);
  for (auto* cmd : {trn, evl, vgr}) cmd->add_option("--data", c.data, "dataset file (default: generate)");
  for (auto* cmd : {evl, fit, exp}) cmd->add_option("--checkpoint", c.checkpoint, "checkpoint file");
  agg->add_option("runs", c.runs, "sweep directories (default: every sweep under the output root)");
  fit->add_option("--threshold", threshold, "STLSQ threshold")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*gen) return cmd_gen_data(c);
    if (*trn) return cmd_train(c);
    if (*evl) return cmd_eval(c);
    if (*swp) return cmd_sweep(c);
    if (*agg) return cmd_aggregate(c);
    if (*fit) return cmd_fit_symbolic(c, threshold);
    if (*exp) return cmd_export_surface(c);
    if (*vgr) return cmd_verify_grads(c);
    if (*lst) return cmd_list_configs();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
