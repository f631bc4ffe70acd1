#include "rlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace rlab {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

// Like format_double, but with fixed spellings for the non-finite values.
std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return format_double(v);
}

template <class T>
T parse_unsigned(std::string_view key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty())
    throw std::invalid_argument("config: '" + std::string(key) + "' expects a nonnegative integer, got '" + value +
                                "'");
  return out;
}

int parse_int(std::string_view key, const std::string& value) {
  int out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty())
    throw std::invalid_argument("config: '" + std::string(key) + "' expects an integer, got '" + value + "'");
  return out;
}

double parse_real(std::string_view key, const std::string& value) {
  try {
    return parse_double(value);
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("config: '" + std::string(key) + "' expects a number, got '" + value + "'");
  }
}

bool parse_bool(std::string_view key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw std::invalid_argument("config: '" + std::string(key) + "' expects a boolean, got '" + value + "'");
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define RLAB_SIZE_FIELD(f)                                                            \
  Field {                                                                             \
#f, [](const ExperimentConfig& c) { return std::to_string(c.f); },                \
        [](ExperimentConfig& c, const std::string& s) {                               \
          c.f = parse_unsigned<decltype(c.f)>(#f, s);                                 \
        }                                                                             \
  }
#define RLAB_REAL_FIELD(f)                                                                        \
  Field {                                                                                         \
#f, [](const ExperimentConfig& c) { return fmt(c.f); },                                       \
        [](ExperimentConfig& c, const std::string& s) { c.f = parse_real(#f, s); }                \
  }
#define RLAB_BOOL_FIELD(f)                                                                        \
  Field {                                                                                         \
#f, [](const ExperimentConfig& c) { return std::string(c.f ? "true" : "false"); },            \
        [](ExperimentConfig& c, const std::string& s) { c.f = parse_bool(#f, s); }                \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"name", [](const ExperimentConfig& c) { return c.name; },
       [](ExperimentConfig& c, const std::string& s) { c.name = s; }},
      {"label", [](const ExperimentConfig& c) { return c.label; },
       [](ExperimentConfig& c, const std::string& s) { c.label = s; }},
      RLAB_BOOL_FIELD(reconstructed),
      {"system", [](const ExperimentConfig& c) { return std::string(to_string(c.system)); },
       [](ExperimentConfig& c, const std::string& s) { c.system = parse_oscillator(s); }},
      {"arch", [](const ExperimentConfig& c) { return c.arch; },
       [](ExperimentConfig& c, const std::string& s) { c.arch = s; }},
      {"grid_size", [](const ExperimentConfig& c) { return std::to_string(c.grid_size); },
       [](ExperimentConfig& c, const std::string& s) { c.grid_size = parse_int("grid_size", s); }},
      {"spline_order", [](const ExperimentConfig& c) { return std::to_string(c.spline_order); },
       [](ExperimentConfig& c, const std::string& s) { c.spline_order = parse_int("spline_order", s); }},
      RLAB_REAL_FIELD(l1_weight),
      RLAB_BOOL_FIELD(base_blend),
      {"paradigm", [](const ExperimentConfig& c) { return std::string(to_string(c.paradigm)); },
       [](ExperimentConfig& c, const std::string& s) { c.paradigm = parse_paradigm(s); }},
      RLAB_SIZE_FIELD(horizon),
      RLAB_SIZE_FIELD(steps),
      RLAB_REAL_FIELD(learning_rate),
      RLAB_SIZE_FIELD(batch),
      RLAB_REAL_FIELD(beta1),
      RLAB_REAL_FIELD(beta2),
      RLAB_REAL_FIELD(adam_eps),
      RLAB_REAL_FIELD(grad_clip),
      RLAB_SIZE_FIELD(checkpoint_every),
      {"integrator", [](const ExperimentConfig& c) { return std::string(to_string(c.integrator)); },
       [](ExperimentConfig& c, const std::string& s) { c.integrator = parse_integrator(s); }},
      RLAB_SIZE_FIELD(n_seeds),
      RLAB_SIZE_FIELD(seed_base),
      RLAB_SIZE_FIELD(data_seed),
      RLAB_BOOL_FIELD(per_seed_data),
      RLAB_SIZE_FIELD(n_train),
      RLAB_SIZE_FIELD(n_test),
      RLAB_REAL_FIELD(dt),
      RLAB_SIZE_FIELD(n_steps),
      RLAB_REAL_FIELD(noise_std),
      RLAB_REAL_FIELD(stlsq_threshold),
      RLAB_SIZE_FIELD(stlsq_max_iters),
      RLAB_SIZE_FIELD(bootstrap_resamples),
      {"output_dir", [](const ExperimentConfig& c) { return c.output_dir; },
       [](ExperimentConfig& c, const std::string& s) { c.output_dir = s; }},
  };
  return table;
}

#undef RLAB_SIZE_FIELD
#undef RLAB_REAL_FIELD
#undef RLAB_BOOL_FIELD

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_file_atomically(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    os << content;
    if (!os) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename '" + tmp.string() + "': " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------- config

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  const bool kan = c.arch.rfind("kan", 0) == 0;
  if (c.learning_rate == 0.0) c.learning_rate = kan ? 3e-3 : 1e-3;
  if (c.batch == 0) c.batch = c.paradigm == Paradigm::Bptt ? 16 : 256;
  return c;
}

void ExperimentConfig::validate() const {
  if (n_seeds < 1) throw std::invalid_argument("config: n_seeds must be >= 1");
  if (arch != "oracle") find_arch(arch);
  param_count(build_arch(*this));
  make_train_config(*this, 0).validate();
  if (!(dt > 0.0)) throw std::invalid_argument("config: dt must be positive");
  if (n_steps < 2) throw std::invalid_argument("config: n_steps must be >= 2");
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("config: need train and test trajectories");
  if (paradigm == Paradigm::Bptt && horizon > n_steps)
    throw std::invalid_argument("config: horizon longer than the trajectories");
  if (!(stlsq_threshold >= 0.0)) throw std::invalid_argument("config: stlsq_threshold must be nonnegative");
  if (bootstrap_resamples < 1) throw std::invalid_argument("config: bootstrap_resamples must be >= 1");
}

Arch build_arch(const ExperimentConfig& cfg) {
  if (cfg.arch == "oracle") return OracleArch{cfg.system, kStateScale};
  Arch arch = find_arch(cfg.arch).arch;
  if (auto* k = std::get_if<KanArch>(&arch)) {
    k->spline.grid_size = cfg.grid_size;
    k->spline.order = cfg.spline_order;
    k->l1_weight = cfg.l1_weight;
    k->base_blend = cfg.base_blend;
    k->validate();
  }
  return arch;
}

TrainConfig make_train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  const ExperimentConfig c = cfg.resolved();
  TrainConfig t;
  t.paradigm = c.paradigm;
  t.horizon = c.horizon;
  t.steps = c.steps;
  t.learning_rate = c.learning_rate;
  t.batch = c.batch;
  t.adam = {c.beta1, c.beta2, c.adam_eps};
  t.grad_clip = c.grad_clip;
  t.seed = seed;
  t.checkpoint_every = c.checkpoint_every;
  return t;
}

DataConfig make_data_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  DataConfig d;
  d.n_train = cfg.n_train;
  d.n_test = cfg.n_test;
  d.dt = cfg.dt;
  d.n_steps = cfg.n_steps;
  d.seed = seed;
  d.noise_std = cfg.noise_std;
  return d;
}

std::map<std::string, std::string> to_key_values(const ExperimentConfig& cfg) {
  const ExperimentConfig c = cfg.resolved();
  std::map<std::string, std::string> kv;
  for (const auto& f : fields()) kv[f.key] = f.get(c);
  return kv;
}

ExperimentConfig parse_config_text(std::string_view text, const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  std::set<std::string> seen;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return key == f.key; });
    if (it == fields().end())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    it->set(cfg, value);
  }
  return cfg;
}

ExperimentConfig load_config_file(const fs::path& path) {
  ExperimentConfig cfg = parse_config_text(read_file(path));
  cfg.validate();
  return cfg;
}

std::string fingerprint(const ExperimentConfig& cfg) {
  auto kv = to_key_values(cfg);
  kv.erase("output_dir");
  kv.erase("n_seeds");
  kv.erase("seed_base");
  std::string canonical;
  for (const auto& [k, v] : kv) canonical += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical)));
  return buf;
}

const std::vector<ExperimentConfig>& builtin_configs() {
  static const std::vector<ExperimentConfig> registry = [] {
    std::vector<ExperimentConfig> out;
    auto kan_config = [](std::string name, std::string label) {
      ExperimentConfig c;
      c.name = std::move(name);
      c.label = std::move(label);
      c.arch = "kan-very-small";
      return c;
    };

    out.push_back(kan_config("A", "Config A (Baseline)"));
    auto b = kan_config("B", "Config B (Spline-Forced)");
    b.base_blend = false;
    b.reconstructed = true;
    out.push_back(b);
    auto c = kan_config("C", "Config C (Sparse-Low)");
    c.l1_weight = 1e-4;
    c.reconstructed = true;
    out.push_back(c);
    auto d = kan_config("D", "Config D (Sparse-High)");
    d.l1_weight = 1e-2;
    d.reconstructed = true;
    out.push_back(d);
    auto e = kan_config("E", "Config E (Aggressive-Grid)");
    e.grid_size = 8;
    e.reconstructed = true;
    out.push_back(e);
    auto f = kan_config("F", "Config F (Coarse-Grid)");
    f.grid_size = 3;
    out.push_back(f);
    auto g = kan_config("G", "Config G (Fine-Grid)");
    g.grid_size = 20;
    g.reconstructed = true;
    out.push_back(g);

    for (const auto& entry : arch_registry()) {
      ExperimentConfig s;
      s.name = entry.name;
      s.label = entry.label;
      s.arch = entry.name;
      out.push_back(s);
    }

    ExperimentConfig oracle;
    oracle.name = "oracle";
    oracle.label = "Oracle (analytical residual)";
    oracle.arch = "oracle";
    oracle.steps = 1;
    oracle.n_seeds = 3;
    out.push_back(oracle);
    return out;
  }();
  return registry;
}

ExperimentConfig resolve_config(std::string_view name_or_path) {
  for (const auto& c : builtin_configs())
    if (c.name == name_or_path) return c;
  const fs::path path{std::string(name_or_path)};
  if (fs::exists(path)) return load_config_file(path);
  throw std::invalid_argument("'" + std::string(name_or_path) + "' is neither a registry config nor a file");
}

fs::path default_output_root() {
  if (const char* env = std::getenv("RESIDUAL_LAB_OUT"); env != nullptr && *env != '\0') return env;
  return "runs";
}

std::string sweep_dir_name(const ExperimentConfig& cfg) {
  return cfg.name + "_" + std::string(to_string(cfg.system)) + "_" + std::string(to_string(cfg.paradigm));
}

// ---------------------------------------------------------------- rows

std::string_view to_string(SeedStatus status) {
  switch (status) {
    case SeedStatus::Converged:
      return "Converged";
    case SeedStatus::MaxSteps:
      return "MaxSteps";
    case SeedStatus::Unstable:
      return "Unstable";
    case SeedStatus::UnstableNoCheckpoint:
      return "Unstable-NoCheckpoint";
  }
  return "?";
}

SeedStatus parse_seed_status(std::string_view text) {
  for (auto s : {SeedStatus::Converged, SeedStatus::MaxSteps, SeedStatus::Unstable, SeedStatus::UnstableNoCheckpoint})
    if (to_string(s) == text) return s;
  throw std::invalid_argument("unknown seed status '" + std::string(text) + "'");
}

std::string format_metric_row(const MetricRow& r) {
  std::ostringstream os;
  os << to_string(r.system) << ',' << r.arch << ',' << r.config << ',' << to_string(r.paradigm) << ',' << r.seed
     << ',' << fmt(r.discovery_r2) << ',' << fmt(r.test_mse) << ',' << fmt(r.fit_r2) << ',' << r.fit_terms << ','
     << to_string(r.status);
  return os.str();
}

MetricRow parse_metric_row(std::string_view line) {
  std::vector<std::string> f;
  std::stringstream ss{std::string(line)};
  std::string tok;
  while (std::getline(ss, tok, ',')) f.push_back(tok);
  if (f.size() != 10) throw std::invalid_argument("metrics: malformed row '" + std::string(line) + "'");
  MetricRow r;
  r.system = parse_oscillator(f[0]);
  r.arch = f[1];
  r.config = f[2];
  r.paradigm = parse_paradigm(f[3]);
  r.seed = parse_unsigned<std::uint64_t>("seed", f[4]);
  r.discovery_r2 = parse_double(f[5]);
  r.test_mse = parse_double(f[6]);
  r.fit_r2 = parse_double(f[7]);
  r.fit_terms = f[8];
  r.status = parse_seed_status(f[9]);
  return r;
}

// ---------------------------------------------------------------- sweep

MetricRow run_seed(const ExperimentConfig& config, const Dataset& data, std::uint64_t seed,
                   ResidualBranch* final_branch) {
  const ExperimentConfig cfg = config.resolved();
  const OscillatorSpec spec(cfg.system);
  HybridSystem h{spec, ResidualBranch::initialized(build_arch(cfg), seed), data.dt, cfg.integrator, data.scale};
  const TrainReport report = train(h, data, make_train_config(cfg, seed));

  MetricRow row;
  row.system = cfg.system;
  row.arch = cfg.arch;
  row.config = cfg.name;
  row.paradigm = cfg.paradigm;
  row.seed = seed;

  const std::vector<double>* eval_params = &report.params;
  switch (report.status) {
    case TrainStatus::Converged:
      row.status = SeedStatus::Converged;
      break;
    case TrainStatus::MaxSteps:
      row.status = SeedStatus::MaxSteps;
      break;
    case TrainStatus::Unstable:
      row.status = report.checkpoint ? SeedStatus::Unstable : SeedStatus::UnstableNoCheckpoint;
      eval_params = report.checkpoint ? &*report.checkpoint : nullptr;
      break;
  }

  if (eval_params == nullptr) {
    row.discovery_r2 = kFailedR2;
    row.test_mse = INFINITY;
    row.fit_r2 = NAN;
    row.fit_terms = "none";
    return row;
  }

  h.branch.set_params(*eval_params);
  if (final_branch != nullptr) *final_branch = h.branch;
  const SurfaceSample surface = sample_surface(h.branch, spec, GridSpec{}, data.scale);
  const double r2 = discovery_r2(surface);
  row.discovery_r2 = std::isfinite(r2) ? r2 : kFailedR2;
  row.test_mse = test_mse(h, data.test);
  if (surface.finite()) {
    const SymbolicFit fit =
        stlsq_fit(surface, CandidateDictionary::monomials(3), cfg.stlsq_threshold, cfg.stlsq_max_iters);
    row.fit_r2 = fit.r2;
    row.fit_terms = fit.describe();
  } else {
    row.fit_r2 = NAN;
    row.fit_terms = "none";
  }
  return row;
}

namespace {

MetricSummary summarize(const std::vector<double>& values, std::size_t resamples) {
  MetricSummary s;
  s.count = values.size();
  if (values.empty()) {
    s.ci = {NAN, NAN, NAN};
    return s;
  }
  s.ci = bootstrap_ci(values, resamples, 0.95, 0);
  return s;
}

void finalize(SweepResult& result) {
  std::vector<double> r2, mse, fit;
  std::size_t unstable = 0, no_ckpt = 0, cubic = 0;
  for (const auto& row : result.rows) {
    r2.push_back(row.discovery_r2);
    if (std::isfinite(row.test_mse)) mse.push_back(row.test_mse);
    if (std::isfinite(row.fit_r2)) fit.push_back(row.fit_r2);
    if (row.status == SeedStatus::Unstable || row.status == SeedStatus::UnstableNoCheckpoint) ++unstable;
    if (row.status == SeedStatus::UnstableNoCheckpoint) ++no_ckpt;
    // The first listed term with the largest |coefficient|.
    double best = 0.0;
    std::string top;
    std::stringstream ss(row.fit_terms);
    std::string item;
    while (std::getline(ss, item, ';')) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos) continue;
      const double c = std::abs(parse_double(item.substr(colon + 1)));
      if (c > best) {
        best = c;
        top = item.substr(0, colon);
      }
    }
    if (top == "x^3") ++cubic;
  }
  const std::size_t resamples = result.config.resolved().bootstrap_resamples;
  result.discovery_r2 = summarize(r2, resamples);
  result.test_mse = summarize(mse, resamples);
  result.fit_r2 = summarize(fit, resamples);
  const auto n = static_cast<double>(result.rows.size());
  result.unstable_fraction = static_cast<double>(unstable) / n;
  result.no_checkpoint_fraction = static_cast<double>(no_ckpt) / n;
  result.cubic_top_fraction = static_cast<double>(cubic) / n;
}

nlohmann::json summary_json(const MetricSummary& s) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"mean", num(s.ci.mean)}, {"ci_lo", num(s.ci.lo)}, {"ci_hi", num(s.ci.hi)}, {"count", s.count}};
}

MetricSummary summary_from_json(const nlohmann::json& j) {
  auto num = [](const nlohmann::json& v) { return v.is_null() ? NAN : v.get<double>(); };
  MetricSummary s;
  s.ci = {num(j.at("mean")), num(j.at("ci_lo")), num(j.at("ci_hi"))};
  s.count = j.at("count").get<std::size_t>();
  return s;
}

std::string sweep_json(const SweepResult& r) {
  auto kv = to_key_values(r.config);
  kv.erase("output_dir");
  nlohmann::json j;
  j["fingerprint"] = r.fingerprint;
  j["config"] = kv;
  j["family"] = std::string(family_name(build_arch(r.config)));
  j["params"] = r.params;
  j["rows"] = r.rows.size();
  j["discovery_r2"] = summary_json(r.discovery_r2);
  j["test_mse"] = summary_json(r.test_mse);
  j["fit_r2"] = summary_json(r.fit_r2);
  j["unstable_fraction"] = r.unstable_fraction;
  j["no_checkpoint_fraction"] = r.no_checkpoint_fraction;
  j["cubic_top_fraction"] = r.cubic_top_fraction;
  return j.dump(2) + "\n";
}

}  // namespace

SweepResult run_sweep(const ExperimentConfig& config, const fs::path& dir, const SweepOptions& opts) {
  const ExperimentConfig cfg = config.resolved();
  cfg.validate();
  const std::string fp = fingerprint(cfg);
  const fs::path seed_dir = dir / "seeds";
  std::error_code ec;
  fs::create_directories(seed_dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + seed_dir.string() + "': " + ec.message());

  SweepResult result;
  result.config = cfg;
  result.fingerprint = fp;
  result.params = param_count(build_arch(cfg));
  result.rows.resize(cfg.n_seeds);

  const std::string tag = "# fingerprint " + fp;
  auto row_path = [&](std::uint64_t seed) { return seed_dir / ("seed_" + std::to_string(seed) + ".csv"); };
  auto ckpt_path = [&](std::uint64_t seed) { return seed_dir / ("seed_" + std::to_string(seed) + ".ckpt"); };

  // Resume committed rows.
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cfg.n_seeds; ++i) {
    const std::uint64_t seed = cfg.seed_base + i;
    const fs::path p = row_path(seed);
    bool reused = false;
    if (fs::exists(p)) {
      std::istringstream is(read_file(p));
      std::string first, second;
      if (std::getline(is, first) && first == tag && std::getline(is, second)) {
        result.rows[i] = parse_metric_row(second);
        reused = true;
      }
    }
    if (!reused) todo.push_back(i);
  }
  result.computed_seeds = todo.size();

  if (!todo.empty()) {
    const OscillatorSpec spec(cfg.system);
    const Dataset shared = cfg.per_seed_data ? Dataset{} : generate_dataset(spec, make_data_config(cfg, cfg.data_seed));

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
      while (true) {
        const std::size_t k = next.fetch_add(1);
        if (k >= todo.size()) return;
        const std::size_t i = todo[k];
        const std::uint64_t seed = cfg.seed_base + i;
        try {
          const Dataset data =
              cfg.per_seed_data ? generate_dataset(spec, make_data_config(cfg, cfg.data_seed + seed)) : Dataset{};
          ResidualBranch evaluated = ResidualBranch::zeros(build_arch(cfg));
          bool have_branch = false;
          ResidualBranch* sink = &evaluated;
          MetricRow row = run_seed(cfg, cfg.per_seed_data ? data : shared, seed, sink);
          have_branch = row.status != SeedStatus::UnstableNoCheckpoint;
          if (have_branch) save_checkpoint(ckpt_path(seed).string(), evaluated, seed);
          write_file_atomically(row_path(seed), tag + "\n" + format_metric_row(row) + "\n");
          result.rows[i] = std::move(row);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next.store(todo.size());
          return;
        }
      }
    };

    const std::size_t n_workers = std::max<std::size_t>(1, std::min(opts.workers, todo.size()));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  finalize(result);

  std::string metrics = std::string(kMetricsHeader) + "\n";
  for (const auto& row : result.rows) metrics += format_metric_row(row) + "\n";
  write_file_atomically(dir / "metrics.csv", metrics);
  write_file_atomically(dir / "sweep.json", sweep_json(result));
  return result;
}

SweepResult load_sweep(const fs::path& dir) {
  const auto j = nlohmann::json::parse(read_file(dir / "sweep.json"));
  std::string text;
  for (const auto& [k, v] : j.at("config").items()) text += k + " = " + v.get<std::string>() + "\n";

  SweepResult r;
  r.config = parse_config_text(text);
  r.config.output_dir = dir.string();
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.params = j.at("params").get<std::size_t>();
  r.discovery_r2 = summary_from_json(j.at("discovery_r2"));
  r.test_mse = summary_from_json(j.at("test_mse"));
  r.fit_r2 = summary_from_json(j.at("fit_r2"));
  r.unstable_fraction = j.at("unstable_fraction").get<double>();
  r.no_checkpoint_fraction = j.at("no_checkpoint_fraction").get<double>();
  r.cubic_top_fraction = j.at("cubic_top_fraction").get<double>();

  std::istringstream is(read_file(dir / "metrics.csv"));
  std::string line;
  std::getline(is, line);
  if (line != kMetricsHeader) throw std::invalid_argument("metrics: unexpected header in '" + dir.string() + "'");
  while (std::getline(is, line))
    if (!line.empty()) r.rows.push_back(parse_metric_row(line));
  return r;
}

// ---------------------------------------------------------------- tables

std::string format_cell(const ConfidenceInterval& ci) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", ci.mean, ci.half_width());
  return buf;
}

namespace {

std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

std::string pad(const std::string& s, std::size_t width, bool right) {
  const std::size_t w = display_width(s);
  const std::string fill(width > w ? width - w : 0, ' ');
  return right ? fill + s : s + fill;
}

std::size_t registry_rank(const std::string& name) {
  const auto& reg = builtin_configs();
  for (std::size_t i = 0; i < reg.size(); ++i)
    if (reg[i].name == name) return i;
  return reg.size();
}

}  // namespace

AggregateOutput aggregate_tables(const std::vector<SweepResult>& results) {
  if (results.empty()) throw std::invalid_argument("aggregate: no sweep results");

  struct RowKey {
    std::size_t rank;
    std::string name;
    bool operator<(const RowKey& o) const { return std::tie(rank, name) < std::tie(o.rank, o.name); }
  };
  struct RowInfo {
    std::string family, label, name;
    std::size_t params = 0;
    bool reconstructed = false;
  };
  std::map<RowKey, RowInfo> rows;
  std::map<std::tuple<std::string, OscillatorKind, Paradigm>, const SweepResult*> cells;

  for (const auto& r : results) {
    const auto key = std::make_tuple(r.config.name, r.config.system, r.config.paradigm);
    if (auto it = cells.find(key); it != cells.end()) {
      if (it->second->fingerprint != r.fingerprint)
        throw std::invalid_argument("aggregate: conflicting fingerprints for " + r.config.name + "/" +
                                    std::string(to_string(r.config.system)) + "/" +
                                    std::string(to_string(r.config.paradigm)));
      continue;
    }
    cells[key] = &r;
    RowInfo info{std::string(family_name(build_arch(r.config))), r.config.label, r.config.name, r.params,
                 r.config.reconstructed};
    rows.emplace(RowKey{registry_rank(r.config.name), r.config.name}, info);
  }

  const std::vector<std::pair<OscillatorKind, Paradigm>> columns = {
      {OscillatorKind::Duffing, Paradigm::TeacherForcing},
      {OscillatorKind::VanDerPol, Paradigm::TeacherForcing},
      {OscillatorKind::Duffing, Paradigm::Bptt},
      {OscillatorKind::VanDerPol, Paradigm::Bptt},
  };
  auto cell_text = [](const SweepResult& r) {
    return r.no_checkpoint_fraction > 0.5 ? std::string("(Unstable)") : format_cell(r.discovery_r2.ci);
  };

  std::ostringstream csv;
  csv << "family,config,label,params,system,paradigm,n_seeds,mean,ci_lo,ci_hi,half_width,cell,unstable_fraction,"
         "no_checkpoint_fraction,cubic_top_fraction,reconstructed,fingerprint\n";
  std::vector<std::vector<std::string>> table;
  table.push_back({"Arch.", "Config.", "Params", "Duffing R2 (TF)", "VdP R2 (TF)", "Duffing R2 (BPTT)",
                   "VdP R2 (BPTT)"});
  std::vector<std::string> notes;
  for (const auto& [key, info] : rows) {
    std::vector<std::string> line{info.family, info.label + (info.reconstructed ? " *" : ""),
                                  std::to_string(info.params)};
    for (const auto& [system, paradigm] : columns) {
      const auto it = cells.find(std::make_tuple(info.name, system, paradigm));
      if (it == cells.end()) {
        line.push_back("-");
        continue;
      }
      const SweepResult& r = *it->second;
      line.push_back(cell_text(r));
      const auto& ci = r.discovery_r2.ci;
      csv << info.family << ',' << info.name << ',' << info.label << ',' << info.params << ',' << to_string(system)
          << ',' << to_string(paradigm) << ',' << r.rows.size() << ',' << fmt(ci.mean) << ',' << fmt(ci.lo) << ','
          << fmt(ci.hi) << ',' << fmt(ci.half_width()) << ',' << cell_text(r) << ',' << fmt(r.unstable_fraction)
          << ',' << fmt(r.no_checkpoint_fraction) << ',' << fmt(r.cubic_top_fraction) << ','
          << (info.reconstructed ? "true" : "false") << ',' << r.fingerprint << '\n';
      if (system == OscillatorKind::Duffing) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s %s (%s): x^3 is the largest fitted term in %.0f%% of seeds",
                      info.family.c_str(), info.label.c_str(), std::string(to_string(paradigm)).c_str(),
                      100.0 * r.cubic_top_fraction);
        notes.emplace_back(buf);
      }
    }
    table.push_back(std::move(line));
  }

  std::vector<std::size_t> widths(table.front().size(), 0);
  for (const auto& line : table)
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], display_width(line[c]));

  std::ostringstream text;
  text << "Discovery R2, mean ± 95% bootstrap CI half-width\n\n";
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t c = 0; c < table[r].size(); ++c) {
      if (c) text << "  ";
      text << pad(table[r][c], widths[c], c >= 2);
    }
    text << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w;
      text << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
    }
  }
  text << "\n* reconstructed hyperparameters\n";
  text << "(Unstable): more than half of the seeds ended without a finite checkpoint\n";
  if (!notes.empty()) {
    text << '\n';
    for (const auto& n : notes) text << n << '\n';
  }
  return {csv.str(), text.str()};
}

void write_aggregate(const AggregateOutput& out, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());
  write_file_atomically(dir / "table.csv", out.csv);
  write_file_atomically(dir / "table.txt", out.text);
}

}  // namespace rlab
