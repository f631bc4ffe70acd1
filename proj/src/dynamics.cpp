#include "rlab/dynamics.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "rlab/rng.hpp"

namespace rlab {

std::string_view to_string(OscillatorKind kind) {
  switch (kind) {
    case OscillatorKind::Duffing:
      return "duffing";
    case OscillatorKind::VanDerPol:
      return "vdp";
  }
  return "unknown";
}

OscillatorKind parse_oscillator(std::string_view name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "duffing") return OscillatorKind::Duffing;
  if (lower == "vdp" || lower == "vanderpol" || lower == "van-der-pol" || lower == "van_der_pol")
    return OscillatorKind::VanDerPol;
  throw std::invalid_argument("unknown oscillator '" + std::string(name) + "'");
}

double OscillatorSpec::true_residual(double x, double v) const {
  switch (kind_) {
    case OscillatorKind::Duffing:
      return -0.3 * x * x * x;
    case OscillatorKind::VanDerPol:
      return (1.0 - x * x) * v;
  }
  return 0.0;
}

Partials OscillatorSpec::true_residual_partials(double x, double v) const {
  switch (kind_) {
    case OscillatorKind::Duffing:
      return {-0.9 * x * x, 0.0};
    case OscillatorKind::VanDerPol:
      return {-2.0 * x * v, 1.0 - x * x};
  }
  return {};
}

State full_rhs(const OscillatorSpec& spec, State s) {
  return {s.v, spec.known_accel(s) + spec.true_residual(s.x, s.v)};
}

Trajectory integrate(const OscillatorSpec& spec, State s0, double dt, std::size_t n_steps) {
  Trajectory traj;
  traj.dt = dt;
  traj.states.reserve(n_steps + 1);
  traj.states.push_back(s0);
  auto rhs = [&spec](State s) { return full_rhs(spec, s); };
  State s = s0;
  for (std::size_t i = 0; i < n_steps; ++i) {
    try {
      s = rk4_step(rhs, s, dt);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.what(), i);
    }
    traj.states.push_back(s);
  }
  return traj;
}

namespace {

bool inside_sanity_box(const Trajectory& traj) {
  return std::all_of(traj.states.begin(), traj.states.end(),
                     [](State s) { return s.finite() && s.max_abs() <= kSanityBound; });
}

Trajectory sample_trajectory(const OscillatorSpec& spec, const DataConfig& cfg, Rng& rng,
                             const std::vector<State>& taken) {
  for (int attempt = 0; attempt <= kResampleCap; ++attempt) {
    const State ic{rng.uniform(-cfg.ic_half_width, cfg.ic_half_width),
                   rng.uniform(-cfg.ic_half_width, cfg.ic_half_width)};
    if (std::find(taken.begin(), taken.end(), ic) != taken.end()) continue;
    try {
      Trajectory traj = integrate(spec, ic, cfg.dt, cfg.n_steps);
      if (inside_sanity_box(traj)) return traj;
    } catch (const DivergenceError&) {
    }
  }
  throw std::runtime_error("generate_dataset: resample cap exceeded; trajectories keep leaving the sanity box");
}

}  // namespace

Dataset generate_dataset(const OscillatorSpec& spec, const DataConfig& cfg) {
  if (cfg.n_steps < 2) throw std::invalid_argument("generate_dataset: n_steps must be >= 2");
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("generate_dataset: dt must be positive");
  if (cfg.n_train == 0) throw std::invalid_argument("generate_dataset: need at least one training IC");

  Dataset data;
  data.system = spec.kind();
  data.dt = cfg.dt;
  data.scale = kStateScale;

  Rng rng(cfg.seed, Stream::Data);
  std::vector<State> ics;
  auto draw = [&](std::vector<Trajectory>& split, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      Trajectory traj = sample_trajectory(spec, cfg, rng, ics);
      ics.push_back(traj.states.front());
      split.push_back(std::move(traj));
    }
  };
  draw(data.train, cfg.n_train);
  draw(data.test, cfg.n_test);

  if (cfg.noise_std > 0.0) {
    Rng noise(cfg.seed ^ 0x6E6F697365ULL, Stream::Data);
    for (auto* split : {&data.train, &data.test})
      for (auto& traj : *split)
        for (auto& s : traj.states) {
          s.x += noise.normal(0.0, cfg.noise_std);
          s.v += noise.normal(0.0, cfg.noise_std);
        }
  }
  return data;
}

std::string format_double(double value) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", value);
  return std::string(buf, static_cast<std::size_t>(n));
}

double parse_double(std::string_view token) {
  while (!token.empty() && std::isspace(static_cast<unsigned char>(token.front()))) token.remove_prefix(1);
  while (!token.empty() && std::isspace(static_cast<unsigned char>(token.back()))) token.remove_suffix(1);
  if (token == "inf" || token == "+inf") return INFINITY;
  if (token == "-inf") return -INFINITY;
  if (token == "nan") return NAN;
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || token.empty())
    throw std::invalid_argument("not a number: '" + std::string(token) + "'");
  return value;
}

void write_dataset(std::ostream& os, const Dataset& data) {
  os << to_string(data.system) << ',' << format_double(data.dt) << ',' << format_double(data.scale) << ','
     << data.train.size() << ',' << data.test.size() << '\n';
  auto emit = [&](std::string_view split, const std::vector<Trajectory>& trajs) {
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      os << "#traj " << split << ' ' << i << '\n';
      const auto& traj = trajs[i];
      for (std::size_t j = 0; j < traj.states.size(); ++j) {
        os << format_double(traj.time(j)) << ',' << format_double(traj.states[j].x) << ','
           << format_double(traj.states[j].v) << '\n';
      }
    }
  };
  emit("train", data.train);
  emit("test", data.test);
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::size_t parse_count(std::string_view token) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size() || token.empty())
    throw std::invalid_argument("not a count: '" + std::string(token) + "'");
  return value;
}

}  // namespace

Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("dataset: empty input");
  const auto header = split_commas(line);
  if (header.size() != 5) throw std::invalid_argument("dataset: malformed header '" + line + "'");

  Dataset data;
  data.system = parse_oscillator(header[0]);
  data.dt = parse_double(header[1]);
  data.scale = parse_double(header[2]);
  const std::size_t n_train = parse_count(header[3]);
  const std::size_t n_test = parse_count(header[4]);
  if (!(data.dt > 0.0) || !(data.scale > 0.0)) throw std::invalid_argument("dataset: dt and scale must be positive");

  Trajectory* current = nullptr;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("#traj ", 0) == 0) {
      std::istringstream tag(line.substr(6));
      std::string split;
      std::size_t index = 0;
      if (!(tag >> split >> index)) throw std::invalid_argument("dataset: malformed tag '" + line + "'");
      auto& target = split == "train" ? data.train : split == "test" ? data.test
                                                                     : throw std::invalid_argument("dataset: unknown split '" + split + "'");
      if (index != target.size()) throw std::invalid_argument("dataset: trajectory index out of order");
      target.push_back(Trajectory{data.dt, {}});
      current = &target.back();
      continue;
    }
    if (current == nullptr) throw std::invalid_argument("dataset: row before first #traj tag");
    const auto fields = split_commas(line);
    if (fields.size() != 3) throw std::invalid_argument("dataset: malformed row '" + line + "'");
    current->states.push_back({parse_double(fields[1]), parse_double(fields[2])});
  }
  if (data.train.size() != n_train || data.test.size() != n_test)
    throw std::invalid_argument("dataset: trajectory counts disagree with header");
  for (auto* split : {&data.train, &data.test})
    for (const auto& traj : *split)
      if (traj.states.size() < 2) throw std::invalid_argument("dataset: trajectory shorter than 2 states");
  return data;
}

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_dataset(os, data);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_dataset(is);
}

}  // namespace rlab
