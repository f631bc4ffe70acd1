#include "rlab/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "rlab/rng.hpp"

namespace rlab {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void validate_widths(const std::vector<int>& widths, const char* who) {
  if (widths.size() < 2) throw std::invalid_argument(std::string(who) + ": need at least two layer widths");
  if (widths.front() != 2) throw std::invalid_argument(std::string(who) + ": input width must be 2");
  if (widths.back() != 1) throw std::invalid_argument(std::string(who) + ": output width must be 1");
  for (int w : widths)
    if (w < 1) throw std::invalid_argument(std::string(who) + ": widths must be positive");
}

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

std::size_t kan_layer_params(const KanArch& arch, std::size_t layer) {
  return static_cast<std::size_t>(arch.widths[layer]) * static_cast<std::size_t>(arch.widths[layer + 1]) *
         static_cast<std::size_t>(arch.params_per_edge());
}

std::size_t mlp_layer_params(const MlpArch& arch, std::size_t layer) {
  return static_cast<std::size_t>(arch.widths[layer] + 1) * static_cast<std::size_t>(arch.widths[layer + 1]);
}

std::size_t total_width(const std::vector<int>& widths) {
  std::size_t n = 0;
  for (int w : widths) n += static_cast<std::size_t>(w);
  return n;
}

// ---------------------------------------------------------------- KAN

double kan_forward(const KanArch& arch, std::span<const double> p, double xn, double vn, BranchCache& c) {
  const std::size_t layers = arch.widths.size() - 1;
  const std::size_t nodes_in = total_width(arch.widths) - 1;  // every layer input, output excluded
  c.acts.assign(total_width(arch.widths), 0.0);
  c.windows.resize(nodes_in);
  c.base.resize(nodes_in);
  c.dbase.resize(nodes_in);
  c.in_domain.resize(nodes_in);
  c.acts[0] = xn;
  c.acts[1] = vn;

  const int nb = arch.spline.num_basis();
  const std::size_t per_edge = static_cast<std::size_t>(arch.params_per_edge());
  std::size_t in_off = 0;
  std::size_t p_off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto n_in = static_cast<std::size_t>(arch.widths[l]);
    const auto n_out = static_cast<std::size_t>(arch.widths[l + 1]);
    const SplineSpec spec = arch.layer_spline(l);
    const std::size_t out_off = in_off + n_in;
    for (std::size_t i = 0; i < n_in; ++i) {
      const double u = c.acts[in_off + i];
      const double s = sigmoid(u);
      c.base[in_off + i] = u * s;
      c.dbase[in_off + i] = s * (1.0 + u * (1.0 - s));
      c.in_domain[in_off + i] = spec.domain.contains(u) ? 1 : 0;
      c.windows[in_off + i] = basis_window(spec.domain.clamp(u), spec);
    }
    for (std::size_t i = 0; i < n_in; ++i) {
      const BasisWindow& w = c.windows[in_off + i];
      const double base = c.base[in_off + i];
      for (std::size_t j = 0; j < n_out; ++j) {
        const double* e = p.data() + p_off + (i * n_out + j) * per_edge;
        double spline = 0.0;
        for (int r = 0; r < w.count; ++r) spline += e[w.first + r] * w.values[r];
        c.acts[out_off + j] += e[nb] * base + e[nb + 1] * spline;
      }
    }
    in_off = out_off;
    p_off += n_in * n_out * per_edge;
  }
  return c.acts.back();
}

Partials kan_backward(const KanArch& arch, std::span<const double> p, const BranchCache& c, double upstream,
                      std::span<double> grads) {
  const std::size_t layers = arch.widths.size() - 1;
  const int nb = arch.spline.num_basis();
  const std::size_t per_edge = static_cast<std::size_t>(arch.params_per_edge());

  std::vector<std::size_t> in_offsets(layers), p_offsets(layers);
  for (std::size_t l = 0, io = 0, po = 0; l < layers; ++l) {
    in_offsets[l] = io;
    p_offsets[l] = po;
    io += static_cast<std::size_t>(arch.widths[l]);
    po += kan_layer_params(arch, l);
  }

  std::vector<double> g(c.acts.size(), 0.0);
  g.back() = upstream;
  for (std::size_t l = layers; l-- > 0;) {
    const auto n_in = static_cast<std::size_t>(arch.widths[l]);
    const auto n_out = static_cast<std::size_t>(arch.widths[l + 1]);
    const std::size_t in_off = in_offsets[l];
    const std::size_t out_off = in_off + n_in;
    for (std::size_t i = 0; i < n_in; ++i) {
      const BasisWindow& w = c.windows[in_off + i];
      const double base = c.base[in_off + i];
      const double dbase = c.dbase[in_off + i];
      const bool inside = c.in_domain[in_off + i] != 0;
      double gi = 0.0;
      for (std::size_t j = 0; j < n_out; ++j) {
        const double go = g[out_off + j];
        const std::size_t eo = p_offsets[l] + (i * n_out + j) * per_edge;
        const double* e = p.data() + eo;
        double spline = 0.0;
        double dspline = 0.0;
        for (int r = 0; r < w.count; ++r) {
          spline += e[w.first + r] * w.values[r];
          dspline += e[w.first + r] * w.derivs[r];
          grads[eo + static_cast<std::size_t>(w.first + r)] += go * e[nb + 1] * w.values[r];
        }
        grads[eo + static_cast<std::size_t>(nb)] += go * base;
        grads[eo + static_cast<std::size_t>(nb) + 1] += go * spline;
        gi += go * (e[nb] * dbase + (inside ? e[nb + 1] * dspline : 0.0));
      }
      g[in_off + i] = gi;
    }
  }
  return {g[0], g[1]};
}

// ---------------------------------------------------------------- MLP

double mlp_forward(const MlpArch& arch, std::span<const double> p, double xn, double vn, BranchCache& c) {
  const std::size_t layers = arch.widths.size() - 1;
  c.acts.assign(total_width(arch.widths), 0.0);
  c.pre.assign(total_width(arch.widths) - 3, 0.0);  // hidden nodes only
  c.acts[0] = xn;
  c.acts[1] = vn;
  std::size_t in_off = 0;
  std::size_t pre_off = 0;
  std::size_t p_off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto n_in = static_cast<std::size_t>(arch.widths[l]);
    const auto n_out = static_cast<std::size_t>(arch.widths[l + 1]);
    const bool hidden = l + 1 < layers;
    const double* w = p.data() + p_off;
    const double* b = w + n_in * n_out;
    for (std::size_t j = 0; j < n_out; ++j) {
      double z = b[j];
      for (std::size_t i = 0; i < n_in; ++i) z += w[j * n_in + i] * c.acts[in_off + i];
      if (hidden) {
        c.pre[pre_off + j] = z;
        c.acts[in_off + n_in + j] = z > 0.0 ? z : 0.0;
      } else {
        c.acts[in_off + n_in + j] = z;
      }
    }
    if (hidden) pre_off += n_out;
    in_off += n_in;
    p_off += (n_in + 1) * n_out;
  }
  return c.acts.back();
}

Partials mlp_backward(const MlpArch& arch, std::span<const double> p, const BranchCache& c, double upstream,
                      std::span<double> grads) {
  const std::size_t layers = arch.widths.size() - 1;
  std::vector<std::size_t> in_offsets(layers), p_offsets(layers), pre_offsets(layers);
  for (std::size_t l = 0, io = 0, po = 0, pr = 0; l < layers; ++l) {
    in_offsets[l] = io;
    p_offsets[l] = po;
    pre_offsets[l] = pr;
    io += static_cast<std::size_t>(arch.widths[l]);
    po += mlp_layer_params(arch, l);
    if (l > 0) pr += static_cast<std::size_t>(arch.widths[l]);
  }

  // g holds dL/d(pre-activation) of the current layer's outputs.
  std::vector<double> g{upstream};
  for (std::size_t l = layers; l-- > 0;) {
    const auto n_in = static_cast<std::size_t>(arch.widths[l]);
    const auto n_out = static_cast<std::size_t>(arch.widths[l + 1]);
    const std::size_t in_off = in_offsets[l];
    const std::size_t wo = p_offsets[l];
    const std::size_t bo = wo + n_in * n_out;
    const double* w = p.data() + wo;
    std::vector<double> g_in(n_in, 0.0);
    for (std::size_t j = 0; j < n_out; ++j) {
      const double go = g[j];
      grads[bo + j] += go;
      for (std::size_t i = 0; i < n_in; ++i) {
        grads[wo + j * n_in + i] += go * c.acts[in_off + i];
        g_in[i] += w[j * n_in + i] * go;
      }
    }
    if (l > 0) {
      const std::size_t pre_off = pre_offsets[l];
      for (std::size_t i = 0; i < n_in; ++i)
        if (!(c.pre[pre_off + i] > 0.0)) g_in[i] = 0.0;
    }
    g = std::move(g_in);
  }
  return {g[0], g[1]};
}

}  // namespace

// ---------------------------------------------------------------- arch

SplineSpec KanArch::layer_spline(std::size_t layer) const {
  SplineSpec s = spline;
  if (!layer_domains.empty()) s.domain = layer_domains.at(layer);
  return s;
}

void KanArch::validate() const {
  validate_widths(widths, "KAN");
  spline.validate();
  if (!(l1_weight >= 0.0)) throw std::invalid_argument("KAN: l1_weight must be nonnegative");
  if (!layer_domains.empty()) {
    if (layer_domains.size() != widths.size() - 1)
      throw std::invalid_argument("KAN: layer_domains must have one entry per layer");
    for (std::size_t l = 0; l < layer_domains.size(); ++l) layer_spline(l).validate();
  }
}

void MlpArch::validate() const { validate_widths(widths, "MLP"); }

std::size_t param_count(const Arch& arch) {
  return std::visit(Overloaded{
                        [](const KanArch& a) {
                          a.validate();
                          std::size_t n = 0;
                          for (std::size_t l = 0; l + 1 < a.widths.size(); ++l) n += kan_layer_params(a, l);
                          return n;
                        },
                        [](const MlpArch& a) {
                          a.validate();
                          std::size_t n = 0;
                          for (std::size_t l = 0; l + 1 < a.widths.size(); ++l) n += mlp_layer_params(a, l);
                          return n;
                        },
                        [](const OracleArch&) { return std::size_t{0}; },
                    },
                    arch);
}

std::vector<double> init_params(const Arch& arch, std::uint64_t seed) {
  std::vector<double> p(param_count(arch), 0.0);
  Rng rng(seed, Stream::Init);
  std::visit(Overloaded{
                 [&](const KanArch& a) {
                   const int nb = a.spline.num_basis();
                   const double sd = 0.1 / nb;
                   const std::size_t per_edge = static_cast<std::size_t>(a.params_per_edge());
                   for (std::size_t e = 0; e < p.size() / per_edge; ++e) {
                     double* edge = p.data() + e * per_edge;
                     for (int c = 0; c < nb; ++c) edge[c] = rng.normal(0.0, sd);
                     edge[nb] = a.base_blend ? 1.0 : 0.0;
                     edge[nb + 1] = 1.0;
                   }
                 },
                 [&](const MlpArch& a) {
                   std::size_t off = 0;
                   for (std::size_t l = 0; l + 1 < a.widths.size(); ++l) {
                     const auto n_in = static_cast<std::size_t>(a.widths[l]);
                     const auto n_out = static_cast<std::size_t>(a.widths[l + 1]);
                     const double sd = std::sqrt(2.0 / static_cast<double>(n_in));
                     for (std::size_t k = 0; k < n_in * n_out; ++k) p[off + k] = rng.normal(0.0, sd);
                     off += (n_in + 1) * n_out;
                   }
                 },
                 [](const OracleArch&) {},
             },
             arch);
  return p;
}

// ---------------------------------------------------------------- branch

ResidualBranch::ResidualBranch(Arch arch, std::vector<double> params) : arch_(std::move(arch)) {
  set_params(std::move(params));
}

ResidualBranch ResidualBranch::initialized(const Arch& arch, std::uint64_t seed) {
  return ResidualBranch(arch, init_params(arch, seed));
}

ResidualBranch ResidualBranch::zeros(const Arch& arch) {
  return ResidualBranch(arch, std::vector<double>(param_count(arch), 0.0));
}

ResidualBranch ResidualBranch::oracle(OscillatorKind system, double scale) {
  return ResidualBranch(OracleArch{system, scale}, {});
}

BranchKind ResidualBranch::kind() const {
  return std::visit(Overloaded{
                        [](const KanArch&) { return BranchKind::Kan; },
                        [](const MlpArch&) { return BranchKind::Mlp; },
                        [](const OracleArch&) { return BranchKind::Oracle; },
                    },
                    arch_);
}

void ResidualBranch::set_params(std::vector<double> params) {
  if (params.size() != param_count(arch_))
    throw std::invalid_argument("ResidualBranch: expected " + std::to_string(param_count(arch_)) +
                                " parameters, got " + std::to_string(params.size()));
  for (double v : params)
    if (!std::isfinite(v)) throw std::invalid_argument("ResidualBranch: non-finite parameter");
  params_ = std::move(params);
}

double branch_forward(const ResidualBranch& b, double xn, double vn, BranchCache& cache) {
  cache.xn = xn;
  cache.vn = vn;
  return std::visit(Overloaded{
                        [&](const KanArch& a) { return kan_forward(a, b.params(), xn, vn, cache); },
                        [&](const MlpArch& a) { return mlp_forward(a, b.params(), xn, vn, cache); },
                        [&](const OracleArch& a) {
                          return OscillatorSpec(a.system).true_residual(xn * a.scale, vn * a.scale);
                        },
                    },
                    b.arch());
}

double branch_value(const ResidualBranch& b, double xn, double vn) {
  BranchCache cache;
  return branch_forward(b, xn, vn, cache);
}

Partials branch_backward(const ResidualBranch& b, const BranchCache& cache, double upstream,
                         std::span<double> grads) {
  if (grads.size() != b.size()) throw std::invalid_argument("branch_backward: gradient buffer size mismatch");
  return std::visit(Overloaded{
                        [&](const KanArch& a) { return kan_backward(a, b.params(), cache, upstream, grads); },
                        [&](const MlpArch& a) { return mlp_backward(a, b.params(), cache, upstream, grads); },
                        [&](const OracleArch& a) {
                          const Partials d = OscillatorSpec(a.system).true_residual_partials(cache.xn * a.scale,
                                                                                            cache.vn * a.scale);
                          return Partials{upstream * d.dx * a.scale, upstream * d.dv * a.scale};
                        },
                    },
                    b.arch());
}

std::vector<double> branch_gradients(const ResidualBranch& b, std::span<const BranchSample> batch) {
  if (batch.empty()) throw std::invalid_argument("branch_gradients: empty batch");
  std::vector<double> grads(b.size(), 0.0);
  BranchCache cache;
  for (const auto& s : batch) {
    if (!std::isfinite(s.upstream)) throw std::invalid_argument("branch_gradients: non-finite upstream");
    branch_forward(b, s.xn, s.vn, cache);
    branch_backward(b, cache, s.upstream, grads);
  }
  return grads;
}

Partials branch_input_jacobian(const ResidualBranch& b, double xn, double vn) {
  BranchCache cache;
  branch_forward(b, xn, vn, cache);
  std::vector<double> scratch(b.size(), 0.0);
  return branch_backward(b, cache, 1.0, scratch);
}

double residual_forward(const ResidualBranch& b, double scale, State s, BranchCache& cache) {
  if (const auto* o = b.oracle_arch()) {
    cache.xn = s.x;
    cache.vn = s.v;
    return OscillatorSpec(o->system).true_residual(s.x, s.v);
  }
  return branch_forward(b, s.x / scale, s.v / scale, cache);
}

Partials residual_backward(const ResidualBranch& b, double scale, const BranchCache& cache, double upstream,
                           std::span<double> grads) {
  if (const auto* o = b.oracle_arch()) {
    const Partials d = OscillatorSpec(o->system).true_residual_partials(cache.xn, cache.vn);
    return {upstream * d.dx, upstream * d.dv};
  }
  const Partials g = branch_backward(b, cache, upstream, grads);
  return {g.dx / scale, g.dv / scale};
}

double residual_value(const ResidualBranch& b, double scale, double x, double v) {
  BranchCache cache;
  return residual_forward(b, scale, {x, v}, cache);
}

ResidualBranch product_construction(const SplineSpec& spec) {
  spec.validate();
  if (spec.order < 2) throw std::invalid_argument("product_construction: spline order must be >= 2");

  KanArch arch;
  arch.widths = {2, 2, 1};
  arch.spline = spec;
  arch.spline.domain = {-1.0, 1.0};
  arch.base_blend = false;
  arch.layer_domains = {Interval{-1.0, 1.0}, Interval{-2.0, 2.0}};

  const std::size_t nb = static_cast<std::size_t>(arch.spline.num_basis());
  const std::size_t per_edge = nb + 2;
  std::vector<double> p(param_count(arch), 0.0);

  const auto linear = monomial_coefficients(arch.layer_spline(0), 1);
  const auto square = monomial_coefficients(arch.layer_spline(1), 2);
  auto set_edge = [&](std::size_t offset, const std::vector<double>& coef, double spline_scale) {
    std::copy(coef.begin(), coef.end(), p.begin() + static_cast<std::ptrdiff_t>(offset));
    p[offset + nb] = 0.0;
    p[offset + nb + 1] = spline_scale;
  };
  // Layer 0, edge (i -> j) at (i * 2 + j): a = x + v, b = x - v.
  set_edge(0 * per_edge, linear, 1.0);   // x -> a
  set_edge(1 * per_edge, linear, 1.0);   // x -> b
  set_edge(2 * per_edge, linear, 1.0);   // v -> a
  set_edge(3 * per_edge, linear, -1.0);  // v -> b
  // Layer 1: out = a^2/4 - b^2/4.
  const std::size_t l1 = 4 * per_edge;
  set_edge(l1, square, 0.25);
  set_edge(l1 + per_edge, square, -0.25);
  return ResidualBranch(arch, std::move(p));
}

double l1_penalty(const ResidualBranch& b) {
  const KanArch* a = b.kan();
  if (a == nullptr || a->l1_weight == 0.0) return 0.0;
  const auto nb = static_cast<std::size_t>(a->spline.num_basis());
  const auto per_edge = static_cast<std::size_t>(a->params_per_edge());
  const auto p = b.params();
  double sum = 0.0;
  for (std::size_t e = 0; e < p.size(); e += per_edge)
    for (std::size_t c = 0; c < nb; ++c) sum += std::abs(p[e + c]);
  return a->l1_weight * sum;
}

void add_l1_gradient(const ResidualBranch& b, std::span<double> grads) {
  const KanArch* a = b.kan();
  if (a == nullptr || a->l1_weight == 0.0) return;
  const auto nb = static_cast<std::size_t>(a->spline.num_basis());
  const auto per_edge = static_cast<std::size_t>(a->params_per_edge());
  const auto p = b.params();
  for (std::size_t e = 0; e < p.size(); e += per_edge)
    for (std::size_t c = 0; c < nb; ++c) {
      const double w = p[e + c];
      grads[e + c] += a->l1_weight * (w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0));
    }
}

std::vector<unsigned char> trainable_mask(const ResidualBranch& b) {
  std::vector<unsigned char> mask(b.size(), 1);
  if (const KanArch* a = b.kan(); a != nullptr && !a->base_blend) {
    const auto nb = static_cast<std::size_t>(a->spline.num_basis());
    const auto per_edge = static_cast<std::size_t>(a->params_per_edge());
    for (std::size_t e = 0; e < mask.size(); e += per_edge) mask[e + nb] = 0;
  }
  return mask;
}

double kink_margin(const ResidualBranch& b, double xn, double vn) {
  BranchCache c;
  branch_forward(b, xn, vn, c);
  double margin = std::numeric_limits<double>::infinity();
  if (b.mlp() != nullptr) {
    for (double z : c.pre) margin = std::min(margin, std::abs(z));
  } else if (const KanArch* a = b.kan()) {
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < a->widths.size(); ++l) {
      const SplineSpec spec = a->layer_spline(l);
      for (int i = 0; i < a->widths[l]; ++i) {
        const double u = c.acts[off + static_cast<std::size_t>(i)];
        margin = std::min({margin, std::abs(u - spec.domain.lo), std::abs(u - spec.domain.hi)});
        if (spec.order <= 1 && spec.domain.contains(u)) {
          const double pos = (u - spec.domain.lo) / spec.step();
          margin = std::min(margin, std::abs(pos - std::round(pos)) * spec.step());
        }
      }
      off += static_cast<std::size_t>(a->widths[l]);
    }
  }
  return margin;
}

// ---------------------------------------------------------------- registry

const std::vector<ArchEntry>& arch_registry() {
  static const std::vector<ArchEntry> registry = [] {
    auto kan = [](std::vector<int> widths) {
      KanArch a;
      a.widths = std::move(widths);
      a.spline = SplineSpec{5, 3, {}};
      return Arch{a};
    };
    auto mlp = [](std::vector<int> widths) { return Arch{MlpArch{std::move(widths)}}; };
    return std::vector<ArchEntry>{
        {"kan-very-small", "Very Small", kan({2, 4, 1})},
        {"kan-small", "Small", kan({2, 8, 1})},
        {"kan-wide", "Wide", kan({2, 16, 1})},
        {"kan-deep", "Deep", kan({2, 8, 8, 1})},
        {"mlp-tiny", "Tiny", mlp({2, 26, 1})},
        {"mlp-small", "Small", mlp({2, 16, 16, 1})},
        {"mlp-medium", "Medium", mlp({2, 32, 32, 1})},
        {"mlp-large", "Large", mlp({2, 64, 64, 1})},
    };
  }();
  return registry;
}

const ArchEntry& find_arch(std::string_view name) {
  for (const auto& e : arch_registry())
    if (e.name == name) return e;
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
}

std::string_view family_name(const Arch& arch) {
  return std::visit(Overloaded{
                        [](const KanArch&) { return std::string_view("KAN"); },
                        [](const MlpArch&) { return std::string_view("MLP"); },
                        [](const OracleArch&) { return std::string_view("Oracle"); },
                    },
                    arch);
}

std::string widths_string(const Arch& arch) {
  const std::vector<int>* widths = nullptr;
  if (const auto* k = std::get_if<KanArch>(&arch)) widths = &k->widths;
  if (const auto* m = std::get_if<MlpArch>(&arch)) widths = &m->widths;
  if (widths == nullptr) return "-";
  std::string out;
  for (std::size_t i = 0; i < widths->size(); ++i) {
    if (i) out += '-';
    out += std::to_string((*widths)[i]);
  }
  return out;
}

// ---------------------------------------------------------------- checkpoint

void write_checkpoint(std::ostream& os, const ResidualBranch& b, std::uint64_t seed) {
  std::string kind;
  int grid = 0, order = 0;
  double lambda = 0.0;
  if (const KanArch* a = b.kan()) {
    if (!a->layer_domains.empty() || !(a->spline.domain == Interval{}))
      throw std::invalid_argument("write_checkpoint: custom spline domains are not representable");
    kind = a->base_blend ? "kan" : "kan-spline-forced";
    grid = a->spline.grid_size;
    order = a->spline.order;
    lambda = a->l1_weight;
  } else if (b.mlp() != nullptr) {
    kind = "mlp";
  } else {
    kind = "oracle-" + std::string(to_string(b.oracle_arch()->system));
  }
  os << kind << ',' << widths_string(b.arch()) << ',' << grid << ',' << order << ',' << format_double(lambda)
     << ',' << seed << '\n';
  for (double p : b.params()) os << format_double(p) << '\n';
}

Checkpoint read_checkpoint(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw std::invalid_argument("checkpoint: empty input");
  std::vector<std::string> f;
  {
    std::stringstream ss(header);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
  }
  if (f.size() != 6) throw std::invalid_argument("checkpoint: malformed header '" + header + "'");

  auto parse_widths = [](const std::string& s) {
    std::vector<int> widths;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, '-')) widths.push_back(std::stoi(tok));
    return widths;
  };

  Arch arch;
  const std::string& kind = f[0];
  if (kind == "kan" || kind == "kan-spline-forced") {
    KanArch a;
    a.widths = parse_widths(f[1]);
    a.spline.grid_size = std::stoi(f[2]);
    a.spline.order = std::stoi(f[3]);
    a.l1_weight = parse_double(f[4]);
    a.base_blend = kind == "kan";
    arch = a;
  } else if (kind == "mlp") {
    arch = MlpArch{parse_widths(f[1])};
  } else if (kind.rfind("oracle-", 0) == 0) {
    arch = OracleArch{parse_oscillator(kind.substr(7)), kStateScale};
  } else {
    throw std::invalid_argument("checkpoint: unknown kind '" + kind + "'");
  }

  std::vector<double> params;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) params.push_back(parse_double(line));
  return Checkpoint{ResidualBranch(std::move(arch), std::move(params)), std::stoull(f[5])};
}

void save_checkpoint(const std::string& path, const ResidualBranch& b, std::uint64_t seed) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_checkpoint(os, b, seed);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_checkpoint(is);
}

}  // namespace rlab
