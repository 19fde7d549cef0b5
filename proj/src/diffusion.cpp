#include "statexp/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/container/small_vector.hpp>
#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "statexp/exact.hpp"

namespace statexp {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kUnitRoundoff = 0x1.0p-53;

using Scratch = boost::container::small_vector<double, 16>;

std::span<double> view(Scratch& v) { return {v.data(), v.size()}; }

void check_spd(const Matrix& m, const char* name) {
  if (m.rows() != m.cols()) throw ValidationError(std::string(name) + " must be square");
  if (!m.allFinite()) throw ValidationError(std::string(name) + " must be finite");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ValidationError(std::string(name) + " must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) throw ValidationError(std::string(name) + " must be positive definite");
}

Matrix cholesky_factor(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw ValidationError("matrix is not positive definite");
  return llt.matrixL();
}

void check_box(const Vector& box) {
  if (box.size() < 1) throw ValidationError("dimension must be at least 1");
  for (Index i = 0; i < box.size(); ++i)
    if (!(box(i) > 0.0) || !std::isfinite(box(i))) throw ValidationError("box lengths must be positive and finite");
}

void check_fields(const DiffusionFields& f) {
  if (!f.potential || !f.gradient || !f.forcing) throw ValidationError("potential, gradient and forcing are required");
}

// U and f must agree at identified boundary points.
void check_periodic(const Vector& box, const DiffusionFields& fields) {
  const int n = static_cast<int>(box.size());
  StreamRng rng(0x5eed, 0, 0);
  std::vector<double> a(n), b(n), fa(n), fb(n);
  for (int trial = 0; trial < 8; ++trial) {
    for (int i = 0; i < n; ++i) a[i] = rng.uniform() * box(i);
    for (int i = 0; i < n; ++i) {
      b = a;
      a[i] = 0.0;
      b[i] = box(i);
      const double ua = fields.potential(a), ub = fields.potential(b);
      if (std::abs(ua - ub) > 1e-12 * std::max(1.0, std::abs(ua)))
        throw ValidationError("potential is not periodic along coordinate " + std::to_string(i));
      fields.forcing(a, fa);
      fields.forcing(b, fb);
      for (int j = 0; j < n; ++j)
        if (std::abs(fa[j] - fb[j]) > 1e-12 * std::max(1.0, std::abs(fa[j])))
          throw ValidationError("forcing is not periodic along coordinate " + std::to_string(i));
    }
  }
}

double wrap_coordinate(double x, double length) {
  double r = std::fmod(x, length);
  if (r < 0.0) r += length;
  if (r >= length) r -= length;
  return r;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y = M x for a small dense matrix.
void multiply(const Matrix& m, std::span<const double> x, std::span<double> y) {
  const Index n = m.rows();
  for (Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Index j = 0; j < n; ++j) s += m(i, j) * x[j];
    y[i] = s;
  }
}

double noise_normal(StreamRng& rng, int refinement) {
  if (refinement == 0) return rng.normal();
  const int count = 1 << refinement;
  double s = 0.0;
  for (int i = 0; i < count; ++i) s += rng.normal();
  return s / std::sqrt(static_cast<double>(count));
}

// Euler-Maruyama driver calling visit(x_k, x_{k+1}) for every step.
template <class Visit>
void overdamped_steps(const DiffusionModel& model, std::span<const double> x0, std::size_t steps,
                      const StepOptions& options, StreamRng& rng, Visit visit) {
  const int n = model.dimension();
  if (static_cast<int>(x0.size()) != n) throw ValidationError("start point has the wrong dimension");
  std::vector<double> x(x0.begin(), x0.end()), next(n), w(n), f(n), g(n), force(n), drift(n), xi(n), noise(n);
  const double dt = options.dt;
  const double amplitude = std::sqrt(2.0 * dt / model.beta());
  const double eps = model.epsilon();
  for (std::size_t k = 0; k < steps; ++k) {
    for (int i = 0; i < n; ++i) w[i] = wrap_coordinate(x[i], model.box()(i));
    model.gradient(w, g);
    if (eps != 0.0) {
      model.forcing(w, f);
      for (int i = 0; i < n; ++i) force[i] = eps * f[i] - g[i];
    } else {
      for (int i = 0; i < n; ++i) force[i] = -g[i];
    }
    multiply(model.mobility(), force, drift);
    for (int i = 0; i < n; ++i) xi[i] = noise_normal(rng, options.noise_refinement);
    multiply(model.noise_factor(), xi, noise);
    for (int i = 0; i < n; ++i) {
      next[i] = x[i] + drift[i] * dt + amplitude * noise[i];
      if (!std::isfinite(next[i])) throw NumericalError("diffusion blew up at step " + std::to_string(k));
    }
    visit(std::span<const double>(x), std::span<const double>(next));
    std::swap(x, next);
  }
}

// Observable sums for one overdamped path, step by step.
class OverdampedAccumulator {
 public:
  OverdampedAccumulator(const DiffusionModel& model, double dt)
      : model_(model), dt_(dt), n_(model.dimension()), mid_(n_), w_(n_), f_(n_), g_(n_), cf_(n_), cg_(n_) {}

  void step(std::span<const double> a, std::span<const double> b) {
    const double eps = model_.epsilon();
    if (eps == 0.0) return;
    const double beta = model_.beta();
    for (int i = 0; i < n_; ++i) mid_[i] = wrap_coordinate((a[i] + b[i]) / 2, model_.box()(i));
    model_.forcing(mid_, f_);
    double work = 0.0;
    for (int i = 0; i < n_; ++i) work += f_[i] * (b[i] - a[i]);
    entropy_.add(eps * beta * work);

    for (int i = 0; i < n_; ++i) w_[i] = wrap_coordinate(a[i], model_.box()(i));
    model_.forcing(w_, f_);
    model_.gradient(w_, g_);
    multiply(model_.mobility(), g_, cg_);
    multiply(model_.mobility(), f_, cf_);
    t1_ += (-eps * beta * dot(f_, cg_) + eps * model_.mobility_divergence(w_)) * dt_;
    t2_ += 0.5 * eps * eps * beta * dot(f_, cf_) * dt_;
  }

  PathObservables result() const {
    PathObservables obs;
    obs.entropy_flux = entropy_.value();
    obs.activity_orders = {t1_, t2_};
    obs.activity = t1_ + t2_;
    obs.action = 0.5 * (obs.activity - obs.entropy_flux);
    return obs;
  }

 private:
  const DiffusionModel& model_;
  double dt_;
  int n_;
  std::vector<double> mid_, w_, f_, g_, cf_, cg_;
  ExactSum entropy_;
  double t1_ = 0.0;
  double t2_ = 0.0;
};

void check_step_options(const StepOptions& options) {
  if (!(options.dt > 0.0) || !std::isfinite(options.dt)) throw ValidationError("dt must be positive");
  if (options.noise_refinement < 0 || options.noise_refinement > 16)
    throw ValidationError("noise refinement must be between 0 and 16");
}

std::uint64_t grid_stream(std::size_t node, std::uint64_t path) { return (static_cast<std::uint64_t>(node) << 40) | path; }

RunningStats merge_all(const std::vector<RunningStats>& blocks) {
  RunningStats total;
  for (const auto& b : blocks) total.merge(b);
  return total;
}

}  // namespace

DiffusionModel::DiffusionModel(Vector box, DiffusionFields fields, Matrix mobility, double beta, double epsilon)
    : box_(std::move(box)), fields_(std::move(fields)), mobility_(std::move(mobility)), beta_(beta), epsilon_(epsilon) {
  check_box(box_);
  check_fields(fields_);
  if (mobility_.rows() != box_.size()) throw ValidationError("mobility dimension does not match the box");
  check_spd(mobility_, "mobility");
  if (!(beta_ > 0.0) || !std::isfinite(beta_)) throw ValidationError("beta must be positive and finite");
  if (!std::isfinite(epsilon_)) throw ValidationError("epsilon must be finite");
  check_periodic(box_, fields_);
  noise_factor_ = cholesky_factor(mobility_);
}

DiffusionModel DiffusionModel::with_epsilon(double epsilon) const {
  DiffusionModel copy = *this;
  if (!std::isfinite(epsilon)) throw ValidationError("epsilon must be finite");
  copy.epsilon_ = epsilon;
  return copy;
}

double DiffusionModel::potential(std::span<const double> x) const { return fields_.potential(x); }
void DiffusionModel::gradient(std::span<const double> x, std::span<double> out) const { fields_.gradient(x, out); }
void DiffusionModel::forcing(std::span<const double> x, std::span<double> out) const { fields_.forcing(x, out); }

double DiffusionModel::mobility_divergence(std::span<const double> x) const {
  const int n = dimension();
  Scratch jac(static_cast<std::size_t>(n) * n);
  if (fields_.forcing_jacobian) {
    fields_.forcing_jacobian(x, view(jac));
  } else {
    Scratch p(x.begin(), x.end()), fp(n), fm(n);
    for (int j = 0; j < n; ++j) {
      const double h = 1e-6 * box_(j);
      p[j] = x[j] + h;
      fields_.forcing(view(p), view(fp));
      p[j] = x[j] - h;
      fields_.forcing(view(p), view(fm));
      p[j] = x[j];
      for (int i = 0; i < n; ++i) jac[i * n + j] = (fp[i] - fm[i]) / (2 * h);
    }
  }
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s += mobility_(i, j) * jac[i * n + j];
  return s;
}

double DiffusionModel::flux_density(std::span<const double> x) const {
  const int n = dimension();
  Scratch f(n), g(n), cg(n);
  forcing(x, view(f));
  gradient(x, view(g));
  multiply(mobility_, view(g), view(cg));
  return mobility_divergence(x) / beta_ - dot(view(f), view(cg));
}

void DiffusionModel::wrap(std::span<double> x) const {
  for (int i = 0; i < dimension(); ++i) x[i] = wrap_coordinate(x[i], box_(i));
}

DiffusionModel make_periodic_1d(const PeriodicField1D& potential, const PeriodicField1D& forcing, double mobility,
                                double beta, double epsilon, double length) {
  if (!potential.value || !potential.derivative || !forcing.value || !forcing.derivative)
    throw ValidationError("1-D fields need values and derivatives");
  DiffusionFields fields;
  fields.potential = [u = potential.value](std::span<const double> x) { return u(x[0]); };
  fields.gradient = [du = potential.derivative](std::span<const double> x, std::span<double> out) { out[0] = du(x[0]); };
  fields.forcing = [f = forcing.value](std::span<const double> x, std::span<double> out) { out[0] = f(x[0]); };
  fields.forcing_jacobian = [df = forcing.derivative](std::span<const double> x, std::span<double> out) {
    out[0] = df(x[0]);
  };
  Vector box(1);
  box << length;
  return DiffusionModel(box, std::move(fields), Matrix::Constant(1, 1, mobility), beta, epsilon);
}

DiffusionModel make_diff_ring(double epsilon) {
  return make_periodic_1d({[](double x) { return std::cos(kTwoPi * x); },
                           [](double x) { return -kTwoPi * std::sin(kTwoPi * x); }},
                          {[](double) { return 1.0; }, [](double) { return 0.0; }}, 1.0, 1.0, epsilon);
}

std::vector<double> DiffusionPath::wrapped(std::size_t k, const DiffusionModel& model) const {
  std::vector<double> x(at(k).begin(), at(k).end());
  model.wrap(x);
  return x;
}

std::vector<long> DiffusionPath::winding(std::size_t k, const DiffusionModel& model) const {
  std::vector<long> w(dimension);
  for (int i = 0; i < dimension; ++i) {
    const double L = model.box()(i);
    w[i] = static_cast<long>(std::floor(at(k)[i] / L)) - static_cast<long>(std::floor(at(0)[i] / L));
  }
  return w;
}

DiffusionPath reverse(const DiffusionPath& path) {
  DiffusionPath r;
  r.dimension = path.dimension;
  r.dt = path.dt;
  r.positions.reserve(path.positions.size());
  for (std::size_t k = path.steps() + 1; k-- > 0;) {
    const auto p = path.at(k);
    r.positions.insert(r.positions.end(), p.begin(), p.end());
  }
  return r;
}

std::size_t step_count(double horizon, double dt) {
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw ValidationError("horizon must be nonnegative");
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");
  const double ratio = horizon / dt;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio))
    throw ValidationError("horizon must be a multiple of dt");
  return static_cast<std::size_t>(rounded);
}

double stability_threshold(const DiffusionModel& model) {
  const int n = model.dimension();
  const int nodes = n == 1 ? 256 : 16;
  double curvature = 0.0;
  std::vector<double> x(n), p(n), gp(n), gm(n);
  StreamRng rng(0xc0ffee, 0, 0);
  for (int s = 0; s < nodes; ++s) {
    for (int i = 0; i < n; ++i) x[i] = n == 1 ? model.box()(0) * s / nodes : rng.uniform() * model.box()(i);
    for (int j = 0; j < n; ++j) {
      const double h = 1e-5 * model.box()(j);
      p = x;
      p[j] += h;
      model.gradient(p, gp);
      p[j] -= 2 * h;
      model.gradient(p, gm);
      for (int i = 0; i < n; ++i) curvature = std::max(curvature, std::abs(gp[i] - gm[i]) / (2 * h));
    }
  }
  const double chi = model.mobility().operatorNorm();
  if (curvature == 0.0) return std::numeric_limits<double>::infinity();
  return 0.1 / (model.beta() * chi * curvature);
}

DiffusionPath euler_maruyama(const DiffusionModel& model, std::span<const double> x0, double horizon,
                             const StepOptions& options, StreamRng& rng) {
  check_step_options(options);
  const std::size_t steps = step_count(horizon, options.dt);
  DiffusionPath path;
  path.dimension = model.dimension();
  path.dt = options.dt;
  path.positions.reserve((steps + 1) * model.dimension());
  path.positions.insert(path.positions.end(), x0.begin(), x0.end());
  overdamped_steps(model, x0, steps, options, rng, [&](std::span<const double>, std::span<const double> b) {
    path.positions.insert(path.positions.end(), b.begin(), b.end());
  });
  return path;
}

PathObservables diffusion_observables(const DiffusionPath& path, const DiffusionModel& model) {
  if (path.dimension != model.dimension()) throw ValidationError("path and model dimensions differ");
  if (path.positions.size() % path.dimension != 0 || path.positions.empty())
    throw ValidationError("malformed diffusion path");
  OverdampedAccumulator acc(model, path.dt);
  for (std::size_t k = 0; k < path.steps(); ++k) acc.step(path.at(k), path.at(k + 1));
  return acc.result();
}

PathObservables simulate_observables(const DiffusionModel& model, std::span<const double> x0, double horizon,
                                     const StepOptions& options, StreamRng& rng) {
  check_step_options(options);
  const std::size_t steps = step_count(horizon, options.dt);
  const DiffusionModel reference = model.with_epsilon(0.0);
  OverdampedAccumulator acc(model, options.dt);
  overdamped_steps(reference, x0, steps, options, rng,
                   [&](std::span<const double> a, std::span<const double> b) { acc.step(a, b); });
  return acc.result();
}

Estimate diffusion_normalization(const DiffusionModel& model, std::span<const double> x0, double horizon,
                                 const StepOptions& options, const SamplingConfig& config) {
  const std::vector<double> start(x0.begin(), x0.end());
  auto blocks = run_blocks(config.samples, config.parallelism, [&](int, std::uint64_t begin, std::uint64_t end) {
    RunningStats s;
    for (std::uint64_t i = begin; i < end; ++i) {
      StreamRng rng(config.seed, i, static_cast<std::uint32_t>(StreamFamily::diffusion));
      const auto obs = simulate_observables(model, start, horizon, options, rng);
      s.add(std::exp(0.5 * (obs.entropy_flux - obs.activity)));
    }
    return s;
  });
  return Estimate::from(merge_all(blocks));
}

NormalizationBias normalization_bias(const DiffusionModel& model, std::span<const double> x0, double horizon,
                                     double dt, const SamplingConfig& config) {
  const std::vector<double> start(x0.begin(), x0.end());
  struct Block {
    RunningStats level[3], diff[2];
  };
  auto blocks = run_blocks(config.samples, config.parallelism, [&](int, std::uint64_t begin, std::uint64_t end) {
    Block b;
    for (std::uint64_t i = begin; i < end; ++i) {
      double weight[3];
      for (int r = 0; r < 3; ++r) {
        StreamRng rng(config.seed, i, static_cast<std::uint32_t>(StreamFamily::diffusion));
        const auto obs = simulate_observables(model, start, horizon, {dt / (1 << r), 2 - r}, rng);
        weight[r] = std::exp(0.5 * (obs.entropy_flux - obs.activity));
        b.level[r].add(weight[r]);
      }
      b.diff[0].add(weight[0] - weight[1]);
      b.diff[1].add(weight[1] - weight[2]);
    }
    return b;
  });
  Block total;
  for (const auto& b : blocks) {
    for (int r = 0; r < 3; ++r) total.level[r].merge(b.level[r]);
    for (int r = 0; r < 2; ++r) total.diff[r].merge(b.diff[r]);
  }
  NormalizationBias out;
  out.dt = dt;
  for (const auto& s : total.level) out.levels.push_back(Estimate::from(s));
  for (const auto& s : total.diff) out.differences.push_back(Estimate::from(s));
  out.ratio = out.differences[0].mean / out.differences[1].mean;
  out.bias = 2.0 * out.differences[0].mean;
  return out;
}

Histogram end_position_histogram(const DiffusionModel& model, double x0, double horizon, const StepOptions& options,
                                 int bins, const SamplingConfig& config) {
  if (model.dimension() != 1) throw ValidationError("histograms are available for 1-D models only");
  if (bins < 1) throw ValidationError("bins must be positive");
  check_step_options(options);
  const std::size_t steps = step_count(horizon, options.dt);
  const double L = model.box()(0);
  auto blocks = run_blocks(config.samples, config.parallelism, [&](int, std::uint64_t begin, std::uint64_t end) {
    std::vector<RunningStats> s(bins);
    const double start[1] = {x0};
    for (std::uint64_t i = begin; i < end; ++i) {
      StreamRng rng(config.seed, i, static_cast<std::uint32_t>(StreamFamily::diffusion));
      double last = x0;
      overdamped_steps(model, start, steps, options, rng,
                       [&](std::span<const double>, std::span<const double> b) { last = b[0]; });
      const int bin = std::min(bins - 1, static_cast<int>(wrap_coordinate(last, L) / L * bins));
      for (int b = 0; b < bins; ++b) s[b].add(b == bin ? 1.0 : 0.0);
    }
    return s;
  });
  Histogram h;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(L * b / bins);
  for (int b = 0; b < bins; ++b) {
    RunningStats s;
    for (const auto& blk : blocks) s.merge(blk[b]);
    h.probability.push_back(Estimate::from(s));
  }
  return h;
}

std::vector<double> diffusion_equilibrium_density(const DiffusionModel& model, const std::vector<double>& points) {
  if (model.dimension() != 1) throw ValidationError("equilibrium density is available for 1-D models only");
  const double L = model.box()(0);
  constexpr int nodes = 4096;
  double z = 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double x[1] = {L * i / nodes};
    z += std::exp(-model.beta() * model.potential(x));
  }
  z *= L / nodes;
  std::vector<double> out;
  for (double p : points) {
    const double x[1] = {p};
    out.push_back(std::exp(-model.beta() * model.potential(x)) / z);
  }
  return out;
}

FirstOrderDensity mclennan_first_order_diffusion(const DiffusionModel& model, int grid_points, double horizon,
                                                 const StepOptions& options, const SamplingConfig& config) {
  if (model.dimension() != 1) throw ValidationError("first-order density is available for 1-D models only");
  if (grid_points < 64) throw ValidationError("grid needs at least 64 points");
  check_step_options(options);
  const std::size_t steps = step_count(horizon, options.dt);
  const double L = model.box()(0);
  const DiffusionModel reference = model.with_epsilon(0.0);

  FirstOrderDensity out;
  out.horizon = horizon;
  out.dt = options.dt;
  for (int i = 0; i < grid_points; ++i) out.grid.push_back(L * i / grid_points);
  out.rho0 = diffusion_equilibrium_density(model, out.grid);

  const double eb = model.epsilon() * model.beta();
  for (int node = 0; node < grid_points; ++node) {
    if (eb == 0.0) {
      out.h.push_back({0.0, 0.0, config.samples});
      continue;
    }
    const double start[1] = {out.grid[node]};
    auto blocks = run_blocks(config.samples, config.parallelism, [&](int, std::uint64_t begin, std::uint64_t end) {
      RunningStats s;
      std::vector<double> w(1);
      for (std::uint64_t i = begin; i < end; ++i) {
        StreamRng rng(config.seed, grid_stream(node, i), static_cast<std::uint32_t>(StreamFamily::diffusion));
        double integral = 0.0;
        overdamped_steps(reference, start, steps, options, rng, [&](std::span<const double> a, std::span<const double>) {
          w[0] = wrap_coordinate(a[0], L);
          integral += model.flux_density(w) * options.dt;
        });
        s.add(integral);
      }
      return s;
    });
    out.h.push_back(Estimate::from(merge_all(blocks)));
  }

  double norm = 0.0;
  for (int i = 0; i < grid_points; ++i) {
    out.density.push_back(out.rho0[i] * (1.0 - eb * out.h[i].mean));
    norm += out.density.back() * L / grid_points;
  }
  for (int i = 0; i < grid_points; ++i) {
    out.density[i] /= norm;
    out.density_se.push_back(out.rho0[i] * std::abs(eb) * out.h[i].se / norm);
  }
  return out;
}

JumpModel ring_chain(const DiffusionModel& model, int cells) {
  if (model.dimension() != 1) throw ValidationError("ring chains are built from 1-D models only");
  if (cells < 3) throw ValidationError("ring chain needs at least 3 cells");
  const double L = model.box()(0);
  const double d = L / cells;
  const double diffusivity = model.mobility()(0, 0) / model.beta();
  std::vector<std::string> states;
  Vector energy(cells), force(cells);
  for (int i = 0; i < cells; ++i) {
    states.push_back(std::to_string(i));
    const double x[1] = {d * i};
    energy(i) = model.potential(x);
    double f[1];
    model.forcing(x, f);
    force(i) = f[0];
  }
  Matrix rates = Matrix::Zero(cells, cells), forcing = Matrix::Zero(cells, cells);
  for (int i = 0; i < cells; ++i) {
    const int up = (i + 1) % cells, down = (i + cells - 1) % cells;
    rates(i, up) = diffusivity / (d * d) * std::exp(-0.5 * model.beta() * (energy(up) - energy(i)));
    rates(i, down) = diffusivity / (d * d) * std::exp(-0.5 * model.beta() * (energy(down) - energy(i)));
    forcing(i, up) = d * force(i);
    forcing(up, i) = -d * force(i);
  }
  return JumpModel(states, energy, model.beta(), rates, forcing, model.epsilon());
}

std::vector<double> ring_chain_density(const DiffusionModel& model, int cells) {
  const JumpModel chain = ring_chain(model, cells);
  const Vector rho = stationary_solve(build_driven_rates(chain));
  const double d = model.box()(0) / cells;
  std::vector<double> out(cells);
  for (int i = 0; i < cells; ++i) out[i] = rho(i) / d;
  return out;
}

ContinuumActivity continuum_activity_limit(const PeriodicField1D& potential, const PeriodicField1D& forcing,
                                           double mobility, double beta, double epsilon, double x, double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ValidationError("mesh must be positive");
  if (!(mobility > 0.0) || !(beta > 0.0)) throw ValidationError("mobility and beta must be positive");
  const double D = mobility / beta;
  const double u0 = potential.value(x), up = potential.value(x + delta), um = potential.value(x - delta);
  const double fp = forcing.value(x), fm = -forcing.value(x - delta);
  const double kp = D * std::exp(-0.5 * beta * (up - u0));
  const double km = D * std::exp(-0.5 * beta * (um - u0));
  const double ap = 0.5 * beta * epsilon * delta * fp;
  const double am = 0.5 * beta * epsilon * delta * fm;

  ContinuumActivity out;
  const double f = forcing.value(x);
  out.continuum = 0.5 * mobility * beta * epsilon * epsilon * f * f + mobility * epsilon * forcing.derivative(x) -
                  mobility * beta * epsilon * f * potential.derivative(x);
  const double tp = kp * std::expm1(ap), tm = km * std::expm1(am);
  out.discrete = 2.0 / (delta * delta) * (tp + tm);
  out.error = out.discrete - out.continuum;

  const double spread = std::abs(u0) + std::abs(up) + std::abs(um) + std::abs(potential.derivative(x)) * (std::abs(x) + delta);
  out.roundoff_bound = 2.0 / (delta * delta) * (std::abs(tp) + std::abs(tm)) * kUnitRoundoff * (8.0 + beta * spread);
  if (!std::isfinite(out.discrete)) throw NumericalError("discrete activity is not finite; use a larger mesh");
  if ((fp != 0.0 || fm != 0.0) && epsilon != 0.0 && ap == 0.0 && am == 0.0)
    throw NumericalError("rate differences underflow at mesh " + std::to_string(delta) + "; use a larger mesh");
  if (out.roundoff_bound > 1e-2 * std::max(std::abs(out.continuum), std::abs(out.error)) && out.roundoff_bound > 0.0)
    throw NumericalError("mesh " + std::to_string(delta) +
                         " is too small for double precision (rate differences lose their digits); use a larger mesh");
  return out;
}

double scaling_exponent(const std::vector<double>& deltas, const std::vector<double>& errors) {
  if (deltas.size() != errors.size() || deltas.size() < 2) throw ValidationError("need at least two (delta, error) pairs");
  double mx = 0, my = 0;
  const double n = static_cast<double>(deltas.size());
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (!(deltas[i] > 0.0) || errors[i] == 0.0) throw NumericalError("cannot fit a slope through zero errors");
    lx.push_back(std::log(deltas[i]));
    ly.push_back(std::log(std::abs(errors[i])));
    mx += lx.back() / n;
    my += ly.back() / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

UnderdampedModel::UnderdampedModel(Vector box, DiffusionFields fields, double mass, Matrix friction, Matrix noise,
                                   double beta, double epsilon)
    : box_(std::move(box)),
      fields_(std::move(fields)),
      mass_(mass),
      friction_(std::move(friction)),
      noise_(std::move(noise)),
      beta_(beta),
      epsilon_(epsilon) {
  check_box(box_);
  check_fields(fields_);
  if (!(mass_ > 0.0) || !std::isfinite(mass_)) throw ValidationError("mass must be positive");
  if (!(beta_ > 0.0) || !std::isfinite(beta_)) throw ValidationError("beta must be positive and finite");
  if (!std::isfinite(epsilon_)) throw ValidationError("epsilon must be finite");
  if (noise_.rows() != box_.size() || friction_.rows() != box_.size())
    throw ValidationError("friction and noise dimensions must match the box");
  check_spd(noise_, "noise matrix");
  check_spd(friction_, "friction");
  const double scale = std::max(1.0, friction_.cwiseAbs().maxCoeff());
  if ((friction_ - beta_ * noise_).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw ValidationError("friction must equal beta times the noise matrix");
  check_periodic(box_, fields_);
  noise_inverse_ = noise_.inverse();
  noise_factor_ = cholesky_factor(noise_);
}

UnderdampedModel UnderdampedModel::with_epsilon(double epsilon) const {
  if (!std::isfinite(epsilon)) throw ValidationError("epsilon must be finite");
  UnderdampedModel copy = *this;
  copy.epsilon_ = epsilon;
  return copy;
}

UnderdampedModel make_underdamped_ring(double mass, double noise, double beta, double epsilon) {
  DiffusionFields fields;
  fields.potential = [](std::span<const double> x) { return std::cos(kTwoPi * x[0]); };
  fields.gradient = [](std::span<const double> x, std::span<double> out) { out[0] = -kTwoPi * std::sin(kTwoPi * x[0]); };
  fields.forcing = [](std::span<const double>, std::span<double> out) { out[0] = 1.0; };
  fields.forcing_jacobian = [](std::span<const double>, std::span<double> out) { out[0] = 0.0; };
  Vector box(1);
  box << 1.0;
  return UnderdampedModel(box, std::move(fields), mass, Matrix::Constant(1, 1, beta * noise),
                          Matrix::Constant(1, 1, noise), beta, epsilon);
}

PhasePath reverse(const PhasePath& path) {
  PhasePath r;
  r.dimension = path.dimension;
  r.dt = path.dt;
  const std::size_t n = static_cast<std::size_t>(path.dimension);
  for (std::size_t k = path.steps() + 1; k-- > 0;) {
    for (std::size_t i = 0; i < n; ++i) {
      r.q.push_back(path.q[k * n + i]);
      r.v.push_back(-path.v[k * n + i]);
    }
  }
  return r;
}

namespace {

class UnderdampedAccumulator {
 public:
  UnderdampedAccumulator(const UnderdampedModel& model, double dt)
      : m_(model), dt_(dt), n_(model.dimension()), w_(n_), f_(n_), fn_(n_), g_(n_), dinv_f_(n_), mid_(n_) {}

  void step(std::span<const double> q, std::span<const double> v, std::span<const double> q1,
            std::span<const double> v1) {
    const double eps = m_.epsilon();
    if (eps == 0.0) return;
    const double beta = m_.beta(), mass = m_.mass();
    for (int i = 0; i < n_; ++i) w_[i] = wrap_coordinate(q[i], m_.box()(i));
    m_.fields().forcing(w_, f_);
    m_.fields().gradient(w_, g_);
    for (int i = 0; i < n_; ++i) w_[i] = wrap_coordinate(q1[i], m_.box()(i));
    m_.fields().forcing(w_, fn_);
    entropy_.add(0.5 * eps * beta * dt_ * (dot(v, f_) + dot(v1, fn_)));

    multiply(m_.noise_inverse(), f_, dinv_f_);
    const double fdf = dot(f_, dinv_f_);
    const double fdg = dot(dinv_f_, g_);
    for (int i = 0; i < n_; ++i) mid_[i] = wrap_coordinate((q[i] + q1[i]) / 2, m_.box()(i));
    m_.fields().forcing(mid_, fn_);
    multiply(m_.noise_inverse(), fn_, w_);
    double dv_term = 0.0;
    for (int i = 0; i < n_; ++i) dv_term += (v1[i] - v[i]) * w_[i];
    activity_ += eps * eps / (2 * mass) * fdf * dt_ - eps / mass * fdg * dt_ - eps * dv_term;

    // Gaussian transition log ratio of the Euler step, driven over reference.
    double innovation = 0.0;
    for (int i = 0; i < n_; ++i) {
      double friction_v = 0.0;
      for (int j = 0; j < n_; ++j) friction_v += m_.friction()(i, j) * v[j];
      const double mean0 = (-g_[i] / mass - friction_v) * dt_;
      innovation += dinv_f_[i] * (v1[i] - v[i] - mean0);
    }
    log_ratio_ += 0.5 * eps * innovation - eps * eps * dt_ / (4 * mass) * fdf;
  }

  UnderdampedObservables result() const {
    UnderdampedObservables out;
    out.observables.entropy_flux = entropy_.value();
    out.observables.activity = activity_;
    out.observables.action = 0.5 * (activity_ - out.observables.entropy_flux);
    out.discrete_log_ratio = log_ratio_;
    return out;
  }

 private:
  const UnderdampedModel& m_;
  double dt_;
  int n_;
  std::vector<double> w_, f_, fn_, g_, dinv_f_, mid_;
  ExactSum entropy_;
  double activity_ = 0.0;
  double log_ratio_ = 0.0;
};

template <class Visit>
void underdamped_steps(const UnderdampedModel& model, std::span<const double> q0, std::span<const double> v0,
                       std::size_t steps, double dt, StreamRng& rng, Visit visit) {
  const int n = model.dimension();
  if (static_cast<int>(q0.size()) != n || static_cast<int>(v0.size()) != n)
    throw ValidationError("start point has the wrong dimension");
  std::vector<double> q(q0.begin(), q0.end()), v(v0.begin(), v0.end()), q1(n), v1(n), w(n), f(n), g(n), xi(n),
      noise(n);
  const double mass = model.mass();
  const double amplitude = std::sqrt(2.0 * dt / mass);
  const double eps = model.epsilon();
  for (std::size_t k = 0; k < steps; ++k) {
    for (int i = 0; i < n; ++i) w[i] = wrap_coordinate(q[i], model.box()(i));
    model.fields().gradient(w, g);
    if (eps != 0.0) model.fields().forcing(w, f);
    for (int i = 0; i < n; ++i) xi[i] = rng.normal();
    multiply(model.noise_factor(), xi, noise);
    for (int i = 0; i < n; ++i) {
      double friction_v = 0.0;
      for (int j = 0; j < n; ++j) friction_v += model.friction()(i, j) * v[j];
      const double force = (eps != 0.0 ? eps * f[i] : 0.0) - g[i];
      v1[i] = v[i] + (force / mass - friction_v) * dt + amplitude * noise[i];
      q1[i] = q[i] + v1[i] * dt;
      if (!std::isfinite(q1[i]) || !std::isfinite(v1[i]))
        throw NumericalError("underdamped dynamics blew up at step " + std::to_string(k));
    }
    visit(std::span<const double>(q), std::span<const double>(v), std::span<const double>(q1),
          std::span<const double>(v1));
    std::swap(q, q1);
    std::swap(v, v1);
  }
}

void check_underdamped_dt(const UnderdampedModel& model, double dt) {
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");
  const double gamma = model.friction().operatorNorm();
  if (dt > 0.1 / gamma) throw ValidationError("dt exceeds the velocity stability threshold 0.1/gamma");
}

}  // namespace

UnderdampedObservables underdamped_observables(const PhasePath& path, const UnderdampedModel& model) {
  if (path.dimension != model.dimension()) throw ValidationError("path and model dimensions differ");
  const std::size_t n = static_cast<std::size_t>(path.dimension);
  UnderdampedAccumulator acc(model, path.dt);
  for (std::size_t k = 0; k < path.steps(); ++k) {
    acc.step({path.q.data() + k * n, n}, {path.v.data() + k * n, n}, {path.q.data() + (k + 1) * n, n},
             {path.v.data() + (k + 1) * n, n});
  }
  return acc.result();
}

PhasePath underdamped_simulate(const UnderdampedModel& model, std::span<const double> q0, std::span<const double> v0,
                               double horizon, double dt, StreamRng& rng) {
  check_underdamped_dt(model, dt);
  const std::size_t steps = step_count(horizon, dt);
  PhasePath path;
  path.dimension = model.dimension();
  path.dt = dt;
  path.q.assign(q0.begin(), q0.end());
  path.v.assign(v0.begin(), v0.end());
  underdamped_steps(model, q0, v0, steps, dt, rng,
                    [&](std::span<const double>, std::span<const double>, std::span<const double> q1,
                        std::span<const double> v1) {
                      path.q.insert(path.q.end(), q1.begin(), q1.end());
                      path.v.insert(path.v.end(), v1.begin(), v1.end());
                    });
  return path;
}

ConventionReport underdamped_convention_test(const UnderdampedModel& model, std::span<const double> q0,
                                             double horizon, const std::vector<double>& dts,
                                             const SamplingConfig& config) {
  if (dts.empty()) throw ValidationError("need at least one dt");
  const UnderdampedModel reference = model.with_epsilon(0.0);
  const int n = model.dimension();
  const std::vector<double> start(q0.begin(), q0.end());
  ConventionReport report;
  for (double dt : dts) {
    check_underdamped_dt(model, dt);
    const std::size_t steps = step_count(horizon, dt);
    struct Block {
      RunningStats half, full, discrete, gap_half, gap_full;
    };
    auto blocks = run_blocks(config.samples, config.parallelism, [&](int, std::uint64_t begin, std::uint64_t end) {
      Block b;
      std::vector<double> v0(n);
      for (std::uint64_t i = begin; i < end; ++i) {
        StreamRng rng(config.seed, i, static_cast<std::uint32_t>(StreamFamily::underdamped));
        for (int j = 0; j < n; ++j) v0[j] = rng.normal() / std::sqrt(model.beta() * model.mass());
        UnderdampedAccumulator acc(model, dt);
        underdamped_steps(reference, start, v0, steps, dt, rng,
                          [&](auto q, auto v, auto q1, auto v1) { acc.step(q, v, q1, v1); });
        const auto r = acc.result();
        const double diff = r.observables.entropy_flux - r.observables.activity;
        b.half.add(std::exp(0.5 * diff));
        b.full.add(std::exp(diff));
        b.discrete.add(std::exp(r.discrete_log_ratio));
        b.gap_half.add(std::pow(r.discrete_log_ratio - 0.5 * diff, 2));
        b.gap_full.add(std::pow(r.discrete_log_ratio - diff, 2));
      }
      return b;
    });
    Block total;
    for (const auto& b : blocks) {
      total.half.merge(b.half);
      total.full.merge(b.full);
      total.discrete.merge(b.discrete);
      total.gap_half.merge(b.gap_half);
      total.gap_full.merge(b.gap_full);
    }
    report.rows.push_back({dt, Estimate::from(total.half), Estimate::from(total.full), Estimate::from(total.discrete),
                           std::sqrt(total.gap_half.mean), std::sqrt(total.gap_full.mean)});
  }
  report.half_compatible = report.full_compatible = true;
  for (const auto& row : report.rows) {
    report.half_compatible = report.half_compatible && within_standard_errors(row.half.mean, row.half.se, 1.0, 0.0);
    report.full_compatible = report.full_compatible && within_standard_errors(row.full.mean, row.full.se, 1.0, 0.0);
  }
  if (report.half_compatible && !report.full_compatible)
    report.convention = "(S-T)/2";
  else if (report.full_compatible && !report.half_compatible)
    report.convention = "S-T";
  else
    report.convention = "undetermined";
  return report;
}

VelocityMoments underdamped_velocity_check(const UnderdampedModel& model, double horizon, double dt,
                                           const SamplingConfig& config) {
  check_underdamped_dt(model, dt);
  const std::size_t steps = step_count(horizon, dt);
  const UnderdampedModel reference = model.with_epsilon(0.0);
  const int n = model.dimension();
  struct Block {
    RunningStats v, v2;
  };
  auto blocks = run_blocks(config.samples, config.parallelism, [&](int, std::uint64_t begin, std::uint64_t end) {
    Block b;
    std::vector<double> q0(n), v0(n, 0.0);
    for (std::uint64_t i = begin; i < end; ++i) {
      StreamRng rng(config.seed, i, static_cast<std::uint32_t>(StreamFamily::underdamped));
      for (int j = 0; j < n; ++j) q0[j] = rng.uniform() * model.box()(j);
      double last = 0.0;
      underdamped_steps(reference, q0, v0, steps, dt, rng,
                        [&](auto, auto, auto, std::span<const double> v1) { last = v1[0]; });
      b.v.add(last);
      b.v2.add(last * last);
    }
    return b;
  });
  RunningStats v, v2;
  for (const auto& b : blocks) {
    v.merge(b.v);
    v2.merge(b.v2);
  }
  VelocityMoments out;
  out.mean = Estimate::from(v);
  out.variance = Estimate::from(v2);
  out.variance.mean -= v.mean * v.mean;
  out.expected_variance = 1.0 / (model.beta() * model.mass());
  return out;
}

nlohmann::json to_json(const FirstOrderDensity& d) {
  nlohmann::json h = nlohmann::json::array(), hse = nlohmann::json::array();
  for (const auto& e : d.h) {
    h.push_back(e.mean);
    hse.push_back(e.se);
  }
  return {{"grid", d.grid}, {"rho0", d.rho0}, {"h", h}, {"h_se", hse}, {"density", d.density},
          {"density_se", d.density_se}, {"T", d.horizon}, {"dt", d.dt}};
}

nlohmann::json to_json(const ConventionReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"dt", row.dt},
                    {"half_mean", row.half.mean},
                    {"half_se", row.half.se},
                    {"full_mean", row.full.mean},
                    {"full_se", row.full.se},
                    {"discrete_mean", row.discrete.mean},
                    {"discrete_se", row.discrete.se},
                    {"rms_gap_half", row.rms_gap_half},
                    {"rms_gap_full", row.rms_gap_full}});
  }
  return {{"rows", rows},
          {"half_compatible", r.half_compatible},
          {"full_compatible", r.full_compatible},
          {"convention", r.convention}};
}

}  // namespace statexp
