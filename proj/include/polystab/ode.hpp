#pragma once

// Numerical experiments on the plants: adaptive integration of open and
// closed loops, sampled-batch generation with bounded disturbances for the
// data-driven route, storage-function traces along trajectories, and level
// set extraction for plotting.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "polystab/datadriven.hpp"
#include "polystab/model.hpp"

namespace polystab {

struct OdeOptions {
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  double initial_step = 1e-3;
  double max_step = 0.0;  // 0 means unlimited
  double min_step = 1e-12;
  double blowup_norm = 1e6;
  long max_steps = 10000000;
};

// Accepted integration nodes with the field values there. Between nodes the
// solution is interpolated by the cubic Hermite polynomial matching states
// and derivatives, so dense-output accuracy is h^4 in the local step size,
// below the fifth-order accuracy of the nodes themselves.
struct OdeResult {
  bool success = false;
  std::string note;
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> derivatives;
  long steps_accepted = 0;
  long steps_rejected = 0;

  double final_time() const { return times.empty() ? 0.0 : times.back(); }
  const Eigen::VectorXd& final_state() const {
    if (states.empty()) throw std::logic_error("OdeResult: empty trajectory");
    return states.back();
  }

  Eigen::VectorXd Sample(double t) const {
    if (times.size() < 2)
      throw std::logic_error("OdeResult::Sample: need at least two nodes");
    if (t < times.front() - 1e-12 || t > times.back() + 1e-12)
      throw std::out_of_range("OdeResult::Sample: time outside trajectory");
    t = std::clamp(t, times.front(), times.back());
    const auto upper = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t k =
        std::min(times.size() - 2,
                 static_cast<std::size_t>(
                     std::max<std::ptrdiff_t>(0, upper - times.begin() - 1)));
    const double h = times[k + 1] - times[k];
    const double theta = (t - times[k]) / h;
    const double t2 = theta * theta, t3 = t2 * theta;
    return (2 * t3 - 3 * t2 + 1) * states[k] +
           (t3 - 2 * t2 + theta) * h * derivatives[k] +
           (-2 * t3 + 3 * t2) * states[k + 1] +
           (t3 - t2) * h * derivatives[k + 1];
  }
};

// Explicit Dormand-Prince 5(4) with the first-same-as-last evaluation and
// the standard error-proportional step control.
template <typename Field>
OdeResult IntegrateOde(Field&& field, const Eigen::VectorXd& x0, double t0,
                       double t1, const OdeOptions& opt = {}) {
  if (!(t1 > t0)) throw std::invalid_argument("IntegrateOde: need t1 > t0");
  static const double kA[7][6] = {
      {},
      {1.0 / 5},
      {3.0 / 40, 9.0 / 40},
      {44.0 / 45, -56.0 / 15, 32.0 / 9},
      {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
      {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176,
       -5103.0 / 18656},
      {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
  static const double kC[7] = {0.0,       1.0 / 5, 3.0 / 10, 4.0 / 5,
                               8.0 / 9.0, 1.0,     1.0};
  static const double kLow[7] = {5179.0 / 57600,    0.0,
                                 7571.0 / 16695,    393.0 / 640,
                                 -92097.0 / 339200, 187.0 / 2100,
                                 1.0 / 40};

  OdeResult out;
  Eigen::VectorXd x = x0;
  double t = t0;
  std::array<Eigen::VectorXd, 7> k;
  k[0] = field(t, x);
  out.times.push_back(t);
  out.states.push_back(x);
  out.derivatives.push_back(k[0]);

  double h = opt.initial_step;
  if (opt.max_step > 0) h = std::min(h, opt.max_step);
  h = std::min(h, t1 - t0);

  while (t < t1) {
    if (out.steps_accepted + out.steps_rejected >= opt.max_steps) {
      out.note = "step budget exhausted";
      return out;
    }
    if (h < opt.min_step) {
      out.note = "step size underflow at t = " + std::to_string(t);
      return out;
    }
    const bool last = t + h >= t1 - 1e-14 * std::max(1.0, std::abs(t1));
    if (last) h = t1 - t;

    for (int s = 1; s < 7; ++s) {
      Eigen::VectorXd xs = x;
      for (int j = 0; j < s; ++j)
        if (kA[s][j] != 0.0) xs += (h * kA[s][j]) * k[j];
      k[s] = field(t + kC[s] * h, xs);
    }
    Eigen::VectorXd x_new = x;
    for (int j = 0; j < 6; ++j)
      if (kA[6][j] != 0.0) x_new += (h * kA[6][j]) * k[j];
    Eigen::VectorXd x_low = x;
    for (int j = 0; j < 7; ++j)
      if (kLow[j] != 0.0) x_low += (h * kLow[j]) * k[j];

    double err = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      const double scale =
          opt.abs_tol +
          opt.rel_tol * std::max(std::abs(x[i]), std::abs(x_new[i]));
      const double e = (x_new[i] - x_low[i]) / scale;
      err += e * e;
    }
    err = std::sqrt(err / std::max<int>(1, x.size()));

    // Stage values can overflow when the trial step is far too large for a
    // rapidly growing field; the error estimate then comes out NaN or Inf.
    // Treat that as an ordinary rejection with the maximum shrink so the
    // controller recovers instead of propagating the poison into h.
    const bool usable = std::isfinite(err);
    if (usable && err <= 1.0) {
      t = last ? t1 : t + h;
      x = std::move(x_new);
      k[0] = k[6];  // first-same-as-last
      out.times.push_back(t);
      out.states.push_back(x);
      out.derivatives.push_back(k[0]);
      ++out.steps_accepted;
      if (x.norm() > opt.blowup_norm) {
        out.note = "trajectory escaped at t = " + std::to_string(t);
        return out;
      }
    } else {
      ++out.steps_rejected;
    }
    const double fac =
        usable ? std::clamp(0.9 * std::pow(std::max(err, 1e-10), -0.2), 0.2,
                            5.0)
               : 0.2;
    h *= fac;
    if (opt.max_step > 0) h = std::min(h, opt.max_step);
  }
  out.success = true;
  return out;
}

inline OdeResult SimulateClosedLoop(const PlantModel& model,
                                    const Controller& c,
                                    const Eigen::VectorXd& x0, double horizon,
                                    const OdeOptions& opt = {}) {
  return IntegrateOde(
      [&](double, const Eigen::VectorXd& x) {
        return ClosedLoopDerivative(model, c, x);
      },
      x0, 0.0, horizon, opt);
}

// Storage function values along a trajectory, flagging any increase beyond
// the tolerance between consecutive accepted nodes.
struct LyapunovTrace {
  bool nonincreasing = false;
  double max_increase = 0.0;
  double initial_value = 0.0;
  double final_value = 0.0;
  std::vector<double> values;
};

inline LyapunovTrace VerifyLyapunovAlong(const Controller& c,
                                         const OdeResult& sol,
                                         double tolerance = 1e-9) {
  LyapunovTrace trace;
  trace.values.reserve(sol.states.size());
  for (const Eigen::VectorXd& x : sol.states)
    trace.values.push_back(c.LyapunovAt(x));
  if (trace.values.empty()) return trace;
  trace.initial_value = trace.values.front();
  trace.final_value = trace.values.back();
  trace.max_increase = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < trace.values.size(); ++k)
    trace.max_increase =
        std::max(trace.max_increase, trace.values[k + 1] - trace.values[k]);
  trace.nonincreasing =
      trace.max_increase <= tolerance * (1.0 + std::abs(trace.initial_value));
  return trace;
}

// Excitation signals as a sum of sinusoids per input channel, each term
// contributing amplitude * sin(frequency * t + phase). Constants and cosines
// are covered by frequency 0 and phase pi/2, and the description travels in
// experiment files, unlike a bare std::function.
struct SinusoidTerm {
  double amplitude = 0.0;
  double frequency = 0.0;
  double phase = 0.0;
};

using InputSignal = std::vector<std::vector<SinusoidTerm>>;

inline std::function<Eigen::VectorXd(double)> MakeSignal(InputSignal terms) {
  return [terms = std::move(terms)](double t) {
    Eigen::VectorXd u(static_cast<Eigen::Index>(terms.size()));
    for (std::size_t i = 0; i < terms.size(); ++i) {
      double v = 0.0;
      for (const SinusoidTerm& s : terms[i])
        v += s.amplitude * std::sin(s.frequency * t + s.phase);
      u[static_cast<Eigen::Index>(i)] = v;
    }
    return u;
  };
}

// One open-loop experiment: drive the plant with a chosen input signal and
// sample states, derivatives, and inputs on a uniform time grid. Each
// derivative sample is the exact field value at the sampled state plus a
// disturbance drawn uniformly from the ball of the given radius, so the
// total disturbance energy is at most samples * radius^2.
struct ExperimentSpec {
  Eigen::VectorXd initial_state;
  std::function<Eigen::VectorXd(double)> input;
  double start_time = 0.0;   // start of the sampling window
  double duration = 1.0;     // length of the sampling window
  int samples = 10;
  double noise_radius = 0.0;
  std::uint64_t seed = 0;
};

inline Dataset RunExperiment(const PlantModel& model,
                             const ExperimentSpec& spec,
                             const OdeOptions& opt = {}) {
  if (spec.samples < 2)
    throw std::invalid_argument("RunExperiment: need at least two samples");
  if (!(spec.duration > 0.0))
    throw std::invalid_argument("RunExperiment: need a positive duration");
  if (!spec.input)
    throw std::invalid_argument("RunExperiment: missing input signal");
  if (spec.initial_state.size() != model.state_dim())
    throw std::invalid_argument("RunExperiment: initial state size mismatch");

  const int n = model.state_dim();
  const int t_count = spec.samples;
  Dataset data;
  data.states.resize(n, t_count);
  data.derivatives.resize(n, t_count);
  data.inputs.resize(model.input_dim(), t_count);
  data.times.resize(t_count);

  const auto field = [&](double t, const Eigen::VectorXd& x) {
    return model.Derivative(x, spec.input(t));
  };

  // Integrate segment by segment so every sample lands on an accepted node.
  Eigen::VectorXd x = spec.initial_state;
  double t = 0.0;
  const double step = spec.duration / (t_count - 1);
  for (int i = 0; i < t_count; ++i) {
    const double ti = spec.start_time + i * step;
    if (ti > t) {
      const OdeResult leg = IntegrateOde(field, x, t, ti, opt);
      if (!leg.success)
        throw std::runtime_error("RunExperiment: integration failed (" +
                                 leg.note + ")");
      x = leg.final_state();
      t = ti;
    }
    const Eigen::VectorXd u = spec.input(ti);
    data.times[i] = ti;
    data.states.col(i) = x;
    data.inputs.col(i) = u;
    data.derivatives.col(i) = model.Derivative(x, u);
  }

  if (spec.noise_radius > 0.0) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < t_count; ++i) {
      Eigen::VectorXd dir(n);
      do {
        for (int j = 0; j < n; ++j) dir[j] = gauss(rng);
      } while (dir.norm() < 1e-12);
      dir.normalize();
      const double r =
          spec.noise_radius * std::pow(unif(rng), 1.0 / static_cast<double>(n));
      data.derivatives.col(i) += r * dir;
    }
  }
  return data;
}

// Line segments of the level curve { (a, b) : value(a, b) = level } computed
// by marching squares with linear interpolation along cell edges; saddle
// cells are disambiguated by the cell-center value.
inline std::vector<std::array<double, 4>> LevelSetSegments(
    const std::function<double(double, double)>& value, double lo, double hi,
    int grid_points, double level) {
  if (grid_points < 2)
    throw std::invalid_argument("LevelSetSegments: need at least a 2x2 grid");
  const int n = grid_points;
  const double h = (hi - lo) / (n - 1);
  std::vector<double> v(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      v[static_cast<std::size_t>(i) * n + j] = value(lo + i * h, lo + j * h);

  std::vector<std::array<double, 4>> segments;
  const auto cross = [&](double a, double va, double b, double vb) {
    const double d = vb - va;
    const double s = std::abs(d) < 1e-300 ? 0.5 : (level - va) / d;
    return a + std::clamp(s, 0.0, 1.0) * (b - a);
  };
  for (int i = 0; i + 1 < n; ++i)
    for (int j = 0; j + 1 < n; ++j) {
      const double x0 = lo + i * h, x1 = x0 + h;
      const double y0 = lo + j * h, y1 = y0 + h;
      const double v00 = v[static_cast<std::size_t>(i) * n + j];
      const double v01 = v[static_cast<std::size_t>(i) * n + j + 1];
      const double v10 = v[static_cast<std::size_t>(i + 1) * n + j];
      const double v11 = v[static_cast<std::size_t>(i + 1) * n + j + 1];
      const int code = (v00 >= level ? 1 : 0) | (v10 >= level ? 2 : 0) |
                       (v11 >= level ? 4 : 0) | (v01 >= level ? 8 : 0);
      if (code == 0 || code == 15) continue;

      // Edge crossings: bottom (y = y0), right (x = x1), top, left.
      const double bx = cross(x0, v00, x1, v10), by = y0;
      const double rx = x1, ry = cross(y0, v10, y1, v11);
      const double tx = cross(x0, v01, x1, v11), ty = y1;
      const double lx = x0, ly = cross(y0, v00, y1, v01);
      const auto emit = [&](double ax, double ay, double cx, double cy) {
        segments.push_back({ax, ay, cx, cy});
      };
      switch (code) {
        case 1: case 14: emit(bx, by, lx, ly); break;
        case 2: case 13: emit(bx, by, rx, ry); break;
        case 3: case 12: emit(lx, ly, rx, ry); break;
        case 4: case 11: emit(rx, ry, tx, ty); break;
        case 6: case 9:  emit(bx, by, tx, ty); break;
        case 7: case 8:  emit(lx, ly, tx, ty); break;
        case 5: case 10: {
          const double center = value(0.5 * (x0 + x1), 0.5 * (y0 + y1));
          const bool center_high = center >= level;
          if ((code == 5) == center_high) {
            emit(bx, by, rx, ry);
            emit(lx, ly, tx, ty);
          } else {
            emit(bx, by, lx, ly);
            emit(rx, ry, tx, ty);
          }
          break;
        }
        default: break;
      }
    }
  return segments;
}

}  // namespace polystab
