#pragma once

// Langevin first-exit times from a basin and the Kramers prediction.

#include "nninfo/core.hpp"

#include <functional>
#include <optional>

namespace nninfo {

/// Loss landscape on R^d: value(w) and gradient(w, g) on raw arrays so the
/// Langevin inner loop does not allocate.
class ScalarLoss {
 public:
  using ValueFn = std::function<double(const double*)>;
  using GradFn = std::function<void(const double*, double*)>;

  ScalarLoss(std::size_t dim, ValueFn value, GradFn grad)
      : dim_(dim), value_(std::move(value)), grad_(std::move(grad)) {
    require(dim_ >= 1, "landscape needs dimension >= 1");
  }

  std::size_t dim() const noexcept { return dim_; }
  double value(const double* w) const { return value_(w); }
  void gradient(const double* w, double* g) const { grad_(w, g); }

  double value(const Vector& w) const { return value_(w.data()); }
  Vector gradient(const Vector& w) const {
    Vector g(w.size());
    grad_(w.data(), g.data());
    return g;
  }

  /// Central differences of the gradient, symmetrized.
  Matrix hessian(const Vector& w) const {
    const auto d = w.size();
    Matrix h(d, d);
    Vector wp = w;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double step = 1e-5 * std::max(1.0, std::abs(w[i]));
      wp[i] = w[i] + step;
      const Vector gp = gradient(wp);
      wp[i] = w[i] - step;
      const Vector gm = gradient(wp);
      wp[i] = w[i];
      h.col(i) = (gp - gm) / (2.0 * step);
    }
    return 0.5 * (h + h.transpose());
  }

 private:
  std::size_t dim_;
  ValueFn value_;
  GradFn grad_;
};

/// (w^2 - 1)^2 / 4 scaled by barrier/0.25: minima at +-1, saddle at 0.
inline ScalarLoss double_well_1d(double barrier = 0.25) {
  const double s = barrier / 0.25;
  return ScalarLoss(
      1, [s](const double* w) { const double q = w[0] * w[0] - 1.0; return s * 0.25 * q * q; },
      [s](const double* w, double* g) { g[0] = s * w[0] * (w[0] * w[0] - 1.0); });
}

/// -(barrier/2) cos(2 pi w): identical wells at integers, saddles at half-integers.
inline ScalarLoss cosine_wells_1d(double barrier) {
  const double tau = 2.0 * std::numbers::pi;
  return ScalarLoss(
      1, [=](const double* w) { return -0.5 * barrier * std::cos(tau * w[0]); },
      [=](const double* w, double* g) { g[0] = 0.5 * barrier * tau * std::sin(tau * w[0]); });
}

/// (x^2 - 1)^2 / 4 + (1/2)(y - gamma (x^2 - 1))^2: minima at (+-1, 0), a
/// curved valley, saddle at (0, -gamma) with barrier 1/4.
inline ScalarLoss curved_double_well_2d(double gamma = 0.5) {
  return ScalarLoss(
      2,
      [gamma](const double* w) {
        const double q = w[0] * w[0] - 1.0;
        const double r = w[1] - gamma * q;
        return 0.25 * q * q + 0.5 * r * r;
      },
      [gamma](const double* w, double* g) {
        const double q = w[0] * w[0] - 1.0;
        const double r = w[1] - gamma * q;
        g[0] = w[0] * q - 2.0 * gamma * w[0] * r;
        g[1] = r;
      });
}

/// Axis-aligned box lo <= w <= hi.
struct Region {
  Vector lo;
  Vector hi;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(lo.size()); }
  bool contains(const double* w) const {
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (w[i] < lo[i] || w[i] > hi[i]) return false;
    return true;
  }
  /// Face index 2 i (below lo_i) or 2 i + 1 (above hi_i) of the first violated bound.
  int exit_face(const double* w) const {
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      if (w[i] < lo[i]) return static_cast<int>(2 * i);
      if (w[i] > hi[i]) return static_cast<int>(2 * i + 1);
    }
    return -1;
  }
};

struct SaddlePoint {
  Vector point;
  double value = 0.0;
  double lambda1 = 0.0;  // most negative Hessian eigenvalue
  double abs_det = 0.0;  // |det H| at the saddle
};

/// Newton iterations on grad L = 0 from a nearby point; converges to the
/// nondegenerate critical point of the basin it starts in.
inline Vector refine_critical_point(const ScalarLoss& l, Vector w, int iters = 50) {
  for (int it = 0; it < iters; ++it) {
    const Vector g = l.gradient(w);
    if (g.norm() < 1e-13) break;
    const Matrix h = l.hessian(w);
    const Vector step = h.fullPivLu().solve(g);
    if (!step.allFinite()) break;
    w -= step;
  }
  return w;
}

inline SaddlePoint describe_saddle(const ScalarLoss& l, const Vector& s) {
  SaddlePoint out;
  out.point = s;
  out.value = l.value(s);
  const Matrix h = l.hessian(s);
  Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
  out.lambda1 = es.eigenvalues().minCoeff();
  out.abs_det = std::abs(es.eigenvalues().prod());
  return out;
}

/// 1D saddle between a and b: grid maximum of L, then bisection on the sign
/// change of the gradient around it.
inline SaddlePoint find_saddle_1d(const ScalarLoss& l, double a, double b, int grid = 2001) {
  require(l.dim() == 1, "1D saddle search needs a 1D landscape");
  if (a > b) std::swap(a, b);
  double best = -INFINITY;
  int arg = 0;
  for (int i = 0; i < grid; ++i) {
    const double x = a + (b - a) * i / (grid - 1);
    const double v = l.value(&x);
    if (v > best) {
      best = v;
      arg = i;
    }
  }
  if (arg == 0 || arg == grid - 1) throw NumericalError("no interior barrier between the given points");
  double lo = a + (b - a) * (arg - 1) / (grid - 1);
  double hi = a + (b - a) * (arg + 1) / (grid - 1);
  auto grad = [&](double x) {
    double g;
    l.gradient(&x, &g);
    return g;
  };
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (grad(mid) > 0.0) lo = mid;  // still ascending
    else hi = mid;
  }
  Vector s(1);
  s[0] = 0.5 * (lo + hi);
  return describe_saddle(l, s);
}

/// Minimum-energy path between two minima by the string method with `nodes`
/// images (gradient relaxation plus equal-arclength reparametrization); the
/// highest image is refined to the saddle by Newton's method.
inline SaddlePoint find_saddle_string(const ScalarLoss& l, const Vector& from, const Vector& to, int nodes = 64,
                                      int iters = 20000, double dt = 1e-2) {
  require(from.size() == static_cast<Eigen::Index>(l.dim()) && to.size() == from.size(), "end-point dimension");
  require(nodes >= 3, "string needs at least three nodes");
  const auto d = from.size();
  std::vector<Vector> s(static_cast<std::size_t>(nodes));
  for (int i = 0; i < nodes; ++i) s[static_cast<std::size_t>(i)] = from + (to - from) * (double(i) / (nodes - 1));
  std::vector<double> arc(static_cast<std::size_t>(nodes));
  for (int it = 0; it < iters; ++it) {
    double moved = 0.0;
    for (auto& x : s) {
      const Vector g = l.gradient(x);
      x -= dt * g;
      moved = std::max(moved, dt * g.norm());
    }
    arc[0] = 0.0;
    for (int i = 1; i < nodes; ++i)
      arc[static_cast<std::size_t>(i)] =
          arc[static_cast<std::size_t>(i - 1)] + (s[static_cast<std::size_t>(i)] - s[static_cast<std::size_t>(i - 1)]).norm();
    const double total = arc.back();
    std::vector<Vector> t(s.size(), Vector(d));
    t.front() = s.front();
    t.back() = s.back();
    std::size_t seg = 1;
    for (int i = 1; i < nodes - 1; ++i) {
      const double target = total * i / (nodes - 1);
      while (seg < s.size() - 1 && arc[seg] < target) ++seg;
      const double span = arc[seg] - arc[seg - 1];
      const double f = span > 0.0 ? (target - arc[seg - 1]) / span : 0.0;
      t[static_cast<std::size_t>(i)] = s[seg - 1] + f * (s[seg] - s[seg - 1]);
    }
    s.swap(t);
    if (moved < 1e-12) break;
  }
  std::size_t top = 0;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (l.value(s[i]) > l.value(s[top])) top = i;
  if (top == 0 || top + 1 == s.size()) throw NumericalError("string has no interior barrier");
  return describe_saddle(l, refine_critical_point(l, s[top]));
}

struct EscapeConfig {
  double temperature = 0.05;
  double eta = 0.01;
  std::size_t runs = 500;
  long max_steps = 100'000'000;
  Seed seed{0};
  unsigned jobs = 1;
};

struct EscapeTimeStats {
  std::vector<long> first_exit_steps;  // completed runs only
  std::vector<int> exit_faces;         // per completed run
  std::size_t censored = 0;
  double mean_steps = 0.0;
  double mean_time = 0.0;  // mean_steps * eta
  double predicted_kramers = 0.0;
  double temperature = 0.0;
  double barrier = 0.0;
  double lambda1 = 0.0;
  SaddlePoint saddle;
  double min_hessian_det = 0.0;
};

/// Kramers time (2 pi / |lambda_1|) exp((F(w_s) - F(w*)) / T) with the free
/// energy F = L + (T/2) log|H|.
inline double kramers_prediction(double barrier, double lambda1, double abs_det_saddle, double det_min, double t) {
  return 2.0 * std::numbers::pi / std::abs(lambda1) * std::sqrt(abs_det_saddle / det_min) * std::exp(barrier / t);
}

/// Euler-Maruyama Langevin w <- w - eta grad L + sqrt(2 eta T) xi started at
/// w* until the first exit from the basin, per run. The saddle is located by
/// grid plus bisection in 1D (towards the nearer basin wall) and by the string
/// method towards `target` otherwise.
inline EscapeTimeStats escape_time_mc(const ScalarLoss& l, const Vector& w_star, const Region& basin,
                                      const EscapeConfig& cfg, std::optional<Vector> target = std::nullopt,
                                      std::optional<SaddlePoint> known_saddle = std::nullopt) {
  const std::size_t d = l.dim();
  require(w_star.size() == static_cast<Eigen::Index>(d) && basin.dim() == d, "dimension mismatch");
  require(basin.contains(w_star.data()), "w* must lie inside the basin");
  require(cfg.temperature > 0.0 && cfg.eta > 0.0, "temperature and step size must be positive");
  require(cfg.runs >= 1, "need at least one run");
  if (l.gradient(w_star).norm() > 1e-6) throw ArgumentError("w* is not a stationary point of the landscape");

  EscapeTimeStats st;
  st.temperature = cfg.temperature;
  const Matrix h_min = l.hessian(w_star);
  st.min_hessian_det = h_min.determinant();
  if (!(st.min_hessian_det > 0.0)) throw ArgumentError("w* is not a nondegenerate minimum");
  if (known_saddle) {
    st.saddle = *known_saddle;
  } else if (target) {
    st.saddle = find_saddle_string(l, w_star, *target);
  } else {
    require(d == 1, "saddle search in more than one dimension needs a target minimum");
    std::optional<SaddlePoint> best;
    for (double wall : {basin.lo[0], basin.hi[0]}) {
      try {
        auto s = find_saddle_1d(l, w_star[0], wall);
        if (!best || s.value < best->value) best = s;
      } catch (const NumericalError&) {
      }
    }
    if (!best) throw NumericalError("no barrier between w* and the basin walls");
    st.saddle = *best;
  }
  st.barrier = st.saddle.value - l.value(w_star);
  st.lambda1 = st.saddle.lambda1;
  st.predicted_kramers =
      kramers_prediction(st.barrier, st.lambda1, st.saddle.abs_det, st.min_hessian_det, cfg.temperature);

  std::vector<long> exit_steps(cfg.runs, -1);
  std::vector<int> faces(cfg.runs, -1);
  const double noise = std::sqrt(2.0 * cfg.eta * cfg.temperature);
  parallel_for(cfg.runs, cfg.jobs, [&](std::size_t r) {
    Rng rng = make_rng(derive(cfg.seed, r));
    Normal normal;
    std::vector<double> w(w_star.data(), w_star.data() + d), g(d);
    for (long step = 1; step <= cfg.max_steps; ++step) {
      l.gradient(w.data(), g.data());
      for (std::size_t i = 0; i < d; ++i) w[i] += -cfg.eta * g[i] + noise * normal(rng);
      if (!basin.contains(w.data())) {
        exit_steps[r] = step;
        faces[r] = basin.exit_face(w.data());
        return;
      }
    }
  });
  double acc = 0.0;
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    if (exit_steps[r] < 0) {
      ++st.censored;
      continue;
    }
    st.first_exit_steps.push_back(exit_steps[r]);
    st.exit_faces.push_back(faces[r]);
    acc += static_cast<double>(exit_steps[r]);
  }
  if (!st.first_exit_steps.empty()) st.mean_steps = acc / static_cast<double>(st.first_exit_steps.size());
  st.mean_time = st.mean_steps * cfg.eta;
  return st;
}

struct KramersFit {
  double slope = 0.0;      // d log(mean time) / d(1/T)
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least-squares line of log mean exit time against 1/T.
inline KramersFit fit_kramers(const std::vector<EscapeTimeStats>& runs) {
  require(runs.size() >= 2, "need at least two temperatures");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(runs.size()), 2);
  Vector y(static_cast<Eigen::Index>(runs.size()));
  for (std::size_t i = 0; i < runs.size(); ++i) {
    require(runs[i].mean_time > 0.0, "mean exit time must be positive");
    a(static_cast<Eigen::Index>(i), 0) = 1.0 / runs[i].temperature;
    a(static_cast<Eigen::Index>(i), 1) = 1.0;
    y[static_cast<Eigen::Index>(i)] = std::log(runs[i].mean_time);
  }
  const Vector c = a.colPivHouseholderQr().solve(y);
  const Vector res = y - a * c;
  const double mean = y.mean();
  const double tot = (y.array() - mean).square().sum();
  return {c[0], c[1], tot > 0.0 ? 1.0 - res.squaredNorm() / tot : 1.0};
}

}  // namespace nninfo
