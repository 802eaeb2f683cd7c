#pragma once

// JSON and CSV forms of the result types. JSON objects keep insertion order
// and CSV reals use the shortest round-trip representation, so equal inputs
// always serialize to equal bytes.

#include "nninfo/activations.hpp"
#include "nninfo/dynamics.hpp"
#include "nninfo/escape.hpp"
#include "nninfo/fisher.hpp"
#include "nninfo/infoweights.hpp"
#include "nninfo/toy.hpp"

#include <json.hpp>

#include <ostream>
#include <sstream>

namespace nninfo {

using Json = nlohmann::ordered_json;

namespace detail {

inline Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <class M>
Json row_major_json(const M& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  return a;
}

template <class M>
Json matrix_json(const M& m) {
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"values", row_major_json(m)}};
}

inline Vector vector_from(const Json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace detail

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline Json to_json(const ModelSpec& m) {
  return Json{{"sizes", m.sizes}, {"activation", to_string(m.activation)}, {"head", to_string(m.head)},
              {"bias", m.bias}};
}

inline Json to_json(const std::vector<Segment>& layout) {
  Json a = Json::array();
  for (const auto& s : layout) a.push_back(Json{{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  return a;
}

inline std::vector<Segment> layout_from_json(const Json& a) {
  std::vector<Segment> out;
  for (const auto& s : a)
    out.push_back({s.at("name").get<std::string>(), s.at("rows").get<std::size_t>(), s.at("cols").get<std::size_t>()});
  return out;
}

/// Values are row-major for the full form, the diagonal for the diagonal
/// form and a single entry for the trace form.
inline Json to_json(const FisherEstimate& f) {
  Json values;
  switch (f.form) {
    case FisherForm::Full: values = detail::row_major_json(f.full); break;
    case FisherForm::Diagonal: values = detail::vector_json(f.diagonal); break;
    case FisherForm::Trace: values = Json::array({f.trace_value}); break;
  }
  return Json{{"form", to_string(f.form)}, {"k", f.k}, {"method", to_string(f.method)},
              {"mc_samples", f.mc_samples}, {"damping", f.damping}, {"values", values}};
}

inline FisherEstimate fisher_from_json(const Json& j) {
  FisherEstimate f;
  const auto form = j.at("form").get<std::string>();
  const auto method = j.at("method").get<std::string>();
  f.k = j.at("k").get<std::size_t>();
  f.mc_samples = j.at("mc_samples").get<std::size_t>();
  f.damping = j.at("damping").get<double>();
  f.method = method == to_string(FisherMethod::MonteCarlo) ? FisherMethod::MonteCarlo : FisherMethod::ExactExpectation;
  const Vector v = detail::vector_from(j.at("values"));
  const auto k = static_cast<Eigen::Index>(f.k);
  if (form == to_string(FisherForm::Full)) {
    if (v.size() != k * k) throw FormError("full Fisher needs k^2 values");
    f.form = FisherForm::Full;
    f.full = Eigen::Map<const RowMatrix>(v.data(), k, k);
  } else if (form == to_string(FisherForm::Diagonal)) {
    if (v.size() != k) throw FormError("diagonal Fisher needs k values");
    f.form = FisherForm::Diagonal;
    f.diagonal = v;
  } else if (form == to_string(FisherForm::Trace)) {
    if (v.size() != 1) throw FormError("trace Fisher needs one value");
    f.form = FisherForm::Trace;
    f.trace_value = v[0];
  } else {
    throw FormError("unknown Fisher form '" + form + "'");
  }
  return f;
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"eta", c.eta},
              {"batch", c.batch},
              {"steps", c.steps},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"noise", to_string(c.noise)},
              {"temperature", c.temperature},
              {"snapshot_stride", c.snapshot_stride},
              {"seed", c.seed.value}};
}

/// Checkpoint form: snapshots map the step (as a string key) to the flat weights.
inline Json to_json(const TrainTrace& t) {
  Json snaps = Json::object();
  for (const auto& s : t.snapshots) snaps[std::to_string(s.step)] = detail::vector_json(s.weights.values());
  return Json{{"config", to_json(t.config)}, {"layout", to_json(t.final.layout())}, {"snapshots", snaps}};
}

inline Json to_json(const ComplexityReport& r) {
  return Json{{"beta", r.beta}, {"expected_loss", r.expected_loss}, {"kl_nats", r.kl_nats},
              {"c_beta", r.c_beta}, {"mc_samples", r.mc_samples}};
}

inline Json to_json(const PacBayesReport& r) {
  return Json{{"train_loss", r.train_loss}, {"kl_nats", r.kl_nats}, {"n", r.n},       {"beta", r.beta},
              {"delta", r.delta},           {"bound", r.bound},    {"expectation_form", r.expectation_form}};
}

inline Json to_json(const ApproxMi& r) {
  return Json{{"value", r.value},     {"raw", r.raw},         {"clamped", r.clamped},
              {"damped", r.damped},   {"damping", r.damping}, {"logdets", r.logdets}};
}

inline Json to_json(const SaddlePoint& s) {
  return Json{{"point", detail::vector_json(s.point)}, {"value", s.value}, {"lambda1", s.lambda1},
              {"abs_det", s.abs_det}};
}

inline Json to_json(const EscapeTimeStats& s) {
  return Json{{"temperature", s.temperature},
              {"mean_steps", s.mean_steps},
              {"mean_time", s.mean_time},
              {"predicted_kramers", s.predicted_kramers},
              {"barrier", s.barrier},
              {"lambda1", s.lambda1},
              {"min_hessian_det", s.min_hessian_det},
              {"saddle", to_json(s.saddle)},
              {"censored", s.censored},
              {"first_exit_steps", s.first_exit_steps},
              {"exit_faces", s.exit_faces}};
}

inline Json to_json(const KramersFit& f) {
  return Json{{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}};
}

inline Json to_json(const PlaneReport& p) {
  return Json{{"endpoint_distance", p.endpoint_distance},
              {"projected_fisher", detail::matrix_json(p.projected_fisher)},
              {"ellipse_axes", Json::array({p.ellipse_axes[0], p.ellipse_axes[1]})},
              {"ellipse_directions", detail::matrix_json(p.ellipse_directions)},
              {"steps_a", p.steps_a},
              {"steps_b", p.steps_b},
              {"path_a", detail::matrix_json(p.path_a)},
              {"path_b", detail::matrix_json(p.path_b)}};
}

inline Json to_json(const EffectiveInfoReport& r) {
  return Json{{"beta", r.beta},
              {"layer", r.layer},
              {"logdets", r.logdets},
              {"delta_i", r.delta_i},
              {"entropy_x", detail::optional_json(r.entropy_x)},
              {"i_eff", detail::optional_json(r.i_eff)},
              {"clamped", r.clamped},
              {"damped", r.damped},
              {"max_damping", r.max_damping}};
}

inline Json to_json(const ToyPipelineConfig& c) {
  return Json{{"model", Json{{"n", c.model.n},
                             {"mu_lo", c.model.mu_lo},
                             {"mu_hi", c.model.mu_hi},
                             {"noise_sd", c.model.noise_sd},
                             {"c", c.model.c}}},
              {"batch_sizes", c.batch_sizes},
              {"datasets", c.datasets},
              {"runs_per", c.runs_per},
              {"train", to_json(c.train)},
              {"init_lo", c.init_lo},
              {"init_hi", c.init_hi},
              {"mi_samples", c.mi_samples},
              {"iw_beta", c.iw_beta},
              {"lambda2_min", c.lambda2_min},
              {"lambda2_max", c.lambda2_max},
              {"lambda2_points", c.lambda2_points},
              {"stability_delta", c.stability_delta},
              {"stability", c.stability},
              {"hist_range", c.hist_range},
              {"hist_bins", c.hist_bins},
              {"seed", c.seed.value}};
}

/// Per-batch summaries without the per-run end points (those go to CSV).
inline Json to_json(const ToyReport& r) {
  Json batches = Json::array();
  for (const auto& b : r.batches)
    batches.push_back(Json{{"batch", b.batch},
                           {"shannon_mi", b.shannon_mi},
                           {"gaussian_iw", b.gaussian_iw},
                           {"best_lambda2", b.best_lambda2},
                           {"mean_abs_theta", b.mean_abs_theta},
                           {"flat_fraction", b.flat_fraction},
                           {"mean_fisher", b.mean_fisher},
                           {"mean_log_fisher", b.mean_log_fisher},
                           {"log_fisher_se", b.log_fisher_se},
                           {"fisher_approx", to_json(b.fisher_approx)},
                           {"unconverged", b.unconverged},
                           {"on_peak", b.on_peak}});
  return Json{{"config", to_json(r.config)}, {"flat_threshold", r.config.flat_threshold()}, {"batches", batches}};
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// One CSV line; reals in shortest round-trip form.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}

  CsvWriter& header(std::initializer_list<std::string_view> cols) {
    bool first = true;
    for (auto c : cols) {
      if (!first) os_ << ',';
      os_ << c;
      first = false;
    }
    os_ << '\n';
    return *this;
  }

  template <class... T>
  CsvWriter& row(const T&... v) {
    bool first = true;
    ((put(v, first)), ...);
    os_ << '\n';
    return *this;
  }

 private:
  template <class T>
  void put(const T& v, bool& first) {
    if (!first) os_ << ',';
    first = false;
    if constexpr (std::is_floating_point_v<T>) {
      os_ << format_double(static_cast<double>(v));
    } else if constexpr (std::is_same_v<T, bool>) {
      os_ << (v ? 1 : 0);
    } else {
      os_ << v;
    }
  }

  std::ostream& os_;
};

/// batch_size, shannon_mi_nats, gaussian_iw_nats, mean_abs_theta; one row per B.
inline void write_toy_mi_csv(std::ostream& os, const ToyReport& r) {
  CsvWriter w(os);
  w.header({"batch_size", "shannon_mi_nats", "gaussian_iw_nats", "mean_abs_theta"});
  for (const auto& b : r.batches) w.row(b.batch, b.shannon_mi, b.gaussian_iw, b.mean_abs_theta);
}

inline void write_toy_stats_csv(std::ostream& os, const ToyReport& r) {
  CsvWriter w(os);
  w.header({"batch_size", "flat_fraction", "mean_fisher", "mean_log_fisher", "log_fisher_se", "best_lambda2",
            "fisher_approx_nats", "fisher_approx_clamped", "unconverged", "on_peak"});
  for (const auto& b : r.batches)
    w.row(b.batch, b.flat_fraction, b.mean_fisher, b.mean_log_fisher, b.log_fisher_se, b.best_lambda2,
          b.fisher_approx.value, b.fisher_approx.clamped, b.unconverged, b.on_peak);
}

/// Long form: one row per (B, bin) with the bin's left edge.
inline void write_toy_hist_csv(std::ostream& os, const ToyReport& r) {
  CsvWriter w(os);
  w.header({"batch_size", "theta_lo", "theta_hi", "count"});
  const auto& c = r.config;
  const double width = 2.0 * c.hist_range / static_cast<double>(c.hist_bins);
  for (const auto& b : r.batches)
    for (std::size_t i = 0; i < b.histogram.size(); ++i) {
      const double lo = -c.hist_range + width * static_cast<double>(i);
      w.row(b.batch, lo, lo + width, b.histogram[i]);
    }
}

inline void write_toy_runs_csv(std::ostream& os, const ToyReport& r) {
  CsvWriter w(os);
  w.header({"batch_size", "dataset", "run", "mu", "theta0", "theta", "fisher", "converged", "on_peak"});
  for (const auto& b : r.batches) {
    const std::size_t per = r.config.runs_per;
    for (std::size_t t = 0; t < b.runs.size(); ++t) {
      const auto& run = b.runs[t];
      w.row(b.batch, t / per, t % per, r.mus[t / per], run.theta0, run.theta, run.fisher, run.converged, run.on_peak);
    }
  }
}

/// One row per path point of either trace.
inline void write_plane_csv(std::ostream& os, const PlaneReport& p) {
  CsvWriter w(os);
  w.header({"trace", "step", "x", "y"});
  for (Eigen::Index i = 0; i < p.path_a.rows(); ++i)
    w.row("A", p.steps_a[static_cast<std::size_t>(i)], p.path_a(i, 0), p.path_a(i, 1));
  for (Eigen::Index i = 0; i < p.path_b.rows(); ++i)
    w.row("B", p.steps_b[static_cast<std::size_t>(i)], p.path_b(i, 0), p.path_b(i, 1));
}

inline void write_effective_info_csv(std::ostream& os, const std::vector<EffectiveInfoReport>& reports) {
  CsvWriter w(os);
  w.header({"beta", "layer", "probe", "logdet_fzx"});
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.logdets.size(); ++i) w.row(r.beta, r.layer, i, r.logdets[i]);
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace nninfo
