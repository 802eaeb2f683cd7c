#pragma once

// Experiment drivers. Each returns its output files as (name, bytes) pairs
// so the caller owns every write and reruns can be compared byte for byte.

#include "nninfo/activations.hpp"
#include "nninfo/datasets.hpp"
#include "nninfo/dynamics.hpp"
#include "nninfo/escape.hpp"
#include "nninfo/fisher.hpp"
#include "nninfo/harness/config.hpp"
#include "nninfo/serialize.hpp"
#include "nninfo/toy.hpp"

#include <sstream>

namespace nninfo::harness {

struct Artifacts {
  std::vector<std::pair<std::string, std::string>> files;
  std::string summary;

  void add(std::string name, std::string bytes) { files.emplace_back(std::move(name), std::move(bytes)); }
  const std::string& file(const std::string& name) const {
    for (const auto& [n, b] : files)
      if (n == name) return b;
    throw ArgumentError("no artifact named '" + name + "'");
  }
};

namespace detail {

inline ModelSpec mlp_from(const Config& c, std::size_t in, std::size_t out, Head head) {
  ModelSpec m;
  m.sizes.push_back(in);
  for (auto h : c.uintegers("model.hidden")) m.sizes.push_back(h);
  m.sizes.push_back(out);
  m.activation = parse_activation(c.string("model.activation"));
  m.head = head;
  m.validate();
  return m;
}

inline WeightVector scaled_init(const ModelSpec& m, const Config& c, Seed seed) {
  const WeightVector w = init_weights(m, seed);
  return w.with_values(c.real("model.init_scale") * w.values());
}

inline TrainConfig train_from(const Config& c, Seed seed) {
  TrainConfig t;
  t.eta = c.real("train.eta");
  t.batch = c.uinteger("train.batch");
  t.steps = c.integer("train.steps");
  t.momentum = c.real("train.momentum");
  t.weight_decay = c.real("train.weight_decay");
  t.noise = c.string("train.noise") == "isotropic" ? NoiseMode::ExplicitIsotropic : NoiseMode::MinibatchOnly;
  t.temperature = c.real("train.temperature");
  t.snapshot_stride = c.integer("train.snapshot_stride");
  t.seed = seed;
  return t;
}

template <class F>
std::string with_stream(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

inline std::string fmt(double v) { return format_double(v); }

}  // namespace detail

// ---------------------------------------------------------------------------
// fig1-fisher-growth
// ---------------------------------------------------------------------------

inline Artifacts run_fisher_growth(const Config& c, unsigned /*jobs*/) {
  const Seed seed = c.seed();
  const auto clean = make_dataset_2d_binary(c.uinteger("data.n"), derive(seed, 1));
  const auto data = flip_labels(clean, c.real("data.label_noise"), derive(seed, 2));
  const auto m = detail::mlp_from(c, 2, 2, Head::SoftmaxXent);
  const auto w0 = detail::scaled_init(m, c, derive(seed, 3));
  const auto cfg = detail::train_from(c, derive(seed, 4));
  const auto trace = sgd_train(m, data, cfg, w0);
  const double damping = c.real("fisher.damping");

  Artifacts a;
  std::ostringstream csv;
  CsvWriter w(csv);
  w.header({"step", "train_loss", "train_acc", "logdet_F"});
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < trace.snapshots.size(); ++i) {
    const auto& s = trace.snapshots[i];
    const auto f = fisher_exact(m, s.weights, data.inputs);
    const double ld = damping > 0.0 ? logdet_damped(f, damping).value : logdet_damped(f).value;
    w.row(s.step, loss(m, s.weights, data), accuracy(m, s.weights, data), ld);
    if (i == 0) first = ld;
    last = ld;
  }
  a.add("fisher_logdet.csv", csv.str());
  a.add("checkpoint.json", dump(to_json(trace)));
  a.summary = "fig1-fisher-growth: " + std::to_string(trace.snapshots.size()) + " snapshots, log|F| " +
              detail::fmt(first) + " -> " + detail::fmt(last) + "\n";
  return a;
}

// ---------------------------------------------------------------------------
// fig2-stability
// ---------------------------------------------------------------------------

inline Artifacts run_stability(const Config& c, unsigned /*jobs*/) {
  const Seed seed = c.seed();
  const std::size_t n = c.uinteger("data.n");
  const auto data = make_dataset_2d_binary(n, derive(seed, 1));
  const auto m = detail::mlp_from(c, 2, 2, Head::SoftmaxXent);
  const auto w0 = detail::scaled_init(m, c, derive(seed, 2));
  const auto cfg = detail::train_from(c, derive(seed, 3));

  std::size_t idx;
  if (c.integer("stability.swap_index") >= 0) {
    idx = static_cast<std::size_t>(c.integer("stability.swap_index"));
    if (idx >= n) throw ConfigError("stability.swap_index outside the dataset");
  } else {
    Rng rng = make_rng(derive(seed, 4));
    idx = uniform_index(rng, n);
  }
  // A fresh draw with the swapped row's label.
  const auto fresh = make_dataset_2d_binary(2, derive(seed, 5));
  const std::size_t src = fresh.labels[0] == data.labels[idx] ? 0 : 1;
  const auto swapped = nninfo::detail::replace_row(data, idx, fresh, src);

  const auto ta = sgd_train(m, data, cfg, w0);
  const auto tb = sgd_train(m, swapped, cfg, w0);
  const Vector f_diag = fisher_exact(m, ta.final, data.inputs).full.diagonal();
  const auto plane = plane_projection(w0, ta, tb, f_diag);

  Artifacts a;
  a.add("plane.csv", detail::with_stream([&](std::ostream& os) { write_plane_csv(os, plane); }));
  Json j = to_json(plane);
  j["swap_index"] = idx;
  j["final_loss_a"] = loss(m, ta.final, data);
  j["final_loss_b"] = loss(m, tb.final, swapped);
  a.add("plane.json", dump(j));
  a.summary = "fig2-stability: swapped row " + std::to_string(idx) + ", endpoint distance " +
              detail::fmt(plane.endpoint_distance) + "\n";
  return a;
}

// ---------------------------------------------------------------------------
// fig3-toy-mi
// ---------------------------------------------------------------------------

inline ToyPipelineConfig toy_config_from(const Config& c, unsigned jobs) {
  ToyPipelineConfig t;
  t.model.n = c.uinteger("toy.n");
  t.model.mu_lo = c.real("toy.mu_lo");
  t.model.mu_hi = c.real("toy.mu_hi");
  t.model.noise_sd = c.real("toy.noise_sd");
  t.model.c = c.real("toy.c");
  t.batch_sizes = c.uintegers("pipeline.batch_sizes");
  t.datasets = c.uinteger("pipeline.datasets");
  t.runs_per = c.uinteger("pipeline.runs_per");
  t.init_lo = c.real("pipeline.init_lo");
  t.init_hi = c.real("pipeline.init_hi");
  t.mi_samples = c.uinteger("pipeline.mi_samples");
  t.iw_beta = c.real("pipeline.iw_beta");
  t.lambda2_min = c.real("pipeline.lambda2_min");
  t.lambda2_max = c.real("pipeline.lambda2_max");
  t.lambda2_points = c.uinteger("pipeline.lambda2_points");
  t.stability = c.boolean("pipeline.stability");
  t.stability_delta = c.real("pipeline.stability_delta");
  t.hist_range = c.real("pipeline.hist_range");
  t.hist_bins = c.uinteger("pipeline.hist_bins");
  t.train.eta = c.real("train.eta");
  t.train.steps = c.integer("train.steps");
  t.train.snapshot_stride = t.train.steps;
  t.train.momentum = c.real("train.momentum");
  t.train.weight_decay = c.real("train.weight_decay");
  t.seed = c.seed();
  t.jobs = jobs;
  return t;
}

inline Artifacts run_toy_mi(const Config& c, unsigned jobs) {
  const auto rep = toy_pipeline(toy_config_from(c, jobs));
  Artifacts a;
  a.add("toy_mi.csv", detail::with_stream([&](std::ostream& os) { write_toy_mi_csv(os, rep); }));
  a.add("toy_stats.csv", detail::with_stream([&](std::ostream& os) { write_toy_stats_csv(os, rep); }));
  a.add("toy_hist.csv", detail::with_stream([&](std::ostream& os) { write_toy_hist_csv(os, rep); }));
  a.add("toy_runs.csv", detail::with_stream([&](std::ostream& os) { write_toy_runs_csv(os, rep); }));
  a.add("toy_report.json", dump(to_json(rep)));
  std::ostringstream s;
  s << "fig3-toy-mi:\n";
  for (const auto& b : rep.batches)
    s << "  B = " << b.batch << ": Shannon MI " << detail::fmt(b.shannon_mi) << " nats, Gaussian IW "
      << detail::fmt(b.gaussian_iw) << " nats, flat fraction " << detail::fmt(b.flat_fraction) << "\n";
  a.summary = s.str();
  return a;
}

// ---------------------------------------------------------------------------
// fig4-sweeps
// ---------------------------------------------------------------------------

struct SweepPoint {
  std::string sweep;  // "classes" or "batch"
  std::size_t value = 0;
  std::size_t seed_index = 0;
  double fisher_trace = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
};

inline Artifacts run_sweeps(const Config& c, unsigned jobs) {
  const Seed seed = c.seed();
  const std::size_t dim = c.uinteger("data.dim");
  const std::size_t per = c.uinteger("data.per_class");
  const std::size_t seeds = c.uinteger("sweep.seeds");
  if (seeds < 2) throw ConfigError("sweep.seeds must be at least 2");
  const bool mc = c.string("sweep.fisher") == "mc";

  std::vector<SweepPoint> tasks;
  for (auto k : c.uintegers("sweep.classes"))
    for (std::size_t s = 0; s < seeds; ++s) tasks.push_back({"classes", k, s});
  for (auto b : c.uintegers("sweep.batches"))
    for (std::size_t s = 0; s < seeds; ++s) tasks.push_back({"batch", b, s});

  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    auto& t = tasks[i];
    const bool by_class = t.sweep == "classes";
    const std::size_t k = by_class ? t.value : c.uinteger("sweep.base_classes");
    const std::size_t batch = by_class ? c.uinteger("sweep.base_batch") : t.value;
    const auto data = make_dataset_kclass(per * k, k, dim, derive(seed, 100 + t.seed_index));
    const auto m = detail::mlp_from(c, dim, k, Head::SoftmaxXent);
    const auto w0 = detail::scaled_init(m, c, derive(seed, 200 + t.seed_index));
    TrainConfig cfg;
    cfg.eta = c.real("train.eta");
    cfg.steps = c.integer("train.steps");
    cfg.snapshot_stride = cfg.steps;
    cfg.momentum = c.real("train.momentum");
    cfg.weight_decay = c.real("train.weight_decay");
    cfg.batch = batch;
    cfg.seed = derive(seed, 300 + t.seed_index);
    cfg.validate(data.size());
    const auto tr = sgd_train(m, data, cfg, w0);
    t.fisher_trace = mc ? fisher_trace_diag(m, tr.final, data.inputs, c.uinteger("sweep.mc_draws"),
                                            derive(seed, 400 + i))
                              .trace()
                        : fisher_exact_trace(m, tr.final, data.inputs).trace();
    t.train_loss = loss(m, tr.final, data);
    t.train_acc = accuracy(m, tr.final, data);
  });

  Artifacts a;
  std::ostringstream runs, summary, text;
  CsvWriter rw(runs);
  rw.header({"sweep", "value", "seed", "fisher_trace", "train_loss", "train_acc"});
  for (const auto& t : tasks) rw.row(t.sweep, t.value, t.seed_index, t.fisher_trace, t.train_loss, t.train_acc);
  CsvWriter sw(summary);
  sw.header({"sweep", "value", "mean_trace", "ci95"});
  text << "fig4-sweeps:\n";
  for (std::size_t i = 0; i < tasks.size(); i += seeds) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t j = i; j < i + seeds; ++j) s1 += tasks[j].fisher_trace;
    const double mean = s1 / static_cast<double>(seeds);
    for (std::size_t j = i; j < i + seeds; ++j) s2 += (tasks[j].fisher_trace - mean) * (tasks[j].fisher_trace - mean);
    const double sd = std::sqrt(s2 / static_cast<double>(seeds - 1));
    const double ci = 1.96 * sd / std::sqrt(static_cast<double>(seeds));
    sw.row(tasks[i].sweep, tasks[i].value, mean, ci);
    text << "  " << tasks[i].sweep << " = " << tasks[i].value << ": tr F " << detail::fmt(mean) << " +- "
         << detail::fmt(ci) << "\n";
  }
  a.add("fig4_runs.csv", runs.str());
  a.add("fig4_summary.csv", summary.str());
  a.summary = text.str();
  return a;
}

// ---------------------------------------------------------------------------
// kramers
// ---------------------------------------------------------------------------

inline Artifacts run_kramers(const Config& c, unsigned jobs) {
  const auto kind = c.string("landscape.kind");
  const ScalarLoss l = kind == "double-well"  ? double_well_1d(c.real("landscape.barrier"))
                       : kind == "cosine"     ? cosine_wells_1d(c.real("landscape.barrier"))
                                              : curved_double_well_2d(c.real("landscape.gamma"));
  const auto as_vector = [&](const std::string& key) {
    const auto v = c.reals(key);
    if (v.size() != l.dim()) throw ConfigError("key '" + key + "' needs " + std::to_string(l.dim()) + " entries");
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  const Vector start = as_vector("escape.start");
  const Region basin{as_vector("escape.basin_lo"), as_vector("escape.basin_hi")};
  std::optional<Vector> target;
  if (!c.reals("escape.target").empty()) target = as_vector("escape.target");
  const auto temps = c.reals("escape.temperatures");
  if (temps.size() < 2) throw ConfigError("escape.temperatures needs at least two entries");

  std::vector<EscapeTimeStats> stats;
  std::optional<SaddlePoint> saddle;
  for (std::size_t i = 0; i < temps.size(); ++i) {
    EscapeConfig e;
    e.temperature = temps[i];
    e.eta = c.real("escape.eta");
    e.runs = c.uinteger("escape.runs");
    e.max_steps = c.integer("escape.max_steps");
    e.seed = derive(c.seed(), i);
    e.jobs = jobs;
    stats.push_back(escape_time_mc(l, start, basin, e, target, saddle));
    saddle = stats.back().saddle;
  }
  const auto fit = fit_kramers(stats);

  Artifacts a;
  std::ostringstream csv;
  CsvWriter w(csv);
  w.header({"temperature", "inv_temperature", "runs", "censored", "mean_steps", "mean_time", "log_mean_time",
            "predicted_kramers"});
  for (const auto& s : stats)
    w.row(s.temperature, 1.0 / s.temperature, s.first_exit_steps.size() + s.censored, s.censored, s.mean_steps,
          s.mean_time, std::log(s.mean_time), s.predicted_kramers);
  a.add("kramers.csv", csv.str());
  Json runs = Json::array();
  for (const auto& s : stats) runs.push_back(to_json(s));
  a.add("kramers.json", dump(Json{{"fit", to_json(fit)}, {"barrier", stats.front().barrier}, {"runs", runs}}));
  a.summary = "kramers: slope " + detail::fmt(fit.slope) + " vs barrier " + detail::fmt(stats.front().barrier) +
              " (r^2 " + detail::fmt(fit.r2) + ")\n";
  return a;
}

// ---------------------------------------------------------------------------
// effective-info
// ---------------------------------------------------------------------------

struct SamplingCheck {
  double beta = 0.0;
  std::size_t draws = 0;
  double relative_error = 0.0;  // |C_mc - J Sigma J^T|_F / |J Sigma J^T|_F
  double damping = 0.0;
};

/// Sample covariance of perturbed activations against the linearization.
inline SamplingCheck activation_sampling_check(const ModelSpec& m, const WeightVector& w, const FisherEstimate& f,
                                               double beta, const Tensor& x, LayerId layer, std::size_t draws,
                                               Seed seed) {
  const auto pa = perturbed_activations(m, w, f, beta, x, draws, seed, layer);
  const auto dim = static_cast<Eigen::Index>(pa.samples.front().size());
  RowMatrix z(static_cast<Eigen::Index>(draws), dim);
  for (std::size_t s = 0; s < draws; ++s) z.row(static_cast<Eigen::Index>(s)) = pa.samples[s].as_rows().row(0);
  const RowMatrix centered = z.rowwise() - z.colwise().mean();
  const Matrix mc = centered.transpose() * centered / static_cast<double>(draws - 1);
  const Matrix jw = weight_jacobian(m, w, x, layer);
  const Matrix lin = jw * perturbation_covariance(f, beta).first * jw.transpose();
  return {beta, draws, (mc - lin).norm() / lin.norm(), pa.damping};
}

inline Artifacts run_effective_info(const Config& c, unsigned /*jobs*/) {
  const Seed seed = c.seed();
  const auto data = make_dataset_2d_binary(c.uinteger("data.n"), derive(seed, 1));
  const auto probe_set = make_dataset_2d_binary(c.uinteger("data.probes"), derive(seed, 2));
  const auto m = detail::mlp_from(c, 2, 1, Head::SigmoidXent);
  const auto w0 = detail::scaled_init(m, c, derive(seed, 3));
  const auto cfg = detail::train_from(c, derive(seed, 4));
  const auto w = sgd_train(m, data, cfg, w0).final;
  const auto f = fisher_exact(m, w, data.inputs);
  const LayerId layer{c.uinteger("info.layer")};
  if (layer.index > m.layers()) throw ConfigError("info.layer beyond the output layer");
  std::vector<Tensor> probes;
  for (Eigen::Index i = 0; i < probe_set.inputs.rows(); ++i)
    probes.push_back(Tensor::from(RowMatrix(probe_set.inputs.row(i))));
  const double hx = c.real("info.entropy_x");
  const std::optional<double> entropy = std::isnan(hx) ? std::nullopt : std::optional<double>(hx);

  std::vector<EffectiveInfoReport> reports;
  for (double beta : c.reals("info.betas")) reports.push_back(effective_mi(m, w, f, beta, probes, layer, entropy));
  const auto check = activation_sampling_check(m, w, f, c.real("info.mc_beta"), probes.front(), layer,
                                               c.uinteger("info.mc_draws"), derive(seed, 5));

  Artifacts a;
  a.add("effective_info.csv", detail::with_stream([&](std::ostream& os) { write_effective_info_csv(os, reports); }));
  std::ostringstream sweep;
  CsvWriter sw(sweep);
  sw.header({"beta", "delta_i", "i_eff", "damped"});
  for (const auto& r : reports) sw.row(r.beta, r.delta_i, r.i_eff ? format_double(*r.i_eff) : "", r.damped);
  a.add("delta_i.csv", sweep.str());
  Json reps = Json::array();
  for (const auto& r : reports) reps.push_back(to_json(r));
  a.add("effective_info.json",
        dump(Json{{"reports", reps},
                  {"sampling_check", Json{{"beta", check.beta},
                                          {"draws", check.draws},
                                          {"relative_error", check.relative_error},
                                          {"damping", check.damping}}}}));
  std::ostringstream s;
  s << "effective-info:\n";
  for (const auto& r : reports) s << "  beta = " << detail::fmt(r.beta) << ": delta-I " << detail::fmt(r.delta_i) << "\n";
  s << "  sampled covariance relative error " << detail::fmt(check.relative_error) << "\n";
  a.summary = s.str();
  return a;
}

inline Artifacts run_experiment(const Config& c, unsigned jobs) {
  const auto& e = c.experiment();
  if (e == "fig1-fisher-growth") return run_fisher_growth(c, jobs);
  if (e == "fig2-stability") return run_stability(c, jobs);
  if (e == "fig3-toy-mi") return run_toy_mi(c, jobs);
  if (e == "fig4-sweeps") return run_sweeps(c, jobs);
  if (e == "kramers") return run_kramers(c, jobs);
  if (e == "effective-info") return run_effective_info(c, jobs);
  throw ConfigError("unknown experiment '" + e + "'");
}

/// Manifest: resolved configuration, derived seeds and library versions.
inline Json manifest_json(const Config& c) {
  return Json{{"config", c.to_json()},
              {"experiment", c.experiment()},
              {"master_seed", c.seed().value},
              {"versions", Json{{"nninfo", NNINFO_VERSION},
                                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                              std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                              std::to_string(EIGEN_MINOR_VERSION)},
                                {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}};
}

}  // namespace nninfo::harness
