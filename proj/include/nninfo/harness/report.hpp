#pragma once

// Trend checks over stored experiment outputs.

#include "nninfo/harness/config.hpp"
#include "nninfo/serialize.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>

namespace nninfo::harness {

/// A required result file is absent; the CLI maps it to exit code 2.
class MissingFileError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "missing-file"; }
};

inline constexpr double kFisherGrowthSpearman = 0.8;
inline constexpr std::size_t kFisherGrowthCheckpoints = 20;
inline constexpr double kKramersSlopeTolerance = 0.10;
inline constexpr std::size_t kKramersRuns = 500;
inline constexpr std::size_t kKramersTemperatures = 3;
inline constexpr double kApproxFactor = 2.0;
inline constexpr double kSamplingTolerance = 0.10;
// Order-of-magnitude targets with one decade of slack on each side.
inline constexpr double kSmallBatchMiLo = 0.1, kSmallBatchMiHi = 100.0;
inline constexpr double kGaussianIwLo = 1e2, kGaussianIwHi = 1e5;

struct TrendCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormError("missing CSV column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  std::vector<double> reals(const std::string& name) const {
    const auto c = column(name);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(parse_double(r.at(c)));
    return out;
  }
  std::vector<std::string> strings(const std::string& name) const {
    const auto c = column(name);
    std::vector<std::string> out;
    for (const auto& r : rows) out.push_back(r.at(c));
    return out;
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw FormError("ragged CSV row");
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw FormError("empty CSV file");
  return t;
}

// ---------------------------------------------------------------------------
// Trend statistics
// ---------------------------------------------------------------------------

/// Ranks starting at 1; ties share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t q = i; q <= j; ++q) r[idx[q]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "correlation needs two equal-length series");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

/// Increasing along the series, allowing one adjacent inversion whose 95%
/// intervals overlap.
inline bool increasing_up_to_one_inversion(const std::vector<double>& mean, const std::vector<double>& ci) {
  require(mean.size() == ci.size(), "means and intervals differ in length");
  std::size_t inversions = 0;
  for (std::size_t i = 0; i + 1 < mean.size(); ++i) {
    if (mean[i + 1] > mean[i]) continue;
    if (mean[i] - mean[i + 1] > ci[i] + ci[i + 1]) return false;
    ++inversions;
  }
  return inversions <= 1;
}

// ---------------------------------------------------------------------------
// Per-experiment checks
// ---------------------------------------------------------------------------

using FileReader = std::function<std::string(const std::string&)>;

namespace detail {

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s;
}

/// Rows sorted by a key column.
inline std::vector<std::size_t> order_by(const std::vector<double>& key) {
  std::vector<std::size_t> idx(key.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return key[a] < key[b]; });
  return idx;
}

inline std::vector<double> permute(const std::vector<double>& v, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace detail

inline std::vector<TrendCheck> check_fisher_growth(const FileReader& read) {
  const auto t = parse_csv(read("fisher_logdet.csv"));
  const auto step = t.reals("step");
  const auto ld = t.reals("logdet_F");
  std::vector<TrendCheck> out;
  out.push_back({"at least 20 checkpoints", ld.size() >= kFisherGrowthCheckpoints, std::to_string(ld.size())});
  const bool grew = !ld.empty() && ld.back() > ld.front();
  out.push_back({"final Fisher log-det exceeds its initial value", grew,
                 ld.empty() ? "no rows" : format_double(ld.front()) + " -> " + format_double(ld.back())});
  const double rho = ld.size() >= 2 ? spearman(step, ld) : 0.0;
  out.push_back({"Fisher log-det increases with step (Spearman > 0.8)", rho > kFisherGrowthSpearman,
                 "rho = " + format_double(rho)});
  return out;
}

inline std::vector<TrendCheck> check_stability(const FileReader& read) {
  const auto t = parse_csv(read("plane.csv"));
  const auto trace = t.strings("trace");
  const auto step = t.reals("step");
  const auto x = t.reals("x");
  const auto y = t.reals("y");
  bool origin = true;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (step[i] == 0.0 && (std::abs(x[i]) > 1e-9 || std::abs(y[i]) > 1e-9)) origin = false;
  const auto j = Json::parse(read("plane.json"));
  const double dist = j.at("endpoint_distance").get<double>();
  return {{"both paths start at the shared initialization", origin, ""},
          {"one-sample swap moves the end point", std::isfinite(dist) && dist > 0.0,
           "distance = " + format_double(dist)}};
}

inline std::vector<TrendCheck> check_toy_mi(const FileReader& read) {
  const auto mi_t = parse_csv(read("toy_mi.csv"));
  const auto st_t = parse_csv(read("toy_stats.csv"));
  const auto order = detail::order_by(mi_t.reals("batch_size"));
  const auto mi = detail::permute(mi_t.reals("shannon_mi_nats"), order);
  const auto iw = detail::permute(mi_t.reals("gaussian_iw_nats"), order);
  const auto st_order = detail::order_by(st_t.reals("batch_size"));
  const auto flat = detail::permute(st_t.reals("flat_fraction"), st_order);
  const auto approx = detail::permute(st_t.reals("fisher_approx_nats"), st_order);
  std::vector<TrendCheck> out;

  bool nonincreasing = true;
  for (std::size_t i = 0; i + 1 < mi.size(); ++i)
    if (mi[i] > mi[i + 1]) nonincreasing = false;
  const bool max_at_full = !mi.empty() && *std::max_element(mi.begin(), mi.end()) == mi.back();
  out.push_back({"MI decreases with batch size", nonincreasing && max_at_full, "MI by increasing B: " + detail::join(mi)});

  bool flat_up = true;
  for (std::size_t i = 0; i + 1 < flat.size(); ++i)
    if (!(flat[i] > flat[i + 1])) flat_up = false;
  out.push_back({"flat-region mass increases as batch size decreases", flat_up,
                 "flat fraction by increasing B: " + detail::join(flat)});

  const double small_mi = mi.empty() ? 0.0 : mi.front();
  out.push_back({"small-batch Shannon MI is of order 1-10 nats", small_mi >= kSmallBatchMiLo && small_mi <= kSmallBatchMiHi,
                 "MI = " + format_double(small_mi)});
  const double small_iw = iw.empty() ? 0.0 : iw.front();
  out.push_back({"small-batch Gaussian IW is of order 1e3-1e4 nats", small_iw >= kGaussianIwLo && small_iw <= kGaussianIwHi,
                 "IW = " + format_double(small_iw)});

  bool within = approx.size() == mi.size();
  double worst = 1.0;
  for (std::size_t i = 0; within && i < mi.size(); ++i) {
    const double r = approx[i] / mi[i];
    const double f = r >= 1.0 ? r : 1.0 / r;
    worst = std::max(worst, std::isfinite(f) ? f : INFINITY);
    if (!(f <= kApproxFactor)) within = false;
  }
  out.push_back({"Fisher approximation within a factor of 2 of the mixture MI", within,
                 "worst ratio " + format_double(worst)});
  return out;
}

inline std::vector<TrendCheck> check_sweeps(const FileReader& read) {
  const auto t = parse_csv(read("fig4_summary.csv"));
  const auto sweep = t.strings("sweep");
  const auto value = t.reals("value");
  const auto mean = t.reals("mean_trace");
  const auto ci = t.reals("ci95");
  std::vector<TrendCheck> out;
  for (const auto& [name, label] : {std::pair<std::string, std::string>{"classes", "class count"},
                                    std::pair<std::string, std::string>{"batch", "batch size"}}) {
    std::vector<double> v, m, c;
    for (std::size_t i = 0; i < sweep.size(); ++i)
      if (sweep[i] == name) {
        v.push_back(value[i]);
        m.push_back(mean[i]);
        c.push_back(ci[i]);
      }
    const auto order = detail::order_by(v);
    const auto ms = detail::permute(m, order);
    const auto cs = detail::permute(c, order);
    out.push_back({"Fisher trace increases with " + label, !ms.empty() && increasing_up_to_one_inversion(ms, cs),
                   "means: " + detail::join(ms)});
  }
  return out;
}

inline std::vector<TrendCheck> check_kramers(const FileReader& read) {
  const auto t = parse_csv(read("kramers.csv"));
  const auto j = Json::parse(read("kramers.json"));
  const double slope = j.at("fit").at("slope").get<double>();
  const double barrier = j.at("barrier").get<double>();
  const auto runs = t.reals("runs");
  const auto censored = t.reals("censored");
  bool enough = runs.size() >= kKramersTemperatures;
  for (std::size_t i = 0; i < runs.size(); ++i)
    if (runs[i] - censored[i] < static_cast<double>(kKramersRuns)) enough = false;
  const double rel = std::abs(slope - barrier) / barrier;
  return {{"at least 500 completed runs at each of 3 temperatures", enough, std::to_string(runs.size()) + " temperatures"},
          {"log exit time slope in 1/T within 10% of the barrier", rel <= kKramersSlopeTolerance,
           "slope " + format_double(slope) + ", barrier " + format_double(barrier)}};
}

inline std::vector<TrendCheck> check_effective_info(const FileReader& read) {
  const auto t = parse_csv(read("delta_i.csv"));
  const auto order = detail::order_by(t.reals("beta"));
  const auto di = detail::permute(t.reals("delta_i"), order);
  bool strict = di.size() >= 2;
  for (std::size_t i = 0; i + 1 < di.size(); ++i)
    if (!(di[i + 1] < di[i])) strict = false;
  const auto j = Json::parse(read("effective_info.json"));
  const double rel = j.at("sampling_check").at("relative_error").get<double>();
  return {{"delta-I strictly decreases as beta increases", strict, "delta-I by increasing beta: " + detail::join(di)},
          {"sampled activation covariance within 10% of the linearization", rel < kSamplingTolerance,
           "relative error " + format_double(rel)}};
}

inline std::vector<TrendCheck> check_experiment(const std::string& experiment, const FileReader& read) {
  if (experiment == "fig1-fisher-growth") return check_fisher_growth(read);
  if (experiment == "fig2-stability") return check_stability(read);
  if (experiment == "fig3-toy-mi") return check_toy_mi(read);
  if (experiment == "fig4-sweeps") return check_sweeps(read);
  if (experiment == "kramers") return check_kramers(read);
  if (experiment == "effective-info") return check_effective_info(read);
  throw ConfigError("unknown experiment '" + experiment + "'");
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw MissingFileError("cannot read " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

inline FileReader directory_reader(const std::filesystem::path& dir) {
  return [dir](const std::string& name) { return read_file(dir / name); };
}

struct ReportResult {
  std::string experiment;
  std::vector<TrendCheck> checks;
  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
  }
};

/// Reads the manifest in `dir` and evaluates the experiment's trend checks.
inline ReportResult report_directory(const std::filesystem::path& dir) {
  const auto read = directory_reader(dir);
  const Json manifest = Json::parse(read("manifest.json"));
  ReportResult r;
  r.experiment = manifest.at("experiment").get<std::string>();
  r.checks = check_experiment(r.experiment, read);
  return r;
}

inline std::string format_checks(const std::vector<TrendCheck>& checks) {
  std::ostringstream os;
  for (const auto& c : checks) {
    os << (c.pass ? "PASS" : "FAIL") << "  " << c.name;
    if (!c.detail.empty()) os << "  [" << c.detail << "]";
    os << "\n";
  }
  return os.str();
}

}  // namespace nninfo::harness
