#include "nninfo/harness/run.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <thread>

namespace hn = nninfo::harness;

namespace {

std::string config_template(const std::string& experiment) {
  std::ostringstream os;
  std::string section;
  for (const auto& k : hn::schema_for(experiment)) {
    if (k.section != section) {
      section = k.section;
      os << "\n[" << section << "]\n";
    }
    os << "# " << k.doc << " (" << hn::to_string(k.type) << ")\n";
    os << k.key << " = " << (k.key == "experiment" ? experiment : k.fallback) << "\n";
  }
  return os.str();
}

int run_command(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<std::string> out,
                unsigned jobs) {
  hn::Config c;
  try {
    c = hn::load_config(config_path);
    if (seed) c.set("seed", std::to_string(*seed));
    if (out) c.set("out", *out);
  } catch (const nninfo::Error& e) {
    std::cerr << hn::error_json(e).dump() << "\n";
    return hn::exit_code_for(e);
  }
  try {
    const auto r = hn::run_to_directory(c, c.string("out"), jobs);
    (r.exit_code == hn::kExitOk ? std::cout : std::cerr) << r.summary;
    return r.exit_code;
  } catch (const nninfo::Error& e) {
    std::cerr << hn::error_json(e).dump() << "\n";
    return hn::exit_code_for(e);
  }
}

int report_command(const std::string& dir) {
  try {
    const auto r = hn::report_directory(dir);
    std::cout << "experiment: " << r.experiment << "\n" << hn::format_checks(r.checks);
    return r.all_pass() ? 0 : 1;
  } catch (const nninfo::Error& e) {
    std::cerr << hn::error_json(e).dump() << "\n";
    return hn::kExitConfig;
  } catch (const nninfo::Json::exception& e) {
    std::cerr << "malformed result file: " << e.what() << "\n";
    return hn::kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Information in the weights and activations of small networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", NNINFO_VERSION);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  auto* run = app.add_subcommand("run", "run an experiment from a config file or manifest.json");
  run->add_option("config", config_path, "config file (.ini-style text or .json) or a manifest")->required();
  run->add_option("--seed", seed, "override the master seed");
  run->add_option("--out", out, "override the output directory");
  run->add_option("--jobs", jobs, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);

  std::string dir;
  auto* report = app.add_subcommand("report", "evaluate the trend checks of a result directory");
  report->add_option("dir", dir, "directory written by `run`")->required();

  std::string experiment;
  auto* tmpl = app.add_subcommand("template", "print a config with every key at its default");
  tmpl->add_option("experiment", experiment, "experiment name")
      ->required()
      ->check(CLI::IsMember(hn::experiment_names()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : hn::kExitConfig;
  }
  if (*run) return run_command(config_path, seed, out, jobs);
  if (*report) return report_command(dir);
  std::cout << config_template(experiment);
  return 0;
}
