#pragma once

// Config loading, artifact writing and error records for the CLI.

#include "nninfo/harness/config.hpp"
#include "nninfo/harness/experiments.hpp"
#include "nninfo/harness/report.hpp"

#include <filesystem>
#include <fstream>

namespace nninfo::harness {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

/// A text config, a bare JSON config, or a manifest (its "config" member).
inline Config load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const MissingFileError& e) {
    throw ConfigError(e.what());
  }
  if (path.extension() == ".json") {
    Json j;
    try {
      j = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw ConfigError(std::string("malformed JSON config: ") + e.what());
    }
    return Config::from_json(j.contains("config") ? j.at("config") : j);
  }
  return parse_config(text);
}

/// Exit code of a module error: invalid inputs map to 2, numerical failures to 3.
inline int exit_code_for(const Error& e) {
  const std::string k = e.kind();
  if (k == "config" || k == "missing-file" || k == "argument" || k == "shape" || k == "capacity") return kExitConfig;
  return kExitNumerical;
}

inline Json error_json(const Error& e) {
  Json err{{"kind", e.kind()}, {"message", e.what()}};
  if (const auto* d = dynamic_cast<const DivergenceError*>(&e)) err["step"] = d->step();
  return Json{{"exit_code", exit_code_for(e)}, {"error", err}};
}

/// The manifest echoes every resolved key except the output directory, so a
/// rerun elsewhere writes an identical manifest.
inline Json run_manifest(const Config& c) {
  Json m = manifest_json(c);
  m["config"].erase("out");
  return m;
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write " + p.string());
  os << bytes;
  if (!os) throw ConfigError("failed writing " + p.string());
}

struct RunOutcome {
  int exit_code = kExitOk;
  std::string summary;
  std::vector<std::string> files;
};

/// Runs the experiment and writes manifest.json, its result files and
/// summary.txt into `out`; failures write error.json instead of results.
inline RunOutcome run_to_directory(const Config& c, const std::filesystem::path& out, unsigned jobs) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw ConfigError("cannot create output directory " + out.string() + ": " + ec.message());
  std::filesystem::remove(out / "error.json", ec);
  RunOutcome r;
  write_file(out / "manifest.json", dump(run_manifest(c)));
  r.files.push_back("manifest.json");
  try {
    const auto a = run_experiment(c, jobs);
    for (const auto& [name, bytes] : a.files) {
      write_file(out / name, bytes);
      r.files.push_back(name);
    }
    write_file(out / "summary.txt", a.summary);
    r.files.push_back("summary.txt");
    r.summary = a.summary;
  } catch (const Error& e) {
    write_file(out / "error.json", dump(error_json(e)));
    r.files.push_back("error.json");
    r.exit_code = exit_code_for(e);
    r.summary = std::string(e.kind()) + " error: " + e.what() + "\n";
  }
  return r;
}

}  // namespace nninfo::harness
