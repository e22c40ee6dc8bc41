#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dfo/errors.hpp"
#include "dfo/losses.hpp"
#include "dfo/pyramid.hpp"
#include "dfo/solver.hpp"

namespace dfo {

/// Everything a run needs: per-level pyramid settings, solver knobs, loss
/// weights and clip knees, selection temperature, seed, and paths. Defaults
/// are the documented working values; a config file overrides them key by key.
struct RunConfig {
  std::array<LevelConfig, kPyramidLevels> levels = default_level_configs();
  SolverConfig solver;
  LossWeights weights;
  double clip_dssim = kClipDssim;
  double clip_l1 = kClipL1;
  double tau = 0.1;
  uint64_t seed = 42;
  std::string input_dir;
  std::string output_dir;
  std::string feature_source = "external";  // intensity|gradient|random-projection|external
  int snippet_len = 3;
  std::string motion = "demo";  // synthetic trajectory: demo|identity
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw ConfigError(key + ": trailing characters in '" + value + "'");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError(key + ": cannot parse number '" + value + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw ConfigError(key + ": trailing characters in '" + value + "'");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError(key + ": cannot parse integer '" + value + "'");
  }
}

inline uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw ConfigError(key + ": trailing characters in '" + value + "'");
    return v;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError(key + ": cannot parse unsigned integer '" + value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

inline std::array<bool, kPyramidLevels> parse_level_list(const std::string& key,
                                                         const std::string& value) {
  std::array<bool, kPyramidLevels> enabled{};
  std::stringstream ss(value);
  std::string tok;
  bool any = false;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) throw ConfigError(key + ": empty level entry");
    const long long l = parse_int(key, tok);
    if (l < 1 || l > kPyramidLevels)
      throw ConfigError(key + ": level " + tok + " outside 1.." + std::to_string(kPyramidLevels));
    enabled[static_cast<size_t>(l - 1)] = true;
    any = true;
  }
  if (!any) throw ConfigError(key + ": no levels listed");
  return enabled;
}

}  // namespace detail

/// Checks every invariant the config must satisfy; throws ConfigError with the
/// offending key otherwise.
inline void validate_config(const RunConfig& cfg) {
  for (int l = 1; l <= kPyramidLevels; ++l) {
    const LevelConfig& lc = cfg.levels[static_cast<size_t>(l - 1)];
    const std::string prefix = "pyramid.level" + std::to_string(l);
    if (lc.channels < 1) throw ConfigError(prefix + ".channels: must be >= 1");
    if (lc.patch < 1 || lc.patch % 2 == 0)
      throw ConfigError(prefix + ".patch: must be a positive odd number");
    if (!(lc.rho > 0.0 && lc.rho < 1.0))
      throw ConfigError(prefix + ".rho: must lie strictly between 0 and 1");
  }
  if (cfg.solver.max_iterations < 1)
    throw ConfigError("solver.max_iterations: must be >= 1");
  if (!(cfg.solver.convergence > 0.0))
    throw ConfigError("solver.convergence: must be > 0");
  if (!(cfg.solver.lambda_min > 0.0) || !(cfg.solver.lambda_max >= cfg.solver.lambda_min))
    throw ConfigError("solver.lambda_min/lambda_max: need 0 < min <= max");
  if (cfg.solver.min_inliers < 6)
    throw ConfigError("solver.min_inliers: must be >= 6 (one per degree of freedom)");
  bool any_level = false;
  for (bool e : cfg.solver.level_enabled) any_level |= e;
  if (!any_level) throw ConfigError("solver.levels: at least one level must be enabled");
  if (cfg.weights.lambda_sm < 0.0 || cfg.weights.lambda_sp < 0.0 || cfg.weights.lambda_ae < 0.0)
    throw ConfigError("loss.lambda_*: weights must be >= 0");
  if (!(cfg.weights.alpha >= 0.0 && cfg.weights.alpha <= 1.0))
    throw ConfigError("loss.alpha: must lie in [0, 1]");
  if (!(cfg.clip_dssim > 0.0) || !(cfg.clip_l1 > 0.0))
    throw ConfigError("loss.clip_dssim/clip_l1: must be > 0");
  if (!(cfg.tau > 0.0)) throw ConfigError("selection.tau: must be > 0");
  if (cfg.snippet_len != 3 && cfg.snippet_len != 5)
    throw ConfigError("run.snippet_len: must be 3 or 5");
  static const std::set<std::string> kSources = {"intensity", "gradient", "random-projection",
                                                "external"};
  if (!kSources.count(cfg.feature_source))
    throw ConfigError("run.feature_source: unknown source '" + cfg.feature_source + "'");
  if (cfg.motion != "demo" && cfg.motion != "identity")
    throw ConfigError("run.motion: must be demo or identity");
}

/// Parses INI-style text: [section] headers, key = value lines, # or ;
/// comments. Every key must belong to the documented schema; anything unknown
/// raises ConfigError.
inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "pyramid" && section != "solver" && section != "loss" &&
          section != "selection" && section != "run")
        throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    const std::string full = section + "." + key;

    if (section == "pyramid") {
      // Keys look like levelN.channels / levelN.patch / levelN.rho.
      if (key.size() < 8 || key.compare(0, 5, "level") != 0)
        throw ConfigError(full + ": unknown key");
      const size_t dot = key.find('.');
      if (dot == std::string::npos) throw ConfigError(full + ": unknown key");
      const std::string idx = key.substr(5, dot - 5);
      const std::string field = key.substr(dot + 1);
      const long long l = detail::parse_int(full, idx);
      if (l < 1 || l > kPyramidLevels) throw ConfigError(full + ": level outside 1..4");
      LevelConfig& lc = cfg.levels[static_cast<size_t>(l - 1)];
      if (field == "channels")
        lc.channels = static_cast<int>(detail::parse_int(full, value));
      else if (field == "patch")
        lc.patch = static_cast<int>(detail::parse_int(full, value));
      else if (field == "rho")
        lc.rho = detail::parse_double(full, value);
      else
        throw ConfigError(full + ": unknown key");
    } else if (section == "solver") {
      if (key == "max_iterations")
        cfg.solver.max_iterations = static_cast<int>(detail::parse_int(full, value));
      else if (key == "convergence")
        cfg.solver.convergence = detail::parse_double(full, value);
      else if (key == "lambda_min")
        cfg.solver.lambda_min = detail::parse_double(full, value);
      else if (key == "lambda_max")
        cfg.solver.lambda_max = detail::parse_double(full, value);
      else if (key == "min_inliers")
        cfg.solver.min_inliers = static_cast<int>(detail::parse_int(full, value));
      else if (key == "strict_ic")
        cfg.solver.strict_ic = detail::parse_bool(full, value);
      else if (key == "levels")
        cfg.solver.level_enabled = detail::parse_level_list(full, value);
      else
        throw ConfigError(full + ": unknown key");
    } else if (section == "loss") {
      if (key == "lambda_smooth")
        cfg.weights.lambda_sm = detail::parse_double(full, value);
      else if (key == "lambda_sparsity")
        cfg.weights.lambda_sp = detail::parse_double(full, value);
      else if (key == "lambda_reconstruction")
        cfg.weights.lambda_ae = detail::parse_double(full, value);
      else if (key == "alpha")
        cfg.weights.alpha = detail::parse_double(full, value);
      else if (key == "clip_dssim")
        cfg.clip_dssim = detail::parse_double(full, value);
      else if (key == "clip_l1")
        cfg.clip_l1 = detail::parse_double(full, value);
      else
        throw ConfigError(full + ": unknown key");
    } else if (section == "selection") {
      if (key == "tau")
        cfg.tau = detail::parse_double(full, value);
      else
        throw ConfigError(full + ": unknown key");
    } else if (section == "run") {
      if (key == "seed")
        cfg.seed = detail::parse_u64(full, value);
      else if (key == "input")
        cfg.input_dir = value;
      else if (key == "output")
        cfg.output_dir = value;
      else if (key == "feature_source")
        cfg.feature_source = value;
      else if (key == "snippet_len")
        cfg.snippet_len = static_cast<int>(detail::parse_int(full, value));
      else if (key == "motion")
        cfg.motion = value;
      else
        throw ConfigError(full + ": unknown key");
    } else {
      throw ConfigError(where + ": key '" + key + "' outside any section");
    }
  }
  validate_config(cfg);
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

/// Canonical dump; parse_config_text(config_text(cfg)) reproduces cfg.
inline std::string config_text(const RunConfig& cfg) {
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string out;
  out += "[pyramid]\n";
  for (int l = 1; l <= kPyramidLevels; ++l) {
    const LevelConfig& lc = cfg.levels[static_cast<size_t>(l - 1)];
    const std::string p = "level" + std::to_string(l) + ".";
    out += p + "channels = " + std::to_string(lc.channels) + "\n";
    out += p + "patch = " + std::to_string(lc.patch) + "\n";
    out += p + "rho = " + num(lc.rho) + "\n";
  }
  out += "[solver]\n";
  out += "max_iterations = " + std::to_string(cfg.solver.max_iterations) + "\n";
  out += "convergence = " + num(cfg.solver.convergence) + "\n";
  out += "lambda_min = " + num(cfg.solver.lambda_min) + "\n";
  out += "lambda_max = " + num(cfg.solver.lambda_max) + "\n";
  out += "min_inliers = " + std::to_string(cfg.solver.min_inliers) + "\n";
  out += std::string("strict_ic = ") + (cfg.solver.strict_ic ? "true" : "false") + "\n";
  out += "levels = ";
  bool first = true;
  for (int l = 1; l <= kPyramidLevels; ++l)
    if (cfg.solver.level_enabled[static_cast<size_t>(l - 1)]) {
      if (!first) out += ",";
      out += std::to_string(l);
      first = false;
    }
  out += "\n[loss]\n";
  out += "lambda_smooth = " + num(cfg.weights.lambda_sm) + "\n";
  out += "lambda_sparsity = " + num(cfg.weights.lambda_sp) + "\n";
  out += "lambda_reconstruction = " + num(cfg.weights.lambda_ae) + "\n";
  out += "alpha = " + num(cfg.weights.alpha) + "\n";
  out += "clip_dssim = " + num(cfg.clip_dssim) + "\n";
  out += "clip_l1 = " + num(cfg.clip_l1) + "\n";
  out += "[selection]\n";
  out += "tau = " + num(cfg.tau) + "\n";
  out += "[run]\n";
  out += "seed = " + std::to_string(cfg.seed) + "\n";
  if (!cfg.input_dir.empty()) out += "input = " + cfg.input_dir + "\n";
  if (!cfg.output_dir.empty()) out += "output = " + cfg.output_dir + "\n";
  out += "feature_source = " + cfg.feature_source + "\n";
  out += "snippet_len = " + std::to_string(cfg.snippet_len) + "\n";
  out += "motion = " + cfg.motion + "\n";
  return out;
}

}  // namespace dfo
