#pragma once

#include <stdexcept>
#include <string>

namespace dfo {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Rotation angle is within 1e-6 of pi; the rotation axis is ambiguous.
struct AngleNearPi : Error {
  AngleNearPi() : Error("log_map: rotation angle within 1e-6 of pi, axis ambiguous") {}
};

struct NonPositiveDepth : Error {
  NonPositiveDepth() : Error("backproject: depth must be positive") {}
};

struct PointBehindCamera : Error {
  PointBehindCamera() : Error("project: point z <= 1e-9, behind or on the camera plane") {}
};

struct InvalidLevel : Error {
  explicit InvalidLevel(int level)
      : Error("pyramid level must be in [1,4], got " + std::to_string(level)) {}
};

struct DegenerateChannel : Error {
  int channel;
  explicit DegenerateChannel(int channel_idx)
      : Error("zscore_normalize: channel " + std::to_string(channel_idx) +
              " has near-zero spatial variance"),
        channel(channel_idx) {}
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& what) : Error("shape mismatch: " + what) {}
};

struct EmptyResidualSet : Error {
  EmptyResidualSet() : Error("outlier_threshold: residual set has no valid points") {}
};

struct SingularSystem : Error {
  explicit SingularSystem(double cond)
      : Error("gauss_newton_step: normal equations numerically singular (condition " +
              std::to_string(cond) + ")") {}
};

struct NoValidPixels : Error {
  NoValidPixels() : Error("appearance_loss: no valid pixels to average over") {}
};

struct SceneBehindCamera : Error {
  SceneBehindCamera() : Error("render_view: scene surface behind the camera for some pixel") {}
};

struct MalformedLine : Error {
  MalformedLine(const std::string& path, int line)
      : Error("malformed line " + std::to_string(line) + " in " + path) {}
};

struct LengthMismatch : Error {
  explicit LengthMismatch(const std::string& what) : Error("length mismatch: " + what) {}
};

struct EmptyMask : Error {
  EmptyMask() : Error("depth_metrics: evaluation mask selects no pixels") {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io error: " + what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

}  // namespace dfo
