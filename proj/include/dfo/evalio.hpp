#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dfo/errors.hpp"
#include "dfo/geometry.hpp"
#include "dfo/grid.hpp"

namespace dfo {

/// Ordered absolute camera-to-world poses. Integration composes each relative
/// pose (the pose of view k+1 expressed in view k's frame) onto the right of
/// the running absolute, so the first pose is always the identity.
struct Trajectory {
  std::vector<RigidTransform> poses;
  std::vector<int> indices;

  static Trajectory from_poses(std::vector<RigidTransform> p) {
    Trajectory t;
    t.indices.resize(p.size());
    for (size_t i = 0; i < p.size(); ++i) t.indices[i] = static_cast<int>(i);
    t.poses = std::move(p);
    return t;
  }
  size_t size() const { return poses.size(); }
};

/// The seven standard depth-evaluation numbers.
struct DepthMetrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;  // fraction with max(p/g, g/p) < 1.25
  double delta2 = 0.0;  // ... < 1.25^2
  double delta3 = 0.0;  // ... < 1.25^3
};

inline Trajectory read_kitti_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pose file: " + path);
  std::vector<RigidTransform> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    double v[12];
    for (int i = 0; i < 12; ++i)
      if (!(ss >> v[i])) throw MalformedLine(path, line_no);
    double extra;
    if (ss >> extra) throw MalformedLine(path, line_no);
    RigidTransform T;
    T.R << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    T.t = Vector3(v[3], v[7], v[11]);
    poses.push_back(T);
  }
  return Trajectory::from_poses(std::move(poses));
}

inline void write_kitti_poses(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open pose file for writing: " + path);
  char buf[32];
  for (const RigidTransform& T : traj.poses) {
    std::string line;
    const double v[12] = {T.R(0, 0), T.R(0, 1), T.R(0, 2), T.t[0],
                          T.R(1, 0), T.R(1, 1), T.R(1, 2), T.t[1],
                          T.R(2, 0), T.R(2, 1), T.R(2, 2), T.t[2]};
    for (int i = 0; i < 12; ++i) {
      std::snprintf(buf, sizeof(buf), "%.12g", v[i]);
      if (i) line += ' ';
      line += buf;
    }
    out << line << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

/// Chains relative poses into absolutes: A_0 = I, A_{k+1} = A_k * rel_k.
inline Trajectory integrate(const std::vector<RigidTransform>& relatives) {
  std::vector<RigidTransform> poses;
  poses.reserve(relatives.size() + 1);
  poses.push_back(RigidTransform::identity());
  for (const RigidTransform& rel : relatives) poses.push_back(compose(poses.back(), rel));
  return Trajectory::from_poses(std::move(poses));
}

/// Inverse of integrate: rel_k = A_k^{-1} * A_{k+1}.
inline std::vector<RigidTransform> pairwise_relatives(const Trajectory& traj) {
  std::vector<RigidTransform> rels;
  for (size_t k = 0; k + 1 < traj.poses.size(); ++k)
    rels.push_back(compose(inverse(traj.poses[k]), traj.poses[k + 1]));
  return rels;
}

/// Snippet absolute trajectory error. Every length-n window is re-anchored at
/// its first frame, the predicted translations are aligned to ground truth by
/// one least-squares scale factor, and the window's RMS translational error is
/// recorded; returns the mean and population standard deviation over windows.
inline std::pair<double, double> ate_snippets(const Trajectory& pred, const Trajectory& gt,
                                              int n) {
  if (pred.size() != gt.size() || n < 2 || pred.size() < static_cast<size_t>(n))
    throw LengthMismatch("ate_snippets: trajectories must have equal length >= snippet size");
  std::vector<double> rms;
  for (size_t start = 0; start + n <= pred.size(); ++start) {
    double dot = 0.0, sq = 0.0;
    for (int i = 1; i < n; ++i) {
      const Vector3 p = pred.poses[start + i].t - pred.poses[start].t;
      const Vector3 g = gt.poses[start + i].t - gt.poses[start].t;
      dot += p.dot(g);
      sq += p.dot(p);
    }
    const double s = sq > 0.0 ? dot / sq : 1.0;
    double err = 0.0;
    for (int i = 1; i < n; ++i) {
      const Vector3 p = pred.poses[start + i].t - pred.poses[start].t;
      const Vector3 g = gt.poses[start + i].t - gt.poses[start].t;
      err += (s * p - g).squaredNorm();
    }
    rms.push_back(std::sqrt(err / n));
  }
  double mean = 0.0;
  for (double v : rms) mean += v;
  mean /= static_cast<double>(rms.size());
  double var = 0.0;
  for (double v : rms) var += (v - mean) * (v - mean);
  var /= static_cast<double>(rms.size());
  return {mean, std::sqrt(var)};
}

namespace detail {

inline double median_inplace(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Standard seven depth metrics over masked pixels. Ground-truth pixels above
/// the cap are excluded; predictions are clamped to [1e-3, cap] before
/// comparison. With median_scale the prediction is first multiplied by
/// median(gt)/median(pred) over the evaluated pixels.
inline DepthMetrics depth_metrics(const Grid& pred, const Grid& gt, const Grid& mask,
                                  bool median_scale, double cap = 80.0) {
  if (!pred.same_shape(gt) || pred.channels() != 1 || mask.height() != pred.height() ||
      mask.width() != pred.width() || mask.channels() != 1)
    throw ShapeMismatch("depth_metrics: grid shapes");

  std::vector<double> p_vals, g_vals;
  for (int y = 0; y < pred.height(); ++y)
    for (int x = 0; x < pred.width(); ++x) {
      if (mask.at(y, x) == 0.0) continue;
      const double g = gt.at(y, x);
      if (!(g > 0.0) || g > cap) continue;
      p_vals.push_back(std::clamp(pred.at(y, x), 1e-3, cap));
      g_vals.push_back(g);
    }
  if (p_vals.empty()) throw EmptyMask();

  if (median_scale) {
    std::vector<double> pc = p_vals, gc = g_vals;
    const double scale = detail::median_inplace(gc) / detail::median_inplace(pc);
    for (double& p : p_vals) p = std::clamp(p * scale, 1e-3, cap);
  }

  DepthMetrics m;
  const double n = static_cast<double>(p_vals.size());
  double sq_sum = 0.0, log_sum = 0.0;
  for (size_t i = 0; i < p_vals.size(); ++i) {
    const double p = p_vals[i], g = g_vals[i], d = p - g;
    m.abs_rel += std::fabs(d) / g;
    m.sq_rel += d * d / g;
    sq_sum += d * d;
    const double ld = std::log(p) - std::log(g);
    log_sum += ld * ld;
    const double ratio = std::max(p / g, g / p);
    if (ratio < 1.25) m.delta1 += 1.0;
    if (ratio < 1.25 * 1.25) m.delta2 += 1.0;
    if (ratio < 1.25 * 1.25 * 1.25) m.delta3 += 1.0;
  }
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rmse = std::sqrt(sq_sum / n);
  m.rmse_log = std::sqrt(log_sum / n);
  m.delta1 /= n;
  m.delta2 /= n;
  m.delta3 /= n;
  return m;
}

namespace detail {

inline std::string fmt_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Aligned human-readable metric table.
inline std::string metrics_table(const DepthMetrics& m) {
  char buf[256];
  std::string out = "abs_rel   sq_rel    rmse      rmse_log  d<1.25    d<1.25^2  d<1.25^3\n";
  std::snprintf(buf, sizeof(buf), "%-9.4f %-9.4f %-9.4f %-9.4f %-9.4f %-9.4f %-9.4f\n",
                m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3);
  return out + buf;
}

/// Full-precision key-value dump.
inline std::string metrics_kv(const DepthMetrics& m) {
  std::string out;
  out += "abs_rel=" + detail::fmt_metric(m.abs_rel) + "\n";
  out += "sq_rel=" + detail::fmt_metric(m.sq_rel) + "\n";
  out += "rmse=" + detail::fmt_metric(m.rmse) + "\n";
  out += "rmse_log=" + detail::fmt_metric(m.rmse_log) + "\n";
  out += "delta1=" + detail::fmt_metric(m.delta1) + "\n";
  out += "delta2=" + detail::fmt_metric(m.delta2) + "\n";
  out += "delta3=" + detail::fmt_metric(m.delta3) + "\n";
  return out;
}

}  // namespace dfo
