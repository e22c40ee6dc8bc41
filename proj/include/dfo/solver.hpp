#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dfo/geometry.hpp"
#include "dfo/grid.hpp"
#include "dfo/pyramid.hpp"
#include "dfo/selection.hpp"

namespace dfo {

/// One selected point's patch residual at the current pose.
struct ResidualPoint {
  Pixel pixel;          // target-frame location (integer lattice site)
  double depth = 0.0;   // target depth at that pixel
  Eigen::VectorXd r;    // patch(target) - patch(warped source), C*k*k entries
  double sq_norm = 0.0;
  bool valid = true;
};

struct ResidualSet {
  std::vector<ResidualPoint> points;
  int patch_k = 1;
  int channels = 1;
};

/// Iteration limits and safeguards for the Gauss-Newton loops.
struct SolverConfig {
  int max_iterations = 15;
  // Stop once the accepted step's size drops below this. The step size is
  // measured with the translation component divided by the level's mean
  // depth, which makes the stopping rule invariant to a global depth rescale
  // (the raw twist norm is not, since translation steps scale with depth).
  double convergence = 1e-7;
  double lambda_min = 1e-6;  // damping floor
  double lambda_max = 1e2;   // escalation cap (x10 per rejected step)
  int min_inliers = 24;      // 4 per degree of freedom
  bool strict_ic = false;    // freeze Jacobians at a level's first iteration
  std::array<bool, kPyramidLevels> level_enabled = {true, true, true, true};
};

struct IterationLog {
  int iteration = 0;
  double energy_before = 0.0;  // matched-point energy at the incoming pose
  double energy_after = 0.0;   // matched-point energy at the trial pose
  int inliers = 0;
  double threshold = 0.0;  // outlier threshold applied this iteration
  double lambda = 0.0;
  double step_norm = 0.0;  // depth-normalized step size used for convergence
  bool accepted = false;
};

struct LevelLog {
  int level = 0;
  bool enabled = true;
  bool skipped = false;  // too few usable points; initialization passed through
  bool failed = false;   // singular system; initialization passed through
  bool converged = false;
  double zbar = 0.0;  // mean level depth used by the translation rescale
  std::string note;
  std::vector<IterationLog> iterations;
};

struct SolveReport {
  RigidTransform pose;  // target-to-source estimate at the finest solved level
  bool converged = false;
  std::vector<LevelLog> levels;  // in processing order, coarse to fine
};

namespace detail {

/// Patch residual for one point at pose T, or nothing when either patch is
/// unusable (border support or point behind the camera).
inline std::optional<Eigen::VectorXd> point_residual(const Grid& feat_target,
                                                     const Grid& feat_source,
                                                     const Pixel& pixel, double depth,
                                                     const RigidTransform& T,
                                                     const Intrinsics& K,
                                                     const PatchSpec& spec) {
  const SampleResult target = extract_patch(feat_target, pixel, spec);
  if (!target.valid) return std::nullopt;
  WarpedPoint wp;
  try {
    wp = warp_point(pixel, depth, T, K);
  } catch (const PointBehindCamera&) {
    return std::nullopt;
  }
  const SampleResult source = extract_patch(feat_source, wp.pixel, spec);
  if (!source.valid) return std::nullopt;
  return target.values - source.values;
}

}  // namespace detail

/// Builds the residual set over mask-selected pixels (weight exactly 1):
/// r_i = patch(feat_target, u_i) - patch(feat_source, warp(u_i, z_i, T)).
/// Points with nonpositive depth, border patch support, or warps leaving the
/// image are excluded.
inline ResidualSet compute_residuals(const Grid& feat_target, const Grid& feat_source,
                                     const Grid& depth, const SelectionMask& mask,
                                     const RigidTransform& T, const Intrinsics& K,
                                     const PatchSpec& spec) {
  if (!feat_target.same_shape(feat_source))
    throw ShapeMismatch("compute_residuals: feature grids differ in shape");
  if (depth.height() != feat_target.height() || depth.width() != feat_target.width() ||
      depth.channels() != 1)
    throw ShapeMismatch("compute_residuals: depth grid shape");
  if (mask.weights.height() != feat_target.height() ||
      mask.weights.width() != feat_target.width())
    throw ShapeMismatch("compute_residuals: mask shape");

  ResidualSet rs;
  rs.patch_k = spec.k;
  rs.channels = feat_target.channels();
  for (int y = 0; y < feat_target.height(); ++y) {
    for (int x = 0; x < feat_target.width(); ++x) {
      if (mask.weights.at(y, x) != 1.0) continue;
      const double z = depth.at(y, x);
      if (!(z > 0.0)) continue;
      const Pixel p{double(x), double(y)};
      auto r = detail::point_residual(feat_target, feat_source, p, z, T, K, spec);
      if (!r) continue;
      ResidualPoint pt;
      pt.pixel = p;
      pt.depth = z;
      pt.sq_norm = r->squaredNorm();
      pt.r = std::move(*r);
      rs.points.push_back(std::move(pt));
    }
  }
  return rs;
}

/// Median of the valid squared norms averaged with their maximum. Callers drop
/// points with sq_norm >= threshold (unless all norms are equal; see
/// solve_level's degenerate guard).
inline double outlier_threshold(const ResidualSet& rs) {
  std::vector<double> norms;
  for (const ResidualPoint& p : rs.points)
    if (p.valid) norms.push_back(p.sq_norm);
  if (norms.empty()) throw EmptyResidualSet();
  std::sort(norms.begin(), norms.end());
  const size_t n = norms.size();
  const double median =
      (n % 2 == 1) ? norms[n / 2] : 0.5 * (norms[n / 2 - 1] + norms[n / 2]);
  return 0.5 * (median + norms.back());
}

namespace detail {

/// d(projected pixel)/d(twist) at the linearization point: the 2x3 pinhole
/// derivative at Y = T0 * X times [I | -skew(Y)].
inline Eigen::Matrix<double, 2, 6> projection_jacobian(const Vector3& Y,
                                                       const Intrinsics& K) {
  const double iz = 1.0 / Y.z();
  Eigen::Matrix<double, 2, 3> P;
  P << K.fx * iz, 0.0, -K.fx * Y.x() * iz * iz, 0.0, K.fy * iz, -K.fy * Y.y() * iz * iz;
  Eigen::Matrix<double, 3, 6> D;
  D.leftCols<3>() = Matrix3::Identity();
  D.rightCols<3>() = -skew(Y);
  return P * D;
}

/// Jacobian of one point's patch residual w.r.t. a left-composed twist,
/// evaluated at pose T0. Rows follow the patch layout (channel-major, then
/// row-major offsets); sign matches r = target - warped source.
inline std::optional<Eigen::MatrixXd> point_jacobian(const Grid& feat_source,
                                                     const Pixel& pixel, double depth,
                                                     const RigidTransform& T0,
                                                     const Intrinsics& K,
                                                     const PatchSpec& spec) {
  WarpedPoint wp;
  Vector3 Y;
  try {
    Y = T0 * backproject(pixel, depth, K);
    if (Y.z() <= 1e-9) return std::nullopt;
    wp.pixel = project(Y, K);
  } catch (const Error&) {
    return std::nullopt;
  }
  const Eigen::Matrix<double, 2, 6> Pi = projection_jacobian(Y, K);
  const int C = feat_source.channels(), k = spec.k, rad = spec.radius();
  Eigen::MatrixXd J(C * k * k, 6);
  for (int dy = -rad; dy <= rad; ++dy) {
    for (int dx = -rad; dx <= rad; ++dx) {
      const GradientResult g =
          bilinear_gradient(feat_source, Pixel{wp.pixel.u + dx, wp.pixel.v + dy});
      if (!g.valid) return std::nullopt;
      const int cell = (dy + rad) * k + (dx + rad);
      for (int c = 0; c < C; ++c)
        J.row(c * k * k + cell) = -(g.grad.col(c).transpose() * Pi);
    }
  }
  return J;
}

}  // namespace detail

/// Per-point Jacobians aligned with rs.points (evaluated at T0). Points whose
/// gradient support is unusable get an empty matrix; with rs built from
/// compute_residuals at the same T0 this does not occur.
inline std::vector<Eigen::MatrixXd> jacobians_for(const ResidualSet& rs,
                                                  const Grid& feat_source,
                                                  const RigidTransform& T0,
                                                  const Intrinsics& K,
                                                  const PatchSpec& spec) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(rs.points.size());
  for (const ResidualPoint& p : rs.points) {
    auto J = detail::point_jacobian(feat_source, p.pixel, p.depth, T0, K, spec);
    out.push_back(J ? std::move(*J) : Eigen::MatrixXd());
  }
  return out;
}

/// Spec-shaped entry: Jacobians for all mask-selected points with valid warp
/// support, in scan order.
inline std::vector<Eigen::MatrixXd> jacobian_ic(const Grid& feat_source, const Grid& depth,
                                                const SelectionMask& mask,
                                                const RigidTransform& T0,
                                                const Intrinsics& K, const PatchSpec& spec) {
  if (depth.height() != mask.weights.height() || depth.width() != mask.weights.width() ||
      depth.channels() != 1)
    throw ShapeMismatch("jacobian_ic: depth/mask shapes");
  std::vector<Eigen::MatrixXd> out;
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      if (mask.weights.at(y, x) != 1.0) continue;
      const double z = depth.at(y, x);
      if (!(z > 0.0)) continue;
      auto J = detail::point_jacobian(feat_source, Pixel{double(x), double(y)}, z, T0, K,
                                      spec);
      if (J) out.push_back(std::move(*J));
    }
  return out;
}

/// Damped normal-equation step: solves
///   (H + lambda diag(H)) dxi = -g,  H = sum J_i^T J_i,  g = sum J_i^T r_i.
/// The relative (diagonal) damping keeps the step equations exactly
/// equivariant under a global depth rescale, which absolute damping would
/// break. Throws SingularSystem when the undamped H is numerically rank
/// deficient (eigenvalue ratio above 1e12), since no damping level can make
/// such a system trustworthy.
inline Twist gauss_newton_step(const ResidualSet& rs, const std::vector<Eigen::MatrixXd>& J,
                               double lambda = 1e-6) {
  if (J.size() != rs.points.size())
    throw ShapeMismatch("gauss_newton_step: Jacobian list does not match residuals");
  Matrix6 H = Matrix6::Zero();
  Vector6 g = Vector6::Zero();
  for (size_t i = 0; i < rs.points.size(); ++i) {
    if (!rs.points[i].valid || J[i].size() == 0) continue;
    H.noalias() += J[i].transpose() * J[i];
    g.noalias() += J[i].transpose() * rs.points[i].r;
  }
  const Eigen::SelfAdjointEigenSolver<Matrix6> es(H);
  const double ev_min = es.eigenvalues().minCoeff();
  const double ev_max = es.eigenvalues().maxCoeff();
  if (!(ev_max > 0.0) || !(ev_min > 0.0) || ev_max / ev_min > 1e12) {
    const double cond =
        (ev_min > 0.0) ? ev_max / ev_min : std::numeric_limits<double>::infinity();
    throw SingularSystem(cond);
  }
  Matrix6 damped = H;
  damped.diagonal() += lambda * H.diagonal();
  const Vector6 dxi = damped.ldlt().solve(Vector6(-g));
  return Twist(dxi);
}

/// Left-compositional pose update (the increment acts in the current frame).
inline RigidTransform update_pose(const RigidTransform& T, const Twist& dxi) {
  return compose(exp_map(dxi), T);
}

namespace detail {

/// Energies over the points of `inliers` that warp validly at both poses, so
/// the acceptance comparison never mixes point sets.
struct MatchedEnergy {
  double before = 0.0, after = 0.0;
  int matched = 0;
};

inline MatchedEnergy matched_energy(const ResidualSet& inliers, const Grid& feat_target,
                                    const Grid& feat_source, const RigidTransform& T_trial,
                                    const Intrinsics& K, const PatchSpec& spec) {
  MatchedEnergy e;
  for (const ResidualPoint& p : inliers.points) {
    if (!p.valid) continue;
    auto r = point_residual(feat_target, feat_source, p.pixel, p.depth, T_trial, K, spec);
    if (!r) continue;
    e.before += p.sq_norm;
    e.after += r->squaredNorm();
    ++e.matched;
  }
  return e;
}

}  // namespace detail

/// One pyramid level of damped Gauss-Newton with per-iteration outlier
/// removal. Pre: feature grids are z-score normalized. Returns the refined
/// pose (or the initialization when the level is skipped) plus the log.
inline std::pair<RigidTransform, LevelLog> solve_level(
    const Grid& feat_target, const Grid& feat_source, const Grid& depth,
    const SelectionMask& mask, const RigidTransform& T_init, const Intrinsics& K,
    const PatchSpec& spec, const SolverConfig& cfg) {
  LevelLog log;
  RigidTransform T = T_init;
  bool any_accepted = false;
  const double raw_zbar = mean_depth(depth);
  const double zbar = raw_zbar > 0.0 ? raw_zbar : 1.0;  // convergence metric scale
  // strict_ic freezes per-point Jacobians at this level's first evaluation.
  std::map<std::pair<int, int>, Eigen::MatrixXd> frozen;

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    ResidualSet rs = compute_residuals(feat_target, feat_source, depth, mask, T, K, spec);
    if (static_cast<int>(rs.points.size()) < cfg.min_inliers) {
      if (!any_accepted) {
        log.skipped = true;
        log.note = "skipped: " + std::to_string(rs.points.size()) +
                   " usable points below the minimum of " + std::to_string(cfg.min_inliers);
        return {T_init, log};
      }
      log.note = "stopped early: usable points fell below the minimum";
      break;
    }

    // Outlier removal; when every norm is identical the formula would discard
    // all points, so removal is skipped for that iteration.
    const double threshold = outlier_threshold(rs);
    double max_norm = 0.0, min_norm = std::numeric_limits<double>::infinity();
    for (const ResidualPoint& p : rs.points) {
      max_norm = std::max(max_norm, p.sq_norm);
      min_norm = std::min(min_norm, p.sq_norm);
    }
    ResidualSet inliers;
    inliers.patch_k = rs.patch_k;
    inliers.channels = rs.channels;
    if (min_norm == max_norm) {
      inliers.points = std::move(rs.points);
    } else {
      for (ResidualPoint& p : rs.points)
        if (p.sq_norm < threshold) inliers.points.push_back(std::move(p));
    }
    if (static_cast<int>(inliers.points.size()) < cfg.min_inliers) {
      if (!any_accepted) {
        log.skipped = true;
        log.note = "skipped: inliers below the minimum after outlier removal";
        return {T_init, log};
      }
      log.note = "stopped early: inliers fell below the minimum";
      break;
    }

    std::vector<Eigen::MatrixXd> J;
    if (cfg.strict_ic) {
      J.reserve(inliers.points.size());
      for (const ResidualPoint& p : inliers.points) {
        const std::pair<int, int> key{int(p.pixel.v), int(p.pixel.u)};
        auto it = frozen.find(key);
        if (it == frozen.end()) {
          auto Jp = detail::point_jacobian(feat_source, p.pixel, p.depth, T, K, spec);
          it = frozen.emplace(key, Jp ? std::move(*Jp) : Eigen::MatrixXd()).first;
        }
        J.push_back(it->second);
      }
    } else {
      J = jacobians_for(inliers, feat_source, T, K, spec);
    }

    double lambda = cfg.lambda_min;
    bool accepted = false;
    while (true) {
      Twist dxi;
      try {
        dxi = gauss_newton_step(inliers, J, lambda);
      } catch (const SingularSystem&) {
        lambda *= 10.0;
        if (lambda > cfg.lambda_max) throw;
        continue;
      }
      const RigidTransform T_trial = update_pose(T, dxi);
      const detail::MatchedEnergy e =
          detail::matched_energy(inliers, feat_target, feat_source, T_trial, K, spec);
      IterationLog entry;
      entry.iteration = iter;
      entry.energy_before = e.before;
      entry.energy_after = e.after;
      entry.inliers = static_cast<int>(inliers.points.size());
      entry.threshold = threshold;
      entry.lambda = lambda;
      entry.step_norm =
          std::sqrt((dxi.v / zbar).squaredNorm() + dxi.w.squaredNorm());
      entry.accepted = e.matched > 0 && e.after <= e.before + 1e-12;
      log.iterations.push_back(entry);
      if (entry.accepted) {
        T = T_trial;
        any_accepted = true;
        accepted = true;
        if (entry.step_norm < cfg.convergence) log.converged = true;
        break;
      }
      lambda *= 10.0;
      if (lambda > cfg.lambda_max) {
        log.note = "damping exhausted without an energy decrease";
        break;
      }
    }
    if (!accepted || log.converged) break;
  }
  return {T, log};
}

using MaskPyramid = std::array<SelectionMask, kPyramidLevels>;

/// Coarse-to-fine schedule over the 4 levels. The pose starts at identity on
/// level 4; between consecutively processed levels the translation is rescaled
/// by the ratio of the levels' mean depths and the rotation carried unchanged.
/// A level that fails (singular) or is skipped passes its initialization
/// through and is logged.
inline SolveReport solve_pyramid(const Pyramid& feat_target, const Pyramid& feat_source,
                                 const Pyramid& depth_target, const MaskPyramid& masks,
                                 const Intrinsics& K, const SolverConfig& cfg) {
  SolveReport report;
  report.levels.reserve(kPyramidLevels);
  RigidTransform T = RigidTransform::identity();
  double prev_zbar = -1.0;

  for (int l = kPyramidLevels; l >= 1; --l) {
    LevelLog log;
    log.level = l;
    if (!cfg.level_enabled[l - 1]) {
      log.enabled = false;
      log.note = "disabled by configuration";
      report.levels.push_back(std::move(log));
      continue;
    }
    const double zbar = mean_depth(depth_target.level(l));
    log.zbar = zbar;
    if (prev_zbar > 0.0) T.t *= zbar / prev_zbar;
    prev_zbar = zbar;

    try {
      auto [Tl, level_log] = solve_level(feat_target.level(l), feat_source.level(l),
                                         depth_target.level(l), masks[l - 1], T,
                                         rescale_intrinsics(K, l),
                                         PatchSpec(feat_target.cfg(l).patch), cfg);
      level_log.level = l;
      level_log.zbar = zbar;
      if (!level_log.skipped) T = Tl;
      log = std::move(level_log);
    } catch (const SingularSystem& e) {
      log.failed = true;
      log.note = e.what();
    }
    report.levels.push_back(std::move(log));
  }
  report.pose = T;
  for (const LevelLog& l : report.levels)
    if (l.enabled && !l.skipped && !l.failed) report.converged = l.converged;
  return report;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Line-oriented human-readable solve log.
inline std::string report_text(const SolveReport& report) {
  std::string out;
  for (const LevelLog& l : report.levels) {
    out += "level " + std::to_string(l.level);
    if (!l.enabled) {
      out += ": disabled\n";
      continue;
    }
    out += " (mean depth " + detail::fmt_double(l.zbar) + ")";
    if (l.skipped) out += " skipped";
    if (l.failed) out += " failed";
    if (!l.note.empty()) out += " [" + l.note + "]";
    out += "\n";
    for (const IterationLog& it : l.iterations) {
      out += "  iter " + std::to_string(it.iteration) + ": E " +
             detail::fmt_double(it.energy_before) + " -> " +
             detail::fmt_double(it.energy_after) + ", inliers " +
             std::to_string(it.inliers) + ", threshold " +
             detail::fmt_double(it.threshold) + ", lambda " +
             detail::fmt_double(it.lambda) + ", |dxi| " +
             detail::fmt_double(it.step_norm) + (it.accepted ? "" : ", rejected") + "\n";
    }
    if (l.converged) out += "  converged\n";
  }
  out += std::string("pose: converged=") + (report.converged ? "1" : "0") + "\n";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out += "R" + std::to_string(i) + std::to_string(j) + "=" +
             detail::fmt_double(report.pose.R(i, j)) + "\n";
  for (int i = 0; i < 3; ++i)
    out += "t" + std::to_string(i) + "=" + detail::fmt_double(report.pose.t[i]) + "\n";
  return out;
}

/// Deterministic key-value dump of the full report (documented schema).
inline std::string report_kv(const SolveReport& report) {
  std::string out;
  out += std::string("converged=") + (report.converged ? "1" : "0") + "\n";
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out += "pose.R" + std::to_string(i) + std::to_string(j) + "=" +
             detail::fmt_double(report.pose.R(i, j)) + "\n";
  for (int i = 0; i < 3; ++i)
    out += "pose.t" + std::to_string(i) + "=" + detail::fmt_double(report.pose.t[i]) + "\n";
  for (const LevelLog& l : report.levels) {
    const std::string p = "level." + std::to_string(l.level) + ".";
    out += p + "enabled=" + (l.enabled ? "1" : "0") + "\n";
    if (!l.enabled) continue;
    out += p + "skipped=" + (l.skipped ? "1" : "0") + "\n";
    out += p + "failed=" + (l.failed ? "1" : "0") + "\n";
    out += p + "converged=" + (l.converged ? "1" : "0") + "\n";
    out += p + "zbar=" + detail::fmt_double(l.zbar) + "\n";
    out += p + "note=" + l.note + "\n";
    out += p + "iterations=" + std::to_string(l.iterations.size()) + "\n";
    for (size_t i = 0; i < l.iterations.size(); ++i) {
      const IterationLog& it = l.iterations[i];
      const std::string q = p + "iter." + std::to_string(i + 1) + ".";
      out += q + "energy_before=" + detail::fmt_double(it.energy_before) + "\n";
      out += q + "energy_after=" + detail::fmt_double(it.energy_after) + "\n";
      out += q + "inliers=" + std::to_string(it.inliers) + "\n";
      out += q + "threshold=" + detail::fmt_double(it.threshold) + "\n";
      out += q + "lambda=" + detail::fmt_double(it.lambda) + "\n";
      out += q + "step_norm=" + detail::fmt_double(it.step_norm) + "\n";
      out += q + "accepted=" + (it.accepted ? "1" : "0") + "\n";
    }
  }
  return out;
}

}  // namespace dfo
