#pragma once

// Plain data for sensor readings and their binding onto the grid.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "stgp/errors.hpp"
#include "stgp/prior.hpp"

namespace stgp {

enum class SensorKind { strain6, gyro3, pose6, position3 };

inline const char* to_string(SensorKind k) {
  switch (k) {
    case SensorKind::strain6: return "strain6";
    case SensorKind::gyro3: return "gyro3";
    case SensorKind::pose6: return "pose6";
    case SensorKind::position3: return "position3";
  }
  return "unknown";
}

inline SensorKind sensor_kind_from_string(const std::string& s) {
  if (s == "strain6") return SensorKind::strain6;
  if (s == "gyro3") return SensorKind::gyro3;
  if (s == "pose6") return SensorKind::pose6;
  if (s == "position3") return SensorKind::position3;
  throw InvalidArgument("unknown sensor kind '" + s + "'");
}

/// Full (unmasked) dimension of a reading.
inline int sensor_dim(SensorKind k) {
  return (k == SensorKind::strain6 || k == SensorKind::pose6) ? 6 : 3;
}

struct Measurement {
  SensorKind kind = SensorKind::position3;
  double s = 0.0;  // m
  double t = 0.0;  // s
  // strain6: body strain (6); gyro3: body rate (3); position3: world position (3). Unused for pose6.
  Eigen::VectorXd value;
  Pose pose;  // pose6 only
  // Component selection for strain6; other kinds use every component.
  std::array<bool, 6> mask{true, true, true, true, true, true};
  Eigen::MatrixXd noise_cov;  // sensor_dim(kind) square

  int masked_dim() const {
    if (kind != SensorKind::strain6) return sensor_dim(kind);
    int m = 0;
    for (bool b : mask) m += b ? 1 : 0;
    return m;
  }
};

/// Where a query point sits inside the grid. (n, k) is the lower corner of the cell;
/// sigma/tau are offsets from it. `has_s` / `has_t` are false on knot lines, in which
/// case the corresponding interpolation stage is skipped.
struct CellLocation {
  std::size_t n = 0;
  std::size_t k = 0;
  double sigma = 0.0;
  double tau = 0.0;
  double ds = 0.0;  // cell width (0 when has_s is false)
  double dt = 0.0;
  bool has_s = false;
  bool has_t = false;
};

/// Linear maps of the two one-dimensional interpolation stages over a cell.
/// Interpolated chart = near * z_near + far * z_far; residual is the conditional covariance.
struct StageWeights {
  Mat24 near = Mat24::Identity();
  Mat24 far = Mat24::Zero();
  Mat24 residual = Mat24::Zero();
};

struct MeasurementFactor {
  Measurement meas;
  CellLocation loc;
  std::vector<std::size_t> nodes;  // 1, 2 or 4 node indices
  StageWeights temporal;
  StageWeights spatial;
  Eigen::MatrixXd information;  // masked_dim square
};

}  // namespace stgp
