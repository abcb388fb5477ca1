#pragma once

// SO(3) / SE(3) kernels.
//
// Conventions used throughout the library:
//   * twists are ordered linear-then-angular: xi = (rho, phi);
//   * perturbations act on the left: T <- exp(delta) * T;
//   * so3_log at an angle of exactly pi returns the axis whose first nonzero
//     component is positive.

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <unsupported/Eigen/AutoDiff>

#include "stgp/errors.hpp"

namespace stgp {

template <typename S>
using Vec3T = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Vec6T = Eigen::Matrix<S, 6, 1>;
template <typename S>
using Mat3T = Eigen::Matrix<S, 3, 3>;
template <typename S>
using Mat6T = Eigen::Matrix<S, 6, 6>;

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// 6-vector (v, omega): linear part first.
using Twist = Vec6;

namespace lie_detail {

// Below this angle exp/log switch to their second-order series.
inline constexpr double kExpSeriesAngle = 1e-8;
// Below this angle the Jacobian coefficients use Taylor series. The closed forms of
// the translational coupling block lose ~eps/theta^2 of relative accuracy, so the
// switch happens well above the exp/log threshold.
inline constexpr double kJacobianSeriesAngle = 1e-2;

// Coefficients of exp/Jacobian expansions, all written as functions of theta^2 so
// they stay differentiable (for autodiff scalars) through theta = 0.
template <typename S>
struct So3Coeffs {
  S a;  // sin(t)/t
  S b;  // (1 - cos t)/t^2
  S c;  // (t - sin t)/t^3
};

template <typename S>
So3Coeffs<S> so3_coeffs(const S& t2, double series_angle) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  if (t2 < series_angle * series_angle) {
    const S t4 = t2 * t2;
    const S t6 = t4 * t2;
    return {S(1.0) - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0,
            S(0.5) - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0,
            S(1.0 / 6.0) - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0};
  }
  const S t = sqrt(t2);
  const S s = sin(t);
  const S co = cos(t);
  return {s / t, (S(1.0) - co) / t2, (t - s) / (t2 * t)};
}

}  // namespace lie_detail

template <typename S>
Mat3T<S> hat(const Vec3T<S>& v) {
  Mat3T<S> m;
  m << S(0), -v(2), v(1),
       v(2), S(0), -v(0),
       -v(1), v(0), S(0);
  return m;
}

/// The 4x4 Lie-algebra matrix of a twist.
inline Mat4 hat(const Twist& xi) {
  Mat4 m = Mat4::Zero();
  m.topLeftCorner<3, 3>() = hat<double>(xi.tail<3>());
  m.topRightCorner<3, 1>() = xi.head<3>();
  return m;
}

/// Twist adjoint ad(xi) = [[phi^, rho^], [0, phi^]].
template <typename S>
Mat6T<S> curlyhat(const Vec6T<S>& xi) {
  Mat6T<S> m = Mat6T<S>::Zero();
  const Mat3T<S> ph = hat<S>(xi.template tail<3>());
  m.template topLeftCorner<3, 3>() = ph;
  m.template bottomRightCorner<3, 3>() = ph;
  m.template topRightCorner<3, 3>() = hat<S>(xi.template head<3>());
  return m;
}

inline bool is_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  if (!r.allFinite()) return false;
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

/// Rigid transform; maps body coordinates into the world frame.
class Pose {
 public:
  Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Pose(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}

  static Pose identity() { return {}; }
  static Pose from_matrix(const Mat4& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  Pose inverse() const {
    const Mat3 rt = rotation_.transpose();
    return {rt, -rt * translation_};
  }

  Pose operator*(const Pose& other) const {
    return {rotation_ * other.rotation_, rotation_ * other.translation_ + translation_};
  }

  Vec3 operator*(const Vec3& p) const { return rotation_ * p + translation_; }

  bool is_valid(double tol = 1e-9) const {
    return is_rotation(rotation_, tol) && translation_.allFinite();
  }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

/// Rodrigues map.
inline Mat3 so3_exp(const Vec3& phi) {
  if (!phi.allFinite()) throw InvalidArgument("so3_exp: non-finite rotation vector");
  const double t2 = phi.squaredNorm();
  const Mat3 ph = hat<double>(phi);
  if (t2 < lie_detail::kExpSeriesAngle * lie_detail::kExpSeriesAngle) {
    return Mat3::Identity() + ph + 0.5 * ph * ph;
  }
  const auto c = lie_detail::so3_coeffs<double>(t2, 0.0);
  return Mat3::Identity() + c.a * ph + c.b * ph * ph;
}

/// Principal-branch logarithm, |result| <= pi.
inline Vec3 so3_log(const Mat3& r) {
  if (!is_rotation(r)) throw InvalidArgument("so3_log: input is not a rotation matrix");
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  const Vec3 v = q.vec();
  const double n = v.norm();
  const double w = q.w();
  if (n < lie_detail::kExpSeriesAngle) {
    // 2*atan2(n, w)/n expanded around n = 0.
    return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * v;
  }
  const double angle = 2.0 * std::atan2(n, w);
  Vec3 axis = v / n;
  if (std::abs(M_PI - angle) < 1e-12) {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(axis(i)) > 1e-12) {
        if (axis(i) < 0.0) axis = -axis;
        break;
      }
    }
  }
  return angle * axis;
}

/// SO(3) left Jacobian J = I + b*phi^ + c*phi^phi^.
template <typename S>
Mat3T<S> so3_left_jacobian(const Vec3T<S>& phi) {
  const auto c = lie_detail::so3_coeffs<S>(phi.squaredNorm(), lie_detail::kJacobianSeriesAngle);
  const Mat3T<S> ph = hat<S>(phi);
  return Mat3T<S>::Identity() + c.b * ph + c.c * ph * ph;
}

inline Mat3 so3_left_jacobian_inv(const Vec3& phi) {
  const double t2 = phi.squaredNorm();
  double d;
  if (t2 < lie_detail::kJacobianSeriesAngle * lie_detail::kJacobianSeriesAngle) {
    d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1209600.0;
  } else {
    const double t = std::sqrt(t2);
    d = 1.0 / t2 - (1.0 + std::cos(t)) / (2.0 * t * std::sin(t));
  }
  const Mat3 ph = hat<double>(phi);
  return Mat3::Identity() - 0.5 * ph + d * ph * ph;
}

namespace lie_detail {

// Translational coupling block Q(rho, phi) of the SE(3) left Jacobian.
template <typename S>
Mat3T<S> se3_q_block(const Vec6T<S>& xi) {
  const Vec3T<S> rho = xi.template head<3>();
  const Vec3T<S> phi = xi.template tail<3>();
  const S t2 = phi.squaredNorm();
  S c1, c2, c3;
  if (t2 < kJacobianSeriesAngle * kJacobianSeriesAngle) {
    const S t4 = t2 * t2;
    const S t6 = t4 * t2;
    c1 = S(1.0 / 6.0) - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0;
    c2 = S(1.0 / 24.0) - t2 / 720.0 + t4 / 40320.0 - t6 / 3628800.0;
    c3 = S(1.0 / 120.0) - t2 / 2520.0 + t4 / 120960.0 - t6 / 9979200.0;
  } else {
    using std::cos;
    using std::sin;
    using std::sqrt;
    const S t = sqrt(t2);
    const S s = sin(t);
    const S co = cos(t);
    c1 = (t - s) / (t2 * t);
    c2 = (t2 + S(2.0) * co - S(2.0)) / (S(2.0) * t2 * t2);
    c3 = (S(2.0) * t - S(3.0) * s + t * co) / (S(2.0) * t2 * t2 * t);
  }
  const Mat3T<S> rx = hat<S>(rho);
  const Mat3T<S> px = hat<S>(phi);
  const Mat3T<S> pxrx = px * rx;
  const Mat3T<S> rxpx = rx * px;
  const Mat3T<S> pxrxpx = pxrx * px;
  const Mat3T<S> pxpx = px * px;
  return S(0.5) * rx + c1 * (pxrx + rxpx + pxrxpx) +
         c2 * (pxpx * rx + rxpx * px - S(3.0) * pxrxpx) +
         c3 * (pxrxpx * px + pxpx * rxpx);
}

}  // namespace lie_detail

inline Pose se3_exp(const Twist& xi) {
  if (!xi.allFinite()) throw InvalidArgument("se3_exp: non-finite twist");
  const Vec3 phi = xi.tail<3>();
  return {so3_exp(phi), so3_left_jacobian<double>(phi) * xi.head<3>()};
}

inline Twist se3_log(const Pose& pose) {
  if (!pose.translation().allFinite()) throw InvalidArgument("se3_log: non-finite translation");
  const Vec3 phi = so3_log(pose.rotation());
  Twist xi;
  xi.head<3>() = so3_left_jacobian_inv(phi) * pose.translation();
  xi.tail<3>() = phi;
  return xi;
}

/// Ad(T) = [[R, t^R], [0, R]]; Ad(T)*xi transports a twist so that exp(Ad(T) xi) = T exp(xi) T^-1.
inline Mat6 adjoint(const Pose& pose) {
  Mat6 m = Mat6::Zero();
  const Mat3& r = pose.rotation();
  m.topLeftCorner<3, 3>() = r;
  m.bottomRightCorner<3, 3>() = r;
  m.topRightCorner<3, 3>() = hat<double>(pose.translation()) * r;
  return m;
}

/// SE(3) left Jacobian: exp(xi + d) ~= exp(J(xi) d) exp(xi).
template <typename S>
Mat6T<S> left_jacobian(const Vec6T<S>& xi) {
  Mat6T<S> j = Mat6T<S>::Zero();
  const Mat3T<S> jr = so3_left_jacobian<S>(Vec3T<S>(xi.template tail<3>()));
  j.template topLeftCorner<3, 3>() = jr;
  j.template bottomRightCorner<3, 3>() = jr;
  j.template topRightCorner<3, 3>() = lie_detail::se3_q_block<S>(xi);
  return j;
}

inline Mat6 left_jacobian_inv(const Twist& xi) {
  const Vec3 phi = xi.tail<3>();
  if (phi.norm() > 2.0 * M_PI - 1e-6) {
    throw InvalidArgument("left_jacobian_inv: rotation angle too close to 2*pi");
  }
  const Mat3 ji = so3_left_jacobian_inv(phi);
  Mat6 m = Mat6::Zero();
  m.topLeftCorner<3, 3>() = ji;
  m.bottomRightCorner<3, 3>() = ji;
  m.topRightCorner<3, 3>() = -ji * lie_detail::se3_q_block<double>(xi) * ji;
  return m;
}

/// d/dxi [ J(xi) * v ], a 6x6 matrix (forward-mode autodiff through the closed form).
inline Mat6 left_jacobian_derivative(const Twist& xi, const Vec6& v) {
  using Ad = Eigen::AutoDiffScalar<Vec6>;
  Vec6T<Ad> x;
  for (int i = 0; i < 6; ++i) x(i) = Ad(xi(i), 6, i);
  const Mat6T<Ad> j = left_jacobian<Ad>(x);
  Mat6 out;
  for (int r = 0; r < 6; ++r) {
    Ad acc(0.0);
    acc.derivatives() = Vec6::Zero();
    for (int c = 0; c < 6; ++c) acc += j(r, c) * v(c);
    out.row(r) = acc.derivatives().transpose();
  }
  return out;
}

/// d/dxi [ J(xi)^-1 * v ] = -J^-1 * d/dxi[ J(xi) * (J^-1 v) ].
inline Mat6 left_jacobian_inv_derivative(const Twist& xi, const Vec6& v) {
  const Mat6 ji = left_jacobian_inv(xi);
  return -ji * left_jacobian_derivative(xi, ji * v);
}

}  // namespace stgp
