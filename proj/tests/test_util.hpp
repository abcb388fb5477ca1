#pragma once

#include <functional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "stgp/liegroup.hpp"
#include "stgp/prior.hpp"

namespace stgp::testing_util {

inline Vec3 random_unit3(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

/// Twist with angular norm uniform in [0, max_angle] and linear part uniform in [-lin, lin]^3.
inline Twist random_twist(std::mt19937_64& rng, double max_angle, double lin) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> l(-lin, lin);
  Twist xi;
  xi.head<3>() = Vec3(l(rng), l(rng), l(rng));
  xi.tail<3>() = random_unit3(rng) * (max_angle * u(rng));
  return xi;
}

inline Vec6 random_vec6(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec6 v;
  for (int i = 0; i < 6; ++i) v(i) = u(rng);
  return v;
}

inline NodeState random_state(std::mt19937_64& rng, double angle = 1.0, double deriv = 1.0) {
  NodeState x;
  x.pose = se3_exp(random_twist(rng, angle, 1.0));
  x.strain = random_vec6(rng, deriv);
  x.velocity = random_vec6(rng, deriv);
  x.strain_velocity = random_vec6(rng, deriv);
  return x;
}

/// A state near `base`: small relative pose, random derivatives.
inline NodeState nearby_state(std::mt19937_64& rng, const Pose& base, double angle = 0.4) {
  NodeState x = random_state(rng, angle);
  x.pose = se3_exp(random_twist(rng, angle, 0.3)) * base;
  return x;
}

/// Central finite-difference Jacobian of f w.r.t. state `which` (increment coordinates).
inline Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const std::vector<NodeState>&)>& f,
                                   const std::vector<NodeState>& states, std::size_t which, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(states);
  Eigen::MatrixXd j(f0.size(), 24);
  for (int c = 0; c < 24; ++c) {
    Vec24 d = Vec24::Zero();
    d(c) = h;
    auto plus = states;
    auto minus = states;
    plus[which] = retract(states[which], d);
    minus[which] = retract(states[which], -d);
    j.col(c) = (f(plus) - f(minus)) / (2.0 * h);
  }
  return j;
}

/// max|A - B| <= tol * max(1, max|B|).
inline bool close_relative(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double tol) {
  return (a - b).cwiseAbs().maxCoeff() <= tol * std::max(1.0, b.cwiseAbs().maxCoeff());
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace stgp::testing_util
