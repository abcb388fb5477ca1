#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stgp/sensors.hpp"
#include "stgp/sim.hpp"
#include "test_util.hpp"

namespace stgp {
namespace {

using testing_util::max_abs_diff;

ScenarioConfig bending(double kappa0, double kappa_amp, double period) {
  ScenarioConfig c;
  c.length = 0.4;
  c.n_space = 6;
  c.n_time = 5;
  c.duration = 1.0;
  c.truth = {kappa0, kappa_amp, period, 0.0, 0.0};
  return c;
}

TEST(StrainField, Formula) {
  ScenarioConfig c = bending(0.0, 0.0, 1.0);
  Twist straight;
  straight << 1, 0, 0, 0, 0, 0;
  EXPECT_EQ(strain_field(0.2, 0.7, c), straight);
  c = bending(1.0, 0.5, 2.0);
  c.length = 0.4;
  EXPECT_DOUBLE_EQ(strain_field(0.3, 0.0, c)(5), 1.0);
  EXPECT_NEAR(strain_field(0.4, 0.5, c)(5), 1.5, 1e-15);
  EXPECT_THROW(strain_field(0.41, 0.0, c), InvalidArgument);
  EXPECT_THROW(strain_field(-0.01, 0.0, c), InvalidArgument);
}

TEST(IntegratePose, StraightRod) {
  const ScenarioConfig c = bending(0.0, 0.0, 1.0);
  const Pose p = integrate_pose(c, 0.3, 0.4);
  EXPECT_LT((p.translation() - Vec3(0.3, 0.0, 0.0)).norm(), 1e-14);
  EXPECT_LT((p.rotation() - Mat3::Identity()).norm(), 1e-14);
  EXPECT_EQ(integrate_pose(c, 0.0, 0.4).matrix(), Pose().matrix());
}

TEST(IntegratePose, QuarterCircle) {
  ScenarioConfig c = bending(1.0, 0.0, 1.0);
  c.length = M_PI / 2.0;
  const Pose p = integrate_pose(c, M_PI / 2.0, 0.0);
  EXPECT_LT((p.translation() - Vec3(1.0, 1.0, 0.0)).norm(), 1e-10);
  Mat3 rz;
  rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((p.rotation() - rz).norm(), 1e-10);
}

TEST(IntegratePose, StepHalvingAndOrder) {
  ScenarioConfig c = bending(2.0, 4.0, 2.0);
  c.truth.omega_x = 0.7;
  c.truth.omega_y = -0.4;
  const double s = c.length, t = 0.3;
  const auto steps = static_cast<std::size_t>(std::ceil(s / integration_step(c) - 1e-9));
  const Pose p1 = integrate_pose_steps(c, s, t, steps);
  const Pose p2 = integrate_pose_steps(c, s, t, 2 * steps);
  EXPECT_LT(se3_log(p2 * p1.inverse()).norm(), 1e-8);

  const Pose a = integrate_pose_steps(c, s, t, 4);
  const Pose b = integrate_pose_steps(c, s, t, 8);
  const Pose r = integrate_pose_steps(c, s, t, 16);
  const double e1 = se3_log(a * r.inverse()).norm() - se3_log(b * r.inverse()).norm();
  const double e2 = se3_log(b * r.inverse()).norm();
  const double order = std::log2(e1 / e2);
  RecordProperty("richardson_order", std::to_string(order));
  EXPECT_GE(order, 3.5);
}

TEST(IntegratePose, ComposesOverSubintervals) {
  ScenarioConfig c = bending(2.0, 4.0, 2.0);
  c.truth.omega_x = 0.5;
  // T(s2) = T(s1) * relative integral from s1 to s2, with the relative integral taken on a
  // uniform step grid aligned with the full one.
  const double h = integration_step(c);
  const std::size_t n1 = 40, n2 = 100;
  const double s1 = h * n1, s2 = h * n2, t = 0.8;
  Pose rel;
  const double c1 = 0.5 - std::sqrt(3.0) / 6.0, c2 = 0.5 + std::sqrt(3.0) / 6.0;
  for (std::size_t i = n1; i < n2; ++i) {
    const double s0 = h * static_cast<double>(i);
    const Twist a1 = strain_field(s0 + c1 * h, t, c), a2 = strain_field(s0 + c2 * h, t, c);
    rel = rel * se3_exp(0.5 * h * (a1 + a2) + (std::sqrt(3.0) / 12.0) * h * h * curlyhat<double>(a1) * a2);
  }
  const Pose lhs = integrate_pose_steps(c, s2, t, n2);
  const Pose rhs = integrate_pose_steps(c, s1, t, n1) * rel;
  EXPECT_LT(se3_log(lhs * rhs.inverse()).norm(), 1e-9);
}

TEST(GroundTruth, StaticScenarioHasZeroRates) {
  const ScenarioConfig c = bending(2.0, 0.0, 2.0);
  for (double s : {0.0, 0.1, 0.4})
    for (double t : {0.0, 0.5, 1.0}) {
      const NodeState x = ground_truth_state(c, s, t);
      EXPECT_LT(x.velocity.cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LT(x.strain_velocity.cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(GroundTruth, StraightRodLeftStrain) {
  const ScenarioConfig c = bending(0.0, 0.0, 1.0);
  Twist e;
  e << 1, 0, 0, 0, 0, 0;
  for (double s : {0.0, 0.2, 0.4}) EXPECT_LT((ground_truth_state(c, s, 0.3).strain - e).norm(), 1e-14);
}

TEST(GroundTruth, FiniteDifferenceStepHalving) {
  const ScenarioConfig c = bending(2.0, 4.0, 2.0);
  const double d = 1e-5 * c.truth.period;
  for (double t : {0.0, 0.37, 1.0}) {
    const NodeState a = ground_truth_state(c, 0.3, t, d);
    const NodeState b = ground_truth_state(c, 0.3, t, d / 2.0);
    EXPECT_LT((a.velocity - b.velocity).cwiseAbs().maxCoeff(), 1e-6) << "t=" << t;
    EXPECT_LT((a.strain_velocity - b.strain_velocity).cwiseAbs().maxCoeff(), 1e-5) << "t=" << t;
  }
}

TEST(GroundTruth, VelocityMatchesAnalyticPlanarRate) {
  // Planar bending: tip heading theta(s, t) = integral of kappa, so the left angular rate about z
  // equals d theta / dt = kappa_amp * cos(2 pi t / T) * (2 pi / T) * s^2 / (2 L).
  const ScenarioConfig c = bending(2.0, 4.0, 2.0);
  const double s = 0.3, t = 0.4;
  const NodeState x = ground_truth_state(c, s, t);
  const double w = 2.0 * M_PI / c.truth.period;
  EXPECT_NEAR(x.velocity(5), c.truth.kappa_amp * std::cos(w * t) * w * s * s / (2.0 * c.length), 1e-6);
  EXPECT_NEAR(x.velocity(3), 0.0, 1e-9);
  EXPECT_NEAR(x.velocity(4), 0.0, 1e-9);
}

TEST(Schedules, RateIsInclusive) {
  EXPECT_EQ(rate_schedule(10.0, 1.0).size(), 11u);
  EXPECT_DOUBLE_EQ(rate_schedule(10.0, 1.0).back(), 1.0);
  EXPECT_EQ(rate_schedule(3.0, 1.0).size(), 4u);
  ScenarioConfig c = bending(1.0, 1.0, 2.0);
  c.sensors.push_back({SensorKind::gyro3, 0.01, false, 10.0, {0.1, 0.4}, {}, {true, true, true, true, true, true}});
  c.sensors.push_back({SensorKind::strain6, 0.01, true, 0.0, {}, {}, {true, true, true, true, true, true}});
  const auto meas = generate_measurements(c);
  EXPECT_EQ(meas.size(), 22u + c.n_space * c.n_time);
}

ScenarioConfig all_sensors(double std_dev) {
  ScenarioConfig c = bending(2.0, 4.0, 2.0);
  c.truth.omega_x = 0.3;
  const std::array<bool, 6> all{true, true, true, true, true, true};
  c.sensors.push_back({SensorKind::strain6, std_dev, true, 0.0, {}, {}, all});
  c.sensors.push_back({SensorKind::position3, std_dev, false, 0.0, {}, {{0.4, 0.3}, {0.13, 0.71}}, all});
  c.sensors.push_back({SensorKind::gyro3, std_dev, false, 4.0, {0.25}, {}, all});
  c.sensors.push_back({SensorKind::pose6, std_dev, false, 0.0, {}, {{0.4, 1.0}, {0.05, 0.05}}, all});
  c.sensors.push_back({SensorKind::strain6, std_dev, false, 5.0, {0.33}, {}, {false, false, false, true, true, true}});
  c.seed = 99;
  return c;
}

TEST(GenerateMeasurements, ZeroNoiseIsExact) {
  const ScenarioConfig c = all_sensors(0.0);
  for (const Measurement& m : generate_measurements(c)) {
    const NodeState x = ground_truth_state(c, m.s, m.t);
    EXPECT_LT(measurement_error(m, x).cwiseAbs().maxCoeff(), 1e-10) << static_cast<int>(m.kind);
    EXPECT_NEAR(m.noise_cov(0, 0), kMinNoiseStd * kMinNoiseStd, 1e-30);
  }
}

TEST(GenerateMeasurements, DeterministicUnderSeed) {
  const ScenarioConfig c = all_sensors(0.05);
  const auto a = generate_measurements(c);
  const auto b = generate_measurements(c);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].value, b[i].value);
    EXPECT_EQ(a[i].pose.matrix(), b[i].pose.matrix());
    EXPECT_EQ(a[i].s, b[i].s);
    EXPECT_EQ(a[i].t, b[i].t);
  }
  ScenarioConfig d = c;
  d.seed = 100;
  EXPECT_NE(generate_measurements(d)[0].value, a[0].value);
}

TEST(GenerateMeasurements, NoiseHasConfiguredSpread) {
  ScenarioConfig c = bending(1.0, 0.0, 1.0);
  c.n_space = 20;
  c.n_time = 50;
  c.sensors.push_back({SensorKind::strain6, 0.02, true, 0.0, {}, {}, {true, true, true, true, true, true}});
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  for (const Measurement& m : generate_measurements(c)) {
    const Eigen::VectorXd e = m.value - strain_field(m.s, m.t, c);
    sum += e.sum();
    sq += e.squaredNorm();
    count += static_cast<std::size_t>(e.size());
  }
  EXPECT_NEAR(sum / count, 0.0, 4.0 * 0.02 / std::sqrt(count));
  EXPECT_NEAR(std::sqrt(sq / count), 0.02, 0.02 * 0.05);
}

TEST(GroundTruth, PriorResidualShrinksUnderRefinement) {
  ScenarioConfig c = bending(2.0, 4.0, 2.0);
  c.n_space = 5;
  c.n_time = 5;
  auto max_quaternary = [&](const Grid& g) {
    double worst = 0.0;
    const FactorSet fs = build_prior_factors(g, c.prior);
    fs.for_each_prior([&](const PriorFactor& f) {
      if (f.kind == PriorKind::quaternary) worst = std::max(worst, prior_error(f, g, c.prior).norm());
    });
    return worst;
  };
  const double coarse = max_quaternary(realize_ground_truth(c, 1));
  const double fine = max_quaternary(realize_ground_truth(c, 2));
  RecordProperty("quaternary_ratio", std::to_string(fine / coarse));
  EXPECT_LE(fine, 0.6 * coarse);
}

TEST(ScenarioConfig, Validation) {
  ScenarioConfig c = all_sensors(0.01);
  EXPECT_NO_THROW(validate(c));
  ScenarioConfig bad = c;
  bad.length = 0.0;
  EXPECT_THROW(validate(bad), InvalidArgument);
  bad = c;
  bad.sensors[2].rate_hz = -1.0;
  EXPECT_THROW(validate(bad), InvalidArgument);
  bad = c;
  bad.sensors[0].noise_std = -0.1;
  EXPECT_THROW(validate(bad), InvalidArgument);
  bad = c;
  bad.n_time = 0;
  EXPECT_THROW(validate(bad), InvalidArgument);
}

TEST(MeasurementSeededGrid, IntegratesStrainColumns) {
  ScenarioConfig c = bending(2.0, 4.0, 2.0);
  c.n_space = 21;
  c.n_time = 6;
  c.sensors.push_back({SensorKind::strain6, 0.0, true, 0.0, {}, {}, {true, true, true, true, true, true}});
  const auto meas = generate_measurements(c);
  const Grid seeded = measurement_seeded_grid(s_knots(c), t_knots(c), meas, c.prior);
  const Grid truth = ground_truth_grid(c);
  double worst = 0.0;
  for (std::size_t i = 0; i < seeded.size(); ++i) {
    worst = std::max(worst, (seeded.states[i].pose.translation() - truth.states[i].pose.translation()).norm());
  }
  EXPECT_LT(worst, 1e-3);
  // Without strain readings the prior-mean initialization is returned.
  const Grid plain = measurement_seeded_grid(s_knots(c), t_knots(c), {}, c.prior);
  const Grid prior_mean = build_grid(s_knots(c), t_knots(c), c.prior);
  for (std::size_t i = 0; i < plain.size(); ++i)
    EXPECT_EQ(plain.states[i].pose.matrix(), prior_mean.states[i].pose.matrix());
}

}  // namespace
}  // namespace stgp
