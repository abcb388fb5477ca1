#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include "stgp/io.hpp"
#include "test_util.hpp"

namespace stgp {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("stgp_io_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

ScenarioConfig rich_config() {
  std::mt19937_64 rng(5);
  ScenarioConfig c;
  c.length = 0.3;
  c.n_space = 4;
  c.n_time = 3;
  c.duration = 0.5;
  c.seed = 77;
  c.refinement = 3;
  c.init = InitMode::measurements;
  Mat6 a = Mat6::Random();
  c.prior.qs_psd = a * a.transpose() + Mat6::Identity();
  c.prior.qt_psd = 0.25 * Mat6::Identity();
  c.prior.qst_psd = Vec6(1, 2, 3, 4, 5, 6).asDiagonal();
  c.prior.p0 = 0.1 * Mat24::Identity();
  c.prior.p0(0, 0) = 0.3;
  c.prior.prior_mean_0 = testing_util::random_state(rng);
  c.truth = {1.5, 0.5, 0.8, 0.1, -0.2};
  c.sensors.push_back({SensorKind::strain6, 0.01, true, 0.0, {}, {}, {true, false, true, true, true, false}});
  c.sensors.push_back({SensorKind::position3, 0.002, false, 0.0, {}, {{0.3, 0.5}, {0.1, 0.2}}, {true, true, true, true, true, true}});
  c.sensors.push_back({SensorKind::gyro3, 0.05, false, 4.0, {0.15}, {}, {true, true, true, true, true, true}});
  c.sensors.push_back({SensorKind::pose6, 0.01, false, 0.0, {}, {{0.2, 0.25}}, {true, true, true, true, true, true}});
  c.solver = {17, 1e-7, 5, false};
  return c;
}

void expect_same(const ScenarioConfig& a, const ScenarioConfig& b) {
  EXPECT_EQ(a.length, b.length);
  EXPECT_EQ(a.n_space, b.n_space);
  EXPECT_EQ(a.n_time, b.n_time);
  EXPECT_EQ(a.duration, b.duration);
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_EQ(a.refinement, b.refinement);
  EXPECT_EQ(a.init, b.init);
  EXPECT_TRUE(a.prior.qs_psd == b.prior.qs_psd);
  EXPECT_TRUE(a.prior.qt_psd == b.prior.qt_psd);
  EXPECT_TRUE(a.prior.qst_psd == b.prior.qst_psd);
  EXPECT_TRUE(a.prior.p0 == b.prior.p0);
  EXPECT_TRUE(a.prior.prior_mean_0.pose.matrix() == b.prior.prior_mean_0.pose.matrix());
  EXPECT_TRUE(a.prior.prior_mean_0.strain == b.prior.prior_mean_0.strain);
  EXPECT_TRUE(a.prior.prior_mean_0.velocity == b.prior.prior_mean_0.velocity);
  EXPECT_TRUE(a.prior.prior_mean_0.strain_velocity == b.prior.prior_mean_0.strain_velocity);
  EXPECT_EQ(a.truth.kappa0, b.truth.kappa0);
  EXPECT_EQ(a.truth.kappa_amp, b.truth.kappa_amp);
  EXPECT_EQ(a.truth.period, b.truth.period);
  EXPECT_EQ(a.truth.omega_x, b.truth.omega_x);
  EXPECT_EQ(a.truth.omega_y, b.truth.omega_y);
  EXPECT_EQ(a.sensors, b.sensors);
  EXPECT_EQ(a.solver.max_iters, b.solver.max_iters);
  EXPECT_EQ(a.solver.tol, b.solver.tol);
  EXPECT_EQ(a.solver.max_halvings, b.solver.max_halvings);
  EXPECT_EQ(a.solver.compute_covariance, b.solver.compute_covariance);
}

TEST(ConfigJson, RoundTripIsIdentity) {
  const ScenarioConfig c = rich_config();
  const std::string text = config_to_json(c).dump(2);
  const ScenarioConfig back = parse_config(text);
  expect_same(c, back);
  EXPECT_EQ(config_to_json(back).dump(2), text);
}

TEST(ConfigJson, MissingKeysKeepDefaults) {
  const ScenarioConfig c = parse_config(R"({"schema_version": 1, "length": 2.0})");
  const ScenarioConfig d;
  EXPECT_EQ(c.length, 2.0);
  EXPECT_EQ(c.n_space, d.n_space);
  EXPECT_TRUE(c.prior.p0 == d.prior.p0);
  EXPECT_EQ(c.init, InitMode::prior_mean);
  EXPECT_TRUE(c.sensors.empty());
}

TEST(ConfigJson, MatrixForms) {
  const ScenarioConfig c = parse_config(R"({"schema_version": 1,
    "prior": {"qs_psd": 2.0, "qt_psd": [1, 2, 3, 4, 5, 6],
              "qst_psd": [[1,0,0,0,0,0],[0,1,0,0,0,0],[0,0,1,0,0,0],[0,0,0,1,0,0],[0,0,0,0,1,0],[0,0,0,0,0,3]],
              "mean": {"quaternion": [0, 0, 0, 1], "translation": [1, 2, 3]}}})");
  EXPECT_TRUE(c.prior.qs_psd == (2.0 * Mat6::Identity()));
  EXPECT_EQ(c.prior.qt_psd(5, 5), 6.0);
  EXPECT_EQ(c.prior.qst_psd(5, 5), 3.0);
  EXPECT_NEAR(c.prior.prior_mean_0.pose.rotation()(0, 0), -1.0, 1e-15);
  EXPECT_EQ(c.prior.prior_mean_0.pose.translation(), Vec3(1, 2, 3));
}

TEST(ConfigJson, RejectsInvalidInput) {
  EXPECT_THROW(parse_config("{"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"length": 1})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 2})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "lenght": 1})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "n_space": -3})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "length": "long"})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "init": "random"})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "prior": {"qs_psd": [1, 2]}})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "prior": {"qs_psd": -1.0}})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "sensors": [{"kind": "lidar", "at_nodes": true}]})"),
               InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "sensors": [{"kind": "gyro3"}]})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "prior": {"mean": {"rotation": [[1,0,0],[0,1,0],[0,0,2]]}}})"),
               InvalidArgument);
}

TEST(MeasurementsJson, RoundTripIsExact) {
  const auto meas = generate_measurements(rich_config());
  ASSERT_GT(meas.size(), 12u);
  const std::string text = measurements_to_json(meas).dump(1);
  const auto back = measurements_from_json(Json::parse(text));
  ASSERT_EQ(back.size(), meas.size());
  for (std::size_t i = 0; i < meas.size(); ++i) {
    EXPECT_EQ(back[i].kind, meas[i].kind);
    EXPECT_EQ(back[i].s, meas[i].s);
    EXPECT_EQ(back[i].t, meas[i].t);
    EXPECT_EQ(back[i].mask, meas[i].mask);
    EXPECT_TRUE(back[i].noise_cov == meas[i].noise_cov);
    if (meas[i].kind == SensorKind::pose6) {
      EXPECT_TRUE(back[i].pose.matrix() == meas[i].pose.matrix());
    } else {
      EXPECT_TRUE(back[i].value == meas[i].value);
    }
  }
  EXPECT_EQ(measurements_to_json(back).dump(1), text);
}

TEST(MeasurementsJson, RejectsBadEntries) {
  EXPECT_THROW(measurements_from_json(Json::parse(R"({"schema_version": 3, "measurements": []})")), InvalidArgument);
  EXPECT_THROW(measurements_from_json(Json::parse(
                   R"({"schema_version": 1, "measurements": [{"kind": "position3", "s": 0, "t": 0, "value": [1, 2], "noise_cov": 1}]})")),
               InvalidArgument);
  EXPECT_THROW(measurements_from_json(Json::parse(
                   R"({"schema_version": 1, "measurements": [{"kind": "position3", "s": 0, "t": 0, "value": [1, 2, 3], "noise_cov": 0}]})")),
               InvalidArgument);
}

TEST(Csv, QuaternionHasNonNegativeScalar) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Mat3 r = so3_exp(testing_util::random_twist(rng, 3.1, 0.0).tail<3>());
    const Eigen::Vector4d q = rotation_quaternion(r);
    EXPECT_GE(q(0), 0.0);
    EXPECT_NEAR(q.norm(), 1.0, 1e-12);
    EXPECT_LT((Eigen::Quaterniond(q(0), q(1), q(2), q(3)).toRotationMatrix() - r).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Csv, RowSchema) {
  const std::string h = csv_header(true);
  EXPECT_EQ(std::count(h.begin(), h.end(), ','), 2 + 3 + 4 + 18 + 24 - 1);
  const Vec24 sd = Vec24::Ones();
  const std::string row = csv_row(0.1, 0.2, NodeState{}, &sd);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(h.begin(), h.end(), ','));
  EXPECT_EQ(row.rfind("0.10000000000000001,0.20000000000000001,0,0,0,1,0,0,0", 0), 0u);
}

ScenarioConfig small_scenario() {
  ScenarioConfig c;
  c.length = 0.2;
  c.n_space = 4;
  c.n_time = 3;
  c.duration = 0.4;
  c.seed = 3;
  c.truth = {2.0, 1.0, 1.0, 0.0, 0.0};
  c.prior.qs_psd = 100.0 * Mat6::Identity();
  c.prior.qt_psd = 0.01 * Mat6::Identity();
  c.prior.qst_psd = 1e3 * Mat6::Identity();
  c.prior.p0.diagonal().head<6>().setConstant(1e-6);
  c.prior.prior_mean_0.strain << 1, 0, 0, 0, 0, 0;
  c.sensors.push_back({SensorKind::strain6, 0.01, true, 0.0, {}, {}, {true, true, true, true, true, true}});
  c.sensors.push_back({SensorKind::position3, 0.001, false, 0.0, {}, {{0.2, 0.3}}, {true, true, true, true, true, true}});
  return c;
}

TEST(PosteriorFile, RoundTripPreservesQueries) {
  const ScenarioConfig c = small_scenario();
  const Posterior post = estimate(c, generate_measurements(c));
  ASSERT_TRUE(post.report.converged);
  const fs::path p = scratch("round.bin");
  save_posterior(p, post);
  const Posterior back = load_posterior(p);
  EXPECT_EQ(back.grid.s_knots, post.grid.s_knots);
  EXPECT_EQ(back.grid.t_knots, post.grid.t_knots);
  EXPECT_EQ(estimate_csv(back), estimate_csv(post));
  ASSERT_EQ(back.cell_joints.size(), post.cell_joints.size());
  for (std::size_t i = 0; i < post.cell_joints.size(); ++i) {
    EXPECT_EQ(back.cell_joints[i].nodes, post.cell_joints[i].nodes);
    EXPECT_TRUE(back.cell_joints[i].covariance == post.cell_joints[i].covariance);
  }
  EXPECT_TRUE(back.params.p0 == post.params.p0);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> us(0.0, c.length), ut(0.0, c.duration);
  for (int i = 0; i < 20; ++i) {
    const double s = us(rng), t = ut(rng);
    EXPECT_EQ(query_row(back, s, t), query_row(post, s, t));
  }
}

TEST(PosteriorFile, WithoutCovariance) {
  ScenarioConfig c = small_scenario();
  c.solver.compute_covariance = false;
  const Posterior post = estimate(c, generate_measurements(c));
  const fs::path p = scratch("nocov.bin");
  save_posterior(p, post);
  const Posterior back = load_posterior(p);
  EXPECT_FALSE(back.has_covariance());
  EXPECT_EQ(estimate_csv(back), estimate_csv(post));
  EXPECT_NE(estimate_csv(back).find("nan"), std::string::npos);
}

TEST(PosteriorFile, RejectsCorruptFiles) {
  const ScenarioConfig c = small_scenario();
  const Posterior post = estimate(c, {});
  const fs::path p = scratch("corrupt.bin");
  save_posterior(p, post);
  const std::string bytes = read_text(p);

  EXPECT_THROW(load_posterior(scratch("missing.bin")), IoError);
  std::string bad = bytes;
  bad[0] = 'X';
  write_text(p, bad);
  EXPECT_THROW(load_posterior(p), IoError);
  bad = bytes;
  bad[8] = 2;
  write_text(p, bad);
  EXPECT_THROW(load_posterior(p), IoError);
  write_text(p, bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_posterior(p), IoError);
  bad = bytes;
  bad[12] = 0;  // minor version is informational
  write_text(p, bad);
  EXPECT_NO_THROW(load_posterior(p));
}

TEST(Query, KnotRowMatchesEstimateRow) {
  const ScenarioConfig c = small_scenario();
  const Posterior post = estimate(c, generate_measurements(c));
  std::istringstream csv(estimate_csv(post));
  std::string line;
  std::getline(csv, line);
  for (std::size_t k = 0; k < post.grid.n_time(); ++k)
    for (std::size_t n = 0; n < post.grid.n_space(); ++n) {
      std::getline(csv, line);
      EXPECT_EQ(query_row(post, post.grid.s_knots[n], post.grid.t_knots[k]), line);
    }
}

TEST(Estimate, NoMeasurementsReturnsPriorMeanPropagation) {
  const ScenarioConfig c = small_scenario();
  const Posterior post = estimate(c, {});
  const Grid prior = build_grid(s_knots(c), t_knots(c), c.prior);
  EXPECT_EQ(grid_csv(post.grid), grid_csv(prior));
  EXPECT_EQ(post.report.iterations, 1);
}

TEST(Estimate, DeterministicOutputs) {
  const ScenarioConfig c = small_scenario();
  const auto m1 = generate_measurements(c);
  const auto m2 = generate_measurements(c);
  EXPECT_EQ(measurements_to_json(m1).dump(1), measurements_to_json(m2).dump(1));
  EXPECT_EQ(estimate_csv(estimate(c, m1)), estimate_csv(estimate(c, m2)));
}

}  // namespace
}  // namespace stgp
