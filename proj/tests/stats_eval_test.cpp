#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <fusionrl/eval.hpp>
#include <fusionrl/stats.hpp>

using namespace fusionrl;

namespace {

const ArenaConfig& arena() {
    static const ArenaConfig c = ArenaConfig::defaults();
    return c;
}

EvalSuite short_suite(std::size_t n, SensorMask sensors = kAllSensors) {
    EvalSuite s = standard_suite(sensors);
    s.seeds.resize(n);
    return s;
}

RolloutReport with_return(double r, double d = 0.1) {
    RolloutReport rep;
    rep.total_return = r;
    rep.final_can_distance = d;
    return rep;
}

} // namespace

TEST(Stats, QuantilesUseInclusiveLinearInterpolation) {
    // reference values from numpy.quantile's default ("linear") method
    const std::vector<double> xs{3, 1, 4, 1, 5, 9, 2, 6};
    EXPECT_DOUBLE_EQ(stats::quantile(xs, 0.25), 1.75);
    EXPECT_DOUBLE_EQ(stats::quantile(xs, 0.5), 3.5);
    EXPECT_DOUBLE_EQ(stats::quantile(xs, 0.75), 5.25);
    EXPECT_DOUBLE_EQ(stats::quantile(xs, 0.1), 1.0);
    EXPECT_DOUBLE_EQ(stats::quantile(xs, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(stats::quantile(xs, 1.0), 9.0);
    EXPECT_THROW(stats::quantile({}, 0.5), std::invalid_argument);
}

TEST(Stats, MannWhitneyMatchesPairCountingAndReferenceP) {
    const std::vector<double> x{-0.2, -0.5, -0.1, -0.3, -0.3, -0.05, -0.6, -0.25};
    const std::vector<double> y{-0.7, -0.5, -0.9, -0.3, -0.8, -0.65, -0.95};
    double pairs = 0.0;
    for (double a : x)
        for (double b : y) pairs += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
    const auto r = stats::mann_whitney(x, y);
    EXPECT_DOUBLE_EQ(r.u, pairs);
    EXPECT_DOUBLE_EQ(r.u, 51.5);
    // scipy.stats.mannwhitneyu(x, y, alternative="greater", method="asymptotic")
    EXPECT_NEAR(r.p_greater, 0.0037510246098298033, 1e-12);
    EXPECT_GT(stats::mann_whitney(y, x).p_greater, 0.99);
}

TEST(Stats, MannWhitneyOnIdenticalConstantSamplesIsUninformative) {
    const std::vector<double> x(10, -1.0), y(12, -1.0);
    EXPECT_EQ(stats::mann_whitney(x, y).p_greater, 1.0);
}

TEST(Stats, ChiSquareReferenceValue) {
    const std::vector<std::size_t> counts{18, 22, 25, 15, 20};
    // scipy.stats.chisquare
    EXPECT_NEAR(stats::chi_square_uniform_p(counts), 0.5746972058298043, 1e-12);
}

TEST(Summary, SingleReportCollapsesAllQuantiles) {
    const auto s = summarize({with_return(-0.3)});
    for (double v : {s.min, s.q1, s.median, s.q3, s.max, s.mean}) EXPECT_EQ(v, -0.3);
}

TEST(Summary, MedianOfThree) {
    EXPECT_EQ(summarize({with_return(-1), with_return(-0.5), with_return(0)}).median, -0.5);
}

TEST(Summary, CdfIsMonotoneAndReachesOne) {
    std::vector<RolloutReport> reps;
    for (int i = 0; i < 50; ++i) reps.push_back(with_return(-0.01 * i, 0.037 * i));
    const auto s = summarize(reps);
    EXPECT_EQ(s.cdf(std::numeric_limits<double>::infinity()), 1.0);
    EXPECT_EQ(s.cdf(-1.0), 0.0);
    for (std::size_t i = 1; i < s.distance_cdf.size(); ++i) {
        EXPECT_GE(s.distance_cdf[i].second, s.distance_cdf[i - 1].second);
        EXPECT_NEAR(s.distance_cdf[i].first - s.distance_cdf[i - 1].first, kCdfResolution, 1e-12);
    }
    EXPECT_EQ(s.distance_cdf.back().second, 1.0);
    EXPECT_THROW(summarize({}), ContractViolation);
}

TEST(Suite, ShippedFileMatchesTheBuiltInSuite) {
    const auto path = std::filesystem::path(FUSIONRL_SOURCE_DIR) / "data" / "eval_suite_v1.txt";
    const auto loaded = load_suite(path);
    EXPECT_EQ(loaded.seeds.size(), 100u);
    EXPECT_EQ(loaded.seeds, standard_suite().seeds);
}

TEST(Suite, RobotSensorCannotBeDisabled) {
    EvalSuite s = standard_suite();
    s.sensors = {false, true, true};
    EXPECT_THROW(s.validate(), ConfigError);
    EXPECT_EQ(parse_sensor_set("front"), kFrontOnly);
    EXPECT_EQ(parse_sensor_set("all"), kAllSensors);
    EXPECT_FALSE(parse_sensor_set("left").has_value());
}

TEST(Evaluate, OneReportPerSeedAndDeterministic) {
    const FusionNetwork<float> net(ArchitectureId::LateAcc, 3);
    const auto before = net.flat_parameters();
    const auto suite = short_suite(12);
    const auto a = evaluate(EvalPolicy::greedy(net), suite, arena());
    const auto b = evaluate(EvalPolicy::greedy(net), suite, arena(), 3);
    ASSERT_EQ(a.size(), suite.seeds.size());
    EXPECT_EQ(a, b);
    EXPECT_EQ(net.flat_parameters(), before);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].seed, suite.seeds[i]);
        EXPECT_LE(a[i].total_return, 0.0);
        EXPECT_GE(a[i].final_can_distance, 0.0);
        EXPECT_LE(a[i].steps, 100);
        EXPECT_NE(a[i].cause, StepCause::Running);
    }
}

TEST(Evaluate, RandomBaselineIsReproducibleAndSeedDependent) {
    const auto suite = short_suite(10);
    const auto a = evaluate(EvalPolicy::random(1), suite, arena());
    EXPECT_EQ(a, evaluate(EvalPolicy::random(1), suite, arena()));
    EXPECT_NE(a, evaluate(EvalPolicy::random(2), suite, arena()));
}

TEST(Evaluate, ReturnIsTheUndiscountedRewardSum) {
    const auto suite = short_suite(3);
    std::ostringstream traj;
    TrajectoryWriter w(traj);
    const auto rep = rollout(EvalPolicy::random(4), suite.seeds[0], suite, arena(), &w);
    std::istringstream in(traj.str());
    std::string line;
    std::getline(in, line);
    std::getline(in, line); // start row
    double sum = 0.0;
    int rows = 0;
    while (std::getline(in, line)) {
        std::vector<std::string> cols;
        std::stringstream ls(line);
        std::string c;
        while (std::getline(ls, c, ',')) cols.push_back(c);
        sum += std::stod(cols.at(7));
        ++rows;
    }
    EXPECT_EQ(rows, rep.steps);
    EXPECT_NEAR(sum, rep.total_return, 1e-9);
}

TEST(Evaluate, FrontOnlyMaskMatchesDroppedPaths) {
    const FusionNetwork<float> net(ArchitectureId::LateAcc, 7);
    const auto suite = short_suite(1, kFrontOnly);
    ArenaEnv env(arena(), kFrontOnly);
    const auto obs = env.reset(suite.seeds[0]);
    EXPECT_EQ(obs.available, kFrontOnly);
    // the evaluator's first greedy action equals the network's choice on
    // the same observation with remote paths dropped
    Observation full = observe(env.state(), kAllSensors, arena());
    const Observation* ptr = &full;
    auto in = assemble_input<float>(ArchitectureId::LateAcc, std::span<const Observation* const>(&ptr, 1), 128);
    in.paths[0] = kFrontOnly;
    const auto q = net.infer(in);
    const auto q_masked = q_values(net, obs, nn::Mode::Eval);
    for (std::size_t a = 0; a < kActionCount; ++a) EXPECT_EQ(static_cast<double>(q[a]), q_masked[a]);
}

TEST(Evaluate, RayCountMismatchIsAConfigError) {
    const FusionNetwork<float> net(ArchitectureId::Single, 1);
    ArenaConfig other = arena();
    other.lidar_rays = 64;
    other.finalize();
    EXPECT_THROW(evaluate(EvalPolicy::greedy(net), short_suite(2), other), ConfigError);
}

TEST(Evaluate, CsvOutputs) {
    const auto reps = evaluate(EvalPolicy::random(1), short_suite(4), arena());
    std::ostringstream r, s;
    write_reports_csv(r, reps);
    write_summary_csv(s, summarize(reps));
    const std::string reports = r.str(), summary = s.str();
    EXPECT_EQ(reports.substr(0, reports.find('\n')), "seed,return,final_can_distance,cause,steps,collisions");
    EXPECT_EQ(std::count(reports.begin(), reports.end(), '\n'), 5);
    EXPECT_NE(summary.find("return,median,"), std::string::npos);
    EXPECT_NE(summary.find("cdf,0.00,"), std::string::npos);
}
