#include <algorithm>
#include <cmath>
#include <sstream>

#include "misclass/simulate.hpp"

#include "test_util.hpp"

using namespace misclass;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

ScenarioConfig config(Scenario s, std::size_t n = 5000, std::size_t m = 200, std::uint64_t seed = 1) {
    ScenarioConfig c = ScenarioConfig::defaults(s);
    c.n_obs = n;
    c.n_annotated = m;
    c.seed = seed;
    return c;
}

} // namespace

TEST(Calibration, Scenario1aMatchesClosedForm) {
    // W = 1{X + s u > 0.5} with u ~ N(0, 1) is correct with probability Phi(0.5 / s).
    const NoiseCalibration cal = calibrate_noise(config(Scenario::S1a));
    EXPECT_NEAR(normal_cdf(0.5 / cal.noise_scale), 0.72, 0.008);
}

TEST(Calibration, Scenario2aMatchesClosedForm) {
    // Logistic noise: accuracy is the logistic CDF at 0.5 / s.
    const NoiseCalibration cal = calibrate_noise(config(Scenario::S2a));
    EXPECT_NEAR(1.0 / (1.0 + std::exp(-0.5 / cal.noise_scale)), 0.72, 0.008);
    EXPECT_EQ(cal.sigma_eps, 0.0);
}

TEST(Calibration, NoiseScaleDecreasesWithAccuracy) {
    ScenarioConfig lo = config(Scenario::S1a), hi = config(Scenario::S1a);
    lo.target_accuracy = 0.60;
    hi.target_accuracy = 0.95;
    const double s_lo = calibrate_noise(lo).noise_scale;
    const double s_hi = calibrate_noise(hi).noise_scale;
    EXPECT_GT(s_lo, s_hi);

    hi.n_obs = 100000;
    hi.seed = 3;
    EXPECT_NEAR(generate(hi).achieved.accuracy, 0.95, 0.01);
}

TEST(Calibration, Deterministic) {
    const auto a = calibrate_noise(config(Scenario::S1b));
    const auto b = calibrate_noise(config(Scenario::S1b, 100, 10, 99));
    EXPECT_EQ(a.noise_scale, b.noise_scale);
    EXPECT_EQ(a.sigma_eps, b.sigma_eps);
}

TEST(Calibration, CoinFlipTargetFails) {
    ScenarioConfig c = config(Scenario::S1a);
    c.target_accuracy = 0.5;
    EXPECT_ERROR_CODE(calibrate_noise(c), CalibrationFailed);
}

TEST(Calibration, PerfectAccuracy) {
    ScenarioConfig c = config(Scenario::S1a, 3000, 100);
    c.target_accuracy = 1.0;
    const GeneratedData g = generate(c);
    EXPECT_EQ(g.achieved.accuracy, 1.0);
    c.systematic_coefficient = -0.3;
    EXPECT_ERROR_CODE(calibrate_noise(c), CalibrationFailed);
}

TEST(Generate, Scenario1aProperties) {
    std::vector<double> acc;
    double rho = 0.0, r2 = 0.0;
    const int reps = 9;
    for (int r = 0; r < reps; ++r) {
        const GeneratedData g = generate(config(Scenario::S1a, 5000, 200, 10 + static_cast<std::uint64_t>(r)));
        acc.push_back(g.achieved.accuracy);
        EXPECT_GE(g.achieved.accuracy, 0.69);
        EXPECT_LE(g.achieved.accuracy, 0.75);
        rho += g.achieved.rho_xz / reps;
        r2 += *g.achieved.r_squared / reps;
    }
    std::nth_element(acc.begin(), acc.begin() + reps / 2, acc.end());
    EXPECT_NEAR(acc[reps / 2], 0.72, 0.01);
    EXPECT_NEAR(rho, 0.24, 0.03);
    EXPECT_NEAR(r2, 0.10, 0.015);
}

TEST(Generate, Scenario1bErrorCorrelation) {
    double rho = 0.0;
    for (int r = 0; r < 5; ++r) rho += generate(config(Scenario::S1b, 5000, 200, 20 + static_cast<std::uint64_t>(r))).achieved.rho_error / 5;
    EXPECT_NEAR(rho, -0.17, 0.05);
}

TEST(Generate, AnnotationMaskAndColumns) {
    const GeneratedData g = generate(config(Scenario::S1a, 1000, 137, 5));
    EXPECT_EQ(g.frame.n_rows(), 1000u);
    EXPECT_EQ(g.frame.n_annotated(), 137u);
    for (std::size_t i = 0; i < 1000; ++i) {
        const double x = g.frame.column("x")[i];
        EXPECT_EQ(std::isnan(x), !g.frame.annotated(i));
        if (!std::isnan(x)) {
            EXPECT_EQ(x, g.truth[i]);
        }
    }
    const GeneratedData dv = generate(config(Scenario::S2a, 1000, 50, 5));
    EXPECT_TRUE(dv.frame.spec().is_dv());
    EXPECT_EQ(dv.frame.dataset().count_missing("y"), 950u);
}

TEST(Generate, Deterministic) {
    const GeneratedData a = generate(config(Scenario::S2b, 1000, 100, 3));
    const GeneratedData b = generate(config(Scenario::S2b, 1000, 100, 3));
    const GeneratedData c = generate(config(Scenario::S2b, 1000, 100, 4));
    std::ostringstream sa, sb, sc;
    write_csv(sa, a.frame.dataset(), simulated_columns());
    write_csv(sb, b.frame.dataset(), simulated_columns());
    write_csv(sc, c.frame.dataset(), simulated_columns());
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_NE(sa.str(), sc.str());
}

TEST(Generate, InvalidConfig) {
    ScenarioConfig c = config(Scenario::S1a, 100, 200);
    EXPECT_ERROR_CODE(generate(c), InvalidConfig);
    c = config(Scenario::S1a);
    c.r_squared = 1.5;
    EXPECT_ERROR_CODE(generate(c), InvalidConfig);
}

TEST(Scenario, NamesAndFormulas) {
    for (Scenario s : {Scenario::S1a, Scenario::S1b, Scenario::S2a, Scenario::S2b}) {
        EXPECT_EQ(parse_scenario(to_string(s)), s);
        const ModelSpec spec = parse_formula(scenario_formula(s));
        EXPECT_EQ(spec.is_iv(), covariate_family(s));
    }
    EXPECT_FALSE(parse_scenario("s3"));
}

TEST(Scenario, MetadataListsCalibration) {
    const GeneratedData g = generate(config(Scenario::S1a, 500, 50, 2));
    std::ostringstream out;
    write_metadata(out, g);
    EXPECT_NE(out.str().find("scenario=s1a\n"), std::string::npos);
    EXPECT_NE(out.str().find("noise_scale="), std::string::npos);
    EXPECT_NE(out.str().find("achieved_accuracy="), std::string::npos);
}
