#include <cmath>

#include "misclass/estimators.hpp"
#include "misclass/mla.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

using namespace misclass;

namespace {

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

Dataset small_iv_data() {
    Dataset d;
    d.set_column("y", {0.3, -1.2, 2.0, 0.8, 1.1});
    d.set_column("x", {1, 0, 1, 0, kMissing});
    d.set_column("w", {1, 0, 0, 1, 1});
    d.set_column("z", {0.5, -0.4, 1.3, 0.1, -0.7});
    return d;
}

ThetaVector hand_theta(const JointModelSpec& spec) {
    ThetaVector t = ThetaVector::layout(spec);
    t.at(Block::Main, "(Intercept)") = 0.2;
    t.at(Block::Main, "x") = 0.9;
    t.at(Block::Main, "z") = -0.3;
    t.at(Block::Main, "log_sigma") = std::log(1.3);
    t.at(Block::Error, "(Intercept)") = -0.4;
    t.at(Block::Error, "x") = 1.5;
    t.at(Block::Error, "y") = 0.25;
    t.at(Block::Error, "z") = -0.6;
    t.at(Block::Exposure, "(Intercept)") = 0.1;
    t.at(Block::Exposure, "z") = 0.8;
    return t;
}

double normal_pdf(double y, double mu, double sigma) {
    const double r = (y - mu) / sigma;
    return std::exp(-0.5 * r * r) / (sigma * std::sqrt(2.0 * M_PI));
}

} // namespace

TEST(Theta, LayoutHasNamedBlocks) {
    const auto spec = JointModelSpec::defaults(parse_formula("y ~ x || w + z"), Family::GaussianIdentity);
    const ThetaVector t = ThetaVector::layout(spec);
    EXPECT_EQ(t.size(), 4u + 4u + 2u);
    EXPECT_EQ(t.block_positions(Block::Main).size(), 4u);
    EXPECT_EQ(t.block_positions(Block::Error).size(), 4u);
    EXPECT_EQ(t.block_positions(Block::Exposure).size(), 2u);
    EXPECT_TRUE(t.find(Block::Main, "log_sigma"));
    EXPECT_FALSE(t.find(Block::Exposure, "x"));

    const auto dv = JointModelSpec::defaults(parse_formula("y || w ~ x + z"), Family::BernoulliLogit);
    const ThetaVector td = ThetaVector::layout(dv);
    EXPECT_EQ(td.size(), 3u + 4u);
    EXPECT_TRUE(td.block_positions(Block::Exposure).empty());
}

TEST(JointLikelihoodIv, SingleUnannotatedRowByHand) {
    const auto spec = JointModelSpec::defaults(parse_formula("y ~ x || w + z"), Family::GaussianIdentity);
    const Dataset d = small_iv_data();
    const AnalysisFrame f = build_frame(d, spec.main);
    const ThetaVector t = hand_theta(spec);

    double expected = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        const double y = d.column("y")[i], z = d.column("z")[i], w = d.column("w")[i];
        auto term = [&](double x) {
            const double f_main = normal_pdf(y, 0.2 + 0.9 * x - 0.3 * z, 1.3);
            const double pw = sigmoid(-0.4 + 1.5 * x + 0.25 * y - 0.6 * z);
            const double px = sigmoid(0.1 + 0.8 * z);
            return f_main * (w == 1.0 ? pw : 1.0 - pw) * (x == 1.0 ? px : 1.0 - px);
        };
        const double x = d.column("x")[i];
        expected += std::log(std::isnan(x) ? term(0.0) + term(1.0) : term(x));
    }
    EXPECT_NEAR(joint_loglik_iv(f, spec, t), expected, 1e-10);
}

TEST(JointLikelihoodIv, FullyAnnotatedIsSumOfComponents) {
    const auto spec = JointModelSpec::defaults(parse_formula("y ~ x || w + z"), Family::GaussianIdentity);
    Dataset d = small_iv_data();
    d.set_column("x", {1, 0, 1, 0, 1});
    const AnalysisFrame f = build_frame(d, spec.main);
    const ThetaVector t = hand_theta(spec);

    const Matrix Xm = make_design({d.column("x"), d.column("z")}, {"x", "z"}, {}, 5).X;
    const Matrix Xe = make_design({d.column("x"), d.column("y"), d.column("z")}, {"x", "y", "z"}, {}, 5).X;
    const Matrix Xx = make_design({d.column("z")}, {"z"}, {}, 5).X;
    auto vec = [](std::span<const double> c) { return Vector(Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size()))); };
    Vector bm(3), be(4), bx(2);
    bm << 0.2, 0.9, -0.3;
    be << -0.4, 1.5, 0.25, -0.6;
    bx << 0.1, 0.8;
    const double expected = glm_loglik(Xm, vec(d.column("y")), bm, Family::GaussianIdentity, std::log(1.3)) +
                            glm_loglik(Xe, vec(d.column("w")), be, Family::BernoulliLogit) +
                            glm_loglik(Xx, vec(d.column("x")), bx, Family::BernoulliLogit);
    EXPECT_NEAR(joint_loglik_iv(f, spec, t), expected, 1e-10);
}

TEST(JointLikelihoodDv, UninformativeClassifierDropsMainModel) {
    const auto spec = JointModelSpec::defaults(parse_formula("y || w ~ x + z"), Family::BernoulliLogit);
    Dataset d;
    d.set_column("y", {kMissing, 1, 0});
    d.set_column("x", {1, 0, 1});
    d.set_column("w", {1, 1, 0});
    d.set_column("z", {0.4, -0.2, 0.9});
    const AnalysisFrame f = build_frame(d, spec.main);

    ThetaVector t = ThetaVector::layout(spec);
    t.at(Block::Error, "(Intercept)") = 0.3;
    t.at(Block::Error, "x") = -0.5;
    t.at(Block::Error, "z") = 0.7;
    t.at(Block::Error, "y") = 0.0; // p(w | y, x, z) identical for y = 0, 1

    // Row 0's contribution must not depend on the main-model parameters.
    auto row0 = [&](double b0, double bx) {
        ThetaVector u = t;
        u.at(Block::Main, "(Intercept)") = b0;
        u.at(Block::Main, "x") = bx;
        return JointLikelihood(f, spec).row_contributions(u.values())[0];
    };
    const double expected = std::log(sigmoid(0.3 - 0.5 * 1.0 + 0.7 * 0.4));
    EXPECT_NEAR(row0(0.0, 0.0), expected, 1e-12);
    EXPECT_NEAR(row0(2.0, -1.5), expected, 1e-12);
}

TEST(JointLikelihood, MatchesEnumerationOracle) {
    rng::Xoshiro256 gen(77);
    for (int k = 0; k < 60; ++k) {
        const int kind = k % 3;
        const auto p = oracle::random_problem(gen, 20, kind);
        const AnalysisFrame f = build_frame(p.dataset, p.spec.main);
        const double fast = kind == 2 ? joint_loglik_dv(f, p.spec, p.theta) : joint_loglik_iv(f, p.spec, p.theta);
        EXPECT_NEAR(fast, oracle::enumerate_loglik(p.dataset, p.spec, p.theta), 1e-10) << "problem " << k;
    }
}

TEST(JointLikelihood, AnalyticGradientMatchesFiniteDifferences) {
    rng::Xoshiro256 gen(78);
    for (int k = 0; k < 30; ++k) {
        const int kind = k % 3;
        const auto p = oracle::random_problem(gen, 25, kind);
        const AnalysisFrame f = build_frame(p.dataset, p.spec.main);
        const JointLikelihood lik(f, p.spec);
        const Objective obj = [&](const Vector& t) { return lik(t); };
        const Vector numeric = numeric_gradient(obj, p.theta.values(), 1e-6);
        const Vector analytic = lik.gradient(p.theta.values());
        for (Eigen::Index i = 0; i < numeric.size(); ++i) {
            EXPECT_NEAR(analytic[i], numeric[i], 1e-5 * (1.0 + std::abs(numeric[i]))) << "problem " << k << " slot " << i;
        }
    }
}

TEST(JointLikelihood, WrongCaseIsRejected) {
    const auto dv = JointModelSpec::defaults(parse_formula("y || w ~ x + z"), Family::BernoulliLogit);
    Dataset d;
    d.set_column("y", {kMissing, 1, 0});
    d.set_column("x", {1, 0, 1});
    d.set_column("w", {1, 1, 0});
    d.set_column("z", {0.4, -0.2, 0.9});
    const AnalysisFrame f = build_frame(d, dv.main);
    EXPECT_ERROR_CODE(joint_loglik_iv(f, dv, ThetaVector::layout(dv)), UnsupportedModel);
}

TEST(JointSpec, NondifferentialVariant) {
    const auto iv = JointModelSpec::defaults(parse_formula("y ~ x || w + z"), Family::GaussianIdentity);
    EXPECT_EQ(iv.error_model_terms, (std::vector<std::string>{"x", "y", "z"}));
    const auto iv_nd = nondifferential_variant(iv);
    EXPECT_EQ(iv_nd.error_model_terms, (std::vector<std::string>{"x", "z"}));
    EXPECT_EQ(nondifferential_variant(iv_nd).error_model_terms, iv_nd.error_model_terms);

    const auto dv = JointModelSpec::defaults(parse_formula("y || w ~ x + z"), Family::BernoulliLogit);
    EXPECT_EQ(dv.error_model_terms, (std::vector<std::string>{"y", "x", "z"}));
    const auto dv_nd = nondifferential_variant(dv);
    EXPECT_EQ(dv_nd.error_model_terms, std::vector<std::string>{"y"});
    EXPECT_EQ(nondifferential_variant(dv_nd).error_model_terms, dv_nd.error_model_terms);
}

TEST(JointSpec, ValidationErrors) {
    auto spec = JointModelSpec::defaults(parse_formula("y ~ x || w + z"), Family::GaussianIdentity);
    spec.error_model_terms = {"y", "z"};
    EXPECT_ERROR_CODE(spec.validate(), UnsupportedModel);
    auto dv = JointModelSpec::defaults(parse_formula("y || w ~ x + z"), Family::GaussianIdentity);
    EXPECT_ERROR_CODE(dv.validate(), UnsupportedModel);
    EXPECT_ERROR_CODE(JointModelSpec::defaults(parse_formula("y ~ x + z"), Family::GaussianIdentity), UnsupportedModel);
}

namespace {

struct IvSample {
    Dataset data;
    std::vector<double> truth;
};

IvSample iv_sample(std::size_t n, std::size_t m, std::uint64_t seed, double accuracy = 0.8) {
    rng::Xoshiro256 g(seed);
    IvSample s;
    std::vector<double> y(n), x(n), w(n), z(n);
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = g.normal(0.0, 0.5);
        x[i] = g.bernoulli(sigmoid(z[i])) ? 1.0 : 0.0;
        y[i] = 0.5 * x[i] + 0.3 * z[i] + g.normal();
        w[i] = g.bernoulli(accuracy) ? x[i] : 1.0 - x[i];
    }
    s.truth = x;
    for (std::size_t i = m; i < n; ++i) x[i] = kMissing;
    s.data.set_column("y", y);
    s.data.set_column("x", x);
    s.data.set_column("w", w);
    s.data.set_column("z", z);
    return s;
}

} // namespace

TEST(FitMla, FullyAnnotatedEqualsGlm) {
    const auto spec = JointModelSpec::defaults(parse_formula("y ~ x || w + z"), Family::GaussianIdentity);
    const IvSample s = iv_sample(300, 300, 9);
    const AnalysisFrame f = build_frame(s.data, spec.main);
    const MlaFit fit = fit_mla(f, spec);
    const Design d = make_design({s.data.column("x"), s.data.column("z")}, {"x", "z"}, {}, 300);
    const FitResult glm = fit_glm(d, Eigen::Map<const Vector>(s.data.column("y").data(), 300), Family::GaussianIdentity);
    for (const std::string t : {"(Intercept)", "x", "z"}) EXPECT_NEAR(fit.main.estimate(t), glm.estimate(t), 1e-6);
    EXPECT_NEAR(fit.main.estimate("sigma"), glm.estimate("sigma"), 1e-6);
    EXPECT_TRUE(fit.main.converged);
}

TEST(FitMla, RecoversCoefficientWithFewAnnotations) {
    const auto spec = JointModelSpec::defaults(parse_formula("y ~ x || w + z"), Family::GaussianIdentity);
    const IvSample s = iv_sample(20000, 1000, 10);
    const AnalysisFrame f = build_frame(s.data, spec.main);
    const MlaFit fit = fit_mla(f, spec);
    EXPECT_NEAR(fit.main.estimate("x"), 0.5, 4.0 * fit.main.std_error("x"));
    EXPECT_LT(fit.main.std_error("x"), 0.06);
    ASSERT_TRUE(fit.error_model);
    ASSERT_TRUE(fit.exposure_model);
    EXPECT_NEAR(fit.exposure_model->estimate("z"), 1.0, 0.3);
    // A naive regression is attenuated well below the truth.
    const FitResult naive = fit_naive(f, spec);
    EXPECT_LT(naive.estimate("x"), 0.4);
}

TEST(FitMla, PerfectClassifierUsesDeterministicErrorModel) {
    const auto spec = JointModelSpec::defaults(parse_formula("y ~ x || w + z"), Family::GaussianIdentity);
    IvSample s = iv_sample(400, 100, 11, 1.0);
    const AnalysisFrame f = build_frame(s.data, spec.main);
    const MlaFit fit = fit_mla(f, spec);
    EXPECT_FALSE(fit.error_model);
    // With W = X everywhere the estimate equals the regression on the truth.
    Dataset full = s.data;
    full.set_column("x", s.truth);
    const Design d = make_design({full.column("x"), full.column("z")}, {"x", "z"}, {}, 400);
    const FitResult glm = fit_glm(d, Eigen::Map<const Vector>(full.column("y").data(), 400), Family::GaussianIdentity);
    EXPECT_NEAR(fit.main.estimate("x"), glm.estimate("x"), 1e-5);
}

TEST(FitMla, TooFewAnnotations) {
    const auto spec = JointModelSpec::defaults(parse_formula("y ~ x || w + z"), Family::GaussianIdentity);
    const IvSample s = iv_sample(400, 10, 12);
    const AnalysisFrame f = build_frame(s.data, spec.main);
    EXPECT_ERROR_CODE(fit_mla(f, spec), TooFewAnnotations);
}
