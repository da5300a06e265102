#pragma once

// Synthetic data for the misclassified-covariate (S1) and misclassified-outcome
// (S2) scenario families.
//
// S1: Z ~ N(0, 0.5), X ~ Bernoulli(logit^-1(g0 + g1 Z)), Y = b0 + bx X + bz Z + e,
//     W = 1{X + xi + c e / sigma > 0.5}, xi ~ N(0, s).
// S2: X, Z as in S1, Y ~ Bernoulli(logit^-1(b0 + bx X + bz Z)),
//     W = 1{Y + xi + c ((X - 0.5) + Z) > 0.5}, xi ~ Logistic(0, s).
// The noise scale s is calibrated to a target accuracy on a fixed sample.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "misclass/data.hpp"
#include "misclass/error.hpp"
#include "misclass/formula.hpp"
#include "misclass/glm.hpp"
#include "misclass/rng.hpp"

namespace misclass {

enum class Scenario { S1a, S1b, S2a, S2b };

inline std::string_view to_string(Scenario s) {
    switch (s) {
    case Scenario::S1a: return "s1a";
    case Scenario::S1b: return "s1b";
    case Scenario::S2a: return "s2a";
    case Scenario::S2b: return "s2b";
    }
    return "?";
}

inline std::optional<Scenario> parse_scenario(std::string_view name) {
    for (auto s : {Scenario::S1a, Scenario::S1b, Scenario::S2a, Scenario::S2b}) {
        if (to_string(s) == name) return s;
    }
    return std::nullopt;
}

/// True for the misclassified-covariate family.
inline bool covariate_family(Scenario s) { return s == Scenario::S1a || s == Scenario::S1b; }

/// Model formula matching the generated columns.
inline std::string scenario_formula(Scenario s) {
    return covariate_family(s) ? "y ~ x || w + z" : "y || w ~ x + z";
}

// Systematic coefficients giving corr(W - X, e) near -0.17 (S1b) and
// corr(W - Y, X) near 0.1 (S2b) at the default accuracies.
inline constexpr double kS1bSystematic = -0.21;
inline constexpr double kS2bSystematic = 0.34;

inline constexpr std::uint64_t kCalibrationSeed = 0x63616c6962ULL;
inline constexpr std::size_t kCalibrationDraws = 200000;

struct NoiseCalibration {
    double noise_scale = 0.0; ///< sd of xi (S1) or logistic scale of xi (S2)
    double sigma_eps = 0.0;   ///< sd of the normal outcome error (S1; 0 for S2)
};

struct ScenarioConfig {
    Scenario scenario = Scenario::S1a;
    std::size_t n_obs = 5000;
    std::size_t n_annotated = 200;
    std::uint64_t seed = 0;
    double b0 = 0.0;
    double b_x = 0.2;
    double b_z = 0.2;
    double p_x_intercept = 0.0;
    double zx_coefficient = 1.0;
    double target_accuracy = 0.72;
    double systematic_coefficient = 0.0;
    double r_squared = 0.10;
    double sigma2_extra = 0.0;
    bool binary_z = false;
    /// Skips calibration when set (e.g. computed once per study cell).
    std::optional<NoiseCalibration> calibration;

    static ScenarioConfig defaults(Scenario s) {
        ScenarioConfig c;
        c.scenario = s;
        switch (s) {
        case Scenario::S1a: break;
        case Scenario::S1b:
            c.target_accuracy = 0.74;
            c.systematic_coefficient = kS1bSystematic;
            break;
        case Scenario::S2a:
            c.b_x = 0.7;
            c.b_z = -0.7;
            c.target_accuracy = 0.72;
            break;
        case Scenario::S2b:
            c.b_x = 0.7;
            c.b_z = -0.7;
            c.target_accuracy = 0.73;
            c.systematic_coefficient = kS2bSystematic;
            break;
        }
        return c;
    }

    void validate() const {
        if (n_annotated > n_obs) fail(ErrorCode::InvalidConfig, "n_annotated exceeds n_obs");
        if (n_obs < 2) fail(ErrorCode::InvalidConfig, "n_obs must be at least 2");
        if (!(target_accuracy > 0.5 && target_accuracy <= 1.0)) {
            fail(ErrorCode::InvalidConfig, "target_accuracy must lie in (0.5, 1]");
        }
        if (!(r_squared > 0.0 && r_squared < 1.0)) fail(ErrorCode::InvalidConfig, "r_squared must lie in (0, 1)");
        if (!(sigma2_extra >= 0.0)) fail(ErrorCode::InvalidConfig, "sigma2_extra must be non-negative");
        for (double v : {b0, b_x, b_z, p_x_intercept, zx_coefficient, systematic_coefficient}) {
            if (!std::isfinite(v)) fail(ErrorCode::InvalidConfig, "scenario parameters must be finite");
        }
    }

    /// True coefficients in main-model term order: intercept, x, z.
    std::vector<std::pair<std::string, double>> truth() const {
        return {{kInterceptName, b0}, {"x", b_x}, {"z", b_z}};
    }
};

struct AchievedStats {
    double accuracy = 0.0;
    double rho_xz = 0.0;
    /// corr(W - X, e) for S1, corr(W - Y, X) for S2.
    double rho_error = 0.0;
    /// Share of Var(Y) explained by the linear predictor (S1 only).
    std::optional<double> r_squared;
};

struct GeneratedData {
    AnalysisFrame frame;
    std::vector<double> truth; ///< latent column on every row
    AchievedStats achieved;
    NoiseCalibration calibration;
    ScenarioConfig config;
};

namespace detail {

/// Row-level draws that do not depend on the noise scale.
struct BaseSample {
    std::vector<double> x, z, y, eps, u; // u: unit-scale classifier noise
};

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

/// Skewed mean-zero component: |N(0, s2)| - s2 sqrt(2/pi).
inline double extra_noise(rng::Xoshiro256& gen, double s2) {
    if (s2 <= 0.0) return 0.0;
    return std::abs(gen.normal(0.0, s2)) - s2 * std::sqrt(2.0 / M_PI);
}

/// Draws n rows. sigma_eps scales the normal outcome error in S1.
inline BaseSample draw_base(const ScenarioConfig& c, std::size_t n, double sigma_eps, rng::Xoshiro256& gen) {
    BaseSample s;
    s.x.resize(n);
    s.z.resize(n);
    s.y.resize(n);
    s.eps.resize(n);
    s.u.resize(n);
    const bool s1 = covariate_family(c.scenario);
    for (std::size_t i = 0; i < n; ++i) {
        const double z = c.binary_z ? (gen.bernoulli(0.5) ? 1.0 : 0.0) : gen.normal(0.0, 0.5);
        const double zc = c.binary_z ? z - 0.5 : z;
        const double x = gen.bernoulli(inv_logit(c.p_x_intercept + c.zx_coefficient * zc)) ? 1.0 : 0.0;
        const double eta = c.b0 + c.b_x * x + c.b_z * z;
        double y = 0.0, eps = 0.0, u = 0.0;
        if (s1) {
            eps = gen.normal(0.0, sigma_eps) + extra_noise(gen, c.sigma2_extra);
            y = eta + eps;
            u = gen.normal();
        } else {
            y = gen.bernoulli(inv_logit(eta)) ? 1.0 : 0.0;
            u = gen.logistic();
        }
        s.x[i] = x;
        s.z[i] = z;
        s.y[i] = y;
        s.eps[i] = eps;
        s.u[i] = u;
    }
    return s;
}

/// Classifier output for row i at noise scale `scale`.
inline double classify(const ScenarioConfig& c, const BaseSample& s, std::size_t i, double scale, double sigma_eps) {
    if (covariate_family(c.scenario)) {
        const double sys = sigma_eps > 0.0 ? c.systematic_coefficient * s.eps[i] / sigma_eps : 0.0;
        return s.x[i] + scale * s.u[i] + sys > 0.5 ? 1.0 : 0.0;
    }
    const double sys = c.systematic_coefficient * ((s.x[i] - 0.5) + s.z[i]);
    return s.y[i] + scale * s.u[i] + sys > 0.5 ? 1.0 : 0.0;
}

inline double accuracy_at(const ScenarioConfig& c, const BaseSample& s, double scale, double sigma_eps) {
    const bool s1 = covariate_family(c.scenario);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
        const double truth = s1 ? s.x[i] : s.y[i];
        hits += classify(c, s, i, scale, sigma_eps) == truth ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(s.x.size());
}

/// Outcome error sd giving the configured share of explained variance,
/// estimated on the calibration sample.
inline double solve_sigma_eps(const ScenarioConfig& c, rng::Xoshiro256& gen) {
    if (!covariate_family(c.scenario)) return 0.0;
    ScenarioConfig probe = c;
    probe.sigma2_extra = 0.0;
    const BaseSample s = draw_base(probe, kCalibrationDraws, 0.0, gen);
    std::vector<double> signal(s.x.size());
    for (std::size_t i = 0; i < s.x.size(); ++i) signal[i] = c.b_x * s.x[i] + c.b_z * s.z[i];
    const double n = static_cast<double>(signal.size());
    const double mean = std::accumulate(signal.begin(), signal.end(), 0.0) / n;
    double var = 0.0;
    for (double v : signal) var += (v - mean) * (v - mean);
    var /= n;
    if (!(var > 0.0)) fail(ErrorCode::CalibrationFailed, "main-model signal has zero variance");
    return std::sqrt(var * (1.0 - c.r_squared) / c.r_squared);
}

} // namespace detail

inline constexpr int kCalibrationMaxIterations = 60;
inline constexpr double kCalibrationTolerance = 0.005;

/// Finds the classifier noise scale hitting target_accuracy by bisection on
/// a fixed 200,000-row sample drawn at a constant sub-seed, so the result
/// depends only on the structural parameters (not on config.seed).
inline NoiseCalibration calibrate_noise(const ScenarioConfig& config) {
    const double target = config.target_accuracy;
    if (!(target > 0.5)) fail(ErrorCode::CalibrationFailed, "target accuracy must exceed 0.5");
    config.validate();

    rng::Xoshiro256 gen(rng::derive_seed(kCalibrationSeed, {static_cast<std::uint64_t>(config.scenario)}));
    NoiseCalibration out;
    out.sigma_eps = detail::solve_sigma_eps(config, gen);
    const detail::BaseSample s = detail::draw_base(config, kCalibrationDraws, out.sigma_eps, gen);
    auto acc = [&](double scale) { return detail::accuracy_at(config, s, scale, out.sigma_eps); };

    const double best = acc(0.0);
    if (target >= 1.0) {
        if (best == 1.0) return out;
        fail(ErrorCode::CalibrationFailed, "perfect accuracy is unreachable with a systematic component");
    }
    if (best < target) {
        fail(ErrorCode::CalibrationFailed, "target accuracy " + format_number(target) +
                                               " unreachable; noiseless accuracy is " + format_number(best));
    }
    double lo = 0.0;
    double hi = 1.0;
    while (acc(hi) > target) {
        hi *= 2.0;
        if (hi > 1e6) fail(ErrorCode::CalibrationFailed, "accuracy does not fall to the target as noise grows");
    }
    for (int it = 0; it < kCalibrationMaxIterations; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double a = acc(mid);
        if (std::abs(a - target) < kCalibrationTolerance) {
            out.noise_scale = mid;
            return out;
        }
        (a > target ? lo : hi) = mid;
    }
    fail(ErrorCode::CalibrationFailed, "bisection did not reach the target accuracy");
}

/// Draws one dataset. Annotated rows are a uniform random subset of size
/// n_annotated; the latent column is blank elsewhere.
inline GeneratedData generate(const ScenarioConfig& config) {
    config.validate();
    const NoiseCalibration cal = config.calibration ? *config.calibration : calibrate_noise(config);
    const std::size_t n = config.n_obs;
    const bool s1 = covariate_family(config.scenario);

    rng::Xoshiro256 gen(rng::derive_seed(config.seed, {1}));
    const detail::BaseSample s = detail::draw_base(config, n, cal.sigma_eps, gen);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = detail::classify(config, s, i, cal.noise_scale, cal.sigma_eps);

    // Partial Fisher-Yates for the annotated subset.
    rng::Xoshiro256 pick(rng::derive_seed(config.seed, {2}));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < config.n_annotated; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(pick.below(n - i));
        std::swap(order[i], order[j]);
    }
    std::vector<bool> mask(n, false);
    for (std::size_t i = 0; i < config.n_annotated; ++i) mask[order[i]] = true;

    const std::vector<double>& truth = s1 ? s.x : s.y;
    std::vector<double> latent(n);
    for (std::size_t i = 0; i < n; ++i) latent[i] = mask[i] ? truth[i] : kMissing;

    AchievedStats achieved;
    std::size_t hits = 0;
    std::vector<double> err(n);
    for (std::size_t i = 0; i < n; ++i) {
        hits += w[i] == truth[i] ? 1 : 0;
        err[i] = w[i] - truth[i];
    }
    achieved.accuracy = static_cast<double>(hits) / static_cast<double>(n);
    achieved.rho_xz = detail::pearson(s.x, s.z);
    achieved.rho_error = detail::pearson(err, s1 ? s.eps : s.x);
    if (s1) {
        std::vector<double> signal(n);
        for (std::size_t i = 0; i < n; ++i) signal[i] = config.b_x * s.x[i] + config.b_z * s.z[i];
        const double r = detail::pearson(signal, s.y);
        achieved.r_squared = r * r;
    }

    Dataset ds;
    ds.set_column("y", s1 ? s.y : latent);
    ds.set_column("w", std::move(w));
    ds.set_column("z", s.z);
    ds.set_column("x", s1 ? latent : s.x);
    const ModelSpec spec = parse_formula(scenario_formula(config.scenario));
    return GeneratedData{AnalysisFrame(std::move(ds), spec, std::move(mask)), truth, achieved, cal, config};
}

/// Column order of simulated CSV files.
inline const std::vector<std::string>& simulated_columns() {
    static const std::vector<std::string> cols{"y", "w", "z", "x"};
    return cols;
}

/// key=value metadata describing a generated dataset.
inline void write_metadata(std::ostream& out, const GeneratedData& g) {
    const auto& c = g.config;
    out << "scenario=" << to_string(c.scenario) << '\n'
        << "formula=" << scenario_formula(c.scenario) << '\n'
        << "seed=" << c.seed << '\n'
        << "n_obs=" << c.n_obs << '\n'
        << "n_annotated=" << c.n_annotated << '\n'
        << "b0=" << format_number(c.b0) << '\n'
        << "b_x=" << format_number(c.b_x) << '\n'
        << "b_z=" << format_number(c.b_z) << '\n'
        << "p_x_intercept=" << format_number(c.p_x_intercept) << '\n'
        << "zx_coefficient=" << format_number(c.zx_coefficient) << '\n'
        << "target_accuracy=" << format_number(c.target_accuracy) << '\n'
        << "systematic_coefficient=" << format_number(c.systematic_coefficient) << '\n'
        << "r_squared=" << format_number(c.r_squared) << '\n'
        << "sigma2_extra=" << format_number(c.sigma2_extra) << '\n'
        << "binary_z=" << (c.binary_z ? 1 : 0) << '\n'
        << "noise_scale=" << format_number(g.calibration.noise_scale) << '\n'
        << "sigma_eps=" << format_number(g.calibration.sigma_eps) << '\n'
        << "achieved_accuracy=" << format_number(g.achieved.accuracy) << '\n'
        << "achieved_rho_xz=" << format_number(g.achieved.rho_xz) << '\n'
        << "achieved_rho_error=" << format_number(g.achieved.rho_error) << '\n';
    if (g.achieved.r_squared) out << "achieved_r_squared=" << format_number(*g.achieved.r_squared) << '\n';
}

} // namespace misclass
