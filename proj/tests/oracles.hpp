#pragma once

// Independent reference implementations used by the tests. Nothing here
// calls into the library's likelihood code.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "misclass/data.hpp"
#include "misclass/formula.hpp"
#include "misclass/mla.hpp"
#include "misclass/rng.hpp"

namespace oracle {

using misclass::Block;

struct RandomProblem {
    misclass::Dataset dataset;
    misclass::JointModelSpec spec;
    misclass::ThetaVector theta;
};

inline double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

/// kind 0: IV gaussian, 1: IV logistic, 2: DV logistic.
inline RandomProblem random_problem(misclass::rng::Xoshiro256& gen, std::size_t n, int kind) {
    RandomProblem p;
    const bool iv = kind != 2;
    const auto main = misclass::parse_formula(iv ? "y ~ x || w + z1 + z2" : "y || w ~ x + z1");
    const auto family = kind == 0 ? misclass::Family::GaussianIdentity : misclass::Family::BernoulliLogit;
    p.spec = misclass::JointModelSpec::defaults(main, family);

    std::vector<double> x(n), y(n), w(n), z1(n), z2(n);
    for (std::size_t i = 0; i < n; ++i) {
        z1[i] = gen.normal();
        z2[i] = gen.normal();
        x[i] = gen.bernoulli(0.5) ? 1.0 : 0.0;
        y[i] = kind == 0 ? gen.normal(x[i], 1.0) : (gen.bernoulli(0.4) ? 1.0 : 0.0);
        w[i] = gen.bernoulli(0.5) ? 1.0 : 0.0;
    }
    // Hide the latent on a random subset, keeping at least one row of each kind.
    std::vector<double>& latent = iv ? x : y;
    for (std::size_t i = 0; i < n; ++i) {
        const bool hide = i == 0 || (i != 1 && gen.bernoulli(0.5));
        if (hide) latent[i] = misclass::kMissing;
    }
    p.dataset.set_column("y", y);
    p.dataset.set_column("x", x);
    p.dataset.set_column("w", w);
    p.dataset.set_column("z1", z1);
    if (iv) p.dataset.set_column("z2", z2);

    p.theta = misclass::ThetaVector::layout(p.spec);
    for (Eigen::Index k = 0; k < p.theta.values().size(); ++k) p.theta.values()[k] = gen.normal(0.0, 0.7);
    return p;
}

/// Log-likelihood by explicit enumeration of the latent value on every
/// unannotated row. Parameters are looked up by (block, term) name.
inline double enumerate_loglik(const misclass::Dataset& ds, const misclass::JointModelSpec& spec,
                               const misclass::ThetaVector& theta) {
    const std::string latent = spec.main.proxy->latent;
    const std::string surrogate = spec.main.proxy->surrogate;
    const bool iv = spec.main.proxy->position == misclass::ProxyPosition::IV;
    const bool gaussian = spec.main_family == misclass::Family::GaussianIdentity;

    double total = 0.0;
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        auto value = [&](const std::string& t, double v) { return t == latent ? v : ds.column(t)[i]; };
        const double observed = ds.column(latent)[i];
        std::vector<double> candidates;
        if (std::isnan(observed)) {
            candidates = {0.0, 1.0};
        } else {
            candidates = {observed};
        }
        double sum = 0.0;
        for (double v : candidates) {
            double eta = theta.at(Block::Main, "(Intercept)");
            for (const auto& t : spec.main.terms) eta += theta.at(Block::Main, t) * value(t, v);
            const double y = value(spec.main.response, v);
            double f;
            if (gaussian) {
                const double sigma = std::exp(theta.at(Block::Main, "log_sigma"));
                const double r = (y - eta) / sigma;
                f = std::exp(-0.5 * r * r) / (sigma * std::sqrt(2.0 * std::numbers::pi));
            } else {
                const double p1 = sigmoid(eta);
                f = y == 1.0 ? p1 : 1.0 - p1;
            }

            double a = theta.at(Block::Error, "(Intercept)");
            for (const auto& t : spec.error_model_terms) a += theta.at(Block::Error, t) * value(t, v);
            const double pw = sigmoid(a);
            const double err = ds.column(surrogate)[i] == 1.0 ? pw : 1.0 - pw;

            double expo = 1.0;
            if (iv) {
                double g = theta.at(Block::Exposure, "(Intercept)");
                for (const auto& t : spec.exposure_model_terms) g += theta.at(Block::Exposure, t) * value(t, v);
                const double px = sigmoid(g);
                expo = v == 1.0 ? px : 1.0 - px;
            }
            sum += f * err * expo;
        }
        total += std::log(sum);
    }
    return total;
}

} // namespace oracle
