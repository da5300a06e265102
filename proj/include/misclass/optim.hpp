#pragma once

// Finite-difference derivatives and a BFGS maximizer for smooth objectives.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "misclass/error.hpp"

namespace misclass {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Objective = std::function<double(const Vector&)>;

struct OptimOptions {
    double rel_tolerance = 1e-8;
    int max_iterations = 500;
    double fd_step_scale = std::cbrt(std::numeric_limits<double>::epsilon());

    void validate() const {
        if (!(rel_tolerance > 0.0)) fail(ErrorCode::InvalidConfig, "rel_tolerance must be positive");
        if (max_iterations < 1) fail(ErrorCode::InvalidConfig, "max_iterations must be at least 1");
        if (!(fd_step_scale > 0.0)) fail(ErrorCode::InvalidConfig, "fd_step_scale must be positive");
    }
};

namespace detail {

inline double fd_step(double theta, double scale) { return scale * std::max(1.0, std::abs(theta)); }

inline double checked(const Objective& f, const Vector& theta) {
    const double v = f(theta);
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteObjective, "objective is not finite at a probe point");
    return v;
}

} // namespace detail

/// Central-difference gradient.
inline Vector numeric_gradient(const Objective& f, const Vector& theta, double step_scale) {
    Vector g(theta.size());
    Vector probe = theta;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        const double h = detail::fd_step(theta[i], step_scale);
        probe[i] = theta[i] + h;
        const double up = detail::checked(f, probe);
        probe[i] = theta[i] - h;
        const double down = detail::checked(f, probe);
        probe[i] = theta[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// Central-difference Hessian, symmetrized as (H + H^T) / 2.
inline Matrix numeric_hessian(const Objective& f, const Vector& theta, double step_scale) {
    const Eigen::Index p = theta.size();
    Matrix H(p, p);
    Vector h(p);
    for (Eigen::Index i = 0; i < p; ++i) h[i] = detail::fd_step(theta[i], step_scale);

    const double f0 = detail::checked(f, theta);
    Vector probe = theta;
    for (Eigen::Index i = 0; i < p; ++i) {
        probe[i] = theta[i] + h[i];
        const double up = detail::checked(f, probe);
        probe[i] = theta[i] - h[i];
        const double down = detail::checked(f, probe);
        probe[i] = theta[i];
        H(i, i) = (up - 2.0 * f0 + down) / (h[i] * h[i]);
    }
    for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index j = i + 1; j < p; ++j) {
            double corners[4];
            const double si[4] = {1, 1, -1, -1};
            const double sj[4] = {1, -1, 1, -1};
            for (int c = 0; c < 4; ++c) {
                probe[i] = theta[i] + si[c] * h[i];
                probe[j] = theta[j] + sj[c] * h[j];
                corners[c] = detail::checked(f, probe);
            }
            probe[i] = theta[i];
            probe[j] = theta[j];
            H(i, j) = (corners[0] - corners[1] - corners[2] + corners[3]) / (4.0 * h[i] * h[j]);
            H(j, i) = H(i, j);
        }
    }
    return 0.5 * (H + H.transpose());
}

/// Hessian as the central-difference Jacobian of a gradient, symmetrized.
inline Matrix hessian_from_gradient(const std::function<Vector(const Vector&)>& gradient, const Vector& theta,
                                    double step_scale) {
    const Eigen::Index p = theta.size();
    Matrix H(p, p);
    Vector probe = theta;
    for (Eigen::Index i = 0; i < p; ++i) {
        const double h = detail::fd_step(theta[i], step_scale);
        probe[i] = theta[i] + h;
        const Vector up = gradient(probe);
        probe[i] = theta[i] - h;
        const Vector down = gradient(probe);
        probe[i] = theta[i];
        if (!up.allFinite() || !down.allFinite()) fail(ErrorCode::NonFiniteObjective, "gradient is not finite at a probe point");
        H.col(i) = (up - down) / (2.0 * h);
    }
    return 0.5 * (H + H.transpose());
}

struct MaximizeResult {
    Vector theta;
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
    Vector gradient;
};

/// Gradient provider; defaults to numeric_gradient of the objective.
using GradientFn = std::function<Vector(const Vector&)>;

/// BFGS ascent with backtracking line search. Converged when the relative
/// objective change falls below rel_tolerance and the gradient max-norm is
/// below 1e-7 * (1 + |value|). Non-convergence is reported through the
/// result flag with the best point found; only a non-finite objective at
/// theta0 throws.
inline MaximizeResult maximize(const Objective& objective, const Vector& theta0, const OptimOptions& options,
                               GradientFn gradient = {}) {
    options.validate();
    if (!gradient) {
        gradient = [&](const Vector& t) { return numeric_gradient(objective, t, options.fd_step_scale); };
    }
    // Minimize the negation internally; non-finite values act as +inf.
    auto f = [&](const Vector& t) {
        const double v = objective(t);
        return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
    };

    const double start = objective(theta0);
    if (!std::isfinite(start)) fail(ErrorCode::NonFiniteObjective, "objective is not finite at the starting point");

    const Eigen::Index p = theta0.size();
    MaximizeResult out;
    Vector x = theta0;
    double fx = -start;
    Vector g = -gradient(x);
    Matrix Hinv = Matrix::Identity(p, p);
    bool fresh_hessian = true;

    auto grad_ok = [&](const Vector& grad, double value) {
        return grad.lpNorm<Eigen::Infinity>() < 1e-7 * (1.0 + std::abs(value));
    };

    int iter = 0;
    for (; iter < options.max_iterations; ++iter) {
        Vector dir = -Hinv * g;
        double slope = g.dot(dir);
        if (!(slope < 0.0)) {
            Hinv.setIdentity();
            fresh_hessian = true;
            dir = -g;
            slope = g.dot(dir);
        }
        if (fresh_hessian) {
            // Keep the very first trial step modest in scale.
            const double norm = dir.lpNorm<Eigen::Infinity>();
            if (norm > 1.0) {
                dir /= norm;
                slope /= norm;
            }
        }

        double step = 1.0;
        double f_new = f(x + step * dir);
        int backtracks = 0;
        while (!(f_new <= fx + 1e-4 * step * slope) && backtracks < 60) {
            // Quadratic interpolation, safeguarded to [0.1, 0.5] of the step.
            double next = step * 0.5;
            if (std::isfinite(f_new)) {
                const double denom = 2.0 * (f_new - fx - slope * step);
                if (denom > 0.0) next = std::clamp(-slope * step * step / denom, 0.1 * step, 0.5 * step);
            }
            step = next;
            f_new = f(x + step * dir);
            ++backtracks;
        }

        if (!(f_new <= fx + 1e-4 * step * slope)) {
            // No acceptable step: either at the optimum to within roundoff or
            // the quasi-Newton model went stale.
            if (grad_ok(g, fx)) {
                out.converged = true;
                break;
            }
            if (!fresh_hessian) {
                Hinv.setIdentity();
                fresh_hessian = true;
                continue;
            }
            break;
        }

        const Vector s = step * dir;
        const Vector x_new = x + s;
        const Vector g_new = -gradient(x_new);
        const Vector y = g_new - g;
        const double rel_change = std::abs(f_new - fx) / std::max(std::abs(fx), 1e-300);

        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (fresh_hessian) Hinv *= sy / y.squaredNorm();
            const double rho = 1.0 / sy;
            const Matrix I = Matrix::Identity(p, p);
            Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) + rho * s * s.transpose();
            fresh_hessian = false;
        }

        x = x_new;
        fx = f_new;
        g = g_new;

        if (rel_change < options.rel_tolerance && grad_ok(g, fx)) {
            out.converged = true;
            ++iter;
            break;
        }
    }

    out.theta = x;
    out.value = -fx;
    out.iterations = iter;
    out.gradient = -g;
    return out;
}

} // namespace misclass
