#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "cclab/errors.hpp"

namespace cclab {

/// Grid samples of a scalar unknown (phi, tau, w, theta, ...).
using ScalarField = Eigen::ArrayXd;

/// The single component W(x) of the reduced vector field W = W(x) d/dx.
using ReducedVector = Eigen::ArrayXd;

/// Uniform periodic 1D grid. Index arithmetic is cyclic.
struct Grid {
    int num_points = 0;
    double period = 2.0 * std::numbers::pi;
    int derivative_order = 2;  // centered finite-difference order, 2 or 4

    Grid() = default;
    Grid(int n, double p = 2.0 * std::numbers::pi, int order = 2)
        : num_points(n), period(p), derivative_order(order) {
        if (n < 16) throw InvalidMetric("Grid: num_points must be >= 16");
        if (p <= 0.0) throw InvalidMetric("Grid: period must be positive");
        if (order != 2 && order != 4) throw InvalidMetric("Grid: derivative_order must be 2 or 4");
    }

    double spacing() const { return period / num_points; }
    double x(int i) const { return spacing() * i; }

    int wrap(int i) const {
        int m = i % num_points;
        return m < 0 ? m + num_points : m;
    }

    ScalarField coords() const {
        ScalarField out(num_points);
        for (int i = 0; i < num_points; ++i) out[i] = x(i);
        return out;
    }

    bool operator==(const Grid& o) const {
        return num_points == o.num_points && period == o.period &&
               derivative_order == o.derivative_order;
    }

    /// Centered first derivative at the nodes.
    ScalarField deriv(const ScalarField& f) const {
        check(f);
        const int n = num_points;
        const double h = spacing();
        ScalarField out(n);
        if (derivative_order == 2) {
            for (int i = 0; i < n; ++i)
                out[i] = (f[wrap(i + 1)] - f[wrap(i - 1)]) / (2.0 * h);
        } else {
            for (int i = 0; i < n; ++i)
                out[i] = (8.0 * (f[wrap(i + 1)] - f[wrap(i - 1)]) -
                          (f[wrap(i + 2)] - f[wrap(i - 2)])) /
                         (12.0 * h);
        }
        return out;
    }

    /// Dense matrix of the centered first derivative. Antisymmetric.
    Eigen::MatrixXd deriv_matrix() const {
        const int n = num_points;
        const double h = spacing();
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            if (derivative_order == 2) {
                d(i, wrap(i + 1)) += 1.0 / (2.0 * h);
                d(i, wrap(i - 1)) -= 1.0 / (2.0 * h);
            } else {
                d(i, wrap(i + 1)) += 8.0 / (12.0 * h);
                d(i, wrap(i - 1)) -= 8.0 / (12.0 * h);
                d(i, wrap(i + 2)) -= 1.0 / (12.0 * h);
                d(i, wrap(i - 2)) += 1.0 / (12.0 * h);
            }
        }
        return d;
    }

    /// Staggered first derivative: node values -> midpoint values.
    /// Entry m approximates f'(x_m + h/2). Kernel is exactly the constants.
    ScalarField deriv_staggered(const ScalarField& f) const {
        check(f);
        const int n = num_points;
        const double h = spacing();
        ScalarField out(n);
        if (derivative_order == 2) {
            for (int m = 0; m < n; ++m) out[m] = (f[wrap(m + 1)] - f[m]) / h;
        } else {
            for (int m = 0; m < n; ++m)
                out[m] = (27.0 * (f[wrap(m + 1)] - f[m]) -
                          (f[wrap(m + 2)] - f[wrap(m - 1)])) /
                         (24.0 * h);
        }
        return out;
    }

    /// Interpolate node values to midpoints at the grid's order.
    ScalarField to_midpoints(const ScalarField& f) const {
        check(f);
        const int n = num_points;
        ScalarField out(n);
        if (derivative_order == 2) {
            for (int m = 0; m < n; ++m) out[m] = 0.5 * (f[m] + f[wrap(m + 1)]);
        } else {
            for (int m = 0; m < n; ++m)
                out[m] = (9.0 * (f[m] + f[wrap(m + 1)]) -
                          (f[wrap(m - 1)] + f[wrap(m + 2)])) /
                         16.0;
        }
        return out;
    }

    void check(const ScalarField& f) const {
        if (static_cast<int>(f.size()) != num_points)
            throw InvalidState("field length does not match grid");
        if (!f.isFinite().all()) throw InvalidState("field has non-finite entries");
    }
};

}  // namespace cclab
