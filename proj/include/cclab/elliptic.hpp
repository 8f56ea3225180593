#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <mutex>
#include <optional>

#include "cclab/geometry.hpp"

namespace cclab {

/// Dense cyclic operator on grid fields. Factorization and singular-value
/// data are cached lazily; the object is read-only after construction.
class LinearOperator1D {
public:
    LinearOperator1D(Grid grid, Eigen::MatrixXd M, bool symmetric)
        : grid_(grid), M_(std::move(M)), symmetric_(symmetric),
          cache_(std::make_shared<Cache>()) {
        if (M_.rows() != grid_.num_points || M_.cols() != grid_.num_points)
            throw InvalidState("LinearOperator1D: matrix does not match grid");
        if (symmetric_) {
            double asym = (M_ - M_.transpose()).cwiseAbs().maxCoeff();
            if (asym > 1e-12 * std::max(1.0, M_.cwiseAbs().maxCoeff()))
                throw InvalidState("LinearOperator1D: symmetry flag set on asymmetric matrix");
        }
    }

    const Grid& grid() const { return grid_; }
    const Eigen::MatrixXd& matrix() const { return M_; }
    bool symmetric() const { return symmetric_; }

    ScalarField apply(const ScalarField& f) const {
        grid_.check(f);
        return (M_ * f.matrix()).array();
    }

    /// c_n Delta + R on the geometry, represented in node values (vol-symmetric,
    /// not elementwise symmetric).
    static LinearOperator1D conformal_laplacian(const ReducedGeometry& geom) {
        Eigen::MatrixXd M = geom.c_n() * geom.laplacian_matrix();
        M += Eigen::MatrixXd(geom.R().matrix().asDiagonal());
        return LinearOperator1D(geom.grid(), std::move(M), false);
    }

    /// (1/2)L*L acting on reduced vector fields: U^{-1} K.
    static LinearOperator1D half_LL(const ReducedGeometry& geom) {
        Eigen::MatrixXd M = geom.vector_mass_diag().inverse().matrix().asDiagonal() *
                            geom.vector_stiffness();
        return LinearOperator1D(geom.grid(), std::move(M), false);
    }

    double smallest_singular_value() const {
        svd();
        return cache_->sv[grid_.num_points - 1];
    }

    double largest_singular_value() const {
        svd();
        return cache_->sv[0];
    }

    /// Right singular vector of the smallest singular value, with the
    /// alternating (Nyquist) mode deflated on even grids: the centered
    /// derivative annihilates it, so it shadows the physical kernel.
    ScalarField kernel_direction() const {
        svd();
        const int m = grid_.num_points;
        Eigen::VectorXd v = cache_->V.col(m - 1);
        if (m % 2 == 0) {
            Eigen::VectorXd cb(m);
            for (int i = 0; i < m; ++i) cb[i] = (i % 2 == 0 ? 1.0 : -1.0);
            cb.normalize();
            Eigen::VectorXd w = v - cb * cb.dot(v);
            if (w.norm() > 1e-3) {
                // prefer the deflated direction when it is still (near-)null
                w.normalize();
                double rv = (M_ * w).norm();
                double rv0 = (M_ * v).norm() + smallest_singular_value();
                if (rv <= 10.0 * std::max(rv0, 1e-12 * M_.cwiseAbs().maxCoeff())) v = w;
            }
        }
        if (v.cwiseAbs().maxCoeff() > 0 && v.sum() < 0) v = -v;
        return v.array() / v.cwiseAbs().maxCoeff();
    }

    /// Direct solve with one step of iterative refinement. Throws
    /// SingularOperator (carrying a kernel estimate) when a pivot collapses.
    ScalarField solve(const ScalarField& rhs) const {
        grid_.check(rhs);
        {
            std::lock_guard<std::mutex> lk(cache_->mtx);
            if (!cache_->lu) {
                auto lu = std::make_unique<Eigen::FullPivLU<Eigen::MatrixXd>>(M_);
                lu->setThreshold(1e-13);
                cache_->lu = std::move(lu);
            }
        }
        const auto& lu = *cache_->lu;
        double scale = M_.cwiseAbs().maxCoeff();
        if (lu.rank() < grid_.num_points ||
            std::abs(lu.matrixLU().diagonal().cwiseAbs().minCoeff()) < 1e-13 * scale) {
            ScalarField k = kernel_direction();
            throw SingularOperator("solve_linear: operator numerically singular",
                                   std::vector<double>(k.data(), k.data() + k.size()));
        }
        Eigen::VectorXd x = lu.solve(rhs.matrix());
        x += lu.solve(rhs.matrix() - M_ * x);  // one refinement pass
        return x.array();
    }

private:
    void svd() const {
        std::call_once(cache_->svd_once, [&] {
            Eigen::BDCSVD<Eigen::MatrixXd> s(M_, Eigen::ComputeThinV);
            cache_->sv = s.singularValues();
            cache_->V = s.matrixV();
        });
    }

    struct Cache {
        std::mutex mtx;
        std::unique_ptr<Eigen::FullPivLU<Eigen::MatrixXd>> lu;
        std::once_flag svd_once;
        Eigen::VectorXd sv;
        Eigen::MatrixXd V;
    };

    Grid grid_;
    Eigen::MatrixXd M_;
    bool symmetric_;
    std::shared_ptr<Cache> cache_;
};

struct EigenPair {
    double lambda1;
    ScalarField u;  // positive ground state, sup-normalized
};

/// First eigenpair of c_n Delta + R over reduced fields, by shifted inverse
/// iteration with positivity projection (the ground state is simple and
/// positive, so u <- |u| cannot destroy convergence).
inline EigenPair conformal_laplacian_eigen(const ReducedGeometry& geom) {
    const int m = geom.grid().num_points;
    Eigen::MatrixXd M = geom.c_n() * geom.laplacian_matrix();
    M += Eigen::MatrixXd(geom.R().matrix().asDiagonal());

    const Eigen::VectorXd volw = geom.vol().matrix();
    auto rayleigh = [&](const Eigen::VectorXd& u) {
        return u.dot(volw.asDiagonal() * (M * u)) / u.dot(volw.asDiagonal() * u);
    };

    // Delta is PSD, so lambda1 >= min R: a safe strictly-lower shift exists
    double shift = geom.R().minCoeff() - 1.0;
    Eigen::VectorXd u = Eigen::VectorXd::Ones(m);
    double lam = rayleigh(u);
    const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());

    for (int it = 0; it < 200; ++it) {
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(M - shift * Eigen::MatrixXd::Identity(m, m));
        u = lu.solve(u);
        u = u.cwiseAbs();
        double nrm = u.lpNorm<Eigen::Infinity>();
        if (!(nrm > 0.0) || !u.allFinite())
            throw EigenFailure("conformal_laplacian_eigen: iteration degenerated");
        u /= nrm;
        lam = rayleigh(u);
        double res = (M * u - lam * u).lpNorm<Eigen::Infinity>();
        if (res <= 1e-12 * std::max(1.0, std::abs(lam)) + 1e-15 * scale)
            return {lam, u.array()};
        // Rayleigh-quotient shift once the iterate has settled, kept strictly
        // below the current estimate to preserve convergence to the bottom
        if (it >= 3) shift = lam - std::max(1e-8, 0.5 * res);
    }
    throw EigenFailure("conformal_laplacian_eigen: no convergence in 200 iterations");
}

/// Strictly positive conformal factor theta.
struct ConformalTransform {
    ScalarField theta;

    explicit ConformalTransform(ScalarField th) : theta(std::move(th)) {
        if (theta.size() == 0 || !(theta.minCoeff() > 0.0) || !theta.isFinite().all())
            throw InvalidTransform("ConformalTransform: theta must be strictly positive");
    }

    ConformalTransform inverse() const { return ConformalTransform(1.0 / theta); }
};

/// g_hat = theta^{N-2} g: profiles scale by theta^{(N-2)/2}; the transformed
/// curvature is stored from the conformal transformation law
/// R_hat = theta^{1-N} (c_n Delta theta + R theta), evaluated discretely.
inline ReducedGeometry transform_geometry(const ReducedGeometry& geom,
                                          const ConformalTransform& tf) {
    geom.grid().check(tf.theta);
    const double N = geom.N_exp();
    const ScalarField fac = tf.theta.pow((N - 2.0) / 2.0);
    std::vector<ScalarField> B;
    for (int i = 0; i < geom.num_B(); ++i) B.push_back(fac * geom.B(i));
    ScalarField Rhat = tf.theta.pow(1.0 - N) *
                       (geom.c_n() * geom.laplacian_apply(tf.theta) + geom.R() * tf.theta);
    return ReducedGeometry(geom.n(), geom.grid(), fac * geom.A(), std::move(B),
                           std::move(Rhat), true);
}

struct PositivizeResult {
    ReducedGeometry geom_hat;
    ConformalTransform theta;
    double lambda1;
};

/// Conformal change to strictly positive curvature: g_hat = u^{N-2} g with u
/// the ground state, so R_hat = lambda1 u^{2-N} > 0 in closed form.
inline PositivizeResult positivize(const ReducedGeometry& geom) {
    EigenPair ep = conformal_laplacian_eigen(geom);
    if (ep.lambda1 <= 1e-10)
        throw NotYamabePositive("positivize: first eigenvalue of c_n*Delta + R is not positive");
    ConformalTransform tf(ep.u);
    const double N = geom.N_exp();
    const ScalarField fac = ep.u.pow((N - 2.0) / 2.0);
    std::vector<ScalarField> B;
    for (int i = 0; i < geom.num_B(); ++i) B.push_back(fac * geom.B(i));
    ScalarField Rhat = ep.lambda1 * ep.u.pow(2.0 - N);
    ReducedGeometry ghat(geom.n(), geom.grid(), fac * geom.A(), std::move(B), std::move(Rhat),
                         true);
    return {std::move(ghat), std::move(tf), ep.lambda1};
}

/// Seed-data transport under theta: w_hat = theta^{-N} w, tau_hat = tau,
/// sigma_hat = theta^{-2} sigma.
inline ScalarField push_w(const ConformalTransform& tf, const ScalarField& w, double N) {
    return tf.theta.pow(-N) * w;
}

inline ScalarField push_tau(const ConformalTransform&, const ScalarField& tau) { return tau; }

inline ReducedTT push_sigma(const ConformalTransform& tf, const ReducedTT& sigma) {
    ReducedTT out = sigma;
    const ScalarField s = tf.theta.pow(-2.0);
    out.xx *= s;
    for (auto& f : out.yy) f *= s;
    for (auto& f : out.xy) f *= s;
    return out;
}

}  // namespace cclab
