#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "cclab/lichnerowicz.hpp"

namespace cclab {

/// Seed data (g, tau, sigma) plus the deformation parameters of the
/// (a,k)-family: effective mean curvature t tau^a, source |sigma+LW|^2 + k^2.
struct SeedData {
    ReducedGeometry geom;
    ScalarField tau;
    ReducedTT sigma;
    double a = 1.0;
    double t = 1.0;
    double k = 0.0;
    double p_sobolev = 0.0;  // 0 selects the default 2n

    SeedData(ReducedGeometry g, ScalarField tau_, ReducedTT sigma_, double a_ = 1.0,
             double t_ = 1.0, double k_ = 0.0, double p = 0.0)
        : geom(std::move(g)), tau(std::move(tau_)), sigma(std::move(sigma_)), a(a_), t(t_),
          k(k_), p_sobolev(p == 0.0 ? 2.0 * geom.n() : p) {
        geom.grid().check(tau);
        if (!(tau.minCoeff() > 0.0))
            throw InvalidState("SeedData: tau must be strictly positive (normalized sign)");
        if (a < 1.0) throw InvalidState("SeedData: exponent a must be >= 1");
        if (!(t > 0.0) || t > 1.0) throw InvalidState("SeedData: t must lie in (0,1]");
        if (k < 0.0) throw InvalidState("SeedData: k must be >= 0");
        if (!(p_sobolev > geom.n())) throw InvalidState("SeedData: p_sobolev must exceed n");
    }

    double q() const { return (geom.n() - 1.0) / geom.n(); }
    ScalarField tau_eff() const { return t * tau.pow(a); }
    bool sigma_is_zero() const {
        double s = sigma.xx.abs().maxCoeff();
        for (const auto& f : sigma.yy) s = std::max(s, f.abs().maxCoeff());
        for (const auto& f : sigma.xy) s = std::max(s, f.abs().maxCoeff());
        return s == 0.0;
    }
};

struct SolveReport {
    ScalarField phi;
    ReducedVector W;
    double res_lich = 0.0;
    double res_vector = 0.0;
    int iterations = 0;
    std::string branch;  // "small", "large", or "deformed(k)"
    double sup_phi = 0.0;
    bool converged = false;
};

struct TracePoint {
    double k = 0.0;
    double sup_phi = 0.0;
    double res_lich = 0.0;
    double res_vector = 0.0;
    int iterations = 0;
    std::string branch;
    bool converged = false;
    ScalarField phi;
    ReducedVector W;
};

struct ContinuationTrace {
    std::vector<TracePoint> points;
    bool fold_found = false;
    double k_fold = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> notes;
};

inline ReducedTT add_tensors(const ReducedTT& s, const ReducedTT& t) {
    ReducedTT out = s;
    out.xx += t.xx;
    for (size_t i = 0; i < out.yy.size(); ++i) out.yy[i] += t.yy[i];
    for (size_t i = 0; i < out.xy.size(); ++i) out.xy[i] += t.xy[i];
    return out;
}

/// Kernel-checked wrapper for the vector operator -(1/2)L*L.
class VectorOp {
public:
    explicit VectorOp(const ReducedGeometry& geom)
        : op_(LinearOperator1D::half_LL(geom)) {
        double smin = op_.smallest_singular_value();
        double smax = op_.largest_singular_value();
        if (smin < 1e-8 * smax) {
            ScalarField kdir = op_.kernel_direction();
            throw ConformalKillingKernel(
                "vector_solve: discrete 1/2 L*L has a (near-)kernel: conformal Killing field",
                std::vector<double>(kdir.data(), kdir.data() + kdir.size()));
        }
    }

    /// Solves -(1/2)L*LW = rhs for the raised x-component rhs.
    ReducedVector solve(const ScalarField& rhs) const { return op_.solve(-rhs); }

    const LinearOperator1D& op() const { return op_; }

private:
    LinearOperator1D op_;
};

inline ReducedVector vector_solve(const ReducedGeometry& geom, const ScalarField& rhs) {
    return VectorOp(geom).solve(rhs);
}

/// Raised x-component of (n-1)/n phi^N d(t tau^a).
inline ScalarField coupled_source(const SeedData& seed, const ScalarField& phi) {
    const ScalarField dte = seed.geom.grid().deriv(seed.tau_eff());
    return seed.q() * phi.pow(seed.geom.N_exp()) * dte / (seed.geom.A() * seed.geom.A());
}

inline ScalarField coupled_w2(const SeedData& seed, const ReducedVector& W, double k) {
    ReducedTT T = add_tensors(seed.sigma, seed.geom.apply_L(W));
    return seed.geom.tensor_norm2(T) + k * k;
}

struct ResidualPair {
    double lich = 0.0;
    double vector = 0.0;
};

/// Residuals of both equations at (phi, W). Kept free of any solver state so
/// it doubles as the independent re-verification pass.
inline ResidualPair coupled_residuals(const SeedData& seed, double k, const ScalarField& phi,
                                      const ReducedVector& W) {
    const ReducedGeometry& geom = seed.geom;
    const double N = geom.N_exp();
    const ScalarField te = seed.tau_eff();
    ScalarField F1 = geom.c_n() * geom.laplacian_apply(phi) + geom.R() * phi +
                     seed.q() * te.square() * phi.pow(N - 1.0) -
                     coupled_w2(seed, W, k) * phi.pow(-N - 1.0);
    ScalarField F2 = geom.half_vector_laplacian(W) + coupled_source(seed, phi);
    // the vector residual in metric magnitude |v|_g = A|v|
    return {F1.abs().maxCoeff(), (geom.A() * F2).abs().maxCoeff()};
}

inline double coupled_scale_lich(const SeedData& seed, double k, const ScalarField& phi,
                                 const ReducedVector& W) {
    return seed.geom.R().abs().maxCoeff() * phi.abs().maxCoeff() +
           coupled_w2(seed, W, k).maxCoeff();
}

inline double coupled_scale_vector(const SeedData& seed, const ScalarField& phi) {
    return (seed.geom.A() * coupled_source(seed, phi)).abs().maxCoeff() +
           seed.geom.R().abs().maxCoeff();
}

/// phi = (sqrt((n-1)/n) (|sigma + LW| + k) / (t tau^a))^{1/N}, floored where
/// the numerator vanishes.
inline ScalarField blowup_init(const SeedData& seed, const ReducedVector& W_guess, double k) {
    ReducedTT T = add_tensors(seed.sigma, seed.geom.apply_L(W_guess));
    ScalarField num = std::sqrt(seed.q()) * (seed.geom.tensor_norm2(T).sqrt() + k);
    ScalarField phiN = num / seed.tau_eff();
    return phiN.pow(1.0 / seed.geom.N_exp()).max(1e-6);
}

/// Alternating (Picard) iteration with geometric damping.
inline SolveReport picard_solve(const SeedData& seed, const ScalarField& phi_init,
                                int max_iter = 200, double tol = 1e-8,
                                double theta_d = 0.7) {
    const ReducedGeometry& geom = seed.geom;
    geom.grid().check(phi_init);
    if (!(phi_init.minCoeff() > 0.0))
        throw InvalidState("picard_solve: phi_init must be positive");
    VectorOp vop(geom);
    const ScalarField te = seed.tau_eff();

    ScalarField phi = phi_init;
    ReducedVector W = ReducedVector::Zero(geom.grid().num_points);
    std::vector<double> hist;
    for (int it = 1; it <= max_iter; ++it) {
        W = vop.solve(coupled_source(seed, phi));
        ScalarField w = coupled_w2(seed, W, seed.k).sqrt();
        LichProblem lp(geom, te, w, 1.0);
        ScalarField phi_new = lich_solve(lp, phi).phi;

        // test the undamped iterate first: at a fixed point it is the exact
        // scalar solve, which damping would otherwise blur
        ResidualPair rp = coupled_residuals(seed, seed.k, phi_new, W);
        hist.push_back(std::max(rp.lich, rp.vector));
        if (rp.lich <= tol * coupled_scale_lich(seed, seed.k, phi_new, W) &&
            rp.vector <= tol * coupled_scale_vector(seed, phi_new)) {
            return {phi_new, W,  rp.lich, rp.vector, it, "small",
                    phi_new.abs().maxCoeff(), true};
        }
        phi = phi.pow(1.0 - theta_d) * phi_new.pow(theta_d);
    }
    throw SolveFailure("picard_solve: no convergence", hist);
}

/// Shared matrices for the monolithic Newton solves of the coupled system.
class CoupledWorkspace {
public:
    explicit CoupledWorkspace(const SeedData& seed)
        : seed_(seed), m_(seed.geom.grid().num_points), D_(seed.geom.grid().deriv_matrix()) {
        const ReducedGeometry& geom = seed.geom;
        lap_ = geom.c_n() * geom.laplacian_matrix();
        Khalf_ = geom.vector_mass_diag().inverse().matrix().asDiagonal() *
                 geom.vector_stiffness();
        te_ = seed.tau_eff();
        dte_ = geom.grid().deriv(te_);
        for (int mu = 0; mu < geom.n(); ++mu) {
            auto [av, bv] = geom.L_coeffs(mu);
            Eigen::MatrixXd L = av.matrix().asDiagonal() * D_;
            L += Eigen::MatrixXd(bv.matrix().asDiagonal());
            Lmu_.push_back(std::move(L));
        }
    }

    int size() const { return m_; }
    const SeedData& seed() const { return seed_; }

    Eigen::VectorXd F(double k, const ScalarField& phi, const ReducedVector& W) const {
        const ReducedGeometry& geom = seed_.geom;
        const double N = geom.N_exp();
        ScalarField F1 = (lap_ * phi.matrix()).array() + geom.R() * phi +
                         seed_.q() * te_.square() * phi.pow(N - 1.0) -
                         coupled_w2(seed_, W, k) * phi.pow(-N - 1.0);
        ScalarField F2 = (Khalf_ * W.matrix()).array() +
                         seed_.q() * phi.pow(N) * dte_ / (geom.A() * geom.A());
        Eigen::VectorXd out(2 * m_);
        out.head(m_) = F1.matrix();
        out.tail(m_) = F2.matrix();
        return out;
    }

    Eigen::MatrixXd jacobian(double k, const ScalarField& phi, const ReducedVector& W) const {
        const ReducedGeometry& geom = seed_.geom;
        const double N = geom.N_exp();
        const ScalarField w2 = coupled_w2(seed_, W, k);
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * m_, 2 * m_);
        ScalarField d11 = geom.R() + (N - 1.0) * seed_.q() * te_.square() * phi.pow(N - 2.0) +
                          (N + 1.0) * w2 * phi.pow(-N - 2.0);
        J.topLeftCorner(m_, m_) = lap_;
        J.topLeftCorner(m_, m_) += Eigen::MatrixXd(d11.matrix().asDiagonal());

        // d/dW of -|sigma+LW|^2 phi^{-N-1}: -2 phi^{-N-1} sum_mu (T_mu/g_mu^2) L_mu
        ReducedTT T = add_tensors(seed_.sigma, geom.apply_L(W));
        ScalarField pref = -2.0 * phi.pow(-N - 1.0);
        for (int mu = 0; mu < geom.n(); ++mu) {
            const ScalarField& Tmu = mu == 0 ? T.xx : T.yy[mu - 1];
            ScalarField row = pref * Tmu / geom.metric_diag(mu).square();
            J.topRightCorner(m_, m_) += row.matrix().asDiagonal() * Lmu_[mu];
        }

        ScalarField d21 = seed_.q() * N * phi.pow(N - 1.0) * dte_ / (geom.A() * geom.A());
        J.bottomLeftCorner(m_, m_) = Eigen::MatrixXd(d21.matrix().asDiagonal());
        J.bottomRightCorner(m_, m_) = Khalf_;
        return J;
    }

    Eigen::VectorXd dF_dk(double k, const ScalarField& phi) const {
        const double N = seed_.geom.N_exp();
        Eigen::VectorXd out = Eigen::VectorXd::Zero(2 * m_);
        out.head(m_) = (-2.0 * k * phi.pow(-N - 1.0)).matrix();
        return out;
    }

    bool converged(double k, const ScalarField& phi, const ReducedVector& W,
                   double tol, ResidualPair* out = nullptr) const {
        ResidualPair rp = coupled_residuals(seed_, k, phi, W);
        if (out) *out = rp;
        return rp.lich <= tol * coupled_scale_lich(seed_, k, phi, W) &&
               rp.vector <= tol * coupled_scale_vector(seed_, phi);
    }

    /// Damped Newton at fixed k. Returns iterations used, or -1 on failure.
    int newton(double k, ScalarField& phi, ReducedVector& W, int max_iter = 50,
               double tol = 1e-8) const {
        ScalarField p = phi;
        ReducedVector w = W;
        Eigen::VectorXd Fv = F(k, p, w);
        double fn = Fv.lpNorm<Eigen::Infinity>();
        for (int it = 0; it <= max_iter; ++it) {
            if (converged(k, p, w, tol)) {
                phi = p;
                W = w;
                return it;
            }
            Eigen::VectorXd step =
                Eigen::PartialPivLU<Eigen::MatrixXd>(jacobian(k, p, w)).solve(-Fv);
            if (!step.allFinite()) return -1;
            double s = 1.0;
            bool ok = false;
            for (int half = 0; half < 30; ++half, s *= 0.5) {
                ScalarField pc = p + s * step.head(m_).array();
                if (!(pc.minCoeff() > 0.0)) continue;
                ReducedVector wc = w + s * step.tail(m_).array();
                Eigen::VectorXd Fc = F(k, pc, wc);
                double fc = Fc.lpNorm<Eigen::Infinity>();
                if (fc < fn) {
                    p = pc;
                    w = wc;
                    Fv = Fc;
                    fn = fc;
                    ok = true;
                    break;
                }
            }
            if (!ok) return -1;
        }
        return -1;
    }

private:
    SeedData seed_;
    int m_;
    Eigen::MatrixXd D_, lap_, Khalf_;
    ScalarField te_, dte_;
    std::vector<Eigen::MatrixXd> Lmu_;
};

namespace detail {

struct ArcState {
    ScalarField phi;
    ReducedVector W;
    double k;
};

/// The continuation variable stores k / k_scale so the parameter direction is
/// commensurate with the field components of the tangent.
inline Eigen::VectorXd pack(const ArcState& s, double k_scale) {
    const int m = s.phi.size();
    Eigen::VectorXd z(2 * m + 1);
    z.head(m) = s.phi.matrix();
    z.segment(m, m) = s.W.matrix();
    z[2 * m] = s.k / k_scale;
    return z;
}

inline ArcState unpack(const Eigen::VectorXd& z, double k_scale) {
    const int m = (z.size() - 1) / 2;
    return {z.head(m).array(), z.segment(m, m).array(), z[2 * m] * k_scale};
}

/// One pseudo-arclength corrector: Newton on [F; tang.(z - z_pred)] = 0.
inline bool arc_correct(const CoupledWorkspace& ws, double k_scale,
                        const Eigen::VectorXd& tang, const Eigen::VectorXd& z_pred,
                        Eigen::VectorXd& z, double tol) {
    const int m = ws.size();
    for (int it = 0; it < 30; ++it) {
        ArcState s = unpack(z, k_scale);
        if (!(s.phi.minCoeff() > 0.0) || s.k < -1e-6 * k_scale) return false;
        const double k = std::max(s.k, 0.0);
        Eigen::VectorXd Fv(2 * m + 1);
        Fv.head(2 * m) = ws.F(k, s.phi, s.W);
        Fv[2 * m] = tang.dot(z - z_pred);
        if (ws.converged(k, s.phi, s.W, tol) &&
            std::abs(Fv[2 * m]) <= 1e-8 * (1.0 + z.lpNorm<Eigen::Infinity>()))
            return true;
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * m + 1, 2 * m + 1);
        J.topLeftCorner(2 * m, 2 * m) = ws.jacobian(k, s.phi, s.W);
        J.topRightCorner(2 * m, 1) = k_scale * ws.dF_dk(k, s.phi);
        J.bottomRows(1) = tang.transpose();
        Eigen::VectorXd step = Eigen::PartialPivLU<Eigen::MatrixXd>(J).solve(-Fv);
        if (!step.allFinite()) return false;
        z += step;
    }
    return false;
}

}  // namespace detail

/// Natural continuation in k with fold detection by bisection and a
/// pseudo-arclength rounding of the fold back to small k.
inline ContinuationTrace k_sweep(const SeedData& seed, const std::vector<double>& k_grid,
                                 double tol = 1e-8) {
    if (k_grid.size() < 2) throw InvalidState("k_sweep: need at least two k values");
    ContinuationTrace trace;
    CoupledWorkspace ws(seed);
    const int m = seed.geom.grid().num_points;

    auto record = [&](double k, const ScalarField& phi, const ReducedVector& W,
                      int iters, const std::string& branch) {
        ResidualPair rp = coupled_residuals(seed, k, phi, W);
        trace.points.push_back(
            {k, phi.abs().maxCoeff(), rp.lich, rp.vector, iters, branch, true, phi, W});
    };

    // first point: Picard from phi = 1, Newton polish as fallback
    SeedData s0 = seed;
    s0.k = k_grid.front();
    ScalarField phi = ScalarField::Ones(m);
    ReducedVector W = ReducedVector::Zero(m);
    try {
        SolveReport rep = picard_solve(s0, phi, 200, tol);
        phi = rep.phi;
        W = rep.W;
    } catch (const SolveFailure&) {
        if (ws.newton(k_grid.front(), phi, W, 100, tol) < 0)
            throw SolveFailure("k_sweep: no solution at the initial k", {});
    }
    record(k_grid.front(), phi, W, 0, "small");

    // natural continuation
    double k_ok = k_grid.front();
    double k_fail = std::numeric_limits<double>::quiet_NaN();
    for (size_t j = 1; j < k_grid.size(); ++j) {
        ScalarField p = phi;
        ReducedVector w = W;
        int its = ws.newton(k_grid[j], p, w, 50, tol);
        if (its >= 0) {
            phi = p;
            W = w;
            k_ok = k_grid[j];
            record(k_ok, phi, W, its, "small");
        } else {
            k_fail = k_grid[j];
            trace.notes.push_back("natural continuation failed at k = " + std::to_string(k_fail));
            break;
        }
    }
    if (std::isnan(k_fail)) return trace;  // no fold within the grid

    // bisect toward the fold
    for (int i = 0; i < 40 && (k_fail - k_ok) > 1e-6 * (1.0 + k_fail); ++i) {
        double mid = 0.5 * (k_ok + k_fail);
        ScalarField p = phi;
        ReducedVector w = W;
        int its = ws.newton(mid, p, w, 50, tol);
        if (its >= 0) {
            phi = p;
            W = w;
            k_ok = mid;
            record(k_ok, phi, W, its, "small");
        } else {
            k_fail = mid;
        }
    }
    trace.fold_found = true;
    trace.k_fold = 0.5 * (k_ok + k_fail);

    // pseudo-arclength around the fold. The secant tangent needs two points
    // with a usable separation: the bisection endpoint plus the most recent
    // trace point that is not essentially coincident with it.
    if (trace.points.size() < 2) return trace;
    const double k_scale = std::max(1.0, trace.k_fold);
    const TracePoint& b = trace.points.back();
    Eigen::VectorXd z2 = detail::pack({b.phi, b.W, b.k}, k_scale);
    Eigen::VectorXd z1 = z2;
    for (auto it = trace.points.rbegin() + 1; it != trace.points.rend(); ++it) {
        Eigen::VectorXd cand = detail::pack({it->phi, it->W, it->k}, k_scale);
        if ((z2 - cand).norm() > 1e-4 * (1.0 + z2.norm())) {
            z1 = cand;
            break;
        }
    }
    Eigen::VectorXd tang = z2 - z1;
    if (!(tang.norm() > 0.0)) return trace;
    tang.normalize();

    const double ds_max = 0.05 * (1.0 + z2.norm());
    double ds = 0.01 * (1.0 + z2.norm());
    Eigen::VectorXd z = z2;
    const double k_end = k_grid.front();
    bool past_fold = false;
    for (int step = 0; step < 4000; ++step) {
        Eigen::VectorXd z_pred = z + ds * tang;
        Eigen::VectorXd z_new = z_pred;
        if (detail::arc_correct(ws, k_scale, tang, z_pred, z_new, tol)) {
            Eigen::VectorXd dirn = z_new - z;
            if (!(dirn.norm() > 0.0)) break;
            double dk = z_new[2 * m] - z[2 * m];
            if (dk < 0.0 && !past_fold) {
                past_fold = true;
                trace.k_fold = std::max(trace.k_fold, z[2 * m] * k_scale);
            }
            z = z_new;
            detail::ArcState s = detail::unpack(z, k_scale);
            record(std::max(s.k, 0.0), s.phi, s.W, 0, past_fold ? "large" : "deformed");
            tang = dirn / dirn.norm();
            if (ds < ds_max) ds *= 1.4;
            if (past_fold && s.k <= k_end + 1e-9 * k_scale) {
                // land exactly on the starting parameter value
                ScalarField p = s.phi;
                ReducedVector w = s.W;
                if (ws.newton(k_end, p, w, 50, tol) >= 0) record(k_end, p, w, 0, "large");
                return trace;
            }
        } else {
            // near the k >= 0 boundary the predictor overshoots negative;
            // finish with a plain fixed-k solve instead of shrinking forever
            detail::ArcState s = detail::unpack(z, k_scale);
            if (past_fold && s.k < 0.02 * k_scale + k_end) {
                ScalarField p = s.phi;
                ReducedVector w = s.W;
                if (ws.newton(k_end, p, w, 50, tol) >= 0) {
                    record(k_end, p, w, 0, "large");
                    return trace;
                }
            }
            ds *= 0.5;
            if (ds < 1e-10 * (1.0 + z.norm())) {
                trace.notes.push_back("pseudo-arclength stalled");
                return trace;
            }
        }
    }
    trace.notes.push_back("pseudo-arclength step budget exhausted");
    return trace;
}

struct AEstimate {
    double value = 0.0;
    bool admissibility_warning = false;
    TracePoint anchor;  // sup-attaining trace point (numerical "critical element")
    ContinuationTrace trace;
};

/// A(a) (or A(t)): sup of ||phi||_inf over the swept k-family.
inline AEstimate estimate_A(const SeedData& seed, const std::vector<double>& k_grid,
                            bool a_above_threshold = true, double tol = 1e-8) {
    AEstimate est;
    est.admissibility_warning = !a_above_threshold;
    est.trace = k_sweep(seed, k_grid, tol);
    for (const auto& p : est.trace.points)
        if (p.sup_phi >= est.value) {
            est.value = p.sup_phi;
            est.anchor = p;
        }
    return est;
}

struct TwoSolutions {
    SolveReport small;
    SolveReport large;
    ContinuationTrace trace;
};

/// Small branch at k = 0 plus the fold-return branch of the k-deformation.
/// The sweep grid is geometric: fold locations vary over orders of magnitude
/// with the seed strength, and natural continuation handles ~20% steps well.
inline TwoSolutions find_two_solutions(const SeedData& seed, double k_max = 1e5,
                                       int k_steps = 60, double tol = 1e-8) {
    if (seed.sigma_is_zero())
        throw InvalidState("find_two_solutions: sigma must not vanish identically");
    if (!(k_max > 0.0) || k_steps < 2)
        throw InvalidState("find_two_solutions: need k_max > 0 and k_steps >= 2");

    SeedData s0 = seed;
    s0.k = 0.0;
    const int m = seed.geom.grid().num_points;
    SolveReport small = picard_solve(s0, ScalarField::Ones(m), 200, tol);

    const double k_lo = std::min(k_max, std::max(1.0, 1e-5 * k_max));
    const double r = std::pow(k_lo / k_max, 1.0 / (k_steps - 1));
    std::vector<double> grid{0.0};
    for (int j = k_steps - 1; j >= 0; --j) grid.push_back(k_max * std::pow(r, j));
    ContinuationTrace trace = k_sweep(s0, grid, tol);
    if (!trace.fold_found)
        throw NotFound("find_two_solutions: no fold detected up to k_max");

    const TracePoint* back_home = nullptr;
    for (const auto& p : trace.points)
        if (p.branch == "large" && p.k <= 1e-9) back_home = &p;
    if (!back_home)
        throw NotFound("find_two_solutions: post-fold branch did not return to k = 0");

    SolveReport large;
    large.phi = back_home->phi;
    large.W = back_home->W;
    ResidualPair rp = coupled_residuals(s0, 0.0, large.phi, large.W);
    large.res_lich = rp.lich;
    large.res_vector = rp.vector;
    large.branch = "large";
    large.sup_phi = large.phi.abs().maxCoeff();
    large.converged = true;

    double gap = (large.phi - small.phi).abs().maxCoeff() / small.phi.abs().maxCoeff();
    if (gap < 0.1)
        throw NotFound("find_two_solutions: branches coincide (relative gap " +
                       std::to_string(gap) + " < 0.1)");
    return {std::move(small), std::move(large), std::move(trace)};
}

// ---------------------------------------------------------------------------
// admissibility diagnostics
// ---------------------------------------------------------------------------

struct AdmissibilityReport {
    double c = 0.0;
    bool violated = false;  // c effectively +infinity
    bool cmc = false;       // dtau == 0 everywhere
    double a_min = 0.0;     // (c/2) sqrt(n/(n-1))
    double excluded_fraction = 0.0;
    double cutoff = 0.0;    // absolute cutoff used on |omega|
};

/// c = max |L((dtau/tau)#)| / |dtau/tau|^2 over points above the cutoff.
inline AdmissibilityReport compute_c(const ReducedGeometry& geom, const ScalarField& tau,
                                     double eps_c = 0.0) {
    geom.grid().check(tau);
    if (!(tau.minCoeff() > 0.0)) throw InvalidState("compute_c: tau must be positive");
    const int m = geom.grid().num_points;
    const ScalarField omega_x = geom.grid().deriv(tau) / tau;     // 1-form component
    const ScalarField omega_mag = omega_x.abs() / geom.A();       // |omega|_g
    const ScalarField omega_sharp = omega_x / (geom.A() * geom.A());
    const ScalarField Lmag = geom.tensor_norm2(geom.apply_L(omega_sharp)).sqrt();

    AdmissibilityReport rep;
    double wmax = omega_mag.maxCoeff();
    rep.cutoff = eps_c > 0.0 ? eps_c : 1e-6 * wmax;
    if (wmax == 0.0) {
        rep.cmc = true;
        return rep;
    }
    const double scale = Lmag.maxCoeff();
    int excluded = 0;
    for (int i = 0; i < m; ++i) {
        if (omega_mag[i] > rep.cutoff) {
            rep.c = std::max(rep.c, Lmag[i] / (omega_mag[i] * omega_mag[i]));
        } else {
            ++excluded;
            if (Lmag[i] > rep.cutoff * scale) rep.violated = true;
        }
    }
    rep.excluded_fraction = double(excluded) / m;
    if (rep.violated) rep.c = std::numeric_limits<double>::infinity();
    const double n = geom.n();
    rep.a_min = rep.c / 2.0 * std::sqrt(n / (n - 1.0));
    return rep;
}

/// Plateau/transition layout for design_admissible_tau. The transition keeps
/// 1/u' piecewise linear (constant ratio |u''|/u'^2 = c_d, u = ln tau) with
/// smoothstep tapers into the plateaus.
struct TauLayout {
    double tau_min = 0.5;
    double tau_max = 0.9;
    double x_up = std::numbers::pi / 2.0;    // center of the rising transition
    double x_down = 3.0 * std::numbers::pi / 2.0;
    double half_width = 0.8;                 // core transition half-width
    double ell0 = 0.5;                       // 1/u' at the transition center
    double taper = 0.3;                      // smoothstep taper width
};

struct DesignedTau {
    ScalarField tau;
    double c_slope = 0.0;  // the constant |u''|/u'^2 on the core transition
};

inline DesignedTau design_admissible_tau(const Grid& grid, const TauLayout& lay) {
    if (!(lay.tau_min > 0.0) || !(lay.tau_max > lay.tau_min))
        throw InvalidLayout("design_admissible_tau: need 0 < tau_min < tau_max");
    const double h = grid.spacing();
    if (lay.half_width < 4.0 * h || lay.taper < 2.0 * h)
        throw InvalidLayout("design_admissible_tau: transition unresolved on this grid");
    if (!(lay.ell0 > 0.0)) throw InvalidLayout("design_admissible_tau: ell0 must be positive");

    const double du = std::log(lay.tau_max / lay.tau_min);
    // Delta u(c_d) = (2/c_d) ln(1 + c_d hw / ell0) + taper mass, decreasing in c_d
    auto total = [&](double cd) {
        double v_edge = 1.0 / (lay.ell0 + cd * lay.half_width);
        return 2.0 / cd * std::log1p(cd * lay.half_width / lay.ell0) + v_edge * lay.taper;
    };
    if (total(1e-12) <= du)
        throw InvalidLayout("design_admissible_tau: tau_max/tau_min too large for the layout");
    double lo = 1e-12, hi = 1.0;
    while (total(hi) > du) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        (total(mid) > du ? lo : hi) = mid;
    }
    const double cd = 0.5 * (lo + hi);
    const double v_edge = 1.0 / (lay.ell0 + cd * lay.half_width);

    // u on a half transition, measured from the taper start (u = 0 there)
    auto half_u = [&](double s) {  // s in [0, taper + half_width]
        if (s <= 0.0) return 0.0;
        if (s < lay.taper) {
            double xi = s / lay.taper;  // integral of v_edge * (3 xi^2 - 2 xi^3)
            return v_edge * lay.taper * (xi * xi * xi - 0.5 * xi * xi * xi * xi);
        }
        double x = std::min(s - lay.taper, lay.half_width);  // into the PL core
        return v_edge * lay.taper * 0.5 +
               (1.0 / cd) * (std::log(lay.ell0 + cd * lay.half_width) -
                             std::log(lay.ell0 + cd * (lay.half_width - x)));
    };
    const double half_span = lay.taper + lay.half_width;
    const double u_mid = half_u(half_span);  // = du/2 by construction

    const double period = grid.period;
    auto wrap_dist = [&](double x, double c) {
        double d = std::fmod(x - c, period);
        if (d < -period / 2.0) d += period;
        if (d > period / 2.0) d -= period;
        return d;
    };
    // transitions must not overlap
    double sep = std::abs(wrap_dist(lay.x_down, lay.x_up));
    if (sep < 2.0 * half_span || period - sep < 2.0 * half_span)
        throw InvalidLayout("design_admissible_tau: transitions overlap");

    ScalarField u(grid.num_points);
    for (int i = 0; i < grid.num_points; ++i) {
        double x = grid.x(i);
        double dup = wrap_dist(x, lay.x_up);
        double ddn = wrap_dist(x, lay.x_down);
        double val;
        if (std::abs(dup) <= half_span) {
            val = dup <= 0.0 ? half_u(half_span + dup) : 2.0 * u_mid - half_u(half_span - dup);
        } else if (std::abs(ddn) <= half_span) {
            val = ddn <= 0.0 ? 2.0 * u_mid - half_u(half_span + ddn) : half_u(half_span - ddn);
        } else {
            // plateau: high between up and down (going forward), low otherwise
            double fwd = std::fmod(x - lay.x_up + period, period);
            double span_hi = std::fmod(lay.x_down - lay.x_up + period, period);
            val = (fwd > half_span && fwd < span_hi - half_span) ? 2.0 * u_mid : 0.0;
        }
        u[i] = val;
    }
    return {lay.tau_min * u.exp(), cd};
}

/// ||d(t tau^a)||_{L^p}^{N+2} ||sigma||_{L^2}^{N-2}.
inline double smallness_functional(const SeedData& seed) {
    const ReducedGeometry& geom = seed.geom;
    const double N = geom.N_exp();
    ScalarField dmag = geom.grid().deriv(seed.tau_eff()).abs() / geom.A();
    double dterm = geom.Lp_norm(dmag, seed.p_sobolev);
    double sterm = geom.tensor_L2_norm(seed.sigma);
    return std::pow(dterm, N + 2.0) * std::pow(sterm, N - 2.0);
}

struct LimitEquationReport {
    double residual = 0.0;  // sup norm of -(1/2)L*LW - a sqrt(q)(|LW|+k)(dtau/tau)#
    double lhs = 0.0;       // a sqrt(q) int (|LW|+k) |dtau/tau|^2
    double mid = 0.0;       // -(1/2) int <LW, L((dtau/tau)#)>
    double bound = 0.0;     // (c/2) int |LW| |dtau/tau|^2 (with the measured c)
};

inline LimitEquationReport limit_equation_residual(const ReducedGeometry& geom,
                                                   const ScalarField& tau, double a,
                                                   const ReducedVector& W, double k,
                                                   double c_measured = 0.0) {
    geom.grid().check(tau);
    if (!(tau.minCoeff() > 0.0))
        throw InvalidState("limit_equation_residual: tau must be positive");
    const double q = (geom.n() - 1.0) / geom.n();
    const ScalarField omega_x = geom.grid().deriv(tau) / tau;
    const ScalarField omega_sharp = omega_x / (geom.A() * geom.A());
    const ScalarField omega2 = omega_x.square() / (geom.A() * geom.A());

    ReducedTT LW = geom.apply_L(W);
    ScalarField LWmag = geom.tensor_norm2(LW).sqrt();
    ScalarField res = -geom.half_vector_laplacian(W) -
                      a * std::sqrt(q) * (LWmag + k) * omega_sharp;

    LimitEquationReport rep;
    rep.residual = (geom.A() * res).abs().maxCoeff();
    rep.lhs = a * std::sqrt(q) * geom.integral((LWmag + k) * omega2);
    rep.mid = -0.5 * geom.integral(geom.tensor_dot(LW, geom.apply_L(omega_sharp)));
    rep.bound = 0.5 * c_measured * geom.integral(LWmag * omega2);
    return rep;
}

// ---------------------------------------------------------------------------
// the deformed operator T of the two-solution construction
// ---------------------------------------------------------------------------

struct DeformAnchors {
    ScalarField phi0;
    ReducedVector W0;
    double k0 = 0.0;
};

enum class DeformMode { ExponentSweep, ScaleSweep };  // a = a0/t sweep vs t-scale sweep

/// T(t, phi) = psi: solve the vector equation for W_{t,phi}, then the
/// Lichnerowicz equation with the anchored deformation source.
inline ScalarField deformed_T_apply(double t, const ScalarField& phi,
                                    const DeformAnchors& anchors, const SeedData& seed,
                                    DeformMode mode = DeformMode::ExponentSweep) {
    const ReducedGeometry& geom = seed.geom;
    const int m = geom.grid().num_points;
    geom.grid().check(phi);
    if (!(phi.minCoeff() > 0.0)) throw InvalidState("deformed_T_apply: phi must be positive");
    if (t < 0.0 || t > 1.0) throw InvalidState("deformed_T_apply: t must lie in [0,1]");
    const double N = geom.N_exp();
    const double q = (geom.n() - 1.0) / geom.n();

    ReducedTT LW0 = geom.apply_L(anchors.W0);
    double anchor_sup = geom.tensor_norm2(add_tensors(seed.sigma, LW0)).maxCoeff() +
                        anchors.k0 * anchors.k0;
    double gate = 2.0 * std::max(anchors.phi0.abs().maxCoeff(), 2.0) - phi.abs().maxCoeff();
    double deform = std::max(gate, 0.0) * anchor_sup;

    ScalarField tau_w;   // mean-curvature field entering the Lichnerowicz weight
    ScalarField w2base;  // |sigma + LW|^2 contribution
    if (mode == DeformMode::ExponentSweep) {
        if (t == 0.0) {
            // tau-free limit: psi_{0,phi} solves with the plain |sigma|^2 source
            tau_w = ScalarField::Zero(m);
            w2base = geom.tensor_norm2(seed.sigma);
        } else {
            if (!(seed.tau.maxCoeff() < 1.0))
                throw InvalidState("deformed_T_apply: exponent sweep needs max tau < 1");
            ScalarField tau_at = seed.tau.pow(seed.a / t);
            ScalarField src = std::pow(t, -N) * q * phi.pow(N) *
                              geom.grid().deriv(tau_at) / (geom.A() * geom.A());
            ReducedVector W = vector_solve(geom, src);
            w2base = geom.tensor_norm2(add_tensors(seed.sigma, geom.apply_L(W)));
            tau_w = tau_at;
        }
    } else {
        // t-scale sweep: W is t-independent, the Lich weight carries t^{2N} t0^2
        ScalarField tau_a = seed.tau.pow(seed.a);
        ScalarField src =
            seed.t * q * phi.pow(N) * geom.grid().deriv(tau_a) / (geom.A() * geom.A());
        ReducedVector W = vector_solve(geom, src);
        w2base = geom.tensor_norm2(add_tensors(seed.sigma, geom.apply_L(W)));
        tau_w = std::pow(t, N) * seed.t * tau_a;
    }

    ScalarField w = (w2base + deform).sqrt();
    LichProblem lp(geom, tau_w, w, 1.0);
    return lich_solve(lp).phi;
}

}  // namespace cclab
