#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

#include "cclab/elliptic.hpp"
#include "cclab/geometry.hpp"

namespace cclab {

/// Scalar problem c_n Delta phi + R phi + ((n-1)/n) t tau^2 phi^{N-1}
///              = w^2 phi^{-N-1}
/// on a background with min R > 0 (positivize first when needed).
struct LichProblem {
    ReducedGeometry geom;
    ScalarField tau;
    ScalarField w;
    double t = 1.0;

    LichProblem(ReducedGeometry g, ScalarField tau_, ScalarField w_, double t_ = 1.0)
        : geom(std::move(g)), tau(std::move(tau_)), w(std::move(w_)), t(t_) {
        geom.grid().check(tau);
        geom.grid().check(w);
        if (!(geom.R().minCoeff() > 0.0))
            throw InvalidState("LichProblem: min R must be positive (positivize the geometry)");
        if (!(w.abs().maxCoeff() > 0.0))
            throw InvalidState("LichProblem: w must not vanish identically (Case 1 needs w != 0)");
        if (t < 0.0 || t > 1.0) throw InvalidState("LichProblem: t must lie in [0,1]");
    }

    double q() const { return (geom.n() - 1.0) / geom.n(); }
};

struct Bracket {
    double phi_minus;
    double phi_plus;
};

inline ScalarField lich_residual(const LichProblem& prob, const ScalarField& phi) {
    prob.geom.grid().check(phi);
    if (!(phi.minCoeff() > 0.0)) throw InvalidState("residual: phi must be positive");
    const double N = prob.geom.N_exp();
    return prob.geom.c_n() * prob.geom.laplacian_apply(phi) + prob.geom.R() * phi +
           prob.q() * prob.t * prob.tau.square() * phi.pow(N - 1.0) -
           prob.w.square() * phi.pow(-N - 1.0);
}

/// Residual of the zero-order (constant-phi) part only; used for the
/// pointwise sign checks on constant sub/supersolutions.
inline ScalarField constant_residual(const LichProblem& prob, double phi) {
    const double N = prob.geom.N_exp();
    return prob.geom.R() * phi + prob.q() * prob.t * prob.tau.square() * std::pow(phi, N - 1.0) -
           prob.w.square() * std::pow(phi, -N - 1.0);
}

/// Constant sub/supersolutions, derived then verified by sign checks.
inline Bracket bracket(const LichProblem& prob) {
    const double N = prob.geom.N_exp();
    const double w2max = prob.w.square().maxCoeff();
    const double w2min = prob.w.square().minCoeff();
    const double Rmin = prob.geom.R().minCoeff();
    const double Rmax = prob.geom.R().maxCoeff();

    double phi_p = std::max(1.0, std::pow(w2max / Rmin, 1.0 / (N + 2.0)));
    for (int i = 0; i < 60 && constant_residual(prob, phi_p).minCoeff() < 0.0; ++i) phi_p *= 2.0;
    if (constant_residual(prob, phi_p).minCoeff() < 0.0)
        throw NoBracket("bracket: no constant supersolution found");

    if (w2min <= 0.0)
        throw NoBracket("bracket: w vanishes somewhere, constant subsolution degenerates");
    const double denom =
        Rmax + prob.q() * prob.t * prob.tau.square().maxCoeff() * std::pow(phi_p, N - 2.0);
    double phi_m =
        std::min(phi_p, 0.9 * std::pow(w2min / denom, 1.0 / (N + 2.0)));
    for (int i = 0; i < 200 && constant_residual(prob, phi_m).maxCoeff() > 0.0; ++i) phi_m *= 0.5;
    if (constant_residual(prob, phi_m).maxCoeff() > 0.0)
        throw NoBracket("bracket: no constant subsolution found");
    return {phi_m, phi_p};
}

struct LichSolution {
    ScalarField phi;
    int iterations = 0;
    double residual_norm = 0.0;
};

inline double lich_scale(const LichProblem& prob, const ScalarField& phi) {
    return prob.geom.R().abs().maxCoeff() * phi.abs().maxCoeff() +
           prob.w.square().maxCoeff();
}

/// Monotone sub/supersolution iteration from phi_plus downward:
/// (c_n Delta + m) phi_{k+1} = m phi_k - G(phi_k) with m at least the
/// Lipschitz bound of G over the bracket, so iterates decrease pointwise.
inline LichSolution monotone_iterate(const LichProblem& prob, const Bracket& br,
                                     int max_iter = 200, double tol_factor = 1e-10) {
    const ReducedGeometry& geom = prob.geom;
    const int m = geom.grid().num_points;
    const double N = geom.N_exp();
    const double q = prob.q();
    const ScalarField tau2 = prob.tau.square();
    const ScalarField w2 = prob.w.square();

    const double shift = geom.R().maxCoeff() +
                         (N - 1.0) * q * prob.t * tau2.maxCoeff() * std::pow(br.phi_plus, N - 2.0) +
                         (N + 1.0) * w2.maxCoeff() * std::pow(br.phi_minus, -N - 2.0);
    Eigen::MatrixXd Mop = geom.c_n() * geom.laplacian_matrix();
    Mop += shift * Eigen::MatrixXd::Identity(m, m);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(Mop);

    ScalarField phi = ScalarField::Constant(m, br.phi_plus);
    std::vector<double> hist;
    for (int it = 0; it <= max_iter; ++it) {
        ScalarField res = lich_residual(prob, phi);
        double rn = res.abs().maxCoeff();
        hist.push_back(rn);
        if (rn <= tol_factor * lich_scale(prob, phi)) return {phi, it, rn};
        ScalarField G = geom.R() * phi + q * prob.t * tau2 * phi.pow(N - 1.0) -
                        w2 * phi.pow(-N - 1.0);
        ScalarField next = lu.solve((shift * phi - G).matrix()).array();
        if ((next - phi).maxCoeff() > 1e-12 * std::max(1.0, phi.abs().maxCoeff()))
            throw SolveFailure("monotone_iterate: monotonicity violated", hist);
        if (next.minCoeff() < br.phi_minus - 1e-9 * std::max(1.0, br.phi_minus))
            throw SolveFailure("monotone_iterate: iterate escaped the bracket", hist);
        phi = next;
    }
    throw SolveFailure("monotone_iterate: no convergence", hist);
}

/// Damped Newton safeguarded by the constant bracket, monotone fallback.
inline LichSolution lich_solve(const LichProblem& prob,
                               std::optional<ScalarField> init = std::nullopt,
                               int max_iter = 200, double tol_factor = 1e-10) {
    const ReducedGeometry& geom = prob.geom;
    const int m = geom.grid().num_points;
    const double N = geom.N_exp();
    const double q = prob.q();
    const ScalarField tau2 = prob.tau.square();
    const ScalarField w2 = prob.w.square();
    const Bracket br = bracket(prob);

    ScalarField phi = init ? *init : ScalarField::Constant(m, std::sqrt(br.phi_minus * br.phi_plus));
    geom.grid().check(phi);
    phi = phi.max(br.phi_minus / 2.0).min(2.0 * br.phi_plus);

    std::vector<double> hist;
    ScalarField res = lich_residual(prob, phi);
    double rn = res.abs().maxCoeff();
    for (int it = 0; it <= max_iter; ++it) {
        hist.push_back(rn);
        if (rn <= tol_factor * lich_scale(prob, phi)) {
            // clip-by-construction can leave phi marginally outside the
            // mathematical bracket only by roundoff
            return {phi, it, rn};
        }
        ScalarField diag = geom.R() + (N - 1.0) * q * prob.t * tau2 * phi.pow(N - 2.0) +
                           (N + 1.0) * w2 * phi.pow(-N - 2.0);
        Eigen::MatrixXd J = geom.c_n() * geom.laplacian_matrix();
        J += Eigen::MatrixXd(diag.matrix().asDiagonal());
        ScalarField step = (-Eigen::PartialPivLU<Eigen::MatrixXd>(J).solve(res.matrix())).array();

        double s = 1.0;
        bool accepted = false;
        for (int half = 0; half < 40; ++half, s *= 0.5) {
            ScalarField cand = (phi + s * step).max(br.phi_minus / 2.0).min(2.0 * br.phi_plus);
            ScalarField cres = lich_residual(prob, cand);
            double crn = cres.abs().maxCoeff();
            if (crn < rn) {
                phi = cand;
                res = cres;
                rn = crn;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;  // Newton stalled; fall back to the monotone scheme
    }
    try {
        return monotone_iterate(prob, br, 10 * max_iter, tol_factor);
    } catch (const SolveFailure& e) {
        std::vector<double> all = hist;
        all.insert(all.end(), e.residual_history.begin(), e.residual_history.end());
        throw SolveFailure("solve: Newton and monotone iteration both failed", all);
    }
}

struct DerivativeReport {
    ScalarField derivative;   // best central-difference estimate
    double slope = 0.0;       // Richardson order estimate (expect ~2)
    std::vector<double> errors;
};

/// C^1 diagnostics of the solution map w -> phi(w) by central differences.
inline DerivativeReport solution_map_derivative_check(const LichProblem& prob,
                                                      const ScalarField& dw,
                                                      const std::vector<double>& eps_seq) {
    prob.geom.grid().check(dw);
    std::vector<ScalarField> D;
    for (double eps : eps_seq) {
        LichProblem pp(prob.geom, prob.tau, prob.w + eps * dw, prob.t);
        LichProblem pm(prob.geom, prob.tau, prob.w - eps * dw, prob.t);
        D.push_back((lich_solve(pp).phi - lich_solve(pm).phi) / (2.0 * eps));
    }
    DerivativeReport rep;
    rep.derivative = D.back();
    if (D.size() >= 2) {
        // Richardson extrapolation of the second-order tail
        double r = eps_seq[eps_seq.size() - 2] / eps_seq.back();
        rep.derivative = D.back() + (D.back() - D[D.size() - 2]) / (r * r - 1.0);
    }
    if (D.size() >= 3) {
        // successive differences of a second-order sequence scale like eps^2
        for (size_t i = 0; i + 1 < D.size(); ++i)
            rep.errors.push_back((D[i] - D[i + 1]).abs().maxCoeff());
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i + 1 < rep.errors.size(); ++i) {
            num += std::log(rep.errors[i] / rep.errors[i + 1]);
            den += std::log(eps_seq[i] / eps_seq[i + 1]);
        }
        rep.slope = den != 0.0 ? num / den : 0.0;
    }
    return rep;
}

/// Solve, transport by theta, solve the transformed problem, and report the
/// relative defect of the covariance identity phi_hat = theta^{-1} phi.
inline double conformal_covariance_check(const LichProblem& prob, const ConformalTransform& tf) {
    ScalarField phi = lich_solve(prob).phi;
    ReducedGeometry ghat = transform_geometry(prob.geom, tf);
    LichProblem phat(ghat, push_tau(tf, prob.tau), push_w(tf, prob.w, prob.geom.N_exp()),
                     prob.t);
    ScalarField phi_hat = lich_solve(phat).phi;
    ScalarField expect = phi / tf.theta;
    return (phi_hat - expect).abs().maxCoeff() / expect.abs().maxCoeff();
}

}  // namespace cclab
