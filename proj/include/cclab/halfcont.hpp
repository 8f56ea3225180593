#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cclab/errors.hpp"
#include "cclab/rng.hpp"

namespace cclab {

// ---------------------------------------------------------------------------
// Finite-dimensional half-continuity laboratory: the S-map construction, the
// boundedness certificate behind Schaefer-type homotopies, and a multistart
// search realizing the fixed-point / critical-tuple dichotomy.
// ---------------------------------------------------------------------------

/// Continuous family T : [0,1] x R^d -> R^d. At finite dimension, compactness
/// on bounded sets is automatic, so continuity is the only analytic input.
struct ParamMap {
    int dimension = 0;
    std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)> evaluator;
    /// Optional analytic x-Jacobian dT/dx (d x d); finite differences are used
    /// when absent.
    std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&)> jacobian;
};

using ConstraintFn = std::function<double(double, const Eigen::VectorXd&)>;

struct ProbeBox {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;
};

/// Candidate T-association: constraint family F_1..F_l with a probe box and a
/// sampling budget for the boundedness certificate.
struct TAssociation {
    ParamMap map;
    std::vector<ConstraintFn> constraints;
    ProbeBox box;
    int sample_budget = 20000;
};

namespace detail {

inline void validate_association_shape(const TAssociation& assoc) {
    const int d = assoc.map.dimension;
    if (d <= 0 || !assoc.map.evaluator)
        throw InvalidState("TAssociation: map must have positive dimension and an evaluator");
    if (assoc.constraints.empty())
        throw InvalidState("TAssociation: at least one constraint is required");
    if (assoc.box.lo.size() != d || assoc.box.hi.size() != d)
        throw InvalidState("TAssociation: probe box does not match the map dimension");
    if (((assoc.box.hi - assoc.box.lo).array() <= 0.0).any())
        throw InvalidState("TAssociation: probe box must have positive extent");
}

inline bool all_constraints_leq(const TAssociation& assoc, double t, const Eigen::VectorXd& x,
                                double slack = 0.0) {
    for (const auto& F : assoc.constraints) {
        double v = F(t, x);
        if (!std::isfinite(v) || v > slack) return false;
    }
    return true;
}

}  // namespace detail

/// The auxiliary S-map: (1, T(t,x)) on the constraint sublevel set (boundary
/// included), (0,0) otherwise. Total on the probe box by construction.
inline std::pair<double, Eigen::VectorXd> smap_eval(const TAssociation& assoc, double t,
                                                    const Eigen::VectorXd& x) {
    detail::validate_association_shape(assoc);
    const int d = assoc.map.dimension;
    if (x.size() != d) throw InvalidState("smap_eval: point does not match the map dimension");
    if (t < 0.0 || t > 1.0 || (x.array() < assoc.box.lo.array()).any() ||
        (x.array() > assoc.box.hi.array()).any())
        throw InvalidState("smap_eval: (t,x) outside the probe box");
    if (detail::all_constraints_leq(assoc, t, x)) {
        Eigen::VectorXd y = assoc.map.evaluator(t, x);
        if (y.size() != d || !y.allFinite())
            throw InvalidState("smap_eval: evaluator returned a non-finite or misshaped value");
        return {1.0, std::move(y)};
    }
    return {0.0, Eigen::VectorXd::Zero(d)};
}

/// Sampled boundedness certificate: C bounds sup ||T|| over the sampled
/// constraint sublevel set, probed on nested boxes to detect growth.
struct AssociationCertificate {
    double C = 0.0;            ///< sampled sup of ||T(t,x)||_2 over {all F_i <= 0}
    int samples_used = 0;      ///< total (t,x) evaluations
    int sublevel_hits = 0;     ///< samples that satisfied every constraint
    std::vector<double> level_sup;  ///< per-nesting-level sups (diagnostic)
};

/// Verifies the two association clauses: F_i(0,0) < 0 strictly, and sampled
/// boundedness of {T(t,x) : all F_i <= 0} across nested boxes (scales 1,2,4
/// about the probe-box center). Finite sampling cannot prove boundedness; the
/// certificate records what was checked. Throws NotAssociation with a witness
/// [t, x...] on clause failure or sampled growth.
inline AssociationCertificate check_association(const TAssociation& assoc,
                                                unsigned seed = 12345) {
    detail::validate_association_shape(assoc);
    if (assoc.sample_budget < 10000)
        throw InvalidState("check_association: sample budget must be at least 10^4");
    const int d = assoc.map.dimension;

    // Clause 1: strict negativity at the base point.
    const Eigen::VectorXd origin = Eigen::VectorXd::Zero(d);
    for (std::size_t i = 0; i < assoc.constraints.size(); ++i) {
        double v = assoc.constraints[i](0.0, origin);
        if (!(v < 0.0)) {
            std::vector<double> w(static_cast<std::size_t>(d) + 1, 0.0);
            throw NotAssociation("check_association: F_" + std::to_string(i) +
                                     "(0,0) is not strictly negative",
                                 std::move(w));
        }
    }

    // Clause 2: nested-box sampling. Deterministic corners/center at each
    // level catch boundary extrema exactly; the random bulk fills the volume.
    const Eigen::VectorXd center = 0.5 * (assoc.box.lo + assoc.box.hi);
    const Eigen::VectorXd half = 0.5 * (assoc.box.hi - assoc.box.lo);
    constexpr int kLevels = 3;
    const double tgrid[3] = {0.0, 0.5, 1.0};

    std::mt19937_64 rng(seed);
    AssociationCertificate cert;
    cert.level_sup.assign(kLevels, 0.0);
    std::vector<int> level_hits(kLevels, 0);
    double worst_norm = -1.0;
    double worst_t = 0.0;
    Eigen::VectorXd worst_x = origin;

    auto probe = [&](int level, double t, const Eigen::VectorXd& x) {
        ++cert.samples_used;
        if (!detail::all_constraints_leq(assoc, t, x)) return;
        Eigen::VectorXd y = assoc.map.evaluator(t, x);
        if (y.size() != d || !y.allFinite())
            throw InvalidState("check_association: evaluator returned a non-finite value");
        double nrm = y.norm();
        ++cert.sublevel_hits;
        ++level_hits[level];
        cert.level_sup[level] = std::max(cert.level_sup[level], nrm);
        if (nrm > worst_norm) {
            worst_norm = nrm;
            worst_t = t;
            worst_x = x;
        }
    };

    const int per_level = assoc.sample_budget / kLevels;
    for (int level = 0; level < kLevels; ++level) {
        const double scale = std::pow(2.0, level);
        const Eigen::VectorXd h = scale * half;
        int used = 0;
        // corners x center-free: 2^d corners when cheap, always the center
        if (d <= 10) {
            const int corners = 1 << d;
            for (int c = 0; c < corners && used + 3 <= per_level; ++c) {
                Eigen::VectorXd x = center;
                for (int j = 0; j < d; ++j) x[j] += ((c >> j) & 1 ? h[j] : -h[j]);
                for (double t : tgrid) probe(level, t, x);
                used += 3;
            }
        }
        for (double t : tgrid) probe(level, t, center);
        used += 3;
        while (used < per_level) {
            double t = detail::unit_real(rng);
            Eigen::VectorXd x(d);
            for (int j = 0; j < d; ++j)
                x[j] = center[j] + h[j] * (2.0 * detail::unit_real(rng) - 1.0);
            probe(level, t, x);
            ++used;
        }
    }

    // Growth across nested boxes => the constrained image is (sampled-)unbounded.
    bool growing = true;
    for (int level = 0; level + 1 < kLevels; ++level) {
        if (level_hits[level] == 0 || level_hits[level + 1] == 0 ||
            !(cert.level_sup[level + 1] > 1.5 * cert.level_sup[level] + 1e-12))
            growing = false;
    }
    if (growing) {
        std::vector<double> w;
        w.reserve(static_cast<std::size_t>(d) + 1);
        w.push_back(worst_t);
        for (int j = 0; j < d; ++j) w.push_back(worst_x[j]);
        throw NotAssociation(
            "check_association: sampled sup of ||T|| grows across nested boxes", std::move(w));
    }

    cert.C = worst_norm >= 0.0 ? worst_norm : 0.0;
    return cert;
}

// ---------------------------------------------------------------------------
// Dichotomy search
// ---------------------------------------------------------------------------

enum class DichotomyKind { FixedPoint, CriticalTuple, Inconclusive };

struct DichotomyResult {
    DichotomyKind kind = DichotomyKind::Inconclusive;
    double t = 1.0;
    Eigen::VectorXd x;
    int active_index = -1;          ///< which F_i vanishes (CriticalTuple only)
    double residual = std::numeric_limits<double>::infinity();
    double constraint_residual = 0.0;  ///< |F_active| at the tuple
};

namespace detail {

/// Damped Newton with finite-difference Jacobian (or a supplied one).
/// Returns true when ||G||_inf <= tol.
inline bool fd_newton(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& G,
                      Eigen::VectorXd& z, double tol, int max_iter = 80,
                      const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jac = {}) {
    const int n = static_cast<int>(z.size());
    Eigen::VectorXd g = G(z);
    if (g.size() != n || !g.allFinite()) return false;
    for (int it = 0; it < max_iter; ++it) {
        if (g.lpNorm<Eigen::Infinity>() <= tol) return true;
        Eigen::MatrixXd J(n, n);
        if (jac) {
            J = jac(z);
        } else {
            for (int j = 0; j < n; ++j) {
                const double h = 1e-7 * (1.0 + std::abs(z[j]));
                Eigen::VectorXd zp = z;
                zp[j] += h;
                Eigen::VectorXd gp = G(zp);
                if (gp.size() != n || !gp.allFinite()) return false;
                J.col(j) = (gp - g) / h;
            }
        }
        if (!J.allFinite()) return false;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
        lu.setThreshold(1e-12);
        if (lu.rank() < n) return false;
        Eigen::VectorXd dz = lu.solve(-g);
        if (!dz.allFinite()) return false;
        double lam = 1.0;
        bool stepped = false;
        const double g0 = g.norm();
        for (int k = 0; k < 30; ++k) {
            Eigen::VectorXd zt = z + lam * dz;
            Eigen::VectorXd gt = G(zt);
            if (gt.size() == n && gt.allFinite() && gt.norm() < g0 * (1.0 - 1e-4 * lam) + 1e-300) {
                z = std::move(zt);
                g = std::move(gt);
                stepped = true;
                break;
            }
            lam *= 0.5;
        }
        if (!stepped) return false;
    }
    return g.lpNorm<Eigen::Infinity>() <= tol;
}

}  // namespace detail

/// Two-phase realization of the dichotomy: phase 1 hunts a fixed point of
/// T(1,.) by multistart Newton over the certificate ball; on failure, phase 2
/// solves the square systems {x - t T(t,x) = 0, F_i(t,x) = 0}, one active
/// constraint at a time, accepting only tuples with t in [0,1] and every F_j
/// <= tol. Inconclusive is a value, not an error: finite search cannot refute
/// the theorem. Starts are evaluated in a fixed order and merged by lowest
/// residual (ties by start index), so results are deterministic for a seed.
inline DichotomyResult dichotomy_search(const TAssociation& assoc,
                                        const AssociationCertificate& cert, double tol = 1e-8,
                                        unsigned seed = 2024) {
    detail::validate_association_shape(assoc);
    if (!(tol > 0.0)) throw InvalidState("dichotomy_search: tolerance must be positive");
    const int d = assoc.map.dimension;
    const double ball = std::max(cert.C, 1.0);
    std::mt19937_64 rng(seed);
    const double inner_tol = std::min(tol, 1e-12);

    // ---- phase 1: fixed point of T(1,.) ----
    auto G1 = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        return x - assoc.map.evaluator(1.0, x);
    };
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> J1;
    if (assoc.map.jacobian)
        J1 = [&](const Eigen::VectorXd& x) -> Eigen::MatrixXd {
            return Eigen::MatrixXd::Identity(d, d) - assoc.map.jacobian(1.0, x);
        };

    std::vector<Eigen::VectorXd> xstarts;
    xstarts.push_back(Eigen::VectorXd::Zero(d));
    xstarts.push_back(0.5 * (assoc.box.lo + assoc.box.hi));
    for (int j = 0; j < d; ++j) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
        e[j] = ball;
        xstarts.push_back(e);
        xstarts.push_back(-e);
    }
    for (int r = 0; r < 16; ++r) {
        Eigen::VectorXd x(d);
        for (int j = 0; j < d; ++j) x[j] = detail::uniform(rng, -ball, ball);
        xstarts.push_back(std::move(x));
    }

    DichotomyResult best;
    for (const auto& x0 : xstarts) {
        Eigen::VectorXd x = x0;
        if (!detail::fd_newton(G1, x, inner_tol, 80, J1)) continue;
        double res = G1(x).lpNorm<Eigen::Infinity>();
        if (res <= tol && res < best.residual) {
            best.kind = DichotomyKind::FixedPoint;
            best.t = 1.0;
            best.x = x;
            best.residual = res;
            best.active_index = -1;
            best.constraint_residual = 0.0;
        }
    }
    if (best.kind == DichotomyKind::FixedPoint) return best;

    // ---- phase 2: critical tuples on each constraint boundary ----
    std::vector<double> tstarts = {0.05, 0.25, 0.5, 0.75, 0.95};
    std::vector<Eigen::VectorXd> x2starts = xstarts;
    for (int r = 0; r < 10; ++r) {
        Eigen::VectorXd x(d);
        for (int j = 0; j < d; ++j) x[j] = detail::uniform(rng, -ball, ball);
        x2starts.push_back(std::move(x));
    }

    for (std::size_t i = 0; i < assoc.constraints.size(); ++i) {
        const auto& Fi = assoc.constraints[i];
        auto G2 = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
            const double t = z[0];
            const Eigen::VectorXd x = z.tail(d);
            Eigen::VectorXd out(d + 1);
            out.head(d) = x - t * assoc.map.evaluator(t, x);
            out[d] = Fi(t, x);
            return out;
        };
        for (double t0 : tstarts) {
            for (const auto& x0 : x2starts) {
                Eigen::VectorXd z(d + 1);
                z[0] = t0;
                z.tail(d) = x0;
                if (!detail::fd_newton(G2, z, inner_tol, 80)) continue;
                const double t = z[0];
                const Eigen::VectorXd x = z.tail(d);
                if (t < -tol || t > 1.0 + tol) continue;
                if (!detail::all_constraints_leq(assoc, t, x, tol)) continue;
                const double eq_res =
                    (x - t * assoc.map.evaluator(t, x)).lpNorm<Eigen::Infinity>();
                const double f_res = std::abs(Fi(t, x));
                const double res = std::max(eq_res, f_res);
                if (res <= tol && res < best.residual) {
                    best.kind = DichotomyKind::CriticalTuple;
                    best.t = std::clamp(t, 0.0, 1.0);
                    best.x = x;
                    best.active_index = static_cast<int>(i);
                    best.residual = eq_res;
                    best.constraint_residual = f_res;
                }
            }
        }
    }
    return best;  // Inconclusive when neither phase produced an accepted point
}

// ---------------------------------------------------------------------------
// Half-continuity witnesses
// ---------------------------------------------------------------------------

struct HalfContWitness {
    Eigen::VectorXd p;  ///< separating functional (finite dimension: a vector)
    double radius;      ///< neighborhood radius around the probed point
};

/// Sampled half-continuity certificate at a non-fixed point x: search
/// candidate directions p (f(x)-x first, then random unit vectors) and
/// shrinking radii for <p, f(y)-y> > 0 over all sampled non-fixed y in the
/// ball. Empty optional = budget exhausted, which is not a disproof.
inline std::optional<HalfContWitness> half_continuity_witness(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    int sample_budget = 4000, unsigned seed = 7) {
    const int d = static_cast<int>(x.size());
    if (d <= 0) throw InvalidState("half_continuity_witness: empty point");
    Eigen::VectorXd gx = f(x) - x;
    if (!gx.allFinite())
        throw InvalidState("half_continuity_witness: f is not finite at the probed point");
    if (gx.lpNorm<Eigen::Infinity>() <= 1e-14)
        throw InvalidState("half_continuity_witness: x is a fixed point of f");

    std::mt19937_64 rng(seed);
    auto random_unit = [&]() -> Eigen::VectorXd {
        Eigen::VectorXd u(d);
        double nrm = 0.0;
        do {
            for (int j = 0; j < d; ++j) u[j] = 2.0 * detail::unit_real(rng) - 1.0;
            nrm = u.norm();
        } while (nrm < 1e-8);
        return u / nrm;
    };

    std::vector<Eigen::VectorXd> candidates;
    candidates.push_back(gx.normalized());
    for (int c = 0; c < 7; ++c) candidates.push_back(random_unit());
    const std::vector<double> radii = {0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625};

    const int per_pair = std::max<int>(
        16, sample_budget / static_cast<int>(candidates.size() * radii.size()));
    for (double r : radii) {
        for (const auto& p : candidates) {
            if (!(p.dot(gx) > 0.0)) continue;  // must separate at x itself
            bool ok = true;
            std::mt19937_64 local(seed ^ std::mt19937_64(static_cast<unsigned>(r * 1e6))());
            for (int s = 0; s < per_pair && ok; ++s) {
                Eigen::VectorXd y =
                    x + r * std::pow(detail::unit_real(local), 1.0 / d) * random_unit();
                Eigen::VectorXd gy = f(y) - y;
                if (!gy.allFinite()) {
                    ok = false;
                    break;
                }
                if (gy.lpNorm<Eigen::Infinity>() <= 1e-14) continue;  // fixed points exempt
                if (!(p.dot(gy) > 0.0)) ok = false;
            }
            if (ok) return HalfContWitness{p, r};
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Example gallery (addressable by name from the CLI)
// ---------------------------------------------------------------------------

struct GalleryExample {
    std::string name;
    TAssociation assoc;
    /// Pointwise map f(x) = T(1,x) for witness demonstrations.
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> pointwise;
    Eigen::VectorXd witness_point;  ///< suggested probe point for the witness demo
};

/// Named one-dimensional examples: "quadratic" (T = x^2+1, F = |x|-2),
/// "linear" (T = (x+1)/2, F = |x|-2), "schaefer" (quadratic T with
/// F = ||x|| - a), and "step" (the discontinuous-but-half-continuous step
/// map, for witness demos).
inline GalleryExample halfcont_gallery(const std::string& name, double a = 2.0) {
    auto box1 = [](double r) {
        ProbeBox b;
        b.lo = Eigen::VectorXd::Constant(1, -r);
        b.hi = Eigen::VectorXd::Constant(1, r);
        return b;
    };
    auto vec1 = [](double v) { return Eigen::VectorXd::Constant(1, v); };

    GalleryExample ex;
    ex.name = name;
    ex.assoc.map.dimension = 1;
    ex.assoc.sample_budget = 30000;
    ex.witness_point = vec1(0.0);

    if (name == "quadratic" || name == "schaefer") {
        const double bound = (name == "schaefer") ? a : 2.0;
        if (!(bound > 0.0)) throw InvalidState("halfcont_gallery: schaefer parameter a must be positive");
        ex.assoc.map.evaluator = [](double, const Eigen::VectorXd& x) {
            return Eigen::VectorXd::Constant(1, x[0] * x[0] + 1.0);
        };
        ex.assoc.map.jacobian = [](double, const Eigen::VectorXd& x) {
            return Eigen::MatrixXd::Constant(1, 1, 2.0 * x[0]);
        };
        ex.assoc.constraints = {[bound](double, const Eigen::VectorXd& x) {
            return x.norm() - bound;
        }};
        ex.assoc.box = box1(bound);
        ex.pointwise = [](const Eigen::VectorXd& x) {
            return Eigen::VectorXd::Constant(1, x[0] * x[0] + 1.0);
        };
        ex.witness_point = vec1(0.5);
    } else if (name == "linear") {
        ex.assoc.map.evaluator = [](double, const Eigen::VectorXd& x) {
            return Eigen::VectorXd::Constant(1, 0.5 * (x[0] + 1.0));
        };
        ex.assoc.map.jacobian = [](double, const Eigen::VectorXd&) {
            return Eigen::MatrixXd::Constant(1, 1, 0.5);
        };
        ex.assoc.constraints = {[](double, const Eigen::VectorXd& x) { return x.norm() - 2.0; }};
        ex.assoc.box = box1(2.0);
        ex.pointwise = [](const Eigen::VectorXd& x) {
            return Eigen::VectorXd::Constant(1, 0.5 * (x[0] + 1.0));
        };
        ex.witness_point = vec1(0.0);
    } else if (name == "step") {
        auto step = [](const Eigen::VectorXd& x) {
            return Eigen::VectorXd::Constant(1, (x[0] >= 0.0 && x[0] < 1.0) ? 3.0 : 2.0);
        };
        ex.assoc.map.evaluator = [step](double, const Eigen::VectorXd& x) { return step(x); };
        ex.assoc.constraints = {[](double, const Eigen::VectorXd& x) { return x.norm() - 4.0; }};
        ex.assoc.box = box1(4.0);
        ex.pointwise = step;
        ex.witness_point = vec1(1.0);
    } else {
        throw InvalidState("halfcont_gallery: unknown example '" + name + "'");
    }
    return ex;
}

}  // namespace cclab
