// Acceptance gate: one pass/fail line per criterion, pinned tolerances.
// Exit code = number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "cclab/config.hpp"
#include "oracles.hpp"

using namespace cclab;
using oracles::AnalyticFn;

namespace {

int failures = 0;

void report(int num, bool ok, const std::string& detail) {
    std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", num, detail.c_str());
    if (!ok) ++failures;
}

double sup(const ScalarField& f) { return f.abs().maxCoeff(); }

double now_seconds(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Flat profiles with a constant curvature shift: R == r exactly.
ReducedGeometry const_R(int m, double r, int order = 2) {
    Grid g(m, 2.0 * std::numbers::pi, order);
    ScalarField one = ScalarField::Ones(m);
    return ReducedGeometry(3, g, one, {one, one}, r);
}

ReducedGeometry warped_pos(int m, int order = 2, double shift = 2.0) {
    Grid g(m, 2.0 * std::numbers::pi, order);
    auto A = oracles::sine(1.0, 0.3, 1.0);
    auto B0 = oracles::cosine(1.0, 0.2, 1.0);
    auto B1 = oracles::sine(1.2, 0.25, 2.0);
    ReducedGeometry geom(3, g, A.eval(g), {B0.eval(g), B1.eval(g)}, shift);
    return positivize(geom).geom_hat;
}

/// Bisection oracle for R phi + a phi^{N-1} = w2 phi^{-N-1}.
double phi_root(double R, double a, double w2, double N) {
    auto f = [&](double p) {
        return R * p + a * std::pow(p, N - 1.0) - w2 * std::pow(p, -N - 1.0);
    };
    double lo = 1e-8, hi = 1e8;
    for (int i = 0; i < 200; ++i) {
        double mid = std::sqrt(lo * hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return std::sqrt(lo * hi);
}

RunConfig bundled_seed_config(int num_points) {
    std::ifstream in(std::string(CCLAB_SOURCE_DIR) + "/configs/nonuniqueness.cfg");
    std::stringstream text;
    text << in.rdbuf();
    RunConfig c = parse_config(text.str());
    c.num_points = num_points;
    return c;
}

// --------------------------------------------------------------------------

void criterion_1() {
    auto t0 = std::chrono::steady_clock::now();
    const int m = 256;
    auto geom = const_R(m, 1.0);
    ScalarField one = ScalarField::Ones(m);

    // q t tau^2 = 0 (tau = 0) and = 1 (tau^2 = 3/2, q = 2/3)
    double e0 = sup(lich_solve(LichProblem(geom, ScalarField::Zero(m), one)).phi -
                    phi_root(1.0, 0.0, 1.0, 6.0));
    double e1 = sup(lich_solve(LichProblem(geom, ScalarField::Constant(m, std::sqrt(1.5)), one))
                        .phi -
                    phi_root(1.0, 1.0, 1.0, 6.0));
    double dt = now_seconds(t0);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "constant-data exactness: err(c=0) = %.2e, err(c=1) = %.2e (tol 1e-10), "
                  "%.2f s (< 1 s)",
                  e0, e1, dt);
    report(1, e0 <= 1e-10 && e1 <= 1e-10 && dt < 1.0, buf);
}

void criterion_2() {
    // order-4 pipeline at 256 points: round trip below 1e-6
    auto pos4 = warped_pos(256, 4, 8.0);
    ScalarField w4 = AnalyticFn::sample(pos4.grid(),
                                        [](double x) { return 1.0 + 0.3 * std::cos(x); });
    LichProblem p4(pos4, ScalarField::Constant(256, 0.6), w4);
    ScalarField th4 = AnalyticFn::sample(pos4.grid(),
                                         [](double x) { return 1.0 + 0.3 * std::cos(x); });
    double e256 = conformal_covariance_check(p4, ConformalTransform(th4));

    // order-2 refinement slope across 64/128/256
    double errs[3];
    int grids[3] = {64, 128, 256};
    for (int i = 0; i < 3; ++i) {
        auto pos = warped_pos(grids[i], 2, 8.0);
        ScalarField w = AnalyticFn::sample(pos.grid(),
                                           [](double x) { return 1.0 + 0.3 * std::cos(x); });
        ScalarField th = AnalyticFn::sample(pos.grid(),
                                            [](double x) { return 1.0 + 0.3 * std::cos(x); });
        LichProblem p(pos, ScalarField::Constant(grids[i], 0.6), w);
        errs[i] = conformal_covariance_check(p, ConformalTransform(th));
    }
    double slope = std::log2(errs[0] / errs[2]) / 2.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "conformal covariance: err = %.2e at 256/order 4 (tol 1e-6), order-2 slope "
                  "%.2f (>= 1.8)",
                  e256, slope);
    report(2, e256 <= 1e-6 && slope >= 1.8, buf);
}

void criterion_3() {
    const int m = 48;
    auto geom = warped_pos(m);
    ScalarField tau = ScalarField::Constant(m, 0.7);
    std::mt19937_64 rng(101);
    auto U = [&](double lo, double hi) { return detail::uniform(rng, lo, hi); };
    const ScalarField x = geom.grid().coords();

    double worst_drop = 0.0;       // most negative min(phi1 - phi0) on ordered pairs
    double worst_gap_min = 1e300;  // smallest min(phi1 - phi0) on strict-gap pairs
    for (int trial = 0; trial < 100; ++trial) {
        ScalarField w0 = 0.8 + U(0.0, 0.6) * (x + U(0.0, 6.28)).sin() * 0.5 +
                         0.2 * (2.0 * x + U(0.0, 6.28)).cos();
        bool strict = trial % 2 == 1;
        ScalarField bump = U(0.0, 0.5) * (1.0 + (3.0 * x + U(0.0, 6.28)).sin());
        if (strict) bump += 0.1;  // w1^2 - w0^2 >= 0.1 pointwise
        ScalarField w1 = (w0.square() + bump).sqrt();
        ScalarField phi0 = lich_solve(LichProblem(geom, tau, w0)).phi;
        ScalarField phi1 = lich_solve(LichProblem(geom, tau, w1)).phi;
        double gap = (phi1 - phi0).minCoeff();
        worst_drop = std::min(worst_drop, gap);
        if (strict) worst_gap_min = std::min(worst_gap_min, gap);
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "maximum principle: min(phi1-phi0) >= %.2e over 100 pairs (>= -1e-10), "
                  "strict-gap min %.2e (> 0)",
                  worst_drop, worst_gap_min);
    report(3, worst_drop >= -1e-10 && worst_gap_min > 0.0, buf);
}

void criterion_4() {
    const int m = 48;
    auto geom = warped_pos(m);
    const ScalarField x = geom.grid().coords();
    std::mt19937_64 rng(77);
    auto U = [&](double lo, double hi) { return detail::uniform(rng, lo, hi); };

    double worst = 0.0;
    for (int prob_i = 0; prob_i < 20; ++prob_i) {
        ScalarField w = 1.0 + U(0.1, 0.6) * (U(1.0, 3.0) * x + U(0.0, 6.28)).sin() * 0.8;
        ScalarField tau = ScalarField::Constant(m, U(0.3, 1.0));
        LichProblem prob(geom, tau, w);
        std::vector<ScalarField> sols;
        for (int init_i = 0; init_i < 10; ++init_i) {
            ScalarField init(m);
            for (int i = 0; i < m; ++i) init[i] = U(0.1, 5.0);
            sols.push_back(lich_solve(prob, init).phi);
        }
        for (std::size_t a = 0; a < sols.size(); ++a)
            for (std::size_t b = a + 1; b < sols.size(); ++b)
                worst = std::max(worst, sup(sols[a] - sols[b]));
    }
    char buf[120];
    std::snprintf(buf, sizeof(buf),
                  "uniqueness: max pairwise sup-distance %.2e over 20 problems x 10 inits "
                  "(tol 1e-8)",
                  worst);
    report(4, worst <= 1e-8, buf);
}

void criterion_5() {
    auto geom = warped_pos(64);
    const Eigen::MatrixXd& K = geom.vector_stiffness();
    const double kscale = K.cwiseAbs().maxCoeff();
    double asym = (K - K.transpose()).cwiseAbs().maxCoeff();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (K + K.transpose()));
    double min_eig = es.eigenvalues().minCoeff();
    double max_eig = es.eigenvalues().maxCoeff();

    // flat closed forms at the discretization order
    double errs_lw[2], errs_ll[2];
    int grids[2] = {64, 128};
    for (int i = 0; i < 2; ++i) {
        auto flat = ReducedGeometry::flat(3, Grid(grids[i]));
        const ScalarField x = flat.grid().coords();
        ScalarField W = x.sin();
        // |LW|^2 = 4(1 - 1/n)(W')^2, (1/2)L*LW = -2(1 - 1/n)W''
        ScalarField lw2 = flat.tensor_norm2(flat.apply_L(W));
        errs_lw[i] = sup(lw2 - (8.0 / 3.0) * x.cos().square());
        ScalarField ll = flat.half_vector_laplacian(W);
        errs_ll[i] = sup(ll - (4.0 / 3.0) * x.sin());
    }
    double slope_lw = std::log2(errs_lw[0] / errs_lw[1]);
    double slope_ll = std::log2(errs_ll[0] / errs_ll[1]);

    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "operator algebra: asym %.2e (<= 1e-12 rel), min Rayleigh %.2e (>= -1e-10 "
                  "rel), closed-form slopes %.2f/%.2f (>= 1.8)",
                  asym / kscale, min_eig / max_eig, slope_lw, slope_ll);
    report(5, asym <= 1e-12 * kscale && min_eig >= -1e-10 * max_eig && slope_lw >= 1.8 &&
                  slope_ll >= 1.8,
           buf);
}

void criterion_6() {
    const int m = 32;
    LichProblem prob(const_R(m, 1.0), ScalarField::Constant(m, std::sqrt(1.5)),
                     ScalarField::Ones(m));
    auto rep = solution_map_derivative_check(prob, ScalarField::Ones(m),
                                             {4e-2, 2e-2, 1e-2, 5e-3});
    double N = 6.0, phi = phi_root(1.0, 1.0, 1.0, N);
    double Fphi = 1.0 + (N - 1.0) * std::pow(phi, N - 2.0) +
                  (N + 1.0) * std::pow(phi, -N - 2.0);
    double Fw = -2.0 * std::pow(phi, -N - 1.0);
    double err = sup(rep.derivative + Fw / Fphi);
    char buf[140];
    std::snprintf(buf, sizeof(buf),
                  "solution-map derivative: implicit-function mismatch %.2e (tol 1e-6), "
                  "order %.2f (2 +- 0.3)",
                  err, rep.slope);
    report(6, err <= 1e-6 && std::abs(rep.slope - 2.0) <= 0.3, buf);
}

void criterion_7() {
    // exp(0.5 cos x) is inadmissible: |L(omega#)| survives at the zeros of omega
    auto flat = ReducedGeometry::flat(3, Grid(512));
    ScalarField tau_bad = (0.5 * flat.grid().coords().cos()).exp();
    AdmissibilityReport bad = compute_c(flat, tau_bad);

    // bundled plateau-transition tau: finite c, stable between 512 and 1024
    double c[2];
    double a_min_err = 0.0;
    int grids[2] = {512, 1024};
    for (int i = 0; i < 2; ++i) {
        RunConfig cfg = bundled_seed_config(grids[i]);
        ReducedGeometry geom = detail::build_geometry(cfg);
        ScalarField tau = detail::build_tau(cfg, geom.grid());
        ScalarField omega = geom.grid().deriv(tau).abs() / (tau * geom.A());
        AdmissibilityReport rep = compute_c(geom, tau, cfg.eps_c_rel * omega.maxCoeff());
        if (rep.violated) {
            report(7, false, "bundled tau reported VIOLATED");
            return;
        }
        c[i] = rep.c;
        double n = geom.n();
        a_min_err = std::max(a_min_err,
                             std::abs(rep.a_min - rep.c / 2.0 * std::sqrt(n / (n - 1.0))));
    }
    double drift = std::abs(c[0] - c[1]) / c[1];
    char buf[180];
    std::snprintf(buf, sizeof(buf),
                  "admissibility: exp(0.5 cos x) %s, bundled c = %.4f/%.4f drift %.2f%% "
                  "(<= 5%%), a_min identity err %.1e",
                  bad.violated ? "VIOLATED" : "not flagged", c[0], c[1], 100.0 * drift,
                  a_min_err);
    report(7, bad.violated && drift <= 0.05 && a_min_err == 0.0, buf);
}

void criterion_8() {
    auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = bundled_seed_config(256);
    ReducedGeometry geom = detail::build_geometry(cfg);
    ScalarField tau = detail::build_tau(cfg, geom.grid());
    ReducedTT sigma = detail::build_sigma(cfg, geom);
    SeedData seed(geom, tau, sigma, cfg.a, cfg.t, 0.0);

    try {
        TwoSolutions two = find_two_solutions(seed, cfg.k_max, cfg.k_steps, cfg.tol);
        double gap = std::abs(two.large.sup_phi - two.small.sup_phi) /
                     std::max(two.small.sup_phi, 1e-300);
        // residual pairs relative to the solver's own scales
        auto rel_ok = [&](const SolveReport& r) {
            double sl = coupled_scale_lich(seed, 0.0, r.phi, r.W);
            double sv = coupled_scale_vector(seed, r.phi);
            return r.res_lich <= 1e-8 * sl && r.res_vector <= 1e-8 * sv;
        };
        double dt = now_seconds(t0);
        char buf[200];
        std::snprintf(buf, sizeof(buf),
                      "nonuniqueness: fold at k = %.1f, sup_phi %.3f vs %.3f, gap %.2f "
                      "(>= 0.1), residuals ok = %d/%d, %.1f s (< 300 s)",
                      two.trace.k_fold, two.small.sup_phi, two.large.sup_phi, gap,
                      int(rel_ok(two.small)), int(rel_ok(two.large)), dt);
        report(8, two.trace.fold_found && gap >= 0.1 && rel_ok(two.small) &&
                      rel_ok(two.large) && dt < 300.0,
               buf);
    } catch (const Error& e) {
        report(8, false, std::string("bundled seed failed: ") + e.what());
    }
}

void criterion_9() {
    GalleryExample quad = halfcont_gallery("quadratic");
    DichotomyResult dq = dichotomy_search(quad.assoc, check_association(quad.assoc));
    bool quad_ok = dq.kind == DichotomyKind::CriticalTuple &&
                   std::abs(dq.t - 0.4) <= 1e-8 && std::abs(dq.x[0] - 2.0) <= 1e-8;

    GalleryExample lin = halfcont_gallery("linear");
    DichotomyResult dl = dichotomy_search(lin.assoc, check_association(lin.assoc));
    bool lin_ok = dl.kind == DichotomyKind::FixedPoint && std::abs(dl.x[0] - 1.0) <= 1e-10;

    bool schaefer_ok = true;
    for (double a : {1.5, 2.0, 3.0}) {
        GalleryExample sch = halfcont_gallery("schaefer", a);
        DichotomyResult ds = dichotomy_search(sch.assoc, check_association(sch.assoc));
        schaefer_ok = schaefer_ok && ds.kind == DichotomyKind::CriticalTuple &&
                      std::abs(ds.x.norm() - a) <= 1e-8;
    }

    GalleryExample step = halfcont_gallery("step");
    auto w = half_continuity_witness(step.pointwise, step.witness_point);
    bool step_ok = w.has_value() && w->p[0] > 0.0;

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "dichotomy gallery: quadratic %s, linear %s, schaefer %s, step witness %s",
                  quad_ok ? "ok" : "bad", lin_ok ? "ok" : "bad",
                  schaefer_ok ? "ok" : "bad", step_ok ? "ok" : "bad");
    report(9, quad_ok && lin_ok && schaefer_ok && step_ok, buf);
}

void criterion_10() {
    bool flat_ok = false;
    double kernel_err = 1e300;
    try {
        VectorOp op(ReducedGeometry::flat(3, Grid(64)));
    } catch (const ConformalKillingKernel& e) {
        flat_ok = true;
        Eigen::Map<const Eigen::ArrayXd> k(e.kernel_direction.data(),
                                           e.kernel_direction.size());
        kernel_err = (k - 1.0).abs().maxCoeff();  // kernel_direction is sup-normalized
    }

    RunConfig cfg = bundled_seed_config(256);
    ReducedGeometry geom = detail::build_geometry(cfg);
    bool warped_ok = false;
    double smin_rel = 0.0;
    try {
        LinearOperator1D half = LinearOperator1D::half_LL(geom);
        smin_rel = half.smallest_singular_value() / half.largest_singular_value();
        VectorOp op(geom);
        warped_ok = smin_rel >= 1e-8;
    } catch (const ConformalKillingKernel&) {
    }

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "kernel detection: flat kernel err %.2e (tol 1e-6), warped smin/smax = "
                  "%.2e (>= 1e-8)",
                  kernel_err, smin_rel);
    report(10, flat_ok && kernel_err <= 1e-6 && warped_ok, buf);
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    if (failures == 0) std::printf("acceptance: all criteria passed\n");
    else std::printf("acceptance: %d criterion(s) failed\n", failures);
    return failures;
}
