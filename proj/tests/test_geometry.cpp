#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <random>

#include "cclab/geometry.hpp"
#include "oracles.hpp"

using namespace cclab;
using oracles::AnalyticFn;

namespace {

struct WarpedCase {
    AnalyticFn A = oracles::sine(1.0, 0.3, 1.0);
    std::vector<AnalyticFn> B = {oracles::cosine(1.0, 0.2, 1.0), oracles::sine(1.2, 0.25, 2.0),
                                 oracles::cosine(0.9, 0.15, 1.0)};

    ReducedGeometry make(int m, int order = 2) const {
        Grid g(m, 2.0 * std::numbers::pi, order);
        std::vector<ScalarField> bs;
        for (const auto& b : B) bs.push_back(b.eval(g));
        return ReducedGeometry(4, g, A.eval(g), bs);
    }
};

double sup(const ScalarField& f) { return f.abs().maxCoeff(); }

}  // namespace

TEST_CASE("grid derivatives converge at the nominal order") {
    auto u = oracles::sine(0.0, 1.0, 3.0);
    for (int order : {2, 4}) {
        double e1 = 0.0, e2 = 0.0;
        for (int m : {64, 128}) {
            Grid g(m, 2.0 * std::numbers::pi, order);
            double e = sup(g.deriv(u.eval(g)) - u.eval_d(g));
            (m == 64 ? e1 : e2) = e;
        }
        REQUIRE(oracles::slope(e1, e2) > order - 0.3);
    }
}

TEST_CASE("grid validation") {
    REQUIRE_THROWS_AS(Grid(8), InvalidMetric);
    REQUIRE_THROWS_AS(Grid(32, -1.0), InvalidMetric);
    REQUIRE_THROWS_AS(Grid(32, 1.0, 3), InvalidMetric);
    Grid g(32);
    REQUIRE_THROWS_AS(g.check(ScalarField::Zero(31)), InvalidState);
}

TEST_CASE("scalar curvature matches the closed-form oracle") {
    WarpedCase wc;

    SECTION("flat metric has R = 0 exactly") {
        auto geom = ReducedGeometry::flat(3, Grid(32));
        REQUIRE(sup(geom.R()) == 0.0);
    }

    SECTION("warped n=4, order 2 and 4 refinement") {
        for (int order : {2, 4}) {
            double e1 = 0.0, e2 = 0.0;
            for (int m : {64, 128}) {
                Grid g(m, 2.0 * std::numbers::pi, order);
                ScalarField Rh = scalar_curvature(
                    g, wc.A.eval(g), {wc.B[0].eval(g), wc.B[1].eval(g), wc.B[2].eval(g)});
                double e = sup(Rh - oracles::curvature(g, wc.A, wc.B));
                (m == 64 ? e1 : e2) = e;
            }
            REQUIRE(oracles::slope(e1, e2) > order - 0.5);
        }
    }

    SECTION("single warp n=3: R = -2 B''/B when A = 1") {
        auto B = oracles::sine(1.5, 0.4, 1.0);
        Grid g(256);
        ScalarField Rh = scalar_curvature(g, ScalarField::Ones(256), {B.eval(g)});
        ScalarField Rex = -2.0 * B.eval_dd(g) / B.eval(g);
        REQUIRE(sup(Rh - Rex) < 5e-3);
    }

    SECTION("rejects non-positive profiles") {
        Grid g(32);
        ScalarField bad = ScalarField::Ones(32);
        bad[3] = -0.5;
        REQUIRE_THROWS_AS(scalar_curvature(g, bad, {ScalarField::Ones(32)}), InvalidMetric);
    }
}

TEST_CASE("geometry construction validation") {
    Grid g(32);
    ScalarField one = ScalarField::Ones(32);
    REQUIRE_THROWS_AS(ReducedGeometry(2, g, one, {one}), InvalidMetric);
    REQUIRE_THROWS_AS(ReducedGeometry(4, g, one, {one}), InvalidMetric);  // wrong B count
    REQUIRE_THROWS_AS(ReducedGeometry(3, g, ScalarField::Ones(16), {one, one}), InvalidState);
    auto geom = ReducedGeometry::flat(3, g);
    REQUIRE(geom.N_exp() == 6.0);
    REQUIRE(geom.c_n() == 8.0);
    REQUIRE_FALSE(geom.synthetic_curvature());
    auto shifted = ReducedGeometry(3, g, one, std::vector<ScalarField>{one, one}, 1.0);
    REQUIRE(shifted.synthetic_curvature());
    REQUIRE(sup(shifted.R() - 1.0) == 0.0);
}

TEST_CASE("laplacian is vol-symmetric, PSD, with one-dimensional kernel") {
    WarpedCase wc;
    for (int order : {2, 4}) {
        auto geom = wc.make(64, order);
        const int m = 64;
        const Eigen::MatrixXd& L = geom.laplacian_matrix();
        Eigen::VectorXd vol = geom.vol().matrix();

        Eigen::MatrixXd VL = vol.asDiagonal() * L;
        REQUIRE((VL - VL.transpose()).cwiseAbs().maxCoeff() < 1e-11 * VL.cwiseAbs().maxCoeff());

        Eigen::VectorXd vs = vol.array().sqrt().matrix();
        Eigen::MatrixXd S = vs.asDiagonal() * L * vs.cwiseInverse().asDiagonal();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()));
        REQUIRE(es.eigenvalues()[0] > -1e-10);
        REQUIRE(es.eigenvalues()[1] > 1e-6);  // kernel is only the constants

        REQUIRE(sup(geom.laplacian_apply(ScalarField::Constant(m, 3.7))) < 1e-11);
    }
}

TEST_CASE("laplacian converges to the manufactured solution") {
    WarpedCase wc;
    auto u = oracles::sine(0.0, 1.0, 2.0);
    for (int order : {2, 4}) {
        double e1 = 0.0, e2 = 0.0;
        for (int m : {64, 128}) {
            auto geom = wc.make(m, order);
            ScalarField lap = geom.laplacian_apply(u.eval(geom.grid()));
            double e = sup(lap - oracles::laplacian(geom.grid(), wc.A, wc.B, u));
            (m == 64 ? e1 : e2) = e;
        }
        REQUIRE(oracles::slope(e1, e2) > order - 0.5);
    }
}

TEST_CASE("conformal Killing operator") {
    SECTION("flat closed forms, exact against the discrete derivative") {
        auto geom = ReducedGeometry::flat(3, Grid(64));
        ScalarField w = AnalyticFn::sample(geom.grid(), [](double x) { return std::sin(2 * x); });
        ScalarField dw = geom.grid().deriv(w);
        ReducedTT t = geom.apply_L(w);
        REQUIRE(sup(t.xx - (2.0 - 2.0 / 3.0) * dw) < 1e-13);
        REQUIRE(sup(t.yy[0] + (2.0 / 3.0) * dw) < 1e-13);
        REQUIRE(sup(geom.tensor_norm2(t) - 4.0 * (1.0 - 1.0 / 3.0) * dw * dw) < 1e-12);
    }

    SECTION("trace vanishes identically in the warped case") {
        WarpedCase wc;
        auto geom = wc.make(64);
        ScalarField w = AnalyticFn::sample(geom.grid(), [](double x) { return std::cos(x); });
        ReducedTT t = geom.apply_L(w);
        ScalarField tr = t.xx / (geom.A() * geom.A());
        for (int i = 0; i < geom.num_B(); ++i) tr += t.yy[i] / (geom.B(i) * geom.B(i));
        REQUIRE(sup(tr) < 1e-12 * std::sqrt(geom.tensor_norm2(t).maxCoeff() + 1.0));
    }
}

TEST_CASE("half vector laplacian: adjoint identity and dual-route divergence") {
    WarpedCase wc;
    auto geom = wc.make(64);
    std::mt19937_64 rng(42);
    std::normal_distribution<double> N;
    ScalarField v(64), w(64);
    for (int i = 0; i < 64; ++i) {
        v[i] = N(rng);
        w[i] = N(rng);
    }

    SECTION("stiffness matrix realizes (1/2)<Lv, Lw>") {
        double lhs = (v.matrix().transpose() * geom.vector_stiffness() * w.matrix())(0);
        double rhs = 0.5 * geom.tensor_inner(geom.apply_L(v), geom.apply_L(w));
        REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-10));
        REQUIRE((geom.vector_stiffness() - geom.vector_stiffness().transpose())
                    .cwiseAbs()
                    .maxCoeff() < 1e-12 * geom.vector_stiffness().cwiseAbs().maxCoeff());
    }

    SECTION("agrees with -div(LW)/A^2 under refinement") {
        auto wfn = oracles::sine(0.0, 1.0, 1.0);
        double e1 = 0.0, e2 = 0.0;
        for (int m : {64, 128}) {
            auto gm = wc.make(m);
            ScalarField wf = wfn.eval(gm.grid());
            ScalarField route1 = gm.half_vector_laplacian(wf);
            ScalarField route2 =
                -gm.divergence_x_defect(gm.apply_L(wf)) / (gm.A() * gm.A());
            double e = sup(route1 - route2);
            (m == 64 ? e1 : e2) = e;
        }
        REQUIRE(oracles::slope(e1, e2) > 1.5);
    }

    SECTION("flat case: (1/2)L*LW = -2(1 - 1/n) w''") {
        auto wfn = oracles::sine(0.0, 1.0, 2.0);
        double e1 = 0.0, e2 = 0.0;
        for (int m : {64, 128}) {
            auto gm = ReducedGeometry::flat(3, Grid(m));
            ScalarField got = gm.half_vector_laplacian(wfn.eval(gm.grid()));
            ScalarField want = -2.0 * (1.0 - 1.0 / 3.0) * wfn.eval_dd(gm.grid());
            double e = sup(got - want);
            (m == 64 ? e1 : e2) = e;
        }
        REQUIRE(oracles::slope(e1, e2) > 1.5);
    }
}

TEST_CASE("TT construction") {
    SECTION("flat: sigma_xx = s0, last diagonal from the trace") {
        auto geom = ReducedGeometry::flat(3, Grid(64));
        TTSpec spec;
        spec.s0 = 0.5;
        spec.free_diag = {ScalarField::Constant(64, 0.2)};
        spec.offdiag = {0.3, 0.0};
        ReducedTT t = geom.make_tt_tensor(spec);
        REQUIRE(sup(t.xx - 0.5) < 1e-10);
        REQUIRE(sup(t.yy[0] - 0.2) < 1e-12);
        REQUIRE(sup(t.yy[1] + 0.7) < 1e-10);
        REQUIRE(sup(t.xy[0] - 0.3) < 1e-10);
        REQUIRE(geom.tt_residual(t) < 1e-9);
    }

    SECTION("warped geometry: discrete residual at tolerance") {
        WarpedCase wc;
        auto geom = wc.make(128);
        TTSpec spec;
        spec.s0 = 0.4;
        spec.offdiag = {0.25, -0.1, 0.0};
        spec.free_diag = {
            AnalyticFn::sample(geom.grid(), [](double x) { return 0.3 * std::sin(x); }),
            ScalarField::Constant(128, 0.1)};
        ReducedTT t = geom.make_tt_tensor(spec);
        REQUIRE(geom.tt_residual(t) < 1e-10);

        // off-diagonal profile tracks the analytic kernel C * A / prod(B)
        ScalarField kernel = geom.A() / (geom.vol() / geom.A());
        kernel *= 0.25 / kernel[0];
        REQUIRE(sup(t.xy[0] - kernel) < 1e-3);
    }

    SECTION("zero spec yields the zero tensor") {
        auto geom = ReducedGeometry::flat(3, Grid(32));
        ReducedTT t = geom.make_tt_tensor(TTSpec{});
        REQUIRE(geom.tensor_L2_norm(t) == 0.0);
    }
}

TEST_CASE("norms and integrals") {
    auto geom = ReducedGeometry::flat(3, Grid(128));
    ScalarField s = AnalyticFn::sample(geom.grid(), [](double x) { return std::sin(x); });
    REQUIRE(geom.integral(ScalarField::Ones(128)) ==
            Catch::Approx(2.0 * std::numbers::pi).epsilon(1e-12));
    REQUIRE(geom.L2_norm(s) == Catch::Approx(std::sqrt(std::numbers::pi)).epsilon(1e-10));
    REQUIRE(geom.Lp_norm(s, 2.0) == Catch::Approx(geom.L2_norm(s)).epsilon(1e-12));
    REQUIRE(ReducedGeometry::sup_norm(s) == Catch::Approx(1.0).epsilon(1e-3));
    REQUIRE_THROWS_AS(geom.Lp_norm(s, 0.5), InvalidExponent);
}
