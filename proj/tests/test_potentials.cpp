#include "common.hpp"
#include "trinoid/holonomy.hpp"
#include "trinoid/immerse.hpp"
#include "trinoid/potentials.hpp"

#include <gtest/gtest.h>

using namespace trinoid;
using namespace testing_util;

namespace {

Mat2 fd_z(const std::function<Mat2(cplx, cplx)>& f, cplx z, cplx l, double h = 1e-6)
{
    return (f(z + h, l) - f(z - h, l)) / (2.0 * h);
}

// coefficient of s^m in f(s) by the mean over a small circle
Mat2 laurent_coeff(const std::function<Mat2(cplx)>& f, int m, double r = 0.05, int n = 128)
{
    Mat2 acc = Mat2::Zero();
    for (int j = 0; j < n; ++j) {
        const cplx s = std::polar(r, 2.0 * pi * (j + 0.5) / n);
        acc += f(s) * std::pow(s, -m);
    }
    return acc / static_cast<double>(n);
}

}  // namespace

TEST(Delaunay, CylinderResidue)
{
    const auto r = delaunay_residue(1.0);
    EXPECT_NEAR(r.a, 0.25, 1e-15);
    EXPECT_NEAR(r.b, 0.25, 1e-15);
    EXPECT_NEAR(necksize_from_weight(1.0), 0.5, 1e-15);
}

TEST(Delaunay, UnduloidResidue)
{
    const auto r = delaunay_residue(0.75);
    EXPECT_NEAR(r.a, 3.0 / 8.0, 1e-15);
    EXPECT_NEAR(r.b, 1.0 / 8.0, 1e-15);
    EXPECT_NEAR(16.0 * r.a * r.b, 0.75, 1e-14);
}

TEST(Delaunay, ResidueEigenvalueMatchesMu)
{
    for (double w : {0.75, 0.3, -0.5, -2.0, 1.0}) {
        const auto r = delaunay_residue(w);
        for (int j = 0; j < 20; ++j) {
            const cplx l = std::polar(1.0, 2.0 * pi * (j + 0.25) / 20);
            // eigenvalues of a trace-free matrix are +-sqrt(-det)
            const cplx m2 = -r.at(l).determinant();
            const cplx ref = 0.25 * (1.0 + w * (l - 1.0) * (l - 1.0) / (4.0 * l));
            EXPECT_LE(std::abs(m2 - ref), 1e-14) << w << " " << j;
            EXPECT_LE(std::abs(mu_w(w, l) * mu_w(w, l) - ref), 1e-14);
        }
    }
}

TEST(Delaunay, MuAtOneIsStationary)
{
    for (double w : {0.75, -1.0, 0.2}) {
        EXPECT_NEAR(std::abs(mu_w(w, 1.0) - 0.5), 0.0, 1e-15);
        const double h = 1e-5;
        const cplx d = (mu_w(w, std::polar(1.0, h)) - mu_w(w, std::polar(1.0, -h))) / (2.0 * h);
        EXPECT_LE(std::abs(d), 1e-9);
    }
}

TEST(Delaunay, ResidueRejectsBadWeights)
{
    EXPECT_THROW(delaunay_residue(1.2), Error);
    EXPECT_THROW(delaunay_residue(0.0), Error);
    EXPECT_THROW(delaunay_residue(std::nan("")), Error);
}

TEST(Mu, AtMinusOne)
{
    EXPECT_NEAR(std::abs(mu_w(0.75, -1.0) - 0.25), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(mu_w(1.0, -1.0)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(mu_w(0.36, -1.0) - 0.5 * std::sqrt(0.64)), 0.0, 1e-15);
    EXPECT_THROW(mu_w(0.5, 0.0), Error);
}

TEST(Nu, AtOneAndMinusOne)
{
    EXPECT_NEAR(std::abs(nu_w(0.75, 1.0)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(nu_w(0.75, -1.0) - 0.25), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(nu_w(1.0, -1.0) - 0.5), 0.0, 1e-15);
    // w = 4n(1-n)
    for (double n : {0.1, 0.2, 1.0 / 3.0, 0.45})
        EXPECT_NEAR(nu_w(4.0 * n * (1.0 - n), -1.0).real(), n, 1e-14);
}

TEST(Mu, ContinuousAlongCircle)
{
    for (double w : {0.9, 0.5, -0.8, -3.0}) {
        const int n = 2000;
        cplx prev = mu_w(w, 1.0);
        for (int j = 1; j <= n; ++j) {
            const cplx cur = mu_w(w, std::polar(1.0, 2.0 * pi * j / n));
            EXPECT_LE(std::abs(cur - prev), 0.01) << w << " " << j;
            prev = cur;
        }
    }
}

TEST(Trinoid, QuadraticResidues)
{
    for (const auto& W : {Weights::equal(0.75), Weights::from_weights(0.5, 0.3, 0.4), Weights::from_weights(-0.5, -0.4, -0.3),
                          Weights::from_weights(0.6, -0.2, 0.5)}) {
        const auto P = trinoid_potential(W);
        for (int e = 0; e < 3; ++e) EXPECT_LE(std::abs(quadratic_residue(P, e) - W.w[e] / 16.0), 1e-12) << e;
    }
    EXPECT_LE(std::abs(quadratic_residue(trinoid_potential(Weights::equal(0.75)), 0) - 3.0 / 64.0), 1e-12);
}

TEST(Trinoid, EqualWeightClosedFormAndSymmetry)
{
    const double w = 0.7;
    const auto P = trinoid_potential(Weights::equal(w));
    std::mt19937 g(21);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int t = 0; t < 20; ++t) {
        const cplx z(u(g), u(g));
        const cplx ref = w * (z * z - z + 1.0) / (16.0 * z * z * (z - 1.0) * (z - 1.0));
        EXPECT_LE(std::abs(P.q(z) - ref), 1e-13 * (1.0 + std::abs(ref)));
        EXPECT_LE(std::abs(P.q(1.0 - z) - P.q(z)), 1e-13 * (1.0 + std::abs(ref)));
    }
}

TEST(Trinoid, PotentialEntries)
{
    const auto P = trinoid_potential(Weights::from_weights(0.5, 0.3, 0.4));
    const cplx z(0.3, 0.7), l = std::polar(1.0, 0.9);
    const Mat2 x = P(z, l);
    EXPECT_EQ(x(0, 0), cplx(0.0));
    EXPECT_EQ(x(1, 1), cplx(0.0));
    EXPECT_LE(std::abs(x(0, 1) - 1.0 / l), 1e-15);
    EXPECT_LE(std::abs(x(1, 0) - (l - 1.0) * (l - 1.0) * P.q(z)), 1e-15);
    const auto c = P.laurent(z);
    Mat2 s = Mat2::Zero();
    for (int k = -1; k <= 2; ++k) s += c[static_cast<std::size_t>(k + 1)] * std::pow(l, k);
    EXPECT_LE(opnorm(s - x), 1e-14);
}

TEST(Admissible, FigureCases)
{
    const auto a = check_admissible(Weights::from_necksizes(1.0 / 3, 1.0 / 3, 1.0 / 3));
    EXPECT_TRUE(a.admissible());
    const auto b = check_admissible(Weights::from_necksizes(0.5, 1.0 / 3, 1.0 / 6));
    EXPECT_TRUE(b.admissible());
    EXPECT_TRUE(b.cylinder_end);
    EXPECT_TRUE(check_admissible(Weights::equal(0.75)).admissible());
    EXPECT_TRUE(check_admissible(Weights::equal(-0.75)).admissible());
}

TEST(Admissible, NecksizeViolation)
{
    const auto r = check_admissible(Weights::from_necksizes(0.45, 0.1, 0.1));
    EXPECT_FALSE(r.admissible());
    EXPECT_FALSE(r.neck_ok);
    ASSERT_FALSE(r.failures.empty());
    EXPECT_EQ(r.failures.front(), "necksize inequality |n1| <= |n2|+|n3| violated");
    try {
        trinoid_potential(Weights::from_necksizes(0.45, 0.1, 0.1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InvalidWeights);
        EXPECT_NE(std::string(e.what()).find("|n1| <= |n2|+|n3|"), std::string::npos);
    }
}

TEST(Admissible, OtherFailures)
{
    EXPECT_FALSE(check_admissible(Weights::from_weights(1.2, 0.5, 0.5)).range_ok);
    EXPECT_FALSE(check_admissible(Weights::from_weights(0.0, 0.5, 0.5)).range_ok);
    EXPECT_FALSE(check_admissible(Weights::from_necksizes(0.5, 0.4, 0.3)).neck_ok);
    EXPECT_THROW(trinoid_potential(Weights::from_weights(1.0, 0.75, 0.75)), Error);
    EXPECT_NO_THROW(trinoid_potential(Weights::from_necksizes(0.5, 1.0 / 3, 1.0 / 6), true));
}

TEST(Gauge, IdentityAndConstantDiagonal)
{
    const auto P = trinoid_potential(Weights::from_weights(0.5, 0.3, 0.4));
    const auto xi = P.form();
    const cplx z(0.4, 0.3), l = std::polar(1.0, 2.0);
    EXPECT_LE(opnorm(apply_gauge(xi, identity_gauge())(z, l) - xi(z, l)), 1e-15);
    const cplx s(1.7, 0.4);
    const Mat2 x = xi(z, l);
    const Mat2 y = apply_gauge(xi, constant_gauge(make2(s, 0.0, 0.0, 1.0 / s)))(z, l);
    EXPECT_LE(std::abs(y(0, 1) - x(0, 1) / (s * s)), 1e-14);
    EXPECT_LE(std::abs(y(1, 0) - x(1, 0) * s * s), 1e-14);
    EXPECT_LE(std::abs(y(0, 0)) + std::abs(y(1, 1)), 1e-15);
    EXPECT_THROW(apply_gauge(xi, constant_gauge(Mat2::Zero()))(z, l), Error);
}

TEST(Gauge, Composition)
{
    std::mt19937 g(22);
    auto linear = [&]() {
        const Mat2 A = Mat2::Identity() + random_mat(g, 0.2), B = random_mat(g, 0.3);
        return GaugeMap{[A, B](cplx z, cplx) { return Mat2(A + B * z); }, [B](cplx, cplx) { return B; }};
    };
    const auto a = linear(), b = linear();
    const auto xi = trinoid_potential(Weights::from_weights(0.5, 0.3, 0.4)).form();
    const auto two = apply_gauge(apply_gauge(xi, a), b), one = apply_gauge(xi, compose(a, b));
    for (int t = 0; t < 10; ++t) {
        const cplx z(0.2 + 0.05 * t, 0.3), l = std::polar(1.0, 0.6 * t);
        EXPECT_LE(opnorm(two(z, l) - one(z, l)), 1e-9 * (1.0 + opnorm(one(z, l))));
    }
}

TEST(EndGauge, EqualWeightsShift)
{
    for (int e = 0; e < 3; ++e) EXPECT_NEAR(end_gauge(Weights::equal(0.75), e).k, 0.5, 1e-15);
    const auto eg = end_gauge(Weights::equal(0.75), 0);
    EXPECT_NEAR(eg.residue.a, 3.0 / 8.0, 1e-15);
    EXPECT_NEAR(eg.residue.b, 1.0 / 8.0, 1e-15);
}

TEST(EndGauge, DerivativeMatchesFiniteDifference)
{
    const auto W = Weights::from_weights(0.6, 0.45, 0.5);
    for (int e = 0; e < 3; ++e) {
        const auto eg = end_gauge(W, e);
        const cplx l = std::polar(1.0, 1.1);
        for (cplx z : {cplx(0.15, 0.1), cplx(0.8, -0.2), cplx(3.0, 1.0)}) {
            const Mat2 d = eg.global.dg(z, l), f = fd_z(eg.global.g, z, l);
            EXPECT_LE(opnorm(d - f), 1e-7 * (1.0 + opnorm(d))) << e;
        }
    }
}

// xi_W gauged at end e, as a coefficient of ds in the end coordinate:
// residue off-diagonal Delaunay, constant term cancelled after z~ = s + k s^2 + ...
TEST(EndGauge, GaugedExpansion)
{
    for (const auto& W : {Weights::equal(0.75), Weights::from_weights(0.6, 0.45, 0.5), Weights::from_weights(-0.6, -0.45, -0.5)}) {
        const auto xi = trinoid_potential(W).form();
        for (int e = 0; e < 3; ++e) {
            const auto eg = end_gauge(W, e);
            const double we = W.w[static_cast<std::size_t>(e)];
            for (double th : {0.3, 2.0, 3.1}) {
                const cplx l = std::polar(1.0, th);
                auto eta = [&](cplx s) {
                    const cplx z = end_coordinate_inverse(e, s);
                    return Mat2(apply_gauge_at(xi, eg.global, z, l) * end_coordinate_dz_ds(e, s));
                };
                const Mat2 A = laurent_coeff(eta, -1), C0 = laurent_coeff(eta, 0);
                const double a = eg.residue.a, b = eg.residue.b;
                EXPECT_NEAR(a + b, 0.5, 1e-14);
                EXPECT_NEAR(16.0 * a * b, we, 1e-13);
                EXPECT_GE(std::abs(a), std::abs(b));
                EXPECT_LE(std::abs(A(0, 0)) + std::abs(A(1, 1)), 1e-10) << e;
                EXPECT_LE(std::abs(A(0, 1) - (a / l + b)), 1e-10) << e;
                EXPECT_LE(std::abs(-A.determinant() - mu_w(we, l) * mu_w(we, l)), 1e-10) << e;
                EXPECT_LE(opnorm(C0 - eg.k * A), 1e-9) << e << " " << th;
            }
        }
    }
}

TEST(OffdiagGauge, TrivialCases)
{
    GeneralPotential P;
    P.omega = [](cplx z) { return 1.0 / z; };
    P.omega_z = [](cplx z) { return -1.0 / (z * z); };
    P.b = [](cplx z, cplx) { return z; };
    P.c = [](cplx, cplx) { return cplx(0.0); };
    P.c_z = P.c;
    P.a_z = P.c;
    P.a_zz = P.c;
    P.a = [](cplx, cplx) { return cplx(1.0); };
    const cplx z(0.3, 0.2), l = std::polar(1.0, 0.5);
    EXPECT_LE(opnorm(offdiag_gauge(P).g(z, l) - Mat2::Identity()), 1e-15);
    P.a = [](cplx, cplx) { return cplx(4.0); };
    EXPECT_LE(opnorm(offdiag_gauge(P).g(z, l) - make2(2.0, 0.0, 0.0, 0.5)), 1e-15);
    P.a = [](cplx, cplx) { return cplx(0.0); };
    EXPECT_THROW(offdiag_gauge(P).g(z, l), Error);
}

TEST(OffdiagGauge, RationalEntries)
{
    GeneralPotential P;
    P.omega = [](cplx z) { return 1.0 / (z * (z - 1.0)); };
    P.omega_z = [](cplx z) { return -(2.0 * z - 1.0) / (z * z * (z - 1.0) * (z - 1.0)); };
    P.a = [](cplx z, cplx l) { return 1.0 + 0.3 * z + 0.2 * l * z * z; };
    P.a_z = [](cplx z, cplx l) { return 0.3 + 0.4 * l * z; };
    P.a_zz = [](cplx, cplx l) { return 0.4 * l; };
    P.b = [](cplx z, cplx l) { return (l - 1.0) * (l - 1.0) / (2.0 + z); };
    P.c = [](cplx z, cplx l) { return 0.7 * z / (1.0 + z) + 0.1 * l; };
    P.c_z = [](cplx z, cplx) { return 0.7 / ((1.0 + z) * (1.0 + z)); };
    const auto g = offdiag_gauge(P);
    for (int t = 0; t < 8; ++t) {
        const cplx z(0.2 + 0.1 * t, 0.35), l = std::polar(1.0, 0.8 * t + 0.1);
        EXPECT_LE(opnorm(g.dg(z, l) - fd_z(g.g, z, l)), 1e-7);
        const Form xi = [P](cplx zz, cplx ll) { return P(zz, ll); };
        const Mat2 y = apply_gauge_at(xi, g, z, l);
        EXPECT_LE(std::abs(y(0, 0)) + std::abs(y(1, 1)), 1e-10) << t;
        EXPECT_LE(std::abs(y(0, 1) - P.omega(z) / l), 1e-10) << t;
    }
}

TEST(EndGauge, GaugedMonodromyIsMinus)
{
    const auto W = Weights::from_weights(0.6, 0.45, 0.5);
    const auto P = trinoid_potential(W);
    const auto xi = P.form();
    OdeOptions o;
    o.rtol = 1e-12;
    o.atol = 1e-13;
    const cplx z0(0.3, 0.05);
    for (int e : {0, 1}) {
        const auto eg = end_gauge(W, e);
        const auto eta = apply_gauge(xi, eg.global);
        const cplx p = e == 0 ? cplx(0.0) : cplx(1.0);
        const cplx base = e == 0 ? z0 : 1.0 - z0;
        const Path loop = loop_around(base, p, 0.15);
        for (double th : {0.0, 1.3, 2.9, 4.4}) {
            const cplx l = std::polar(1.0, th);
            const Mat2 M = integrate_sample(xi, loop, Mat2::Identity(), l, o);
            const Mat2 g0 = eg.global.g(base, l);
            const Mat2 Mg = integrate_sample(eta, loop, g0, l, o) * inv2(g0);
            EXPECT_LE(opnorm(Mg + M), 1e-7) << e << " " << th;
        }
    }
}

TEST(EndGauge, SymInvariant)
{
    const auto W = Weights::equal(0.75);
    const auto P = trinoid_potential(W);
    const auto eg = end_gauge(W, 0);
    const auto eta = apply_gauge(P.form(), eg.global);
    const int n = 64;
    const cplx z0(0.3, 0.1);
    const auto phi0 = LaurentLoop::constant(Mat2::Identity(), n / 2 - 1, n);
    std::vector<Mat2> g0(n);
    const auto lam = unit_samples(n);
    for (int j = 0; j < n; ++j) g0[static_cast<std::size_t>(j)] = eg.global.g(z0, lam[static_cast<std::size_t>(j)]);
    const auto psi0 = LaurentLoop::from_samples(g0, n / 2 - 1);
    ImmersionParams prm;
    prm.nsamples = n;
    prm.band = n / 2 - 1;
    for (cplx z1 : {cplx(0.2, 0.25), cplx(0.45, -0.1), cplx(0.1, 0.05)}) {
        const Path path = {segment(z0, z1)};
        const auto Phi = integrate(P.form(), P.finite_poles(), path, phi0);
        const auto Psi = integrate(eta, P.finite_poles(), path, psi0);
        const auto a = sym_point(Phi, prm).point.x, b = sym_point(Psi, prm).point.x;
        EXPECT_LE((a - b).norm(), 1e-6) << z1;
    }
}
