#include "common.hpp"
#include "trinoid/holonomy.hpp"
#include "trinoid/potentials.hpp"

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

using namespace trinoid;
using namespace testing_util;

namespace {

Mat2 expm(const Mat2& a) { return a.exp(); }

double spectrum_distance(const Mat2& a, const Mat2& b)
{
    const auto [a1, a2] = eig2(a);
    const auto [b1, b2] = eig2(b);
    return std::min(std::max(std::abs(a1 - b1), std::abs(a2 - b2)), std::max(std::abs(a1 - b2), std::abs(a2 - b1)));
}

OdeOptions tight()
{
    OdeOptions o;
    o.rtol = 1e-12;
    o.atol = 1e-13;
    return o;
}

}  // namespace

TEST(Integrate, ZeroFormKeepsInitialValue)
{
    const Form zero = [](cplx, cplx) { return Mat2(Mat2::Zero()); };
    std::mt19937 g(31);
    const Mat2 p0 = Mat2::Identity() + random_mat(g, 0.3);
    const Mat2 r = integrate_sample(zero, polyline({0.1, cplx(1.0, 2.0), cplx(-1.0, 0.5)}), p0, 1.0);
    EXPECT_LE(opnorm(r - p0), 1e-15);
}

TEST(Integrate, EulerEquationAlongArc)
{
    std::mt19937 g(32);
    const Mat2 A = random_mat(g, 0.5);
    const Mat2 p0 = Mat2::Identity() + random_mat(g, 0.3);
    const Form xi = [A](cplx z, cplx) { return Mat2(A / z); };
    const Mat2 r = integrate_sample(xi, {arc(0.0, 1.0, 0.0, pi / 2)}, p0, 1.0, tight());
    const Mat2 ref = p0 * expm(I1 * (pi / 2) * A);
    EXPECT_LE(opnorm(r - ref), 1e-9);
}

TEST(Integrate, ReversedPathReturns)
{
    const auto P = trinoid_potential(Weights::from_weights(0.5, 0.3, 0.4));
    const Path p = polyline({cplx(0.5, -0.5), cplx(0.2, 0.4), cplx(1.5, 0.3)});
    for (double th : {0.0, 2.0, 4.0}) {
        const cplx l = std::polar(1.0, th);
        const Mat2 a = integrate_sample(P.form(), p, Mat2::Identity(), l);
        const Mat2 b = integrate_sample(P.form(), reverse(p), a, l);
        EXPECT_LE(opnorm(b - Mat2::Identity()), 1e-9);
    }
}

TEST(Integrate, FlowConsistency)
{
    const auto P = trinoid_potential(Weights::equal(0.6));
    const cplx z0(0.5, -0.5), z1(0.1, 0.3), z2(1.4, 0.6);
    const cplx l = std::polar(1.0, 1.0);
    const Mat2 a = integrate_sample(P.form(), {segment(z0, z1)}, Mat2::Identity(), l);
    const Mat2 b = integrate_sample(P.form(), {segment(z1, z2)}, a, l);
    const Mat2 c = integrate_sample(P.form(), concat({segment(z0, z1)}, {segment(z1, z2)}), Mat2::Identity(), l);
    EXPECT_LE(opnorm(b - c), 1e-9);
}

TEST(Integrate, HomotopyInvariance)
{
    const auto P = trinoid_potential(Weights::from_weights(0.5, 0.3, 0.4));
    const cplx z0(0.5, -0.5);
    const Path circle = loop_around(z0, 0.0, loop_radius(z0, 0.0));
    const Path square = polyline({z0, cplx(0.4, 0.4), cplx(-0.4, 0.4), cplx(-0.4, -0.5), z0});
    for (double th : {0.5, 2.5, 3.14159}) {
        const cplx l = std::polar(1.0, th);
        const Mat2 a = integrate_sample(P.form(), circle, Mat2::Identity(), l, tight());
        const Mat2 b = integrate_sample(P.form(), square, Mat2::Identity(), l, tight());
        EXPECT_LE(opnorm(a - b), 1e-8);
    }
}

TEST(Integrate, DeterminantConstant)
{
    const auto P = trinoid_potential(Weights::equal(0.75));
    FrameSolution f;
    f.xi = P.form();
    f.poles = P.finite_poles();
    f.z0 = cplx(0.5, -0.5);
    std::mt19937 g(33);
    std::vector<Mat2> c(5, Mat2::Zero());
    c[2] = Mat2::Identity();
    c[3] = random_mat(g, 0.2);
    f.phi0 = LaurentLoop::from_coeffs(c, 32);
    const Path p = polyline({f.z0, cplx(0.05, 0.1), cplx(0.9, 0.05), cplx(2.0, -1.0)});
    EXPECT_LE(f.det_drift(p), 1e-8);
}

TEST(Integrate, RejectsPathThroughPole)
{
    const auto P = trinoid_potential(Weights::equal(0.75));
    const auto phi0 = LaurentLoop::constant(Mat2::Identity(), 7, 16);
    try {
        integrate(P, {segment(cplx(-0.5, 0.0), cplx(0.5, 0.0))}, phi0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::PoleTooClose);
    }
}

TEST(Monodromy, DelaunayMatchesExponential)
{
    for (double w : {0.75, -0.6}) {
        const auto P = delaunay_potential(w);
        const int n = 16;
        const auto phi0 = LaurentLoop::constant(Mat2::Identity(), n / 2 - 1, n);
        const auto M = monodromies(P, cplx(0.5, -0.5), phi0, tight());
        const auto lam = unit_samples(n);
        for (int j = 0; j < n; ++j) {
            const cplx l = lam[static_cast<std::size_t>(j)];
            const Mat2 ref = expm(2.0 * pi * I1 * P.residue.at(l));
            EXPECT_LE(opnorm(M.M1.sample(j) - ref), 1e-7) << j;
            EXPECT_LE(opnorm(M.M2.sample(j) - Mat2::Identity()), 1e-7);
        }
        const auto e = eigenvalue_curves(M.M1);
        std::vector<cplx> mu(lam.size());
        for (std::size_t j = 0; j < lam.size(); ++j) mu[j] = mu_w(w, lam[j]);
        EXPECT_LE(eigenvalue_error(e, mu), 1e-7);
    }
}

TEST(Monodromy, TrinoidEigenvalues)
{
    for (const auto& W : {Weights::equal(0.75), Weights::from_weights(0.5, 0.3, 0.4), Weights::from_weights(-0.5, -0.4, -0.3)}) {
        const int n = 32;
        const auto phi0 = LaurentLoop::constant(Mat2::Identity(), n / 2 - 1, n);
        const auto M = monodromies(trinoid_potential(W), cplx(0.5, -0.5), phi0);
        EXPECT_LE(M.product_residual, 1e-7);
        const auto lam = unit_samples(n);
        const LaurentLoop* Ms[3] = {&M.M1, &M.M2, &M.M3};
        for (int k = 0; k < 3; ++k) {
            std::vector<cplx> nu(lam.size());
            for (std::size_t j = 0; j < lam.size(); ++j) nu[j] = nu_w(W.w[static_cast<std::size_t>(k)], lam[j]);
            const auto e = eigenvalue_curves(*Ms[k]);
            EXPECT_LE(eigenvalue_error(e, nu), 1e-6) << k;
            EXPECT_LE(std::abs(e.rho1_at_1 - 1.0), 1e-6);
            EXPECT_LE(std::abs(e.rho2_at_1 - 1.0), 1e-6);
            EXPECT_LE(std::abs(e.drho1_at_1), 1e-5);
            EXPECT_LE(std::abs(e.drho2_at_1), 1e-5);
            for (int j = 0; j < n; ++j) EXPECT_LE(std::abs(Ms[k]->sample(j).determinant() - 1.0), 1e-8);
        }
    }
}

TEST(Monodromy, BasePointIndependence)
{
    const auto P = trinoid_potential(Weights::from_weights(0.5, 0.3, 0.4));
    const int n = 16;
    const auto phi0 = LaurentLoop::constant(Mat2::Identity(), n / 2 - 1, n);
    const auto a = monodromies(P, cplx(0.5, -0.5), phi0, tight());
    const auto b = monodromies(P, cplx(0.3, 0.8), phi0, tight());
    for (int j = 0; j < n; ++j) {
        EXPECT_LE(spectrum_distance(a.M1.sample(j), b.M1.sample(j)), 1e-7);
        EXPECT_LE(spectrum_distance(a.M2.sample(j), b.M2.sample(j)), 1e-7);
        EXPECT_LE(spectrum_distance(a.M3.sample(j), b.M3.sample(j)), 1e-7);
    }
}

TEST(EigenCurves, Identity)
{
    const auto e = eigenvalue_curves(std::vector<Mat2>(16, Mat2::Identity()));
    for (std::size_t j = 0; j < 16; ++j) {
        EXPECT_EQ(e.rho1[j], cplx(1.0));
        EXPECT_EQ(e.rho2[j], cplx(1.0));
    }
    EXPECT_LE(std::abs(e.drho1_at_1) + std::abs(e.drho2_at_1), 1e-15);
}

TEST(EigenCurves, FlagsDiscontinuity)
{
    std::vector<Mat2> M(16, Mat2::Identity());
    for (std::size_t j = 8; j < 16; ++j) M[j] = -Mat2::Identity();
    try {
        eigenvalue_curves(M);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DiscontinuousBranch);
    }
}
