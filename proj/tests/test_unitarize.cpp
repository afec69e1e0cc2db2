#include "common.hpp"
#include "trinoid/unitarize.hpp"

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

using namespace trinoid;
using namespace testing_util;

namespace {

Mat2 hermitian(std::mt19937& g, double s)
{
    const Mat2 a = random_mat(g, s);
    return 0.5 * (a + a.adjoint());
}

// exp(i (A + B lambda + B^* / lambda)), unitary on the circle
LaurentLoop unitary_loop(std::mt19937& g, int n)
{
    const Mat2 A = hermitian(g, 1.0), B = random_mat(g, 0.3);
    std::vector<Mat2> s(static_cast<std::size_t>(n));
    const auto lam = unit_samples(n);
    for (std::size_t j = 0; j < lam.size(); ++j) {
        const Mat2 h = A + B * lam[j] + B.adjoint() / lam[j];
        s[j] = (I1 * h).exp();
    }
    return LaurentLoop::from_samples(s, n / 2 - 1);
}

MonodromySet from_pair(const LaurentLoop& M1, const LaurentLoop& M2)
{
    MonodromySet m;
    m.M1 = M1;
    m.M2 = M2;
    std::vector<Mat2> s(static_cast<std::size_t>(M1.nsamples()));
    for (int j = 0; j < M1.nsamples(); ++j) s[static_cast<std::size_t>(j)] = inv2(M1.sample(j) * M2.sample(j));
    m.M3 = LaurentLoop::from_samples(s, M1.nsamples() / 2 - 1);
    return m;
}

LaurentLoop conjugate(const Mat2& D, const LaurentLoop& U)
{
    std::vector<Mat2> s(static_cast<std::size_t>(U.nsamples()));
    for (int j = 0; j < U.nsamples(); ++j) s[static_cast<std::size_t>(j)] = D * U.sample(j) * inv2(D);
    return LaurentLoop::from_samples(s, U.nsamples() / 2 - 1);
}

MonodromySet trinoid_monodromy(const Weights& W, int n)
{
    const auto phi0 = LaurentLoop::constant(Mat2::Identity(), n / 2 - 1, n);
    return monodromies(trinoid_potential(W), cplx(0.5, -0.5), phi0);
}

}  // namespace

TEST(Pointwise, BoundaryTriple)
{
    const auto W = Weights::from_necksizes(1.0 / 3, 1.0 / 3, 1.0 / 3);
    const auto nu = nu_curves(W, 16);
    // sample 8 is lambda = -1
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(nu[static_cast<std::size_t>(k)][8], 1.0 / 3, 1e-15);
    EXPECT_NEAR(spherical_triangle_margin(nu[0][8], nu[1][8], nu[2][8]), 0.0, 1e-14);
    EXPECT_NEAR(nu[0][8] + nu[1][8] + nu[2][8], 1.0, 1e-14);
}

TEST(Pointwise, TriangleFailure)
{
    EXPECT_LT(spherical_triangle_margin(0.3, 0.1, 0.1), 0.0);
    EXPECT_GT(spherical_triangle_margin(0.2, 0.15, 0.1), 0.0);
    NuCurves nu;
    for (auto& c : nu) c.assign(16, 0.1);
    nu[0].assign(16, 0.3);
    const auto r = pointwise_unitarizability(nu);
    EXPECT_FALSE(r.verdict);
    EXPECT_EQ(r.failures, 16);
}

TEST(Pointwise, AdmissibleWeights)
{
    for (const auto& W : {Weights::equal(0.75), Weights::from_weights(0.5, 0.3, 0.4), Weights::equal(-0.75),
                          Weights::from_necksizes(0.3, 0.25, 0.2)}) {
        const auto r = pointwise_unitarizability(nu_curves(W, 128));
        EXPECT_TRUE(r.verdict);
        EXPECT_LE(r.longest_failure_run, 2);
    }
}

TEST(Kernel, UnitaryMonodromy)
{
    std::mt19937 g(41);
    const int n = 32;
    const auto M = from_pair(unitary_loop(g, n), unitary_loop(g, n));
    const auto s = kernel_section(M);
    EXPECT_TRUE(s.degenerate_samples.empty());
    for (const auto& x : s.X) EXPECT_LE(opnorm(x - 0.5 * Mat2::Identity()), 1e-10);
    const auto u = build_unitarizer(s, M);
    EXPECT_LE(u.residual_unitarity, 1e-8);
    EXPECT_LE(scalar_ratio_defect(LaurentLoop::constant(Mat2::Identity(), n / 2 - 1, n), u.C), 1e-8);
}

TEST(Kernel, DiagonalConjugacy)
{
    std::mt19937 g(42);
    const int n = 32;
    const Mat2 D = make2(2.0, 0.0, 0.0, 0.5);
    const auto M = from_pair(conjugate(D, unitary_loop(g, n)), conjugate(D, unitary_loop(g, n)));
    const auto s = kernel_section(M);
    EXPECT_TRUE(s.degenerate_samples.empty());
    const Mat2 ref = make2(0.25, 0.0, 0.0, 4.0) / (17.0 / 4.0);
    for (const auto& x : s.X) EXPECT_LE(opnorm(x - ref), 1e-10);
    EXPECT_LE(kernel_residual(s, M), 1e-8);
    // D^{-1} = diag(1/2, 2) is already upper triangular with positive diagonal
    const auto u = build_unitarizer(s, M);
    EXPECT_LE(u.residual_unitarity, 1e-8);
    const auto Dinv = LaurentLoop::constant(make2(0.5, 0.0, 0.0, 2.0), n / 2 - 1, n);
    EXPECT_LE(scalar_ratio_defect(Dinv, u.C), 1e-8);
}

TEST(Kernel, CommutingMonodromyCollapses)
{
    const int n = 16;
    const auto M = LaurentLoop::constant(make2(std::polar(1.0, 0.4), 0.0, 0.0, std::polar(1.0, -0.4)), n / 2 - 1, n);
    try {
        kernel_section(from_pair(M, M));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::KernelDimensionCollapse);
    }
}

TEST(Trinoid, SectionSmoothAndInKernel)
{
    const int n = 64;
    const auto M = trinoid_monodromy(Weights::equal(0.75), n);
    const auto s = kernel_section(M);
    // at lambda = 1 the potential is constant nilpotent and every M_k is I
    ASSERT_EQ(s.degenerate_samples.size(), 1u);
    EXPECT_EQ(s.degenerate_samples.front(), 0);
    EXPECT_LE(kernel_residual(s, M), 1e-8);
    for (int j = 0; j < n; ++j) {
        const auto& x = s.X[static_cast<std::size_t>(j)];
        EXPECT_LE(herm_defect(x), 1e-15);
        EXPECT_NEAR(x.trace().real(), 1.0, 1e-14);
        Eigen::SelfAdjointEigenSolver<Mat2> es(x);
        EXPECT_GE(es.eigenvalues()(0), -1e-9);
        EXPECT_LE(opnorm(x - s.X[static_cast<std::size_t>((j + 1) % n)]), 10.0 / n);
    }
    EXPECT_LE(s.discarded_energy, 1e-6);
}

TEST(Trinoid, UnitarizerResidualAndClosing)
{
    for (const auto& W : {Weights::equal(0.75), Weights::from_weights(0.5, 0.3, 0.4), Weights::equal(-0.75)}) {
        const int n = 64;
        const auto M = trinoid_monodromy(W, n);
        const auto u = build_unitarizer(kernel_section(M), M);
        EXPECT_LE(u.residual_unitarity, 1e-6);
        for (const LaurentLoop* m : {&M.M1, &M.M2, &M.M3}) {
            const auto e = eigenvalue_curves(dress(u.C, *m));
            EXPECT_LE(std::abs(e.rho1_at_1 - 1.0), 1e-6);
            EXPECT_LE(std::abs(e.rho2_at_1 - 1.0), 1e-6);
            EXPECT_LE(std::abs(e.drho1_at_1), 1e-5);
            EXPECT_LE(std::abs(e.drho2_at_1), 1e-5);
        }
    }
}

TEST(Trinoid, UniqueUpToScalar)
{
    const auto W = Weights::equal(0.75);
    const auto M1 = trinoid_monodromy(W, 64), M2 = trinoid_monodromy(W, 128);
    const auto a = build_unitarizer(kernel_section(M1), M1), b = build_unitarizer(kernel_section(M2), M2);
    EXPECT_LE(scalar_ratio_defect(a.C, b.C), 1e-5);
}

TEST(Trinoid, BoundaryNecksizesUnitarize)
{
    // sum of necksizes 1: det X vanishes at lambda = -1
    const int n = 64;
    const auto M = trinoid_monodromy(Weights::from_necksizes(1.0 / 3, 1.0 / 3, 1.0 / 3), n);
    const auto u = build_unitarizer(kernel_section(M), M);
    EXPECT_LE(u.residual_unitarity, 1e-6);
    ASSERT_FALSE(u.det_zeros.empty());
    EXPECT_LE(std::abs(u.det_zeros.front() + 1.0), 1e-6);
}
