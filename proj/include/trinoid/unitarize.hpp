#pragma once

#include "factorize.hpp"
#include "holonomy.hpp"
#include "potentials.hpp"

#include <array>

namespace trinoid {

// --------------------------------------------- pointwise unitarizability

struct PointwiseReport {
    std::vector<char> ok;
    std::vector<double> margin;
    int failures = 0;
    int longest_failure_run = 0;
    bool verdict = false;
};

using NuCurves = std::array<std::vector<double>, 3>;

inline NuCurves nu_curves(const Weights& W, int n)
{
    NuCurves nu;
    const auto lam = unit_samples(n);
    for (int k = 0; k < 3; ++k) {
        nu[static_cast<std::size_t>(k)].resize(lam.size());
        for (std::size_t j = 0; j < lam.size(); ++j)
            nu[static_cast<std::size_t>(k)][j] = nu_w(W.w[static_cast<std::size_t>(k)] * W.H * W.H, lam[j]).real();
    }
    return nu;
}

// strict spherical triangle inequalities on the reduced triple; positive
// margin means a nondegenerate triangle
inline double spherical_triangle_margin(double n1, double n2, double n3)
{
    const double a = reduce_nu(n1), b = reduce_nu(n2), c = reduce_nu(n3);
    return std::min({tetra_margin(a, b, c), a, b, c, 0.5 - a, 0.5 - b, 0.5 - c});
}

inline PointwiseReport pointwise_unitarizability(const NuCurves& nu, double tol = 1e-12)
{
    PointwiseReport r;
    const std::size_t n = nu[0].size();
    r.ok.resize(n);
    r.margin.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        r.margin[j] = spherical_triangle_margin(nu[0][j], nu[1][j], nu[2][j]);
        r.ok[j] = r.margin[j] > tol;
        if (!r.ok[j]) ++r.failures;
    }
    // failing runs on the cyclic sample set
    int run = 0;
    for (std::size_t t = 0; t < 2 * n; ++t) {
        run = r.ok[t % n] ? 0 : run + 1;
        r.longest_failure_run = std::max(r.longest_failure_run, std::min(run, static_cast<int>(n)));
    }
    // isolated failures stand in for the finitely many exceptional points
    r.verdict = r.failures <= static_cast<int>(0.05 * static_cast<double>(n)) && r.longest_failure_run <= 2;
    return r;
}

// ------------------------------------------------------------ kernel section

struct KernelSection {
    std::vector<Mat2> X;
    std::vector<double> sigma_min, sigma_next;
    std::vector<int> degenerate_samples;
    LaurentLoop smoothed;
    double discarded_energy = 0.0;  // relative to total
};

// rows of the linear map X -> (X M - M^{-*} X) on row-major vec(X)
inline Eigen::Matrix4cd kernel_block(const Mat2& M)
{
    const Mat2 Mi = inv2(M.adjoint());
    Eigen::Matrix4cd L;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k)
                for (int l = 0; l < 2; ++l) {
                    // (X M)_{ij} = sum_l X_{il} M_{lj};  (Mi X)_{ij} = sum_k Mi_{ik} X_{kj}
                    cplx v = 0.0;
                    if (k == i) v += M(l, j);
                    if (l == j) v -= Mi(i, k);
                    L(2 * i + j, 2 * k + l) = v;
                }
    return L;
}

// Lagrange interpolation in theta from up to `side` good samples on each side.
inline Mat2 fill_from_neighbours(const std::vector<Mat2>& X, const std::vector<char>& bad, int j, int side = 6)
{
    const int n = static_cast<int>(X.size());
    std::vector<double> th;
    std::vector<Mat2> val;
    for (int dir : {-1, 1}) {
        int found = 0;
        for (int d = 1; d < n && found < side; ++d) {
            const int m = ((j + dir * d) % n + n) % n;
            if (bad[static_cast<std::size_t>(m)]) continue;
            th.push_back(dir * d * 2.0 * pi / n);
            val.push_back(X[static_cast<std::size_t>(m)]);
            ++found;
        }
    }
    Mat2 out = Mat2::Zero();
    for (std::size_t i = 0; i < th.size(); ++i) {
        double w = 1.0;
        for (std::size_t k = 0; k < th.size(); ++k)
            if (k != i) w *= (0.0 - th[k]) / (th[i] - th[k]);
        out += w * val[i];
    }
    return out;
}

inline KernelSection kernel_section(const MonodromySet& M, int K = -1, int threads = 1)
{
    const int n = M.M1.nsamples();
    if (K < 0) K = n / 2 - 1;
    KernelSection s;
    s.X.resize(static_cast<std::size_t>(n));
    s.sigma_min.resize(static_cast<std::size_t>(n));
    s.sigma_next.resize(static_cast<std::size_t>(n));
    std::vector<char> bad(static_cast<std::size_t>(n), 0);
    parallel_for(n, threads, [&](int j) {
        const auto u = static_cast<std::size_t>(j);
        Eigen::Matrix<cplx, 8, 4> L;
        L.topRows<4>() = kernel_block(M.M1.sample(j));
        L.bottomRows<4>() = kernel_block(M.M2.sample(j));
        Eigen::JacobiSVD<Eigen::Matrix<cplx, 8, 4>> svd(L, Eigen::ComputeFullV);
        const auto sv = svd.singularValues();
        s.sigma_min[u] = sv(3);
        s.sigma_next[u] = sv(2);
        const Eigen::Vector4cd v = svd.matrixV().col(3);
        Mat2 Kx = make2(v(0), v(1), v(2), v(3));
        const cplx tr = Kx.trace();
        Mat2 X = Kx / tr;
        X = (0.5 * (X + X.adjoint())).eval();
        s.X[u] = X;
        Eigen::SelfAdjointEigenSolver<Mat2> es(X);
        const bool dim1 = sv(2) >= 10.0 * sv(3) && sv(2) > 1e-12 * sv(0);
        const bool tr_ok = std::abs(tr) > 1e-8;
        bad[u] = !(dim1 && tr_ok && es.eigenvalues()(0) >= -1e-9);
    });
    // where every M_k is numerically I both singular values are noise
    const double scale = *std::max_element(s.sigma_next.begin(), s.sigma_next.end());
    for (int j = 0; j < n; ++j)
        if (s.sigma_next[static_cast<std::size_t>(j)] < 1e-6 * scale) bad[static_cast<std::size_t>(j)] = 1;
    for (int j = 0; j < n; ++j)
        if (bad[static_cast<std::size_t>(j)]) s.degenerate_samples.push_back(j);
    if (static_cast<double>(s.degenerate_samples.size()) > 0.05 * n)
        throw Error(ErrorCode::KernelDimensionCollapse,
                    std::to_string(s.degenerate_samples.size()) + " of " + std::to_string(n) + " samples degenerate");
    const auto raw = s.X;
    for (int j : s.degenerate_samples) s.X[static_cast<std::size_t>(j)] = fill_from_neighbours(raw, bad, j);
    s.smoothed = LaurentLoop::from_samples(s.X, K);
    auto c = fft::forward(s.X);
    double total = 0.0, dropped = 0.0;
    for (int m = 0; m < n; ++m) {
        const double e = c[static_cast<std::size_t>(m)].squaredNorm();
        total += e;
        const int k = fft::freq(static_cast<std::size_t>(m), static_cast<std::size_t>(n));
        if (std::abs(k) > K || 2 * std::abs(k) == n) dropped += e;
    }
    s.discarded_energy = total > 0 ? dropped / total : 0.0;
    return s;
}

// max over samples and k of |X M_k - M_k^{-*} X|
inline double kernel_residual(const KernelSection& s, const MonodromySet& M, bool skip_degenerate = true)
{
    std::vector<char> bad(s.X.size(), 0);
    if (skip_degenerate)
        for (int j : s.degenerate_samples) bad[static_cast<std::size_t>(j)] = 1;
    double r = 0.0;
    for (std::size_t j = 0; j < s.X.size(); ++j) {
        if (bad[j]) continue;
        const auto jj = static_cast<int>(j);
        for (const LaurentLoop* m : {&M.M1, &M.M2, &M.M3}) {
            const Mat2& Mk = m->sample(jj);
            r = std::max(r, opnorm(s.X[j] * Mk - inv2(Mk.adjoint()) * s.X[j]));
        }
    }
    return r;
}

// ---------------------------------------------------------------- unitarizer

struct Unitarizer {
    LaurentLoop C;
    ScalarLoop f;
    double residual_unitarity = 0.0;
    double residual_birkhoff = 0.0;
    std::vector<cplx> det_zeros;
};

inline std::vector<Mat2> dress(const LaurentLoop& C, const LaurentLoop& M)
{
    std::vector<Mat2> out(static_cast<std::size_t>(C.nsamples()));
    for (int j = 0; j < C.nsamples(); ++j) out[static_cast<std::size_t>(j)] = C.sample(j) * M.sample(j) * inv2(C.sample(j));
    return out;
}

inline Unitarizer build_unitarizer(const KernelSection& s, const MonodromySet& M, double max_residual = 1e-4)
{
    if (static_cast<double>(s.degenerate_samples.size()) > 0.05 * static_cast<double>(s.X.size()))
        throw Error(ErrorCode::KernelDimensionCollapse, "too many degenerate samples");
    const int n = static_cast<int>(s.X.size());
    auto X = LaurentLoop::from_samples(s.X, n / 2 - 1);
    auto b = matrix_singular_birkhoff(X);
    Unitarizer u;
    u.C = b.C;
    u.f = b.f;
    u.residual_birkhoff = b.residual;
    u.det_zeros = b.det_factor.zeros;
    const auto lam = unit_samples(n);
    const double guard = 2.0 * pi / n + 1e-12;
    for (const LaurentLoop* m : {&M.M1, &M.M2, &M.M3}) {
        const auto D = dress(u.C, *m);
        for (int j = 0; j < n; ++j) {
            bool near = false;
            for (const auto& z : u.det_zeros)
                if (std::abs(std::arg(lam[static_cast<std::size_t>(j)] / z)) <= guard) near = true;
            if (near) continue;
            const Mat2& d = D[static_cast<std::size_t>(j)];
            u.residual_unitarity = std::max(u.residual_unitarity, opnorm(d * d.adjoint() - Mat2::Identity()));
        }
    }
    if (!(u.residual_unitarity <= max_residual))
        throw Error(ErrorCode::UnitarityResidualExceeded, "unitarity residual " + sci(u.residual_unitarity));
    return u;
}

// max over samples of the deviation of C2 C1^{-1} from a multiple of I
inline double scalar_ratio_defect(const LaurentLoop& C1, const LaurentLoop& C2)
{
    // compare on the coarser sample set
    const int n = std::min(C1.nsamples(), C2.nsamples());
    const auto lam = unit_samples(n);
    double d = 0.0;
    for (const auto& l : lam) {
        const Mat2 R = eval(C2, l) * inv2(eval(C1, l));
        const cplx s = 0.5 * R.trace();
        d = std::max(d, opnorm(R - s * Mat2::Identity()) / std::abs(s));
    }
    return d;
}

}  // namespace trinoid
