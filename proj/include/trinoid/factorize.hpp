#pragma once

#include "loops.hpp"

#include <optional>

namespace trinoid {

struct ScalarFactorization {
    ScalarLoop h;
    std::vector<cplx> zeros;
    double residual = 0.0;
};

struct IwasawaResult {
    LaurentLoop F;
    LaurentLoop B;
    double residual_recon = 0.0;
    double residual_reality = 0.0;
    double residual_plus = 0.0;
    int iterations = 0;
};

struct IwasawaOptions {
    int max_iters = 200;
    double tol = 1e-12;
    // accepted defect |F*F - I| when the iteration stagnates above tol
    double stagnation_accept = 1e-8;
    // number of nonnegative Fourier modes kept in B (0 = N/2)
    int keep = 0;
    // the iteration runs on oversample * N points; B^{-1} is not band limited
    int oversample = 2;
};

namespace detail {

// Split H - I = Y + Y* with Y a plus loop whose constant term is upper
// triangular with real diagonal; returns samples of Y.
inline std::vector<Mat2> plus_half(const std::vector<Mat2>& Hm, int keep)
{
    const std::size_t n = Hm.size();
    auto h = fft::forward(Hm);
    std::vector<Mat2> y(n, Mat2::Zero());
    for (std::size_t m = 1; m < static_cast<std::size_t>(keep); ++m) y[m] = h[m];
    const Mat2& h0 = h[0];
    y[0] = make2(0.5 * h0(0, 0).real(), h0(0, 1), 0.0, 0.5 * h0(1, 1).real());
    return fft::inverse(y);
}

inline void project_plus(std::vector<Mat2>& B, int keep)
{
    auto c = fft::forward(B);
    for (std::size_t m = static_cast<std::size_t>(keep); m < c.size(); ++m) c[m].setZero();
    B = fft::inverse(c);
}

inline Mat2 upper_cholesky(const Mat2& G)
{
    const double b11 = std::sqrt(std::max(G(0, 0).real(), 1e-300));
    const cplx b12 = G(0, 1) / b11;
    const double b22 = std::sqrt(std::max(G(1, 1).real() - std::norm(b12), 1e-300));
    return make2(b11, b12, 0.0, b22);
}

inline double max_defect(const std::vector<Mat2>& Hm)
{
    double d = 0.0;
    for (const auto& m : Hm) d = std::max(d, (m - Mat2::Identity()).cwiseAbs().maxCoeff());
    return d;
}

}  // namespace detail

struct SampledIwasawa {
    std::vector<Mat2> F, B;
    int iterations = 0;
    double defect = 0.0;
};

// Wilson-type Newton iteration on B with X*X = B*B, carried out on
// F = X B^{-1} so that G = X*X is never formed.
inline SampledIwasawa iwasawa_samples(const std::vector<Mat2>& X, double eps, const std::vector<Mat2>* guess,
                                      const IwasawaOptions& opt = {})
{
    const std::size_t n = X.size();
    const int keep = opt.keep > 0 ? opt.keep : static_cast<int>(n / 2);
    std::vector<Mat2> B(n);
    if (guess) {
        B = *guess;
    } else {
        Mat2 G = Mat2::Zero();
        for (const auto& x : X) G += x.adjoint() * x;
        G /= static_cast<double>(n);
        G += eps * Mat2::Identity();
        std::fill(B.begin(), B.end(), detail::upper_cholesky(G));
    }
    std::vector<Mat2> Hm(n), Binv(n);
    std::vector<Mat2> bestB;
    double best = std::numeric_limits<double>::infinity();
    int stall = 0;
    int it = 0;
    for (; it < opt.max_iters; ++it) {
        for (std::size_t j = 0; j < n; ++j) {
            Binv[j] = inv2(B[j]);
            const Mat2 Ft = X[j] * Binv[j];
            Hm[j] = Ft.adjoint() * Ft;
            if (eps > 0.0) Hm[j] += eps * Binv[j].adjoint() * Binv[j];
        }
        const double d = detail::max_defect(Hm);
        if (!std::isfinite(d)) break;
        if (d < best) {
            if (d > 0.5 * best) ++stall;
            else stall = 0;
            best = d;
            bestB = B;
        } else {
            ++stall;
        }
        if (d < opt.tol) break;
        if (stall >= 3 && best < opt.stagnation_accept) break;
        for (auto& m : Hm) m -= Mat2::Identity();
        auto Y = detail::plus_half(Hm, keep);
        std::vector<Mat2> Bn(n);
        for (std::size_t j = 0; j < n; ++j) Bn[j] = (Mat2::Identity() + Y[j]) * B[j];
        detail::project_plus(Bn, keep);
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            num = std::max(num, (Bn[j] - B[j]).cwiseAbs().maxCoeff());
            den = std::max(den, Bn[j].cwiseAbs().maxCoeff());
        }
        B = std::move(Bn);
        if (num <= opt.tol * den) {
            ++it;
            // score the final iterate
            for (std::size_t j = 0; j < n; ++j) {
                Binv[j] = inv2(B[j]);
                const Mat2 Ft = X[j] * Binv[j];
                Hm[j] = Ft.adjoint() * Ft;
            }
            const double df = detail::max_defect(Hm);
            if (df < best) {
                best = df;
                bestB = B;
            }
            break;
        }
    }
    if (bestB.empty() || !(best < opt.stagnation_accept))
        throw Error(ErrorCode::SpectralFactorizationDiverged,
                    "defect " + sci(best) + " after " + std::to_string(it) + " iterations");
    B = std::move(bestB);
    // normalize B(0) to upper triangular with positive diagonal
    Mat2 b0 = Mat2::Zero();
    for (const auto& b : B) b0 += b;
    b0 /= static_cast<double>(n);
    Eigen::HouseholderQR<Mat2> qr(b0);
    Mat2 Q = qr.householderQ();
    Mat2 R = Q.adjoint() * b0;
    for (int i = 0; i < 2; ++i) {
        const cplx ph = R(i, i) / std::abs(R(i, i));
        Q.col(i) *= ph;
    }
    SampledIwasawa out;
    out.B.resize(n);
    out.F.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        out.B[j] = Q.adjoint() * B[j];
        out.F[j] = X[j] * inv2(out.B[j]);
    }
    out.iterations = it;
    out.defect = best;
    return out;
}

inline double nearest_unitary_plus_residual(const std::vector<Mat2>& F, const std::vector<Mat2>& X)
{
    const std::size_t n = F.size();
    std::vector<Mat2> Bh(n);
    for (std::size_t j = 0; j < n; ++j) {
        Eigen::JacobiSVD<Mat2> svd(F[j], Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Mat2 U = svd.matrixU() * svd.matrixV().adjoint();
        Bh[j] = U.adjoint() * X[j];
    }
    auto c = fft::forward(Bh);
    double r = 0.0;
    for (std::size_t m = n / 2 + 1; m < n; ++m) r = std::max(r, c[m].cwiseAbs().maxCoeff());
    return r;
}

// regularization < 0 selects the default ridge 1e-12 * |G|.
inline IwasawaResult iwasawa(const LaurentLoop& X, double regularization = -1.0, const IwasawaOptions& opt = {})
{
    const auto& s = X.samples();
    double gmax = 0.0;
    for (const auto& x : s) gmax = std::max(gmax, opnorm(x) * opnorm(x));
    const double eps = regularization < 0.0 ? 1e-12 * gmax : regularization;
    double smin = std::numeric_limits<double>::infinity();
    for (const auto& x : s) {
        Eigen::JacobiSVD<Mat2> svd(x);
        smin = std::min(smin, svd.singularValues()(1));
    }
    if (smin * smin + eps <= 0.0 || gmax == 0.0)
        throw Error(ErrorCode::SingularInput, "X*X is not positive definite on the circle");
    const int n = X.nsamples();
    const int K = n / 2 - 1;
    SampledIwasawa r;
    if (opt.oversample > 1) {
        const int os = opt.oversample;
        const auto fine = LaurentLoop::from_coeffs(X.coeffs(), os * n, X.radius());
        IwasawaOptions o = opt;
        if (o.keep <= 0) o.keep = n / 2;
        const auto rf = iwasawa_samples(fine.samples(), eps, nullptr, o);
        r.B.resize(s.size());
        r.F.resize(s.size());
        for (std::size_t j = 0; j < s.size(); ++j) {
            r.B[j] = rf.B[j * static_cast<std::size_t>(os)];
            r.F[j] = s[j] * inv2(r.B[j]);
        }
        r.iterations = rf.iterations;
        r.defect = rf.defect;
    } else {
        r = iwasawa_samples(s, eps, nullptr, opt);
    }
    IwasawaResult out;
    double xs = 1.0;
    for (const auto& x : s) xs = std::max(xs, opnorm(x));
    for (std::size_t j = 0; j < s.size(); ++j) {
        out.residual_recon = std::max(out.residual_recon, opnorm(s[j] - r.F[j] * r.B[j]) / xs);
        out.residual_reality = std::max(out.residual_reality, opnorm(r.F[j] * r.F[j].adjoint() - Mat2::Identity()));
    }
    out.residual_plus = nearest_unitary_plus_residual(r.F, s) / xs;
    out.F = LaurentLoop::from_samples(r.F, K, X.radius());
    out.B = LaurentLoop::from_samples(r.B, K, X.radius());
    out.iterations = r.iterations;
    return out;
}

// f = h* h for a real nonnegative scalar loop, with boundary zeros of
// multiplicity two factored out before the logarithmic split.
inline ScalarFactorization scalar_spectral_factor(const ScalarLoop& f, double tol = 1e-10)
{
    const auto& s = f.samples();
    const int n = f.nsamples();
    const int K = f.band();
    double fmax = 0.0;
    for (const auto& v : s) fmax = std::max(fmax, std::abs(v));
    if (fmax == 0.0) throw Error(ErrorCode::IdenticallyZero, "scalar loop vanishes identically");
    double asym = 0.0;
    for (int k = 0; k <= K; ++k) asym = std::max(asym, std::abs(f.coeff(k) - std::conj(f.coeff(-k))));
    if (asym > tol * std::max(1.0, fmax)) throw Error(ErrorCode::NotRealSymmetric, "f differs from f* by " + sci(asym));
    double fmin = std::numeric_limits<double>::infinity();
    for (const auto& v : s) fmin = std::min(fmin, v.real());
    if (fmin < -tol * std::max(1.0, fmax)) throw Error(ErrorCode::NegativeSamples, "minimum sample " + sci(fmin));

    // zero candidates: runs of samples below the threshold
    const double thr = 1e-8 * fmax;
    std::vector<cplx> zeros;
    std::vector<char> cand(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) cand[static_cast<std::size_t>(j)] = s[static_cast<std::size_t>(j)].real() < thr;
    auto val = [&](int j) { return s[static_cast<std::size_t>(((j % n) + n) % n)].real(); };
    const double dth = 2.0 * pi / n;
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (int j = 0; j < n; ++j) {
        if (!cand[static_cast<std::size_t>(j)] || seen[static_cast<std::size_t>(j)]) continue;
        int lo = j, hi = j;
        while (cand[static_cast<std::size_t>(((lo - 1) % n + n) % n)] && hi - lo < n) --lo;
        while (cand[static_cast<std::size_t>((hi + 1) % n)] && hi - lo < n) ++hi;
        if (hi - lo + 1 >= n) throw Error(ErrorCode::IdenticallyZero, "scalar loop vanishes on the whole circle");
        int jm = lo;
        for (int t = lo; t <= hi; ++t) {
            seen[static_cast<std::size_t>(((t % n) + n) % n)] = 1;
            if (val(t) < val(jm)) jm = t;
        }
        const double fm = val(jm - 1), f0 = val(jm), fp = val(jm + 1);
        const double den = fm - 2.0 * f0 + fp;
        double off = den > 0.0 ? 0.5 * (fm - fp) / den : 0.0;
        off = std::clamp(off, -1.0, 1.0);
        // a double zero grows like d^2; a quartic zero like d^4
        const double r1 = 0.5 * (val(jm - 1) + val(jm + 1)) - f0;
        const double r2 = 0.5 * (val(jm - 2) + val(jm + 2)) - f0;
        if (r1 > 0.0 && r2 / r1 > 10.0) throw Error(ErrorCode::HigherMultiplicityZero, "boundary zero of order above two");
        zeros.push_back(std::polar(1.0, (jm + off) * dth));
    }

    // deflate lambda^K f by (lambda - a)^2 for each zero
    std::vector<cplx> P(static_cast<std::size_t>(2 * K + 1));
    for (int k = -K; k <= K; ++k) P[static_cast<std::size_t>(k + K)] = f.coeff(k);
    cplx scale = 1.0;
    for (const auto& a : zeros) {
        for (int rep = 0; rep < 2; ++rep) {
            const std::size_t deg = P.size() - 1;
            if (deg == 0) break;
            std::vector<cplx> Q(deg);
            cplx acc = P[deg];
            for (std::size_t i = deg; i-- > 0;) {
                Q[i] = acc;
                acc = P[i] + acc * a;
            }
            P = std::move(Q);
        }
        scale *= -std::conj(a);
    }
    const int Kg = K - static_cast<int>(zeros.size());
    // g has coefficients for lambda^{-Kg..Kg}
    std::vector<cplx> gc(static_cast<std::size_t>(n), cplx(0.0));
    for (int k = -Kg; k <= Kg; ++k) {
        const cplx v = P[static_cast<std::size_t>(k + Kg)] / scale;
        gc[static_cast<std::size_t>(((k % n) + n) % n)] = v;
    }
    auto gs = fft::inverse(gc);
    std::vector<cplx> lg(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        const double g = gs[static_cast<std::size_t>(j)].real();
        if (!(g > 0.0)) throw Error(ErrorCode::NegativeSamples, "deflated loop is not positive");
        lg[static_cast<std::size_t>(j)] = std::log(g);
    }
    auto lc = fft::forward(lg);
    for (int m = 0; m < n; ++m) {
        const int k = fft::freq(static_cast<std::size_t>(m), static_cast<std::size_t>(n));
        if (k < 0 || 2 * k == n) lc[static_cast<std::size_t>(m)] = 0.0;
        else if (k == 0) lc[static_cast<std::size_t>(m)] = 0.5 * lc[static_cast<std::size_t>(m)].real();
    }
    auto gp = fft::inverse(lc);
    const auto lam = unit_samples(n);
    std::vector<cplx> hs(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        cplx q = 1.0;
        for (const auto& a : zeros) q *= lam[static_cast<std::size_t>(j)] - a;
        hs[static_cast<std::size_t>(j)] = std::exp(gp[static_cast<std::size_t>(j)]) * q;
    }
    ScalarFactorization out;
    out.h = ScalarLoop::from_samples(hs, std::min(K + static_cast<int>(zeros.size()), n / 2 - 1));
    out.zeros = zeros;
    for (int j = 0; j < n; ++j)
        out.residual = std::max(out.residual, std::abs(std::norm(out.h.sample(j)) - s[static_cast<std::size_t>(j)]));
    return out;
}

namespace detail {

// Newton on the plus loop h, projected back to the circle
inline cplx refine_boundary_zero(const ScalarLoop& h, cplx a)
{
    const int K = h.band();
    for (int it = 0; it < 8; ++it) {
        cplx v = 0.0, d = 0.0;
        for (int k = K; k >= 0; --k) {
            d = d * a + v;
            v = v * a + h.coeff(k);
        }
        if (std::abs(d) == 0.0) break;
        const cplx b = a - v / d;
        if (!(std::abs(std::abs(b) - 1.0) < 1e-3)) break;
        a = b / std::abs(b);
    }
    return a;
}

}  // namespace detail

struct BirkhoffResult {
    LaurentLoop C;
    ScalarLoop f;
    double residual = 0.0;
    ScalarFactorization det_factor;
};

// f X = C* C with C a plus loop, C(0) upper triangular with positive diagonal
// and f = X_11.
inline BirkhoffResult matrix_singular_birkhoff(const LaurentLoop& X, double tol = 1e-9, double regularization = -1.0)
{
    const int n = X.nsamples();
    const auto& s = X.samples();
    double xmax = 0.0, hd = 0.0;
    for (const auto& x : s) {
        xmax = std::max(xmax, opnorm(x));
        hd = std::max(hd, opnorm(x - x.adjoint()));
    }
    if (hd > tol * std::max(1.0, xmax)) throw Error(ErrorCode::NotHermitianSymmetric, "X differs from X* by " + sci(hd));
    std::vector<cplx> x11(static_cast<std::size_t>(n)), det(static_cast<std::size_t>(n));
    double dmax = 0.0;
    for (int j = 0; j < n; ++j) {
        const Mat2 h = 0.5 * (s[static_cast<std::size_t>(j)] + s[static_cast<std::size_t>(j)].adjoint());
        Eigen::SelfAdjointEigenSolver<Mat2> es(h);
        if (es.eigenvalues()(0) < -tol * std::max(1.0, xmax))
            throw Error(ErrorCode::NotPSD, "negative eigenvalue " + sci(es.eigenvalues()(0)));
        x11[static_cast<std::size_t>(j)] = h(0, 0).real();
        det[static_cast<std::size_t>(j)] = (h(0, 0) * h(1, 1) - h(0, 1) * h(1, 0)).real();
        dmax = std::max(dmax, std::abs(det[static_cast<std::size_t>(j)]));
    }
    if (dmax <= tol * std::max(1.0, xmax * xmax)) throw Error(ErrorCode::DegenerateDeterminant, "det X vanishes identically");
    const int K = n / 2 - 1;
    auto dl = ScalarLoop::from_samples(det, K);
    // symmetrize the determinant coefficients before factoring
    std::vector<cplx> dc(static_cast<std::size_t>(2 * K + 1));
    for (int k = -K; k <= K; ++k) dc[static_cast<std::size_t>(k + K)] = 0.5 * (dl.coeff(k) + std::conj(dl.coeff(-k)));
    dl = ScalarLoop::from_coeffs(dc, n);
    auto ef = scalar_spectral_factor(dl, 1e-8);
    std::vector<Mat2> Y(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j)
        Y[static_cast<std::size_t>(j)] = make2(x11[static_cast<std::size_t>(j)], s[static_cast<std::size_t>(j)](0, 1), 0.0, ef.h.sample(j));
    auto Yl = LaurentLoop::from_samples(Y, K);
    // det Y = x11 h vanishes at the boundary zeros of h; peel each off with
    // the plus factor E = (I - vv*) + (lambda - a) vv*, Y(a) v = 0
    const auto lam = unit_samples(n);
    std::vector<Mat2> E(static_cast<std::size_t>(n), Mat2::Identity());
    for (cplx a : ef.zeros) {
        a = detail::refine_boundary_zero(ef.h, a);
        Eigen::JacobiSVD<Mat2> svd(eval(Yl, a), Eigen::ComputeFullV);
        const Eigen::Vector2cd v = svd.matrixV().col(1);
        const Mat2 Pv = v * v.adjoint();
        // (Y v)(lambda) / (lambda - a) by synthetic division on lambda^K Y v
        std::vector<Eigen::Vector2cd> q(static_cast<std::size_t>(2 * K + 1), Eigen::Vector2cd::Zero());
        Eigen::Vector2cd acc = Yl.coeff(K) * v;
        for (int i = 2 * K; i-- > 0;) {
            q[static_cast<std::size_t>(i)] = acc;
            acc = Yl.coeff(i - K) * v + acc * a;
        }
        std::vector<Mat2> c(static_cast<std::size_t>(2 * K + 1));
        for (int k = -K; k <= K; ++k)
            c[static_cast<std::size_t>(k + K)] = Yl.coeff(k) * (Mat2::Identity() - Pv) + q[static_cast<std::size_t>(k + K)] * v.adjoint();
        Yl = LaurentLoop::from_coeffs(std::move(c), n);
        for (int j = 0; j < n; ++j)
            E[static_cast<std::size_t>(j)] = (Mat2::Identity() + (lam[static_cast<std::size_t>(j)] - a - 1.0) * Pv) * E[static_cast<std::size_t>(j)];
    }
    auto iw = iwasawa(Yl, regularization);
    BirkhoffResult out;
    if (ef.zeros.empty()) {
        out.C = iw.B;
    } else {
        std::vector<Mat2> C(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) C[static_cast<std::size_t>(j)] = iw.B.sample(j) * E[static_cast<std::size_t>(j)];
        // restore C(0) upper triangular with positive diagonal
        Mat2 c0 = Mat2::Zero();
        for (const auto& m : C) c0 += m;
        c0 /= static_cast<double>(n);
        Eigen::HouseholderQR<Mat2> qr(c0);
        Mat2 Q = qr.householderQ();
        const Mat2 R = Q.adjoint() * c0;
        for (int i = 0; i < 2; ++i) Q.col(i) *= R(i, i) / std::abs(R(i, i));
        for (auto& m : C) m = Q.adjoint() * m;
        out.C = LaurentLoop::from_samples(C, K);
    }
    out.f = ScalarLoop::from_samples(x11, K);
    out.det_factor = ef;
    for (int j = 0; j < n; ++j) {
        const Mat2& c = out.C.sample(j);
        out.residual = std::max(out.residual, opnorm(x11[static_cast<std::size_t>(j)] * s[static_cast<std::size_t>(j)] - c.adjoint() * c));
    }
    return out;
}

}  // namespace trinoid
