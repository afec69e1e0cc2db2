#pragma once

#include "core.hpp"

#include <cmath>

namespace trinoid {

inline Mat2 adj(const Mat2& m) { return m.adjoint(); }
inline cplx adj(cplx z) { return std::conj(z); }
inline double mag(const Mat2& m) { return opnorm(m); }
inline double mag(cplx z) { return std::abs(z); }
template <class T> T zero_of();
template <> inline Mat2 zero_of<Mat2>() { return Mat2::Zero(); }
template <> inline cplx zero_of<cplx>() { return cplx(0.0); }
template <class T> T one_of();
template <> inline Mat2 one_of<Mat2>() { return Mat2::Identity(); }
template <> inline cplx one_of<cplx>() { return cplx(1.0); }

// Banded Laurent loop sum_{|k|<=K} X_k lambda^k, kept both as coefficients and
// as samples at the N-th roots of unity.
template <class T>
class BasicLoop {
public:
    BasicLoop() = default;

    static BasicLoop from_coeffs(std::vector<T> c, int nsamples, double radius = 1.0)
    {
        if (c.size() % 2 != 1) throw Error(ErrorCode::BandMismatch, "coefficient list must have odd length 2K+1");
        BasicLoop X;
        X.K_ = static_cast<int>(c.size() / 2);
        X.N_ = nsamples;
        X.radius_ = radius;
        if (X.N_ < 2 * X.K_ + 2) throw Error(ErrorCode::BandMismatch, "nsamples must be at least 2K+2");
        X.coeffs_ = std::move(c);
        X.samples_ = X.render(1.0, X.N_);
        return X;
    }

    // Coefficients outside [-K, K] are discarded; the largest discarded
    // magnitude is kept as the truncation residual.
    static BasicLoop from_samples(const std::vector<T>& s, int K, double radius = 1.0)
    {
        const int n = static_cast<int>(s.size());
        if (n < 2 * K + 2) throw Error(ErrorCode::BandMismatch, "nsamples must be at least 2K+2");
        auto c = fft::forward(s);
        BasicLoop X;
        X.K_ = K;
        X.N_ = n;
        X.radius_ = radius;
        X.coeffs_.assign(static_cast<std::size_t>(2 * K + 1), zero_of<T>());
        double resid = 0.0;
        for (int m = 0; m < n; ++m) {
            const int k = fft::freq(static_cast<std::size_t>(m), static_cast<std::size_t>(n));
            if (std::abs(k) <= K && !(2 * std::abs(k) == n))
                X.coeffs_[static_cast<std::size_t>(k + K)] = c[static_cast<std::size_t>(m)];
            else
                resid = std::max(resid, mag(c[static_cast<std::size_t>(m)]));
        }
        X.trunc_ = resid;
        X.samples_ = X.render(1.0, n);
        return X;
    }

    static BasicLoop constant(const T& v, int K, int nsamples, double radius = 1.0)
    {
        std::vector<T> c(static_cast<std::size_t>(2 * K + 1), zero_of<T>());
        c[static_cast<std::size_t>(K)] = v;
        return from_coeffs(std::move(c), nsamples, radius);
    }

    int band() const { return K_; }
    int nsamples() const { return N_; }
    double radius() const { return radius_; }
    double truncation_residual() const { return trunc_; }
    BasicLoop with_truncation_residual(double r) const
    {
        BasicLoop c = *this;
        c.trunc_ = r;
        return c;
    }

    T coeff(int k) const
    {
        if (std::abs(k) > K_) return zero_of<T>();
        return coeffs_[static_cast<std::size_t>(k + K_)];
    }
    const std::vector<T>& coeffs() const { return coeffs_; }
    const std::vector<T>& samples() const { return samples_; }
    const T& sample(int j) const { return samples_[static_cast<std::size_t>(j)]; }

    // values at rho * exp(2 pi i j / n)
    std::vector<T> render(double rho, int n) const
    {
        std::vector<T> c(static_cast<std::size_t>(n), zero_of<T>());
        for (int k = -K_; k <= K_; ++k) {
            if (coeff(k) == zero_of<T>()) continue;
            const int m = ((k % n) + n) % n;
            c[static_cast<std::size_t>(m)] += coeff(k) * std::pow(rho, k);
        }
        return fft::inverse(c);
    }

private:
    int K_ = 0;
    int N_ = 2;
    double radius_ = 1.0;
    double trunc_ = 0.0;
    std::vector<T> coeffs_{zero_of<T>()};
    std::vector<T> samples_;
};

using LaurentLoop = BasicLoop<Mat2>;
using ScalarLoop = BasicLoop<cplx>;

template <class T>
BasicLoop<T> star(const BasicLoop<T>& X)
{
    const int K = X.band();
    std::vector<T> c(static_cast<std::size_t>(2 * K + 1));
    for (int k = -K; k <= K; ++k) c[static_cast<std::size_t>(k + K)] = adj(X.coeff(-k));
    return BasicLoop<T>::from_coeffs(std::move(c), X.nsamples(), X.radius());
}

template <class T>
BasicLoop<T> theta_derivative(const BasicLoop<T>& X)
{
    const int K = X.band();
    std::vector<T> c(static_cast<std::size_t>(2 * K + 1));
    for (int k = -K; k <= K; ++k) c[static_cast<std::size_t>(k + K)] = X.coeff(k) * cplx(0.0, k);
    return BasicLoop<T>::from_coeffs(std::move(c), X.nsamples(), X.radius());
}

template <class T>
double sup_norm(const BasicLoop<T>& X, double rho, int oversample = 1)
{
    double m = 0.0;
    for (const auto& v : X.render(rho, X.nsamples() * oversample)) m = std::max(m, mag(v));
    return m;
}

template <class T>
T eval(const BasicLoop<T>& X, cplx lambda)
{
    const int K = X.band();
    if (lambda == cplx(0.0)) {
        for (int k = 1; k <= K; ++k)
            if (X.coeff(-k) != zero_of<T>())
                throw Error(ErrorCode::InvalidArgument, "eval at lambda = 0 with nonzero negative coefficients");
        return X.coeff(0);
    }
    T pos = zero_of<T>();
    for (int k = K; k >= 0; --k) pos = pos * lambda + X.coeff(k);
    T neg = zero_of<T>();
    const cplx li = 1.0 / lambda;
    for (int k = K; k >= 1; --k) neg = (neg + X.coeff(-k)) * li;
    return pos + neg;
}

// Product by coefficient convolution.  The result has band K+L, truncated to
// kmax with the largest dropped coefficient recorded.
template <class T>
BasicLoop<T> multiply(const BasicLoop<T>& X, const BasicLoop<T>& Y, int kmax = 64)
{
    const int KX = X.band(), KY = Y.band();
    const int full = KX + KY;
    std::vector<T> c(static_cast<std::size_t>(2 * full + 1), zero_of<T>());
    for (int a = -KX; a <= KX; ++a)
        for (int b = -KY; b <= KY; ++b) c[static_cast<std::size_t>(a + b + full)] += X.coeff(a) * Y.coeff(b);
    const int band = std::min(full, kmax);
    double resid = 0.0;
    std::vector<T> kept(static_cast<std::size_t>(2 * band + 1));
    for (int k = -full; k <= full; ++k) {
        if (std::abs(k) <= band)
            kept[static_cast<std::size_t>(k + band)] = c[static_cast<std::size_t>(k + full)];
        else
            resid = std::max(resid, mag(c[static_cast<std::size_t>(k + full)]));
    }
    int n = std::max(X.nsamples(), Y.nsamples());
    while (n < 2 * band + 2) n *= 2;
    auto out = BasicLoop<T>::from_coeffs(std::move(kept), n, std::min(X.radius(), Y.radius()));
    return out.with_truncation_residual(resid);
}

// max over samples of |X_j - Y_j|
template <class T>
double sample_distance(const std::vector<T>& a, const std::vector<T>& b)
{
    double m = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) m = std::max(m, mag(T(a[j] - b[j])));
    return m;
}

inline std::vector<Mat2> pointwise_product(const std::vector<Mat2>& a, const std::vector<Mat2>& b)
{
    std::vector<Mat2> r(a.size());
    for (std::size_t j = 0; j < a.size(); ++j) r[j] = a[j] * b[j];
    return r;
}

inline std::vector<Mat2> pointwise_inverse(const std::vector<Mat2>& a)
{
    std::vector<Mat2> r(a.size());
    for (std::size_t j = 0; j < a.size(); ++j) r[j] = inv2(a[j]);
    return r;
}

}  // namespace trinoid
