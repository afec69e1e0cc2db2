#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace trinoid {

using cplx = std::complex<double>;
using Mat2 = Eigen::Matrix2cd;
using Vec3 = Eigen::Vector3d;

inline constexpr double pi = std::numbers::pi;
inline const cplx I1{0.0, 1.0};

enum class ErrorCode {
    NotRealSymmetric,
    NegativeSamples,
    IdenticallyZero,
    HigherMultiplicityZero,
    NotHermitianSymmetric,
    NotPSD,
    DegenerateDeterminant,
    SpectralFactorizationDiverged,
    SingularInput,
    WeightOutOfRange,
    InvalidWeights,
    SingularGauge,
    ZeroUpperEntry,
    PoleTooClose,
    StepUnderflow,
    DiscontinuousBranch,
    KernelDimensionCollapse,
    UnitarityResidualExceeded,
    ClosureFailure,
    InsufficientEndDepth,
    BandMismatch,
    InvalidArgument
};

inline const char* error_name(ErrorCode c)
{
    switch (c) {
    case ErrorCode::NotRealSymmetric: return "NotRealSymmetric";
    case ErrorCode::NegativeSamples: return "NegativeSamples";
    case ErrorCode::IdenticallyZero: return "IdenticallyZero";
    case ErrorCode::HigherMultiplicityZero: return "HigherMultiplicityZero";
    case ErrorCode::NotHermitianSymmetric: return "NotHermitianSymmetric";
    case ErrorCode::NotPSD: return "NotPSD";
    case ErrorCode::DegenerateDeterminant: return "DegenerateDeterminant";
    case ErrorCode::SpectralFactorizationDiverged: return "SpectralFactorizationDiverged";
    case ErrorCode::SingularInput: return "SingularInput";
    case ErrorCode::WeightOutOfRange: return "WeightOutOfRange";
    case ErrorCode::InvalidWeights: return "InvalidWeights";
    case ErrorCode::SingularGauge: return "SingularGauge";
    case ErrorCode::ZeroUpperEntry: return "ZeroUpperEntry";
    case ErrorCode::PoleTooClose: return "PoleTooClose";
    case ErrorCode::StepUnderflow: return "StepUnderflow";
    case ErrorCode::DiscontinuousBranch: return "DiscontinuousBranch";
    case ErrorCode::KernelDimensionCollapse: return "KernelDimensionCollapse";
    case ErrorCode::UnitarityResidualExceeded: return "UnitarityResidualExceeded";
    case ErrorCode::ClosureFailure: return "ClosureFailure";
    case ErrorCode::InsufficientEndDepth: return "InsufficientEndDepth";
    case ErrorCode::BandMismatch: return "BandMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

inline std::string sci(double v)
{
    char b[32];
    std::snprintf(b, sizeof b, "%.3e", v);
    return b;
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

// Per-entry FFT of sampled 2x2 and scalar loops.  Coefficient k lives at
// index k mod N.  Plans are cached per thread.
namespace fft {

inline Eigen::FFT<double>& engine()
{
    thread_local Eigen::FFT<double> e;
    return e;
}

inline std::vector<cplx> forward(const std::vector<cplx>& s)
{
    std::vector<cplx> out;
    engine().fwd(out, s);
    const double inv = 1.0 / static_cast<double>(s.size());
    for (auto& v : out) v *= inv;
    return out;
}

inline std::vector<cplx> inverse(const std::vector<cplx>& c)
{
    std::vector<cplx> out;
    engine().inv(out, c);
    const double n = static_cast<double>(c.size());
    for (auto& v : out) v *= n;
    return out;
}

// batched FFTW plan over the four entries of a Mat2 sample array
inline fftw_plan entry_plan(int n, int sign)
{
    static std::mutex mu;
    static std::map<std::pair<int, int>, fftw_plan> plans;
    std::lock_guard<std::mutex> lk(mu);
    auto& p = plans[{n, sign}];
    if (!p) {
        std::vector<fftw_complex> a(static_cast<std::size_t>(4 * n)), b(a.size());
        p = fftw_plan_many_dft(1, &n, 4, a.data(), nullptr, 4, 1, b.data(), nullptr, 4, 1, sign,
                               FFTW_ESTIMATE | FFTW_UNALIGNED);
    }
    return p;
}

inline void transform_entries(const std::vector<Mat2>& in, std::vector<Mat2>& out, bool fwd)
{
    const int n = static_cast<int>(in.size());
    out.resize(in.size());
    const auto plan = entry_plan(n, fwd ? FFTW_FORWARD : FFTW_BACKWARD);
    auto* src = reinterpret_cast<fftw_complex*>(const_cast<Mat2*>(in.data()));
    auto* dst = reinterpret_cast<fftw_complex*>(out.data());
    if (src == dst) {
        std::vector<Mat2> tmp(in);
        fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(tmp.data()), dst);
    } else {
        fftw_execute_dft(plan, src, dst);
    }
    if (fwd) {
        const double inv = 1.0 / n;
        for (auto& m : out) m *= inv;
    }
}

inline std::vector<Mat2> forward(const std::vector<Mat2>& s)
{
    std::vector<Mat2> out;
    transform_entries(s, out, true);
    return out;
}

inline std::vector<Mat2> inverse(const std::vector<Mat2>& c)
{
    std::vector<Mat2> out;
    transform_entries(c, out, false);
    return out;
}

// signed frequency of FFT slot m for length n
inline int freq(std::size_t m, std::size_t n)
{
    const auto mi = static_cast<long>(m);
    const auto ni = static_cast<long>(n);
    return static_cast<int>(mi < (ni + 1) / 2 ? mi : mi - ni);
}

}  // namespace fft

inline std::vector<cplx> unit_samples(int n)
{
    std::vector<cplx> l(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) l[static_cast<std::size_t>(j)] = std::polar(1.0, 2.0 * pi * j / n);
    return l;
}

inline double herm_defect(const Mat2& m)
{
    return (m - m.adjoint()).norm();
}

inline double opnorm(const Mat2& m)
{
    Eigen::JacobiSVD<Mat2> svd(m);
    return svd.singularValues()(0);
}

inline Mat2 inv2(const Mat2& m)
{
    const cplx d = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    Mat2 r;
    r << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
    return r / d;
}

inline Mat2 tracefree(const Mat2& m)
{
    return m - 0.5 * m.trace() * Mat2::Identity();
}

inline Mat2 make2(cplx a, cplx b, cplx c, cplx d)
{
    Mat2 m;
    m << a, b, c, d;
    return m;
}

// Deterministic static partition of [0, n) over the requested thread count.
template <class F>
void parallel_for(int n, int threads, F&& f)
{
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex m;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (int i = t; i < n; i += threads) f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(m);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

inline int default_threads()
{
    const unsigned h = std::thread::hardware_concurrency();
    return h == 0 ? 1 : static_cast<int>(h);
}

}  // namespace trinoid
