#pragma once

#include "loops.hpp"
#include "potentials.hpp"

#include <cmath>

namespace trinoid {

struct OdeOptions {
    double rtol = 1e-10;
    double atol = 1e-12;
    long max_steps = 1000000;
    double pole_min = 1e-3;
    int blocks = 0;  // > 0: relative error per block of the state, by the block's largest entry
};

struct OdeStats {
    long steps = 0;
    long rejected = 0;
    double max_err = 0.0;

    void merge(const OdeStats& o)
    {
        steps += o.steps;
        rejected += o.rejected;
        max_err = std::max(max_err, o.max_err);
    }
};

// Dormand-Prince 5(4) on any Eigen dense state; f(t, y) returns dy/dt.
template <class State, class Rhs>
State dopri5(Rhs&& f, State y, double t0, double t1, const OdeOptions& o, OdeStats* st = nullptr)
{
    constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    constexpr double a21 = 1.0 / 5;
    constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
    constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                     e7 = -1.0 / 40;
    const double span = t1 - t0;
    if (span == 0.0) return y;
    const double dir = span > 0 ? 1.0 : -1.0;
    double h = 0.01 * span;
    double t = t0;
    State k1 = f(t, y);
    long steps = 0;
    while (dir * (t1 - t) > 0.0) {
        if (dir * (t + h - t1) > 0.0) h = t1 - t;
        if (std::abs(h) < 1e-14 * std::abs(span)) throw Error(ErrorCode::StepUnderflow, "step size underflow");
        if (++steps > o.max_steps) throw Error(ErrorCode::StepUnderflow, "step budget exhausted");
        const State k2 = f(t + c2 * h, State(y + h * (a21 * k1)));
        const State k3 = f(t + c3 * h, State(y + h * (a31 * k1 + a32 * k2)));
        const State k4 = f(t + c4 * h, State(y + h * (a41 * k1 + a42 * k2 + a43 * k3)));
        const State k5 = f(t + c5 * h, State(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4)));
        const State k6 = f(t + h, State(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5)));
        const State yn = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        const State k7 = f(t + h, yn);
        const State ev = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        double err = 0.0;
        bool blocked = false;
        if constexpr (State::ColsAtCompileTime == 1) {
            if (o.blocks > 0) {
                blocked = true;
                const Eigen::Index len = y.size() / o.blocks;
                for (int b = 0; b < o.blocks; ++b) {
                    const Eigen::Index at = b * len;
                    const double ymax = std::max(y.segment(at, len).cwiseAbs().maxCoeff(), yn.segment(at, len).cwiseAbs().maxCoeff());
                    err = std::max(err, ev.segment(at, len).cwiseAbs().maxCoeff() / (o.atol + o.rtol * ymax));
                }
            }
        }
        if (!blocked) {
            const auto scale = (o.atol + o.rtol * y.cwiseAbs().cwiseMax(yn.cwiseAbs()).array());
            err = (ev.cwiseAbs().array() / scale).maxCoeff();
        }
        if (!std::isfinite(err)) {
            h *= 0.2;
            if (st) ++st->rejected;
            continue;
        }
        if (err <= 1.0) {
            t += h;
            y = yn;
            k1 = k7;
            if (st) {
                ++st->steps;
                st->max_err = std::max(st->max_err, err);
            }
        } else if (st) {
            ++st->rejected;
        }
        const double fac = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
        h *= err <= 1.0 ? fac : std::min(fac, 1.0);
    }
    return y;
}

// ------------------------------------------------------------------ paths

struct PathPiece {
    bool is_arc = false;
    cplx a = 0.0, b = 0.0;  // segment endpoints
    cplx c = 0.0;           // arc centre
    double r = 0.0, th0 = 0.0, th1 = 0.0;

    cplx point(double t) const
    {
        if (!is_arc) return a + t * (b - a);
        return c + std::polar(r, th0 + t * (th1 - th0));
    }
    cplx velocity(double t) const
    {
        if (!is_arc) return b - a;
        return I1 * (th1 - th0) * std::polar(r, th0 + t * (th1 - th0));
    }
    cplx start() const { return point(0.0); }
    cplx end() const { return point(1.0); }
    PathPiece reversed() const
    {
        PathPiece p = *this;
        std::swap(p.a, p.b);
        std::swap(p.th0, p.th1);
        return p;
    }
    double distance_to(cplx p) const
    {
        if (!is_arc) {
            const cplx d = b - a;
            const double L2 = std::norm(d);
            double t = L2 > 0 ? std::real((p - a) * std::conj(d)) / L2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            return std::abs(p - point(t));
        }
        const double lo = std::min(th0, th1), span = std::abs(th1 - th0);
        double ang = std::arg(p - c) - lo;
        ang -= 2.0 * pi * std::floor(ang / (2.0 * pi));
        if (std::abs(p - c) > 0.0 && (ang <= span || span >= 2.0 * pi)) return std::abs(std::abs(p - c) - r);
        return std::min(std::abs(p - start()), std::abs(p - end()));
    }
};

using Path = std::vector<PathPiece>;

inline PathPiece segment(cplx a, cplx b)
{
    PathPiece p;
    p.a = a;
    p.b = b;
    return p;
}

inline PathPiece arc(cplx c, double r, double th0, double th1)
{
    PathPiece p;
    p.is_arc = true;
    p.c = c;
    p.r = r;
    p.th0 = th0;
    p.th1 = th1;
    return p;
}

inline Path polyline(const std::vector<cplx>& pts)
{
    Path p;
    for (std::size_t i = 1; i < pts.size(); ++i) p.push_back(segment(pts[i - 1], pts[i]));
    return p;
}

inline Path reverse(const Path& p)
{
    Path r;
    for (auto it = p.rbegin(); it != p.rend(); ++it) r.push_back(it->reversed());
    return r;
}

inline Path concat(Path a, const Path& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

inline void check_poles(const Path& path, const std::vector<cplx>& poles, double pmin)
{
    for (const auto& piece : path)
        for (const auto& p : poles)
            if (piece.distance_to(p) < pmin)
                throw Error(ErrorCode::PoleTooClose, "path passes within " + sci(pmin) + " of a pole");
}

// ------------------------------------------------------------ integration

// Phi(end) for d Phi = Phi xi at one lambda sample.
inline Mat2 integrate_sample(const Form& xi, const Path& path, const Mat2& phi0, cplx lambda, const OdeOptions& o = {},
                             OdeStats* st = nullptr)
{
    Mat2 y = phi0;
    for (const auto& piece : path) {
        auto rhs = [&](double t, const Mat2& Y) { return Mat2(Y * xi(piece.point(t), lambda) * piece.velocity(t)); };
        y = dopri5<Mat2>(rhs, y, 0.0, 1.0, o, st);
    }
    return y;
}

inline std::vector<Mat2> integrate_samples(const Form& xi, const std::vector<cplx>& poles, const Path& path,
                                           const std::vector<Mat2>& phi0, const std::vector<cplx>& lambdas,
                                           const OdeOptions& o = {}, int threads = 1, OdeStats* st = nullptr)
{
    check_poles(path, poles, o.pole_min);
    const int n = static_cast<int>(lambdas.size());
    std::vector<Mat2> out(lambdas.size());
    std::vector<OdeStats> per(lambdas.size());
    parallel_for(n, threads, [&](int j) {
        const auto u = static_cast<std::size_t>(j);
        out[u] = integrate_sample(xi, path, phi0[u], lambdas[u], o, &per[u]);
    });
    if (st)
        for (const auto& s : per) st->merge(s);
    return out;
}

inline LaurentLoop integrate(const Form& xi, const std::vector<cplx>& poles, const Path& path, const LaurentLoop& phi0,
                             const OdeOptions& o = {}, int threads = 1, OdeStats* st = nullptr)
{
    const int n = phi0.nsamples();
    auto s = integrate_samples(xi, poles, path, phi0.samples(), unit_samples(n), o, threads, st);
    return LaurentLoop::from_samples(s, n / 2 - 1, phi0.radius());
}

inline LaurentLoop integrate(const PotentialSpec& P, const Path& path, const LaurentLoop& phi0, const OdeOptions& o = {},
                             int threads = 1, OdeStats* st = nullptr)
{
    return integrate(P.form(), P.finite_poles(), path, phi0, o, threads, st);
}

// Frame along paths from a fixed base point.
struct FrameSolution {
    Form xi;
    std::vector<cplx> poles;
    cplx z0 = 0.0;
    LaurentLoop phi0;
    OdeOptions options;
    int threads = 1;
    OdeStats stats;

    LaurentLoop at(const Path& path)
    {
        return integrate(xi, poles, path, phi0, options, threads, &stats);
    }

    // max over lambda samples of |det Phi(end) - det Phi0|
    double det_drift(const Path& path)
    {
        auto phi = at(path);
        double d = 0.0;
        for (int j = 0; j < phi0.nsamples(); ++j)
            d = std::max(d, std::abs(phi.sample(j).determinant() - phi0.sample(j).determinant()));
        return d;
    }
};

// --------------------------------------------------------------- monodromy

struct MonodromySet {
    LaurentLoop M1, M2, M3;
    double product_residual = 0.0;
    cplx z0 = 0.0;
};

// Counterclockwise loop around p based at z0: straight out, full circle, back.
inline Path loop_around(cplx z0, cplx p, double r)
{
    const cplx dir = (z0 - p) / std::abs(z0 - p);
    const cplx q = p + r * dir;
    const double th = std::arg(dir);
    return {segment(z0, q), arc(p, r, th, th + 2.0 * pi), segment(q, z0)};
}

inline double loop_radius(cplx z0, cplx p)
{
    return std::min(std::abs(z0 - p) / 2.0, 0.3);
}

inline Mat2 monodromy_sample(const Form& xi, const Path& loop, const Mat2& phi0, cplx lambda, const OdeOptions& o,
                             OdeStats* st)
{
    return integrate_sample(xi, loop, phi0, lambda, o, st) * inv2(phi0);
}

inline MonodromySet monodromies(const PotentialSpec& P, cplx z0, const LaurentLoop& phi0, const OdeOptions& o = {},
                                int threads = 1, OdeStats* st = nullptr)
{
    const auto xi = P.form();
    const auto poles = P.finite_poles();
    for (const auto& p : poles)
        if (std::abs(z0 - p) < o.pole_min) throw Error(ErrorCode::PoleTooClose, "base point at a pole");
    const Path l1 = loop_around(z0, 0.0, loop_radius(z0, 0.0));
    const Path l2 = loop_around(z0, 1.0, loop_radius(z0, 1.0));
    // simple counterclockwise loop enclosing both finite poles
    const double Rb = std::max({std::abs(z0 - 0.5), 0.5}) + 0.7;
    const cplx q = 0.5 + Rb * (z0 - 0.5) / std::abs(z0 - 0.5);
    const double thq = std::arg(z0 - 0.5);
    const Path big = {segment(z0, q), arc(0.5, Rb, thq, thq + 2.0 * pi), segment(q, z0)};
    check_poles(l1, poles, o.pole_min);
    check_poles(l2, poles, o.pole_min);
    check_poles(big, poles, o.pole_min);

    const int n = phi0.nsamples();
    const auto lam = unit_samples(n);
    std::vector<Mat2> m1(lam.size()), m2(lam.size()), m3(lam.size());
    std::vector<double> res(lam.size());
    std::vector<OdeStats> per(lam.size());
    parallel_for(n, threads, [&](int j) {
        const auto u = static_cast<std::size_t>(j);
        m1[u] = monodromy_sample(xi, l1, phi0.sample(j), lam[u], o, &per[u]);
        m2[u] = monodromy_sample(xi, l2, phi0.sample(j), lam[u], o, &per[u]);
        m3[u] = inv2(m1[u] * m2[u]);
        // the simple big loop traverses the loop around 1 first
        const Mat2 mb = monodromy_sample(xi, big, phi0.sample(j), lam[u], o, &per[u]);
        res[u] = opnorm(mb - m2[u] * m1[u]);
    });
    MonodromySet out;
    out.z0 = z0;
    const int K = n / 2 - 1;
    out.M1 = LaurentLoop::from_samples(m1, K);
    out.M2 = LaurentLoop::from_samples(m2, K);
    out.M3 = LaurentLoop::from_samples(m3, K);
    for (double r : res) out.product_residual = std::max(out.product_residual, r);
    if (st)
        for (const auto& s : per) st->merge(s);
    return out;
}

// ------------------------------------------------------- eigenvalue curves

struct EigenCurves {
    std::vector<cplx> rho1, rho2;
    cplx rho1_at_1 = 0.0, rho2_at_1 = 0.0;
    // derivatives in theta at lambda = 1
    cplx drho1_at_1 = 0.0, drho2_at_1 = 0.0;
    double max_jump = 0.0;
};

inline std::pair<cplx, cplx> eig2(const Mat2& m)
{
    const cplx t = 0.5 * m.trace();
    const cplx d = std::sqrt(t * t - m.determinant());
    return {t + d, t - d};
}

inline cplx spectral_derivative_at_zero(const std::vector<cplx>& v)
{
    const std::size_t n = v.size();
    auto c = fft::forward(v);
    cplx d = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
        const int k = fft::freq(m, n);
        if (2 * std::abs(k) == static_cast<int>(n)) continue;
        d += I1 * static_cast<double>(k) * c[m];
    }
    return d;
}

inline EigenCurves eigenvalue_curves(const std::vector<Mat2>& M)
{
    EigenCurves e;
    const std::size_t n = M.size();
    e.rho1.resize(n);
    e.rho2.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        if (std::abs(M[j].determinant()) < 1e-14) throw Error(ErrorCode::SingularInput, "monodromy not invertible");
        auto [a, b] = eig2(M[j]);
        if (j > 0) {
            const double keep = std::abs(a - e.rho1[j - 1]) + std::abs(b - e.rho2[j - 1]);
            const double swap = std::abs(b - e.rho1[j - 1]) + std::abs(a - e.rho2[j - 1]);
            if (swap < keep) std::swap(a, b);
            const double jump = std::max(std::abs(a - e.rho1[j - 1]), std::abs(b - e.rho2[j - 1]));
            e.max_jump = std::max(e.max_jump, jump);
            if (jump > 0.5) throw Error(ErrorCode::DiscontinuousBranch, "eigenvalue jump " + sci(jump));
        }
        e.rho1[j] = a;
        e.rho2[j] = b;
    }
    e.rho1_at_1 = e.rho1[0];
    e.rho2_at_1 = e.rho2[0];
    e.drho1_at_1 = spectral_derivative_at_zero(e.rho1);
    e.drho2_at_1 = spectral_derivative_at_zero(e.rho2);
    return e;
}

inline EigenCurves eigenvalue_curves(const LaurentLoop& M) { return eigenvalue_curves(M.samples()); }

// max over samples of the distance between {rho1, rho2} and {e^{2 pi i nu}, e^{-2 pi i nu}}
inline double eigenvalue_error(const EigenCurves& e, const std::vector<cplx>& nu)
{
    double err = 0.0;
    for (std::size_t j = 0; j < nu.size(); ++j) {
        const cplx a = std::exp(2.0 * pi * I1 * nu[j]), b = 1.0 / a;
        const double d1 = std::max(std::abs(e.rho1[j] - a), std::abs(e.rho2[j] - b));
        const double d2 = std::max(std::abs(e.rho1[j] - b), std::abs(e.rho2[j] - a));
        err = std::max(err, std::min(d1, d2));
    }
    return err;
}

}  // namespace trinoid
