#pragma once

#include "core.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <string>

namespace trinoid {

// ---------------------------------------------------------------- weights

inline double necksize_from_weight(double w, double H = 1.0)
{
    const double h = 1.0 / H;
    return 0.5 * (h - std::sqrt(h * h - w));
}

inline double weight_from_necksize(double n, double H = 1.0)
{
    return 4.0 * n * (1.0 / H - n);
}

struct Weights {
    std::array<double, 3> w{};
    std::array<double, 3> n{};
    double H = 1.0;

    static Weights from_weights(double w1, double w2, double w3, double H = 1.0)
    {
        Weights W;
        W.w = {w1, w2, w3};
        W.H = H;
        for (int k = 0; k < 3; ++k) {
            const double h = 1.0 / H;
            W.n[k] = W.w[k] <= h * h ? necksize_from_weight(W.w[k], H) : std::nan("");
        }
        return W;
    }

    static Weights from_necksizes(double n1, double n2, double n3, double H = 1.0)
    {
        Weights W;
        W.n = {n1, n2, n3};
        W.H = H;
        for (int k = 0; k < 3; ++k) W.w[k] = weight_from_necksize(W.n[k], H);
        return W;
    }

    static Weights equal(double w, double H = 1.0) { return from_weights(w, w, w, H); }

    // cyclic relabelling that puts end e (0, 1, 2 for z = 0, 1, inf) first
    Weights for_end(int e) const
    {
        if (e == 1) return from_weights(w[1], w[0], w[2], H);
        if (e == 2) return from_weights(w[2], w[1], w[0], H);
        return *this;
    }

    std::string sign_class() const
    {
        std::string s = "[";
        int plus = 0;
        for (double v : w) plus += v > 0 ? 1 : 0;
        for (int k = 0; k < 3; ++k) s += k < plus ? '+' : '-';
        return s + "]";
    }
};

// ------------------------------------------------------ Delaunay residues

struct DelaunayResidue {
    double w = 0.0, H = 1.0;
    double a = 0.0, b = 0.0, c = 0.0;

    Mat2 at(cplx lambda) const
    {
        return make2(c, a / lambda + b, b + a * lambda, -c);
    }
    cplx p(cplx lambda) const { return a / lambda + b; }
};

inline DelaunayResidue delaunay_residue(double w, double H = 1.0)
{
    const double wn = w * H * H;
    if (!(wn <= 1.0) || w == 0.0 || !std::isfinite(w))
        throw Error(ErrorCode::WeightOutOfRange, "Delaunay weight must lie in (-inf, 1/H^2] \\ {0}");
    DelaunayResidue r;
    r.w = w;
    r.H = H;
    const double s = std::sqrt(1.0 - wn);
    r.a = 0.25 * (1.0 + s);
    r.b = 0.25 * (1.0 - s);
    return r;
}

// eigenvalue of the Delaunay residue; principal square root, which is the
// branch continuous along the unit circle from mu(1) = 1/2
inline cplx mu_w(double w, cplx lambda)
{
    if (lambda == cplx(0.0)) throw Error(ErrorCode::InvalidArgument, "mu_w at lambda = 0");
    const cplx x = 1.0 + w * (lambda - 1.0) * (lambda - 1.0) / (4.0 * lambda);
    return 0.5 * std::sqrt(x);
}

inline cplx nu_w(double w, cplx lambda) { return 0.5 - mu_w(w, lambda); }

// --------------------------------------------------------- admissibility

struct AdmissibilityReport {
    bool neck_ok = true;
    bool weight_ok = true;
    bool range_ok = true;
    bool tetrahedron_ok = true;
    bool cylinder_end = false;
    std::vector<std::string> failures;
    std::vector<double> tetra_margin;

    bool admissible() const { return neck_ok && weight_ok && range_ok && tetrahedron_ok; }
};

// representative of nu in [0, 1/2] under nu -> nu + 1, nu -> -nu
inline double reduce_nu(double nu)
{
    const double r = nu - std::round(nu);
    return std::abs(r);
}

// signed distance-like margin to the boundary of the closed tetrahedron T0
inline double tetra_margin(double a, double b, double c)
{
    return std::min({1.0 - a - b - c, b + c - a, a + c - b, a + b - c});
}

inline AdmissibilityReport check_admissible(const Weights& W, int nsamples = 128)
{
    constexpr double slack = 1e-9;
    AdmissibilityReport r;
    const auto& n = W.n;
    const auto& w = W.w;
    const double h = 1.0 / W.H;
    for (int k = 0; k < 3; ++k) {
        if (!std::isfinite(w[k]) || w[k] == 0.0 || w[k] > h * h + slack || !std::isfinite(n[k])) {
            r.range_ok = false;
            r.failures.push_back("weight w" + std::to_string(k + 1) + " outside (-inf, 1] \\ {0}");
        } else if (std::abs(w[k] - h * h) <= slack) {
            r.cylinder_end = true;
        }
    }
    if (!r.range_ok) {
        r.neck_ok = r.weight_ok = r.tetrahedron_ok = false;
        return r;
    }
    if (std::abs(n[0]) + std::abs(n[1]) + std::abs(n[2]) > h + slack) {
        r.neck_ok = false;
        r.failures.push_back("necksize inequality |n1|+|n2|+|n3| <= 1 violated");
    }
    const char* idx[3][3] = {{"1", "2", "3"}, {"2", "1", "3"}, {"3", "1", "2"}};
    for (int i = 0; i < 3; ++i) {
        const int j = (i + 1) % 3, k = (i + 2) % 3;
        if (std::abs(n[i]) > std::abs(n[j]) + std::abs(n[k]) + slack) {
            r.neck_ok = false;
            r.failures.push_back(std::string("necksize inequality |n") + idx[i][0] + "| <= |n" + idx[i][1] + "|+|n" + idx[i][2] +
                                 "| violated");
        }
        if (std::abs(w[i]) > std::abs(w[j]) + std::abs(w[k]) + slack) {
            r.weight_ok = false;
            r.failures.push_back(std::string("weight inequality |w") + idx[i][0] + "| <= |w" + idx[i][1] + "|+|w" + idx[i][2] +
                                 "| violated");
        }
    }
    const auto lam = unit_samples(nsamples);
    r.tetra_margin.resize(lam.size());
    for (std::size_t j = 0; j < lam.size(); ++j) {
        std::array<double, 3> v{};
        for (int k = 0; k < 3; ++k) v[k] = reduce_nu(nu_w(w[k] * W.H * W.H, lam[j]).real());
        r.tetra_margin[j] = tetra_margin(v[0], v[1], v[2]);
        if (r.tetra_margin[j] < -slack) r.tetrahedron_ok = false;
    }
    if (!r.tetrahedron_ok) r.failures.push_back("eigenvalue triple leaves the tetrahedral region on the unit circle");
    return r;
}

// ------------------------------------------------------------- potentials

// A 1-form given by its dz-coefficient as a function of (z, lambda).
using Form = std::function<Mat2(cplx, cplx)>;

enum class PotentialKind { Delaunay, Trinoid };

struct PotentialSpec {
    PotentialKind kind = PotentialKind::Trinoid;
    Weights weights;
    DelaunayResidue residue;

    // coefficient q of the quadratic differential Q_W = q dz^2
    cplx q(cplx z) const
    {
        const double h2 = weights.H * weights.H;
        const double w1 = weights.w[0] * h2, w2 = weights.w[1] * h2, w3 = weights.w[2] * h2;
        return (w3 * z * z - (w1 - w2 + w3) * z + w1) / (16.0 * z * z * (z - 1.0) * (z - 1.0));
    }

    Mat2 operator()(cplx z, cplx lambda) const
    {
        if (kind == PotentialKind::Delaunay) return residue.at(lambda) / z;
        return make2(0.0, 1.0 / lambda, (lambda - 1.0) * (lambda - 1.0) * q(z), 0.0);
    }

    // Laurent coefficients in lambda, k = -1 .. 2
    std::array<Mat2, 4> laurent(cplx z) const
    {
        std::array<Mat2, 4> c{Mat2::Zero(), Mat2::Zero(), Mat2::Zero(), Mat2::Zero()};
        if (kind == PotentialKind::Delaunay) {
            c[0](0, 1) = residue.a / z;
            c[1] = make2(residue.c, residue.b, residue.b, -residue.c) / z;
            c[2](1, 0) = residue.a / z;
            return c;
        }
        const cplx qq = q(z);
        c[0](0, 1) = 1.0;
        c[1](1, 0) = qq;
        c[2](1, 0) = -2.0 * qq;
        c[3](1, 0) = qq;
        return c;
    }

    std::vector<cplx> finite_poles() const
    {
        if (kind == PotentialKind::Delaunay) return {0.0};
        return {0.0, 1.0};
    }

    Form form() const
    {
        PotentialSpec self = *this;
        return [self](cplx z, cplx l) { return self(z, l); };
    }
};

inline PotentialSpec delaunay_potential(double w, double H = 1.0)
{
    PotentialSpec p;
    p.kind = PotentialKind::Delaunay;
    p.residue = delaunay_residue(w, H);
    p.weights = Weights::equal(w, H);
    return p;
}

inline PotentialSpec trinoid_potential(const Weights& W, bool allow_cylinder_end = false)
{
    auto rep = check_admissible(W);
    bool ok = rep.admissible() && (allow_cylinder_end || !rep.cylinder_end);
    if (!ok) {
        std::string msg = rep.failures.empty() ? "weight w = 1 (cylinder end) requires the experimental flag" : rep.failures.front();
        throw Error(ErrorCode::InvalidWeights, msg);
    }
    PotentialSpec p;
    p.kind = PotentialKind::Trinoid;
    p.weights = W;
    return p;
}

// quadratic residue of Q_W at end e (0, 1, 2 for z = 0, 1, inf), by a
// trapezoid contour integral on a small circle
inline cplx quadratic_residue(const PotentialSpec& P, int e, double r = 1e-2, int m = 64)
{
    cplx acc = 0.0;
    for (int j = 0; j < m; ++j) {
        const cplx u = std::polar(r, 2.0 * pi * j / m);
        if (e == 0) acc += u * u * P.q(u);
        else if (e == 1) acc += u * u * P.q(1.0 + u);
        else acc += P.q(1.0 / u) / (u * u);
    }
    return acc / static_cast<double>(m);
}

// ------------------------------------------------------------------ gauges

struct GaugeMap {
    std::function<Mat2(cplx, cplx)> g;
    std::function<Mat2(cplx, cplx)> dg;  // derivative in z
    cplx center = 0.0;
    double rmin = 0.0;
    double rmax = std::numeric_limits<double>::infinity();
};

inline GaugeMap identity_gauge()
{
    return {[](cplx, cplx) { return Mat2::Identity(); }, [](cplx, cplx) { return Mat2::Zero(); }};
}

inline GaugeMap constant_gauge(const Mat2& m)
{
    return {[m](cplx, cplx) { return m; }, [](cplx, cplx) { return Mat2::Zero(); }};
}

inline GaugeMap compose(const GaugeMap& a, const GaugeMap& b)
{
    GaugeMap c;
    c.g = [a, b](cplx z, cplx l) { return Mat2(a.g(z, l) * b.g(z, l)); };
    c.dg = [a, b](cplx z, cplx l) { return Mat2(a.dg(z, l) * b.g(z, l) + a.g(z, l) * b.dg(z, l)); };
    c.center = a.center;
    c.rmin = std::max(a.rmin, b.rmin);
    c.rmax = std::min(a.rmax, b.rmax);
    return c;
}

inline Mat2 apply_gauge_at(const Form& xi, const GaugeMap& g, cplx z, cplx lambda)
{
    const Mat2 G = g.g(z, lambda);
    const cplx d = G.determinant();
    if (std::abs(d) < 1e-12) throw Error(ErrorCode::SingularGauge, "det g below 1e-12");
    const Mat2 Gi = inv2(G);
    return Gi * xi(z, lambda) * G + Gi * g.dg(z, lambda);
}

inline Form apply_gauge(const Form& xi, const GaugeMap& g)
{
    return [xi, g](cplx z, cplx l) { return apply_gauge_at(xi, g, z, l); };
}

// Local end coordinate s_e: z, 1 - z, 1/z.
inline cplx end_coordinate(int e, cplx z)
{
    if (e == 1) return 1.0 - z;
    if (e == 2) return 1.0 / z;
    return z;
}

inline cplx end_coordinate_inverse(int e, cplx s)
{
    if (e == 1) return 1.0 - s;
    if (e == 2) return 1.0 / s;
    return s;
}

inline cplx end_coordinate_dz_ds(int e, cplx s)
{
    if (e == 1) return -1.0;
    if (e == 2) return -1.0 / (s * s);
    return 1.0;
}

// Gauge M_e(s) taking xi_W(z) dz to xi_{W_e}(s) ds, where W_e lists the
// weight of end e first.
inline Mat2 mobius_gauge(int e, cplx s, cplx lambda)
{
    if (e == 1) return make2(1.0, 0.0, 0.0, -1.0);
    if (e == 2) return make2(1.0 / s, 0.0, -lambda, -s);
    return Mat2::Identity();
}

inline Mat2 mobius_gauge_ds(int e, cplx s, cplx)
{
    if (e == 2) return make2(-1.0 / (s * s), 0.0, 0.0, -1.0);
    return Mat2::Zero();
}

struct EndGauge {
    int end = 0;
    Weights local_weights;  // weights relabelled with end e first
    DelaunayResidue residue;
    double k = 0.0;
    GaugeMap local;   // g1 g2 g3 in the end coordinate s
    GaugeMap global;  // M_e g1 g2 g3 as a function of z
    cplx z_of_ztilde(cplx zt) const { return zt - k * zt * zt; }
};

inline Mat2 end_g2(const DelaunayResidue& r, cplx lambda)
{
    return make2(1.0, 0.0, -0.5 * lambda, lambda * r.p(lambda));
}

inline EndGauge end_gauge(const Weights& W, int e)
{
    auto rep = check_admissible(W);
    if (!rep.range_ok || !rep.neck_ok || !rep.weight_ok)
        throw Error(ErrorCode::InvalidWeights, rep.failures.empty() ? "invalid weights" : rep.failures.front());
    EndGauge out;
    out.end = e;
    out.local_weights = W.for_end(e);
    const auto& lw = out.local_weights.w;
    out.residue = delaunay_residue(lw[0], W.H);
    out.k = (lw[0] + lw[1] - lw[2]) / (2.0 * lw[0]);
    const DelaunayResidue r = out.residue;
    const double k = out.k;
    auto g123 = [r, k](cplx s, cplx l) {
        const cplx sq = std::sqrt(s);
        const Mat2 g1 = make2(sq, 0.0, 0.0, 1.0 / sq);
        const cplx p = r.p(l);
        const Mat2 g3 = Mat2::Identity() + 0.5 * k * make2(-1.0, 0.0, 1.0 / p, 1.0) * s;
        return Mat2(g1 * end_g2(r, l) * g3);
    };
    auto dg123 = [r, k](cplx s, cplx l) {
        const cplx sq = std::sqrt(s);
        const Mat2 g1 = make2(sq, 0.0, 0.0, 1.0 / sq);
        const Mat2 dg1 = make2(0.5 / sq, 0.0, 0.0, -0.5 / (s * sq));
        const cplx p = r.p(l);
        const Mat2 n3 = 0.5 * k * make2(-1.0, 0.0, 1.0 / p, 1.0);
        const Mat2 g3 = Mat2::Identity() + n3 * s;
        const Mat2 g2 = end_g2(r, l);
        return Mat2(dg1 * g2 * g3 + g1 * g2 * n3);
    };
    out.local.g = g123;
    out.local.dg = dg123;
    out.local.rmin = 0.0;
    out.local.rmax = 0.5;
    out.global.g = [g123, e](cplx z, cplx l) {
        const cplx s = end_coordinate(e, z);
        return Mat2(mobius_gauge(e, s, l) * g123(s, l));
    };
    out.global.dg = [g123, dg123, e](cplx z, cplx l) {
        const cplx s = end_coordinate(e, z);
        const cplx dsdz = 1.0 / end_coordinate_dz_ds(e, s);
        return Mat2((mobius_gauge_ds(e, s, l) * g123(s, l) + mobius_gauge(e, s, l) * dg123(s, l)) * dsdz);
    };
    out.global.center = end_coordinate_inverse(e, 0.0 + (e == 2 ? 1e300 : 0.0));
    return out;
}

// General constant-term gauge I + g1 z removing xi_0 from
// xi_{-1} dz/z + xi_0 dz + O(z); returns g1 and sets k.
inline Mat2 constant_term_gauge(const Mat2& xim1, const Mat2& xi0, cplx mu, cplx k)
{
    const cplx u = 4.0 * mu * mu - 1.0;
    const Mat2 vI = xim1 * xi0 + xi0 * xim1;
    const cplx v = 0.5 * vI.trace();
    return (k - 2.0 * v / u) * xim1 + (xi0 - (xim1 * xi0 - xi0 * xim1)) / u;
}

// Entries of a potential [[c, a/lambda], [b, -c]] omega with derivatives
// needed to build the off-diagonal gauge.
struct GeneralPotential {
    std::function<cplx(cplx, cplx)> a, b, c;
    std::function<cplx(cplx, cplx)> a_z, a_zz, c_z;
    std::function<cplx(cplx)> omega, omega_z;

    Mat2 operator()(cplx z, cplx l) const
    {
        return make2(c(z, l), a(z, l) / l, b(z, l), -c(z, l)) * omega(z);
    }
};

inline GaugeMap offdiag_gauge(const GeneralPotential& P)
{
    auto check = [P](cplx z, cplx l) {
        const cplx a = P.a(z, l);
        if (std::abs(a) < 1e-14) throw Error(ErrorCode::ZeroUpperEntry, "upper-right entry vanishes");
        return a;
    };
    GaugeMap g;
    g.g = [P, check](cplx z, cplx l) {
        const cplx a = check(z, l);
        const cplx ra = std::sqrt(a);
        const cplx dinv = -0.5 * P.a_z(z, l) / (a * ra);  // d(a^{-1/2})/dz
        return make2(ra, 0.0, l * (dinv / P.omega(z) - P.c(z, l) / ra), 1.0 / ra);
    };
    g.dg = [P, check](cplx z, cplx l) {
        const cplx a = check(z, l);
        const cplx ra = std::sqrt(a);
        const cplx az = P.a_z(z, l), azz = P.a_zz(z, l);
        const cplx om = P.omega(z), omz = P.omega_z(z);
        const cplx c = P.c(z, l), cz = P.c_z(z, l);
        const cplx dinv = -0.5 * az / (a * ra);
        const cplx ddinv = 0.75 * az * az / (a * a * ra) - 0.5 * azz / (a * ra);
        const cplx d_sqrt = 0.5 * az / ra;
        const cplx lower = l * ((ddinv * om - dinv * omz) / (om * om) - cz / ra - c * dinv);
        return make2(d_sqrt, 0.0, lower, dinv);
    };
    return g;
}

}  // namespace trinoid
