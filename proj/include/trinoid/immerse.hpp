#pragma once

#include "factorize.hpp"
#include "holonomy.hpp"
#include "potentials.hpp"
#include "unitarize.hpp"

#include <array>
#include <chrono>
#include <map>

namespace trinoid {

// ------------------------------------------------------------- su2 and R^3

inline Mat2 su2_basis(int k)
{
    if (k == 0) return make2(0.0, I1, I1, 0.0);
    if (k == 1) return make2(0.0, -1.0, 1.0, 0.0);
    return make2(I1, 0.0, 0.0, -I1);
}

inline Vec3 su2_to_r3(const Mat2& S)
{
    return {(0.5 * (S(0, 1) + S(1, 0))).imag(), (0.5 * (S(1, 0) - S(0, 1))).real(), S(0, 0).imag()};
}

inline Mat2 r3_to_su2(const Vec3& x)
{
    return x(0) * su2_basis(0) + x(1) * su2_basis(1) + x(2) * su2_basis(2);
}

struct ImmersionParams {
    double H = 1.0;
    cplx lambda0 = 1.0;
    int nsamples = 128;
    int band = 63;
    double tolerance = 1e-8;
    double ridge = -1.0;
    int threads = 1;
    OdeOptions ode{};

    void validate() const
    {
        if (std::abs(std::abs(lambda0) - 1.0) > 1e-12) throw Error(ErrorCode::InvalidArgument, "|lambda0| must be 1");
        if (H == 0.0 || !std::isfinite(H)) throw Error(ErrorCode::InvalidArgument, "H must be nonzero");
        if (nsamples < 2 * band + 2) throw Error(ErrorCode::BandMismatch, "nsamples must be at least 2K+2");
    }
};

struct SymPoint {
    Vec3 x = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();  // F e3 F^{-1} at lambda0
    double su2_residual = 0.0;
};

// -(2/H) tracefree(F' F^{-1}) at lambda0 from samples of F
inline SymPoint sym_from_frame(const std::vector<Mat2>& F, cplx lambda0, double H)
{
    const std::size_t n = F.size();
    const auto c = fft::forward(F);
    const double th = std::arg(lambda0);
    Mat2 F0 = Mat2::Zero(), F1 = Mat2::Zero();
    for (std::size_t m = 0; m < n; ++m) {
        const int k = fft::freq(m, n);
        if (2 * std::abs(k) == static_cast<int>(n)) continue;
        const cplx lk = std::polar(1.0, k * th);
        F0 += c[m] * lk;
        F1 += c[m] * (I1 * static_cast<double>(k) * lk);
    }
    const Mat2 S = -(2.0 / H) * tracefree(F1 * inv2(F0));
    SymPoint p;
    p.x = su2_to_r3(0.5 * (S - S.adjoint()));
    p.su2_residual = opnorm(0.5 * (S + S.adjoint()));
    const Mat2 Nm = F0 * su2_basis(2) * inv2(F0);
    p.normal = su2_to_r3(0.5 * (Nm - Nm.adjoint())).normalized();
    return p;
}

struct SymResult {
    SymPoint point;
    IwasawaResult factors;
};

inline SymResult sym_point(const LaurentLoop& Phi, const ImmersionParams& prm)
{
    prm.validate();
    SymResult r;
    r.factors = iwasawa(Phi, prm.ridge);
    r.point = sym_from_frame(r.factors.F.samples(), prm.lambda0, prm.H);
    return r;
}

// exp of a trace-free 2x2 matrix
inline Mat2 expm_tracefree(const Mat2& M)
{
    const cplx d = std::sqrt(-M.determinant());
    const cplx sh = std::abs(d) < 1e-8 ? 1.0 + d * d / 6.0 : std::sinh(d) / d;
    return std::cosh(d) * Mat2::Identity() + sh * M;
}

// ---------------------------------------------------------- factor flow

// eta_hat(w) = Ahat + s tau(w) A1 per lambda sample, s = e^w. Ahat is the
// Delaunay potential the flow tends to as s -> 0.
struct FlowPotential {
    std::vector<Mat2> Ahat, A1;
    std::function<cplx(cplx)> tau;
    double alpha = 0.0;  // coefficient of lambda^{-1} E12
};

inline FlowPotential delaunay_flow_potential(const DelaunayResidue& r, int n)
{
    FlowPotential P;
    const auto lam = unit_samples(n);
    for (const auto& l : lam) {
        P.Ahat.push_back(r.at(l));
        P.A1.push_back(Mat2::Zero());
    }
    P.alpha = r.a;
    return P;
}

// s^2 q_W(s) for the weights relabelled with end e first
inline cplx s2q(const Weights& We, cplx s)
{
    const double h2 = We.H * We.H;
    const double w1 = We.w[0] * h2, w2 = We.w[1] * h2, w3 = We.w[2] * h2;
    return (w3 * s * s - (w1 - w2 + w3) * s + w1) / (16.0 * (s - 1.0) * (s - 1.0));
}

// xi_{W_e}(s) ds gauged by diag(s^{1/2}, s^{-1/2}) g2, written in w = log s
inline FlowPotential end_flow_potential(const Weights& W, int e, int n)
{
    FlowPotential P;
    const Weights We = W.for_end(e);
    const auto r = delaunay_residue(We.w[0], We.H);
    const double h2 = We.H * We.H;
    const double w1 = We.w[0] * h2, w2 = We.w[1] * h2, w3 = We.w[2] * h2;
    const auto lam = unit_samples(n);
    for (const auto& l : lam) {
        const Mat2 g2 = end_g2(r, l);
        const Mat2 gi = inv2(g2);
        const Mat2 A1 = gi * make2(0.0, 0.0, (l - 1.0) * (l - 1.0), 0.0) * g2;
        P.Ahat.push_back(gi * make2(0.5, 1.0 / l, 0.0, -0.5) * g2 + (w1 / 16.0) * A1);
        P.A1.push_back(A1);
    }
    // (s^2 q(s) - s^2 q(0)) / s
    P.tau = [=](cplx w) {
        const cplx s = std::exp(w);
        return ((w3 - w1) * s + (w1 + w2 - w3)) / (16.0 * (s - 1.0) * (s - 1.0));
    };
    P.alpha = r.a;
    return P;
}

// F B = Phi; M = B Ahat B^{-1} and N = s B A1 B^{-1} are carried along
// because B itself grows without bound into an end.
struct FactorFrame {
    std::vector<Mat2> F, B, M, N;
};

inline FactorFrame make_frame(std::vector<Mat2> F, std::vector<Mat2> B, const FlowPotential& P, cplx w)
{
    FactorFrame f{std::move(F), std::move(B), {}, {}};
    const cplx s = std::exp(w);
    for (std::size_t j = 0; j < f.B.size(); ++j) {
        const Mat2 Bi = inv2(f.B[j]);
        f.M.push_back(f.B[j] * P.Ahat[j] * Bi);
        f.N.push_back(s * f.B[j] * P.A1[j] * Bi);
    }
    return f;
}

inline FactorFrame identity_frame(const FlowPotential& P, cplx w = 0.0)
{
    const std::vector<Mat2> I(P.Ahat.size(), Mat2::Identity());
    return make_frame(I, I, P, w);
}

// Split eta = u + p with u in the unitary loop algebra and p a plus loop
// whose constant term is upper triangular with real diagonal.
inline double split_unitary_plus(const std::vector<Mat2>& eta, std::vector<Mat2>& u, std::vector<Mat2>& p, int keep)
{
    const std::size_t n = eta.size();
    const auto c = fft::forward(eta);
    std::vector<Mat2> uc(n, Mat2::Zero()), pc(n, Mat2::Zero());
    const Mat2& em1 = c[n - 1];
    uc[n - 1] = em1;
    uc[1] = -em1.adjoint();
    pc[1] = c[1] - uc[1];
    for (std::size_t k = 2; k < static_cast<std::size_t>(keep); ++k) pc[k] = c[k];
    const Mat2& e = c[0];
    const double r = e(0, 0).real(), al = e(0, 0).imag();
    const cplx beta = -std::conj(e(1, 0));
    uc[0] = make2(I1 * al, beta, -std::conj(beta), -I1 * al);
    pc[0] = make2(r, e(0, 1) + std::conj(e(1, 0)), 0.0, -r);
    double neg = 0.0;
    for (std::size_t m = n / 2; m + 1 < n; ++m) neg = std::max(neg, c[m].cwiseAbs().maxCoeff());
    u = fft::inverse(uc);
    p = fft::inverse(pc);
    return neg;
}

inline Eigen::VectorXcd pack(const FactorFrame& f)
{
    const std::size_t n = f.F.size();
    Eigen::VectorXcd y(static_cast<Eigen::Index>(16 * n));
    for (std::size_t j = 0; j < n; ++j) {
        Eigen::Map<Mat2>(y.data() + 4 * j) = f.F[j];
        Eigen::Map<Mat2>(y.data() + 4 * (n + j)) = f.B[j];
        Eigen::Map<Mat2>(y.data() + 4 * (2 * n + j)) = f.M[j];
        Eigen::Map<Mat2>(y.data() + 4 * (3 * n + j)) = f.N[j];
    }
    return y;
}

inline FactorFrame unpack(const Eigen::VectorXcd& y)
{
    const std::size_t n = static_cast<std::size_t>(y.size()) / 16;
    FactorFrame f;
    for (auto* v : {&f.F, &f.B, &f.M, &f.N}) v->resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        f.F[j] = Eigen::Map<const Mat2>(y.data() + 4 * j);
        f.B[j] = Eigen::Map<const Mat2>(y.data() + 4 * (n + j));
        f.M[j] = Eigen::Map<const Mat2>(y.data() + 4 * (2 * n + j));
        f.N[j] = Eigen::Map<const Mat2>(y.data() + 4 * (3 * n + j));
    }
    return f;
}

// zero the Fourier modes below kmin and the Nyquist mode
inline void drop_below(std::vector<Mat2>& X, int kmin)
{
    const std::size_t n = X.size();
    thread_local std::vector<Mat2> c;
    fft::transform_entries(X, c, true);
    for (std::size_t m = 0; m < n; ++m) {
        const int k = fft::freq(m, n);
        if (k < kmin || 2 * std::abs(k) == static_cast<int>(n)) c[m].setZero();
    }
    fft::transform_entries(c, X, false);
}

// Newton step restoring F* F = I with Phi = F B fixed; returns the defect
// before the step.
inline double polish(FactorFrame& f, int keep)
{
    const std::size_t n = f.F.size();
    std::vector<Mat2> Hm(n);
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        Hm[j] = f.F[j].adjoint() * f.F[j] - Mat2::Identity();
        d = std::max(d, Hm[j].cwiseAbs().maxCoeff());
    }
    const auto Y = detail::plus_half(Hm, keep);
    for (std::size_t j = 0; j < n; ++j) {
        const Mat2 G = Mat2::Identity() + Y[j];
        const Mat2 Gi = inv2(G);
        f.B[j] = G * f.B[j];
        f.M[j] = G * f.M[j] * Gi;
        f.N[j] = G * f.N[j] * Gi;
        f.F[j] = f.F[j] * Gi;
    }
    detail::project_plus(f.B, keep);
    drop_below(f.M, -1);
    drop_below(f.N, 0);
    return d;
}

// Carry the frame along the straight segment w0 -> w1 of d Phi = Phi eta_hat dw.
inline FactorFrame flow(const FlowPotential& P, const FactorFrame& start, cplx w0, cplx w1, const OdeOptions& o,
                        int keep = 0, OdeStats* st = nullptr)
{
    const std::size_t n = start.F.size();
    if (keep <= 0) keep = static_cast<int>(n / 2);
    const cplx dw = w1 - w0;
    std::vector<Mat2> eta(n), u, p, dB(n), dM(n), dN(n);
    auto rhs = [&](double t, const Eigen::VectorXcd& y) {
        const cplx tau = P.tau ? P.tau(w0 + t * dw) : cplx(0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const Mat2 M = Eigen::Map<const Mat2>(y.data() + 4 * (2 * n + j));
            const Mat2 N = Eigen::Map<const Mat2>(y.data() + 4 * (3 * n + j));
            eta[j] = (M + tau * N) * dw;
        }
        split_unitary_plus(eta, u, p, keep);
        Eigen::VectorXcd dy(y.size());
        for (std::size_t j = 0; j < n; ++j) {
            const Mat2 F = Eigen::Map<const Mat2>(y.data() + 4 * j);
            const Mat2 B = Eigen::Map<const Mat2>(y.data() + 4 * (n + j));
            const Mat2 M = Eigen::Map<const Mat2>(y.data() + 4 * (2 * n + j));
            const Mat2 N = Eigen::Map<const Mat2>(y.data() + 4 * (3 * n + j));
            Eigen::Map<Mat2>(dy.data() + 4 * j) = F * u[j];
            dB[j] = p[j] * B;
            dM[j] = p[j] * M - M * p[j];
            dN[j] = dw * N + p[j] * N - N * p[j];
        }
        // products alias into modes B, M and N cannot have
        drop_below(dB, 0);
        drop_below(dM, -1);
        drop_below(dN, 0);
        for (std::size_t j = 0; j < n; ++j) {
            Eigen::Map<Mat2>(dy.data() + 4 * (n + j)) = dB[j];
            Eigen::Map<Mat2>(dy.data() + 4 * (2 * n + j)) = dM[j];
            Eigen::Map<Mat2>(dy.data() + 4 * (3 * n + j)) = dN[j];
        }
        return dy;
    };
    OdeOptions ob = o;
    ob.blocks = 4;
    auto y = dopri5<Eigen::VectorXcd>(rhs, pack(start), 0.0, 1.0, ob, st);
    auto f = unpack(y);
    polish(f, keep);
    return f;
}

inline double unitarity_defect(const std::vector<Mat2>& F)
{
    double d = 0.0;
    for (const auto& m : F) d = std::max(d, opnorm(m.adjoint() * m - Mat2::Identity()));
    return d;
}

// R = |B11 / B22| at lambda = 0
inline double balance_ratio(const std::vector<Mat2>& B)
{
    Mat2 b0 = Mat2::Zero();
    for (const auto& b : B) b0 += b;
    b0 /= static_cast<double>(B.size());
    return std::abs(b0(0, 0) / b0(1, 1));
}

// ---------------------------------------------------------------- meshes

struct SurfaceMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 4>> quads;
    std::vector<double> residual;  // factorization residual per vertex
    std::vector<double> metric;    // predicted conformal factor in the chart coordinate w
    std::vector<Vec3> normals;
    // domain bookkeeping
    std::vector<cplx> z, w;
    std::vector<int> chart, ring;
    std::vector<double> ell, phi;
    std::vector<std::pair<int, int>> duplicates;
    double closure_residual = 0.0;  // max duplicate mismatch / bounding-box diagonal

    int add_vertex(const Vec3& x, const Vec3& nrm, double res, double met, cplx zz, cplx ww, int ch, int rg, double l,
                   double ph)
    {
        vertices.push_back(x);
        normals.push_back(nrm);
        residual.push_back(res);
        metric.push_back(met);
        z.push_back(zz);
        w.push_back(ww);
        chart.push_back(ch);
        ring.push_back(rg);
        ell.push_back(l);
        phi.push_back(ph);
        return static_cast<int>(vertices.size()) - 1;
    }

    double bbox_diagonal() const
    {
        if (vertices.empty()) return 0.0;
        Vec3 lo = vertices[0], hi = vertices[0];
        for (const auto& v : vertices) {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
        return (hi - lo).norm();
    }

    // area-weighted quad normals, for meshes without frame normals
    void compute_normals()
    {
        normals.assign(vertices.size(), Vec3::Zero());
        for (const auto& q : quads) {
            const Vec3 d1 = vertices[static_cast<std::size_t>(q[2])] - vertices[static_cast<std::size_t>(q[0])];
            const Vec3 d2 = vertices[static_cast<std::size_t>(q[3])] - vertices[static_cast<std::size_t>(q[1])];
            const Vec3 nrm = d1.cross(d2);
            for (int v : q) normals[static_cast<std::size_t>(v)] += nrm;
        }
        for (auto& nrm : normals) {
            const double l = nrm.norm();
            if (l > 0) nrm /= l;
        }
    }

    double measure_closure()
    {
        double m = 0.0;
        for (const auto& [a, b] : duplicates)
            m = std::max(m, (vertices[static_cast<std::size_t>(a)] - vertices[static_cast<std::size_t>(b)]).norm());
        const double d = bbox_diagonal();
        closure_residual = d > 0 ? m / d : m;
        return closure_residual;
    }

    bool has_nan() const
    {
        for (const auto& v : vertices)
            if (!v.allFinite()) return true;
        return false;
    }
};

// ------------------------------------------------------ Delaunay surfaces

struct DelaunaySample {
    double x;
    Vec3 center, point;
    double radius;
};

// Ring data of the Delaunay surface: the circle through y = 0, pi/2, pi, 3pi/2.
struct DelaunayRinger {
    FlowPotential P;
    std::array<std::vector<Mat2>, 4> rot;
    ImmersionParams prm;

    DelaunayRinger(const DelaunayResidue& r, const ImmersionParams& p) : P(delaunay_flow_potential(r, p.nsamples)), prm(p)
    {
        for (int q = 0; q < 4; ++q)
            for (const auto& A : P.Ahat) rot[static_cast<std::size_t>(q)].push_back(expm_tracefree(I1 * (q * pi / 2) * A));
    }

    DelaunaySample sample(const FactorFrame& f, double x) const
    {
        std::array<Vec3, 4> pts;
        for (std::size_t q = 0; q < 4; ++q) pts[q] = sym_from_frame(pointwise_product(rot[q], f.F), prm.lambda0, prm.H).x;
        const Vec3 c = 0.25 * (pts[0] + pts[1] + pts[2] + pts[3]);
        return {x, c, pts[0], (pts[0] - c).norm()};
    }

    // frame at x1 from the frame at x0, in pieces of length at most 0.5
    FactorFrame advance(FactorFrame f, double x0, double x1) const
    {
        const int pieces = std::max(1, static_cast<int>(std::ceil(std::abs(x1 - x0) / 0.5)));
        for (int i = 0; i < pieces; ++i)
            f = flow(P, f, x0 + (x1 - x0) * i / pieces, x0 + (x1 - x0) * (i + 1) / pieces, prm.ode);
        return f;
    }
};

// Rings at x_begin + i (x_end - x_begin) / steps, i = 0 .. steps.
inline std::vector<DelaunaySample> delaunay_rings(const DelaunayResidue& r, double x_begin, double x_end, int steps,
                                                  const ImmersionParams& prm)
{
    const DelaunayRinger R(r, prm);
    FactorFrame f = R.advance(identity_frame(R.P), 0.0, x_begin);
    std::vector<DelaunaySample> out{R.sample(f, x_begin)};
    const double h = (x_end - x_begin) / steps;
    for (int i = 1; i <= steps; ++i) {
        const double x = x_begin + i * h;
        f = flow(R.P, f, x - h, x, prm.ode);
        out.push_back(R.sample(f, x));
    }
    return out;
}

struct DelaunayProfile {
    double w = 0.0, H = 1.0;
    double period = 0.0;   // conformal period in x
    double advance = 0.0;  // axial advance per period
    double neck = 0.0, bulge = 0.0;
    bool self_intersecting = false;
    std::vector<double> h, r;  // one period from neck to neck, h increasing with x into the end

    struct Nearest {
        double distance = std::numeric_limits<double>::infinity();
        Eigen::Vector2d normal{0.0, 1.0};
    };

    // sample i of the periodic curve, any integer i
    Eigen::Vector2d point(long i) const
    {
        const long m = static_cast<long>(h.size()) - 1;
        const long q = (i >= 0 ? i / m : -((-i + m - 1) / m));
        const long k = i - q * m;
        return {h[static_cast<std::size_t>(k)] + static_cast<double>(q) * advance, r[static_cast<std::size_t>(k)]};
    }

    void build_index()
    {
        const long m = static_cast<long>(h.size()) - 1;
        bins_.assign(static_cast<std::size_t>(nbins_), {});
        lo_ = -advance;
        width_ = 3.0 * advance / nbins_;
        for (long e = -m; e < 2 * m; ++e) {
            const auto a = point(e), b = point(e + 1);
            const int b0 = std::max(0, bin(std::min(a(0), b(0))));
            const int b1 = std::min(nbins_ - 1, bin(std::max(a(0), b(0))));
            for (int k = b0; k <= b1; ++k) bins_[static_cast<std::size_t>(k)].push_back(e);
        }
    }

    // closest point of the profile translated by shift, refined on the local quadratic through three samples
    Nearest nearest(double hq, double rq, double shift) const
    {
        double t = hq - shift;
        t -= advance * std::floor(t / advance);
        const Eigen::Vector2d p(t, rq);
        double best = std::numeric_limits<double>::infinity();
        long seg = 0;
        double sbest = 0.0;
        auto scan = [&](int k0, int k1) {
            for (int k = std::max(0, k0); k <= std::min(nbins_ - 1, k1); ++k)
                for (long e : bins_[static_cast<std::size_t>(k)]) {
                    const auto a = point(e), b = point(e + 1);
                    const Eigen::Vector2d d = b - a;
                    double s = d.squaredNorm() > 0 ? (p - a).dot(d) / d.squaredNorm() : 0.0;
                    s = std::clamp(s, 0.0, 1.0);
                    const double dist = (a + s * d - p).norm();
                    if (dist < best) {
                        best = dist;
                        seg = e;
                        sbest = s;
                    }
                }
        };
        const int b = bin(t);
        scan(b - 1, b + 1);
        if (std::isfinite(best)) scan(bin(t - best), bin(t + best));
        else scan(0, nbins_ - 1);
        const long c = sbest < 0.5 ? seg : seg + 1;
        const Eigen::Vector2d P0 = point(c - 1), P1 = point(c), P2 = point(c + 1);
        const Eigen::Vector2d d1 = 0.5 * (P2 - P0), d2 = P0 - 2.0 * P1 + P2;
        double u = sbest < 0.5 ? sbest : sbest - 1.0;
        for (int it = 0; it < 8; ++it) {
            const Eigen::Vector2d cu = P1 + u * d1 + 0.5 * u * u * d2 - p;
            const Eigen::Vector2d du = d1 + u * d2;
            const double g = du.dot(cu), gp = d2.dot(cu) + du.squaredNorm();
            if (gp <= 0) break;
            u = std::clamp(u - g / gp, -1.0, 1.0);
        }
        Nearest out;
        out.distance = (P1 + u * d1 + 0.5 * u * u * d2 - p).norm();
        const Eigen::Vector2d du = d1 + u * d2;
        out.normal = Eigen::Vector2d(-du(1), du(0)).normalized();
        return out;
    }

    double distance(double hq, double rq, double shift) const { return nearest(hq, rq, shift).distance; }
    Eigen::Vector2d normal(double hq, double rq, double shift) const { return nearest(hq, rq, shift).normal; }

private:
    int bin(double x) const { return static_cast<int>(std::floor((x - lo_) / width_)); }
    int nbins_ = 1536;
    double lo_ = 0.0, width_ = 1.0;
    std::vector<std::vector<long>> bins_;
};

inline std::vector<double> local_minima(const std::vector<DelaunaySample>& s)
{
    std::vector<double> xs;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        const double a = s[i - 1].radius, b = s[i].radius, c = s[i + 1].radius;
        if (b < a && b <= c) {
            const double den = a - 2.0 * b + c;
            const double off = den > 0 ? 0.5 * (a - c) / den : 0.0;
            xs.push_back(s[i].x + off * (s[i + 1].x - s[i].x));
        }
    }
    return xs;
}

// golden section on the ring radius near a coarse neck estimate
inline double refine_neck(const DelaunayRinger& R, double xm, double half)
{
    const FactorFrame base = R.advance(identity_frame(R.P), 0.0, xm + half);
    auto rad = [&](double x) { return R.sample(flow(R.P, base, xm + half, x, R.prm.ode), x).radius; };
    double lo = xm - half, hi = xm + half;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    double f1 = rad(x1), f2 = rad(x2);
    while (hi - lo > 1e-9) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = rad(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = rad(x2);
        }
    }
    return 0.5 * (lo + hi);
}

inline DelaunayProfile delaunay_profile(double w, const ImmersionParams& prm, double dx = 0.0025)
{
    const auto r = delaunay_residue(w, prm.H);
    const DelaunayRinger R(r, prm);
    DelaunayProfile pr;
    pr.w = w;
    pr.H = prm.H;
    // coarse pass for the necks
    const double coarse_dx = 0.02;
    double span = 12.0;
    std::vector<double> mins;
    while (true) {
        mins = local_minima(delaunay_rings(r, 0.0, -span, static_cast<int>(span / coarse_dx), prm));
        if (mins.size() >= 2 || span > 400.0) break;
        span *= 2.0;
    }
    std::vector<DelaunaySample> per;
    if (mins.size() < 2) {
        // cylinder: constant radius
        pr.period = 2.0 * pi;
        per = delaunay_rings(r, 0.0, -pr.period, 256, prm);
    } else {
        const double x0 = refine_neck(R, mins[0], 2.0 * coarse_dx);
        const double x1 = refine_neck(R, mins[1], 2.0 * coarse_dx);
        pr.period = std::abs(x1 - x0);
        per = delaunay_rings(r, x0, x1, static_cast<int>(std::ceil(pr.period / dx)), prm);
    }
    const Vec3 c0 = per.front().center;
    Vec3 axis = per.back().center - c0;
    pr.advance = axis.norm();
    axis /= pr.advance;
    pr.neck = std::numeric_limits<double>::infinity();
    pr.bulge = 0.0;
    double hprev = -std::numeric_limits<double>::infinity();
    bool monotone = true;
    for (const auto& s : per) {
        const Vec3 d = s.point - c0;
        const double hh = d.dot(axis);
        const double rr = (d - hh * axis).norm();
        if (hh < hprev) monotone = false;
        hprev = hh;
        pr.h.push_back(hh);
        pr.r.push_back(rr);
        pr.neck = std::min(pr.neck, rr);
        pr.bulge = std::max(pr.bulge, rr);
    }
    pr.self_intersecting = !monotone;
    pr.build_index();
    return pr;
}

inline double signed_necksize(const DelaunayProfile& p) { return p.self_intersecting ? -p.neck : p.neck; }

// Delaunay surface on the rectangle x in [x_min, x_max], y in [0, 2 pi]
// (the column y = 2 pi duplicates y = 0 for the closure check).
inline SurfaceMesh delaunay_surface(double w, const ImmersionParams& prm, double x_min, double x_max, int nx, int ny)
{
    prm.validate();
    const auto r = delaunay_residue(w, prm.H);
    const int n = prm.nsamples;
    const auto P = delaunay_flow_potential(r, n);
    FactorFrame f = identity_frame(P);
    if (x_max != 0.0) f = flow(P, f, 0.0, x_max, prm.ode);
    std::vector<std::vector<Mat2>> rot(static_cast<std::size_t>(ny + 1));
    for (int k = 0; k <= ny; ++k)
        for (int j = 0; j < n; ++j)
            rot[static_cast<std::size_t>(k)].push_back(expm_tracefree(I1 * (2.0 * pi * k / ny) * P.Ahat[static_cast<std::size_t>(j)]));
    SurfaceMesh mesh;
    for (int i = 0; i < nx; ++i) {
        const double x = x_max + (x_min - x_max) * i / std::max(nx - 1, 1);
        if (i > 0) {
            const double xp = x_max + (x_min - x_max) * (i - 1) / std::max(nx - 1, 1);
            f = flow(P, f, xp, x, prm.ode);
        }
        const double res = unitarity_defect(f.F);
        const double R = balance_ratio(f.B);
        const double met = 4.0 * R * R * r.a * r.a / (prm.H * prm.H);
        for (int k = 0; k <= ny; ++k) {
            const double y = 2.0 * pi * k / ny;
            const auto sp = sym_from_frame(pointwise_product(rot[static_cast<std::size_t>(k)], f.F), prm.lambda0, prm.H);
            mesh.add_vertex(sp.x, sp.normal, std::max(res, sp.su2_residual), met, std::exp(cplx(x, y)), cplx(x, y), -1, i, x, y);
        }
    }
    const int cols = ny + 1;
    for (int i = 0; i + 1 < nx; ++i)
        for (int k = 0; k < ny; ++k) mesh.quads.push_back({i * cols + k, (i + 1) * cols + k, (i + 1) * cols + k + 1, i * cols + k + 1});
    for (int i = 0; i < nx; ++i) mesh.duplicates.push_back({i * cols, i * cols + ny});
    mesh.measure_closure();
    return mesh;
}

struct AxisFit {
    Vec3 center = Vec3::Zero();
    Vec3 axis = Vec3::UnitX();
};

// principal direction of a point set
inline AxisFit pca_axis(const std::vector<Vec3>& pts)
{
    AxisFit a;
    for (const auto& p : pts) a.center += p;
    a.center /= static_cast<double>(pts.size());
    Eigen::Matrix3d C = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) C += (p - a.center) * (p - a.center).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(C);
    a.axis = es.eigenvectors().col(2);
    return a;
}

struct RadiusReport {
    double min_radius = 0.0, max_radius = 0.0;
    AxisFit axis;
};

// ring radii about the axis fitted through ring centroids
inline RadiusReport ring_radii(const SurfaceMesh& m)
{
    std::map<int, std::vector<int>> rings;
    for (std::size_t v = 0; v < m.vertices.size(); ++v) rings[m.ring[v]].push_back(static_cast<int>(v));
    std::vector<Vec3> cents;
    for (const auto& [k, idx] : rings) {
        Vec3 c = Vec3::Zero();
        int cnt = 0;
        for (int v : idx)
            if (m.phi[static_cast<std::size_t>(v)] < 2.0 * pi - 1e-12) {
                c += m.vertices[static_cast<std::size_t>(v)];
                ++cnt;
            }
        cents.push_back(c / cnt);
    }
    RadiusReport r;
    r.axis = pca_axis(cents);
    r.min_radius = std::numeric_limits<double>::infinity();
    for (const auto& v : m.vertices) {
        const Vec3 d = v - r.axis.center;
        const double rr = (d - d.dot(r.axis.axis) * r.axis.axis).norm();
        r.min_radius = std::min(r.min_radius, rr);
        r.max_radius = std::max(r.max_radius, rr);
    }
    return r;
}

// ------------------------------------------------------ trinoid domain

// Model where the ends sit at the cube roots of unity: z' = (eps z + 1)/(eps^2 z + 1).
// Chart e: t = (z' eps^{-e})^{3/2}, D = (t-1)/(t+1); |D| < 1 is the sector of
// end e, D = 1 and D = -1 are the points z = exp(-i pi/3) and exp(i pi/3).
namespace chart {

inline cplx eps() { return std::polar(1.0, 2.0 * pi / 3.0); }

// log((1+D)/(1-D))
inline cplx log_ratio(cplx D)
{
    if (std::abs(D) < 0.5) {
        cplx s = 0.0, p = D;
        const cplx D2 = D * D;
        for (int k = 1; k < 80; k += 2) {
            const cplx t = p / static_cast<double>(k);
            s += t;
            if (std::abs(t) < 1e-18 * std::abs(s)) break;
            p *= D2;
        }
        return 2.0 * s;
    }
    return std::log(1.0 + D) - std::log(1.0 - D);
}

inline cplx expm1c(cplx v)
{
    if (std::abs(v) < 0.5) {
        cplx s = 0.0, t = 1.0;
        for (int k = 1; k < 40; ++k) {
            t *= v / static_cast<double>(k);
            s += t;
            if (std::abs(t) < 1e-18 * std::abs(s)) break;
        }
        return s;
    }
    return std::exp(v) - 1.0;
}

// s_e = k delta / (m + n delta) with delta = z''^{...} - 1
inline std::array<cplx, 3> coefficients(int e)
{
    const cplx E = eps();
    if (e == 0) return {-1.0, E * E - E, E * E};
    if (e == 1) return {1.0 + E, 1.0 - E, 1.0};
    return {E, 1.0 - E * E, -E * E};
}

// end-local coordinate of the chart point D, accurate as D -> 0
inline cplx s_of_D(int e, cplx D)
{
    const auto [k, m, n] = coefficients(e);
    if (std::abs(1.0 - D) < 1e-14) return k / n;
    cplx delta;
    if (std::abs(1.0 + D) < 1e-14) delta = -1.0;
    else delta = expm1c(log_ratio(D) * (2.0 / 3.0));
    return k * delta / (m + n * delta);
}

inline cplx z_of_D(int e, cplx D) { return end_coordinate_inverse(e, s_of_D(e, D)); }

}  // namespace chart

struct TrinoidMeshSpec {
    int nphi = 40;          // angular cells per chart, multiple of 4
    int end_periods = 3;    // Delaunay periods resolved into each end
    double closure_tol = 1e-5;
    bool throw_on_closure = false;
};

// a chart piece: log-polar grid ell_i = -i dl, phi_k = phi_begin + k dphi
struct ChartPiece {
    int chart = 0;
    double phi_begin = 0.0;
    int ncols = 0;
    int root_col = 0;
    int root_side = 0;  // 0: root at z = exp(-i pi/3), 1: at exp(i pi/3)
    int first_vertex = 0;
};

struct TrinoidSurface {
    Weights weights;
    PotentialSpec potential;
    MonodromySet monodromy;
    KernelSection section;
    Unitarizer unitarizer;
    SurfaceMesh mesh;
    std::array<DelaunayProfile, 3> profiles;
    std::vector<ChartPiece> pieces;
    int nrings = 0;
    double dl = 0.0;
    double ell_min = 0.0;
    std::map<std::string, double> timings;
    OdeStats flow_stats;
};

// G_e = M_e(s) diag(e^{w/2}, e^{-w/2}) g2 per lambda sample
inline std::vector<Mat2> chart_gauge(const Weights& W, int e, cplx s, cplx w, int n)
{
    const auto r = delaunay_residue(W.for_end(e).w[0], W.H);
    const auto lam = unit_samples(n);
    std::vector<Mat2> G(static_cast<std::size_t>(n));
    const cplx h = std::exp(0.5 * w);
    for (int j = 0; j < n; ++j) {
        const cplx l = lam[static_cast<std::size_t>(j)];
        G[static_cast<std::size_t>(j)] = mobius_gauge(e, s, l) * make2(h, 0.0, 0.0, 1.0 / h) * end_g2(r, l);
    }
    return G;
}

inline cplx nearest_branch(cplx w, cplx ref)
{
    const double k = std::round((ref.imag() - w.imag()) / (2.0 * pi));
    return w + cplx(0.0, 2.0 * pi * k);
}

// stage, if given, names the step in progress so a caller can report where a failure happened
inline TrinoidSurface trinoid_surface(const Weights& W, const ImmersionParams& prm, const TrinoidMeshSpec& ms = {},
                                      bool allow_cylinder_end = false, std::string* stage = nullptr)
{
    auto enter = [&](const char* s) {
        if (stage) *stage = s;
    };
    using clock = std::chrono::steady_clock;
    auto tick = clock::now();
    auto lap = [&](const std::string& name, TrinoidSurface& T) {
        const auto now = clock::now();
        T.timings[name] = std::chrono::duration<double>(now - tick).count();
        tick = now;
    };
    enter("potentials");
    prm.validate();
    if (ms.nphi % 4 != 0 || ms.nphi < 8) throw Error(ErrorCode::InvalidArgument, "nphi must be a multiple of 4, at least 8");
    TrinoidSurface T;
    T.weights = W;
    T.potential = trinoid_potential(W, allow_cylinder_end);
    const int n = prm.nsamples;
    const cplx z0(0.5, -0.5);
    const auto phi0 = LaurentLoop::constant(Mat2::Identity(), prm.band, n);
    enter("holonomy");
    T.monodromy = monodromies(T.potential, z0, phi0, prm.ode, prm.threads);
    lap("monodromy", T);
    enter("unitarize");
    T.section = kernel_section(T.monodromy, prm.band, prm.threads);
    T.unitarizer = build_unitarizer(T.section, T.monodromy);
    lap("unitarize", T);
    enter("immerse");

    // end depth from the Delaunay periods of the three ends
    double Tmax = 0.0;
    for (int e = 0; e < 3; ++e) {
        const double we = W.w[static_cast<std::size_t>(e)];
        int same = -1;
        for (int q = 0; q < e; ++q)
            if (W.w[static_cast<std::size_t>(q)] == we) same = q;
        T.profiles[static_cast<std::size_t>(e)] = same >= 0 ? T.profiles[static_cast<std::size_t>(same)] : delaunay_profile(we, prm);
        Tmax = std::max(Tmax, T.profiles[static_cast<std::size_t>(e)].period);
    }
    lap("profiles", T);
    T.dl = 2.0 * pi / ms.nphi;
    T.ell_min = -((ms.end_periods + 0.5) * Tmax + 1.0);
    T.nrings = static_cast<int>(std::ceil(-T.ell_min / T.dl)) + 1;
    T.ell_min = -(T.nrings - 1) * T.dl;

    // root frames at exp(-i pi/3) and exp(i pi/3)
    const std::array<cplx, 2> roots{std::polar(1.0, -pi / 3.0), std::polar(1.0, pi / 3.0)};
    std::array<FactorFrame, 2> root_frames;
    const auto lam = unit_samples(n);
    for (int q = 0; q < 2; ++q) {
        const Path path = {segment(z0, roots[static_cast<std::size_t>(q)])};
        std::vector<Mat2> I(static_cast<std::size_t>(n), Mat2::Identity());
        auto Phi = integrate_samples(T.potential.form(), T.potential.finite_poles(), path, I, lam, prm.ode, prm.threads);
        for (int j = 0; j < n; ++j) Phi[static_cast<std::size_t>(j)] = T.unitarizer.C.sample(j) * Phi[static_cast<std::size_t>(j)];
        auto iw = iwasawa(LaurentLoop::from_samples(Phi, n / 2 - 1), prm.ridge);
        root_frames[static_cast<std::size_t>(q)].F = iw.F.samples();
        root_frames[static_cast<std::size_t>(q)].B = iw.B.samples();
    }
    lap("root", T);

    // chart pieces
    const int nphi = ms.nphi;
    const double dphi = 2.0 * pi / nphi;
    T.pieces = {
        {0, -pi / 2, nphi + 1, nphi / 4, 0, 0},
        {1, pi / 2, nphi + 1, 3 * nphi / 4, 0, 0},
        {2, -pi / 2, nphi / 2 + 1, nphi / 4, 0, 0},
        {2, pi / 2, nphi / 2 + 1, nphi / 4, 1, 0},
    };
    std::array<FlowPotential, 3> fp;
    for (int e = 0; e < 3; ++e) fp[static_cast<std::size_t>(e)] = end_flow_potential(W, e, n);
    const int keep = std::min(prm.band + 1, n / 2);

    struct VertexData {
        Vec3 x, n;
        double res = 0.0, met = 0.0;
        cplx z, w;
    };
    std::vector<std::vector<VertexData>> data(T.pieces.size());
    std::vector<std::vector<FactorFrame>> ring0(T.pieces.size());
    std::vector<std::vector<cplx>> ring0_w(T.pieces.size());
    auto evaluate = [&](const ChartPiece& pc, const FactorFrame& f, cplx s, cplx w) {
        VertexData v;
        const auto sp = sym_from_frame(f.F, prm.lambda0, prm.H);
        v.x = sp.x;
        v.n = sp.normal;
        v.res = std::max(unitarity_defect(f.F), sp.su2_residual);
        const double R = balance_ratio(f.B);
        const double a = fp[static_cast<std::size_t>(pc.chart)].alpha;
        v.met = 4.0 * R * R * a * a / (prm.H * prm.H);
        v.z = end_coordinate_inverse(pc.chart, s);
        v.w = w;
        return v;
    };
    auto D_of = [&](int i, double ph) { return std::polar(std::exp(-i * T.dl), ph); };
    auto check_pole = [&](cplx s) {
        if (std::abs(s - 1.0) < prm.ode.pole_min) throw Error(ErrorCode::PoleTooClose, "chart vertex near another end");
    };

    std::vector<OdeStats> stats(T.pieces.size());
    // ring 0 of each piece, walking out from the root column
    parallel_for(static_cast<int>(T.pieces.size()), prm.threads, [&](int pi_) {
        const auto& pc = T.pieces[static_cast<std::size_t>(pi_)];
        const auto e = static_cast<std::size_t>(pc.chart);
        data[static_cast<std::size_t>(pi_)].assign(static_cast<std::size_t>(pc.ncols * T.nrings), VertexData{});
        auto& frames = ring0[static_cast<std::size_t>(pi_)];
        auto& ws = ring0_w[static_cast<std::size_t>(pi_)];
        frames.assign(static_cast<std::size_t>(pc.ncols), FactorFrame{});
        ws.assign(static_cast<std::size_t>(pc.ncols), 0.0);
        const cplx sr = chart::s_of_D(pc.chart, D_of(0, pc.phi_begin + pc.root_col * dphi));
        const cplx wr = std::log(sr);
        const auto G = chart_gauge(W, pc.chart, sr, wr, n);
        const auto& rf = root_frames[static_cast<std::size_t>(pc.root_side)];
        std::vector<Mat2> B0(rf.B.size());
        for (std::size_t j = 0; j < B0.size(); ++j) B0[j] = rf.B[j] * G[j];
        const FactorFrame f0 = make_frame(rf.F, B0, fp[e], wr);
        frames[static_cast<std::size_t>(pc.root_col)] = f0;
        ws[static_cast<std::size_t>(pc.root_col)] = wr;
        data[static_cast<std::size_t>(pi_)][static_cast<std::size_t>(pc.root_col)] = evaluate(pc, f0, sr, wr);
        for (int dir : {-1, 1}) {
            for (int k = pc.root_col + dir; k >= 0 && k < pc.ncols; k += dir) {
                const auto kp = static_cast<std::size_t>(k - dir), kk = static_cast<std::size_t>(k);
                const cplx s = chart::s_of_D(pc.chart, D_of(0, pc.phi_begin + k * dphi));
                check_pole(s);
                const cplx w = nearest_branch(std::log(s), ws[kp]);
                frames[kk] = flow(fp[e], frames[kp], ws[kp], w, prm.ode, keep, &stats[static_cast<std::size_t>(pi_)]);
                ws[kk] = w;
                data[static_cast<std::size_t>(pi_)][kk] = evaluate(pc, frames[kk], s, w);
            }
        }
    });
    lap("ring0", T);
    // columns into the ends, all pieces concurrently
    std::vector<std::pair<int, int>> columns;
    for (std::size_t p = 0; p < T.pieces.size(); ++p)
        for (int k = 0; k < T.pieces[p].ncols; ++k) columns.push_back({static_cast<int>(p), k});
    std::vector<OdeStats> cstats(columns.size());
    parallel_for(static_cast<int>(columns.size()), prm.threads, [&](int c) {
        const auto [p, k] = columns[static_cast<std::size_t>(c)];
        const auto& pc = T.pieces[static_cast<std::size_t>(p)];
        const auto e = static_cast<std::size_t>(pc.chart);
        FactorFrame f = ring0[static_cast<std::size_t>(p)][static_cast<std::size_t>(k)];
        cplx wp = ring0_w[static_cast<std::size_t>(p)][static_cast<std::size_t>(k)];
        for (int i = 1; i < T.nrings; ++i) {
            const cplx s = chart::s_of_D(pc.chart, D_of(i, pc.phi_begin + k * dphi));
            check_pole(s);
            const cplx w = nearest_branch(std::log(s), wp);
            f = flow(fp[e], f, wp, w, prm.ode, keep, &cstats[static_cast<std::size_t>(c)]);
            wp = w;
            data[static_cast<std::size_t>(p)][static_cast<std::size_t>(i * pc.ncols + k)] = evaluate(pc, f, s, w);
        }
    });
    lap("columns", T);
    for (const auto& s : stats) T.flow_stats.merge(s);
    for (const auto& s : cstats) T.flow_stats.merge(s);

    // assemble the mesh
    auto& mesh = T.mesh;
    for (std::size_t p = 0; p < T.pieces.size(); ++p) {
        auto& pc = T.pieces[p];
        pc.first_vertex = static_cast<int>(mesh.vertices.size());
        for (int i = 0; i < T.nrings; ++i)
            for (int k = 0; k < pc.ncols; ++k) {
                const auto& v = data[p][static_cast<std::size_t>(i * pc.ncols + k)];
                mesh.add_vertex(v.x, v.n, v.res, v.met, v.z, v.w, pc.chart, i, -i * T.dl, pc.phi_begin + k * dphi);
            }
        const int b = pc.first_vertex, nc = pc.ncols;
        for (int i = 0; i + 1 < T.nrings; ++i)
            for (int k = 0; k + 1 < nc; ++k)
                mesh.quads.push_back({b + i * nc + k, b + i * nc + k + 1, b + (i + 1) * nc + k + 1, b + (i + 1) * nc + k});
    }
    // vertex lookup by chart, ring and angle
    auto index_of = [&](int e, int i, double ph) -> int {
        for (const auto& pc : T.pieces) {
            if (pc.chart != e) continue;
            double rel = ph - pc.phi_begin;
            rel -= 2.0 * pi * std::floor(rel / (2.0 * pi) + 1e-9);
            const double kf = rel / dphi;
            const int k = static_cast<int>(std::lround(kf));
            if (std::abs(kf - k) < 1e-6 && k >= 0 && k < pc.ncols) return pc.first_vertex + i * pc.ncols + k;
        }
        return -1;
    };
    // cuts: both sides of each chart cut
    for (int i = 0; i < T.nrings; ++i) {
        const auto& p0 = T.pieces[0];
        mesh.duplicates.push_back({p0.first_vertex + i * p0.ncols, p0.first_vertex + i * p0.ncols + p0.ncols - 1});
        const auto& p1 = T.pieces[1];
        mesh.duplicates.push_back({p1.first_vertex + i * p1.ncols, p1.first_vertex + i * p1.ncols + p1.ncols - 1});
        const auto& a = T.pieces[2];
        const auto& b = T.pieces[3];
        mesh.duplicates.push_back({a.first_vertex + i * a.ncols + a.ncols - 1, b.first_vertex + i * b.ncols});
        mesh.duplicates.push_back({a.first_vertex + i * a.ncols, b.first_vertex + i * b.ncols + b.ncols - 1});
    }
    // seams between neighbouring sectors: D_{e+1} = conj(D_e) on |D| = 1
    for (int e = 0; e < 3; ++e)
        for (int k = 0; k <= nphi / 2; ++k) {
            const double ph = k * dphi;
            const int va = index_of(e, 0, ph), vb = index_of((e + 1) % 3, 0, -ph);
            if (va >= 0 && vb >= 0) mesh.duplicates.push_back({va, vb});
        }
    mesh.measure_closure();
    lap("assemble", T);
    if (ms.throw_on_closure && !(mesh.closure_residual <= ms.closure_tol))
        throw Error(ErrorCode::ClosureFailure, "seam mismatch " + sci(mesh.closure_residual) + " of the bounding box");
    return T;
}

// ------------------------------------------------------------ diagnostics

struct MetricHopfReport {
    double max_rel_error = 0.0;
    double mean_rel_error = 0.0;
    int edges = 0;
    cplx hopf_at_sample = 0.0;
    cplx hopf_expected = 0.0;
};

// Hopf differential coefficient -2/H alpha beta, alpha the lambda^{-1}
// upper-right and beta the lambda^0 lower-left entry of the potential.
inline cplx hopf_coefficient(const PotentialSpec& P, cplx z)
{
    const auto c = P.laurent(z);
    return -2.0 / P.weights.H * c[0](0, 1) * c[1](1, 0);
}

// Compare squared edge lengths against the predicted conformal factor.
inline MetricHopfReport metric_hopf_diagnostics(const SurfaceMesh& m, const PotentialSpec* P = nullptr,
                                                cplx z_sample = cplx(0.3, 0.2), int skip_rings = 1)
{
    MetricHopfReport r;
    double sum = 0.0;
    auto edge = [&](int a, int b) {
        const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
        if (m.chart[ua] != m.chart[ub]) return;
        if (m.ring[ua] < skip_rings || m.ring[ub] < skip_rings) return;
        const cplx dw = m.w[ub] - m.w[ua];
        if (std::abs(dw) == 0.0) return;
        const double pred = 0.5 * (m.metric[ua] + m.metric[ub]);
        const double meas = (m.vertices[ub] - m.vertices[ua]).squaredNorm() / std::norm(dw);
        const double e = std::abs(meas - pred) / pred;
        r.max_rel_error = std::max(r.max_rel_error, e);
        sum += e;
        ++r.edges;
    };
    for (const auto& q : m.quads) {
        edge(q[0], q[1]);
        edge(q[1], q[2]);
    }
    r.mean_rel_error = r.edges ? sum / r.edges : 0.0;
    if (P) {
        r.hopf_at_sample = hopf_coefficient(*P, z_sample);
        r.hopf_expected = -2.0 / P->weights.H * P->q(z_sample);
    }
    return r;
}

struct EndReport {
    int end = 0;
    double weight = 0.0;
    double neck_radius = 0.0;
    double period = 0.0;
    AxisFit axis;
    double shift = 0.0;
    std::vector<double> c0;  // max distance to the fitted Delaunay profile, per period into the end
    std::vector<double> c1;  // max normal deviation, per period
    bool decreasing = false;
    double final_ratio = 0.0;  // last c0 / neck radius
};

// (h, r) coordinates of v about an axis
inline Eigen::Vector2d meridian(const Vec3& v, const AxisFit& a)
{
    const Vec3 d = v - a.center;
    const double h = d.dot(a.axis);
    return {h, (d - h * a.axis).norm()};
}

inline double fit_shift(const std::vector<Eigen::Vector2d>& pts, const DelaunayProfile& prof)
{
    const double A = std::abs(prof.advance);
    auto cost = [&](double s) {
        double m = 0.0;
        for (const auto& p : pts) m = std::max(m, prof.distance(p(0), p(1), s));
        return m;
    };
    // coarse scan over one period then golden section
    const int scan = 64;
    double best = 0.0, bc = std::numeric_limits<double>::infinity();
    for (int i = 0; i < scan; ++i) {
        const double s = A * i / scan;
        const double c = cost(s);
        if (c < bc) {
            bc = c;
            best = s;
        }
    }
    double lo = best - A / scan, hi = best + A / scan;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    double f1 = cost(x1), f2 = cost(x2);
    for (int it = 0; it < 60; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = cost(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = cost(x2);
        }
    }
    return 0.5 * (lo + hi);
}

inline EndReport end_asymptotics(const TrinoidSurface& T, int end, int periods = -1)
{
    const auto& m = T.mesh;
    const auto& prof = T.profiles[static_cast<std::size_t>(end)];
    EndReport r;
    r.end = end;
    r.weight = T.weights.w[static_cast<std::size_t>(end)];
    r.neck_radius = std::abs(T.weights.n[static_cast<std::size_t>(end)]);
    r.period = prof.period;
    if (periods < 0) periods = static_cast<int>(std::floor((-T.ell_min - 1.0) / prof.period));
    if (periods < 3 || -T.ell_min < periods * prof.period)
        throw Error(ErrorCode::InsufficientEndDepth, "end resolves fewer than 3 Delaunay periods");
    // rings grouped by index, excluding duplicated cut columns
    std::vector<std::vector<int>> rings(static_cast<std::size_t>(T.nrings));
    for (const auto& pc : T.pieces) {
        if (pc.chart != end) continue;
        for (int i = 0; i < T.nrings; ++i)
            for (int k = 0; k + 1 < pc.ncols; ++k) rings[static_cast<std::size_t>(i)].push_back(pc.first_vertex + i * pc.ncols + k);
    }
    auto window = [&](int p) {
        // period p = 1 .. periods, p = periods is the deepest
        const double hi = T.ell_min + (periods - p + 1) * prof.period;
        const double lo = T.ell_min + (periods - p) * prof.period;
        std::vector<int> idx;
        for (int i = 0; i < T.nrings; ++i) {
            const double l = -i * T.dl;
            if (l >= lo - 1e-12 && l < hi - 1e-12) idx.push_back(i);
        }
        return idx;
    };
    std::vector<Vec3> cents;
    std::vector<int> fit_rings;
    for (int i : window(periods)) fit_rings.push_back(i);
    for (int i : fit_rings) {
        Vec3 c = Vec3::Zero();
        for (int v : rings[static_cast<std::size_t>(i)]) c += m.vertices[static_cast<std::size_t>(v)];
        cents.push_back(c / static_cast<double>(rings[static_cast<std::size_t>(i)].size()));
    }
    r.axis = pca_axis(cents);
    std::vector<Eigen::Vector2d> pts;
    for (int i : fit_rings)
        for (int v : rings[static_cast<std::size_t>(i)]) pts.push_back(meridian(m.vertices[static_cast<std::size_t>(v)], r.axis));
    r.shift = fit_shift(pts, prof);
    for (int p = 1; p <= periods; ++p) {
        double c0 = 0.0, c1 = 0.0;
        for (int i : window(p))
            for (int v : rings[static_cast<std::size_t>(i)]) {
                const auto uv = static_cast<std::size_t>(v);
                const auto hr = meridian(m.vertices[uv], r.axis);
                c0 = std::max(c0, prof.distance(hr(0), hr(1), r.shift));
                const Vec3 d = m.vertices[uv] - r.axis.center;
                Vec3 radial = d - d.dot(r.axis.axis) * r.axis.axis;
                radial.normalize();
                const auto n2 = prof.normal(hr(0), hr(1), r.shift);
                const Vec3 nref = n2(0) * r.axis.axis + n2(1) * radial;
                const Vec3& nm = m.normals[uv];
                c1 = std::max(c1, std::min((nm - nref).norm(), (nm + nref).norm()));
            }
        r.c0.push_back(c0);
        r.c1.push_back(c1);
    }
    r.decreasing = r.c0[static_cast<std::size_t>(periods - 1)] < r.c0[static_cast<std::size_t>(periods - 2)];
    r.final_ratio = r.c0.back() / r.neck_radius;
    return r;
}

struct SymmetryReport {
    double max_residual = 0.0;
    double reflection_defect = 0.0;  // distance of the fitted orthogonal map from a plane reflection
    Vec3 normal = Vec3::UnitZ();
    double offset = 0.0;
    int pairs = 0;
};

// Fit x -> Q x + t with Q orthogonal, det Q = -1, to the pairs
// (f(z), f(conj z)) and report the residual.
inline SymmetryReport reflection_symmetry(const TrinoidSurface& T)
{
    const auto& m = T.mesh;
    const double dphi = 2.0 * pi / (T.pieces.empty() ? 1 : (T.pieces[0].ncols - 1));
    std::vector<Vec3> P, Q;
    for (const auto& pc : T.pieces)
        for (int i = 0; i < T.nrings; ++i)
            for (int k = 0; k < pc.ncols; ++k) {
                const double ph = pc.phi_begin + k * dphi;
                const double pr = pi - ph;
                for (const auto& qc : T.pieces) {
                    if (qc.chart != pc.chart) continue;
                    double rel = pr - qc.phi_begin;
                    rel -= 2.0 * pi * std::floor(rel / (2.0 * pi) + 1e-9);
                    const double kf = rel / dphi;
                    const int kk = static_cast<int>(std::lround(kf));
                    if (std::abs(kf - kk) < 1e-6 && kk >= 0 && kk < qc.ncols) {
                        P.push_back(m.vertices[static_cast<std::size_t>(pc.first_vertex + i * pc.ncols + k)]);
                        Q.push_back(m.vertices[static_cast<std::size_t>(qc.first_vertex + i * qc.ncols + kk)]);
                        break;
                    }
                }
            }
    SymmetryReport r;
    r.pairs = static_cast<int>(P.size());
    Vec3 cp = Vec3::Zero(), cq = Vec3::Zero();
    for (std::size_t i = 0; i < P.size(); ++i) {
        cp += P[i];
        cq += Q[i];
    }
    cp /= static_cast<double>(P.size());
    cq /= static_cast<double>(Q.size());
    Eigen::Matrix3d Hm = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < P.size(); ++i) Hm += (P[i] - cp) * (Q[i] - cq).transpose();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(Hm, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d Dg = Eigen::Matrix3d::Identity();
    // force det = -1
    if ((svd.matrixV() * svd.matrixU().transpose()).determinant() > 0) Dg(2, 2) = -1.0;
    const Eigen::Matrix3d R = svd.matrixV() * Dg * svd.matrixU().transpose();
    const Vec3 t = cq - R * cp;
    for (std::size_t i = 0; i < P.size(); ++i) r.max_residual = std::max(r.max_residual, (R * P[i] + t - Q[i]).norm());
    Eigen::EigenSolver<Eigen::Matrix3d> es(R);
    int best = 0;
    for (int i = 1; i < 3; ++i)
        if (std::abs(es.eigenvalues()(i) + 1.0) < std::abs(es.eigenvalues()(best) + 1.0)) best = i;
    r.normal = es.eigenvectors().col(best).real().normalized();
    r.reflection_defect = (R - (Eigen::Matrix3d::Identity() - 2.0 * r.normal * r.normal.transpose())).norm();
    r.offset = 0.5 * r.normal.dot(t);
    return r;
}

}  // namespace trinoid
