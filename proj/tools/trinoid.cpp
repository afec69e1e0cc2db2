#include "trinoid/mesh_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>

using namespace trinoid;
using json = nlohmann::json;

namespace {

constexpr int report_schema_version = 1;

struct Job {
    std::vector<double> weights, necksizes;
    std::string out, report;
    int nsamples = 128;
    int band = 63;
    int density = 40;
    int end_depth = 3;
    bool check_only = false;
    double delaunay = std::numeric_limits<double>::quiet_NaN();
    bool cylinder = false;
    int threads = default_threads();
};

struct Check {
    std::string name;
    double value;
    double threshold;
    bool pass;
};

json cplx_list(const std::vector<cplx>& v)
{
    json a = json::array();
    for (const auto& z : v) a.push_back({z.real(), z.imag()});
    return a;
}

json checks_json(const std::vector<Check>& cs, bool& all)
{
    json a = json::array();
    all = true;
    for (const auto& c : cs) {
        a.push_back({{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"pass", c.pass}});
        all = all && c.pass;
    }
    return a;
}

void emit(const Job& job, const json& rep)
{
    const std::string text = rep.dump(2) + "\n";
    if (!job.report.empty()) write_atomic(job.report, text);
    else std::cout << text;
}

json admissibility_json(const AdmissibilityReport& a)
{
    double mn = std::numeric_limits<double>::infinity();
    for (double m : a.tetra_margin) mn = std::min(mn, m);
    return {{"admissible", a.admissible()}, {"neck_ok", a.neck_ok},       {"weight_ok", a.weight_ok},
            {"range_ok", a.range_ok},       {"tetrahedron_ok", a.tetrahedron_ok}, {"cylinder_end", a.cylinder_end},
            {"failures", a.failures},       {"min_tetra_margin", a.tetra_margin.empty() ? 0.0 : mn}};
}

json input_json(const Job& job, const Weights& W)
{
    return {{"weights", W.w},
            {"necksizes", W.n},
            {"H", W.H},
            {"nsamples", job.nsamples},
            {"band", job.band},
            {"mesh_density", job.density},
            {"end_depth", job.end_depth},
            {"threads", job.threads}};
}

json monodromy_json(const MonodromySet& M, const Weights& W, int n, double& max_err)
{
    json ends = json::array();
    const auto lam = unit_samples(n);
    max_err = 0.0;
    int k = 0;
    for (const LaurentLoop* m : {&M.M1, &M.M2, &M.M3}) {
        const auto e = eigenvalue_curves(*m);
        std::vector<cplx> nu(lam.size());
        for (std::size_t j = 0; j < lam.size(); ++j) nu[j] = nu_w(W.w[static_cast<std::size_t>(k)] * W.H * W.H, lam[j]);
        const double err = eigenvalue_error(e, nu);
        max_err = std::max(max_err, err);
        ends.push_back({{"end", k},
                        {"eigenvalue_error", err},
                        {"rho_at_1", {e.rho1_at_1.real(), e.rho1_at_1.imag()}},
                        {"drho_at_1", std::max(std::abs(e.drho1_at_1), std::abs(e.drho2_at_1))},
                        {"max_jump", e.max_jump},
                        {"rho1", cplx_list(e.rho1)},
                        {"rho2", cplx_list(e.rho2)}});
        ++k;
    }
    return {{"product_residual", M.product_residual}, {"generators", ends}};
}

Weights weights_of(const Job& job)
{
    if (!job.weights.empty()) return Weights::from_weights(job.weights[0], job.weights[1], job.weights[2]);
    return Weights::from_necksizes(job.necksizes[0], job.necksizes[1], job.necksizes[2]);
}

int run_check(const Job& job)
{
    const Weights W = weights_of(job);
    const auto adm = check_admissible(W, job.nsamples);
    json rep{{"schema_version", report_schema_version}, {"mode", "check"}, {"input", input_json(job, W)},
             {"admissibility", admissibility_json(adm)}};
    const auto nu = nu_curves(W, job.nsamples);
    const auto pw = pointwise_unitarizability(nu);
    rep["pointwise"] = {{"verdict", pw.verdict},
                        {"failures", pw.failures},
                        {"longest_failure_run", pw.longest_failure_run},
                        {"tetra_margin", adm.tetra_margin},
                        {"triangle_margin", pw.margin}};
    bool verdict = adm.admissible() && pw.verdict;
    if (adm.admissible()) {
        try {
            const auto P = trinoid_potential(W, true);
            const auto M = monodromies(P, cplx(0.5, -0.5), LaurentLoop::constant(Mat2::Identity(), job.band, job.nsamples),
                                       {}, job.threads);
            double err = 0.0;
            rep["monodromy"] = monodromy_json(M, W, job.nsamples, err);
        } catch (const Error& e) {
            rep["monodromy"] = {{"error", e.what()}};
            verdict = false;
        }
    }
    rep["verdict"] = verdict ? "admissible" : "inadmissible";
    emit(job, rep);
    std::cerr << "verdict: " << (verdict ? "admissible" : "inadmissible") << "\n";
    for (const auto& f : adm.failures) std::cerr << "  " << f << "\n";
    return 0;
}

int run_delaunay(const Job& job)
{
    ImmersionParams prm;
    prm.nsamples = job.nsamples;
    prm.band = job.band;
    prm.threads = job.threads;
    prm.validate();
    const double w = job.delaunay;
    const auto prof = delaunay_profile(w, prm);
    const double dl = 2.0 * pi / job.density;
    const int nx = static_cast<int>(std::ceil(job.end_depth * prof.period / dl)) + 1;
    const auto mesh = delaunay_surface(w, prm, -(nx - 1) * dl, 0.0, nx, job.density);
    const auto rr = ring_radii(mesh);
    const auto mh = metric_hopf_diagnostics(mesh, nullptr, 0.0, 0);
    double res = 0.0;
    for (double r : mesh.residual) res = std::max(res, r);
    std::vector<Check> cs{{"closure", mesh.closure_residual, 1e-5, mesh.closure_residual <= 1e-5},
                          {"vertex_residual", res, 1e-6, res <= 1e-6}};
    const double expected = necksize_from_weight(w, 1.0);
    cs.push_back({"necksize", std::abs(signed_necksize(prof) - expected), 1e-3,
                  std::abs(signed_necksize(prof) - expected) <= 1e-3});
    bool all = true;
    json rep{{"schema_version", report_schema_version},
             {"mode", "delaunay"},
             {"input", {{"weight", w}, {"nsamples", job.nsamples}, {"band", job.band}, {"mesh_density", job.density},
                        {"end_depth", job.end_depth}}},
             {"profile",
              {{"period", prof.period},
               {"advance", prof.advance},
               {"neck", prof.neck},
               {"bulge", prof.bulge},
               {"self_intersecting", prof.self_intersecting},
               {"signed_necksize", signed_necksize(prof)},
               {"expected_necksize", expected}}},
             {"radius", {{"min", rr.min_radius}, {"max", rr.max_radius}}},
             {"metric", {{"max_rel_error", mh.max_rel_error}, {"mean_rel_error", mh.mean_rel_error}}},
             {"mesh", {{"path", job.out}, {"vertices", mesh.vertices.size()}, {"faces", 2 * mesh.quads.size()}}}};
    rep["checks"] = checks_json(cs, all);
    rep["pass"] = all;
    if (!job.out.empty()) write_mesh(mesh, job.out);
    emit(job, rep);
    return all ? 0 : 1;
}

int run_trinoid(const Job& job)
{
    const Weights W = weights_of(job);
    const auto adm = check_admissible(W, job.nsamples);
    if (!adm.range_ok || !adm.neck_ok || !adm.weight_ok || !adm.tetrahedron_ok ||
        (adm.cylinder_end && !job.cylinder)) {
        std::cerr << "InvalidWeights:";
        for (const auto& f : adm.failures) std::cerr << " " << f << ";";
        if (adm.cylinder_end && !job.cylinder) std::cerr << " weight 1 (cylinder end) needs --experimental-cylinder-end;";
        std::cerr << "\n";
        return 2;
    }
    ImmersionParams prm;
    prm.nsamples = job.nsamples;
    prm.band = job.band;
    prm.threads = job.threads;
    TrinoidMeshSpec ms;
    ms.nphi = job.density;
    ms.end_periods = job.end_depth;
    std::string stage = "potentials";
    TrinoidSurface T;
    json rep{{"schema_version", report_schema_version}, {"mode", "trinoid"}, {"input", input_json(job, W)},
             {"admissibility", admissibility_json(adm)}};
    std::vector<Check> cs;
    try {
        const auto t0 = std::chrono::steady_clock::now();
        T = trinoid_surface(W, prm, ms, job.cylinder, &stage);
        stage = "diagnostics";
        double eig_err = 0.0;
        rep["monodromy"] = monodromy_json(T.monodromy, W, job.nsamples, eig_err);
        rep["unitarization"] = {{"residual_unitarity", T.unitarizer.residual_unitarity},
                                {"residual_birkhoff", T.unitarizer.residual_birkhoff},
                                {"kernel_residual", kernel_residual(T.section, T.monodromy)},
                                {"discarded_energy", T.section.discarded_energy},
                                {"degenerate_samples", T.section.degenerate_samples},
                                {"det_zeros", cplx_list(T.unitarizer.det_zeros)}};
        const auto sym = reflection_symmetry(T);
        const auto mh = metric_hopf_diagnostics(T.mesh, &T.potential);
        double res = 0.0;
        for (double r : T.mesh.residual) res = std::max(res, r);
        json ends = json::array();
        bool ends_ok = true;
        double worst_ratio = 0.0;
        for (int e = 0; e < 3; ++e) {
            const auto er = end_asymptotics(T, e);
            ends.push_back({{"end", e},
                            {"weight", er.weight},
                            {"neck_radius", er.neck_radius},
                            {"period", er.period},
                            {"axis", {er.axis.axis(0), er.axis.axis(1), er.axis.axis(2)}},
                            {"c0", er.c0},
                            {"c1", er.c1},
                            {"decreasing", er.decreasing},
                            {"final_ratio", er.final_ratio}});
            ends_ok = ends_ok && er.decreasing;
            worst_ratio = std::max(worst_ratio, er.final_ratio);
        }
        rep["ends"] = ends;
        rep["closure"] = {{"residual", T.mesh.closure_residual}, {"duplicates", T.mesh.duplicates.size()}};
        rep["symmetry"] = {{"residual", sym.max_residual},
                           {"reflection_defect", sym.reflection_defect},
                           {"normal", {sym.normal(0), sym.normal(1), sym.normal(2)}}};
        rep["metric"] = {{"max_rel_error", mh.max_rel_error},
                         {"mean_rel_error", mh.mean_rel_error},
                         {"hopf", {mh.hopf_at_sample.real(), mh.hopf_at_sample.imag()}},
                         {"hopf_expected", {mh.hopf_expected.real(), mh.hopf_expected.imag()}}};
        cs = {{"eigenvalues", eig_err, 1e-6, eig_err <= 1e-6},
              {"unitarity", T.unitarizer.residual_unitarity, 1e-6, T.unitarizer.residual_unitarity <= 1e-6},
              {"closure", T.mesh.closure_residual, 1e-5, T.mesh.closure_residual <= 1e-5},
              {"symmetry", sym.max_residual, 1e-4, sym.max_residual <= 1e-4},
              {"end_decay", ends_ok ? 0.0 : 1.0, 0.0, ends_ok},
              {"end_deviation", worst_ratio, 1e-2, worst_ratio <= 1e-2},
              {"vertex_residual", res, 1e-6, res <= 1e-6}};
        stage = "export";
        if (!job.out.empty()) write_mesh(T.mesh, job.out);
        json tm = T.timings;
        tm["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rep["timings"] = tm;
        rep["mesh"] = {{"path", job.out}, {"vertices", T.mesh.vertices.size()}, {"faces", 2 * T.mesh.quads.size()},
                       {"max_vertex_residual", res}};
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidWeights) {
            std::cerr << e.what() << "\n";
            return 2;
        }
        std::cerr << "pipeline failure in stage " << stage << ": " << e.what() << "\n";
        rep["failure"] = {{"stage", stage}, {"error", error_name(e.code())}, {"message", e.what()}};
        // the triangle at lambda = -1 degenerates on the boundary of the admissible set
        const auto nu = nu_curves(W, 2);
        const double m = spherical_triangle_margin(nu[0][1], nu[1][1], nu[2][1]);
        rep["failure"]["margin_at_minus_one"] = m;
        if (m < 0.05)
            std::cerr << "note: weights lie within " << m
                      << " of the admissible boundary at lambda = -1; the unitarizer is nearly singular there and needs more "
                         "lambda samples (--samples), or cannot be resolved when the margin is 0\n";
        emit(job, rep);
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "pipeline failure in stage " << stage << ": " << e.what() << "\n";
        rep["failure"] = {{"stage", stage}, {"error", "exception"}, {"message", e.what()}};
        emit(job, rep);
        return 3;
    }
    bool all = true;
    rep["checks"] = checks_json(cs, all);
    rep["pass"] = all;
    emit(job, rep);
    for (const auto& c : cs) std::cerr << (c.pass ? "PASS " : "FAIL ") << c.name << " " << c.value << "\n";
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"CMC trinoid and Delaunay surface synthesis"};
    Job job;
    auto* ow = app.add_option("--weights", job.weights, "end weights w1 w2 w3")->expected(3);
    auto* on = app.add_option("--necksizes", job.necksizes, "signed necksizes n1 n2 n3 (H = 1)")->expected(3);
    ow->excludes(on);
    app.add_option("--out", job.out, "mesh file, .obj or .ply");
    app.add_option("--samples", job.nsamples, "lambda samples N")->check(CLI::PositiveNumber);
    app.add_option("--band", job.band, "Laurent band K, N >= 2K+2")->check(CLI::PositiveNumber);
    app.add_option("--mesh-density", job.density, "angular cells per end chart, multiple of 4")->check(CLI::PositiveNumber);
    app.add_option("--end-depth", job.end_depth, "Delaunay periods resolved into each end")->check(CLI::PositiveNumber);
    app.add_flag("--check-only", job.check_only, "admissibility and unitarizability only");
    auto* od = app.add_option("--delaunay", job.delaunay, "export a Delaunay surface of weight W");
    od->excludes(ow)->excludes(on);
    app.add_flag("--experimental-cylinder-end", job.cylinder, "allow weight 1 ends");
    app.add_option("--report", job.report, "JSON report path (stdout when absent)");
    app.add_option("--threads", job.threads, "worker threads")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    try {
        if (job.nsamples < 2 * job.band + 2) {
            std::cerr << "--samples must be at least 2 * band + 2\n";
            return 2;
        }
        if (od->count() > 0) return run_delaunay(job);
        if (job.weights.empty() && job.necksizes.empty()) {
            std::cerr << "one of --weights, --necksizes, --delaunay is required\n";
            return 2;
        }
        if (job.check_only) return run_check(job);
        return run_trinoid(job);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        if (e.code() == ErrorCode::InvalidWeights || e.code() == ErrorCode::WeightOutOfRange) return 2;
        return 3;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 3;
    }
}
