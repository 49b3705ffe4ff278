// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.
#include "support.hpp"

#include "xspod/io.hpp"
#include "xspod/montecarlo.hpp"
#include "xspod/pipeline.hpp"
#include "xspod/pod.hpp"
#include "xspod/projector.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace xspod;
using namespace xspod::test;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;

    void check(bool ok, const std::string& what)
    {
        pass = pass && ok;
        notes.push_back((ok ? "ok    " : "FAIL  ") + what);
    }
};

std::string fmt(const char* f, double a)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string fmt(const char* f, double a, double b)
{
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

std::string fmt(const char* f, double a, double b, double c)
{
    char buf[200];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Every simulated set feeds the log-identity check.
int identity_checked = 0;
int identity_failed = 0;

void check_identity(const ProjectionSet& set)
{
    ++identity_checked;
    const float eps = std::numeric_limits<float>::epsilon();
    for (Eigen::Index i = 0; i < set.spr.size(); ++i) {
        const std::int64_t P = set.tally.primary.data()[i];
        if (P <= 0)
            continue;
        const double lhs = static_cast<double>(set.primary_only_log.data()[i]) - static_cast<double>(set.with_scatter_log.data()[i]);
        const double rhs = std::log1p(static_cast<double>(set.tally.scatter.data()[i]) / static_cast<double>(P));
        // Both logs are stored as float; allow their rounding and no more.
        const double scale = std::max({1.0, std::abs(static_cast<double>(set.primary_only_log.data()[i])),
                                       std::abs(static_cast<double>(set.with_scatter_log.data()[i]))});
        if (std::abs(lhs - rhs) > 2.0 * eps * scale) {
            ++identity_failed;
            return;
        }
    }
}

ProjectionSet simulated(const Phantom& p, const Spectrum& s, const Material& m, std::int64_t photons,
                        std::uint64_t seed, int workers)
{
    SimulationOptions o;
    o.n_photons = photons;
    o.seed = seed;
    o.workers = workers;
    ProjectionSet set = simulate(p, AcquisitionGeometry{}, s, m, o);
    check_identity(set);
    return set;
}

// --- 1 -----------------------------------------------------------------

Phantom criterion1_phantom()
{
    return cylinder_phantom(10.0, 40.0, "pmma", Vec3::Zero(), Vec3::Constant(0.5));
}

ProjectionSet criterion1_set(int workers)
{
    return simulated(criterion1_phantom(), kramers_spectrum(90.0), material("pmma"), 10'000'000, 1, workers);
}

Outcome criterion1()
{
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const ProjectionSet set = criterion1_set(8);
    const double runtime = seconds_since(t0);
    const AcquisitionGeometry g;
    // Pixel-area average: the centre ray is biased on the steep silhouette edge.
    ProjectorOptions po;
    po.supersampling = 4;
    const Projection det = forward_project(criterion1_phantom(), g, kramers_spectrum(90.0), material("pmma"),
                                           expected_flatfield(g, 10'000'000), po);
    // A 3 sigma Poisson band on counts; the log image is a monotone map of it.
    const Eigen::ArrayXXd E = det.expected_counts.cast<double>();
    const Eigen::ArrayXXd P = set.tally.primary.cast<double>();
    const double within = ((P - E).abs() <= 3.0 * E.sqrt()).cast<double>().mean();
    o.check(within >= 0.99, fmt("%.4f of pixels within 3 sigma (need 0.99)", within));
    o.check(runtime <= 600.0, fmt("simulation %.1f s (limit 600 s)", runtime));
    return o;
}

// --- 2 -----------------------------------------------------------------

double chi_square_p(const Eigen::ArrayXd& observed, const Eigen::ArrayXd& expected)
{
    const double stat = ((observed - expected).square() / expected).sum();
    const boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

Eigen::ArrayXd binned_density(const std::function<double(double)>& f, int bins, double n)
{
    Eigen::ArrayXd mass(bins);
    for (int b = 0; b < bins; ++b) {
        const double lo = -1.0 + 2.0 * b / bins, hi = -1.0 + 2.0 * (b + 1) / bins;
        mass(b) = boost::math::quadrature::gauss_kronrod<double, 21>::integrate(f, lo, hi);
    }
    return n * mass / mass.sum();
}

Outcome criterion2()
{
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const int bins = 50, n = 1'000'000;
    auto histogram = [&](const std::function<ScatterSample(PhotonStream&)>& draw, std::uint64_t seed) {
        Eigen::ArrayXd h = Eigen::ArrayXd::Zero(bins);
        for (int i = 0; i < n; ++i) {
            PhotonStream rng(seed, static_cast<std::uint64_t>(i));
            const double c = draw(rng).cos_theta;
            h(std::clamp(static_cast<int>((c + 1.0) / 2.0 * bins), 0, bins - 1)) += 1.0;
        }
        return h;
    };
    const Eigen::ArrayXd kn = histogram([](PhotonStream& r) { return compton_scatter(100.0, r); }, 21);
    const double p_kn = chi_square_p(kn, binned_density([](double c) { return klein_nishina_density(100.0, c); }, bins, n));
    o.check(p_kn > 0.01, fmt("Klein-Nishina at 100 keV: p = %.4f", p_kn));
    const Eigen::ArrayXd th = histogram([](PhotonStream& r) { return rayleigh_scatter(r); }, 22);
    const double p_th = chi_square_p(th, binned_density([](double c) { return 1.0 + c * c; }, bins, n));
    o.check(p_th > 0.01, fmt("Thomson: p = %.4f", p_th));
    const double shift = compton_energy(100.0, 0.0);
    o.check(std::abs(shift - 83.63) <= 0.01, fmt("Compton (100 keV, 90 deg) = %.4f keV", shift));
    const double runtime = seconds_since(t0);
    o.check(runtime <= 30.0, fmt("%.1f s (limit 30 s)", runtime));
    return o;
}

// --- 3 -----------------------------------------------------------------

Outcome criterion3()
{
    Outcome o;
    struct Anchor {
        const char* material;
        double kv, hvl_mm, tol;
    };
    const Anchor anchors[] = {
        {"pmma", 90, 27.8, 0.15}, {"aluminum", 90, 4.28, 0.20}, {"aluminum", 150, 6.25, 0.20},
        {"aluminum", 300, 17.9, 0.20}, {"iron", 300, 3.85, 0.20}, {"iron", 450, 4.6, 0.20},
    };
    for (const auto& a : anchors) {
        const double h = hvl(material(a.material), kramers_spectrum(a.kv));
        const double rel = h / a.hvl_mm - 1.0;
        o.check(std::abs(rel) <= a.tol, std::string(a.material) + fmt(" at %.0f kV: %.3f mm", a.kv, h) +
                                            fmt(" vs %.3f mm (%+.1f%%)", a.hvl_mm, 100.0 * rel));
    }
    const Material fe = material("iron");
    const double exact = std::log(2.0) / mu(fe, 100.0).total;
    const double got = hvl(fe, mono(100.0));
    o.check(std::abs(got - exact) <= 1e-6, fmt("monochromatic 100 keV iron: %.9f vs ln2/mu %.9f", got, exact));
    return o;
}

// --- 4 -----------------------------------------------------------------

Outcome criterion4()
{
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> size(0.0, 2.5), u(0.0, 1.0);
    const int n = 10'000;
    Eigen::VectorXd s(n);
    std::vector<bool> y(n);
    for (int i = 0; i < n; ++i) {
        s(i) = size(rng);
        y[i] = u(rng) < 1.0 / (1.0 + std::exp(-(-6.0 + 5.0 * s(i))));
    }
    const PodFit fit = fit_pod(s, y);
    const double z0 = (fit.coefficients(0) + 6.0) / std::sqrt(fit.covariance(0, 0));
    const double z1 = (fit.coefficients(1) - 5.0) / std::sqrt(fit.covariance(1, 1));
    o.check(fit.converged && std::abs(z0) <= 3.0 && std::abs(z1) <= 3.0,
            fmt("beta = (%.4f, %.4f), ", fit.coefficients(0), fit.coefficients(1)) + fmt("z = (%.2f, %.2f)", z0, z1));

    PodFit exact;
    exact.coefficients = Eigen::Vector2d(-6.0, 5.0);
    exact.covariance = 0.01 * Eigen::Matrix2d::Identity();
    exact.converged = true;
    exact.n_observations = n;
    // 1.63944 is the five-decimal rounding of (ln 9 + 6) / 5.
    o.check(std::abs(s90(exact) - 1.63944) < 5e-6, fmt("closed-form s90 = %.9f", s90(exact)));
    const double s90_exact = (std::log(9.0) + 6.0) / 5.0;
    o.check(std::abs(s90(exact) - s90_exact) <= 1e-9, fmt("s90 vs (ln 9 + 6)/5: |diff| = %.2e", std::abs(s90(exact) - s90_exact)));

    bool ordered = true, equivariant = true;
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        PodFit f = exact;
        f.coefficients = Eigen::Vector2d(-2.0 - 8.0 * u(rng), 0.5 + 9.5 * u(rng));
        const double v = 0.001 + 0.05 * u(rng);
        f.covariance << v, -0.5 * v, -0.5 * v, v;
        const double a = s90(f), b = s90_95(f);
        ordered = ordered && b >= a;
        const double k = 0.2 + 5.0 * u(rng);
        PodFit scaled = f;
        scaled.coefficients(1) /= k;
        scaled.covariance(0, 1) /= k;
        scaled.covariance(1, 0) /= k;
        scaled.covariance(1, 1) /= k * k;
        const double rel = std::abs(s90(scaled) / (k * a) - 1.0);
        worst = std::max(worst, rel);
        equivariant = equivariant && rel <= 1e-8;
    }
    o.check(ordered, "s90_95 >= s90 over 200 random fits");
    o.check(equivariant, fmt("scale equivariance, worst relative error %.2e", worst));
    const double runtime = seconds_since(t0);
    o.check(runtime <= 5.0, fmt("%.2f s (limit 5 s)", runtime));
    return o;
}

// --- 5 -----------------------------------------------------------------

std::vector<double> ranks(const std::vector<double>& v)
{
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]])
            ++j;
        for (std::size_t k = i; k <= j; ++k)
            r[idx[k]] = 0.5 * static_cast<double>(i + j);
        i = j + 1;
    }
    return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b)
{
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    const Eigen::ArrayXd A = Eigen::Map<const Eigen::ArrayXd>(ra.data(), static_cast<Eigen::Index>(ra.size()));
    const Eigen::ArrayXd B = Eigen::Map<const Eigen::ArrayXd>(rb.data(), static_cast<Eigen::Index>(rb.size()));
    const Eigen::ArrayXd da = A - A.mean(), db = B - B.mean();
    return (da * db).sum() / std::sqrt(da.square().sum() * db.square().sum());
}

Outcome criterion5()
{
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t photons = 1'000'000;
    const double kvs[] = {90.0, 150.0, 300.0, 450.0};
    std::map<std::string, std::vector<double>> scatter;
    for (const char* m : {"pmma", "aluminum", "iron"}) {
        const Material mat = material(m);
        for (double kv : kvs) {
            const ProjectionSet set = simulated(cylinder_phantom(20.0, 40.0, m), kramers_spectrum(kv), mat, photons, 5, 0);
            scatter[m].push_back(static_cast<double>(set.tally.scatter.sum()));
        }
    }
    o.check(scatter["pmma"][0] > scatter["aluminum"][0],
            fmt("90 kV scattered counts: PMMA %.0f > aluminum %.0f", scatter["pmma"][0], scatter["aluminum"][0]));
    for (const auto& [m, counts] : scatter) {
        std::ostringstream line;
        line << m << " scattered counts at 90/150/300/450 kV:";
        for (double c : counts)
            line << ' ' << static_cast<long long>(c);
        o.check(std::is_sorted(counts.begin(), counts.end(), std::less_equal<>()) &&
                    std::adjacent_find(counts.begin(), counts.end()) == counts.end(),
                line.str() + " (strictly increasing)");
    }

    PhantomParamRanges ranges;
    ranges.material = "iron";
    const PhantomSet phantoms = generate_set(300, 0, 0, 200, ranges);
    const Material fe = material("iron");
    const Spectrum s300 = kramers_spectrum(300.0);
    const AcquisitionGeometry g;
    std::vector<double> spr, att;
    int skipped = 0;
    for (const auto& p : phantoms.phantoms) {
        const ProjectionSet set = simulated(p, s300, fe, photons, 300 + static_cast<std::uint64_t>(p.id), 0);
        const Mask m = ground_truth_mask(p, g);
        if (m.cast<int>().sum() == 0) {
            ++skipped;
            continue;
        }
        // Opaque defects (P = 0 on every mask pixel) have no SPR.
        double sp = std::nan("");
        try {
            sp = defect_spr(set, m);
        } catch (const Error&) {
        }
        if (!std::isfinite(sp)) {
            ++skipped;
            continue;
        }
        spr.push_back(sp);
        att.push_back(attenuation_at(set, m));
    }
    const double rho = spr.size() > 2 ? spearman(spr, att) : std::nan("");
    o.check(rho > 0.5, fmt("iron 300 kV: Spearman(SPR, attenuation) = %.3f over %.0f phantoms", rho, static_cast<double>(spr.size())) +
                           fmt(" (%.0f without a finite SPR)", skipped));
    const double runtime = seconds_since(t0);
    o.check(runtime <= 3600.0, fmt("%.0f s (limit 3600 s)", runtime));
    return o;
}

// --- 6 -----------------------------------------------------------------

Outcome criterion6()
{
    Outcome o;
    if (identity_checked == 0) {
        // Run alone: simulate a few phantoms so there is something to check.
        const PhantomSet set = generate_set(6, 0, 0, 5, PhantomParamRanges{});
        for (const auto& p : set.phantoms)
            simulated(p, kramers_spectrum(90.0), material("pmma"), 1'000'000, 6, 0);
    }
    o.check(identity_failed == 0, fmt("%.0f of %.0f simulated phantoms satisfy the identity on every P > 0 pixel",
                                      static_cast<double>(identity_checked - identity_failed),
                                      static_cast<double>(identity_checked)));
    return o;
}

// --- 7 -----------------------------------------------------------------

std::vector<std::vector<std::string>> read_csv(const std::string& path)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ','))
            fields.push_back(f);
        rows.push_back(fields);
    }
    return rows;
}

ExperimentConfig fe450_config(const std::string& output)
{
    const std::string path = std::string(XSPOD_CONFIG_DIR) + "/fe450.conf";
    ExperimentConfig c = parse_config(read_text_file(path), XSPOD_CONFIG_DIR);
    c.output = output;
    return c;
}

std::string fe450_dir(int workers)
{
    static const std::string root = scratch_dir("acceptance");
    return root + "/fe450_w" + std::to_string(workers);
}

double fe450_runtime = 0.0;

void run_fe450(int workers)
{
    const std::string out = fe450_dir(workers);
    if (fs::exists(out + "/manifest.json") && load_manifest(out + "/manifest.json").complete())
        return;
    const auto t0 = std::chrono::steady_clock::now();
    run(fe450_config(out), RunOptions{workers, nullptr});
    if (workers == 8)
        fe450_runtime = seconds_since(t0);
}

Outcome criterion7()
{
    Outcome o;
    fs::remove_all(fe450_dir(8));
    run_fe450(8);
    const std::string out = fe450_dir(8);
    o.check(fe450_runtime <= 7200.0, fmt("pipeline %.0f s (limit 7200 s)", fe450_runtime));

    for (const char* v : {"with", "without"}) {
        const std::string path = out + "/fit_" + v + ".csv";
        if (!file_exists(path)) {
            o.check(false, std::string("fit ") + v + ": not produced (see pod_status.csv)");
            continue;
        }
        const PodFit f = load_fit(path);
        const double a = s90(f), b = s90_95(f);
        o.check(f.converged && std::isfinite(a) && std::isfinite(b),
                std::string("fit ") + v + fmt(": s90 %.3f mm, s90/95 %.3f mm", a, b));
    }

    const auto t1 = read_csv(out + "/report/table1.csv");
    o.check(!t1.empty() && t1[0] == std::vector<std::string>{"variant", "s90_mm", "s90_95_mm"}, "table 1 schema");
    const auto t2 = read_csv(out + "/report/table2.csv");
    const std::vector<std::string> t2_header{"variant", "min_spr", "max_spr", "gamma", "s90_at_zero_spr_mm",
                                             "s90_at_min_spr_mm", "s90_at_max_spr_mm"};
    o.check(!t2.empty() && t2[0] == t2_header, "table 2 schema");
    for (std::size_t r = 1; r < t2.size(); ++r) {
        if (t2[r].size() != t2_header.size())
            continue;
        const double gamma = std::stod(t2[r][3]), zero = std::stod(t2[r][4]), top = std::stod(t2[r][6]);
        o.check(std::isfinite(gamma), t2[r][0] + fmt(": multivariate gamma = %g", gamma));
        o.check(std::isfinite(zero) && std::isfinite(top) && top >= zero,
                t2[r][0] + fmt(": s90 at max SPR %.3f mm >= at zero SPR %.3f mm", top, zero));
    }

    const std::string cmp = read_text_file(out + "/compare.txt");
    const bool verdict = cmp.find("verdict = ") != std::string::npos && cmp.find("verdict = unavailable") == std::string::npos;
    o.check(verdict, "compare verdict: " + cmp.substr(0, cmp.find('\n', cmp.find("verdict"))).substr(cmp.find("verdict")));

    int successes = 0, total = 0;
    for (const auto& rec : load_records(out + "/records_with.csv")) {
        ++total;
        successes += rec.f1 >= 0.5;
    }
    o.notes.push_back(fmt("info  with-scatter detections with F1 >= 0.5: %.0f of %.0f", successes, total));
    return o;
}

// --- 8 -----------------------------------------------------------------

std::map<std::string, std::string> checksums(const std::string& dir)
{
    std::map<std::string, std::string> sums;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        // These two name the output directory.
        if (e.is_regular_file() && name != "manifest.json" && name != "config.txt")
            sums[fs::relative(e.path(), dir).string()] = hex64(fnv1a(read_text_file(e.path().string())));
    }
    return sums;
}

Outcome criterion8()
{
    Outcome o;
    const ProjectionSet a = criterion1_set(1), b = criterion1_set(8);
    o.check(a.tally == b.tally && (a.with_scatter_log == b.with_scatter_log).all() &&
                (a.primary_only_log == b.primary_only_log).all(),
            "criterion 1 rasters identical with 1 and 8 workers");

    run_fe450(8);
    fs::remove_all(fe450_dir(1));
    run_fe450(1);
    const auto s1 = checksums(fe450_dir(1)), s8 = checksums(fe450_dir(8));
    int rasters = 0, fits = 0;
    for (const auto& [k, v] : s1) {
        rasters += k.ends_with(".xr32");
        fits += k.rfind("fit_", 0) == 0;
    }
    o.check(s1 == s8, fmt("criterion 7 run identical with 1 and 8 workers (%.0f files, %.0f rasters, %.0f fits)",
                          static_cast<double>(s1.size()), rasters, fits));
    return o;
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
        {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},
        {5, criterion5}, {6, criterion6}, {7, criterion7}, {8, criterion8},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i)
        selected.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& [id, fn] : criteria) {
        if (!selected.empty() && !selected.count(id))
            continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = fn();
        } catch (const std::exception& e) {
            out.check(false, std::string("exception: ") + e.what());
        }
        for (const auto& n : out.notes)
            std::printf("    %s\n", n.c_str());
        std::printf("criterion %d: %s (%.1f s)\n", id, out.pass ? "PASS" : "FAIL", seconds_since(t0));
        std::fflush(stdout);
        failed += !out.pass;
    }
    return failed == 0 ? 0 : 1;
}
