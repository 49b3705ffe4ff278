#include "xspod/pod.hpp"

#include "xspod/io.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace xspod {

namespace {

constexpr int kMaxIterations = 100;
constexpr double kDevianceTol = 1e-8;
constexpr double kSeparationBound = 1e3;
constexpr double kProbClamp = 1e-15;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double normal_quantile(double p)
{
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double clamp_p(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& p)
{
    double d = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double pi = clamp_p(p(i));
        d -= 2.0 * (y(i) * std::log(pi) + (1.0 - y(i)) * std::log(1.0 - pi));
    }
    return d;
}

Eigen::VectorXd design_row(const PodFit& fit, double s, std::optional<double> spr)
{
    if (fit.multivariate() != spr.has_value())
        throw ValidationError(fit.multivariate() ? "pod: multivariate fit needs an SPR value"
                                                 : "pod: univariate fit takes no SPR value");
    Eigen::VectorXd x(fit.coefficients.size());
    x(0) = 1.0;
    x(1) = s;
    if (spr)
        x(2) = *spr;
    return x;
}

void require_converged(const PodFit& fit)
{
    if (!fit.converged)
        throw ValidationError("pod: fit did not converge");
}

} // namespace

const char* to_string(Link link)
{
    switch (link) {
    case Link::Logit: return "logit";
    case Link::Probit: return "probit";
    case Link::CLogLog: return "cloglog";
    }
    return "?";
}

Link parse_link(const std::string& text)
{
    if (text == "logit")
        return Link::Logit;
    if (text == "probit")
        return Link::Probit;
    if (text == "cloglog")
        return Link::CLogLog;
    throw ValidationError("unknown link '" + text + "' (logit, probit, cloglog)");
}

double link_fn(Link link, double p)
{
    if (!(p > 0.0 && p < 1.0))
        throw ValidationError("link: probability must be in (0, 1)");
    switch (link) {
    case Link::Logit: return std::log(p / (1.0 - p));
    case Link::Probit: return normal_quantile(p);
    case Link::CLogLog: return std::log(-std::log1p(-p));
    }
    return 0.0;
}

double link_inverse(Link link, double eta)
{
    switch (link) {
    case Link::Logit: return 1.0 / (1.0 + std::exp(-eta));
    case Link::Probit: return normal_cdf(eta);
    case Link::CLogLog: return -std::expm1(-std::exp(eta));
    }
    return 0.0;
}

double link_inverse_derivative(Link link, double eta)
{
    switch (link) {
    case Link::Logit: {
        const double p = link_inverse(link, eta);
        return p * (1.0 - p);
    }
    case Link::Probit: return normal_pdf(eta);
    case Link::CLogLog: return std::exp(eta - std::exp(eta));
    }
    return 0.0;
}

std::vector<DetectionRecord> binarize(std::vector<DetectionRecord> records, double threshold)
{
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw ValidationError("binarize: threshold must be in [0, 1]");
    for (auto& r : records) {
        if (!(r.f1 >= 0.0 && r.f1 <= 1.0))
            throw ValidationError("binarize: f1 outside [0, 1]");
        r.success = r.f1 > threshold;
    }
    return records;
}

PodFit fit_glm(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, Link link)
{
    const Eigen::Index n = X.rows(), k = X.cols();
    if (y.size() != n)
        throw ValidationError("pod fit: covariate and outcome lengths differ");
    if (n < 10)
        throw ValidationError("pod fit: at least 10 observations are required");
    if (!X.allFinite())
        throw ValidationError("pod fit: covariates must be finite");
    const double n_success = y.sum();
    if (n_success == 0.0 || n_success == static_cast<double>(n))
        throw DegenerateDataError("pod fit: all observations have the same outcome");

    // Rank check on column-scaled covariates.
    Eigen::MatrixXd scaled = X;
    for (Eigen::Index j = 0; j < k; ++j) {
        const double norm = scaled.col(j).norm();
        if (norm > 0.0)
            scaled.col(j) /= norm;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
    qr.setThreshold(1e-10);
    if (qr.rank() < k)
        throw RankDeficiencyError("pod fit: covariates are collinear");

    PodFit fit;
    fit.link = link;
    fit.n_observations = static_cast<int>(n);

    // Standard GLM start: mu = (y + 0.5) / 2.
    Eigen::VectorXd eta(n);
    for (Eigen::Index i = 0; i < n; ++i)
        eta(i) = link_fn(link, (y(i) + 0.5) / 2.0);

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd w(n), z(n), p(n);
    double dev_old = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= kMaxIterations; ++it) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double pi = clamp_p(link_inverse(link, eta(i)));
            const double d = std::max(link_inverse_derivative(link, eta(i)), 1e-300);
            w(i) = d * d / (pi * (1.0 - pi));
            z(i) = eta(i) + (y(i) - pi) / d;
        }
        const Eigen::MatrixXd xtw = X.transpose() * w.asDiagonal();
        beta = (xtw * X).ldlt().solve(xtw * z);
        eta = X * beta;
        for (Eigen::Index i = 0; i < n; ++i)
            p(i) = link_inverse(link, eta(i));
        const double dev = deviance(y, p);
        fit.iterations = it;
        const double change = dev_old - dev;
        if (beta.cwiseAbs().maxCoeff() > kSeparationBound && change > 0.0)
            throw SeparationError("pod fit: coefficients diverge (complete or quasi-complete separation)");
        if (std::abs(change) < kDevianceTol || std::abs(change) <= 1e-13 * std::abs(dev)) {
            fit.converged = true;
            dev_old = dev;
            break;
        }
        dev_old = dev;
    }
    fit.deviance = dev_old;
    fit.coefficients = beta;
    // Converged onto a perfect classifier: the optimum is at infinity.
    if ((y - p).cwiseAbs().maxCoeff() < 1e-6)
        throw SeparationError("pod fit: outcomes are perfectly separated by the covariates");

    // Inverse Fisher information at the optimum.
    for (Eigen::Index i = 0; i < n; ++i) {
        const double pi = clamp_p(p(i));
        const double d = link_inverse_derivative(link, eta(i));
        w(i) = d * d / (pi * (1.0 - pi));
    }
    const Eigen::MatrixXd info = X.transpose() * w.asDiagonal() * X;
    Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
    fit.covariance = 0.5 * (cov + cov.transpose());
    return fit;
}

PodFit fit_pod(const Eigen::VectorXd& sizes, const std::vector<bool>& successes, Link link)
{
    if (static_cast<std::size_t>(sizes.size()) != successes.size())
        throw ValidationError("pod fit: sizes and successes lengths differ");
    Eigen::MatrixXd X(sizes.size(), 2);
    Eigen::VectorXd y(sizes.size());
    for (Eigen::Index i = 0; i < sizes.size(); ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = sizes(i);
        y(i) = successes[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
    return fit_glm(X, y, link);
}

PodFit fit_pod_multi(const Eigen::VectorXd& sizes, const Eigen::VectorXd& sprs,
                     const std::vector<bool>& successes, Link link)
{
    if (static_cast<std::size_t>(sizes.size()) != successes.size() || sprs.size() != sizes.size())
        throw ValidationError("pod fit: sizes, sprs and successes lengths differ");
    if (!sprs.allFinite())
        throw ValidationError("pod fit: SPR values must be finite");
    Eigen::MatrixXd X(sizes.size(), 3);
    Eigen::VectorXd y(sizes.size());
    for (Eigen::Index i = 0; i < sizes.size(); ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = sizes(i);
        X(i, 2) = sprs(i);
        y(i) = successes[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
    return fit_glm(X, y, link);
}

PodFit fit_records(const std::vector<DetectionRecord>& records, Link link, bool with_spr, std::size_t* skipped)
{
    std::vector<double> s, spr;
    std::vector<bool> ok;
    std::size_t dropped = 0;
    for (const auto& r : records) {
        if (with_spr && !std::isfinite(r.defect_spr)) {
            ++dropped;
            continue;
        }
        s.push_back(r.defect_size_mm);
        spr.push_back(r.defect_spr);
        ok.push_back(r.success);
    }
    if (skipped)
        *skipped = dropped;
    const Eigen::Map<const Eigen::VectorXd> sv(s.data(), static_cast<Eigen::Index>(s.size()));
    if (!with_spr)
        return fit_pod(sv, ok, link);
    const Eigen::Map<const Eigen::VectorXd> rv(spr.data(), static_cast<Eigen::Index>(spr.size()));
    return fit_pod_multi(sv, rv, ok, link);
}

PodPoint pod_eval(const PodFit& fit, double s, std::optional<double> spr, double z)
{
    require_converged(fit);
    const Eigen::VectorXd x = design_row(fit, s, spr);
    const double eta = x.dot(fit.coefficients);
    const double sd = std::sqrt(std::max(0.0, x.dot(fit.covariance * x)));
    PodPoint pt;
    pt.s = s;
    pt.spr = spr;
    pt.p = link_inverse(fit.link, eta);
    pt.lo95 = std::min(pt.p, link_inverse(fit.link, eta - z * sd));
    pt.hi95 = std::max(pt.p, link_inverse(fit.link, eta + z * sd));
    return pt;
}

double s90(const PodFit& fit, std::optional<double> spr)
{
    require_converged(fit);
    if (!(fit.beta() > 0.0))
        throw NoGrowthError("s90: size coefficient is not positive");
    design_row(fit, 0.0, spr);
    return (link_fn(fit.link, 0.9) - fit.alpha() - fit.gamma() * spr.value_or(0.0)) / fit.beta();
}

double s90_95(const PodFit& fit, std::optional<double> spr)
{
    const double lo_s = s90(fit, spr);
    const double hi_s = lo_s + 20.0 / fit.beta();
    auto lower = [&](double s) { return pod_eval(fit, s, spr, kZOneSided95).lo95; };
    if (lower(lo_s) >= 0.9)
        return lo_s;
    if (lower(hi_s) < 0.9)
        throw BracketError("s90/95: lower band does not reach 0.9 within the search bracket");
    double a = lo_s, b = hi_s;
    while (b - a > 1e-7) {
        const double m = 0.5 * (a + b);
        (lower(m) >= 0.9 ? b : a) = m;
    }
    return b;
}

const char* to_string(Verdict verdict)
{
    switch (verdict) {
    case Verdict::Indistinguishable: return "indistinguishable";
    case Verdict::ABetter: return "a_better";
    case Verdict::BBetter: return "b_better";
    }
    return "?";
}

Comparison compare_fits(const PodFit& a, const PodFit& b, const Eigen::VectorXd& size_grid, std::optional<double> spr)
{
    if (a.link != b.link)
        throw ValidationError("compare: fits use different links");
    require_converged(a);
    require_converged(b);
    Comparison out;
    double a_higher = 0.0;
    for (Eigen::Index i = 0; i < size_grid.size(); ++i) {
        CompareDetail d;
        d.s = size_grid(i);
        d.a = pod_eval(a, d.s, a.multivariate() ? spr : std::nullopt);
        d.b = pod_eval(b, d.s, b.multivariate() ? spr : std::nullopt);
        d.b_outside_a = d.b.p < d.a.lo95 || d.b.p > d.a.hi95;
        d.a_outside_b = d.a.p < d.b.lo95 || d.a.p > d.b.hi95;
        if (d.b_outside_a || d.a_outside_b)
            a_higher += d.a.p > d.b.p ? 1.0 : (d.a.p < d.b.p ? -1.0 : 0.0);
        out.detail.push_back(d);
    }
    const bool separated = std::any_of(out.detail.begin(), out.detail.end(),
                                       [](const CompareDetail& d) { return d.b_outside_a || d.a_outside_b; });
    if (separated) {
        // Net direction of the separated grid points; ties go to the larger gap.
        if (a_higher == 0.0) {
            double gap = 0.0;
            for (const auto& d : out.detail)
                if (d.b_outside_a || d.a_outside_b)
                    gap += d.a.p - d.b.p;
            a_higher = gap;
        }
        out.verdict = a_higher >= 0.0 ? Verdict::ABetter : Verdict::BBetter;
    }
    return out;
}

SizeHistogram binned_histogram(const std::vector<DetectionRecord>& records, int n_bins)
{
    if (n_bins < 2)
        throw ValidationError("histogram: at least 2 bins are required");
    if (records.empty())
        throw ValidationError("histogram: no records");
    double lo = records.front().defect_size_mm, hi = lo;
    for (const auto& r : records) {
        lo = std::min(lo, r.defect_size_mm);
        hi = std::max(hi, r.defect_size_mm);
    }
    SizeHistogram h;
    h.bin_edges = Eigen::ArrayXd::LinSpaced(n_bins + 1, lo, hi);
    h.count = Eigen::ArrayXi::Zero(n_bins);
    Eigen::ArrayXd succ = Eigen::ArrayXd::Zero(n_bins);
    const double width = (hi - lo) / n_bins;
    for (const auto& r : records) {
        int bin = width > 0.0 ? static_cast<int>((r.defect_size_mm - lo) / width) : 0;
        bin = std::clamp(bin, 0, n_bins - 1);
        ++h.count(bin);
        if (r.success)
            succ(bin) += 1.0;
    }
    h.success_fraction = (h.count > 0).select(succ / h.count.cast<double>().max(1.0), 0.0);
    return h;
}

void save_fit(const std::string& path, const PodFit& fit)
{
    std::ostringstream out;
    out << "link," << to_string(fit.link) << '\n';
    out << "coefficients";
    for (Eigen::Index i = 0; i < fit.coefficients.size(); ++i)
        out << ',' << format_g17(fit.coefficients(i));
    out << "\ncovariance";
    for (Eigen::Index r = 0; r < fit.covariance.rows(); ++r)
        for (Eigen::Index c = 0; c < fit.covariance.cols(); ++c)
            out << ',' << format_g17(fit.covariance(r, c));
    out << "\nn," << fit.n_observations << '\n';
    out << "deviance," << format_g17(fit.deviance) << '\n';
    out << "converged," << (fit.converged ? 1 : 0) << '\n';
    out << "iterations," << fit.iterations << '\n';
    write_text_file(path, out.str());
}

PodFit load_fit(const std::string& path)
{
    std::istringstream in(read_text_file(path));
    PodFit fit;
    std::vector<double> cov;
    bool have_link = false, have_coef = false;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty())
            continue;
        const auto f = split_csv(line);
        const std::string& key = f[0];
        if (key == "link") {
            fit.link = parse_link(f.at(1));
            have_link = true;
        } else if (key == "coefficients") {
            fit.coefficients.resize(static_cast<Eigen::Index>(f.size() - 1));
            for (std::size_t i = 1; i < f.size(); ++i)
                fit.coefficients(static_cast<Eigen::Index>(i - 1)) = parse_double(f[i], "coefficient");
            have_coef = true;
        } else if (key == "covariance") {
            for (std::size_t i = 1; i < f.size(); ++i)
                cov.push_back(parse_double(f[i], "covariance"));
        } else if (key == "n") {
            fit.n_observations = static_cast<int>(parse_int(f.at(1), "n"));
        } else if (key == "deviance") {
            fit.deviance = parse_double(f.at(1), "deviance");
        } else if (key == "converged") {
            fit.converged = parse_int(f.at(1), "converged") != 0;
        } else if (key == "iterations") {
            fit.iterations = static_cast<int>(parse_int(f.at(1), "iterations"));
        } else {
            throw ValidationError("fit file: unknown key '" + key + "' in " + path);
        }
    }
    const Eigen::Index k = fit.coefficients.size();
    if (!have_link || !have_coef || (k != 2 && k != 3))
        throw ValidationError("fit file: missing link or coefficients in " + path);
    if (static_cast<Eigen::Index>(cov.size()) != k * k)
        throw ValidationError("fit file: covariance size does not match the coefficients in " + path);
    fit.covariance = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(cov.data(), k, k);
    return fit;
}

} // namespace xspod
