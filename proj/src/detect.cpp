#include "xspod/detect.hpp"

#include "xspod/io.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace xspod {

namespace {

constexpr double kMadToSigma = 1.482602218505602;
constexpr double kMeanDevToSigma = 1.2533141373155001; // sqrt(pi / 2)
constexpr double kBisquareC = 4.685;
constexpr int kRobustIterations = 8;

double median_of(std::vector<double> v)
{
    if (v.empty())
        return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double m = *mid;
    if (v.size() % 2 == 0)
        m = 0.5 * (m + *std::max_element(v.begin(), mid));
    return m;
}

// MAD scale, floored by the mean absolute deviation: counts images near
// saturation are so discrete that the MAD alone collapses to zero.
double mad_sigma(const std::vector<double>& values, bool floored = true)
{
    const double med = median_of(values);
    std::vector<double> dev(values.size());
    std::transform(values.begin(), values.end(), dev.begin(), [med](double v) { return std::abs(v - med); });
    double mean_dev = 0.0;
    for (double d : dev)
        mean_dev += d;
    mean_dev /= static_cast<double>(std::max<std::size_t>(1, dev.size()));
    const double mad = kMadToSigma * median_of(std::move(dev));
    return floored || mad == 0.0 ? std::max(mad, kMeanDevToSigma * mean_dev) : mad;
}

// Separable box mean, window clipped at the border.
Raster<double> box_filter(const Raster<double>& in, int radius)
{
    if (radius <= 0)
        return in;
    const Eigen::Index rows = in.rows(), cols = in.cols();
    Raster<double> tmp(rows, cols), out(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
            const Eigen::Index lo = std::max<Eigen::Index>(0, c - radius), hi = std::min<Eigen::Index>(cols - 1, c + radius);
            tmp(r, c) = in.row(r).segment(lo, hi - lo + 1).mean();
        }
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, r - radius), hi = std::min<Eigen::Index>(rows - 1, r + radius);
        out.row(r) = tmp.middleRows(lo, hi - lo + 1).colwise().mean();
    }
    return out;
}

struct Run {
    Eigen::Index begin = 0;
    Eigen::Index end = 0; // exclusive
    Eigen::Index size() const { return end - begin; }
};

// Longest stretch of above-floor pixels; the object is one interval per row.
Run longest_run(const Eigen::Ref<const Eigen::ArrayXd>& row, double floor)
{
    Run best, cur;
    for (Eigen::Index c = 0; c <= row.size(); ++c) {
        if (c < row.size() && row(c) > floor) {
            if (cur.size() == 0)
                cur.begin = c;
            cur.end = c + 1;
        } else {
            if (cur.size() > best.size())
                best = cur;
            cur = {};
        }
    }
    return best;
}

struct RobustFit {
    Eigen::VectorXd values;
    double scale = 0.0;
};

// Bisquare-weighted least squares on the columns of V.
RobustFit robust_fit(const Eigen::MatrixXd& V, const Eigen::VectorXd& y)
{
    const Eigen::Index n = y.size();
    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    RobustFit out;
    for (int it = 0; it < kRobustIterations; ++it) {
        const Eigen::VectorXd sw = w.cwiseSqrt();
        const Eigen::VectorXd coef = (sw.asDiagonal() * V).colPivHouseholderQr().solve(sw.cwiseProduct(y));
        out.values = V * coef;
        const Eigen::VectorXd r = y - out.values;
        // Unfloored: gross outliers must not inflate the scale they are judged by.
        out.scale = mad_sigma(std::vector<double>(r.data(), r.data() + n), false);
        if (!(out.scale > 0.0))
            break;
        const Eigen::ArrayXd u = r.array() / (kBisquareC * out.scale);
        w = (u.abs() < 1.0).select((1.0 - u.square()).square(), 0.0).matrix();
        if ((w.array() > 0.0).count() <= V.cols())
            break;
    }
    return out;
}

Eigen::MatrixXd power_basis(const Eigen::VectorXd& x, int degree)
{
    Eigen::MatrixXd V(x.size(), degree + 1);
    V.col(0).setOnes();
    for (int k = 1; k <= degree; ++k)
        V.col(k) = V.col(k - 1).cwiseProduct(x);
    return V;
}

// Background along one line. A polynomial in position, and polynomials in the
// normalized chord length of a round body spanning the run (a few sub-pixel
// placements of its edges); whichever leaves the smallest robust scale wins.
// Chord powers follow a cylinder seen side-on far better than a low-order
// position polynomial, so less of a defect is absorbed into the fit.
Eigen::VectorXd fit_background(const Eigen::VectorXd& y, int degree, bool chord)
{
    const Eigen::Index n = y.size();
    RobustFit best = robust_fit(power_basis(Eigen::VectorXd::LinSpaced(n, -1.0, 1.0), degree), y);
    if (!chord)
        return best.values;
    const Eigen::ArrayXd x = Eigen::ArrayXd::LinSpaced(n, 0.5, static_cast<double>(n) - 0.5);
    for (double dr : {0.0, 0.25, 0.5})
        for (double dx : {-0.25, 0.0, 0.25}) {
            const double R = 0.5 * static_cast<double>(n) + dr;
            const Eigen::ArrayXd t = (x - (0.5 * static_cast<double>(n) + dx)) / R;
            const Eigen::VectorXd c = (1.0 - t.square()).max(0.0).sqrt().matrix();
            const RobustFit f = robust_fit(power_basis(c, degree), y);
            if (f.scale < best.scale)
                best = f;
        }
    return best.values;
}

using Pixels = std::vector<std::pair<Eigen::Index, Eigen::Index>>;

// 8-connected components of the set pixels, in raster order of first pixel.
std::vector<Pixels> label_components(const Mask& mask)
{
    const Eigen::Index rows = mask.rows(), cols = mask.cols();
    Mask seen = Mask::Zero(rows, cols);
    std::vector<Pixels> components;
    Pixels stack;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) {
            if (!mask(r, c) || seen(r, c))
                continue;
            Pixels component;
            stack.assign(1, {r, c});
            seen(r, c) = 1;
            while (!stack.empty()) {
                const auto [pr, pc] = stack.back();
                stack.pop_back();
                component.push_back({pr, pc});
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const Eigen::Index nr = pr + dr, nc = pc + dc;
                        if (nr < 0 || nc < 0 || nr >= rows || nc >= cols || seen(nr, nc) || !mask(nr, nc))
                            continue;
                        seen(nr, nc) = 1;
                        stack.push_back({nr, nc});
                    }
            }
            components.push_back(std::move(component));
        }
    return components;
}

} // namespace

const char* to_string(FitAxis axis)
{
    return axis == FitAxis::Row ? "row" : "column";
}

FitAxis parse_fit_axis(const std::string& text)
{
    if (text == "row")
        return FitAxis::Row;
    if (text == "column")
        return FitAxis::Column;
    throw ValidationError("detector: fit_axis must be row or column");
}

void DetectorParams::validate() const
{
    if (background_degree < 0 || background_degree > 6)
        throw ValidationError("detector: background_degree must be in [0, 6]");
    if (!(noise_k > 0.0) || !std::isfinite(noise_k))
        throw ValidationError("detector: noise_k must be positive");
    if (min_component_px < 1)
        throw ValidationError("detector: min_component_px must be >= 1");
    if (smoothing_radius < 0 || noise_block_px < 0 || edge_margin_px < 0 || max_components < 0)
        throw ValidationError("detector: radii and block sizes must be non-negative");
    if (!(grow_k >= 0.0) || !std::isfinite(grow_k))
        throw ValidationError("detector: grow_k must be non-negative");
    if (!std::isfinite(silhouette_floor))
        throw ValidationError("detector: silhouette_floor must be finite");
}

DetectorParams load_detector_params(const std::string& path)
{
    const Metadata meta = read_metadata(path);
    DetectorParams p;
    for (const auto& [key, value] : meta) {
        if (key == "background_degree")
            p.background_degree = static_cast<int>(parse_int(value, "background_degree"));
        else if (key == "noise_k")
            p.noise_k = parse_double(value, "noise_k");
        else if (key == "min_component_px")
            p.min_component_px = static_cast<int>(parse_int(value, "min_component_px"));
        else if (key == "smoothing_radius")
            p.smoothing_radius = static_cast<int>(parse_int(value, "smoothing_radius"));
        else if (key == "noise_block_px")
            p.noise_block_px = static_cast<int>(parse_int(value, "noise_block_px"));
        else if (key == "edge_margin_px")
            p.edge_margin_px = static_cast<int>(parse_int(value, "edge_margin_px"));
        else if (key == "silhouette_floor")
            p.silhouette_floor = parse_double(value, "silhouette_floor");
        else if (key == "grow_k")
            p.grow_k = parse_double(value, "grow_k");
        else if (key == "fit_axis")
            p.fit_axis = parse_fit_axis(value);
        else if (key == "max_components")
            p.max_components = static_cast<int>(parse_int(value, "max_components"));
        else
            throw ValidationError("detector params: unknown key '" + key + "'");
    }
    p.validate();
    return p;
}

std::string format_detector_params(const DetectorParams& p)
{
    std::ostringstream out;
    out << "background_degree = " << p.background_degree << '\n'
        << "edge_margin_px = " << p.edge_margin_px << '\n'
        << "fit_axis = " << to_string(p.fit_axis) << '\n'
        << "grow_k = " << format_g17(p.grow_k) << '\n'
        << "max_components = " << p.max_components << '\n'
        << "min_component_px = " << p.min_component_px << '\n'
        << "noise_block_px = " << p.noise_block_px << '\n'
        << "noise_k = " << format_g17(p.noise_k) << '\n'
        << "silhouette_floor = " << format_g17(p.silhouette_floor) << '\n'
        << "smoothing_radius = " << p.smoothing_radius << '\n';
    return out.str();
}

Mask detect_baseline(const RasterF& projection, const DetectorParams& params)
{
    params.validate();
    if (!projection.allFinite())
        throw ValidationError("detect: projection contains non-finite values");
    const Eigen::Index rows = projection.rows(), cols = projection.cols();
    const Raster<double> img = projection.cast<double>();

    // Residual (background - observed) on silhouette pixels, NaN elsewhere.
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    Raster<double> residual = Raster<double>::Constant(rows, cols, nan);
    const int n_coef = params.background_degree + 1;
    const bool by_column = params.fit_axis == FitAxis::Column;
    const Eigen::Index n_lines = by_column ? cols : rows;
    for (Eigen::Index l = 0; l < n_lines; ++l) {
        const Eigen::ArrayXd line = by_column ? Eigen::ArrayXd(img.col(l)) : Eigen::ArrayXd(img.row(l).transpose());
        const Run run = longest_run(line, params.silhouette_floor);
        if (run.size() < std::max<Eigen::Index>(n_coef + 2, 2 * params.edge_margin_px + 1))
            continue;
        const Eigen::VectorXd y = line.segment(run.begin, run.size()).matrix();
        const Eigen::VectorXd fit = fit_background(y, params.background_degree, !by_column);
        for (Eigen::Index i = params.edge_margin_px; i < run.size() - params.edge_margin_px; ++i)
            (by_column ? residual(run.begin + i, l) : residual(l, run.begin + i)) = fit(i) - y(i);
    }

    // Matched filter: average residuals over the window, ignoring pixels
    // outside the fitted runs.
    if (params.smoothing_radius > 0) {
        const Raster<double> valid = residual.isNaN().select(0.0, Raster<double>::Ones(rows, cols));
        const Raster<double> sum = box_filter(valid * residual.isNaN().select(0.0, residual), params.smoothing_radius);
        const Raster<double> weight = box_filter(valid, params.smoothing_radius);
        residual = (valid > 0.0).select(sum / weight, nan);
    }

    // Noise scale: one global MAD or one per block.
    Raster<double> sigma = Raster<double>::Constant(rows, cols, nan);
    auto collect = [&](Eigen::Index r0, Eigen::Index c0, Eigen::Index nr, Eigen::Index nc) {
        std::vector<double> v;
        for (Eigen::Index r = r0; r < r0 + nr; ++r)
            for (Eigen::Index c = c0; c < c0 + nc; ++c)
                if (!std::isnan(residual(r, c)))
                    v.push_back(residual(r, c));
        return v;
    };
    const std::vector<double> all = collect(0, 0, rows, cols);
    if (all.empty())
        return Mask::Zero(rows, cols);
    const double global_sigma = mad_sigma(all);
    sigma.setConstant(global_sigma);
    if (params.noise_block_px > 0) {
        const Eigen::Index b = params.noise_block_px;
        const std::size_t min_samples = static_cast<std::size_t>(std::max<Eigen::Index>(16, b * b / 4));
        for (Eigen::Index r0 = 0; r0 < rows; r0 += b)
            for (Eigen::Index c0 = 0; c0 < cols; c0 += b) {
                const Eigen::Index nr = std::min(b, rows - r0), nc = std::min(b, cols - c0);
                const std::vector<double> v = collect(r0, c0, nr, nc);
                if (v.size() >= min_samples)
                    sigma.block(r0, c0, nr, nc).setConstant(mad_sigma(v));
            }
    }

    Mask mask = Mask::Zero(rows, cols);
    Raster<double> score = Raster<double>::Zero(rows, cols);
    // res > 1e-9 keeps round-off out when the noise estimate is zero.
    auto above = [&](Eigen::Index r, Eigen::Index c, double k) {
        const double res = residual(r, c);
        return !std::isnan(res) && res > k * sigma(r, c) && res > 1e-9;
    };
    Pixels grow;
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            if (above(r, c, params.noise_k)) {
                mask(r, c) = 1;
                grow.push_back({r, c});
            }
    // Hysteresis: extend seeds through neighbours above the lower threshold.
    if (params.grow_k > 0.0 && params.grow_k < params.noise_k) {
        while (!grow.empty()) {
            const auto [r, c] = grow.back();
            grow.pop_back();
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const Eigen::Index nr = r + dr, nc = c + dc;
                    if (nr < 0 || nc < 0 || nr >= rows || nc >= cols || mask(nr, nc) || !above(nr, nc, params.grow_k))
                        continue;
                    mask(nr, nc) = 1;
                    grow.push_back({nr, nc});
                }
        }
    }
    for (Eigen::Index i = 0; i < mask.size(); ++i)
        if (mask.data()[i])
            score.data()[i] = sigma.data()[i] > 0.0 ? residual.data()[i] / sigma.data()[i] : residual.data()[i];

    // Size filter, then optionally keep only the most significant components.
    std::vector<std::pair<double, Pixels>> kept;
    for (Pixels& component : label_components(mask)) {
        if (static_cast<int>(component.size()) < params.min_component_px)
            continue;
        double total = 0.0;
        for (const auto& [r, c] : component)
            total += score(r, c);
        kept.emplace_back(total, std::move(component));
    }
    if (params.max_components > 0 && static_cast<int>(kept.size()) > params.max_components) {
        std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        kept.resize(static_cast<std::size_t>(params.max_components));
    }
    Mask out = Mask::Zero(rows, cols);
    for (const auto& [total, component] : kept)
        for (const auto& [r, c] : component)
            out(r, c) = 1;
    return out;
}

Mask remove_small_components(const Mask& mask, int min_size)
{
    Mask out = Mask::Zero(mask.rows(), mask.cols());
    for (const Pixels& component : label_components(mask))
        if (static_cast<int>(component.size()) >= min_size)
            for (const auto& [r, c] : component)
                out(r, c) = 1;
    return out;
}

std::map<int, Mask> import_masks(const std::string& directory,
                                 std::optional<std::pair<Eigen::Index, Eigen::Index>> expected)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(directory))
        throw IoError("import masks: not a directory: " + directory);
    const std::string suffix = "_mask.xr32";
    std::map<int, Mask> masks;
    for (const auto& entry : fs::directory_iterator(directory)) {
        const std::string name = entry.path().filename().string();
        if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
            continue;
        const int id = static_cast<int>(parse_int(name.substr(0, name.size() - suffix.size()), "mask phantom id"));
        Mask m = read_mask_xr32(entry.path().string());
        if (expected && (m.rows() != expected->first || m.cols() != expected->second))
            throw ValidationError("import masks: " + name + " has dimensions that differ from the projections");
        masks.emplace(id, std::move(m));
    }
    return masks;
}

double f1_score(const Mask& predicted, const Mask& truth)
{
    if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols())
        throw ValidationError("f1: mask dimensions differ");
    const auto p = predicted != 0;
    const auto t = truth != 0;
    const double tp = static_cast<double>((p && t).count());
    const double fp = static_cast<double>((p && !t).count());
    const double fn = static_cast<double>((!p && t).count());
    const double denom = 2.0 * tp + fp + fn;
    return denom == 0.0 ? 1.0 : 2.0 * tp / denom;
}

std::vector<DetectionRecord> score_dataset(const std::map<int, Mask>& masks,
                                           const std::map<int, Mask>& ground_truths,
                                           const std::vector<Phantom>& phantoms,
                                           const std::map<int, RasterF>& spr_maps,
                                           const AcquisitionGeometry& geometry)
{
    std::vector<DetectionRecord> records;
    for (const Phantom& ph : phantoms) {
        const auto m = masks.find(ph.id);
        if (m == masks.end())
            throw ValidationError("score: missing mask for phantom " + std::to_string(ph.id));
        const auto t = ground_truths.find(ph.id);
        if (t == ground_truths.end())
            throw ValidationError("score: missing ground truth for phantom " + std::to_string(ph.id));
        const auto s = spr_maps.find(ph.id);
        if (s == spr_maps.end())
            throw ValidationError("score: missing SPR map for phantom " + std::to_string(ph.id));

        DetectionRecord rec;
        rec.phantom_id = ph.id;
        rec.defect_size_mm = defect_size(ph, geometry);
        rec.f1 = f1_score(m->second, t->second);
        // Masked mean of finite SPR values; NaN when none are finite.
        double sum = 0.0;
        std::size_t used = 0;
        if (s->second.rows() != t->second.rows() || s->second.cols() != t->second.cols())
            throw ValidationError("score: SPR map dimensions differ for phantom " + std::to_string(ph.id));
        for (Eigen::Index i = 0; i < t->second.size(); ++i) {
            const float v = s->second.data()[i];
            if (t->second.data()[i] && std::isfinite(v)) {
                sum += v;
                ++used;
            }
        }
        rec.defect_spr = used ? sum / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
        records.push_back(rec);
    }
    std::sort(records.begin(), records.end(),
              [](const DetectionRecord& a, const DetectionRecord& b) { return a.phantom_id < b.phantom_id; });
    return records;
}

void save_records(const std::string& path, const std::vector<DetectionRecord>& records)
{
    std::ostringstream out;
    out << "phantom_id,defect_size_mm,defect_spr,f1\n";
    for (const auto& r : records)
        out << r.phantom_id << ',' << format_g9(r.defect_size_mm) << ',' << format_g9(r.defect_spr) << ','
            << format_g9(r.f1) << '\n';
    write_text_file(path, out.str());
}

std::vector<DetectionRecord> load_records(const std::string& path)
{
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || trim(line) != "phantom_id,defect_size_mm,defect_spr,f1")
        throw ValidationError("records: unexpected header in " + path);
    std::vector<DetectionRecord> records;
    while (std::getline(in, line)) {
        if (trim(line).empty())
            continue;
        const auto f = split_csv(line);
        if (f.size() != 4)
            throw ValidationError("records: expected 4 fields in " + path);
        DetectionRecord r;
        r.phantom_id = static_cast<int>(parse_int(f[0], "phantom_id"));
        r.defect_size_mm = parse_double(f[1], "defect_size_mm");
        const std::string spr = trim(f[2]);
        r.defect_spr = spr == "nan" ? std::numeric_limits<double>::quiet_NaN() : parse_double(spr, "defect_spr");
        r.f1 = parse_double(f[3], "f1");
        if (!(r.f1 >= 0.0 && r.f1 <= 1.0))
            throw ValidationError("records: f1 outside [0, 1]");
        records.push_back(r);
    }
    return records;
}

} // namespace xspod
