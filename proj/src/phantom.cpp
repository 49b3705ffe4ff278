#include "xspod/phantom.hpp"

#include "xspod/io.hpp"
#include "xspod/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace xspod {

namespace {

constexpr int kMaxPlacementAttempts = 10000;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Interval {
    double lo = kInf;
    double hi = -kInf;

    bool empty() const { return !(hi > lo); }
};

Interval intersect(Interval a, Interval b)
{
    return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

/// Roots of a t^2 + b t + c = 0, as an interval; empty when no real roots.
Interval quadratic_interval(double a, double b, double c)
{
    const double disc = b * b - 4.0 * a * c;
    if (!(disc > 0.0))
        return {};
    const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
    double t1 = q / a;
    double t2 = q != 0.0 ? c / q : -t1;
    if (t1 > t2)
        std::swap(t1, t2);
    return {t1, t2};
}

Interval cylinder_interval(const CylinderSpec& cyl, const Ray& ray)
{
    if (!(cyl.radius > 0.0) || !(cyl.height > 0.0))
        return {};
    const Vec3& p = ray.origin;
    const Vec3& d = ray.direction;

    Interval radial;
    const double a = d.x() * d.x() + d.y() * d.y();
    const double c = p.x() * p.x() + p.y() * p.y() - cyl.radius * cyl.radius;
    if (a < 1e-300) {
        if (!(c < 0.0))
            return {};
        radial = {-kInf, kInf};
    } else {
        radial = quadratic_interval(a, 2.0 * (p.x() * d.x() + p.y() * d.y()), c);
    }

    Interval axial;
    const double half = 0.5 * cyl.height;
    if (d.z() == 0.0) {
        if (!(std::abs(p.z()) < half))
            return {};
        axial = {-kInf, kInf};
    } else {
        const double t1 = (-half - p.z()) / d.z();
        const double t2 = (half - p.z()) / d.z();
        axial = {std::min(t1, t2), std::max(t1, t2)};
    }
    return intersect(radial, axial);
}

bool has_volume(const EllipsoidCavity& cavity)
{
    return (cavity.semi_axes.array() > 0.0).all();
}

Interval ellipsoid_interval(const EllipsoidCavity& cavity, const Ray& ray)
{
    if (!has_volume(cavity))
        return {};
    const Vec3 p = (ray.origin - cavity.center).cwiseQuotient(cavity.semi_axes);
    const Vec3 d = ray.direction.cwiseQuotient(cavity.semi_axes);
    return quadratic_interval(d.squaredNorm(), 2.0 * p.dot(d), p.squaredNorm() - 1.0);
}

/// Largest squared distance from the z axis over the cavity's xy ellipse.
double max_radial_sq(const EllipsoidCavity& cavity)
{
    const double cx = cavity.center.x();
    const double cy = cavity.center.y();
    const double a = cavity.semi_axes.x();
    const double b = cavity.semi_axes.y();
    auto r2 = [&](double t) {
        const double x = cx + a * std::cos(t);
        const double y = cy + b * std::sin(t);
        return x * x + y * y;
    };
    constexpr int kSamples = 512;
    constexpr double kStep = 2.0 * std::numbers::pi / kSamples;
    int best = 0;
    double best_val = r2(0.0);
    for (int i = 1; i < kSamples; ++i) {
        const double v = r2(i * kStep);
        if (v > best_val) {
            best_val = v;
            best = i;
        }
    }
    // golden-section refinement around the best sample
    double lo = (best - 1) * kStep;
    double hi = (best + 1) * kStep;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - g * (hi - lo);
    double x2 = lo + g * (hi - lo);
    double f1 = r2(x1);
    double f2 = r2(x2);
    for (int it = 0; it < 60; ++it) {
        if (f1 > f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = r2(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = r2(x2);
        }
    }
    return std::max({best_val, f1, f2});
}

} // namespace

const char* to_string(Split split)
{
    switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "test";
}

Split parse_split(const std::string& text)
{
    if (text == "train")
        return Split::Train;
    if (text == "val")
        return Split::Val;
    if (text == "test")
        return Split::Test;
    throw ValidationError("unknown split '" + text + "'");
}

bool cavity_contained(const CylinderSpec& cylinder, const EllipsoidCavity& cavity)
{
    const double half = 0.5 * cylinder.height;
    if (!(std::abs(cavity.center.z()) + cavity.semi_axes.z() < half))
        return false;
    const double centre_r = std::hypot(cavity.center.x(), cavity.center.y());
    const double max_axis = std::max(cavity.semi_axes.x(), cavity.semi_axes.y());
    const double min_axis = std::min(cavity.semi_axes.x(), cavity.semi_axes.y());
    if (centre_r + max_axis < cylinder.radius)
        return true;
    if (!(centre_r + min_axis < cylinder.radius))
        return false;
    // Relative margin keeps surface points strictly inside after rounding.
    return max_radial_sq(cavity) < cylinder.radius * cylinder.radius * (1.0 - 1e-12);
}

void Phantom::validate() const
{
    if (!(cylinder.radius > 0.0) || !(cylinder.height > 0.0))
        throw ValidationError("phantom " + std::to_string(id) + ": cylinder radius and height must be positive");
    if (!has_volume(cavity))
        throw ValidationError("phantom " + std::to_string(id) + ": cavity semi-axes must be positive");
    if (!cavity_contained(cylinder, cavity))
        throw ValidationError("phantom " + std::to_string(id) + ": cavity is not strictly inside the cylinder");
}

void PhantomParamRanges::validate() const
{
    for (const Range* r : {&radius, &height, &cavity_base_radius, &axis_ratio}) {
        if (!(r->min <= r->max))
            throw ValidationError("phantom ranges: min must not exceed max");
        if (!(r->min > 0.0))
            throw ValidationError("phantom ranges: values must be positive");
    }
}

std::vector<Phantom> PhantomSet::split(Split which) const
{
    std::vector<Phantom> out;
    std::copy_if(phantoms.begin(), phantoms.end(), std::back_inserter(out),
                 [which](const Phantom& p) { return p.split == which; });
    return out;
}

std::size_t PhantomSet::count(Split which) const
{
    return static_cast<std::size_t>(std::count_if(phantoms.begin(), phantoms.end(),
                                                  [which](const Phantom& p) { return p.split == which; }));
}

Ray Ray::through(const Vec3& from, const Vec3& to)
{
    const Vec3 d = to - from;
    const double n = d.norm();
    if (!(n > 0.0))
        throw ValidationError("ray: zero-length direction");
    return {from, d / n};
}

double ChordList::length(Region region) const
{
    double sum = 0.0;
    for (const auto& c : *this)
        if (c.region == region)
            sum += c.length;
    return sum;
}

double ChordList::total_length() const
{
    double sum = 0.0;
    for (const auto& c : *this)
        sum += c.length;
    return sum;
}

Phantom generate_phantom(std::uint64_t seed, const PhantomParamRanges& ranges)
{
    ranges.validate();
    std::mt19937_64 rng(mix64(seed));
    auto uniform = [&rng](const Range& r) {
        return r.min == r.max ? r.min : std::uniform_real_distribution<double>(r.min, r.max)(rng);
    };

    Phantom phantom;
    phantom.cylinder.radius = uniform(ranges.radius);
    phantom.cylinder.height = uniform(ranges.height);
    phantom.cylinder.material = ranges.material;

    const double radius = phantom.cylinder.radius;
    const double half = 0.5 * phantom.cylinder.height;
    for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
        const double base = uniform(ranges.cavity_base_radius);
        EllipsoidCavity cavity;
        for (int k = 0; k < 3; ++k)
            cavity.semi_axes[k] = base * uniform(ranges.axis_ratio);
        const double azimuth = uniform({0.0, 2.0 * std::numbers::pi});
        const double distance = uniform({0.0, radius});
        cavity.center = {distance * std::cos(azimuth), distance * std::sin(azimuth), uniform({-half, half})};
        if (cavity_contained(phantom.cylinder, cavity)) {
            phantom.cavity = cavity;
            return phantom;
        }
    }
    throw GenerationError("cavity placement exceeded " + std::to_string(kMaxPlacementAttempts) + " attempts");
}

PhantomSet generate_set(std::uint64_t seed, int n_train, int n_val, int n_test,
                        const PhantomParamRanges& ranges)
{
    if (n_train < 0 || n_val < 0 || n_test < 0)
        throw ValidationError("phantom counts must be non-negative");
    PhantomSet set;
    set.phantoms.reserve(static_cast<std::size_t>(n_train + n_val + n_test));
    int next_id = 0;
    const std::pair<Split, int> plan[] = {{Split::Train, n_train}, {Split::Val, n_val}, {Split::Test, n_test}};
    for (const auto& [split, count] : plan) {
        const std::uint64_t stream = derive_seed(seed, static_cast<std::uint64_t>(split));
        for (int k = 0; k < count; ++k) {
            Phantom p = generate_phantom(derive_seed(stream, static_cast<std::uint64_t>(k)), ranges);
            p.id = next_id++;
            p.split = split;
            set.phantoms.push_back(std::move(p));
        }
    }
    return set;
}

ChordList ray_chords(const Phantom& phantom, const Ray& ray)
{
    ChordList chords;
    Interval body = intersect(cylinder_interval(phantom.cylinder, ray), {0.0, kInf});
    if (body.empty())
        return chords;
    Interval hole = intersect(intersect(ellipsoid_interval(phantom.cavity, ray), {0.0, kInf}), body);
    if (hole.empty()) {
        chords.push(Region::Material, body.lo, body.hi - body.lo);
        return chords;
    }
    chords.push(Region::Material, body.lo, hole.lo - body.lo);
    chords.push(Region::Void, hole.lo, hole.hi - hole.lo);
    chords.push(Region::Material, hole.hi, body.hi - hole.hi);
    return chords;
}

double defect_size(const Phantom& phantom, const AcquisitionGeometry& geometry)
{
    const Ray ray = Ray::through(geometry.source(), phantom.cavity.center);
    return ray_chords(phantom, ray).length(Region::Void);
}

Region contains(const Phantom& phantom, const Vec3& point)
{
    if (has_volume(phantom.cavity)) {
        const Vec3 q = (point - phantom.cavity.center).cwiseQuotient(phantom.cavity.semi_axes);
        if (q.squaredNorm() < 1.0)
            return Region::Void;
    }
    const double r2 = point.x() * point.x() + point.y() * point.y();
    const auto& cyl = phantom.cylinder;
    if (r2 < cyl.radius * cyl.radius && std::abs(point.z()) < 0.5 * cyl.height)
        return Region::Material;
    return Region::Exterior;
}

void write_phantoms_csv(std::ostream& out, const PhantomSet& set)
{
    out << "id,radius_mm,height_mm,cx,cy,cz,a,b,c,material,split\n";
    for (const auto& p : set.phantoms) {
        out << p.id << ',' << format_g17(p.cylinder.radius) << ',' << format_g17(p.cylinder.height);
        for (int k = 0; k < 3; ++k)
            out << ',' << format_g17(p.cavity.center[k]);
        for (int k = 0; k < 3; ++k)
            out << ',' << format_g17(p.cavity.semi_axes[k]);
        out << ',' << p.cylinder.material << ',' << to_string(p.split) << '\n';
    }
}

PhantomSet read_phantoms_csv(std::istream& in)
{
    PhantomSet set;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        const auto f = split_csv(line);
        if (f.size() != 11)
            throw ValidationError("phantom csv line " + std::to_string(line_no) + ": expected 11 fields");
        if (line_no == 1 && f[0] == "id")
            continue;
        Phantom p;
        p.id = static_cast<int>(parse_int(f[0], "id"));
        p.cylinder.radius = parse_double(f[1], "radius_mm");
        p.cylinder.height = parse_double(f[2], "height_mm");
        for (int k = 0; k < 3; ++k) {
            p.cavity.center[k] = parse_double(f[3 + k], "cavity centre");
            p.cavity.semi_axes[k] = parse_double(f[6 + k], "cavity semi-axis");
        }
        p.cylinder.material = f[9];
        p.split = parse_split(f[10]);
        set.phantoms.push_back(std::move(p));
    }
    return set;
}

void save_phantoms(const std::string& path, const PhantomSet& set)
{
    std::ostringstream out;
    write_phantoms_csv(out, set);
    write_text_file(path, out.str());
}

PhantomSet load_phantoms(const std::string& path)
{
    std::istringstream in(read_text_file(path));
    return read_phantoms_csv(in);
}

} // namespace xspod
