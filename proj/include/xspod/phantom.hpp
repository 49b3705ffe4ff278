#pragma once

#include "xspod/core.hpp"
#include "xspod/geometry.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace xspod {

/// Homogeneous cylinder centred at the origin, axis along z,
/// spanning z in [-height/2, height/2].
struct CylinderSpec {
    double radius = 0.0;
    double height = 0.0;
    std::string material;

    bool operator==(const CylinderSpec&) const = default;
};

/// Axis-aligned ellipsoidal void. semi_axes = (a, b, c) along (x, y, z).
struct EllipsoidCavity {
    Vec3 center = Vec3::Zero();
    Vec3 semi_axes = Vec3::Zero();

    bool operator==(const EllipsoidCavity&) const = default;
};

enum class Split { Train, Val, Test };

const char* to_string(Split split);
Split parse_split(const std::string& text);

struct Phantom {
    int id = 0;
    CylinderSpec cylinder;
    EllipsoidCavity cavity;
    Split split = Split::Test;

    /// Positive dimensions and strict cavity containment.
    void validate() const;

    bool operator==(const Phantom&) const = default;
};

struct Range {
    double min = 0.0;
    double max = 0.0;

    bool operator==(const Range&) const = default;
};

/// Randomisation ranges. Defaults reproduce the reference dataset: cylinder
/// radius 1-25 mm, height 20-55 mm, cavity base radius 0.1-1 mm and per-axis
/// deformation ratio 0.7-1.3.
struct PhantomParamRanges {
    Range radius{1.0, 25.0};
    Range height{20.0, 55.0};
    Range cavity_base_radius{0.1, 1.0};
    Range axis_ratio{0.7, 1.3};
    std::string material = "pmma";

    void validate() const;

    bool operator==(const PhantomParamRanges&) const = default;
};

struct PhantomSet {
    std::vector<Phantom> phantoms;

    std::vector<Phantom> split(Split which) const;
    std::size_t count(Split which) const;
};

enum class Region : std::uint8_t { Exterior, Material, Void };

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitY();

    /// Normalises the direction; throws on a zero vector.
    static Ray through(const Vec3& from, const Vec3& to);
};

/// One contiguous piece of a ray inside the object.
struct Chord {
    Region region = Region::Material;
    double start = 0.0; ///< distance from the ray origin, mm
    double length = 0.0;
};

/// Ordered chords of a ray; at most material / void / material.
class ChordList {
public:
    void push(Region region, double start, double length)
    {
        if (length > 0.0)
            items_[size_++] = {region, start, length};
    }

    const Chord* begin() const { return items_.data(); }
    const Chord* end() const { return items_.data() + size_; }
    std::size_t size() const { return size_; }
    bool empty() const { return size_ == 0; }
    const Chord& operator[](std::size_t i) const { return items_[i]; }

    double length(Region region) const;
    double total_length() const;

private:
    std::array<Chord, 3> items_{};
    std::size_t size_ = 0;
};

Phantom generate_phantom(std::uint64_t seed, const PhantomParamRanges& ranges);

/// Ids are assigned consecutively: train, then val, then test.
PhantomSet generate_set(std::uint64_t seed, int n_train, int n_val, int n_test,
                        const PhantomParamRanges& ranges);

/// Segments of the ray (t >= 0) inside the cylinder material and inside the
/// cavity, ordered by distance. Closed-form quadratic intersections.
ChordList ray_chords(const Phantom& phantom, const Ray& ray);

/// Cavity chord of the ray from the source through the cavity centre.
double defect_size(const Phantom& phantom, const AcquisitionGeometry& geometry);

/// Boundary points belong to the outer region.
Region contains(const Phantom& phantom, const Vec3& point);

/// Strict containment of the cavity in the cylinder.
bool cavity_contained(const CylinderSpec& cylinder, const EllipsoidCavity& cavity);

/// Phantom CSV: id,radius_mm,height_mm,cx,cy,cz,a,b,c,material,split
void write_phantoms_csv(std::ostream& out, const PhantomSet& set);
PhantomSet read_phantoms_csv(std::istream& in);
void save_phantoms(const std::string& path, const PhantomSet& set);
PhantomSet load_phantoms(const std::string& path);

} // namespace xspod
