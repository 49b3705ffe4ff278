#pragma once

#include "xspod/core.hpp"
#include "xspod/geometry.hpp"
#include "xspod/phantom.hpp"
#include "xspod/physics.hpp"

#include <filesystem>
#include <string>

namespace xspod::test {

inline std::string data_path(const std::string& rel)
{
    return std::string(XSPOD_DATA_DIR) + "/" + rel;
}

inline Material material(const std::string& id)
{
    return load_material(data_path("materials/" + id + ".csv"));
}

/// Flat table: every coefficient constant in energy, split evenly.
inline Material flat_material(double mu_total_per_mm, double lo = 1.0, double hi = 1000.0)
{
    Material m;
    m.name = "flat";
    m.density = 1.0;
    m.energies.resize(2);
    m.energies << lo, hi;
    const double per = mu_total_per_mm * 10.0 / 3.0; // 1/mm -> cm^2/g at density 1
    m.photoelectric = Eigen::ArrayXd::Constant(2, per);
    m.compton = Eigen::ArrayXd::Constant(2, per);
    m.rayleigh = Eigen::ArrayXd::Constant(2, per);
    return m;
}

inline Spectrum mono(double energy_kev)
{
    Spectrum s;
    s.energies = Eigen::ArrayXd::Constant(1, energy_kev);
    s.fluence = Eigen::ArrayXd::Ones(1);
    return s;
}

inline Phantom cylinder_phantom(double radius, double height, const std::string& mat,
                                Vec3 cavity_center = Vec3::Zero(), Vec3 semi_axes = Vec3::Constant(0.5))
{
    Phantom p;
    p.cylinder = {radius, height, mat};
    p.cavity.center = cavity_center;
    p.cavity.semi_axes = semi_axes;
    return p;
}

/// Fresh scratch directory under the system temp dir.
inline std::string scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("xspod_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

} // namespace xspod::test
