#include "xspod/projector.hpp"

#include "xspod/parallel.hpp"
#include "xspod/rng.hpp"

#include <random>

namespace xspod {

namespace {

Mask centre_ray_mask(const Phantom& phantom, const AcquisitionGeometry& geometry, Region region)
{
    geometry.validate();
    Mask mask = Mask::Zero(geometry.n_rows, geometry.n_cols);
    const Vec3 src = geometry.source();
    for (int row = 0; row < geometry.n_rows; ++row) {
        for (int col = 0; col < geometry.n_cols; ++col) {
            const auto chords = ray_chords(phantom, Ray::through(src, geometry.pixel_center(col, row)));
            const double len = region == Region::Void ? chords.length(Region::Void) : chords.total_length();
            mask(row, col) = len > 0.0 ? 1 : 0;
        }
    }
    return mask;
}

} // namespace

Projection forward_project(const Phantom& phantom, const AcquisitionGeometry& geometry,
                           const Spectrum& spectrum, const Material& material,
                           const RasterF& flatfield, const ProjectorOptions& options)
{
    geometry.validate();
    spectrum.validate();
    if (!material.covers(spectrum))
        throw ValidationError("forward_project: spectrum outside the material table range");
    if (flatfield.rows() != geometry.n_rows || flatfield.cols() != geometry.n_cols)
        throw ValidationError("forward_project: flatfield dimensions do not match the detector");
    if (options.supersampling < 1)
        throw ValidationError("forward_project: supersampling must be >= 1");

    // Only bins with weight contribute.
    std::vector<double> weights;
    std::vector<double> mus;
    const Eigen::ArrayXd w = spectrum.normalized();
    for (Eigen::Index i = 0; i < spectrum.size(); ++i) {
        if (w(i) > 0.0) {
            weights.push_back(w(i));
            mus.push_back(mu(material, spectrum.energies(i)).total);
        }
    }
    const Eigen::Map<const Eigen::ArrayXd> weight_arr(weights.data(), static_cast<Eigen::Index>(weights.size()));
    const Eigen::Map<const Eigen::ArrayXd> mu_arr(mus.data(), static_cast<Eigen::Index>(mus.size()));

    Projection out;
    out.transmission.resize(geometry.n_rows, geometry.n_cols);
    const Vec3 src = geometry.source();
    const int k = options.supersampling;

    parallel_tasks(geometry.n_rows, options.workers, [&](long long row_index, int) {
        const int row = static_cast<int>(row_index);
        for (int col = 0; col < geometry.n_cols; ++col) {
            double t = 0.0;
            for (int sy = 0; sy < k; ++sy) {
                for (int sx = 0; sx < k; ++sx) {
                    const Vec3 target = geometry.pixel_point(col, row, (sx + 0.5) / k, (sy + 0.5) / k);
                    const double length = ray_chords(phantom, Ray::through(src, target)).length(Region::Material);
                    t += length > 0.0 ? (weight_arr * (-mu_arr * length).exp()).sum() : 1.0;
                }
            }
            out.transmission(row, col) = static_cast<float>(t / (k * k));
        }
    });
    out.expected_counts = out.transmission * flatfield;
    return out;
}

Projection forward_project(const Phantom& phantom, const AcquisitionGeometry& geometry,
                           const Spectrum& spectrum, const Material& material,
                           double flatfield_value, const ProjectorOptions& options)
{
    const RasterF flat = RasterF::Constant(geometry.n_rows, geometry.n_cols, static_cast<float>(flatfield_value));
    return forward_project(phantom, geometry, spectrum, material, flat, options);
}

Mask ground_truth_mask(const Phantom& phantom, const AcquisitionGeometry& geometry)
{
    return centre_ray_mask(phantom, geometry, Region::Void);
}

Mask silhouette_mask(const Phantom& phantom, const AcquisitionGeometry& geometry)
{
    return centre_ray_mask(phantom, geometry, Region::Material);
}

CountRaster apply_poisson_noise(const RasterF& expected, std::uint64_t seed)
{
    if (!(expected >= 0.0f).all())
        throw ValidationError("poisson noise: expectations must be non-negative");
    std::mt19937_64 rng(mix64(seed));
    CountRaster counts(expected.rows(), expected.cols());
    for (Eigen::Index i = 0; i < expected.size(); ++i) {
        const double mean = expected.data()[i];
        counts.data()[i] = mean > 0.0 ? std::poisson_distribution<std::int64_t>(mean)(rng) : 0;
    }
    return counts;
}

} // namespace xspod
