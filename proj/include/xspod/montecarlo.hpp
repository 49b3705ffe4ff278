#pragma once

#include "xspod/core.hpp"
#include "xspod/geometry.hpp"
#include "xspod/phantom.hpp"
#include "xspod/physics.hpp"
#include "xspod/rng.hpp"

#include <cstdint>
#include <vector>

namespace xspod {

struct PhotonState {
    Vec3 position = Vec3::Zero();
    Vec3 direction = Vec3::UnitY();
    double energy = 0.0; ///< keV
    int scatter_count = 0;
    bool alive = true;
};

/// Per-pixel detector tallies split by scatter order.
struct Tally {
    /// Orders 1..3 individually, then an overflow bucket for 4+.
    static constexpr int kTrackedOrders = 3;

    CountRaster primary;
    CountRaster scatter;
    std::vector<CountRaster> per_order; ///< empty unless requested

    std::int64_t detected_primary = 0;
    std::int64_t detected_scatter = 0;
    std::int64_t absorbed = 0;
    std::int64_t escaped = 0;

    static Tally zeros(int rows, int cols, bool keep_orders);

    std::int64_t photons() const { return detected_primary + detected_scatter + absorbed + escaped; }

    /// Integer addition; associative and commutative.
    Tally& operator+=(const Tally& other);

    bool operator==(const Tally& other) const;
};

struct ProjectionSet {
    Tally tally;
    RasterF flatfield;
    RasterF with_scatter_log;
    RasterF primary_only_log;
    RasterF spr;
};

struct SimulationOptions {
    std::int64_t n_photons = 10'000'000;
    std::uint64_t seed = 0;
    int workers = 1;
    bool keep_orders = false;
};

struct TransportResult {
    enum class Kind { Detected, Absorbed, Escaped };

    Kind kind = Kind::Escaped;
    int col = -1;
    int row = -1;
    int scatter_count = 0;
};

/// Per-run constant data shared by all photons.
class TransportContext {
public:
    TransportContext(const Phantom& phantom, const AcquisitionGeometry& geometry,
                     const Spectrum& spectrum, const Material& material);

    const Phantom& phantom() const { return *phantom_; }
    const AcquisitionGeometry& geometry() const { return *geometry_; }
    const Material& material() const { return *material_; }
    const EnergySampler& sampler() const { return sampler_; }

    /// Attenuation at a spectrum bin energy (precomputed).
    const Attenuation& bin_attenuation(Eigen::Index bin) const { return bin_mu_[static_cast<std::size_t>(bin)]; }

private:
    const Phantom* phantom_;
    const AcquisitionGeometry* geometry_;
    const Material* material_;
    EnergySampler sampler_;
    std::vector<Attenuation> bin_mu_;
};

/// Tracks one photon until it is detected, absorbed or escapes. `bin` is
/// the spectrum bin of the current energy, or -1 once the energy changed.
TransportResult transport_photon(PhotonState& state, const TransportContext& context,
                                 PhotonStream& rng, Eigen::Index bin = -1);

/// Every pixel: n_photons * pixel area / detector area.
RasterF expected_flatfield(const AcquisitionGeometry& geometry, std::int64_t n_photons);

/// Photon-by-photon simulation. Photon i uses PhotonStream(seed, i), so the
/// result is bitwise independent of `workers`.
ProjectionSet simulate(const Phantom& phantom, const AcquisitionGeometry& geometry,
                       const Spectrum& spectrum, const Material& material,
                       const SimulationOptions& options);

/// Builds the derived images from a tally and its flatfield.
ProjectionSet make_projection_set(Tally tally, RasterF flatfield);

/// S / P per pixel; NaN where P = 0.
RasterF spr_map(const Tally& tally);

struct DatasetPair {
    RasterF with_scatter;
    RasterF without_scatter;
};

DatasetPair make_dataset_pair(const ProjectionSet& set);

struct MaskedMean {
    double mean = 0.0;
    std::size_t used = 0;
    std::size_t excluded = 0; ///< mask pixels with a non-finite value
};

/// Mean of finite raster values under the mask; throws when the mask is
/// empty or has no finite values.
MaskedMean masked_mean(const RasterF& raster, const Mask& mask);

double defect_spr(const ProjectionSet& set, const Mask& mask);
double attenuation_at(const ProjectionSet& set, const Mask& mask);

} // namespace xspod
