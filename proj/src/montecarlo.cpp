#include "xspod/montecarlo.hpp"

#include "xspod/parallel.hpp"
#include "xspod/projector.hpp"

#include <cmath>
#include <limits>

namespace xspod {

namespace {

constexpr long long kPhotonsPerTask = 1 << 15;
constexpr int kMaxInteractions = 10000;

TransportResult fly_to_detector(const PhotonState& s, const AcquisitionGeometry& geometry)
{
    TransportResult r;
    r.scatter_count = s.scatter_count;
    const double dy = s.direction.y();
    if (!(dy > 0.0))
        return r; // escaped: moving away from the detector plane
    const double t = (geometry.detector_y() - s.position.y()) / dy;
    const Vec3 hit = s.position + t * s.direction;
    const auto pixel = geometry.pixel_of(hit.x(), hit.z());
    if (!pixel)
        return r;
    r.kind = TransportResult::Kind::Detected;
    r.col = pixel->col;
    r.row = pixel->row;
    return r;
}

} // namespace

Tally Tally::zeros(int rows, int cols, bool keep_orders)
{
    Tally t;
    t.primary = CountRaster::Zero(rows, cols);
    t.scatter = CountRaster::Zero(rows, cols);
    if (keep_orders)
        t.per_order.assign(kTrackedOrders + 1, CountRaster::Zero(rows, cols));
    return t;
}

Tally& Tally::operator+=(const Tally& other)
{
    primary += other.primary;
    scatter += other.scatter;
    for (std::size_t k = 0; k < per_order.size() && k < other.per_order.size(); ++k)
        per_order[k] += other.per_order[k];
    detected_primary += other.detected_primary;
    detected_scatter += other.detected_scatter;
    absorbed += other.absorbed;
    escaped += other.escaped;
    return *this;
}

bool Tally::operator==(const Tally& o) const
{
    if (per_order.size() != o.per_order.size())
        return false;
    for (std::size_t k = 0; k < per_order.size(); ++k)
        if (!(per_order[k] == o.per_order[k]).all())
            return false;
    return (primary == o.primary).all() && (scatter == o.scatter).all() && detected_primary == o.detected_primary
        && detected_scatter == o.detected_scatter && absorbed == o.absorbed && escaped == o.escaped;
}

TransportContext::TransportContext(const Phantom& phantom, const AcquisitionGeometry& geometry,
                                   const Spectrum& spectrum, const Material& material)
    : phantom_(&phantom)
    , geometry_(&geometry)
    , material_(&material)
    , sampler_(spectrum)
{
    geometry.validate();
    material.validate();
    if (!material.covers(spectrum))
        throw ValidationError("simulate: spectrum outside the material table range");
    bin_mu_.reserve(static_cast<std::size_t>(spectrum.size()));
    for (Eigen::Index i = 0; i < spectrum.size(); ++i) {
        const double e = spectrum.energies(i);
        bin_mu_.push_back(e >= material.min_energy() && e <= material.max_energy() ? mu(material, e) : Attenuation{});
    }
}

TransportResult transport_photon(PhotonState& s, const TransportContext& ctx, PhotonStream& rng, Eigen::Index bin)
{
    const Material& material = ctx.material();
    for (int step = 0; step < kMaxInteractions; ++step) {
        const ChordList chords = ray_chords(ctx.phantom(), Ray{s.position, s.direction});
        const double path = chords.length(Region::Material);
        if (path > 0.0) {
            const Attenuation att = bin >= 0 ? ctx.bin_attenuation(bin) : mu(material, s.energy);
            const double depth = -std::log(rng.uniform_open0());
            if (depth < att.total * path) {
                double remaining = depth / att.total;
                double t = 0.0;
                for (const Chord& c : chords) {
                    if (c.region != Region::Material)
                        continue;
                    t = c.start + std::min(remaining, c.length);
                    if (remaining <= c.length)
                        break;
                    remaining -= c.length;
                }
                s.position += t * s.direction;

                switch (choose_interaction(att, rng.uniform())) {
                case InteractionKind::Photoelectric:
                    s.alive = false;
                    return {TransportResult::Kind::Absorbed, -1, -1, s.scatter_count};
                case InteractionKind::Compton: {
                    const ScatterSample sc = compton_scatter(s.energy, rng);
                    s.direction = rotate_direction(s.direction, sc.cos_theta, sc.phi);
                    s.energy = sc.energy;
                    ++s.scatter_count;
                    bin = -1;
                    if (s.energy < kMinPhotonEnergy || s.energy < material.min_energy()) {
                        s.alive = false;
                        return {TransportResult::Kind::Absorbed, -1, -1, s.scatter_count};
                    }
                    break;
                }
                case InteractionKind::Rayleigh: {
                    const ScatterSample sc = rayleigh_scatter(rng);
                    s.direction = rotate_direction(s.direction, sc.cos_theta, sc.phi);
                    ++s.scatter_count;
                    break;
                }
                }
                continue;
            }
        }
        s.alive = false;
        return fly_to_detector(s, ctx.geometry());
    }
    s.alive = false;
    return {TransportResult::Kind::Absorbed, -1, -1, s.scatter_count};
}

RasterF expected_flatfield(const AcquisitionGeometry& geometry, std::int64_t n_photons)
{
    if (n_photons < 1)
        throw ValidationError("flatfield: photon budget must be >= 1");
    const double per_pixel = static_cast<double>(n_photons) * geometry.pixel_area() / geometry.detector_area();
    return RasterF::Constant(geometry.n_rows, geometry.n_cols, static_cast<float>(per_pixel));
}

ProjectionSet simulate(const Phantom& phantom, const AcquisitionGeometry& geometry,
                       const Spectrum& spectrum, const Material& material,
                       const SimulationOptions& options)
{
    if (options.n_photons < 1)
        throw ValidationError("simulate: photon budget must be >= 1");
    spectrum.validate();
    const TransportContext ctx(phantom, geometry, spectrum, material);

    const int workers = std::max(1, options.workers);
    std::vector<Tally> partial;
    for (int w = 0; w < workers; ++w)
        partial.push_back(Tally::zeros(geometry.n_rows, geometry.n_cols, options.keep_orders));

    const Vec3 src = geometry.source();
    const long long n_tasks = (options.n_photons + kPhotonsPerTask - 1) / kPhotonsPerTask;
    parallel_tasks(n_tasks, workers, [&](long long task, int worker) {
        Tally& tally = partial[static_cast<std::size_t>(worker)];
        const long long begin = task * kPhotonsPerTask;
        const long long end = std::min<long long>(begin + kPhotonsPerTask, options.n_photons);
        for (long long i = begin; i < end; ++i) {
            PhotonStream rng(options.seed, static_cast<std::uint64_t>(i));
            const Eigen::Index bin = ctx.sampler().sample_index(rng.uniform());
            const double x = (rng.uniform() - 0.5) * geometry.det_width;
            const double z = (rng.uniform() - 0.5) * geometry.det_height;
            PhotonState s;
            s.position = src;
            s.direction = (Vec3(x, geometry.detector_y(), z) - src).normalized();
            s.energy = spectrum.energies(bin);

            const TransportResult r = transport_photon(s, ctx, rng, bin);
            switch (r.kind) {
            case TransportResult::Kind::Detected:
                if (r.scatter_count == 0) {
                    ++tally.primary(r.row, r.col);
                    ++tally.detected_primary;
                } else {
                    ++tally.scatter(r.row, r.col);
                    ++tally.detected_scatter;
                    if (!tally.per_order.empty())
                        ++tally.per_order[static_cast<std::size_t>(std::min(r.scatter_count, Tally::kTrackedOrders + 1) - 1)](r.row, r.col);
                }
                break;
            case TransportResult::Kind::Absorbed: ++tally.absorbed; break;
            case TransportResult::Kind::Escaped: ++tally.escaped; break;
            }
        }
    });

    Tally total = std::move(partial.front());
    for (std::size_t w = 1; w < partial.size(); ++w)
        total += partial[w];
    return make_projection_set(std::move(total), expected_flatfield(geometry, options.n_photons));
}

ProjectionSet make_projection_set(Tally tally, RasterF flatfield)
{
    ProjectionSet set;
    set.with_scatter_log = preprocess<std::int64_t>(tally.primary + tally.scatter, flatfield);
    set.primary_only_log = preprocess<std::int64_t>(tally.primary, flatfield);
    set.spr = spr_map(tally);
    set.tally = std::move(tally);
    set.flatfield = std::move(flatfield);
    return set;
}

RasterF spr_map(const Tally& tally)
{
    RasterF spr(tally.primary.rows(), tally.primary.cols());
    for (Eigen::Index i = 0; i < spr.size(); ++i) {
        const auto p = tally.primary.data()[i];
        spr.data()[i] = p > 0 ? static_cast<float>(static_cast<double>(tally.scatter.data()[i]) / static_cast<double>(p))
                              : std::numeric_limits<float>::quiet_NaN();
    }
    return spr;
}

DatasetPair make_dataset_pair(const ProjectionSet& set)
{
    return {set.with_scatter_log, set.primary_only_log};
}

MaskedMean masked_mean(const RasterF& raster, const Mask& mask)
{
    if (raster.rows() != mask.rows() || raster.cols() != mask.cols())
        throw ValidationError("masked mean: dimension mismatch");
    MaskedMean m;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < raster.size(); ++i) {
        if (!mask.data()[i])
            continue;
        const float v = raster.data()[i];
        if (std::isfinite(v)) {
            sum += v;
            ++m.used;
        } else {
            ++m.excluded;
        }
    }
    if (m.used + m.excluded == 0)
        throw ValidationError("masked mean: mask is empty");
    if (m.used == 0)
        throw Error("masked mean: all mask pixels are invalid");
    m.mean = sum / static_cast<double>(m.used);
    return m;
}

double defect_spr(const ProjectionSet& set, const Mask& mask)
{
    return masked_mean(set.spr, mask).mean;
}

double attenuation_at(const ProjectionSet& set, const Mask& mask)
{
    return masked_mean(set.with_scatter_log, mask).mean;
}

} // namespace xspod
