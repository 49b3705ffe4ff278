#include "doctest.h"
#include "support.hpp"

#include "xspod/montecarlo.hpp"
#include "xspod/projector.hpp"

#include <cmath>

using namespace xspod;
using namespace xspod::test;

namespace {

Phantom vacuum()
{
    return cylinder_phantom(0.0, 0.0, "flat", Vec3::Zero(), Vec3::Zero());
}

} // namespace

TEST_CASE("expected flatfield")
{
    const AcquisitionGeometry g;
    const RasterF ff = expected_flatfield(g, 1'000'000'000);
    CHECK(ff(0, 0) == doctest::Approx(14545.45).epsilon(1e-6));
    CHECK((ff == ff(0, 0)).all());
    CHECK(ff.cast<double>().sum() == doctest::Approx(1e9).epsilon(1e-6));
}

TEST_CASE("vacuum simulation")
{
    const AcquisitionGeometry g;
    SimulationOptions o;
    o.n_photons = 1'000'000;
    o.seed = 5;
    const ProjectionSet set = simulate(vacuum(), g, mono(70.0), flat_material(0.1), o);
    CHECK(set.tally.scatter.sum() == 0);
    CHECK(set.tally.primary.sum() == 1'000'000);
    CHECK(set.tally.photons() == 1'000'000);
    const auto dev = (set.tally.primary.cast<double>() - set.flatfield.cast<double>()).abs();
    const double within = (dev <= 3.0 * set.flatfield.cast<double>().sqrt()).cast<double>().mean();
    CHECK(within >= 0.99);
}

TEST_CASE("photon aimed past the object arrives unscattered")
{
    const AcquisitionGeometry g;
    const Phantom p = cylinder_phantom(5.0, 20.0, "pmma");
    const Material m = material("pmma");
    const Spectrum s = mono(60.0);
    const TransportContext ctx(p, g, s, m);
    PhotonState st;
    st.position = g.source();
    st.direction = (g.pixel_center(10, 20) - g.source()).normalized();
    PhotonStream rng(1, 0);
    const TransportResult r = transport_photon(st, ctx, rng, 0);
    CHECK(r.kind == TransportResult::Kind::Detected);
    CHECK(r.scatter_count == 0);
    CHECK(r.col == 10);
    CHECK(r.row == 20);
}

TEST_CASE("near-transparent material")
{
    const AcquisitionGeometry g;
    SimulationOptions o;
    o.n_photons = 100'000;
    o.seed = 2;
    const ProjectionSet set = simulate(cylinder_phantom(10.0, 40.0, "flat"), g, mono(70.0), flat_material(1e-9), o);
    CHECK(set.tally.detected_primary >= 99'990);
    CHECK(set.tally.detected_scatter == 0);
}

TEST_CASE("worker count does not change the tally")
{
    const AcquisitionGeometry g;
    const Phantom p = cylinder_phantom(10.0, 40.0, "pmma", {2.0, 1.0, 3.0}, {0.4, 0.5, 0.6});
    const Material m = material("pmma");
    SimulationOptions o;
    o.n_photons = 200'000;
    o.seed = 17;
    o.keep_orders = true;
    const ProjectionSet a = simulate(p, g, kramers_spectrum(90.0), m, o);
    o.workers = 8;
    const ProjectionSet b = simulate(p, g, kramers_spectrum(90.0), m, o);
    CHECK(a.tally == b.tally);
    CHECK((a.with_scatter_log == b.with_scatter_log).all());
    o.seed = 18;
    CHECK_FALSE(simulate(p, g, kramers_spectrum(90.0), m, o).tally == a.tally);
}

TEST_CASE("primary transmission agrees with Beer's law")
{
    const AcquisitionGeometry g;
    const Phantom p = cylinder_phantom(15.0, 40.0, "iron", {0.0, 0.0, 12.0}, Vec3::Constant(0.5));
    const Material m = material("iron");
    const Spectrum s = kramers_spectrum(300.0);
    SimulationOptions o;
    o.n_photons = 1'000'000;
    o.seed = 31;
    o.workers = 4;
    const ProjectionSet set = simulate(p, g, s, m, o);
    // Edge pixels need the pixel-area average, not the centre ray.
    ProjectorOptions po;
    po.supersampling = 8;
    po.workers = 4;
    const Projection det = forward_project(p, g, s, m, expected_flatfield(g, o.n_photons), po);
    const Mask sil = silhouette_mask(p, g);
    double expected = 0.0, observed = 0.0;
    for (Eigen::Index i = 0; i < sil.size(); ++i)
        if (sil.data()[i]) {
            expected += det.expected_counts.data()[i];
            observed += static_cast<double>(set.tally.primary.data()[i]);
        }
    CHECK(std::abs(observed - expected) <= 3.0 * std::sqrt(expected));
}

TEST_CASE("SPR and the log identity")
{
    Tally t = Tally::zeros(1, 3, false);
    t.primary << 100, 50, 0;
    t.scatter << 25, 0, 4;
    const ProjectionSet set = make_projection_set(t, RasterF::Constant(1, 3, 1000.0f));
    CHECK(set.spr(0, 0) == doctest::Approx(0.25));
    CHECK(set.spr(0, 1) == 0.0f);
    CHECK(std::isnan(set.spr(0, 2)));
    CHECK(set.with_scatter_log(0, 0) < set.primary_only_log(0, 0));
    CHECK(set.with_scatter_log(0, 1) == set.primary_only_log(0, 1));
    const DatasetPair pair = make_dataset_pair(set);
    CHECK(pair.without_scatter(0, 0) - pair.with_scatter(0, 0) == doctest::Approx(std::log(1.25)).epsilon(1e-6));
}

TEST_CASE("masked means")
{
    Tally t = Tally::zeros(1, 2, false);
    t.primary << 100, 100;
    t.scatter << 10, 30;
    const ProjectionSet set = make_projection_set(t, RasterF::Constant(1, 2, 100.0f * std::exp(1.0f)));
    Mask both = Mask::Ones(1, 2);
    CHECK(defect_spr(set, both) == doctest::Approx(0.2).epsilon(1e-6));
    Mask none = Mask::Zero(1, 2);
    CHECK_THROWS_AS(defect_spr(set, none), ValidationError);

    Tally flat = Tally::zeros(1, 2, false);
    flat.primary << 100, 100;
    const ProjectionSet e = make_projection_set(flat, RasterF::Constant(1, 2, 100.0f * static_cast<float>(std::exp(1.0))));
    CHECK(attenuation_at(e, both) == doctest::Approx(1.0).epsilon(1e-6));
    const ProjectionSet unit = make_projection_set(flat, RasterF::Constant(1, 2, 100.0f));
    CHECK(attenuation_at(unit, both) == 0.0);
}

TEST_CASE("simulated SPR and attenuation agree with a recount")
{
    const AcquisitionGeometry g;
    const Phantom p = cylinder_phantom(10.0, 40.0, "pmma", {1.0, 0.0, 2.0}, Vec3::Constant(0.8));
    SimulationOptions o;
    o.n_photons = 300'000;
    o.seed = 4;
    o.keep_orders = true;
    const ProjectionSet set = simulate(p, g, kramers_spectrum(90.0), material("pmma"), o);
    const Mask mask = ground_truth_mask(p, g);

    CountRaster summed = CountRaster::Zero(set.tally.scatter.rows(), set.tally.scatter.cols());
    for (const auto& order : set.tally.per_order)
        summed += order;
    CHECK((summed == set.tally.scatter).all());

    double spr = 0.0, att = 0.0;
    int n_spr = 0, n_att = 0;
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        if (!mask.data()[i])
            continue;
        const double P = static_cast<double>(set.tally.primary.data()[i]);
        const double S = static_cast<double>(set.tally.scatter.data()[i]);
        if (P > 0) {
            spr += static_cast<float>(S / P);
            ++n_spr;
        }
        const CountRaster counts = CountRaster::Constant(1, 1, set.tally.primary.data()[i] + set.tally.scatter.data()[i]);
        att += preprocess(counts, RasterF(RasterF::Constant(1, 1, set.flatfield.data()[i])))(0, 0);
        ++n_att;
    }
    if (n_spr > 0)
        CHECK(defect_spr(set, mask) == doctest::Approx(spr / n_spr).epsilon(1e-6));
    CHECK(attenuation_at(set, mask) == doctest::Approx(att / n_att).epsilon(1e-6));
}

TEST_CASE("iron at 300 kV scatters more than PMMA at 90 kV")
{
    const AcquisitionGeometry g;
    SimulationOptions o;
    o.n_photons = 300'000;
    o.seed = 12;
    o.workers = 4;
    const Phantom fe = cylinder_phantom(15.0, 40.0, "iron");
    const Phantom pm = cylinder_phantom(15.0, 40.0, "pmma");
    // Ratio of silhouette sums: thick iron leaves pixels with P = 0.
    auto mean_spr = [&](const Phantom& p, const Material& m, const Spectrum& s) {
        const ProjectionSet set = simulate(p, g, s, m, o);
        const Mask sil = silhouette_mask(p, g);
        double P = 0.0, S = 0.0;
        for (Eigen::Index i = 0; i < sil.size(); ++i)
            if (sil.data()[i]) {
                P += static_cast<double>(set.tally.primary.data()[i]);
                S += static_cast<double>(set.tally.scatter.data()[i]);
            }
        return S / P;
    };
    CHECK(mean_spr(fe, material("iron"), kramers_spectrum(300.0)) > mean_spr(pm, material("pmma"), kramers_spectrum(90.0)));
}
