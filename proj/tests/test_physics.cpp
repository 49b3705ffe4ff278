#include "doctest.h"
#include "support.hpp"

#include "xspod/io.hpp"
#include "xspod/physics.hpp"
#include "xspod/rng.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>

using namespace xspod;
using namespace xspod::test;

namespace {

// Upper-tail p value of Pearson's statistic against expected bin masses.
double chi_square_p(const Eigen::ArrayXd& observed, const Eigen::ArrayXd& expected)
{
    const double stat = ((observed - expected).square() / expected).sum();
    boost::math::chi_squared dist(static_cast<double>(observed.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

template <typename Density>
Eigen::ArrayXd integrated_bins(Density&& f, int bins, double n)
{
    using boost::math::quadrature::gauss_kronrod;
    Eigen::ArrayXd mass(bins);
    for (int b = 0; b < bins; ++b) {
        const double lo = -1.0 + 2.0 * b / bins, hi = -1.0 + 2.0 * (b + 1) / bins;
        mass(b) = gauss_kronrod<double, 21>::integrate(f, lo, hi);
    }
    return n * mass / mass.sum();
}

} // namespace

TEST_CASE("spectrum files")
{
    const std::string dir = scratch_dir("spectrum");
    write_text_file(dir + "/mono.csv", "energy_keV,weight\n70,1.0\n");
    const Spectrum s = load_spectrum(dir + "/mono.csv");
    REQUIRE(s.size() == 1);
    CHECK(s.energies(0) == 70.0);
    CHECK(sample_energy(s, 0.3) == 70.0);

    write_text_file(dir + "/bad.csv", "70,1\n60,1\n");
    CHECK_THROWS_AS(load_spectrum(dir + "/bad.csv"), ValidationError);

    const Spectrum k = kramers_spectrum(90.0);
    save_spectrum(dir + "/k.csv", k);
    const Spectrum back = load_spectrum(dir + "/k.csv");
    CHECK((back.energies == k.energies).all());
    CHECK((back.fluence == k.fluence).all());
}

TEST_CASE("two equal bins sample evenly")
{
    Spectrum s;
    s.energies.resize(2);
    s.energies << 50.0, 60.0;
    s.fluence = Eigen::ArrayXd::Ones(2);
    const EnergySampler sampler(s);
    PhotonStream rng(1, 0);
    const int n = 1'000'000;
    int low = 0;
    for (int i = 0; i < n; ++i)
        low += sampler.sample_index(rng.uniform()) == 0;
    CHECK(std::abs(low - 0.5 * n) < 3.0 * std::sqrt(0.25 * n));
}

TEST_CASE("Kramers spectrum")
{
    const Spectrum s = kramers_spectrum(90.0);
    CHECK((s.fluence > 0.0).count() == 80);
    CHECK(s.fluence(s.size() - 1) == 0.0);
    Eigen::Index peak = 0;
    s.fluence.maxCoeff(&peak);
    for (Eigen::Index i = peak + 1; i < s.size(); ++i)
        CHECK(s.fluence(i) < s.fluence(i - 1));

    const Spectrum single = kramers_spectrum(90.0, 1.0, 89.0);
    CHECK((single.fluence > 0.0).count() == 1);
    CHECK_THROWS(kramers_spectrum(90.0, 1.0, 95.0));
}

TEST_CASE("attenuation interpolation")
{
    const Material pmma = material("pmma");
    const Attenuation a = mu(pmma, pmma.energies(10));
    CHECK(a.compton == doctest::Approx(pmma.compton(10) * pmma.density / 10.0).epsilon(1e-14));
    CHECK(a.total == doctest::Approx(a.photoelectric + a.compton + a.rayleigh).epsilon(1e-14));
    CHECK_THROWS_AS(mu(pmma, 0.5), ValidationError);

    // Power-law columns interpolate exactly in log-log.
    Material pl;
    pl.name = "powerlaw";
    pl.energies.resize(2);
    pl.energies << 10.0, 40.0;
    pl.photoelectric.resize(2);
    pl.photoelectric << 64.0, 1.0;
    pl.compton.resize(2);
    pl.compton << 2.0, 0.5;
    pl.rayleigh.resize(2);
    pl.rayleigh << 1.0, 1.0;
    const Attenuation m = mu(pl, 20.0);
    CHECK(m.photoelectric == doctest::Approx(std::sqrt(64.0) / 10.0).epsilon(1e-12));
    CHECK(m.compton == doctest::Approx(1.0 / 10.0).epsilon(1e-12));
}

TEST_CASE("half-value layer")
{
    CHECK(std::abs(hvl(flat_material(0.1), mono(70.0)) - 6.931471805599453) < 1e-6);
    CHECK(transmitted_fraction(flat_material(0.1), mono(70.0), 10.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

    const Material al = material("aluminum");
    const double h90 = hvl(al, kramers_spectrum(90.0));
    const double h150 = hvl(al, kramers_spectrum(150.0));
    const double h300 = hvl(al, kramers_spectrum(300.0));
    CHECK(h90 < h150);
    CHECK(h150 < h300);
    CHECK(transmitted_fraction(al, kramers_spectrum(150.0), h150) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("interaction choice")
{
    Attenuation only_compton{0.0, 1.0, 0.0, 1.0};
    for (double u : {0.0, 0.3, 0.999})
        CHECK(choose_interaction(only_compton, u) == InteractionKind::Compton);

    Attenuation a{0.2, 0.5, 0.3, 1.0};
    CHECK(choose_interaction(a, std::nextafter(0.2, 0.0)) == InteractionKind::Photoelectric);
    CHECK(choose_interaction(a, 0.2) == InteractionKind::Compton);
    CHECK(choose_interaction(a, 0.75) == InteractionKind::Rayleigh);

    Attenuation even{1.0, 1.0, 1.0, 3.0};
    PhotonStream rng(3, 0);
    const int n = 1'000'000;
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < n; ++i)
        ++counts[static_cast<int>(choose_interaction(even, rng.uniform()))];
    const double sd = std::sqrt(n * (1.0 / 3.0) * (2.0 / 3.0));
    for (int c : counts)
        CHECK(std::abs(c - n / 3.0) < 3.0 * sd);
}

TEST_CASE("three-bin energy sampling passes chi-square")
{
    Spectrum s;
    s.energies.resize(3);
    s.energies << 40.0, 60.0, 80.0;
    s.fluence.resize(3);
    s.fluence << 1.0, 2.0, 3.0;
    const EnergySampler sampler(s);
    CHECK(sampler.sample_index(0.0) == 0);
    PhotonStream rng(8, 0);
    const int n = 1'000'000;
    Eigen::ArrayXd obs = Eigen::ArrayXd::Zero(3);
    for (int i = 0; i < n; ++i)
        obs(sampler.sample_index(rng.uniform())) += 1.0;
    CHECK(chi_square_p(obs, n * s.normalized()) > 0.01);

    Spectrum gap = s;
    gap.fluence(0) = 0.0;
    CHECK(EnergySampler(gap).sample_index(0.0) == 1);
}

TEST_CASE("Compton kinematics")
{
    CHECK(compton_energy(100.0, 1.0) == doctest::Approx(100.0).epsilon(1e-14));
    CHECK(std::abs(compton_energy(100.0, 0.0) - 83.63) < 0.01);
}

TEST_CASE("Klein-Nishina sampler matches the integrated density")
{
    const int bins = 50, n = 1'000'000;
    Eigen::ArrayXd obs = Eigen::ArrayXd::Zero(bins);
    for (int i = 0; i < n; ++i) {
        PhotonStream r(2024, static_cast<std::uint64_t>(i));
        const ScatterSample s = compton_scatter(100.0, r);
        obs(std::min(bins - 1, static_cast<int>((s.cos_theta + 1.0) / 2.0 * bins))) += 1.0;
    }
    const auto expected = integrated_bins([](double c) { return klein_nishina_density(100.0, c); }, bins, n);
    CHECK(chi_square_p(obs, expected) > 0.01);
}

TEST_CASE("Rayleigh sampler follows 1 + cos^2")
{
    const int bins = 50, n = 1'000'000;
    Eigen::ArrayXd obs = Eigen::ArrayXd::Zero(bins);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        PhotonStream r(77, static_cast<std::uint64_t>(i));
        const ScatterSample s = rayleigh_scatter(r);
        sum += s.cos_theta;
        obs(std::min(bins - 1, static_cast<int>((s.cos_theta + 1.0) / 2.0 * bins))) += 1.0;
    }
    const auto expected = integrated_bins([](double c) { return 1.0 + c * c; }, bins, n);
    CHECK(chi_square_p(obs, expected) > 0.01);
    // Var(cos) = 2/5 under (1 + c^2) * 3/8.
    CHECK(std::abs(sum / n) < 3.0 * std::sqrt(0.4 / n));
}

TEST_CASE("direction rotation keeps unit length and the polar angle")
{
    PhotonStream rng(5, 0);
    for (int i = 0; i < 1000; ++i) {
        const Vec3 d = Vec3(rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5).normalized();
        const double c = 2.0 * rng.uniform() - 1.0;
        const Vec3 out = rotate_direction(d, c, 2.0 * std::numbers::pi * rng.uniform());
        CHECK(out.norm() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(out.dot(d) == doctest::Approx(c).epsilon(1e-9).scale(1.0));
    }
}
