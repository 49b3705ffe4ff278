#include "xspod/physics.hpp"

#include "xspod/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

namespace xspod {

namespace {

/// Reads rows of numeric CSV, skipping an optional non-numeric header line.
std::vector<std::vector<double>> read_numeric_csv(const std::string& path, std::size_t columns)
{
    std::istringstream in(read_text_file(path));
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        const auto t = trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        const auto fields = split_csv(t);
        if (first) {
            first = false;
            char* end = nullptr;
            std::strtod(fields[0].c_str(), &end);
            if (end == fields[0].c_str())
                continue; // header
        }
        if (fields.size() != columns)
            throw ValidationError(path + ": expected " + std::to_string(columns) + " columns, got '" + t + "'");
        std::vector<double> row;
        for (const auto& f : fields)
            row.push_back(parse_double(f, path.c_str()));
        rows.push_back(std::move(row));
    }
    return rows;
}

double interpolate_column(const Eigen::ArrayXd& values, Eigen::Index i, double f)
{
    const double v0 = values(i);
    const double v1 = values(i + 1);
    if (v0 > 0.0 && v1 > 0.0)
        return std::exp(std::log(v0) + f * (std::log(v1) - std::log(v0)));
    return v0 + f * (v1 - v0);
}

} // namespace

void Spectrum::validate() const
{
    if (energies.size() == 0 || energies.size() != fluence.size())
        throw ValidationError("spectrum: energies and fluence must be non-empty and of equal length");
    for (Eigen::Index i = 1; i < energies.size(); ++i)
        if (!(energies(i) > energies(i - 1)))
            throw ValidationError("spectrum: energies must be strictly ascending");
    if (!(energies(0) >= 1.0) || !(energies(energies.size() - 1) <= 1000.0))
        throw ValidationError("spectrum: energies must lie in [1, 1000] keV");
    if (!(fluence >= 0.0).all() || !fluence.allFinite())
        throw ValidationError("spectrum: fluence must be finite and non-negative");
    if (!(fluence.maxCoeff() > 0.0))
        throw ValidationError("spectrum: at least one bin must have positive fluence");
}

void Material::validate() const
{
    const auto n = energies.size();
    if (!(density > 0.0))
        throw ValidationError("material " + name + ": density must be positive");
    if (n < 2 || photoelectric.size() != n || compton.size() != n || rayleigh.size() != n)
        throw ValidationError("material " + name + ": table needs at least two rows of four columns");
    for (Eigen::Index i = 1; i < n; ++i) {
        if (energies(i) < energies(i - 1))
            throw ValidationError("material " + name + ": energies must be ascending");
        if (i >= 2 && energies(i) == energies(i - 1) && energies(i - 2) == energies(i))
            throw ValidationError("material " + name + ": malformed absorption edge rows");
    }
    if (energies(0) == energies(1) || energies(n - 1) == energies(n - 2))
        throw ValidationError("material " + name + ": edges cannot be the first or last node");
    if ((photoelectric < 0.0).any() || (compton < 0.0).any() || (rayleigh < 0.0).any())
        throw ValidationError("material " + name + ": coefficients must be non-negative");
    if (!((photoelectric + compton + rayleigh) > 0.0).all())
        throw ValidationError("material " + name + ": every row needs a positive total");
}

bool Material::covers(const Spectrum& spectrum) const
{
    for (Eigen::Index i = 0; i < spectrum.size(); ++i)
        if (spectrum.fluence(i) > 0.0 && (spectrum.energies(i) < min_energy() || spectrum.energies(i) > max_energy()))
            return false;
    return true;
}

const char* to_string(InteractionKind kind)
{
    switch (kind) {
    case InteractionKind::Photoelectric: return "photoelectric";
    case InteractionKind::Compton: return "compton";
    case InteractionKind::Rayleigh: return "rayleigh";
    }
    return "?";
}

Spectrum load_spectrum(const std::string& path)
{
    const auto rows = read_numeric_csv(path, 2);
    if (rows.empty())
        throw ValidationError(path + ": empty spectrum");
    Spectrum s;
    s.energies.resize(static_cast<Eigen::Index>(rows.size()));
    s.fluence.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        s.energies(static_cast<Eigen::Index>(i)) = rows[i][0];
        s.fluence(static_cast<Eigen::Index>(i)) = rows[i][1];
    }
    s.validate();
    return s;
}

void save_spectrum(const std::string& path, const Spectrum& spectrum)
{
    std::ostringstream out;
    out << "energy_keV,weight\n";
    for (Eigen::Index i = 0; i < spectrum.size(); ++i)
        out << format_g17(spectrum.energies(i)) << ',' << format_g17(spectrum.fluence(i)) << '\n';
    write_text_file(path, out.str());
}

Material load_material(const std::string& csv_path)
{
    const auto rows = read_numeric_csv(csv_path, 4);
    const auto meta_path = std::filesystem::path(csv_path).replace_extension(".meta").string();
    const auto meta = split_csv(trim(read_text_file(meta_path)));
    if (meta.size() != 2)
        throw ValidationError(meta_path + ": expected 'name,density_g_cm3'");

    Material m;
    m.name = meta[0];
    m.density = parse_double(meta[1], "density");
    const auto n = static_cast<Eigen::Index>(rows.size());
    m.energies.resize(n);
    m.photoelectric.resize(n);
    m.compton.resize(n);
    m.rayleigh.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        m.energies(i) = r[0];
        m.photoelectric(i) = r[1];
        m.compton(i) = r[2];
        m.rayleigh(i) = r[3];
    }
    m.validate();
    return m;
}

Spectrum kramers_spectrum(double tube_kv, double bin_width_kev, double cutoff_kev)
{
    if (!(cutoff_kev >= 1.0) || !(tube_kv > cutoff_kev) || !(bin_width_kev > 0.0) || tube_kv > 1000.0)
        throw ValidationError("kramers: require 1 <= cutoff < kV <= 1000 and a positive bin width");
    const auto n = static_cast<Eigen::Index>(std::floor((tube_kv - cutoff_kev) / bin_width_kev + 1e-9)) + 1;
    Spectrum s;
    s.energies = Eigen::ArrayXd::LinSpaced(n, 0.0, static_cast<double>(n - 1)) * bin_width_kev + cutoff_kev;
    s.fluence = ((tube_kv - s.energies) / s.energies).max(0.0);
    s.validate();
    return s;
}

Spectrum spectrum_from_source(const std::string& source)
{
    constexpr std::string_view prefix = "kramers:";
    if (source.rfind(prefix, 0) != 0)
        return load_spectrum(source);
    const auto rest = source.substr(prefix.size());
    const auto colon = rest.find(':');
    const double kv = parse_double(rest.substr(0, colon), "kramers kV");
    if (colon == std::string::npos)
        return kramers_spectrum(kv);
    return kramers_spectrum(kv, 1.0, parse_double(rest.substr(colon + 1), "kramers cutoff"));
}

Attenuation mu(const Material& m, double energy_kev)
{
    if (!(energy_kev >= m.min_energy()) || !(energy_kev <= m.max_energy()))
        throw ValidationError("material " + m.name + ": energy " + format_g9(energy_kev) + " keV outside table range");
    const auto* first = m.energies.data();
    const auto* last = first + m.energies.size();
    auto i = static_cast<Eigen::Index>(std::upper_bound(first, last, energy_kev) - first) - 1;

    const double to_linear = m.density / 10.0; // cm^2/g * g/cm^3 -> 1/mm
    Attenuation a;
    if (m.energies(i) == energy_kev) {
        a.photoelectric = m.photoelectric(i) * to_linear;
        a.compton = m.compton(i) * to_linear;
        a.rayleigh = m.rayleigh(i) * to_linear;
    } else {
        const double f = std::log(energy_kev / m.energies(i)) / std::log(m.energies(i + 1) / m.energies(i));
        a.photoelectric = interpolate_column(m.photoelectric, i, f) * to_linear;
        a.compton = interpolate_column(m.compton, i, f) * to_linear;
        a.rayleigh = interpolate_column(m.rayleigh, i, f) * to_linear;
    }
    a.total = a.photoelectric + a.compton + a.rayleigh;
    return a;
}

double transmitted_fraction(const Material& material, const Spectrum& spectrum, double thickness_mm)
{
    double num = 0.0;
    double den = 0.0;
    for (Eigen::Index i = 0; i < spectrum.size(); ++i) {
        const double w = spectrum.fluence(i);
        if (w <= 0.0)
            continue;
        num += w * std::exp(-mu(material, spectrum.energies(i)).total * thickness_mm);
        den += w;
    }
    return num / den;
}

double hvl(const Material& material, const Spectrum& spectrum)
{
    spectrum.validate();
    if (!material.covers(spectrum))
        throw ValidationError("hvl: spectrum outside the material table range");
    double lo = 0.0;
    double hi = 1.0;
    int expansions = 0;
    while (transmitted_fraction(material, spectrum, hi) > 0.5) {
        lo = hi;
        hi *= 2.0;
        if (++expansions > 60)
            throw Error("hvl: no half-value thickness found");
    }
    for (int it = 0; it < 200 && hi - lo > 1e-6; ++it) {
        const double mid = 0.5 * (lo + hi);
        (transmitted_fraction(material, spectrum, mid) > 0.5 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

EnergySampler::EnergySampler(const Spectrum& spectrum)
    : energies_(spectrum.energies)
    , cdf_(spectrum.fluence.size())
{
    spectrum.validate();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < spectrum.size(); ++i) {
        acc += spectrum.fluence(i);
        cdf_(i) = acc;
    }
}

Eigen::Index EnergySampler::sample_index(double u) const
{
    const double target = u * cdf_(cdf_.size() - 1);
    const auto* first = cdf_.data();
    const auto* last = first + cdf_.size();
    const auto i = static_cast<Eigen::Index>(std::upper_bound(first, last, target) - first);
    return std::min(i, cdf_.size() - 1);
}

double sample_energy(const Spectrum& spectrum, double u)
{
    return EnergySampler(spectrum).sample(u);
}

InteractionKind choose_interaction(const Attenuation& att, double u)
{
    const double x = u * att.total;
    if (x < att.photoelectric)
        return InteractionKind::Photoelectric;
    if (x < att.photoelectric + att.compton)
        return InteractionKind::Compton;
    return InteractionKind::Rayleigh;
}

InteractionKind choose_interaction(const Material& material, double energy_kev, double u)
{
    return choose_interaction(mu(material, energy_kev), u);
}

double ScatterSample::theta() const
{
    return std::acos(std::clamp(cos_theta, -1.0, 1.0));
}

double compton_energy(double energy_kev, double cos_theta)
{
    return energy_kev / (1.0 + (energy_kev / kElectronRestEnergy) * (1.0 - cos_theta));
}

double klein_nishina_density(double energy_kev, double cos_theta)
{
    const double ratio = 1.0 / (1.0 + (energy_kev / kElectronRestEnergy) * (1.0 - cos_theta));
    return ratio * ratio * (ratio + 1.0 / ratio - (1.0 - cos_theta * cos_theta));
}

ScatterSample compton_scatter(double energy_kev, PhotonStream& rng)
{
    // Envelope: the density is bounded by its forward value 2.
    ScatterSample s;
    while (true) {
        const double c = 2.0 * rng.uniform() - 1.0;
        if (2.0 * rng.uniform() < klein_nishina_density(energy_kev, c)) {
            s.cos_theta = c;
            break;
        }
    }
    s.phi = 2.0 * std::numbers::pi * rng.uniform();
    s.energy = compton_energy(energy_kev, s.cos_theta);
    return s;
}

ScatterSample rayleigh_scatter(PhotonStream& rng)
{
    ScatterSample s;
    while (true) {
        const double c = 2.0 * rng.uniform() - 1.0;
        if (2.0 * rng.uniform() < 1.0 + c * c) {
            s.cos_theta = c;
            break;
        }
    }
    s.phi = 2.0 * std::numbers::pi * rng.uniform();
    return s;
}

Vec3 rotate_direction(const Vec3& d, double cos_theta, double phi)
{
    const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    const double cp = std::cos(phi);
    const double sp = std::sin(phi);
    const double perp = std::sqrt(std::max(0.0, 1.0 - d.z() * d.z()));
    Vec3 out;
    if (perp < 1e-8) {
        out = {sin_theta * cp, sin_theta * sp, std::copysign(cos_theta, d.z())};
    } else {
        out = {sin_theta * (d.x() * d.z() * cp - d.y() * sp) / perp + d.x() * cos_theta,
               sin_theta * (d.y() * d.z() * cp + d.x() * sp) / perp + d.y() * cos_theta,
               -sin_theta * cp * perp + d.z() * cos_theta};
    }
    return out.normalized();
}

} // namespace xspod
