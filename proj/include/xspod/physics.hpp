#pragma once

#include "xspod/core.hpp"
#include "xspod/rng.hpp"

#include <string>
#include <vector>

namespace xspod {

/// Electron rest energy, keV.
inline constexpr double kElectronRestEnergy = 511.0;

/// Photons below this energy are treated as absorbed.
inline constexpr double kMinPhotonEnergy = 1.0;

struct Spectrum {
    Eigen::ArrayXd energies; ///< bin centres, keV, strictly ascending
    Eigen::ArrayXd fluence;  ///< non-negative relative weights

    void validate() const;
    Eigen::Index size() const { return energies.size(); }
    Eigen::ArrayXd normalized() const { return fluence / fluence.sum(); }
};

/// Mass attenuation table; coefficients in cm^2/g. Absorption edges are
/// encoded as two rows with the same energy (below-edge row first).
struct Material {
    std::string name;
    double density = 1.0; ///< g/cm^3
    Eigen::ArrayXd energies;
    Eigen::ArrayXd photoelectric;
    Eigen::ArrayXd compton;
    Eigen::ArrayXd rayleigh;

    void validate() const;
    double min_energy() const { return energies(0); }
    double max_energy() const { return energies(energies.size() - 1); }
    bool covers(const Spectrum& spectrum) const;
};

enum class InteractionKind { Photoelectric, Compton, Rayleigh };

const char* to_string(InteractionKind kind);

/// Linear attenuation coefficients, 1/mm.
struct Attenuation {
    double photoelectric = 0.0;
    double compton = 0.0;
    double rayleigh = 0.0;
    double total = 0.0;
};

/// Two-column CSV (energy_keV, weight); header optional.
Spectrum load_spectrum(const std::string& path);
void save_spectrum(const std::string& path, const Spectrum& spectrum);

/// Material CSV plus a sidecar "<stem>.meta" holding "name,density_g_cm3".
Material load_material(const std::string& csv_path);

/// Unfiltered bremsstrahlung law: fluence(E) proportional to (kV - E)/E for
/// E = cutoff, cutoff + bin, ... up to kV (the kV bin carries zero weight).
Spectrum kramers_spectrum(double tube_kv, double bin_width_kev = 1.0, double cutoff_kev = 10.0);

/// "kramers:KV", "kramers:KV:CUTOFF" or a spectrum CSV path.
Spectrum spectrum_from_source(const std::string& source);

Attenuation mu(const Material& material, double energy_kev);

/// Half-value layer in mm (photon-count transmission), bisection to 1e-6 mm.
double hvl(const Material& material, const Spectrum& spectrum);

/// Fraction of photons transmitted through `thickness_mm`.
double transmitted_fraction(const Material& material, const Spectrum& spectrum, double thickness_mm);

/// Inverse-CDF sampler over spectrum bins.
class EnergySampler {
public:
    explicit EnergySampler(const Spectrum& spectrum);

    /// Index of the sampled bin for u in [0, 1).
    Eigen::Index sample_index(double u) const;
    double sample(double u) const { return energies_(sample_index(u)); }

private:
    Eigen::ArrayXd energies_;
    Eigen::ArrayXd cdf_;
};

double sample_energy(const Spectrum& spectrum, double u);

/// CDF order is photoelectric, then Compton, then Rayleigh.
InteractionKind choose_interaction(const Attenuation& att, double u);
InteractionKind choose_interaction(const Material& material, double energy_kev, double u);

struct ScatterSample {
    double cos_theta = 1.0;
    double phi = 0.0;
    double energy = 0.0; ///< outgoing energy, keV

    double theta() const;
};

/// Scattered photon energy for a given polar angle.
double compton_energy(double energy_kev, double cos_theta);

/// Klein-Nishina differential cross-section per unit cos(theta), up to a constant.
double klein_nishina_density(double energy_kev, double cos_theta);

/// Free-electron Klein-Nishina sampling by rejection.
ScatterSample compton_scatter(double energy_kev, PhotonStream& rng);

/// Thomson angular law (1 + cos^2 theta); energy is not touched (set to 0).
ScatterSample rayleigh_scatter(PhotonStream& rng);

/// Direction after deflection by (theta, phi) relative to `direction`.
Vec3 rotate_direction(const Vec3& direction, double cos_theta, double phi);

} // namespace xspod
