#pragma once

#include "xspod/core.hpp"
#include "xspod/detect.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace xspod {

struct SeparationError : Error {
    using Error::Error;
};

/// Single-outcome data; a special case of separation.
struct DegenerateDataError : SeparationError {
    using SeparationError::SeparationError;
};

struct RankDeficiencyError : Error {
    using Error::Error;
};

/// beta <= 0: POD does not grow with size, so no s90 exists.
struct NoGrowthError : Error {
    using Error::Error;
};

struct BracketError : Error {
    using Error::Error;
};

enum class Link { Logit, Probit, CLogLog };

const char* to_string(Link link);
Link parse_link(const std::string& text);

/// g(p)
double link_fn(Link link, double p);
/// g^-1(eta)
double link_inverse(Link link, double eta);
/// d g^-1 / d eta
double link_inverse_derivative(Link link, double eta);

inline constexpr double kZTwoSided95 = 1.959964;
inline constexpr double kZOneSided95 = 1.644854;

/// g(p) = alpha + beta*s [+ gamma*spr]
struct PodFit {
    Link link = Link::Logit;
    Eigen::VectorXd coefficients;
    Eigen::MatrixXd covariance;
    int n_observations = 0;
    double deviance = 0.0;
    bool converged = false;
    int iterations = 0;

    bool multivariate() const { return coefficients.size() == 3; }
    double alpha() const { return coefficients(0); }
    double beta() const { return coefficients(1); }
    double gamma() const { return multivariate() ? coefficients(2) : 0.0; }
    Eigen::VectorXd standard_errors() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

struct PodPoint {
    double s = 0.0;
    std::optional<double> spr;
    double p = 0.0;
    double lo95 = 0.0;
    double hi95 = 0.0;
};

struct SizeHistogram {
    Eigen::ArrayXd bin_edges;        ///< n_bins + 1 values
    Eigen::ArrayXd success_fraction; ///< 0 for empty bins
    Eigen::ArrayXi count;
};

/// success = f1 > threshold (strict).
std::vector<DetectionRecord> binarize(std::vector<DetectionRecord> records, double threshold = 0.5);

/// Maximum-likelihood GLM by IRLS on a design matrix whose first column is
/// the intercept.
PodFit fit_glm(const Eigen::MatrixXd& design, const Eigen::VectorXd& outcomes, Link link);

PodFit fit_pod(const Eigen::VectorXd& sizes, const std::vector<bool>& successes, Link link = Link::Logit);
PodFit fit_pod_multi(const Eigen::VectorXd& sizes, const Eigen::VectorXd& sprs,
                     const std::vector<bool>& successes, Link link = Link::Logit);

/// Fits binarized records; with_spr skips records whose SPR is not finite
/// and reports how many were skipped.
PodFit fit_records(const std::vector<DetectionRecord>& records, Link link, bool with_spr,
                   std::size_t* skipped = nullptr);

/// Wald band on the linear predictor; z selects the band width.
PodPoint pod_eval(const PodFit& fit, double s, std::optional<double> spr = std::nullopt,
                  double z = kZTwoSided95);

double s90(const PodFit& fit, std::optional<double> spr = std::nullopt);
double s90_95(const PodFit& fit, std::optional<double> spr = std::nullopt);

enum class Verdict { Indistinguishable, ABetter, BBetter };
const char* to_string(Verdict verdict);

struct CompareDetail {
    double s = 0.0;
    PodPoint a;
    PodPoint b;
    bool b_outside_a = false; ///< b's estimate outside a's band
    bool a_outside_b = false;
};

struct Comparison {
    Verdict verdict = Verdict::Indistinguishable;
    std::vector<CompareDetail> detail;
};

Comparison compare_fits(const PodFit& a, const PodFit& b, const Eigen::VectorXd& size_grid,
                        std::optional<double> spr = std::nullopt);

SizeHistogram binned_histogram(const std::vector<DetectionRecord>& records, int n_bins);

/// fit.csv: one "key,values..." row per field, 17 significant digits.
void save_fit(const std::string& path, const PodFit& fit);
PodFit load_fit(const std::string& path);

} // namespace xspod
