#pragma once

#include "xspod/core.hpp"
#include "xspod/geometry.hpp"
#include "xspod/phantom.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xspod {

struct DetectionRecord {
    int phantom_id = 0;
    double defect_size_mm = 0.0;
    double defect_spr = 0.0; ///< NaN when no mask pixel had primary counts
    double f1 = 0.0;
    bool success = false;    ///< set by binarize()

    bool operator==(const DetectionRecord&) const = default;
};

/// Image direction along which background polynomials are fitted. Rows run
/// across the cylinder axis, columns along it.
enum class FitAxis { Row, Column };

const char* to_string(FitAxis axis);
FitAxis parse_fit_axis(const std::string& text);

/// Classical per-line background-subtraction detector.
struct DetectorParams {
    int background_degree = 4;
    double noise_k = 4.0;
    int min_component_px = 4;
    /// Box-filter radius applied to the background residual before
    /// thresholding; 0 disables smoothing.
    int smoothing_radius = 0;
    /// Side of the square blocks used for local noise estimates; 0 uses one
    /// global estimate.
    int noise_block_px = 0;
    /// Pixels this close to either end of a row's silhouette run are never flagged.
    int edge_margin_px = 6;
    /// Attenuation above which a pixel belongs to the object silhouette.
    double silhouette_floor = 0.05;
    FitAxis fit_axis = FitAxis::Row;
    /// Lower hysteresis threshold (multiples of sigma) for growing detections
    /// from seed pixels; 0 disables growing.
    double grow_k = 0.0;
    /// Keep only this many components, ranked by summed significance; 0 keeps all.
    int max_components = 0;

    void validate() const;

    bool operator==(const DetectorParams&) const = default;
};

/// "key = value" text with the field names above.
DetectorParams load_detector_params(const std::string& path);
std::string format_detector_params(const DetectorParams& params);

/// Deterministic; a void lowers attenuation, so defect residuals
/// (background - observed) are positive.
Mask detect_baseline(const RasterF& projection, const DetectorParams& params);

/// Reads every "<id>_mask.xr32" in `directory`. When `expected` is given,
/// each mask must match its dimensions.
std::map<int, Mask> import_masks(const std::string& directory,
                                 std::optional<std::pair<Eigen::Index, Eigen::Index>> expected = std::nullopt);

/// 2TP / (2TP + FP + FN); 1.0 when both masks are empty.
double f1_score(const Mask& predicted, const Mask& truth);

/// Keeps 8-connected components with at least `min_size` pixels.
Mask remove_small_components(const Mask& mask, int min_size);

/// One record per phantom ordered by id. spr_maps holds each phantom's SPR
/// raster (NaN where P = 0).
std::vector<DetectionRecord> score_dataset(const std::map<int, Mask>& masks,
                                           const std::map<int, Mask>& ground_truths,
                                           const std::vector<Phantom>& phantoms,
                                           const std::map<int, RasterF>& spr_maps,
                                           const AcquisitionGeometry& geometry);

/// records.csv: phantom_id,defect_size_mm,defect_spr,f1 (9 significant digits).
void save_records(const std::string& path, const std::vector<DetectionRecord>& records);
std::vector<DetectionRecord> load_records(const std::string& path);

} // namespace xspod
