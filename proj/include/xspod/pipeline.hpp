#pragma once

#include "xspod/detect.hpp"
#include "xspod/geometry.hpp"
#include "xspod/phantom.hpp"
#include "xspod/pod.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace xspod {

/// Flat "section.key = value" experiment description. Lines starting with
/// '#' are comments. Unknown keys are rejected.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string material = "pmma";    ///< table id under data/materials, or a CSV path
    std::string spectrum = "kramers:90";

    int n_train = 0;
    int n_val = 0;
    int n_test = 10;
    PhantomParamRanges ranges;
    std::vector<Split> simulate_splits{Split::Test};

    AcquisitionGeometry geometry;
    std::int64_t photons = 10'000'000;

    DetectorParams detector;
    /// Directories of externally produced masks; empty selects the baseline detector.
    std::string masks_with;
    std::string masks_without;

    std::vector<std::string> variants{"with", "without"};
    /// "primary" (MC primary-only counts) or "analytic" (noise-free projector).
    std::string without_source = "primary";

    Link link = Link::Logit;
    double threshold = 0.5;
    bool spr_covariate = true;
    int compare_points = 50;
    int histogram_bins = 10;

    std::string output = "xspod_out";

    bool operator==(const ExperimentConfig&) const = default;
};

/// Parses and validates config text. `base_dir` resolves relative paths.
ExperimentConfig parse_config(const std::string& text, const std::string& base_dir = ".");

/// Reads a config file, applies defaults and checks every invariant.
ExperimentConfig validate_config(const std::string& path);

/// Checks invariants, including that referenced files exist.
void check_config(const ExperimentConfig& config);

/// Canonical text: every key, sorted, 17 significant digits.
std::string serialize_config(const ExperimentConfig& config);

/// Hash of the result-relevant part of the canonical text.
std::string config_hash(const ExperimentConfig& config);

/// Material file path for an id or path.
std::string resolve_material(const std::string& id);

struct StageRecord {
    std::string name;
    bool complete = false;
    double seconds = 0.0;
    std::vector<std::string> artifacts; ///< relative to the output directory
};

struct RunManifest {
    std::string config_hash;
    std::vector<StageRecord> stages;
    /// Stages executed by the last run() call (not persisted).
    std::vector<std::string> executed;

    const StageRecord* stage(const std::string& name) const;
    bool complete() const;
};

void save_manifest(const std::string& path, const RunManifest& manifest);
RunManifest load_manifest(const std::string& path);

struct RunOptions {
    int workers = 0; ///< 0: XSPOD_WORKERS, else hardware concurrency
    std::ostream* log = nullptr;
};

/// Worker count after the environment override.
int resolve_workers(int requested);

/// Runs or resumes every stage; completed stages whose artifacts are all
/// present are skipped. A failing stage throws Error naming the stage.
RunManifest run(const ExperimentConfig& config, const RunOptions& options = {});

/// Tables and plots from the records and fit files in `output_dir`.
/// Returns the report directory.
std::string report(const std::string& output_dir);

/// Table 1 rows computed from fits alone. With exactly the with/without pair a
/// "difference" row of relative changes (without - with) / with follows.
struct Table1Row {
    std::string variant;
    double s90_mm = 0.0;
    double s90_95_mm = 0.0;
};

std::vector<Table1Row> table1_rows(const std::string& output_dir, const std::vector<std::string>& variants);

} // namespace xspod
