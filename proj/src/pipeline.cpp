#include "xspod/pipeline.hpp"

#include "xspod/io.hpp"
#include "xspod/montecarlo.hpp"
#include "xspod/parallel.hpp"
#include "xspod/physics.hpp"
#include "xspod/projector.hpp"
#include "xspod/rng.hpp"
#include "xspod/svg.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace xspod {

namespace fs = std::filesystem;

namespace {

// Seed streams derived from the experiment seed.
constexpr std::uint64_t kPhantomStream = 0;
constexpr std::uint64_t kSimulationStream = 1;

const std::vector<std::string> kStageOrder = {"phantoms", "simulate", "datasets", "detect_with", "detect_without",
                                              "score", "pod", "compare", "report"};

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    for (const std::string& item : split_csv(text)) {
        const std::string t = trim(item);
        if (!t.empty())
            out.push_back(t);
    }
    return out;
}

std::string join(const std::vector<std::string>& items)
{
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i)
        out += (i ? "," : "") + items[i];
    return out;
}

std::uint64_t parse_u64(const std::string& text, const char* what)
{
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos)
        throw ValidationError(std::string("invalid unsigned integer for ") + what + ": '" + text + "'");
    errno = 0;
    const unsigned long long v = std::strtoull(text.c_str(), nullptr, 10);
    if (errno == ERANGE)
        throw ValidationError(std::string("value out of range for ") + what);
    return v;
}

bool parse_bool_word(const std::string& text, const char* what)
{
    if (text == "spr")
        return true;
    if (text == "none" || text.empty())
        return false;
    throw ValidationError(std::string("invalid value for ") + what + ": '" + text + "' (spr or none)");
}

std::string resolve_path(const std::string& path, const std::string& base_dir)
{
    if (path.empty() || fs::path(path).is_absolute() || base_dir.empty())
        return path;
    const fs::path candidate = fs::path(base_dir) / path;
    return fs::exists(candidate) ? candidate.lexically_normal().string() : path;
}

std::string sim_path(const std::string& out, int id, const char* suffix)
{
    return out + "/sim/" + std::to_string(id) + "_" + suffix + ".xr32";
}

std::string dataset_path(const std::string& out, const std::string& variant, int id)
{
    return out + "/" + variant + "/" + std::to_string(id) + ".xr32";
}

std::string mask_path(const std::string& out, const std::string& variant, int id)
{
    return out + "/detect_" + variant + "/" + std::to_string(id) + "_mask.xr32";
}

CountRaster to_counts(const RasterF& r)
{
    return r.unaryExpr([](float v) { return static_cast<std::int64_t>(std::llround(v)); });
}

RasterF to_float_counts(const CountRaster& c)
{
    return c.cast<float>();
}

std::vector<Phantom> selected_phantoms(const ExperimentConfig& cfg, const PhantomSet& set)
{
    std::vector<Phantom> out;
    for (const Phantom& p : set.phantoms)
        if (std::find(cfg.simulate_splits.begin(), cfg.simulate_splits.end(), p.split) != cfg.simulate_splits.end())
            out.push_back(p);
    return out;
}

bool has_variant(const ExperimentConfig& cfg, const std::string& v)
{
    return std::find(cfg.variants.begin(), cfg.variants.end(), v) != cfg.variants.end();
}

std::string fmt(double v) { return format_g9(v); }

// Failure message per fit name; empty when the fit file was written.
std::map<std::string, std::string> read_pod_status(const std::string& out)
{
    std::map<std::string, std::string> status;
    std::istringstream in(read_text_file(out + "/pod_status.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (trim(line).empty())
            continue;
        const auto f = split_csv(line);
        if (f.size() < 4)
            throw ValidationError("pod_status.csv: malformed row");
        status[f[0]] = f[1] == "ok" ? "" : f[3];
    }
    return status;
}

std::optional<PodFit> maybe_fit(const std::string& out, const std::string& name)
{
    const std::string path = out + "/fit_" + name + ".csv";
    if (!file_exists(path))
        return std::nullopt;
    return load_fit(path);
}

double safe_s90(const std::optional<PodFit>& fit, std::optional<double> spr = std::nullopt)
{
    if (!fit)
        return std::numeric_limits<double>::quiet_NaN();
    try {
        return s90(*fit, spr);
    } catch (const Error&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

double safe_s90_95(const std::optional<PodFit>& fit, std::optional<double> spr = std::nullopt)
{
    if (!fit)
        return std::numeric_limits<double>::quiet_NaN();
    try {
        return s90_95(*fit, spr);
    } catch (const Error&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

[[noreturn]] void rethrow_for_stage(const std::string& stage)
{
    try {
        throw;
    } catch (const ValidationError& e) {
        throw ValidationError("stage '" + stage + "' failed: " + e.what());
    } catch (const IoError& e) {
        throw IoError("stage '" + stage + "' failed: " + e.what());
    } catch (const std::exception& e) {
        throw Error("stage '" + stage + "' failed: " + e.what());
    }
}

} // namespace

// ---------------------------------------------------------------- config

ExperimentConfig parse_config(const std::string& text, const std::string& base_dir)
{
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        if (!kv.emplace(key, trim(t.substr(eq + 1))).second)
            throw ValidationError("config: duplicate key '" + key + "'");
    }

    ExperimentConfig c;
    if (!kv.count("seed"))
        throw ValidationError("config: 'seed' is required");
    bool cols_given = false, rows_given = false;
    for (const auto& [key, value] : kv) {
        const char* k = key.c_str();
        auto num = [&] { return parse_double(value, k); };
        auto integer = [&] { return static_cast<int>(parse_int(value, k)); };
        if (key == "seed") c.seed = parse_u64(value, k);
        else if (key == "material") c.material = value;
        else if (key == "spectrum") c.spectrum = value;
        else if (key == "output") c.output = value;
        else if (key == "phantoms.n_train") c.n_train = integer();
        else if (key == "phantoms.n_val") c.n_val = integer();
        else if (key == "phantoms.n_test") c.n_test = integer();
        else if (key == "phantoms.radius_min") c.ranges.radius.min = num();
        else if (key == "phantoms.radius_max") c.ranges.radius.max = num();
        else if (key == "phantoms.height_min") c.ranges.height.min = num();
        else if (key == "phantoms.height_max") c.ranges.height.max = num();
        else if (key == "phantoms.cavity_radius_min") c.ranges.cavity_base_radius.min = num();
        else if (key == "phantoms.cavity_radius_max") c.ranges.cavity_base_radius.max = num();
        else if (key == "phantoms.axis_ratio_min") c.ranges.axis_ratio.min = num();
        else if (key == "phantoms.axis_ratio_max") c.ranges.axis_ratio.max = num();
        else if (key == "simulate.photons") c.photons = parse_int(value, k);
        else if (key == "simulate.splits") {
            c.simulate_splits.clear();
            for (const auto& s : split_list(value))
                c.simulate_splits.push_back(parse_split(s));
        }
        else if (key == "geometry.sod") c.geometry.sod = num();
        else if (key == "geometry.sdd") c.geometry.sdd = num();
        else if (key == "geometry.det_width") c.geometry.det_width = num();
        else if (key == "geometry.det_height") c.geometry.det_height = num();
        else if (key == "geometry.pixel_pitch") c.geometry.pixel_pitch = num();
        else if (key == "geometry.n_cols") { c.geometry.n_cols = integer(); cols_given = true; }
        else if (key == "geometry.n_rows") { c.geometry.n_rows = integer(); rows_given = true; }
        else if (key == "detector.background_degree") c.detector.background_degree = integer();
        else if (key == "detector.noise_k") c.detector.noise_k = num();
        else if (key == "detector.min_component_px") c.detector.min_component_px = integer();
        else if (key == "detector.smoothing_radius") c.detector.smoothing_radius = integer();
        else if (key == "detector.noise_block_px") c.detector.noise_block_px = integer();
        else if (key == "detector.edge_margin_px") c.detector.edge_margin_px = integer();
        else if (key == "detector.silhouette_floor") c.detector.silhouette_floor = num();
        else if (key == "detector.fit_axis") c.detector.fit_axis = parse_fit_axis(value);
        else if (key == "detector.grow_k") c.detector.grow_k = num();
        else if (key == "detector.max_components") c.detector.max_components = integer();
        else if (key == "detector.masks_with") c.masks_with = resolve_path(value, base_dir);
        else if (key == "detector.masks_without") c.masks_without = resolve_path(value, base_dir);
        else if (key == "datasets.variants") c.variants = split_list(value);
        else if (key == "datasets.without_source") c.without_source = value;
        else if (key == "pod.link") c.link = parse_link(value);
        else if (key == "pod.threshold") c.threshold = num();
        else if (key == "pod.covariates") c.spr_covariate = parse_bool_word(value, k);
        else if (key == "pod.compare_points") c.compare_points = integer();
        else if (key == "report.histogram_bins") c.histogram_bins = integer();
        else throw ValidationError("config: unknown key '" + key + "'");
    }
    // Pixel counts follow the detector extent unless given explicitly.
    if (!cols_given)
        c.geometry.n_cols = static_cast<int>(std::lround(c.geometry.det_width / c.geometry.pixel_pitch));
    if (!rows_given)
        c.geometry.n_rows = static_cast<int>(std::lround(c.geometry.det_height / c.geometry.pixel_pitch));
    if (!fs::exists(c.material) && !base_dir.empty())
        c.material = resolve_path(c.material, base_dir);
    c.ranges.material = c.material;
    if (c.spectrum.rfind("kramers:", 0) != 0)
        c.spectrum = resolve_path(c.spectrum, base_dir);
    check_config(c);
    return c;
}

ExperimentConfig validate_config(const std::string& path)
{
    const fs::path p(path);
    return parse_config(read_text_file(path), p.has_parent_path() ? p.parent_path().string() : ".");
}

std::string resolve_material(const std::string& id)
{
    if (file_exists(id))
        return id;
    const std::string bundled = std::string(XSPOD_DATA_DIR) + "/materials/" + id + ".csv";
    if (file_exists(bundled))
        return bundled;
    throw ValidationError("material '" + id + "' is neither a file nor a bundled table");
}

void check_config(const ExperimentConfig& c)
{
    c.geometry.validate();
    c.ranges.validate();
    c.detector.validate();
    if (c.photons < 10'000)
        throw ValidationError("config: simulate.photons must be >= 10^4");
    if (c.n_train < 0 || c.n_val < 0 || c.n_test < 0)
        throw ValidationError("config: phantom counts must be non-negative");
    if (c.simulate_splits.empty())
        throw ValidationError("config: simulate.splits is empty");
    int simulated = 0;
    for (Split s : c.simulate_splits)
        simulated += s == Split::Train ? c.n_train : s == Split::Val ? c.n_val : c.n_test;
    if (simulated < 1)
        throw ValidationError("config: no phantoms in the simulated splits");
    if (c.variants.empty())
        throw ValidationError("config: datasets.variants is empty");
    std::set<std::string> seen;
    for (const auto& v : c.variants) {
        if (v != "with" && v != "without")
            throw ValidationError("config: unknown dataset variant '" + v + "' (with, without)");
        if (!seen.insert(v).second)
            throw ValidationError("config: duplicate dataset variant '" + v + "'");
    }
    if (c.without_source != "primary" && c.without_source != "analytic")
        throw ValidationError("config: datasets.without_source must be primary or analytic");
    if (!(c.threshold >= 0.0 && c.threshold <= 1.0))
        throw ValidationError("config: pod.threshold must be in [0, 1]");
    if (c.compare_points < 2 || c.histogram_bins < 2)
        throw ValidationError("config: pod.compare_points and report.histogram_bins must be >= 2");
    if (c.output.empty())
        throw ValidationError("config: output directory is empty");
    for (const std::string* dir : {&c.masks_with, &c.masks_without})
        if (!dir->empty() && !fs::is_directory(*dir))
            throw ValidationError("config: mask directory does not exist: " + *dir);

    const Material material = load_material(resolve_material(c.material));
    if (c.spectrum.rfind("kramers:", 0) != 0 && !file_exists(c.spectrum))
        throw ValidationError("config: spectrum file does not exist: " + c.spectrum);
    const Spectrum spectrum = spectrum_from_source(c.spectrum);
    if (!material.covers(spectrum))
        throw ValidationError("config: spectrum energies fall outside the material table");
}

std::string serialize_config(const ExperimentConfig& c)
{
    std::vector<std::string> splits;
    for (Split s : c.simulate_splits)
        splits.emplace_back(to_string(s));
    const std::map<std::string, std::string> kv = {
        {"seed", std::to_string(c.seed)},
        {"material", c.material},
        {"spectrum", c.spectrum},
        {"output", c.output},
        {"phantoms.n_train", std::to_string(c.n_train)},
        {"phantoms.n_val", std::to_string(c.n_val)},
        {"phantoms.n_test", std::to_string(c.n_test)},
        {"phantoms.radius_min", format_g17(c.ranges.radius.min)},
        {"phantoms.radius_max", format_g17(c.ranges.radius.max)},
        {"phantoms.height_min", format_g17(c.ranges.height.min)},
        {"phantoms.height_max", format_g17(c.ranges.height.max)},
        {"phantoms.cavity_radius_min", format_g17(c.ranges.cavity_base_radius.min)},
        {"phantoms.cavity_radius_max", format_g17(c.ranges.cavity_base_radius.max)},
        {"phantoms.axis_ratio_min", format_g17(c.ranges.axis_ratio.min)},
        {"phantoms.axis_ratio_max", format_g17(c.ranges.axis_ratio.max)},
        {"simulate.photons", std::to_string(c.photons)},
        {"simulate.splits", join(splits)},
        {"geometry.sod", format_g17(c.geometry.sod)},
        {"geometry.sdd", format_g17(c.geometry.sdd)},
        {"geometry.det_width", format_g17(c.geometry.det_width)},
        {"geometry.det_height", format_g17(c.geometry.det_height)},
        {"geometry.pixel_pitch", format_g17(c.geometry.pixel_pitch)},
        {"geometry.n_cols", std::to_string(c.geometry.n_cols)},
        {"geometry.n_rows", std::to_string(c.geometry.n_rows)},
        {"detector.background_degree", std::to_string(c.detector.background_degree)},
        {"detector.noise_k", format_g17(c.detector.noise_k)},
        {"detector.min_component_px", std::to_string(c.detector.min_component_px)},
        {"detector.smoothing_radius", std::to_string(c.detector.smoothing_radius)},
        {"detector.noise_block_px", std::to_string(c.detector.noise_block_px)},
        {"detector.edge_margin_px", std::to_string(c.detector.edge_margin_px)},
        {"detector.silhouette_floor", format_g17(c.detector.silhouette_floor)},
        {"detector.fit_axis", to_string(c.detector.fit_axis)},
        {"detector.grow_k", format_g17(c.detector.grow_k)},
        {"detector.max_components", std::to_string(c.detector.max_components)},
        {"detector.masks_with", c.masks_with},
        {"detector.masks_without", c.masks_without},
        {"datasets.variants", join(c.variants)},
        {"datasets.without_source", c.without_source},
        {"pod.link", to_string(c.link)},
        {"pod.threshold", format_g17(c.threshold)},
        {"pod.covariates", c.spr_covariate ? "spr" : "none"},
        {"pod.compare_points", std::to_string(c.compare_points)},
        {"report.histogram_bins", std::to_string(c.histogram_bins)},
    };
    std::string out;
    for (const auto& [k, v] : kv)
        out += k + " = " + v + "\n";
    return out;
}

std::string config_hash(const ExperimentConfig& c)
{
    ExperimentConfig keyed = c;
    keyed.output.clear(); // where results go does not change them
    return hex64(fnv1a(serialize_config(keyed)));
}

// -------------------------------------------------------------- manifest

const StageRecord* RunManifest::stage(const std::string& name) const
{
    for (const auto& s : stages)
        if (s.name == name)
            return &s;
    return nullptr;
}

bool RunManifest::complete() const
{
    return std::all_of(kStageOrder.begin(), kStageOrder.end(), [this](const std::string& n) {
        const StageRecord* s = stage(n);
        return s && s->complete;
    });
}

void save_manifest(const std::string& path, const RunManifest& m)
{
    nlohmann::json j;
    j["config_hash"] = m.config_hash;
    j["stages"] = nlohmann::json::array();
    for (const auto& s : m.stages)
        j["stages"].push_back({{"name", s.name}, {"complete", s.complete}, {"seconds", s.seconds}, {"artifacts", s.artifacts}});
    write_text_file(path, j.dump(2) + "\n");
}

RunManifest load_manifest(const std::string& path)
{
    RunManifest m;
    try {
        const nlohmann::json j = nlohmann::json::parse(read_text_file(path));
        m.config_hash = j.at("config_hash").get<std::string>();
        for (const auto& s : j.at("stages")) {
            StageRecord r;
            r.name = s.at("name").get<std::string>();
            r.complete = s.at("complete").get<bool>();
            r.seconds = s.at("seconds").get<double>();
            r.artifacts = s.at("artifacts").get<std::vector<std::string>>();
            m.stages.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest " + path + ": " + e.what());
    }
    return m;
}

int resolve_workers(int requested)
{
    if (requested > 0)
        return requested;
    if (const char* env = std::getenv("XSPOD_WORKERS")) {
        const long long n = parse_int(env, "XSPOD_WORKERS");
        if (n < 1)
            throw ValidationError("XSPOD_WORKERS must be >= 1");
        return static_cast<int>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// ------------------------------------------------------------------- run

namespace {

struct Context {
    const ExperimentConfig& cfg;
    std::string out;
    int workers = 1;
    std::ostream* log = nullptr;

    void note(const std::string& msg) const
    {
        if (log)
            *log << msg << std::endl;
    }

    std::vector<Phantom> phantoms() const { return selected_phantoms(cfg, load_phantoms(out + "/phantoms.csv")); }
};

std::vector<std::string> stage_phantoms(const Context& ctx)
{
    const ExperimentConfig& c = ctx.cfg;
    const PhantomSet set = generate_set(derive_seed(c.seed, kPhantomStream), c.n_train, c.n_val, c.n_test, c.ranges);
    save_phantoms(ctx.out + "/phantoms.csv", set);
    return {"phantoms.csv"};
}

std::vector<std::string> stage_simulate(const Context& ctx)
{
    const ExperimentConfig& c = ctx.cfg;
    const Material material = load_material(resolve_material(c.material));
    const Spectrum spectrum = spectrum_from_source(c.spectrum);
    ensure_directory(ctx.out + "/sim");
    std::vector<std::string> artifacts;
    const std::uint64_t stream = derive_seed(c.seed, kSimulationStream);
    for (const Phantom& ph : ctx.phantoms()) {
        SimulationOptions opt;
        opt.n_photons = c.photons;
        opt.seed = derive_seed(stream, static_cast<std::uint64_t>(ph.id));
        opt.workers = ctx.workers;
        const ProjectionSet set = simulate(ph, c.geometry, spectrum, material, opt);
        write_xr32(sim_path(ctx.out, ph.id, "P"), to_float_counts(set.tally.primary));
        write_xr32(sim_path(ctx.out, ph.id, "S"), to_float_counts(set.tally.scatter));
        write_xr32(sim_path(ctx.out, ph.id, "I0"), set.flatfield);
        write_xr32(sim_path(ctx.out, ph.id, "spr"), set.spr);
        write_mask_xr32(sim_path(ctx.out, ph.id, "mask"), ground_truth_mask(ph, c.geometry));
        Metadata meta = {
            {"phantom_id", std::to_string(ph.id)},
            {"material", c.material},
            {"spectrum", c.spectrum},
            {"photons", std::to_string(c.photons)},
            {"seed", std::to_string(opt.seed)},
            {"sod", format_g17(c.geometry.sod)},
            {"sdd", format_g17(c.geometry.sdd)},
            {"det_width", format_g17(c.geometry.det_width)},
            {"det_height", format_g17(c.geometry.det_height)},
            {"pixel_pitch", format_g17(c.geometry.pixel_pitch)},
            {"n_cols", std::to_string(c.geometry.n_cols)},
            {"n_rows", std::to_string(c.geometry.n_rows)},
            {"detected_primary", std::to_string(set.tally.detected_primary)},
            {"detected_scatter", std::to_string(set.tally.detected_scatter)},
            {"absorbed", std::to_string(set.tally.absorbed)},
            {"escaped", std::to_string(set.tally.escaped)},
        };
        const std::string meta_name = "sim/" + std::to_string(ph.id) + "_meta.txt";
        write_metadata(ctx.out + "/" + meta_name, meta);
        for (const char* s : {"P", "S", "I0", "spr", "mask"})
            artifacts.push_back("sim/" + std::to_string(ph.id) + "_" + s + ".xr32");
        artifacts.push_back(meta_name);
        ctx.note("  simulated phantom " + std::to_string(ph.id));
    }
    return artifacts;
}

std::vector<std::string> stage_datasets(const Context& ctx)
{
    const ExperimentConfig& c = ctx.cfg;
    std::vector<std::string> artifacts;
    for (const auto& v : c.variants)
        ensure_directory(ctx.out + "/" + v);
    std::optional<Material> material;
    std::optional<Spectrum> spectrum;
    if (c.without_source == "analytic") {
        material = load_material(resolve_material(c.material));
        spectrum = spectrum_from_source(c.spectrum);
    }
    for (const Phantom& ph : ctx.phantoms()) {
        const CountRaster p = to_counts(read_xr32(sim_path(ctx.out, ph.id, "P")));
        const CountRaster s = to_counts(read_xr32(sim_path(ctx.out, ph.id, "S")));
        const RasterF flat = read_xr32(sim_path(ctx.out, ph.id, "I0"));
        if (has_variant(c, "with")) {
            write_xr32(dataset_path(ctx.out, "with", ph.id), preprocess<std::int64_t>(p + s, flat));
            artifacts.push_back("with/" + std::to_string(ph.id) + ".xr32");
        }
        if (has_variant(c, "without")) {
            RasterF img;
            if (c.without_source == "primary") {
                img = preprocess<std::int64_t>(p, flat);
            } else {
                ProjectorOptions po;
                po.workers = ctx.workers;
                img = preprocess<float>(forward_project(ph, c.geometry, *spectrum, *material, flat, po).expected_counts, flat);
            }
            write_xr32(dataset_path(ctx.out, "without", ph.id), img);
            artifacts.push_back("without/" + std::to_string(ph.id) + ".xr32");
        }
    }
    return artifacts;
}

std::vector<std::string> stage_detect(const Context& ctx, const std::string& variant)
{
    const ExperimentConfig& c = ctx.cfg;
    if (!has_variant(c, variant))
        return {};
    const std::string dir = ctx.out + "/detect_" + variant;
    ensure_directory(dir);
    const std::vector<Phantom> phantoms = ctx.phantoms();
    const std::string& import_dir = variant == "with" ? c.masks_with : c.masks_without;
    std::vector<std::string> artifacts;
    if (!import_dir.empty()) {
        const auto masks = import_masks(import_dir, std::make_pair<Eigen::Index, Eigen::Index>(c.geometry.n_rows, c.geometry.n_cols));
        for (const Phantom& ph : phantoms) {
            const auto it = masks.find(ph.id);
            if (it == masks.end())
                throw ValidationError("no imported mask for phantom " + std::to_string(ph.id) + " in " + import_dir);
            write_mask_xr32(mask_path(ctx.out, variant, ph.id), it->second);
        }
    } else {
        parallel_tasks(static_cast<long long>(phantoms.size()), ctx.workers, [&](long long i, int) {
            const Phantom& ph = phantoms[static_cast<std::size_t>(i)];
            const RasterF img = read_xr32(dataset_path(ctx.out, variant, ph.id));
            write_mask_xr32(mask_path(ctx.out, variant, ph.id), detect_baseline(img, c.detector));
        });
    }
    for (const Phantom& ph : phantoms)
        artifacts.push_back("detect_" + variant + "/" + std::to_string(ph.id) + "_mask.xr32");
    return artifacts;
}

std::vector<std::string> stage_score(const Context& ctx)
{
    const ExperimentConfig& c = ctx.cfg;
    const std::vector<Phantom> phantoms = ctx.phantoms();
    std::map<int, Mask> truths;
    std::map<int, RasterF> sprs;
    for (const Phantom& ph : phantoms) {
        truths[ph.id] = read_mask_xr32(sim_path(ctx.out, ph.id, "mask"));
        sprs[ph.id] = read_xr32(sim_path(ctx.out, ph.id, "spr"));
    }
    std::vector<std::string> artifacts;
    for (const auto& v : c.variants) {
        std::map<int, Mask> masks;
        for (const Phantom& ph : phantoms)
            masks[ph.id] = read_mask_xr32(mask_path(ctx.out, v, ph.id));
        save_records(ctx.out + "/records_" + v + ".csv", score_dataset(masks, truths, phantoms, sprs, c.geometry));
        artifacts.push_back("records_" + v + ".csv");
    }
    return artifacts;
}

std::vector<std::string> stage_pod(const Context& ctx)
{
    const ExperimentConfig& c = ctx.cfg;
    std::vector<std::string> artifacts{"pod_status.csv"};
    std::ostringstream status;
    status << "fit,status,skipped_records,message\n";
    for (const auto& v : c.variants) {
        const auto records = binarize(load_records(ctx.out + "/records_" + v + ".csv"), c.threshold);
        std::vector<std::pair<std::string, bool>> fits{{v, false}};
        if (c.spr_covariate)
            fits.emplace_back(v + "_spr", true);
        for (const auto& [name, multi] : fits) {
            const std::string path = ctx.out + "/fit_" + name + ".csv";
            std::error_code ec;
            fs::remove(path, ec);
            std::size_t skipped = 0;
            try {
                const PodFit fit = fit_records(records, c.link, multi, &skipped);
                save_fit(path, fit);
                artifacts.push_back("fit_" + name + ".csv");
                status << name << ",ok," << skipped << ",\n";
            } catch (const Error& e) {
                // Fitting failures are results, not pipeline faults.
                std::string msg = e.what();
                std::replace(msg.begin(), msg.end(), ',', ';');
                status << name << ",failed," << skipped << ',' << msg << '\n';
                ctx.note("  fit " + name + " failed: " + msg);
            }
        }
    }
    write_text_file(ctx.out + "/pod_status.csv", status.str());
    return artifacts;
}

std::vector<std::string> stage_compare(const Context& ctx)
{
    const ExperimentConfig& c = ctx.cfg;
    std::ostringstream summary;
    if (!(has_variant(c, "with") && has_variant(c, "without"))) {
        summary << "verdict = unavailable\nreason = a single dataset variant\n";
        write_text_file(ctx.out + "/compare.txt", summary.str());
        return {"compare.txt"};
    }
    const auto fa = maybe_fit(ctx.out, "with");
    const auto fb = maybe_fit(ctx.out, "without");
    if (!fa || !fb || !fa->converged || !fb->converged) {
        summary << "verdict = unavailable\nreason = a univariate fit is missing or did not converge\n";
        write_text_file(ctx.out + "/compare.txt", summary.str());
        return {"compare.txt"};
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& v : {"with", "without"})
        for (const auto& r : load_records(ctx.out + "/records_" + std::string(v) + ".csv")) {
            lo = std::min(lo, r.defect_size_mm);
            hi = std::max(hi, r.defect_size_mm);
        }
    const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(c.compare_points, lo, hi);
    const Comparison cmp = compare_fits(*fa, *fb, grid);
    std::ostringstream table;
    table << "s_mm,p_with,lo95_with,hi95_with,p_without,lo95_without,hi95_without,without_outside_with,with_outside_without\n";
    for (const auto& d : cmp.detail)
        table << fmt(d.s) << ',' << fmt(d.a.p) << ',' << fmt(d.a.lo95) << ',' << fmt(d.a.hi95) << ',' << fmt(d.b.p) << ','
              << fmt(d.b.lo95) << ',' << fmt(d.b.hi95) << ',' << d.b_outside_a << ',' << d.a_outside_b << '\n';
    write_text_file(ctx.out + "/compare.csv", table.str());
    summary << "a = with\nb = without\nverdict = " << to_string(cmp.verdict) << '\n';
    write_text_file(ctx.out + "/compare.txt", summary.str());
    return {"compare.txt", "compare.csv"};
}

std::vector<std::string> stage_report(const Context& ctx)
{
    const std::string dir = report(ctx.out);
    std::vector<std::string> artifacts;
    for (const auto& e : fs::directory_iterator(dir))
        artifacts.push_back("report/" + e.path().filename().string());
    std::sort(artifacts.begin(), artifacts.end());
    return artifacts;
}

} // namespace

RunManifest run(const ExperimentConfig& config, const RunOptions& options)
{
    check_config(config);
    Context ctx{config, config.output, resolve_workers(options.workers), options.log};
    ensure_directory(ctx.out);
    const std::string manifest_path = ctx.out + "/manifest.json";
    const std::string hash = config_hash(config);

    RunManifest manifest;
    if (file_exists(manifest_path)) {
        manifest = load_manifest(manifest_path);
        if (manifest.config_hash != hash) {
            ctx.note("config changed; recomputing every stage");
            manifest.stages.clear();
        }
    }
    manifest.config_hash = hash;
    write_text_file(ctx.out + "/config.txt", serialize_config(config));

    const std::map<std::string, std::function<std::vector<std::string>(const Context&)>> stages = {
        {"phantoms", stage_phantoms},
        {"simulate", stage_simulate},
        {"datasets", stage_datasets},
        {"detect_with", [](const Context& c) { return stage_detect(c, "with"); }},
        {"detect_without", [](const Context& c) { return stage_detect(c, "without"); }},
        {"score", stage_score},
        {"pod", stage_pod},
        {"compare", stage_compare},
        {"report", stage_report},
    };

    bool upstream_ran = false;
    std::vector<StageRecord> records;
    for (const std::string& name : kStageOrder) {
        const StageRecord* prev = manifest.stage(name);
        const bool intact = prev && prev->complete
            && std::all_of(prev->artifacts.begin(), prev->artifacts.end(),
                           [&](const std::string& a) { return file_exists(ctx.out + "/" + a); });
        if (!upstream_ran && intact) {
            records.push_back(*prev);
            ctx.note("[" + name + "] up to date");
            continue;
        }
        upstream_ran = true;
        ctx.note("[" + name + "] running");
        const auto t0 = std::chrono::steady_clock::now();
        StageRecord rec;
        rec.name = name;
        try {
            rec.artifacts = stages.at(name)(ctx);
        } catch (...) {
            manifest.stages = records;
            save_manifest(manifest_path, manifest);
            rethrow_for_stage(name);
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.complete = true;
        records.push_back(rec);
        manifest.executed.push_back(name);
        manifest.stages = records;
        save_manifest(manifest_path, manifest);
    }
    manifest.stages = records;
    save_manifest(manifest_path, manifest);
    return manifest;
}

// ---------------------------------------------------------------- report

std::vector<Table1Row> table1_rows(const std::string& out, const std::vector<std::string>& variants)
{
    std::vector<Table1Row> rows;
    for (const auto& v : variants) {
        const auto fit = maybe_fit(out, v);
        rows.push_back({v, safe_s90(fit), safe_s90_95(fit)});
    }
    // Relative change from removing scatter.
    if (rows.size() == 2 && rows[0].variant == "with" && rows[1].variant == "without")
        rows.push_back({"difference", (rows[1].s90_mm - rows[0].s90_mm) / rows[0].s90_mm,
                        (rows[1].s90_95_mm - rows[0].s90_95_mm) / rows[0].s90_95_mm});
    return rows;
}

std::string report(const std::string& out)
{
    if (!file_exists(out + "/config.txt") || !file_exists(out + "/pod_status.csv"))
        throw ValidationError("report: " + out + " has no completed POD stage");
    const ExperimentConfig cfg = parse_config(read_text_file(out + "/config.txt"), "");
    const auto status = read_pod_status(out);
    for (const auto& v : cfg.variants)
        if (!status.count(v))
            throw ValidationError("report: no fit recorded for variant '" + v + "'");

    const std::string dir = out + "/report";
    ensure_directory(dir);

    // Table 1: univariate s90 and s90/95 per variant.
    const auto rows = table1_rows(out, cfg.variants);
    std::ostringstream t1;
    t1 << "variant,s90_mm,s90_95_mm\n";
    for (const auto& r : rows)
        t1 << r.variant << ',' << fmt(r.s90_mm) << ',' << fmt(r.s90_95_mm) << '\n';
    write_text_file(dir + "/table1.csv", t1.str());

    std::ostringstream summary;
    for (const auto& [name, msg] : status)
        summary << "fit_" << name << " = " << (msg.empty() ? "ok" : msg) << '\n';

    // Table 2: multivariate s90 at the SPR extremes of each variant.
    if (cfg.spr_covariate) {
        std::ostringstream t2;
        t2 << "variant,min_spr,max_spr,gamma,s90_at_zero_spr_mm,s90_at_min_spr_mm,s90_at_max_spr_mm\n";
        for (const auto& v : cfg.variants) {
            const auto records = load_records(out + "/records_" + v + ".csv");
            double lo = std::numeric_limits<double>::infinity(), hi = -lo, s_max = 0.0;
            for (const auto& r : records) {
                s_max = std::max(s_max, r.defect_size_mm);
                if (std::isfinite(r.defect_spr)) {
                    lo = std::min(lo, r.defect_spr);
                    hi = std::max(hi, r.defect_spr);
                }
            }
            const auto fit = maybe_fit(out, v + "_spr");
            const double nan = std::numeric_limits<double>::quiet_NaN();
            t2 << v << ',' << fmt(std::isfinite(lo) ? lo : nan) << ',' << fmt(std::isfinite(hi) ? hi : nan) << ','
               << fmt(fit ? fit->gamma() : nan) << ',' << fmt(safe_s90(fit, 0.0)) << ','
               << fmt(std::isfinite(lo) ? safe_s90(fit, lo) : nan) << ',' << fmt(std::isfinite(hi) ? safe_s90(fit, hi) : nan)
               << '\n';
            if (fit && fit->converged && std::isfinite(hi))
                write_text_file(dir + "/pod_spr_" + v + ".svg",
                                fixed_spr_svg(*fit, {0.0, hi}, s_max, "POD at fixed SPR (" + v + " scatter)"));
        }
        write_text_file(dir + "/table2.csv", t2.str());
    }

    // Per-variant plots: F1 scatter, binned success histogram, POD curve.
    for (const auto& v : cfg.variants) {
        const auto records = binarize(load_records(out + "/records_" + v + ".csv"), cfg.threshold);
        write_text_file(dir + "/f1_" + v + ".svg", f1_scatter_svg(records, cfg.threshold, "F1 vs defect size (" + v + " scatter)"));
        const SizeHistogram h = binned_histogram(records, cfg.histogram_bins);
        std::ostringstream hist;
        hist << "bin_lo_mm,bin_hi_mm,count,success_fraction\n";
        for (Eigen::Index i = 0; i < h.count.size(); ++i)
            hist << fmt(h.bin_edges(i)) << ',' << fmt(h.bin_edges(i + 1)) << ',' << h.count(i) << ','
                 << fmt(h.success_fraction(i)) << '\n';
        write_text_file(dir + "/histogram_" + v + ".csv", hist.str());
        write_text_file(dir + "/histogram_" + v + ".svg", histogram_svg(h, "Success fraction by size (" + v + " scatter)"));
        const auto fit = maybe_fit(out, v);
        if (fit && fit->converged)
            write_text_file(dir + "/pod_" + v + ".svg", pod_curve_svg(*fit, records, "POD (" + v + " scatter)"));
        std::size_t n_success = 0;
        for (const auto& r : records)
            n_success += r.success;
        summary << "records_" << v << " = " << records.size() << " (" << n_success << " successes)\n";
    }
    if (file_exists(out + "/compare.txt"))
        summary << read_text_file(out + "/compare.txt");
    write_text_file(dir + "/summary.txt", summary.str());
    return dir;
}

} // namespace xspod
