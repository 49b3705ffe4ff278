// xspod command-line front end.

#include "xspod/detect.hpp"
#include "xspod/io.hpp"
#include "xspod/montecarlo.hpp"
#include "xspod/phantom.hpp"
#include "xspod/physics.hpp"
#include "xspod/pipeline.hpp"
#include "xspod/pod.hpp"
#include "xspod/projector.hpp"
#include "xspod/rng.hpp"
#include "xspod/svg.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

using namespace xspod;
namespace fs = std::filesystem;

namespace {

void add_geometry(CLI::App* cmd, AcquisitionGeometry& g)
{
    cmd->add_option("--sod", g.sod, "source-object distance [mm]")->capture_default_str();
    cmd->add_option("--sdd", g.sdd, "source-detector distance [mm]")->capture_default_str();
    cmd->add_option("--det-width", g.det_width, "detector width [mm]")->capture_default_str();
    cmd->add_option("--det-height", g.det_height, "detector height [mm]")->capture_default_str();
    cmd->add_option("--pitch", g.pixel_pitch, "pixel pitch [mm]")->capture_default_str();
}

void finish_geometry(AcquisitionGeometry& g)
{
    g.n_cols = static_cast<int>(std::lround(g.det_width / g.pixel_pitch));
    g.n_rows = static_cast<int>(std::lround(g.det_height / g.pixel_pitch));
    g.validate();
}

std::vector<Phantom> pick(const PhantomSet& set, const std::vector<int>& ids)
{
    if (ids.empty())
        return set.phantoms;
    std::vector<Phantom> out;
    for (int id : ids) {
        auto it = std::find_if(set.phantoms.begin(), set.phantoms.end(), [id](const Phantom& p) { return p.id == id; });
        if (it == set.phantoms.end())
            throw ValidationError("no phantom with id " + std::to_string(id));
        out.push_back(*it);
    }
    return out;
}

std::optional<double> opt_spr(const std::vector<double>& v)
{
    return v.empty() ? std::nullopt : std::optional<double>(v.front());
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Scatter-aware probability-of-detection toolkit for X-ray radiography"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    // phantoms
    auto* ph_cmd = app.add_subcommand("phantoms", "generate a randomised phantom set");
    std::uint64_t ph_seed = 0;
    int n_train = 0, n_val = 0, n_test = 10;
    PhantomParamRanges ranges;
    std::string ph_out = "phantoms.csv";
    ph_cmd->add_option("--seed", ph_seed, "generator seed")->required();
    ph_cmd->add_option("--train", n_train, "training phantoms")->capture_default_str();
    ph_cmd->add_option("--val", n_val, "validation phantoms")->capture_default_str();
    ph_cmd->add_option("--test", n_test, "test phantoms")->capture_default_str();
    ph_cmd->add_option("--material", ranges.material, "material id")->capture_default_str();
    ph_cmd->add_option("--radius-min", ranges.radius.min, "cylinder radius lower bound [mm]")->capture_default_str();
    ph_cmd->add_option("--radius-max", ranges.radius.max, "cylinder radius upper bound [mm]")->capture_default_str();
    ph_cmd->add_option("--height-min", ranges.height.min, "cylinder height lower bound [mm]")->capture_default_str();
    ph_cmd->add_option("--height-max", ranges.height.max, "cylinder height upper bound [mm]")->capture_default_str();
    ph_cmd->add_option("--cavity-min", ranges.cavity_base_radius.min, "cavity base radius lower bound [mm]")->capture_default_str();
    ph_cmd->add_option("--cavity-max", ranges.cavity_base_radius.max, "cavity base radius upper bound [mm]")->capture_default_str();
    ph_cmd->add_option("--ratio-min", ranges.axis_ratio.min, "cavity axis ratio lower bound")->capture_default_str();
    ph_cmd->add_option("--ratio-max", ranges.axis_ratio.max, "cavity axis ratio upper bound")->capture_default_str();
    ph_cmd->add_option("--out", ph_out, "output CSV")->capture_default_str();

    // hvl
    auto* hvl_cmd = app.add_subcommand("hvl", "half-value layer of a material for a spectrum");
    std::string hvl_material = "pmma", hvl_spectrum = "kramers:90";
    hvl_cmd->add_option("--material", hvl_material, "material id or CSV path")->capture_default_str();
    hvl_cmd->add_option("--spectrum", hvl_spectrum, "spectrum CSV or kramers:KV[:CUTOFF]")->capture_default_str();

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "Monte-Carlo projections of phantoms");
    std::string sim_phantoms, sim_material, sim_spectrum = "kramers:90", sim_out = "sim";
    std::vector<int> sim_ids;
    std::int64_t sim_photons = 10'000'000;
    std::uint64_t sim_seed = 0;
    int sim_workers = 0;
    AcquisitionGeometry sim_geom;
    sim_cmd->add_option("--phantoms", sim_phantoms, "phantom CSV")->required();
    sim_cmd->add_option("--id", sim_ids, "phantom ids (default: all)");
    sim_cmd->add_option("--material", sim_material, "material override (default: per phantom)");
    sim_cmd->add_option("--spectrum", sim_spectrum, "spectrum CSV or kramers:KV[:CUTOFF]")->capture_default_str();
    sim_cmd->add_option("--photons", sim_photons, "photons per projection")->capture_default_str();
    sim_cmd->add_option("--seed", sim_seed, "simulation seed")->required();
    sim_cmd->add_option("--workers", sim_workers, "worker threads (0: XSPOD_WORKERS or all cores)");
    sim_cmd->add_option("--out", sim_out, "output directory")->capture_default_str();
    add_geometry(sim_cmd, sim_geom);

    // project
    auto* prj_cmd = app.add_subcommand("project", "noise-free deterministic projection");
    std::string prj_phantoms, prj_material, prj_spectrum = "kramers:90", prj_out = "proj";
    std::vector<int> prj_ids;
    double prj_flat = 1.0;
    int prj_super = 1, prj_workers = 0;
    AcquisitionGeometry prj_geom;
    prj_cmd->add_option("--phantoms", prj_phantoms, "phantom CSV")->required();
    prj_cmd->add_option("--id", prj_ids, "phantom ids (default: all)");
    prj_cmd->add_option("--material", prj_material, "material override (default: per phantom)");
    prj_cmd->add_option("--spectrum", prj_spectrum, "spectrum CSV or kramers:KV[:CUTOFF]")->capture_default_str();
    prj_cmd->add_option("--flatfield", prj_flat, "expected unattenuated counts per pixel")->capture_default_str();
    prj_cmd->add_option("--supersampling", prj_super, "sub-rays per pixel side")->capture_default_str();
    prj_cmd->add_option("--workers", prj_workers, "worker threads");
    prj_cmd->add_option("--out", prj_out, "output directory")->capture_default_str();
    add_geometry(prj_cmd, prj_geom);

    // detect
    auto* det_cmd = app.add_subcommand("detect", "baseline defect detector");
    std::string det_in, det_variant = "with", det_params, det_out = "masks";
    det_cmd->add_option("--in", det_in, "directory of preprocessed images")->required();
    det_cmd->add_option("--variant", det_variant, "with | without")->check(CLI::IsMember({"with", "without"}))->capture_default_str();
    det_cmd->add_option("--params", det_params, "detector parameter file (key = value)");
    det_cmd->add_option("--out", det_out, "mask output directory")->capture_default_str();

    // score
    auto* sc_cmd = app.add_subcommand("score", "F1 scoring against ground truth");
    std::string sc_masks, sc_truth, sc_spr, sc_phantoms, sc_out = "records.csv";
    AcquisitionGeometry sc_geom;
    sc_cmd->add_option("--masks", sc_masks, "predicted masks (<id>_mask.xr32)")->required();
    sc_cmd->add_option("--truth", sc_truth, "ground-truth masks (<id>_mask.xr32)")->required();
    sc_cmd->add_option("--spr", sc_spr, "directory of <id>_spr.xr32 (default: --truth)");
    sc_cmd->add_option("--phantoms", sc_phantoms, "phantom CSV")->required();
    sc_cmd->add_option("--out", sc_out, "records CSV")->capture_default_str();
    add_geometry(sc_cmd, sc_geom);

    // pod
    auto* pod_cmd = app.add_subcommand("pod", "probability-of-detection analysis");
    pod_cmd->require_subcommand(1);
    auto* fit_cmd = pod_cmd->add_subcommand("fit", "fit a POD curve to records");
    std::string fit_records_path, fit_cov = "none", fit_link = "logit", fit_out = "fit.csv";
    double fit_thr = 0.5;
    fit_cmd->add_option("--records", fit_records_path, "records CSV")->required();
    fit_cmd->add_option("--covariate", fit_cov, "extra covariate: none | spr")->check(CLI::IsMember({"none", "spr"}))->capture_default_str();
    fit_cmd->add_option("--link", fit_link, "logit | probit | cloglog")->check(CLI::IsMember({"logit", "probit", "cloglog"}))->capture_default_str();
    fit_cmd->add_option("--threshold", fit_thr, "success when F1 > threshold")->capture_default_str();
    fit_cmd->add_option("--out", fit_out, "fit CSV")->capture_default_str();

    auto* eval_cmd = pod_cmd->add_subcommand("eval", "evaluate POD and its 95% band");
    std::string eval_fit;
    std::vector<double> eval_s, eval_spr;
    eval_cmd->add_option("--fit", eval_fit, "fit CSV")->required();
    eval_cmd->add_option("--s", eval_s, "defect sizes [mm]")->required();
    eval_cmd->add_option("--spr", eval_spr, "SPR value (multivariate fits)")->expected(0, 1);

    auto* s90_cmd = pod_cmd->add_subcommand("s90", "s90 and s90/95");
    std::string s90_fit;
    std::vector<double> s90_spr;
    s90_cmd->add_option("--fit", s90_fit, "fit CSV")->required();
    s90_cmd->add_option("--spr", s90_spr, "SPR value (multivariate fits)")->expected(0, 1);

    auto* cmp_cmd = pod_cmd->add_subcommand("compare", "band-overlap comparison of two fits");
    std::string cmp_a, cmp_b;
    double cmp_lo = 0.0, cmp_hi = 3.0;
    int cmp_n = 50;
    std::vector<double> cmp_spr;
    cmp_cmd->add_option("--a", cmp_a, "fit CSV a")->required();
    cmp_cmd->add_option("--b", cmp_b, "fit CSV b")->required();
    cmp_cmd->add_option("--s-min", cmp_lo, "grid start [mm]")->capture_default_str();
    cmp_cmd->add_option("--s-max", cmp_hi, "grid end [mm]")->capture_default_str();
    cmp_cmd->add_option("--points", cmp_n, "grid points")->capture_default_str();
    cmp_cmd->add_option("--spr", cmp_spr, "SPR value for multivariate fits")->expected(0, 1);

    auto* plot_cmd = pod_cmd->add_subcommand("plot", "SVG POD curve with band, rug and s90 markers");
    std::string plot_fit, plot_records, plot_out = "pod.svg", plot_title = "POD";
    double plot_thr = 0.5;
    plot_cmd->add_option("--fit", plot_fit, "fit CSV")->required();
    plot_cmd->add_option("--records", plot_records, "records CSV")->required();
    plot_cmd->add_option("--threshold", plot_thr, "success threshold for the rug")->capture_default_str();
    plot_cmd->add_option("--title", plot_title, "plot title")->capture_default_str();
    plot_cmd->add_option("--out", plot_out, "SVG path")->capture_default_str();

    // run / report
    auto* run_cmd = app.add_subcommand("run", "run or resume an experiment from a config file");
    std::string run_config;
    int run_workers = 0;
    run_cmd->add_option("--config", run_config, "experiment config")->required();
    run_cmd->add_option("--workers", run_workers, "worker threads (0: XSPOD_WORKERS or all cores)");

    auto* rep_cmd = app.add_subcommand("report", "tables and plots from a finished run");
    std::string rep_dir;
    rep_cmd->add_option("--dir", rep_dir, "run output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*ph_cmd) {
            save_phantoms(ph_out, generate_set(ph_seed, n_train, n_val, n_test, ranges));
        } else if (*hvl_cmd) {
            const Material m = load_material(resolve_material(hvl_material));
            std::printf("%s\n", format_g9(hvl(m, spectrum_from_source(hvl_spectrum))).c_str());
        } else if (*sim_cmd) {
            finish_geometry(sim_geom);
            const Spectrum spectrum = spectrum_from_source(sim_spectrum);
            ensure_directory(sim_out);
            std::map<std::string, Material> materials;
            for (const Phantom& ph : pick(load_phantoms(sim_phantoms), sim_ids)) {
                const std::string id = sim_material.empty() ? ph.cylinder.material : sim_material;
                if (!materials.count(id))
                    materials.emplace(id, load_material(resolve_material(id)));
                SimulationOptions opt;
                opt.n_photons = sim_photons;
                opt.seed = derive_seed(sim_seed, static_cast<std::uint64_t>(ph.id));
                opt.workers = resolve_workers(sim_workers);
                const ProjectionSet set = simulate(ph, sim_geom, spectrum, materials.at(id), opt);
                const std::string base = sim_out + "/" + std::to_string(ph.id) + "_";
                write_xr32(base + "P.xr32", set.tally.primary.cast<float>());
                write_xr32(base + "S.xr32", set.tally.scatter.cast<float>());
                write_xr32(base + "I0.xr32", set.flatfield);
                write_xr32(base + "spr.xr32", set.spr);
                write_xr32(base + "with.xr32", set.with_scatter_log);
                write_xr32(base + "without.xr32", set.primary_only_log);
                write_mask_xr32(base + "mask.xr32", ground_truth_mask(ph, sim_geom));
                write_metadata(base + "meta.txt", {{"phantom_id", std::to_string(ph.id)},
                                                   {"material", id},
                                                   {"spectrum", sim_spectrum},
                                                   {"photons", std::to_string(sim_photons)},
                                                   {"seed", std::to_string(opt.seed)},
                                                   {"sod", format_g17(sim_geom.sod)},
                                                   {"sdd", format_g17(sim_geom.sdd)},
                                                   {"pixel_pitch", format_g17(sim_geom.pixel_pitch)},
                                                   {"n_cols", std::to_string(sim_geom.n_cols)},
                                                   {"n_rows", std::to_string(sim_geom.n_rows)}});
                std::printf("phantom %d: primary %lld scatter %lld\n", ph.id,
                            static_cast<long long>(set.tally.detected_primary),
                            static_cast<long long>(set.tally.detected_scatter));
            }
        } else if (*prj_cmd) {
            finish_geometry(prj_geom);
            const Spectrum spectrum = spectrum_from_source(prj_spectrum);
            ensure_directory(prj_out);
            ProjectorOptions po;
            po.supersampling = prj_super;
            po.workers = resolve_workers(prj_workers);
            for (const Phantom& ph : pick(load_phantoms(prj_phantoms), prj_ids)) {
                const Material m = load_material(resolve_material(prj_material.empty() ? ph.cylinder.material : prj_material));
                const Projection p = forward_project(ph, prj_geom, spectrum, m, prj_flat, po);
                const std::string base = prj_out + "/" + std::to_string(ph.id) + "_";
                write_xr32(base + "expected.xr32", p.expected_counts);
                write_xr32(base + "transmission.xr32", p.transmission);
                write_xr32(base + "log.xr32", preprocess<float>(p.expected_counts, RasterF::Constant(p.expected_counts.rows(), p.expected_counts.cols(), static_cast<float>(prj_flat))));
                write_mask_xr32(base + "mask.xr32", ground_truth_mask(ph, prj_geom));
            }
        } else if (*det_cmd) {
            const DetectorParams params = det_params.empty() ? DetectorParams{} : load_detector_params(det_params);
            ensure_directory(det_out);
            // Accepts a run's "<variant>/<id>.xr32" layout or simulate's "<id>_<variant>.xr32".
            const fs::path nested = fs::path(det_in) / det_variant;
            const bool use_nested = fs::is_directory(nested);
            const std::string suffix = use_nested ? ".xr32" : "_" + det_variant + ".xr32";
            int n = 0;
            for (const auto& e : fs::directory_iterator(use_nested ? nested : fs::path(det_in))) {
                const std::string name = e.path().filename().string();
                if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
                    continue;
                const std::string id = name.substr(0, name.size() - suffix.size());
                if (id.find_first_not_of("0123456789") != std::string::npos)
                    continue;
                write_mask_xr32(det_out + "/" + id + "_mask.xr32", detect_baseline(read_xr32(e.path().string()), params));
                ++n;
            }
            if (n == 0)
                throw ValidationError("detect: no " + det_variant + " images found in " + det_in);
            std::printf("%d masks written to %s\n", n, det_out.c_str());
        } else if (*sc_cmd) {
            finish_geometry(sc_geom);
            const PhantomSet set = load_phantoms(sc_phantoms);
            const auto masks = import_masks(sc_masks);
            const auto truths = import_masks(sc_truth);
            const std::string spr_dir = sc_spr.empty() ? sc_truth : sc_spr;
            std::map<int, RasterF> sprs;
            std::vector<Phantom> scored;
            for (const Phantom& ph : set.phantoms) {
                if (!truths.count(ph.id))
                    continue; // not simulated
                scored.push_back(ph);
                sprs[ph.id] = read_xr32(spr_dir + "/" + std::to_string(ph.id) + "_spr.xr32");
            }
            save_records(sc_out, score_dataset(masks, truths, scored, sprs, sc_geom));
            std::printf("%zu records written to %s\n", scored.size(), sc_out.c_str());
        } else if (*fit_cmd) {
            const auto records = binarize(load_records(fit_records_path), fit_thr);
            std::size_t skipped = 0;
            const PodFit fit = fit_records(records, parse_link(fit_link), fit_cov == "spr", &skipped);
            save_fit(fit_out, fit);
            if (skipped)
                std::fprintf(stderr, "%zu records without a finite SPR were skipped\n", skipped);
            std::printf("converged %d after %d iterations, deviance %s\n", fit.converged, fit.iterations,
                        format_g9(fit.deviance).c_str());
        } else if (*eval_cmd) {
            const PodFit fit = load_fit(eval_fit);
            std::printf("s_mm,p,lo95,hi95\n");
            for (double s : eval_s) {
                const PodPoint p = pod_eval(fit, s, opt_spr(eval_spr));
                std::printf("%s,%s,%s,%s\n", format_g9(s).c_str(), format_g9(p.p).c_str(), format_g9(p.lo95).c_str(),
                            format_g9(p.hi95).c_str());
            }
        } else if (*s90_cmd) {
            const PodFit fit = load_fit(s90_fit);
            std::printf("s90_mm = %s\n", format_g9(s90(fit, opt_spr(s90_spr))).c_str());
            std::printf("s90_95_mm = %s\n", format_g9(s90_95(fit, opt_spr(s90_spr))).c_str());
        } else if (*cmp_cmd) {
            if (cmp_n < 2 || !(cmp_hi > cmp_lo))
                throw ValidationError("compare: need at least 2 grid points and s-max > s-min");
            const Comparison c = compare_fits(load_fit(cmp_a), load_fit(cmp_b),
                                              Eigen::VectorXd::LinSpaced(cmp_n, cmp_lo, cmp_hi), opt_spr(cmp_spr));
            std::printf("%s\n", to_string(c.verdict));
        } else if (*plot_cmd) {
            const auto records = binarize(load_records(plot_records), plot_thr);
            write_text_file(plot_out, pod_curve_svg(load_fit(plot_fit), records, plot_title));
        } else if (*run_cmd) {
            const ExperimentConfig cfg = validate_config(run_config);
            RunOptions opt;
            opt.workers = run_workers;
            opt.log = &std::cerr;
            const RunManifest m = run(cfg, opt);
            std::printf("%s: %zu stages executed, output in %s\n", m.complete() ? "complete" : "incomplete",
                        m.executed.size(), cfg.output.c_str());
        } else if (*rep_cmd) {
            std::printf("%s\n", report(rep_dir).c_str());
        }
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
