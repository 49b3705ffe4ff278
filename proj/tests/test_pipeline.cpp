#include "doctest.h"
#include "support.hpp"

#include "xspod/io.hpp"
#include "xspod/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace xspod;
namespace fs = std::filesystem;

namespace {

std::string smoke_text(const std::string& out, int seed = 7)
{
    std::ostringstream s;
    s << "# smoke\n"
      << "seed = " << seed << "\n"
      << "material = pmma\n"
      << "spectrum = kramers:90\n"
      << "phantoms.n_test = 10\n"
      << "simulate.photons = 100000\n"
      << "output = " << out << "\n";
    return s.str();
}

std::map<std::string, std::string> checksums(const std::string& dir)
{
    std::map<std::string, std::string> sums;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        // config.txt and the manifest name the output directory.
        if (e.is_regular_file() && e.path().filename() != "manifest.json" && e.path().filename() != "config.txt")
            sums[fs::relative(e.path(), dir).string()] = hex64(fnv1a(read_text_file(e.path().string())));
    return sums;
}

} // namespace

TEST_CASE("minimal config gets the reference geometry")
{
    const ExperimentConfig c = parse_config("seed = 1\nmaterial = pmma\nspectrum = kramers:90\n");
    CHECK(c.geometry == AcquisitionGeometry{});
    CHECK(c.geometry.pixel_pitch == 0.3);
    CHECK(c.geometry.magnification() == doctest::Approx(1.5));
    CHECK(c.detector == DetectorParams{});
}

TEST_CASE("config errors")
{
    CHECK_THROWS_AS(parse_config("seed = 1\ngeometry.sod = 400\n"), ValidationError);
    CHECK_THROWS_AS(parse_config("material = pmma\n"), ValidationError);
    CHECK_THROWS_AS(parse_config("seed = 1\nbogus.key = 3\n"), ValidationError);
    CHECK_THROWS_AS(parse_config("seed = 1\nseed = 2\n"), ValidationError);
    CHECK_THROWS_AS(parse_config("seed = 1\npod.link = identity\n"), ValidationError);
    CHECK_THROWS_AS(parse_config("seed = 1\nsimulate.photons = 10\n"), ValidationError);
}

TEST_CASE("canonical text is idempotent")
{
    const ExperimentConfig c = parse_config(
        "seed = 3\nmaterial = iron\nspectrum = kramers:450\nphantoms.n_test = 20\n"
        "detector.noise_k = 3.5\ndetector.fit_axis = column\ndetector.grow_k = 2\npod.link = probit\n"
        "geometry.pixel_pitch = 0.25\n");
    const std::string text = serialize_config(c);
    const ExperimentConfig again = parse_config(text);
    CHECK(again == c);
    CHECK(serialize_config(again) == text);
    CHECK(config_hash(again) == config_hash(c));

    ExperimentConfig moved = c;
    moved.output = "elsewhere";
    CHECK(config_hash(moved) == config_hash(c));
    moved.seed = 4;
    CHECK(config_hash(moved) != config_hash(c));
}

TEST_CASE("worker resolution")
{
    CHECK(resolve_workers(3) == 3);
    CHECK(resolve_workers(0) >= 1);
}

TEST_CASE("smoke run, resume and seeds")
{
    const std::string root = xspod::test::scratch_dir("pipeline");
    const std::string out = root + "/smoke";
    const ExperimentConfig c = parse_config(smoke_text(out));
    const RunManifest m = run(c);
    CHECK(m.complete());
    CHECK(m.executed.size() == m.stages.size());
    for (const auto& v : c.variants)
        CHECK(load_records(out + "/records_" + v + ".csv").size() == 10);
    CHECK(fs::exists(out + "/report/table1.csv"));
    CHECK(fs::exists(out + "/report/table2.csv"));

    const auto before = checksums(out);
    const RunManifest again = run(c);
    CHECK(again.executed.empty());
    CHECK(checksums(out) == before);

    // A missing artifact reruns its stage and every later one.
    fs::remove(out + "/records_with.csv");
    const RunManifest healed = run(c);
    REQUIRE_FALSE(healed.executed.empty());
    CHECK(healed.executed.front() == "score");
    CHECK(checksums(out) == before);

    // Same config, different worker count: identical bytes.
    const std::string out8 = root + "/smoke8";
    run(parse_config(smoke_text(out8)), RunOptions{4, nullptr});
    CHECK(checksums(out8) == before);

    const std::string other = root + "/seed8";
    run(parse_config(smoke_text(other, 8)));
    const RasterF a = read_xr32(out + "/with/0.xr32");
    const RasterF b = read_xr32(other + "/with/0.xr32");
    CHECK(a.rows() == b.rows());
    CHECK_FALSE((a == b).all());
    auto header = [](const std::string& path) {
        const std::string t = read_text_file(path);
        return t.substr(0, t.find('\n'));
    };
    CHECK(header(out + "/records_with.csv") == header(other + "/records_with.csv"));
}

TEST_CASE("changed config invalidates the manifest")
{
    const std::string root = xspod::test::scratch_dir("pipeline_hash");
    ExperimentConfig c = parse_config(smoke_text(root + "/o"));
    c.n_test = 4;
    run(c);
    c.threshold = 0.3;
    const RunManifest m = run(c);
    CHECK(m.executed.front() == "phantoms");
}

TEST_CASE("table 1 schema and difference row")
{
    const std::string dir = xspod::test::scratch_dir("table1");
    PodFit w;
    w.coefficients.resize(2);
    w.coefficients << -6.0, 5.0;
    w.covariance = 0.01 * Eigen::MatrixXd::Identity(2, 2);
    w.converged = true;
    w.n_observations = 100;
    PodFit wo = w;
    wo.coefficients << -6.0, 4.0;
    save_fit(dir + "/fit_with.csv", w);
    save_fit(dir + "/fit_without.csv", wo);

    const auto rows = table1_rows(dir, {"with", "without"});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].variant == "with");
    CHECK(rows[0].s90_mm == doctest::Approx(s90(w)).epsilon(1e-12));
    CHECK(rows[2].variant == "difference");
    CHECK(rows[2].s90_mm == doctest::Approx((s90(wo) - s90(w)) / s90(w)).epsilon(1e-12));
    CHECK(rows[2].s90_95_mm == doctest::Approx((s90_95(wo) - s90_95(w)) / s90_95(w)).epsilon(1e-12));

    const auto single = table1_rows(dir, {"with"});
    REQUIRE(single.size() == 1);
    CHECK(single[0].variant == "with");
}

TEST_CASE("single-variant run writes no difference row")
{
    const std::string root = xspod::test::scratch_dir("single");
    std::string text = smoke_text(root + "/o") + "datasets.variants = with\n";
    const ExperimentConfig c = parse_config(text);
    REQUIRE(c.variants.size() == 1);
    run(c);
    const std::string t1 = read_text_file(root + "/o/report/table1.csv");
    CHECK(t1.rfind("variant,s90_mm,s90_95_mm", 0) == 0);
    CHECK(t1.find("difference") == std::string::npos);
}
