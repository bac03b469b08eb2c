#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "qdarbor/config.hpp"
#include "qdarbor/io.hpp"
#include "qdarbor/ppga.hpp"

#include "bitwise.hpp"

using namespace qdarbor;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("qdarbor_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("config text parsing handles comments, blanks, and errors") {
    const std::string text =
        "# a comment\n"
        "\n"
        "archive.resolution = 10,10\n"
        "nes.lambda=16   \n"
        "  run.seed = 3\n";
    ConfigMap c = parse_config_text(text);
    CHECK(c.at("archive.resolution") == "10,10");
    CHECK(c.at("nes.lambda") == "16");
    CHECK(c.at("run.seed") == "3");

    CHECK_THROWS_AS(parse_config_text("not a key value line\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("= value\n"), ConfigError);
}

TEST_CASE("config overrides replace values and validate shape") {
    ConfigMap c = preset_config("desk");
    apply_override(c, "run.iterations=5");
    CHECK(c.at("run.iterations") == "5");
    apply_override(c, "brand.new.key=1");
    CHECK(c.at("brand.new.key") == "1");
    CHECK_THROWS_AS(apply_override(c, "no-equals-sign"), ConfigError);
}

TEST_CASE("config missing required fields and bad values are ConfigError") {
    ConfigMap c = preset_config("desk");
    c.erase("archive.resolution");
    CHECK_THROWS_WITH_AS(to_run_config(c), doctest::Contains("archive.resolution"),
                         ConfigError);

    ConfigMap bad = preset_config("desk");
    bad["nes.lambda"] = "many";
    CHECK_THROWS_AS(to_run_config(bad), ConfigError);

    ConfigMap bad_walk = preset_config("desk");
    bad_walk["run.walk_mode"] = "moonwalk";
    CHECK_THROWS_AS(to_run_config(bad_walk), ConfigError);

    CHECK_THROWS_AS(preset_config("unknown"), ConfigError);
}

TEST_CASE("config effective round-trip reproduces identical analytic runs") {
    ConfigMap base = preset_config("analytic");
    base["run.iterations"] = "25";
    base["run.seed"] = "11";
    const RunConfig cfg = to_run_config(base);

    const std::string serialized = serialize_config(effective_config(cfg));
    const RunConfig reparsed = to_run_config(parse_config_text(serialized));

    PpgaDriver a(cfg, make_source(cfg));
    PpgaDriver b(reparsed, make_source(reparsed));
    const auto ra = a.run(), rb = b.run();
    REQUIRE(ra.size() == rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) {
        REQUIRE(ra[i].archive_metrics.qd_score == rb[i].archive_metrics.qd_score);
        REQUIRE(ra[i].f == rb[i].f);
    }
}

TEST_CASE("atomic text writes leave no temporaries and replace content whole") {
    TempDir tmp;
    const fs::path target = tmp.path / "metrics.csv";
    io::atomic_write_text(target.string(), "first\n");
    CHECK(slurp(target) == "first\n");
    io::atomic_write_text(target.string(), "second\n");
    CHECK(slurp(target) == "second\n");
    int entries = 0;
    for (const auto& p : fs::directory_iterator(tmp.path)) {
        (void)p;
        ++entries;
    }
    CHECK(entries == 1);  // no stray temp files
}

TEST_CASE("format_double text round-trips exactly") {
    for (double v : {0.0, 1.0 / 3.0, -2.718281828459045, 1e-300, 123456.789,
                     -0.1, 3.0000000000000004}) {
        CHECK(std::stod(io::format_double(v)) == v);
    }
}

TEST_CASE("archive serialization round-trips metrics bit-exactly") {
    ArchiveSpec spec;
    spec.resolution = {12, 9};
    spec.lower_bounds = Eigen::Vector2d(0.0, -1.0);
    spec.upper_bounds = Eigen::Vector2d(1.0, 1.0);
    spec.alpha = 0.17;
    spec.threshold_min = -3.5;
    spec.score_offset = -3.5;
    GridArchive archive(spec);

    Rng rng = make_rng(606, 1);
    std::uniform_real_distribution<double> m0(0.0, 1.0), m1(-1.0, 1.0), o(-3.0, 5.0);
    std::normal_distribution<float> pf(0.0f, 1.0f);
    for (int i = 0; i < 200; ++i) {
        Eigen::VectorXf params(17);
        for (int j = 0; j < 17; ++j) params[j] = pf(rng);
        archive.insert(params, o(rng), Eigen::Vector2d(m0(rng), m1(rng)));
    }
    REQUIRE(archive.num_elites() > 10);

    TempDir tmp;
    const std::string csv = (tmp.path / "a.csv").string();
    const std::string blob = (tmp.path / "a.params").string();
    io::save_archive(csv, blob, archive);
    GridArchive loaded = io::load_archive(csv, blob, spec);

    const ArchiveMetrics ma = archive.metrics(), mb = loaded.metrics();
    REQUIRE(ma.qd_score == mb.qd_score);
    REQUIRE(ma.coverage == mb.coverage);
    REQUIRE(ma.best_reward == mb.best_reward);
    REQUIRE(ma.num_elites == mb.num_elites);
    for (long linear : archive.filled_cells()) {
        const CellState& x = archive.cell_state(linear);
        const CellState& y = loaded.cell_state(linear);
        REQUIRE(x.threshold == y.threshold);
        REQUIRE(same_bits(x.elite->params, y.elite->params));
        REQUIRE(x.elite->objective == y.elite->objective);
        REQUIRE(same_bits(x.elite->measures, y.elite->measures));
    }

    // header sanity on the manifest
    std::ifstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "cell_index_0,cell_index_1,threshold,objective,measure_0,measure_1,"
          "param_offset,param_len");
}

TEST_CASE("nes and parameter files round-trip") {
    TempDir tmp;
    NesState s = make_nes_state(3, 0.4, 24);
    Rng rng = make_rng(5, 2);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (int i = 0; i < 3; ++i) s.mu[i] = d(rng);
    for (int i = 0; i < 9; ++i) s.b_factor.data()[i] = d(rng);
    s.sigma = 1.37;

    const std::string nes_path = (tmp.path / "nes.bin").string();
    io::save_nes(nes_path, s);
    const NesState t = io::load_nes(nes_path);
    CHECK(same_bits(t.mu, s.mu));
    CHECK(t.sigma == s.sigma);
    CHECK(same_bits(t.b_factor, s.b_factor));
    CHECK(t.lambda == s.lambda);
    CHECK(t.sigma_init == s.sigma_init);
    CHECK(t.eta_sigma == s.eta_sigma);

    Eigen::VectorXf params(33);
    std::normal_distribution<float> pf(0.0f, 2.0f);
    for (int i = 0; i < 33; ++i) params[i] = pf(rng);
    const std::string p_path = (tmp.path / "p.bin").string();
    io::save_params(p_path, params);
    CHECK(same_bits(io::load_params(p_path), params));
}

TEST_CASE("archive cdf export values match hand-computed fractions") {
    ArchiveSpec spec;
    spec.resolution = {8};
    spec.lower_bounds = Eigen::VectorXd::Zero(1);
    spec.upper_bounds = Eigen::VectorXd::Ones(1);
    spec.threshold_min = -10.0;
    GridArchive a(spec);
    Eigen::VectorXf p = Eigen::VectorXf::Zero(2);
    a.insert(p, 1.0, Eigen::VectorXd::Constant(1, 0.05));
    a.insert(p, 2.0, Eigen::VectorXd::Constant(1, 0.35));
    a.insert(p, 3.0, Eigen::VectorXd::Constant(1, 0.8));
    const auto rows = a.cdf(3);
    CHECK(rows[1].first == doctest::Approx(2.0));
    CHECK(rows[1].second == doctest::Approx(2.0 / 3.0));

    GridArchive single(spec);
    single.insert(p, 4.0, Eigen::VectorXd::Constant(1, 0.5));
    for (auto [thr, frac] : single.cdf(5)) CHECK(frac == doctest::Approx(1.0));
}
