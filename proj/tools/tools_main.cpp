#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "qdarbor/config.hpp"
#include "qdarbor/io.hpp"
#include "qdarbor/ppga.hpp"

namespace fs = std::filesystem;
using namespace qdarbor;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string preset;
    std::string out_dir = "out";
    long seed = -1;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "Config file (key = value lines)");
    cmd->add_option("--override", opts.overrides, "Config override key=value (repeatable)");
    cmd->add_option("--preset", opts.preset, "Preset: desk, paper, analytic");
    cmd->add_option("--out", opts.out_dir, "Output directory");
    cmd->add_option("--seed", opts.seed, "Run seed");
    cmd->add_flag("--deterministic", opts.deterministic, "Force deterministic mode");
}

ConfigMap build_config(const CommonOpts& opts) {
    ConfigMap config;
    if (!opts.preset.empty()) config = preset_config(opts.preset);
    if (!opts.config_path.empty()) {
        for (const auto& [k, v] : parse_config_file(opts.config_path)) config[k] = v;
    }
    for (const std::string& o : opts.overrides) apply_override(config, o);
    if (opts.seed >= 0) config["run.seed"] = std::to_string(opts.seed);
    if (opts.deterministic) config["run.deterministic"] = "true";
    return config;
}

std::string metrics_header() {
    return "iteration,qd_score,coverage,best_reward,num_insertions,xnes_sigma,"
           "search_policy_f,wall_time_seconds\n";
}

std::string metrics_row(const IterationReport& r, bool deterministic) {
    std::ostringstream row;
    row << r.iteration << "," << io::format_double(r.archive_metrics.qd_score) << ","
        << io::format_double(r.archive_metrics.coverage) << ","
        << io::format_double(r.archive_metrics.best_reward) << "," << r.insertions << ","
        << io::format_double(r.xnes_sigma) << "," << io::format_double(r.f) << ","
        << io::format_double(deterministic ? 0.0 : r.wall_time_seconds) << "\n";
    return row.str();
}

void write_checkpoint(const fs::path& dir, const PpgaDriver& driver,
                      GradientSource& source) {
    fs::create_directories(dir);
    io::save_archive((dir / "archive.csv").string(), (dir / "archive.params").string(),
                     driver.archive());
    io::save_nes((dir / "nes.bin").string(), driver.nes_state());
    io::save_params((dir / "policy.bin").string(), driver.search_params());
    source.save_state((dir / "source.bin").string());
    io::atomic_write_text((dir / "state.txt").string(),
                          std::to_string(driver.iteration()) + "\n");
}

int find_latest_checkpoint(const fs::path& checkpoints_dir) {
    int latest = -1;
    if (!fs::exists(checkpoints_dir)) return latest;
    for (const auto& entry : fs::directory_iterator(checkpoints_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("iter_", 0) == 0 && fs::exists(entry.path() / "state.txt"))
            latest = std::max(latest, std::stoi(name.substr(5)));
    }
    return latest;
}

// Runs one full configuration into out_dir; returns the final report.
IterationReport execute_run(const RunConfig& cfg, const fs::path& out_dir, bool resume,
                            bool quiet = false) {
    fs::create_directories(out_dir);
    io::atomic_write_text((out_dir / "config_effective.cfg").string(),
                          serialize_config(effective_config(cfg)));

    PpgaDriver driver(cfg, make_source(cfg));
    if (resume) {
        const int latest = find_latest_checkpoint(out_dir / "checkpoints");
        if (latest >= 0) {
            const fs::path dir = out_dir / "checkpoints" / ("iter_" + std::to_string(latest));
            GridArchive archive = io::load_archive((dir / "archive.csv").string(),
                                                   (dir / "archive.params").string(),
                                                   cfg.archive);
            driver.archive() = archive;
            driver.source().load_state((dir / "source.bin").string());
            driver.restore(latest, io::load_params((dir / "policy.bin").string()),
                           io::load_nes((dir / "nes.bin").string()));
            if (!quiet)
                std::cout << "resumed from checkpoint iter_" << latest << "\n";
        }
    }

    std::string metrics = metrics_header();
    IterationReport last;
    driver.run([&](const IterationReport& report) {
        metrics += metrics_row(report, cfg.deterministic);
        io::atomic_write_text((out_dir / "metrics.csv").string(), metrics);
        if (cfg.checkpoint_interval > 0 &&
            (report.iteration + 1) % cfg.checkpoint_interval == 0)
            write_checkpoint(out_dir / "checkpoints" /
                                 ("iter_" + std::to_string(report.iteration + 1)),
                             driver, driver.source());
        last = report;
        if (!quiet)
            std::cout << "iter " << report.iteration
                      << " qd_score " << report.archive_metrics.qd_score
                      << " coverage " << report.archive_metrics.coverage
                      << " best " << report.archive_metrics.best_reward
                      << (report.restarted ? " [restart]" : "") << "\n";
    });
    io::atomic_write_text((out_dir / "metrics.csv").string(), metrics);
    io::save_archive((out_dir / "archive_final.csv").string(),
                     (out_dir / "archive_final.params").string(), driver.archive());
    driver.source().save_state((out_dir / "source_final.bin").string());
    return last;
}

ArchiveSpec archive_spec_for(const RunConfig& cfg) { return cfg.archive; }

// Locates the effective config written next to an archive file.
RunConfig config_near_archive(const fs::path& archive_csv, const CommonOpts& opts) {
    ConfigMap config;
    const fs::path sibling = archive_csv.parent_path() / "config_effective.cfg";
    if (!opts.preset.empty()) config = preset_config(opts.preset);
    if (!opts.config_path.empty()) {
        for (const auto& [k, v] : parse_config_file(opts.config_path)) config[k] = v;
    } else if (fs::exists(sibling)) {
        for (const auto& [k, v] : parse_config_file(sibling.string())) config[k] = v;
    }
    if (config.empty())
        throw ConfigError("config: no config_effective.cfg next to archive; pass --config");
    for (const std::string& o : opts.overrides) apply_override(config, o);
    if (opts.seed >= 0) config["run.seed"] = std::to_string(opts.seed);
    return to_run_config(config);
}

std::string params_path_for(const fs::path& archive_csv) {
    fs::path p = archive_csv;
    p.replace_extension(".params");
    return p.string();
}

int cmd_correct(const std::string& archive_path, int n_reevals, const CommonOpts& opts) {
    const RunConfig cfg = config_near_archive(archive_path, opts);
    const GridArchive archive = io::load_archive(archive_path, params_path_for(archive_path),
                                                 archive_spec_for(cfg));

    GridArchive::Evaluator evaluator;
    std::unique_ptr<VppoSource> source;
    if (cfg.env_kind == EnvKind::kAnalytic) {
        AnalyticProblem problem =
            AnalyticProblem::sphere_linear(cfg.analytic_dim, cfg.analytic_measures);
        evaluator = [problem](const Eigen::VectorXf& params) {
            const AnalyticEval e = problem.eval(params.cast<double>());
            return std::make_pair(e.f, e.measures);
        };
    } else {
        source = std::make_unique<VppoSource>(cfg.env, cfg.ppo, 1, cfg.seed);
        const fs::path state = fs::path(archive_path).parent_path() / "source_final.bin";
        if (fs::exists(state)) source->load_state(state.string());
        long counter = 0;
        evaluator = [&source, &counter](const Eigen::VectorXf& params) {
            return source->evaluate(params, stream::kCorrect, 0,
                                    static_cast<std::uint64_t>(counter++));
        };
    }

    const GridArchive corrected = archive.corrected(evaluator, n_reevals);
    fs::create_directories(opts.out_dir);
    const fs::path out = opts.out_dir;
    io::save_archive((out / "corrected_archive.csv").string(),
                     (out / "corrected_archive.params").string(), corrected);

    const ArchiveMetrics before = archive.metrics();
    const ArchiveMetrics after = corrected.metrics();
    std::ostringstream summary;
    summary << "metric,original,corrected\n"
            << "qd_score," << io::format_double(before.qd_score) << ","
            << io::format_double(after.qd_score) << "\n"
            << "coverage," << io::format_double(before.coverage) << ","
            << io::format_double(after.coverage) << "\n"
            << "best_reward," << io::format_double(before.best_reward) << ","
            << io::format_double(after.best_reward) << "\n"
            << "num_elites," << before.num_elites << "," << after.num_elites << "\n";
    io::atomic_write_text((out / "corrected_metrics.csv").string(), summary.str());
    std::cout << summary.str();
    return 0;
}

int cmd_export_cdf(const std::string& archive_path, int num_bins, const CommonOpts& opts) {
    const RunConfig cfg = config_near_archive(archive_path, opts);
    const GridArchive archive = io::load_archive(archive_path, params_path_for(archive_path),
                                                 archive_spec_for(cfg));
    std::ostringstream csv;
    csv << "threshold,fraction\n";
    for (const auto& [threshold, fraction] : archive.cdf(num_bins))
        csv << io::format_double(threshold) << "," << io::format_double(fraction) << "\n";
    if (opts.out_dir == "-") {
        std::cout << csv.str();
    } else {
        fs::create_directories(fs::path(opts.out_dir));
        io::atomic_write_text((fs::path(opts.out_dir) / "cdf.csv").string(), csv.str());
        std::cout << "wrote " << (fs::path(opts.out_dir) / "cdf.csv").string() << "\n";
    }
    return 0;
}

int cmd_inspect(const std::string& archive_path, const CommonOpts& opts) {
    const RunConfig cfg = config_near_archive(archive_path, opts);
    const GridArchive archive = io::load_archive(archive_path, params_path_for(archive_path),
                                                 archive_spec_for(cfg));
    const ArchiveMetrics m = archive.metrics();
    std::cout << "num_elites " << m.num_elites << "\ncoverage "
              << io::format_double(m.coverage) << "\nqd_score "
              << io::format_double(m.qd_score) << "\nbest_reward "
              << io::format_double(m.best_reward) << "\n";
    return 0;
}

struct SweepCell {
    int n1, n2;
    long seed;
    bool ok = false;
    double qd_score = 0.0, coverage = 0.0, best = 0.0;
    std::string error;
};

int cmd_sweep(const CommonOpts& opts, const std::vector<int>& n1_values,
              const std::vector<int>& n2_values, const std::vector<long>& seeds,
              int workers) {
    if (n1_values.empty() || n2_values.empty() || seeds.empty())
        throw ConfigError("sweep: --n1, --n2 and --seeds must be nonempty");
    const ConfigMap base = build_config(opts);

    std::vector<SweepCell> cells;
    for (int n1 : n1_values)
        for (int n2 : n2_values)
            for (long seed : seeds) cells.push_back({n1, n2, seed});

    std::mutex mu;
    auto run_cell = [&](SweepCell& cell) {
        ConfigMap config = base;
        config["run.n1"] = std::to_string(cell.n1);
        config["run.n2"] = std::to_string(cell.n2);
        config["run.seed"] = std::to_string(cell.seed);
        const RunConfig cfg = to_run_config(config);
        const fs::path cell_dir = fs::path(opts.out_dir) /
                                  ("cell_n1_" + std::to_string(cell.n1) + "_n2_" +
                                   std::to_string(cell.n2) + "_seed_" +
                                   std::to_string(cell.seed));
        try {
            const fs::path done = cell_dir / "DONE";
            if (fs::exists(done)) {
                // completed cells are cached, parse the stored result
                ConfigMap cached = parse_config_file(done.string());
                cell.qd_score = std::stod(cached.at("qd_score"));
                cell.coverage = std::stod(cached.at("coverage"));
                cell.best = std::stod(cached.at("best_reward"));
                cell.ok = true;
                return;
            }
            const IterationReport last = execute_run(cfg, cell_dir, /*resume=*/false,
                                                     /*quiet=*/true);
            cell.qd_score = last.archive_metrics.qd_score;
            cell.coverage = last.archive_metrics.coverage;
            cell.best = last.archive_metrics.best_reward;
            cell.ok = true;
            std::ostringstream marker;
            marker << "qd_score = " << io::format_double(cell.qd_score)
                   << "\ncoverage = " << io::format_double(cell.coverage)
                   << "\nbest_reward = " << io::format_double(cell.best) << "\n";
            io::atomic_write_text(done.string(), marker.str());
            std::lock_guard<std::mutex> lock(mu);
            std::cout << "cell n1=" << cell.n1 << " n2=" << cell.n2
                      << " seed=" << cell.seed << " qd_score=" << cell.qd_score << "\n";
        } catch (const std::exception& e) {
            cell.error = e.what();
            std::lock_guard<std::mutex> lock(mu);
            std::cerr << "cell n1=" << cell.n1 << " n2=" << cell.n2
                      << " seed=" << cell.seed << " failed: " << e.what() << "\n";
        }
    };

    if (workers <= 1) {
        for (SweepCell& cell : cells) run_cell(cell);
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        std::mutex take;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                while (true) {
                    std::size_t mine;
                    {
                        std::lock_guard<std::mutex> lock(take);
                        if (next >= cells.size()) return;
                        mine = next++;
                    }
                    run_cell(cells[mine]);
                }
            });
        for (auto& t : pool) t.join();
    }

    // per-(n1,n2) summary across seeds
    std::ostringstream csv;
    csv << "n1,n2,seeds_ok,qd_score_mean,qd_score_std,coverage_mean,coverage_std,"
           "best_mean,best_std,errors\n";
    for (int n1 : n1_values)
        for (int n2 : n2_values) {
            std::vector<const SweepCell*> group;
            int errors = 0;
            for (const SweepCell& c : cells)
                if (c.n1 == n1 && c.n2 == n2) (c.ok ? (void)group.push_back(&c) : (void)++errors);
            auto stat = [&](auto getter) {
                double mean = 0.0, var = 0.0;
                for (const SweepCell* c : group) mean += getter(*c);
                if (!group.empty()) mean /= group.size();
                for (const SweepCell* c : group) {
                    const double d = getter(*c) - mean;
                    var += d * d;
                }
                if (group.size() > 1) var /= (group.size() - 1);
                return std::make_pair(mean, std::sqrt(var));
            };
            const auto [qm, qs] = stat([](const SweepCell& c) { return c.qd_score; });
            const auto [cm, cs] = stat([](const SweepCell& c) { return c.coverage; });
            const auto [bm, bs] = stat([](const SweepCell& c) { return c.best; });
            csv << n1 << "," << n2 << "," << group.size() << ","
                << io::format_double(qm) << "," << io::format_double(qs) << ","
                << io::format_double(cm) << "," << io::format_double(cs) << ","
                << io::format_double(bm) << "," << io::format_double(bs) << ","
                << errors << "\n";
        }
    fs::create_directories(opts.out_dir);
    io::atomic_write_text((fs::path(opts.out_dir) / "sweep_summary.csv").string(),
                          csv.str());
    std::cout << csv.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PPGA quality-diversity optimization toolkit"};
    app.require_subcommand(1);

    CommonOpts run_opts;
    bool resume = false;
    CLI::App* run = app.add_subcommand("run", "Execute a QD optimization run");
    add_common(run, run_opts);
    run->add_flag("--resume", resume, "Resume from the latest checkpoint in --out");

    CommonOpts correct_opts;
    std::string correct_archive;
    int n_reevals = 50;
    CLI::App* correct = app.add_subcommand("correct", "Build the corrected archive");
    correct->add_option("archive", correct_archive, "Archive manifest CSV")->required();
    correct->add_option("--reevals", n_reevals, "Re-evaluations per elite");
    add_common(correct, correct_opts);

    CommonOpts cdf_opts;
    std::string cdf_archive;
    int num_bins = 100;
    CLI::App* cdf = app.add_subcommand("export-cdf", "Export the objective CDF");
    cdf->add_option("archive", cdf_archive, "Archive manifest CSV")->required();
    cdf->add_option("--bins", num_bins, "Number of threshold bins");
    add_common(cdf, cdf_opts);

    CommonOpts inspect_opts;
    std::string inspect_archive;
    CLI::App* inspect = app.add_subcommand("inspect", "Print archive metrics");
    inspect->add_option("archive", inspect_archive, "Archive manifest CSV")->required();
    add_common(inspect, inspect_opts);

    CommonOpts sweep_opts;
    std::vector<int> n1_values, n2_values;
    std::vector<long> sweep_seeds;
    int workers = 1;
    CLI::App* sweep = app.add_subcommand("sweep", "N1/N2 hyperparameter sweep");
    add_common(sweep, sweep_opts);
    sweep->add_option("--n1", n1_values, "N1 grid values")->required();
    sweep->add_option("--n2", n2_values, "N2 grid values")->required();
    sweep->add_option("--seeds", sweep_seeds, "Seeds per cell")->required();
    sweep->add_option("--workers", workers, "Parallel sweep cells");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            const RunConfig cfg = to_run_config(build_config(run_opts));
            const IterationReport last = execute_run(cfg, run_opts.out_dir, resume);
            std::cout << "done: iterations=" << cfg.iterations
                      << " qd_score=" << last.archive_metrics.qd_score
                      << " coverage=" << last.archive_metrics.coverage
                      << " best_reward=" << last.archive_metrics.best_reward << "\n";
            return 0;
        }
        if (correct->parsed()) return cmd_correct(correct_archive, n_reevals, correct_opts);
        if (cdf->parsed()) return cmd_export_cdf(cdf_archive, num_bins, cdf_opts);
        if (inspect->parsed()) return cmd_inspect(inspect_archive, inspect_opts);
        if (sweep->parsed())
            return cmd_sweep(sweep_opts, n1_values, n2_values, sweep_seeds, workers);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntimeError;
    }
    return 0;
}
