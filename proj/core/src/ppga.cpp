#include "qdarbor/ppga.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

#include "qdarbor/io.hpp"

namespace qdarbor {

void RunConfig::validate() const {
    archive.validate();
    if (iterations < 0) throw std::invalid_argument("config: iterations must be >= 0");
    if (n1 < 1 || n2 < 0) throw std::invalid_argument("config: n1 >= 1 and n2 >= 0 required");
    if (lambda < 2) throw std::invalid_argument("config: lambda must be >= 2");
    if (episodes_per_eval < 1)
        throw std::invalid_argument("config: episodes_per_eval must be >= 1");
    if (!(sigma_g > 0.0)) throw std::invalid_argument("config: sigma_g must be > 0");
    const int k = env_kind == EnvKind::kPointHopper ? env.num_legs : analytic_measures;
    if (archive.dims() != k)
        throw std::invalid_argument("config: archive.resolution dimensionality (" +
                                    std::to_string(archive.dims()) +
                                    ") must match measure count (" + std::to_string(k) + ")");
}

AnalyticSource::AnalyticSource(AnalyticProblem problem, int /*episodes_per_eval*/,
                               std::uint64_t seed)
    : problem_(std::move(problem)), seed_(seed) {}

Eigen::VectorXf AnalyticSource::initial_params() {
    Rng rng = make_rng(seed_, stream::kInit, 1);
    std::normal_distribution<double> normal(0.0, 0.1);
    Eigen::VectorXf theta(problem_.dimension());
    for (int i = 0; i < theta.size(); ++i) theta[i] = static_cast<float>(normal(rng));
    return theta;
}

JacobianResult AnalyticSource::estimate(const Eigen::VectorXf& params, int /*n1*/,
                                        std::uint64_t /*iter*/) {
    const AnalyticEval eval = problem_.eval(params.cast<double>());
    JacobianResult out;
    out.f = eval.f;
    out.measures = eval.measures;
    out.grad_rows.resize(problem_.num_measures() + 1, problem_.dimension());
    Eigen::VectorXd row = eval.grad_f;
    double norm = row.norm();
    if (!(norm > 0.0))
        throw std::runtime_error("analytic: degenerate zero-norm objective gradient");
    out.grad_rows.row(0) = (row / norm).cast<float>().transpose();
    for (int i = 0; i < problem_.num_measures(); ++i) {
        row = eval.grad_m.row(i).transpose();
        norm = row.norm();
        if (!(norm > 0.0))
            throw std::runtime_error("analytic: degenerate zero-norm measure gradient " +
                                     std::to_string(i));
        out.grad_rows.row(i + 1) = (row / norm).cast<float>().transpose();
    }
    return out;
}

Eigen::VectorXf AnalyticSource::walk(const Eigen::VectorXf& params,
                                     const Eigen::VectorXd& coeffs, int /*n2*/,
                                     std::uint64_t iter) {
    // single combined-gradient step; the driver normally uses weighted
    // recombination for analytic problems
    const JacobianResult jac = estimate(params, 1, iter);
    return branch(params, jac.grad_rows, coeffs, /*abs_obj_coeff=*/false);
}

std::pair<double, Eigen::VectorXd> AnalyticSource::evaluate(const Eigen::VectorXf& params,
                                                            std::uint64_t, std::uint64_t,
                                                            std::uint64_t) {
    const AnalyticEval eval = problem_.eval(params.cast<double>());
    return {eval.f, eval.measures};
}

VppoSource::VppoSource(PointHopperSpec env_spec, PpoConfig ppo, int episodes_per_eval,
                       std::uint64_t seed)
    : estimator_(env_spec, ppo, seed),
      actor_template_(estimator_.make_actor_template()),
      episodes_per_eval_(episodes_per_eval) {}

long VppoSource::param_count() const { return actor_template_.param_count(); }

ActorPolicy VppoSource::to_actor(const Eigen::VectorXf& params) const {
    ActorPolicy actor = actor_template_;
    actor.set_flat(params);
    return actor;
}

Eigen::VectorXf VppoSource::initial_params() { return actor_template_.get_flat(); }

JacobianResult VppoSource::estimate(const Eigen::VectorXf& params, int n1,
                                    std::uint64_t iter) {
    return estimator_.compute_jacobian(to_actor(params), n1, episodes_per_eval_, iter);
}

Eigen::VectorXf VppoSource::walk(const Eigen::VectorXf& params,
                                 const Eigen::VectorXd& coeffs, int n2,
                                 std::uint64_t iter) {
    return estimator_.walk(to_actor(params), coeffs, n2, iter).get_flat();
}

std::pair<double, Eigen::VectorXd> VppoSource::evaluate(const Eigen::VectorXf& params,
                                                        std::uint64_t stream,
                                                        std::uint64_t iter,
                                                        std::uint64_t index) {
    const RolloutResult r =
        estimator_.evaluate(to_actor(params), episodes_per_eval_, stream, iter, index);
    return {r.mean_return, r.mean_measures};
}

void VppoSource::save_state(const std::string& path) const {
    io::save_vppo_state(path, estimator_);
}

void VppoSource::load_state(const std::string& path) {
    io::load_vppo_state(path, estimator_);
}

std::unique_ptr<GradientSource> make_source(const RunConfig& cfg) {
    if (cfg.env_kind == EnvKind::kAnalytic) {
        return std::make_unique<AnalyticSource>(
            AnalyticProblem::sphere_linear(cfg.analytic_dim, cfg.analytic_measures),
            cfg.episodes_per_eval, cfg.seed);
    }
    return std::make_unique<VppoSource>(cfg.env, cfg.ppo, cfg.episodes_per_eval,
                                        cfg.seed);
}

Eigen::VectorXf branch(const Eigen::VectorXf& params, const Eigen::MatrixXf& grad_rows,
                       const Eigen::VectorXd& coeffs, bool abs_obj_coeff) {
    if (coeffs.size() != grad_rows.rows())
        throw std::invalid_argument("branch: coefficient count must equal gradient rows");
    Eigen::VectorXf out = params;
    const double c0 = abs_obj_coeff ? std::abs(coeffs[0]) : coeffs[0];
    out += static_cast<float>(c0) * grad_rows.row(0).transpose();
    for (long j = 1; j < coeffs.size(); ++j)
        out += static_cast<float>(coeffs[j]) * grad_rows.row(j).transpose();
    return out;
}

PpgaDriver::PpgaDriver(RunConfig cfg, std::unique_ptr<GradientSource> source)
    : cfg_(std::move(cfg)), source_(std::move(source)), archive_(cfg_.archive),
      nes_(make_nes_state(source_->num_measures() + 1, cfg_.sigma_g, cfg_.lambda)) {
    cfg_.validate();
    params_ = source_->initial_params();
}

void PpgaDriver::restore(int iteration, Eigen::VectorXf params, NesState nes) {
    iteration_ = iteration;
    params_ = std::move(params);
    nes_ = std::move(nes);
}

IterationReport PpgaDriver::qd_iteration() {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t iter = static_cast<std::uint64_t>(iteration_);
    IterationReport report;
    report.iteration = iteration_;

    // fixed-std mode: reset the action distribution scale at each boundary
    if (cfg_.env_kind == EnvKind::kPointHopper && cfg_.ppo.std_mode == StdMode::kFixed) {
        const int act_dim = cfg_.env.action_dim();
        params_.tail(act_dim).setZero();  // log_std = ln(1)
    }

    bool degenerate = false;
    JacobianResult jac;
    try {
        jac = source_->estimate(params_, cfg_.n1, iter);
    } catch (const std::runtime_error&) {
        degenerate = true;
    }

    int insertions = 0;
    if (!degenerate) {
        report.f = jac.f;
        report.measures = jac.measures;
        if (archive_.insert(params_, jac.f, jac.measures).accepted) ++insertions;

        Rng ask_rng = make_rng(cfg_.seed, stream::kAsk, iter);
        const std::vector<Eigen::VectorXd> coeff_samples =
            nes_ask(nes_, ask_rng, cfg_.lambda);

        std::vector<double> deltas(cfg_.lambda);
        std::vector<bool> new_cell(cfg_.lambda);
        std::vector<Eigen::VectorXf> branches(cfg_.lambda);
        std::vector<Eigen::VectorXf> branch_dirs(cfg_.lambda);
        std::vector<double> branch_f(cfg_.lambda);
        std::vector<Eigen::VectorXd> branch_m(cfg_.lambda);
        for (int i = 0; i < cfg_.lambda; ++i) {
            branches[i] =
                branch(params_, jac.grad_rows, coeff_samples[i], cfg_.abs_obj_coeff);
            branch_dirs[i] = branches[i] - params_;
        }
        // evaluations are independent of archive state; fan out, then insert
        // serially in index order
        auto eval_one = [&](int i) {
            auto [f, m] = source_->evaluate(branches[i], stream::kBranchEval, iter,
                                            static_cast<std::uint64_t>(i));
            branch_f[i] = f;
            branch_m[i] = std::move(m);
        };
        const int cap = std::min(worker_thread_cap(), cfg_.lambda);
        if (cap <= 1) {
            for (int i = 0; i < cfg_.lambda; ++i) eval_one(i);
        } else {
            std::vector<std::thread> workers;
            std::exception_ptr error;
            std::mutex error_mu;
            for (int w = 0; w < cap; ++w)
                workers.emplace_back([&, w] {
                    for (int i = w; i < cfg_.lambda; i += cap) {
                        try {
                            eval_one(i);
                        } catch (...) {
                            std::lock_guard<std::mutex> lock(error_mu);
                            error = std::current_exception();
                        }
                    }
                });
            for (auto& t : workers) t.join();
            if (error) std::rethrow_exception(error);
        }
        for (int i = 0; i < cfg_.lambda; ++i) {
            const Improvement imp = archive_.insert(branches[i], branch_f[i], branch_m[i]);
            deltas[i] = imp.delta;
            new_cell[i] = imp.accepted && imp.new_cell;
            if (imp.accepted) ++insertions;
        }
        report.deltas = deltas;

        RankedBatch batch;
        batch.samples = coeff_samples;
        batch.deltas = deltas;
        batch.order = cfg_.ranking == RankingMode::kTwoStage
                          ? rank_two_stage(deltas, new_cell)
                          : rank_descending(deltas);
        nes_ = nes_tell(nes_, batch);

        if (cfg_.walk_mode == WalkMode::kVppoWalk) {
            // same rectification as branch(): never walk downhill on the objective
            Eigen::VectorXd walk_coeffs = nes_.mu;
            if (cfg_.abs_obj_coeff) walk_coeffs[0] = std::abs(walk_coeffs[0]);
            params_ = source_->walk(params_, walk_coeffs, cfg_.n2, iter);
        } else {
            // weighted linear recombination of the ranked branch directions
            std::vector<double> u(cfg_.lambda);
            double u_sum = 0.0;
            for (int i = 0; i < cfg_.lambda; ++i) {
                u[i] = std::max(0.0, std::log(cfg_.lambda / 2.0 + 1.0) - std::log(i + 1.0));
                u_sum += u[i];
            }
            Eigen::VectorXf step = Eigen::VectorXf::Zero(params_.size());
            for (int rank = 0; rank < cfg_.lambda; ++rank)
                step += static_cast<float>(u[rank] / u_sum) * branch_dirs[batch.order[rank]];
            params_ += step;
        }

        if (cfg_.insert_walked) {
            auto [f, m] = source_->evaluate(params_, stream::kSearchEval, iter, 1);
            if (archive_.insert(params_, f, m).accepted) ++insertions;
        }
    }

    report.insertions = insertions;
    if ((insertions == 0 || degenerate)) {
        report.restarted = true;
        nes_ = nes_restart(nes_);
        if (!archive_.empty()) {
            Rng teleport_rng = make_rng(cfg_.seed, stream::kTeleport, iter);
            params_ = archive_.sample_elite(teleport_rng).params;
        }
    }

    report.archive_metrics = archive_.metrics();
    report.xnes_sigma = nes_.sigma;
    report.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ++iteration_;
    return report;
}

std::vector<IterationReport> PpgaDriver::run(const IterationCallback& on_iteration) {
    std::vector<IterationReport> history;
    history.reserve(cfg_.iterations);
    while (iteration_ < cfg_.iterations) {
        IterationReport report = qd_iteration();
        if (on_iteration) on_iteration(report);
        history.push_back(std::move(report));
    }
    return history;
}

}  // namespace qdarbor
