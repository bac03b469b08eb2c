#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qdarbor/analytic.hpp"
#include "qdarbor/archive.hpp"
#include "qdarbor/vppo.hpp"
#include "qdarbor/xnes.hpp"

namespace qdarbor {

enum class WalkMode { kVppoWalk, kWeightedRecombination };
enum class RankingMode { kFlat, kTwoStage };
enum class EnvKind { kPointHopper, kAnalytic };

struct RunConfig {
    EnvKind env_kind = EnvKind::kPointHopper;
    PointHopperSpec env;
    int analytic_dim = 20;
    int analytic_measures = 2;

    ArchiveSpec archive;
    int iterations = 50;        // N_Q
    int n1 = 10;
    int n2 = 10;
    int lambda = 32;
    int episodes_per_eval = 3;
    double sigma_g = 1.0;
    WalkMode walk_mode = WalkMode::kVppoWalk;
    RankingMode ranking = RankingMode::kFlat;
    bool abs_obj_coeff = true;  // use |c_0| when forming branch directions
    bool insert_walked = true;
    std::uint64_t seed = 0;
    bool deterministic = true;
    int checkpoint_interval = 0;  // iterations between checkpoints; 0 disables
    PpoConfig ppo;

    void validate() const;
};

struct IterationReport {
    int iteration = 0;
    double f = 0.0;
    Eigen::VectorXd measures;
    std::vector<double> deltas;
    int insertions = 0;
    ArchiveMetrics archive_metrics;
    double xnes_sigma = 0.0;
    bool restarted = false;
    double wall_time_seconds = 0.0;
};

// Pluggable objective-measure gradient provider: VPPO for MDPs, closed-form
// gradients for the analytic benchmark.
class GradientSource {
public:
    virtual ~GradientSource() = default;
    virtual long param_count() const = 0;
    virtual int num_measures() const = 0;
    virtual Eigen::VectorXf initial_params() = 0;
    virtual JacobianResult estimate(const Eigen::VectorXf& params, int n1,
                                    std::uint64_t iter) = 0;
    virtual Eigen::VectorXf walk(const Eigen::VectorXf& params,
                                 const Eigen::VectorXd& coeffs, int n2,
                                 std::uint64_t iter) = 0;
    virtual std::pair<double, Eigen::VectorXd> evaluate(const Eigen::VectorXf& params,
                                                        std::uint64_t stream,
                                                        std::uint64_t iter,
                                                        std::uint64_t index) = 0;
    virtual void save_state(const std::string& path) const { (void)path; }
    virtual void load_state(const std::string& path) { (void)path; }
};

class AnalyticSource : public GradientSource {
public:
    AnalyticSource(AnalyticProblem problem, int episodes_per_eval, std::uint64_t seed);

    long param_count() const override { return problem_.dimension(); }
    int num_measures() const override { return problem_.num_measures(); }
    Eigen::VectorXf initial_params() override;
    JacobianResult estimate(const Eigen::VectorXf& params, int n1,
                            std::uint64_t iter) override;
    Eigen::VectorXf walk(const Eigen::VectorXf& params, const Eigen::VectorXd& coeffs,
                         int n2, std::uint64_t iter) override;
    std::pair<double, Eigen::VectorXd> evaluate(const Eigen::VectorXf& params,
                                                std::uint64_t stream, std::uint64_t iter,
                                                std::uint64_t index) override;

    const AnalyticProblem& problem() const { return problem_; }

private:
    AnalyticProblem problem_;
    std::uint64_t seed_;
};

class VppoSource : public GradientSource {
public:
    VppoSource(PointHopperSpec env_spec, PpoConfig ppo, int episodes_per_eval,
               std::uint64_t seed);

    long param_count() const override;
    int num_measures() const override { return estimator_.env().spec().num_legs; }
    Eigen::VectorXf initial_params() override;
    JacobianResult estimate(const Eigen::VectorXf& params, int n1,
                            std::uint64_t iter) override;
    Eigen::VectorXf walk(const Eigen::VectorXf& params, const Eigen::VectorXd& coeffs,
                         int n2, std::uint64_t iter) override;
    std::pair<double, Eigen::VectorXd> evaluate(const Eigen::VectorXf& params,
                                                std::uint64_t stream, std::uint64_t iter,
                                                std::uint64_t index) override;
    void save_state(const std::string& path) const override;
    void load_state(const std::string& path) override;

    VppoEstimator& estimator() { return estimator_; }
    const VppoEstimator& estimator() const { return estimator_; }
    ActorPolicy to_actor(const Eigen::VectorXf& params) const;

private:
    VppoEstimator estimator_;
    ActorPolicy actor_template_;
    int episodes_per_eval_;
};

std::unique_ptr<GradientSource> make_source(const RunConfig& cfg);

// Branch step: theta' = theta + |c_0| grad_f + sum_j c_j grad_m_j (absolute
// value of the objective coefficient is configurable).
Eigen::VectorXf branch(const Eigen::VectorXf& params, const Eigen::MatrixXf& grad_rows,
                       const Eigen::VectorXd& coeffs, bool abs_obj_coeff);

// The Algorithm-1 control loop: Jacobian estimation, branching arborescence,
// improvement ranking, xNES adaptation, walking, restarts.
class PpgaDriver {
public:
    PpgaDriver(RunConfig cfg, std::unique_ptr<GradientSource> source);

    IterationReport qd_iteration();
    using IterationCallback = std::function<void(const IterationReport&)>;
    std::vector<IterationReport> run(const IterationCallback& on_iteration = {});

    const RunConfig& config() const { return cfg_; }
    const GridArchive& archive() const { return archive_; }
    GridArchive& archive() { return archive_; }
    const NesState& nes_state() const { return nes_; }
    const Eigen::VectorXf& search_params() const { return params_; }
    int iteration() const { return iteration_; }
    GradientSource& source() { return *source_; }

    // checkpoint resume
    void restore(int iteration, Eigen::VectorXf params, NesState nes);

private:
    RunConfig cfg_;
    std::unique_ptr<GradientSource> source_;
    GridArchive archive_;
    NesState nes_;
    Eigen::VectorXf params_;
    int iteration_ = 0;
};

}  // namespace qdarbor
