#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

namespace qdarbor {

// Toy locomotion MDP. Action = (thrust a_0, leg actions a_1..a_k). A leg is in
// contact iff its action is strictly positive; thrust only applies while at
// least one leg touches the ground. Reward trades forward progress against a
// quadratic control cost. Measures are per-leg contact fractions.
struct PointHopperSpec {
    int num_legs = 2;           // k
    int episode_length = 200;
    double dt = 0.05;
    double control_cost = 0.05;

    int obs_dim() const { return 2 + num_legs; }      // (x mod 10, v, prev contacts)
    int action_dim() const { return num_legs + 1; }
    int num_channels() const { return num_legs + 1; } // reward + k proxies
};

struct EnvBatchState {
    int num_envs = 0;
    Eigen::VectorXd x;
    Eigen::VectorXd v;
    Eigen::MatrixXd prev_contacts;   // k x E, contacts from the previous step
    Eigen::VectorXi steps;
    Eigen::VectorXd return_sum;      // 64-bit accumulation per env
    Eigen::MatrixXd proxy_sum;       // k x E
};

struct EpisodeEnd {
    int env = 0;
    double total_return = 0.0;
    Eigen::VectorXd measures;        // exact episode means of the proxy channels
};

struct StepResult {
    Eigen::MatrixXf obs;             // obs_dim x E, post-step observations
    Eigen::MatrixXd rewards;         // (k+1) x E; row 0 = R, rows 1..k = proxies
    std::vector<bool> done;
    std::vector<EpisodeEnd> episode_ends;
};

class PointHopper {
public:
    explicit PointHopper(PointHopperSpec spec);

    EnvBatchState reset(int num_envs) const;
    Eigen::MatrixXf observe(const EnvBatchState& state) const;
    // Actions are clipped to [-1, 1] before the dynamics. Episodes auto-reset.
    StepResult step(EnvBatchState& state, const Eigen::MatrixXf& actions) const;

    const PointHopperSpec& spec() const { return spec_; }

private:
    void reset_env(EnvBatchState& state, int e) const;
    PointHopperSpec spec_;
};

struct RolloutResult {
    double mean_return = 0.0;
    Eigen::VectorXd mean_measures;
};

// Maps a batch of observation columns to a batch of action columns.
using PolicyFn = std::function<Eigen::MatrixXf(const Eigen::MatrixXf&)>;

// Runs `episodes` full episodes as one batch and averages return and measures.
RolloutResult rollout(const PointHopper& env, const PolicyFn& policy, int episodes);

}  // namespace qdarbor
