#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "qdarbor/mlp.hpp"
#include "qdarbor/pointhopper.hpp"
#include "qdarbor/rng.hpp"

namespace qdarbor {

struct PpoConfig {
    double lr = 3e-4;
    double clip = 0.2;
    int epochs = 4;
    int minibatches = 8;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    int rollout_length = 128;   // L
    int num_envs = 64;          // E
    double entropy_coef = 0.0;
    double value_coef = 0.5;
    double max_grad_norm = 0.5;
    bool normalize_obs = true;
    bool normalize_rewards = true;
    StdMode std_mode = StdMode::kFixed;
};

struct GaeResult {
    Eigen::MatrixXd advantages;  // L x E
    Eigen::MatrixXd returns;
};

// Generalized advantage estimation. dones(t,e) = 1 when the episode ended at
// step t (the next state belongs to a new episode). bootstrap = V(s_{L}).
GaeResult gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values,
              const Eigen::MatrixXd& dones, const Eigen::VectorXd& bootstrap,
              double gamma, double lam);

// Scales rewards by the running standard deviation of per-env discounted
// returns. No mean subtraction, so positive rescaling of the raw stream leaves
// the normalized stream unchanged after burn-in.
class RewardNormalizer {
public:
    RewardNormalizer() = default;
    RewardNormalizer(int num_envs, double gamma);

    Eigen::VectorXd normalize_step(const Eigen::VectorXd& rewards,
                                   const std::vector<bool>& dones);
    void reset_envs(int num_envs);

    double count() const { return count_; }
    double variance() const { return count_ < 2.0 ? 1.0 : m2_ / count_; }
    void restore(double mean, double m2, double count);
    double raw_mean() const { return mean_; }
    double raw_m2() const { return m2_; }

private:
    double gamma_ = 0.99;
    Eigen::VectorXd returns_;
    double count_ = 0.0, mean_ = 0.0, m2_ = 0.0;
};

struct RolloutBuffer {
    int length = 0, num_envs = 0;
    Eigen::MatrixXf obs;        // obs_dim x (L*E); column t*E + e
    Eigen::MatrixXf actions;    // act_dim x (L*E)
    Eigen::VectorXf log_probs;  // L*E
    Eigen::MatrixXd rewards;    // L x E
    Eigen::MatrixXd dones;      // L x E
    Eigen::MatrixXd values;     // L x E
    Eigen::VectorXd bootstrap;  // E
    Eigen::MatrixXd advantages; // filled by gae
    Eigen::MatrixXd returns;
};

struct PpoDiagnostics {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    double approx_kl = 0.0;
};

// Clipped-surrogate PPO update: `epochs` passes over `minibatches` shuffled
// minibatches, advantages normalized per minibatch, gradient norm clipped.
class PpoLearner {
public:
    PpoLearner() = default;
    PpoLearner(const ActorPolicy& actor, const ValueCritic& critic);

    PpoDiagnostics update(ActorPolicy& actor, ValueCritic& critic,
                          const RolloutBuffer& batch, const PpoConfig& cfg, Rng& rng);

    void reset_actor_state(const ActorPolicy& actor);

    Adam actor_adam;
    Adam critic_adam;
};

// Per-channel training context persisted across PPGA iterations.
struct ChannelContext {
    ValueCritic critic;
    Adam critic_adam;
    RewardNormalizer reward_norm;
};

struct JacobianResult {
    double f = 0.0;
    Eigen::VectorXd measures;
    Eigen::MatrixXf grad_rows;  // (k+1) x P, each row unit Euclidean norm
};

// Vectorized PPO gradient estimator: trains k+1 replicas of the search policy,
// one per objective/measure-proxy channel, and one walking head.
class VppoEstimator {
public:
    VppoEstimator(PointHopperSpec env_spec, PpoConfig cfg, std::uint64_t seed);

    // Replica i trains on channel i for n1 iterations; row i of the Jacobian is
    // flat(replica_i) - flat(search_policy), unit-normalized. f and measures
    // come from a dedicated evaluation rollout of the untouched search policy.
    JacobianResult compute_jacobian(const ActorPolicy& search_policy, int n1,
                                    int eval_episodes, std::uint64_t iter);

    // N2 PPO iterations on R' = c_0 R + sum_j c_j delta_j with the persistent
    // walking critic. Also the only phase that advances observation-normalizer
    // statistics, so replicas stay independent during the Jacobian phase.
    ActorPolicy walk(const ActorPolicy& search_policy, const Eigen::VectorXd& coeffs,
                     int n2, std::uint64_t iter);

    // Seeded stochastic evaluation with frozen normalizer statistics.
    RolloutResult evaluate(const ActorPolicy& policy, int episodes,
                           std::uint64_t stream, std::uint64_t iter,
                           std::uint64_t index) const;

    const PointHopper& env() const { return env_; }
    const PpoConfig& config() const { return cfg_; }
    RunningNormalizer& obs_normalizer() { return obs_norm_; }
    const RunningNormalizer& obs_normalizer() const { return obs_norm_; }
    std::vector<ChannelContext>& channels() { return channels_; }
    const std::vector<ChannelContext>& channels() const { return channels_; }
    ChannelContext& walk_channel() { return walk_channel_; }
    const ChannelContext& walk_channel() const { return walk_channel_; }
    PpoDiagnostics last_walk_diagnostics() const { return last_walk_diag_; }

    ActorPolicy make_actor_template() const;

    // Single-channel training loop; also the sequential reference path used by
    // the Jacobian-equivalence tests. channel >= 0 selects one reward channel;
    // channel == -1 trains on the coefficient-weighted reward.
    void train_policy(ActorPolicy& actor, ChannelContext& ctx, int channel,
                      const Eigen::VectorXd& coeffs, int iterations,
                      std::uint64_t stream, std::uint64_t iter,
                      bool update_obs_norm, PpoDiagnostics* last_diag = nullptr);

private:
    PointHopper env_;
    PpoConfig cfg_;
    std::uint64_t seed_;
    RunningNormalizer obs_norm_;
    std::vector<ChannelContext> channels_;
    ChannelContext walk_channel_;
    PpoDiagnostics last_walk_diag_;
};

int worker_thread_cap();

}  // namespace qdarbor
