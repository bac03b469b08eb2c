#include "qdarbor/vppo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

namespace qdarbor {

GaeResult gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values,
              const Eigen::MatrixXd& dones, const Eigen::VectorXd& bootstrap,
              double gamma, double lam) {
    const long L = rewards.rows(), E = rewards.cols();
    if (values.rows() != L || values.cols() != E || dones.rows() != L ||
        dones.cols() != E || bootstrap.size() != E)
        throw std::invalid_argument("gae: shape mismatch");

    GaeResult out;
    out.advantages.resize(L, E);
    out.returns.resize(L, E);
    for (long e = 0; e < E; ++e) {
        double running = 0.0;
        for (long t = L - 1; t >= 0; --t) {
            const double not_done = 1.0 - dones(t, e);
            const double next_value = (t == L - 1) ? bootstrap[e] : values(t + 1, e);
            const double delta =
                rewards(t, e) + gamma * next_value * not_done - values(t, e);
            running = delta + gamma * lam * not_done * running;
            out.advantages(t, e) = running;
            out.returns(t, e) = running + values(t, e);
        }
    }
    return out;
}

RewardNormalizer::RewardNormalizer(int num_envs, double gamma)
    : gamma_(gamma), returns_(Eigen::VectorXd::Zero(num_envs)) {}

void RewardNormalizer::reset_envs(int num_envs) {
    returns_ = Eigen::VectorXd::Zero(num_envs);
}

Eigen::VectorXd RewardNormalizer::normalize_step(const Eigen::VectorXd& rewards,
                                                 const std::vector<bool>& dones) {
    if (returns_.size() != rewards.size()) returns_ = Eigen::VectorXd::Zero(rewards.size());
    for (long e = 0; e < rewards.size(); ++e) {
        returns_[e] = gamma_ * returns_[e] + rewards[e];
        count_ += 1.0;
        const double delta = returns_[e] - mean_;
        mean_ += delta / count_;
        m2_ += delta * (returns_[e] - mean_);
        if (dones[static_cast<std::size_t>(e)]) returns_[e] = 0.0;
    }
    const double scale = 1.0 / std::sqrt(variance() + 1e-8);
    return rewards * scale;
}

void RewardNormalizer::restore(double mean, double m2, double count) {
    mean_ = mean;
    m2_ = m2;
    count_ = count;
}

PpoLearner::PpoLearner(const ActorPolicy& actor, const ValueCritic& critic)
    : actor_adam(actor.param_count()), critic_adam(critic.net.param_count()) {}

void PpoLearner::reset_actor_state(const ActorPolicy& actor) {
    actor_adam = Adam(actor.param_count());
}

namespace {

void clip_grad_norm(Eigen::VectorXf& grad, double max_norm) {
    const double norm = grad.norm();
    if (norm > max_norm) grad *= static_cast<float>(max_norm / norm);
}

}  // namespace

PpoDiagnostics PpoLearner::update(ActorPolicy& actor, ValueCritic& critic,
                                  const RolloutBuffer& batch, const PpoConfig& cfg,
                                  Rng& rng) {
    const int total = batch.length * batch.num_envs;
    const int mb_count = cfg.minibatches;
    const int mb_size = total / mb_count;
    const int act_dim = actor.action_dim();
    const long actor_net_params = actor.net.param_count();

    // flatten advantage/return/value targets into sample order t*E + e
    Eigen::VectorXf adv_all(total), ret_all(total);
    for (int t = 0; t < batch.length; ++t)
        for (int e = 0; e < batch.num_envs; ++e) {
            adv_all[t * batch.num_envs + e] = static_cast<float>(batch.advantages(t, e));
            ret_all[t * batch.num_envs + e] = static_cast<float>(batch.returns(t, e));
        }

    std::vector<int> indices(total);
    std::iota(indices.begin(), indices.end(), 0);

    PpoDiagnostics diag;
    long diag_samples = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(indices.begin(), indices.end(), rng);
        for (int mb = 0; mb < mb_count; ++mb) {
            const int begin = mb * mb_size;
            const int end = (mb == mb_count - 1) ? total : begin + mb_size;
            const int m = end - begin;

            Eigen::MatrixXf obs_mb(batch.obs.rows(), m);
            Eigen::MatrixXf act_mb(act_dim, m);
            Eigen::VectorXf old_lp(m), adv(m), ret(m);
            for (int i = 0; i < m; ++i) {
                const int idx = indices[begin + i];
                obs_mb.col(i) = batch.obs.col(idx);
                act_mb.col(i) = batch.actions.col(idx);
                old_lp[i] = batch.log_probs[idx];
                adv[i] = adv_all[idx];
                ret[i] = ret_all[idx];
            }
            // advantage normalization per minibatch
            const float adv_mean = adv.mean();
            const float adv_std =
                std::sqrt((adv.array() - adv_mean).square().sum() / m) + 1e-8f;
            adv = ((adv.array() - adv_mean) / adv_std).matrix();

            // ---- actor ----
            ActorPolicy::EvalResult eval = actor.evaluate_actions(obs_mb, act_mb);
            const Eigen::ArrayXf ratio =
                (eval.log_probs.cast<float>() - old_lp).array().exp();
            const Eigen::ArrayXf clipped =
                ratio.min(1.0f + static_cast<float>(cfg.clip))
                     .max(1.0f - static_cast<float>(cfg.clip));
            const Eigen::ArrayXf s1 = ratio * adv.array();
            const Eigen::ArrayXf s2 = clipped * adv.array();

            double policy_loss = -static_cast<double>(s1.min(s2).mean());
            if (!std::isfinite(policy_loss))
                throw std::runtime_error(
                    "ppo: non-finite policy loss (ratio range " +
                    std::to_string(ratio.minCoeff()) + ".." +
                    std::to_string(ratio.maxCoeff()) + ")");

            // d loss / d log_prob: active only where the unclipped branch wins
            Eigen::VectorXf g_lp(m);
            long clipped_count = 0;
            for (int i = 0; i < m; ++i) {
                const bool unclipped_active = s1[i] <= s2[i];
                g_lp[i] = unclipped_active ? -adv[i] * ratio[i] / m : 0.0f;
                if (std::abs(ratio[i] - 1.0f) > cfg.clip) ++clipped_count;
            }

            const Eigen::ArrayXf inv_var = (-2.0f * actor.log_std.array()).exp();
            Eigen::MatrixXf grad_mean(act_dim, m);
            Eigen::VectorXf grad_log_std = Eigen::VectorXf::Zero(act_dim);
            for (int i = 0; i < m; ++i) {
                const Eigen::ArrayXf diff =
                    (act_mb.col(i) - eval.mean.col(i)).array();
                // d log_prob / d mean = diff * inv_var ; d loss = g_lp * that
                grad_mean.col(i) = (g_lp[i] * diff * inv_var).matrix();
                grad_log_std +=
                    (g_lp[i] * (diff.square() * inv_var - 1.0f)).matrix();
            }
            if (cfg.entropy_coef != 0.0) {
                // entropy = sum(log_std) + const per sample
                grad_log_std.array() -= static_cast<float>(cfg.entropy_coef);
            }
            // d log_prob / d mean enters the mlp through -diff direction:
            // log_prob = -0.5 (a - mean)^2 inv_var => d/d mean = diff * inv_var,
            // already applied above.
            Eigen::VectorXf actor_grad(actor.param_count());
            actor_grad.head(actor_net_params) = actor.net.backward(eval.cache, grad_mean);
            actor_grad.tail(act_dim) =
                actor.std_mode == StdMode::kAdaptive ? grad_log_std
                                                     : Eigen::VectorXf::Zero(act_dim);
            clip_grad_norm(actor_grad, cfg.max_grad_norm);
            Eigen::VectorXf actor_flat = actor.get_flat();
            actor_adam.step(actor_flat, actor_grad, cfg.lr);
            actor.set_flat(actor_flat);

            // ---- critic ----
            Mlp::Cache vcache;
            const Eigen::VectorXf values = critic.values(obs_mb, &vcache);
            const Eigen::VectorXf verr = values - ret;
            const double value_loss = cfg.value_coef * verr.squaredNorm() / m;
            if (!std::isfinite(value_loss))
                throw std::runtime_error("ppo: non-finite value loss");
            Eigen::MatrixXf grad_v(1, m);
            grad_v.row(0) =
                (2.0f * static_cast<float>(cfg.value_coef) / m) * verr.transpose();
            Eigen::VectorXf critic_grad = critic.net.backward(vcache, grad_v);
            clip_grad_norm(critic_grad, cfg.max_grad_norm);
            Eigen::VectorXf critic_flat = critic.net.get_flat();
            critic_adam.step(critic_flat, critic_grad, cfg.lr);
            critic.net.set_flat(critic_flat);

            diag.policy_loss += policy_loss * m;
            diag.value_loss += value_loss * m;
            diag.entropy += static_cast<double>(eval.entropies.sum());
            diag.clip_fraction += static_cast<double>(clipped_count);
            diag.approx_kl += old_lp.cast<double>().sum() - eval.log_probs.sum();
            diag_samples += m;
        }
    }
    const double inv = 1.0 / static_cast<double>(diag_samples);
    diag.policy_loss *= inv;
    diag.value_loss *= inv;
    diag.entropy *= inv;
    diag.clip_fraction *= inv;
    diag.approx_kl *= inv;
    return diag;
}

int worker_thread_cap() {
    if (const char* env = std::getenv("QD_ARBOR_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

VppoEstimator::VppoEstimator(PointHopperSpec env_spec, PpoConfig cfg, std::uint64_t seed)
    : env_(env_spec), cfg_(cfg), seed_(seed) {
    if (cfg_.normalize_obs) obs_norm_ = RunningNormalizer(env_spec.obs_dim());
    Rng rng = make_rng(seed, stream::kInit, 100);
    const int channels = env_spec.num_channels();
    for (int i = 0; i < channels; ++i) {
        ChannelContext ctx;
        ctx.critic = ValueCritic(env_spec.obs_dim(), rng);
        ctx.critic_adam = Adam(ctx.critic.net.param_count());
        ctx.reward_norm = RewardNormalizer(cfg_.num_envs, cfg_.gamma);
        channels_.push_back(std::move(ctx));
    }
    walk_channel_.critic = ValueCritic(env_spec.obs_dim(), rng);
    walk_channel_.critic_adam = Adam(walk_channel_.critic.net.param_count());
    walk_channel_.reward_norm = RewardNormalizer(cfg_.num_envs, cfg_.gamma);
}

ActorPolicy VppoEstimator::make_actor_template() const {
    Rng rng = make_rng(seed_, stream::kInit, 200);
    return ActorPolicy(env_.spec().obs_dim(), env_.spec().action_dim(), rng,
                       cfg_.std_mode);
}

void VppoEstimator::train_policy(ActorPolicy& actor, ChannelContext& ctx, int channel,
                                 const Eigen::VectorXd& coeffs, int iterations,
                                 std::uint64_t stream, std::uint64_t iter,
                                 bool update_obs_norm, PpoDiagnostics* last_diag) {
    const int L = cfg_.rollout_length;
    const int E = cfg_.num_envs;
    const int k = env_.spec().num_legs;
    Rng rng = make_rng(seed_, stream, iter, static_cast<std::uint64_t>(channel + 2));

    // the walk phase owns normalizer updates; replicas read frozen statistics
    RunningNormalizer* mutable_norm = update_obs_norm ? &obs_norm_ : nullptr;

    EnvBatchState env_state = env_.reset(E);
    Eigen::MatrixXf raw_obs = env_.observe(env_state);
    ctx.reward_norm.reset_envs(E);

    PpoLearner learner;
    learner.actor_adam = Adam(actor.param_count());
    learner.critic_adam = ctx.critic_adam;

    for (int it = 0; it < iterations; ++it) {
        RolloutBuffer buf;
        buf.length = L;
        buf.num_envs = E;
        buf.obs.resize(env_.spec().obs_dim(), L * E);
        buf.actions.resize(env_.spec().action_dim(), L * E);
        buf.log_probs.resize(L * E);
        buf.rewards.resize(L, E);
        buf.dones.resize(L, E);
        buf.values.resize(L, E);

        for (int t = 0; t < L; ++t) {
            if (mutable_norm && mutable_norm->enabled()) mutable_norm->update(raw_obs);
            const Eigen::MatrixXf norm_obs = obs_norm_.normalize(raw_obs);
            buf.obs.middleCols(t * E, E) = norm_obs;

            const ActorPolicy::ActResult act = actor.act(norm_obs, rng);
            buf.actions.middleCols(t * E, E) = act.actions;
            buf.log_probs.segment(t * E, E) = act.log_probs.cast<float>();
            buf.values.row(t) = ctx.critic.values(norm_obs).cast<double>().transpose();

            StepResult step = env_.step(env_state, act.actions);
            raw_obs = step.obs;

            Eigen::VectorXd raw_reward(E);
            if (channel >= 0) {
                raw_reward = step.rewards.row(channel).transpose();
            } else {
                for (int e = 0; e < E; ++e) {
                    double r = coeffs[0] * step.rewards(0, e);
                    for (int j = 1; j <= k; ++j) r += coeffs[j] * step.rewards(j, e);
                    raw_reward[e] = r;
                }
            }
            const Eigen::VectorXd reward =
                cfg_.normalize_rewards
                    ? ctx.reward_norm.normalize_step(raw_reward, step.done)
                    : raw_reward;
            buf.rewards.row(t) = reward.transpose();
            for (int e = 0; e < E; ++e) buf.dones(t, e) = step.done[e] ? 1.0 : 0.0;
        }
        const Eigen::MatrixXf final_obs = obs_norm_.normalize(raw_obs);
        buf.bootstrap = ctx.critic.values(final_obs).cast<double>();

        const GaeResult g =
            gae(buf.rewards, buf.values, buf.dones, buf.bootstrap, cfg_.gamma,
                cfg_.gae_lambda);
        buf.advantages = g.advantages;
        buf.returns = g.returns;

        const PpoDiagnostics diag = learner.update(actor, ctx.critic, buf, cfg_, rng);
        if (last_diag) *last_diag = diag;
    }
    ctx.critic_adam = learner.critic_adam;
}

JacobianResult VppoEstimator::compute_jacobian(const ActorPolicy& search_policy, int n1,
                                               int eval_episodes, std::uint64_t iter) {
    if (n1 < 1) throw std::invalid_argument("vppo: n1 must be >= 1");
    const int channels = env_.spec().num_channels();

    const RolloutResult eval =
        evaluate(search_policy, eval_episodes, stream::kSearchEval, iter, 0);

    std::vector<ActorPolicy> replicas(channels, search_policy);
    const Eigen::VectorXd no_coeffs;

    auto train_one = [&](int i) {
        train_policy(replicas[i], channels_[i], i, no_coeffs, n1, stream::kJacobian,
                     iter, /*update_obs_norm=*/false);
    };

    const int cap = std::min(worker_thread_cap(), channels);
    if (cap <= 1) {
        for (int i = 0; i < channels; ++i) train_one(i);
    } else {
        std::vector<std::thread> workers;
        std::exception_ptr error;
        for (int w = 0; w < cap; ++w)
            workers.emplace_back([&, w] {
                for (int i = w; i < channels; i += cap) {
                    try {
                        train_one(i);
                    } catch (...) {
                        error = std::current_exception();
                    }
                }
            });
        for (auto& t : workers) t.join();
        if (error) std::rethrow_exception(error);
    }

    const Eigen::VectorXf base = search_policy.get_flat();
    JacobianResult out;
    out.f = eval.mean_return;
    out.measures = eval.mean_measures;
    out.grad_rows.resize(channels, base.size());
    for (int i = 0; i < channels; ++i) {
        Eigen::VectorXf row = replicas[i].get_flat() - base;
        const float norm = row.norm();
        if (!(norm > 0.0f))
            throw std::runtime_error("vppo: degenerate zero-norm gradient for channel " +
                                     std::to_string(i));
        out.grad_rows.row(i) = (row / norm).transpose();
    }
    return out;
}

ActorPolicy VppoEstimator::walk(const ActorPolicy& search_policy,
                                const Eigen::VectorXd& coeffs, int n2,
                                std::uint64_t iter) {
    if (coeffs.size() != env_.spec().num_channels())
        throw std::invalid_argument("vppo: walk coefficients dimension mismatch");
    ActorPolicy actor = search_policy;
    train_policy(actor, walk_channel_, -1, coeffs, n2, stream::kWalk, iter,
                 /*update_obs_norm=*/true, &last_walk_diag_);
    return actor;
}

RolloutResult VppoEstimator::evaluate(const ActorPolicy& policy, int episodes,
                                      std::uint64_t stream, std::uint64_t iter,
                                      std::uint64_t index) const {
    Rng rng = make_rng(seed_, stream, iter, index);
    const PolicyFn policy_fn = [&](const Eigen::MatrixXf& raw_obs) {
        const Eigen::MatrixXf norm_obs = obs_norm_.normalize(raw_obs);
        return policy.act(norm_obs, rng).actions;
    };
    return rollout(env_, policy_fn, episodes);
}

}  // namespace qdarbor
