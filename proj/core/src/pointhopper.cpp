#include "qdarbor/pointhopper.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qdarbor {

PointHopper::PointHopper(PointHopperSpec spec) : spec_(spec) {
    if (spec_.num_legs < 1) throw std::invalid_argument("pointhopper: num_legs must be >= 1");
    if (spec_.episode_length < 1)
        throw std::invalid_argument("pointhopper: episode_length must be >= 1");
    if (spec_.dt <= 0.0) throw std::invalid_argument("pointhopper: dt must be > 0");
}

EnvBatchState PointHopper::reset(int num_envs) const {
    EnvBatchState s;
    s.num_envs = num_envs;
    s.x = Eigen::VectorXd::Zero(num_envs);
    s.v = Eigen::VectorXd::Zero(num_envs);
    s.prev_contacts = Eigen::MatrixXd::Zero(spec_.num_legs, num_envs);
    s.steps = Eigen::VectorXi::Zero(num_envs);
    s.return_sum = Eigen::VectorXd::Zero(num_envs);
    s.proxy_sum = Eigen::MatrixXd::Zero(spec_.num_legs, num_envs);
    return s;
}

void PointHopper::reset_env(EnvBatchState& s, int e) const {
    s.x[e] = 0.0;
    s.v[e] = 0.0;
    s.prev_contacts.col(e).setZero();
    s.steps[e] = 0;
    s.return_sum[e] = 0.0;
    s.proxy_sum.col(e).setZero();
}

Eigen::MatrixXf PointHopper::observe(const EnvBatchState& s) const {
    Eigen::MatrixXf obs(spec_.obs_dim(), s.num_envs);
    for (int e = 0; e < s.num_envs; ++e) {
        obs(0, e) = static_cast<float>(std::fmod(s.x[e], 10.0));
        obs(1, e) = static_cast<float>(s.v[e]);
        for (int i = 0; i < spec_.num_legs; ++i)
            obs(2 + i, e) = static_cast<float>(s.prev_contacts(i, e));
    }
    return obs;
}

StepResult PointHopper::step(EnvBatchState& s, const Eigen::MatrixXf& actions) const {
    const int k = spec_.num_legs;
    if (actions.rows() != spec_.action_dim() || actions.cols() != s.num_envs)
        throw std::invalid_argument("pointhopper: action batch shape mismatch");

    StepResult out;
    out.rewards.resize(k + 1, s.num_envs);
    out.done.assign(s.num_envs, false);

    for (int e = 0; e < s.num_envs; ++e) {
        if (!actions.col(e).allFinite())
            throw std::runtime_error("pointhopper: NaN action in env " + std::to_string(e));

        double norm_sq = 0.0;
        double contact_sum = 0.0;
        for (int j = 0; j <= k; ++j) {
            const double a = std::clamp(static_cast<double>(actions(j, e)), -1.0, 1.0);
            norm_sq += a * a;
            if (j >= 1) {
                const double contact = a > 0.0 ? 1.0 : 0.0;
                contact_sum += contact;
                s.prev_contacts(j - 1, e) = contact;
                out.rewards(j, e) = contact;
                s.proxy_sum(j - 1, e) += contact;
            }
        }
        const double thrust = std::clamp(static_cast<double>(actions(0, e)), -1.0, 1.0);
        const double ground_push = contact_sum >= 1.0 ? 1.0 : 0.0;
        s.v[e] = 0.9 * s.v[e] + 0.1 * thrust * ground_push;
        s.x[e] += s.v[e] * spec_.dt;

        const double reward = s.v[e] * spec_.dt - spec_.control_cost * norm_sq;
        out.rewards(0, e) = reward;
        s.return_sum[e] += reward;
        s.steps[e] += 1;

        if (s.steps[e] >= spec_.episode_length) {
            EpisodeEnd end;
            end.env = e;
            end.total_return = s.return_sum[e];
            end.measures = s.proxy_sum.col(e) / static_cast<double>(spec_.episode_length);
            out.episode_ends.push_back(std::move(end));
            out.done[e] = true;
            reset_env(s, e);
        }
    }
    out.obs = observe(s);
    return out;
}

RolloutResult rollout(const PointHopper& env, const PolicyFn& policy, int episodes) {
    if (episodes < 1) throw std::invalid_argument("rollout: episodes must be >= 1");
    const PointHopperSpec& spec = env.spec();
    EnvBatchState state = env.reset(episodes);
    Eigen::MatrixXf obs = env.observe(state);

    RolloutResult result;
    result.mean_measures = Eigen::VectorXd::Zero(spec.num_legs);
    for (int t = 0; t < spec.episode_length; ++t) {
        StepResult step = env.step(state, policy(obs));
        obs = step.obs;
        for (const EpisodeEnd& end : step.episode_ends) {
            result.mean_return += end.total_return;
            result.mean_measures += end.measures;
        }
    }
    result.mean_return /= episodes;
    result.mean_measures /= episodes;
    return result;
}

}  // namespace qdarbor
