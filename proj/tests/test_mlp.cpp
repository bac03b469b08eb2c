#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "qdarbor/mlp.hpp"

#include "bitwise.hpp"

using namespace qdarbor;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// loss = sum_ij w_ij * out_ij with fixed random weights; scalar, smooth, and
// exercises every output
struct WeightedSumLoss {
    Eigen::MatrixXf weights;
    double value(const Eigen::MatrixXf& out) const {
        return (weights.array().cast<double>() * out.array().cast<double>()).sum();
    }
};

double fd_gradient(Mlp net, long idx, const Eigen::MatrixXf& input,
                   const WeightedSumLoss& loss, float h) {
    Eigen::VectorXf flat = net.get_flat();
    flat[idx] += h;
    net.set_flat(flat);
    const double up = loss.value(net.forward(input));
    flat[idx] -= 2 * h;
    net.set_flat(flat);
    const double down = loss.value(net.forward(input));
    return (up - down) / (2.0 * static_cast<double>(h));
}

}  // namespace

TEST_CASE("mlp flat round-trip and zero-parameter behavior") {
    Rng rng = make_rng(3, 1);
    Mlp net({4, 8, 3}, rng, std::sqrt(2.0f), 0.01f);
    const Eigen::MatrixXf input = Eigen::MatrixXf::Random(4, 5);

    Mlp copy = net;
    copy.set_flat(net.get_flat());
    CHECK(same_bits(copy.forward(input), net.forward(input)));

    CHECK_THROWS(net.set_flat(Eigen::VectorXf::Zero(net.param_count() + 1)));

    net.set_flat(Eigen::VectorXf::Zero(net.param_count()));
    CHECK(net.forward(input).isZero(0.0f));
}

TEST_CASE("mlp linear single-weight chain rule") {
    Rng rng = make_rng(3, 2);
    Mlp net({1, 1}, rng, 1.0f, 1.0f);
    Eigen::VectorXf flat(2);
    flat << 2.0f, 0.0f;  // y = 2x
    net.set_flat(flat);

    Eigen::MatrixXf x(1, 1);
    x << 3.0f;
    Mlp::Cache cache;
    net.forward(x, &cache);
    Eigen::MatrixXf g(1, 1);
    g << 1.0f;  // loss = y
    const Eigen::VectorXf grad = net.backward(cache, g);
    CHECK(grad[0] == doctest::Approx(3.0f));  // dL/dw = x
    CHECK(grad[1] == doctest::Approx(1.0f));  // dL/db

    const Eigen::VectorXf zero_grad = net.backward(cache, Eigen::MatrixXf::Zero(1, 1));
    CHECK(zero_grad.isZero(0.0f));
}

TEST_CASE("mlp backward matches central finite differences on 20 random nets") {
    Rng rng = make_rng(3, 3);
    std::uniform_int_distribution<int> size_dist(2, 9);
    for (int trial = 0; trial < 20; ++trial) {
        const int in = size_dist(rng), h1 = size_dist(rng), out = size_dist(rng);
        Mlp net({in, h1, out}, rng, std::sqrt(2.0f), 1.0f);
        const Eigen::MatrixXf input = Eigen::MatrixXf::Random(in, 4);
        WeightedSumLoss loss{Eigen::MatrixXf::Random(out, 4)};

        Mlp::Cache cache;
        net.forward(input, &cache);
        const Eigen::VectorXf analytic = net.backward(cache, loss.weights);

        Eigen::VectorXf numeric(net.param_count());
        for (long i = 0; i < net.param_count(); ++i)
            numeric[i] = static_cast<float>(fd_gradient(net, i, input, loss, 5e-3f));

        const float denom = analytic.norm() + 1e-6f;
        REQUIRE((analytic - numeric).norm() / denom <= 1e-4f);
    }
}

TEST_CASE("actor log_prob matches the closed-form Gaussian density") {
    Rng rng = make_rng(3, 4);
    ActorPolicy actor(5, 3, rng);
    actor.log_std << 0.2f, -0.5f, 0.1f;
    const Eigen::MatrixXf obs = Eigen::MatrixXf::Random(5, 16);

    SUBCASE("sampled actions") {
        const auto res = actor.act(obs, rng);
        const Eigen::MatrixXf mean = actor.mean_action(obs);
        for (int e = 0; e < 16; ++e) {
            double lp = -0.5 * 3 * kLog2Pi;
            for (int j = 0; j < 3; ++j) {
                const double s = std::exp(static_cast<double>(actor.log_std[j]));
                const double d = static_cast<double>(res.actions(j, e)) -
                                 static_cast<double>(mean(j, e));
                lp += -static_cast<double>(actor.log_std[j]) - 0.5 * d * d / (s * s);
            }
            REQUIRE(res.log_probs[e] == doctest::Approx(lp).epsilon(1e-10));
        }
    }

    SUBCASE("evaluate_actions on arbitrary actions") {
        const Eigen::MatrixXf actions = Eigen::MatrixXf::Random(3, 16);
        const auto res = actor.evaluate_actions(obs, actions);
        const Eigen::MatrixXf mean = actor.mean_action(obs);
        for (int e = 0; e < 16; ++e) {
            double lp = -0.5 * 3 * kLog2Pi;
            for (int j = 0; j < 3; ++j) {
                const double s = std::exp(static_cast<double>(actor.log_std[j]));
                const double d = static_cast<double>(actions(j, e)) -
                                 static_cast<double>(mean(j, e));
                lp += -static_cast<double>(actor.log_std[j]) - 0.5 * d * d / (s * s);
            }
            REQUIRE(res.log_probs[e] == doctest::Approx(lp).epsilon(1e-10));
        }
    }

    SUBCASE("log_prob at the mean with unit std") {
        ActorPolicy unit(5, 4, rng);
        unit.log_std.setZero();
        const Eigen::MatrixXf mean = unit.mean_action(obs);
        const auto res = unit.evaluate_actions(obs, mean);
        for (int e = 0; e < 16; ++e)
            CHECK(res.log_probs[e] == doctest::Approx(-0.5 * 4 * kLog2Pi).epsilon(1e-10));
    }
}

TEST_CASE("actor entropy matches the closed form") {
    Rng rng = make_rng(3, 5);
    ActorPolicy actor(4, 3, rng);
    actor.log_std << 0.3f, -0.7f, 0.0f;
    const Eigen::MatrixXf obs = Eigen::MatrixXf::Random(4, 2);
    const auto res = actor.evaluate_actions(obs, Eigen::MatrixXf::Random(3, 2));
    double want = 0.0;
    for (int j = 0; j < 3; ++j)
        want += 0.5 * std::log(2.0 * M_PI * M_E) + static_cast<double>(actor.log_std[j]);
    CHECK(res.entropies[0] == doctest::Approx(want).epsilon(1e-10));
    CHECK(res.entropies[1] == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("actor with tiny std acts at the deterministic mean") {
    Rng rng = make_rng(3, 6);
    ActorPolicy actor(4, 2, rng);
    actor.log_std.setConstant(-20.0f);
    const Eigen::MatrixXf obs = Eigen::MatrixXf::Random(4, 8);
    const auto res = actor.act(obs, rng);
    const Eigen::MatrixXf mean = actor.mean_action(obs);
    CHECK((res.actions - mean).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("actor flat round-trip covers log_std tail") {
    Rng rng = make_rng(3, 7);
    ActorPolicy actor(6, 3, rng);
    actor.log_std << 0.1f, 0.2f, 0.3f;
    Eigen::VectorXf flat = actor.get_flat();
    CHECK(flat.size() == actor.param_count());
    CHECK(flat[flat.size() - 3] == 0.1f);

    ActorPolicy other(6, 3, rng);
    other.set_flat(flat);
    CHECK(same_bits(other.log_std, actor.log_std));
    const Eigen::MatrixXf obs = Eigen::MatrixXf::Random(6, 4);
    CHECK(same_bits(other.mean_action(obs), actor.mean_action(obs)));
}

TEST_CASE("orthogonal init produces orthonormal columns scaled by gain") {
    Rng rng = make_rng(3, 8);
    const float gain = 1.7f;
    const Eigen::MatrixXf q = orthogonal_matrix(8, 8, rng, gain);
    const Eigen::MatrixXf gram = (q.transpose() * q) / (gain * gain);
    CHECK((gram - Eigen::MatrixXf::Identity(8, 8)).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("running normalizer converges to source statistics") {
    const int N = 40000;
    RunningNormalizer norm(3);
    Rng rng = make_rng(3, 9);
    std::normal_distribution<float> d0(2.0f, 1.5f), d1(-1.0f, 0.5f), d2(0.0f, 3.0f);
    Eigen::MatrixXf batch(3, 100);
    for (int b = 0; b < N / 100; ++b) {
        for (int c = 0; c < 100; ++c) {
            batch(0, c) = d0(rng);
            batch(1, c) = d1(rng);
            batch(2, c) = d2(rng);
        }
        norm.update(batch);
    }
    const double bound = 5.0 / std::sqrt(static_cast<double>(N));
    CHECK(std::abs(norm.mean()[0] - 2.0) < bound * 1.5);   // scaled by sigma
    CHECK(std::abs(norm.mean()[1] + 1.0) < bound * 0.5);
    CHECK(std::abs(std::sqrt(norm.variance()[0]) - 1.5) < bound * 1.5);
    CHECK(std::abs(std::sqrt(norm.variance()[2]) - 3.0) < bound * 3.0);

    // normalized output is standardized
    Eigen::MatrixXf sample(3, 1);
    sample << 2.0f, -1.0f, 0.0f;
    const Eigen::MatrixXf z = norm.normalize(sample);
    CHECK(std::abs(z(0, 0)) < 0.05f);
    CHECK(std::abs(z(1, 0)) < 0.05f);
}

TEST_CASE("adam takes a step against the raw gradient direction") {
    Adam adam(2);
    Eigen::VectorXf p(2);
    p << 1.0f, -1.0f;
    Eigen::VectorXf g(2);
    g << 0.5f, -0.25f;
    const Eigen::VectorXf before = p;
    adam.step(p, g, 1e-2);
    CHECK(p[0] < before[0]);
    CHECK(p[1] > before[1]);
    adam.reset();
    CHECK(adam.t == 0);
}
