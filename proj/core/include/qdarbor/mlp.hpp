#pragma once

#include <Eigen/Core>
#include <vector>

#include "qdarbor/rng.hpp"

namespace qdarbor {

// Fully connected net with tanh hidden activations and a linear output layer.
// Parameters are 32-bit; flat layout is layer-major, weights row-major, then
// bias, in layer order.
class Mlp {
public:
    struct Layer {
        Eigen::MatrixXf weight;  // out x in
        Eigen::VectorXf bias;
    };

    // Forward-pass activations needed by backward().
    struct Cache {
        std::vector<Eigen::MatrixXf> activations;  // [0] = input, per-layer outputs
    };

    Mlp() = default;
    // Orthogonal initialization with the given gain per hidden layer and
    // out_gain on the final layer.
    Mlp(const std::vector<int>& sizes, Rng& rng, float hidden_gain, float out_gain);

    // Columns of the input are batch items.
    Eigen::MatrixXf forward(const Eigen::MatrixXf& input, Cache* cache = nullptr) const;

    // grad_output = dL/d(output), same shape as the forward output. Returns the
    // flat parameter gradient; optionally also dL/d(input).
    Eigen::VectorXf backward(const Cache& cache, const Eigen::MatrixXf& grad_output,
                             Eigen::MatrixXf* grad_input = nullptr) const;

    long param_count() const;
    Eigen::VectorXf get_flat() const;
    void set_flat(const Eigen::VectorXf& flat);

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<int> sizes() const;

private:
    std::vector<Layer> layers_;
};

Eigen::MatrixXf orthogonal_matrix(int rows, int cols, Rng& rng, float gain);

// First-moment/second-moment gradient descent state for one flat vector.
class Adam {
public:
    Adam() = default;
    explicit Adam(long size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-5);
    void step(Eigen::VectorXf& params, const Eigen::VectorXf& grad, double lr);
    void reset();

    // serialized as part of checkpoints
    Eigen::VectorXf m, v;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-5;
};

enum class StdMode { kFixed, kAdaptive };

// Diagonal-Gaussian MLP actor: flat params = mlp params followed by log_std.
struct ActorPolicy {
    Mlp net;
    Eigen::VectorXf log_std;
    StdMode std_mode = StdMode::kFixed;

    ActorPolicy() = default;
    ActorPolicy(int obs_dim, int action_dim, Rng& rng,
                StdMode mode = StdMode::kFixed,
                const std::vector<int>& hidden = {128, 128});

    int action_dim() const { return static_cast<int>(log_std.size()); }
    long param_count() const { return net.param_count() + log_std.size(); }
    Eigen::VectorXf get_flat() const;
    void set_flat(const Eigen::VectorXf& flat);

    struct ActResult {
        Eigen::MatrixXf actions;   // action_dim x E
        Eigen::VectorXd log_probs; // E, 64-bit densities of the rounded actions
        Eigen::VectorXd entropies; // E
    };
    ActResult act(const Eigen::MatrixXf& obs, Rng& rng) const;
    Eigen::MatrixXf mean_action(const Eigen::MatrixXf& obs) const;

    // log density and entropy of given actions under the current parameters,
    // with the forward cache for backprop
    struct EvalResult {
        Eigen::MatrixXf mean;
        Eigen::VectorXd log_probs;
        Eigen::VectorXd entropies;
        Mlp::Cache cache;
    };
    EvalResult evaluate_actions(const Eigen::MatrixXf& obs,
                                const Eigen::MatrixXf& actions) const;
};

struct ValueCritic {
    Mlp net;

    ValueCritic() = default;
    ValueCritic(int obs_dim, Rng& rng, const std::vector<int>& hidden = {256, 256});

    Eigen::VectorXf values(const Eigen::MatrixXf& obs, Mlp::Cache* cache = nullptr) const;
};

// Welford running statistics per observation component.
class RunningNormalizer {
public:
    RunningNormalizer() = default;
    explicit RunningNormalizer(int dim, double clip = 10.0);

    void update(const Eigen::MatrixXf& batch);  // columns are samples
    Eigen::MatrixXf normalize(const Eigen::MatrixXf& batch) const;

    bool enabled() const { return dim_ > 0; }
    int dim() const { return dim_; }
    double count() const { return count_; }
    Eigen::VectorXd mean() const { return mean_; }
    Eigen::VectorXd variance() const;

    void restore(const Eigen::VectorXd& mean, const Eigen::VectorXd& m2, double count);
    const Eigen::VectorXd& raw_m2() const { return m2_; }

private:
    int dim_ = 0;
    double clip_ = 10.0;
    double count_ = 0.0;
    Eigen::VectorXd mean_, m2_;
};

}  // namespace qdarbor
