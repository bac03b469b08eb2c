#include "qdarbor/mlp.hpp"

#include <Eigen/QR>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qdarbor {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

Eigen::MatrixXf orthogonal_matrix(int rows, int cols, Rng& rng, float gain) {
    const bool transpose = rows < cols;
    const int r = transpose ? cols : rows;
    const int c = transpose ? rows : cols;

    Eigen::MatrixXd a(r, c);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) a(i, j) = normal(rng);

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
    const Eigen::MatrixXd rmat = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
    for (int j = 0; j < c; ++j)
        if (rmat(j, j) < 0) q.col(j) = -q.col(j);

    Eigen::MatrixXd out = transpose ? q.transpose() : q;
    return (gain * out.cast<float>()).eval();
}

Mlp::Mlp(const std::vector<int>& sizes, Rng& rng, float hidden_gain, float out_gain) {
    if (sizes.size() < 2) throw std::invalid_argument("mlp: need at least two layer sizes");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        const bool last = i + 2 == sizes.size();
        Layer layer;
        layer.weight = orthogonal_matrix(sizes[i + 1], sizes[i], rng,
                                         last ? out_gain : hidden_gain);
        layer.bias = Eigen::VectorXf::Zero(sizes[i + 1]);
        layers_.push_back(std::move(layer));
    }
}

std::vector<int> Mlp::sizes() const {
    std::vector<int> s;
    s.push_back(static_cast<int>(layers_.front().weight.cols()));
    for (const Layer& l : layers_) s.push_back(static_cast<int>(l.weight.rows()));
    return s;
}

Eigen::MatrixXf Mlp::forward(const Eigen::MatrixXf& input, Cache* cache) const {
    if (input.rows() != layers_.front().weight.cols())
        throw std::invalid_argument("mlp: input has " + std::to_string(input.rows()) +
                                    " rows, expected " +
                                    std::to_string(layers_.front().weight.cols()));
    if (cache) {
        cache->activations.clear();
        cache->activations.push_back(input);
    }
    Eigen::MatrixXf h = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = (layers_[i].weight * h).colwise() + layers_[i].bias;
        if (i + 1 < layers_.size()) h = h.array().tanh();
        if (!h.allFinite())
            throw std::runtime_error("mlp: non-finite activations in layer " +
                                     std::to_string(i));
        if (cache) cache->activations.push_back(h);
    }
    return h;
}

long Mlp::param_count() const {
    long n = 0;
    for (const Layer& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

Eigen::VectorXf Mlp::get_flat() const {
    Eigen::VectorXf flat(param_count());
    long off = 0;
    for (const Layer& l : layers_) {
        // weights row-major
        for (int r = 0; r < l.weight.rows(); ++r)
            for (int c = 0; c < l.weight.cols(); ++c) flat[off++] = l.weight(r, c);
        for (int r = 0; r < l.bias.size(); ++r) flat[off++] = l.bias[r];
    }
    return flat;
}

void Mlp::set_flat(const Eigen::VectorXf& flat) {
    if (flat.size() != param_count())
        throw std::invalid_argument("mlp: flat vector has " + std::to_string(flat.size()) +
                                    " entries, expected " + std::to_string(param_count()));
    long off = 0;
    for (Layer& l : layers_) {
        for (int r = 0; r < l.weight.rows(); ++r)
            for (int c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[off++];
        for (int r = 0; r < l.bias.size(); ++r) l.bias[r] = flat[off++];
    }
}

Eigen::VectorXf Mlp::backward(const Cache& cache, const Eigen::MatrixXf& grad_output,
                              Eigen::MatrixXf* grad_input) const {
    if (cache.activations.size() != layers_.size() + 1)
        throw std::runtime_error("mlp: backward called without a matching forward");

    Eigen::VectorXf flat = Eigen::VectorXf::Zero(param_count());
    // per-layer flat offsets
    std::vector<long> offsets(layers_.size());
    long off = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        offsets[i] = off;
        off += layers_[i].weight.size() + layers_[i].bias.size();
    }

    Eigen::MatrixXf delta = grad_output;  // dL/d(pre-activation of current layer)
    for (long i = static_cast<long>(layers_.size()) - 1; i >= 0; --i) {
        if (i + 1 < static_cast<long>(layers_.size())) {
            // cached activation is tanh(pre); d tanh = 1 - tanh^2
            delta = delta.cwiseProduct(
                (1.0f - cache.activations[i + 1].array().square()).matrix());
        }
        const Eigen::MatrixXf& prev = cache.activations[i];
        const Eigen::MatrixXf grad_w = delta * prev.transpose();
        const Eigen::VectorXf grad_b = delta.rowwise().sum();

        long o = offsets[i];
        for (int r = 0; r < grad_w.rows(); ++r)
            for (int c = 0; c < grad_w.cols(); ++c) flat[o++] = grad_w(r, c);
        for (int r = 0; r < grad_b.size(); ++r) flat[o++] = grad_b[r];

        if (i > 0 || grad_input) delta = layers_[i].weight.transpose() * delta;
    }
    if (grad_input) *grad_input = delta;
    return flat;
}

Adam::Adam(long size, double beta1_, double beta2_, double eps_)
    : m(Eigen::VectorXf::Zero(size)), v(Eigen::VectorXf::Zero(size)),
      beta1(beta1_), beta2(beta2_), eps(eps_) {}

void Adam::step(Eigen::VectorXf& params, const Eigen::VectorXf& grad, double lr) {
    ++t;
    const float b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
    m = b1 * m + (1.0f - b1) * grad;
    v = b2 * v.array().matrix() + (1.0f - b2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const float step_size = static_cast<float>(lr / bc1);
    const float denom_scale = static_cast<float>(1.0 / std::sqrt(bc2));
    params -= step_size *
              (m.array() / (v.array().sqrt() * denom_scale + static_cast<float>(eps)))
                  .matrix();
}

void Adam::reset() {
    m.setZero();
    v.setZero();
    t = 0;
}

ActorPolicy::ActorPolicy(int obs_dim, int action_dim, Rng& rng, StdMode mode,
                         const std::vector<int>& hidden) {
    std::vector<int> sizes;
    sizes.push_back(obs_dim);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(action_dim);
    net = Mlp(sizes, rng, std::sqrt(2.0f), 0.01f);
    log_std = Eigen::VectorXf::Zero(action_dim);
    std_mode = mode;
}

Eigen::VectorXf ActorPolicy::get_flat() const {
    Eigen::VectorXf flat(param_count());
    flat.head(net.param_count()) = net.get_flat();
    flat.tail(log_std.size()) = log_std;
    return flat;
}

void ActorPolicy::set_flat(const Eigen::VectorXf& flat) {
    if (flat.size() != param_count())
        throw std::invalid_argument("actor: flat vector length mismatch");
    net.set_flat(flat.head(net.param_count()));
    log_std = flat.tail(log_std.size());
}

ActorPolicy::ActResult ActorPolicy::act(const Eigen::MatrixXf& obs, Rng& rng) const {
    const Eigen::MatrixXf mean = net.forward(obs);
    const int d = action_dim();
    const int batch = static_cast<int>(obs.cols());
    const Eigen::ArrayXf std = log_std.array().exp();

    ActResult out;
    out.actions.resize(d, batch);
    out.log_probs.resize(batch);
    out.entropies.resize(batch);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    const Eigen::ArrayXd log_std_d = log_std.cast<double>().array();
    const double log_std_sum = log_std_d.sum();
    const double entropy = 0.5 * (1.0 + kLog2Pi) * d + log_std_sum;
    for (int e = 0; e < batch; ++e) {
        // density of the stored (rounded) action, accumulated at 64-bit
        double lp = -0.5 * d * kLog2Pi - log_std_sum;
        for (int j = 0; j < d; ++j) {
            const float z = normal(rng);
            out.actions(j, e) = mean(j, e) + std[j] * z;
            const double zr = (static_cast<double>(out.actions(j, e)) -
                               static_cast<double>(mean(j, e))) /
                              std::exp(log_std_d[j]);
            lp -= 0.5 * zr * zr;
        }
        out.log_probs[e] = lp;
        out.entropies[e] = entropy;
    }
    return out;
}

Eigen::MatrixXf ActorPolicy::mean_action(const Eigen::MatrixXf& obs) const {
    return net.forward(obs);
}

ActorPolicy::EvalResult ActorPolicy::evaluate_actions(const Eigen::MatrixXf& obs,
                                                      const Eigen::MatrixXf& actions) const {
    EvalResult out;
    out.mean = net.forward(obs, &out.cache);
    const int d = action_dim();
    const int batch = static_cast<int>(obs.cols());
    const Eigen::ArrayXd inv_var = (-2.0 * log_std.cast<double>().array()).exp();
    const double log_std_sum = log_std.cast<double>().sum();
    const double entropy = 0.5 * (1.0 + kLog2Pi) * d + log_std_sum;

    out.log_probs.resize(batch);
    out.entropies.resize(batch);
    for (int e = 0; e < batch; ++e) {
        // subtract after widening so the density of the stored 32-bit action
        // is exact in 64-bit, matching act()
        const Eigen::ArrayXd diff = actions.col(e).cast<double>().array() -
                                    out.mean.col(e).cast<double>().array();
        out.log_probs[e] = -0.5 * (diff.square() * inv_var).sum() -
                           0.5 * d * kLog2Pi - log_std_sum;
        out.entropies[e] = entropy;
    }
    return out;
}

ValueCritic::ValueCritic(int obs_dim, Rng& rng, const std::vector<int>& hidden) {
    std::vector<int> sizes;
    sizes.push_back(obs_dim);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(1);
    net = Mlp(sizes, rng, std::sqrt(2.0f), 1.0f);
}

Eigen::VectorXf ValueCritic::values(const Eigen::MatrixXf& obs, Mlp::Cache* cache) const {
    return net.forward(obs, cache).row(0).transpose();
}

RunningNormalizer::RunningNormalizer(int dim, double clip)
    : dim_(dim), clip_(clip),
      mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}

void RunningNormalizer::update(const Eigen::MatrixXf& batch) {
    for (int c = 0; c < batch.cols(); ++c) {
        count_ += 1.0;
        const Eigen::VectorXd x = batch.col(c).cast<double>();
        const Eigen::VectorXd delta = x - mean_;
        mean_ += delta / count_;
        m2_ += delta.cwiseProduct(x - mean_);
    }
}

Eigen::VectorXd RunningNormalizer::variance() const {
    if (count_ < 2.0) return Eigen::VectorXd::Ones(dim_);
    return m2_ / count_;
}

Eigen::MatrixXf RunningNormalizer::normalize(const Eigen::MatrixXf& batch) const {
    if (dim_ == 0 || count_ < 2.0) return batch;
    const Eigen::ArrayXf mean = mean_.cast<float>().array();
    const Eigen::ArrayXf inv_std =
        (variance().array() + 1e-8).sqrt().inverse().cast<float>();
    Eigen::MatrixXf out(batch.rows(), batch.cols());
    const float clip = static_cast<float>(clip_);
    for (int c = 0; c < batch.cols(); ++c)
        out.col(c) = ((batch.col(c).array() - mean) * inv_std).min(clip).max(-clip);
    return out;
}

void RunningNormalizer::restore(const Eigen::VectorXd& mean, const Eigen::VectorXd& m2,
                                double count) {
    mean_ = mean;
    m2_ = m2;
    count_ = count;
    dim_ = static_cast<int>(mean.size());
}

}  // namespace qdarbor
