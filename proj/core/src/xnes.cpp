#include "qdarbor/xnes.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace qdarbor {

NesState make_nes_state(int dims, double sigma_init, int lambda) {
    if (dims < 1) throw std::invalid_argument("xnes: dims must be >= 1");
    if (sigma_init <= 0.0) throw std::invalid_argument("xnes: sigma_init must be > 0");
    if (lambda < 2) throw std::invalid_argument("xnes: lambda must be >= 2");
    NesState s;
    s.mu = Eigen::VectorXd::Zero(dims);
    s.sigma = sigma_init;
    s.b_factor = Eigen::MatrixXd::Identity(dims, dims);
    const double d = static_cast<double>(dims);
    s.eta_mu = 1.0;
    s.eta_sigma = (9.0 + 3.0 * std::log(d)) / (5.0 * d * std::sqrt(d));
    s.eta_b = s.eta_sigma;
    s.lambda = lambda;
    s.sigma_init = sigma_init;
    return s;
}

std::vector<Eigen::VectorXd> nes_ask(const NesState& state, Rng& rng, int lambda) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Eigen::VectorXd> samples;
    samples.reserve(lambda);
    const int d = state.dims();
    for (int i = 0; i < lambda; ++i) {
        Eigen::VectorXd z(d);
        for (int j = 0; j < d; ++j) z[j] = normal(rng);
        samples.push_back(state.mu + state.sigma * (state.b_factor * z));
    }
    return samples;
}

std::vector<double> nes_utilities(int lambda) {
    std::vector<double> u(lambda);
    double sum = 0.0;
    for (int i = 0; i < lambda; ++i) {
        u[i] = std::max(0.0, std::log(lambda / 2.0 + 1.0) - std::log(i + 1.0));
        sum += u[i];
    }
    for (int i = 0; i < lambda; ++i) u[i] = u[i] / sum - 1.0 / lambda;
    return u;
}

std::vector<int> rank_descending(const std::vector<double>& deltas) {
    std::vector<int> order(deltas.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return deltas[a] > deltas[b]; });
    return order;
}

std::vector<int> rank_two_stage(const std::vector<double>& deltas,
                                const std::vector<bool>& new_cell) {
    std::vector<int> order(deltas.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (new_cell[a] != new_cell[b]) return new_cell[a];
        return deltas[a] > deltas[b];
    });
    return order;
}

Eigen::MatrixXd expm(const Eigen::MatrixXd& a) {
    const int d = static_cast<int>(a.rows());
    // scale so the series converges fast, square back afterwards
    const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
    int squarings = 0;
    double scale = 1.0;
    while (norm * scale > 0.5) {
        scale *= 0.5;
        ++squarings;
    }
    const Eigen::MatrixXd scaled = a * scale;

    Eigen::MatrixXd result = Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd term = Eigen::MatrixXd::Identity(d, d);
    for (int n = 1; n <= 32; ++n) {
        term = (term * scaled) / static_cast<double>(n);
        result += term;
        if (term.cwiseAbs().maxCoeff() < 1e-18) break;
    }
    for (int s = 0; s < squarings; ++s) result = result * result;
    return result;
}

NesState nes_tell(const NesState& state, const RankedBatch& batch) {
    const int lambda = static_cast<int>(batch.samples.size());
    const int d = state.dims();
    if (static_cast<int>(batch.order.size()) != lambda ||
        static_cast<int>(batch.deltas.size()) != lambda)
        throw std::invalid_argument("xnes: inconsistent batch sizes");
    for (double delta : batch.deltas)
        if (!std::isfinite(delta))
            throw std::invalid_argument("xnes: non-finite improvement value");
    {
        std::vector<bool> seen(lambda, false);
        for (int i : batch.order) {
            if (i < 0 || i >= lambda || seen[i])
                throw std::invalid_argument("xnes: order is not a permutation");
            seen[i] = true;
        }
    }

    // recover the standard-normal draws z_i = B^-1 (c_i - mu) / sigma
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(state.b_factor);
    const std::vector<double> utilities = nes_utilities(lambda);

    Eigen::VectorXd g_delta = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd g_m = Eigen::MatrixXd::Zero(d, d);
    for (int rank = 0; rank < lambda; ++rank) {
        const Eigen::VectorXd z =
            lu.solve(batch.samples[batch.order[rank]] - state.mu) / state.sigma;
        g_delta += utilities[rank] * z;
        g_m += utilities[rank] * (z * z.transpose() - Eigen::MatrixXd::Identity(d, d));
    }
    const double g_sigma = g_m.trace() / d;
    const Eigen::MatrixXd g_b = g_m - g_sigma * Eigen::MatrixXd::Identity(d, d);

    NesState next = state;
    next.mu = state.mu + state.eta_mu * state.sigma * (state.b_factor * g_delta);
    next.sigma = state.sigma * std::exp(state.eta_sigma / 2.0 * g_sigma);
    next.b_factor = state.b_factor * expm(state.eta_b / 2.0 * g_b);

    // g_b is traceless so det stays 1 analytically; renormalize the drift and
    // fold the correction into sigma
    const double det = next.b_factor.determinant();
    const double det_root = std::pow(std::abs(det), 1.0 / d);
    next.b_factor /= det_root;
    next.sigma *= det_root;

    if (!(next.sigma > 0.0) || !std::isfinite(next.sigma))
        throw std::runtime_error("xnes: step size left (0, inf)");
    return next;
}

NesState nes_restart(const NesState& state) {
    NesState next = state;
    next.mu = Eigen::VectorXd::Zero(state.dims());
    next.sigma = state.sigma_init;
    next.b_factor = Eigen::MatrixXd::Identity(state.dims(), state.dims());
    return next;
}

}  // namespace qdarbor
