#pragma once

#include <Eigen/Core>
#include <vector>

#include "qdarbor/rng.hpp"

namespace qdarbor {

// Exponential natural evolution strategy over gradient-coefficient space.
// Search distribution N(mu, sigma^2 * B * B^T) with det(B) = 1.
struct NesState {
    Eigen::VectorXd mu;
    double sigma = 1.0;
    Eigen::MatrixXd b_factor;
    double eta_mu = 1.0;
    double eta_sigma = 0.0;
    double eta_b = 0.0;
    int lambda = 32;
    double sigma_init = 1.0;

    int dims() const { return static_cast<int>(mu.size()); }
};

struct RankedBatch {
    std::vector<Eigen::VectorXd> samples;
    std::vector<double> deltas;
    std::vector<int> order;  // permutation sorting deltas descending (best first)
};

// Published default rates: eta_mu = 1, eta_sigma = eta_b = (9+3 ln d)/(5 d sqrt(d)).
NesState make_nes_state(int dims, double sigma_init, int lambda);

std::vector<Eigen::VectorXd> nes_ask(const NesState& state, Rng& rng, int lambda);

// Zero-sum utilities u_i = max(0, ln(lambda/2+1) - ln(rank)) normalized, - 1/lambda.
std::vector<double> nes_utilities(int lambda);

// Flat descending-delta ranking; ties broken by sample index.
std::vector<int> rank_descending(const std::vector<double>& deltas);
// Two-stage variant: new-cell discoveries outrank all others, then by delta.
std::vector<int> rank_two_stage(const std::vector<double>& deltas,
                                const std::vector<bool>& new_cell);

// Canonical xNES update. Depends on deltas only through batch.order.
NesState nes_tell(const NesState& state, const RankedBatch& batch);

NesState nes_restart(const NesState& state);

// Scaling-and-squaring matrix exponential with truncated Taylor series.
Eigen::MatrixXd expm(const Eigen::MatrixXd& a);

}  // namespace qdarbor
