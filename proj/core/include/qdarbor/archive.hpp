#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "qdarbor/rng.hpp"

namespace qdarbor {

struct ArchiveSpec {
    std::vector<int> resolution;      // cells per measure dimension
    Eigen::VectorXd lower_bounds;
    Eigen::VectorXd upper_bounds;
    double alpha = 0.1;               // archive learning rate
    double threshold_min = 0.0;       // floor threshold for unexplored cells
    double score_offset = 0.0;        // subtracted from objectives in qd_score

    int dims() const { return static_cast<int>(resolution.size()); }
    long total_cells() const;
    void validate() const;
};

struct Elite {
    Eigen::VectorXf params;
    double objective = 0.0;
    Eigen::VectorXd measures;
    std::vector<int> cell;
};

struct CellState {
    double threshold = 0.0;
    std::optional<Elite> elite;
};

struct Improvement {
    double delta = 0.0;
    bool accepted = false;
    bool new_cell = false;
};

struct ArchiveMetrics {
    double qd_score = 0.0;
    double coverage = 0.0;
    double best_reward = 0.0;
    long num_elites = 0;
};

// Grid tessellation of measure space with CMA-MAE style soft acceptance
// thresholds. Single-writer: all mutation happens on one thread.
class GridArchive {
public:
    explicit GridArchive(ArchiveSpec spec);

    std::vector<int> cell_index(const Eigen::VectorXd& measures) const;
    long linear_index(const std::vector<int>& cell) const;

    // Threshold rule: accept iff objective > t_e, then
    // t_e <- (1-alpha)*t_e + alpha*objective. Delta = objective - t_e(old)
    // whether or not the solution is accepted.
    Improvement insert(const Eigen::VectorXf& params, double objective,
                       const Eigen::VectorXd& measures);

    ArchiveMetrics metrics() const;

    // (threshold, fraction of elites with objective >= threshold) pairs
    std::vector<std::pair<double, double>> cdf(int num_bins) const;

    const Elite& sample_elite(Rng& rng) const;

    using Evaluator =
        std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXf&)>;

    // Re-evaluates every elite n_reevals times, averages objective and
    // measures, and reinserts into a fresh hard (alpha = 1) archive.
    GridArchive corrected(const Evaluator& evaluator, int n_reevals) const;

    const ArchiveSpec& spec() const { return spec_; }
    long num_elites() const { return static_cast<long>(filled_order_.size()); }
    bool empty() const { return filled_order_.empty(); }
    const CellState& cell_state(long linear) const { return cells_[linear]; }
    // linear cell ids in first-fill order; the deterministic iteration order
    const std::vector<long>& filled_cells() const { return filled_order_; }

    // direct cell placement for deserialization; threshold must be consistent
    void restore_cell(long linear, double threshold, std::optional<Elite> elite);

private:
    ArchiveSpec spec_;
    std::vector<CellState> cells_;
    std::vector<long> filled_order_;
};

}  // namespace qdarbor
