#include "qdarbor/archive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qdarbor {

long ArchiveSpec::total_cells() const {
    long total = 1;
    for (int r : resolution) total *= r;
    return total;
}

void ArchiveSpec::validate() const {
    if (resolution.empty())
        throw std::invalid_argument("archive: empty resolution");
    if (lower_bounds.size() != dims() || upper_bounds.size() != dims())
        throw std::invalid_argument("archive: bounds dimension mismatch");
    for (int i = 0; i < dims(); ++i) {
        if (resolution[i] < 1)
            throw std::invalid_argument("archive: resolution[" + std::to_string(i) +
                                        "] must be >= 1");
        if (!(lower_bounds[i] < upper_bounds[i]))
            throw std::invalid_argument("archive: lower_bounds[" + std::to_string(i) +
                                        "] must be < upper_bounds");
    }
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("archive: alpha must be in [0,1]");
}

GridArchive::GridArchive(ArchiveSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    cells_.resize(spec_.total_cells());
    for (auto& c : cells_) c.threshold = spec_.threshold_min;
}

std::vector<int> GridArchive::cell_index(const Eigen::VectorXd& measures) const {
    if (measures.size() != spec_.dims())
        throw std::invalid_argument(
            "archive: measures have dimension " + std::to_string(measures.size()) +
            ", expected " + std::to_string(spec_.dims()));
    std::vector<int> idx(spec_.dims());
    for (int i = 0; i < spec_.dims(); ++i) {
        const double lo = spec_.lower_bounds[i];
        const double hi = spec_.upper_bounds[i];
        const double m = std::clamp(measures[i], lo, hi);
        int cell = static_cast<int>(std::floor((m - lo) / (hi - lo) * spec_.resolution[i]));
        idx[i] = std::clamp(cell, 0, spec_.resolution[i] - 1);
    }
    return idx;
}

long GridArchive::linear_index(const std::vector<int>& cell) const {
    long linear = 0;
    for (int i = 0; i < spec_.dims(); ++i) linear = linear * spec_.resolution[i] + cell[i];
    return linear;
}

Improvement GridArchive::insert(const Eigen::VectorXf& params, double objective,
                                const Eigen::VectorXd& measures) {
    if (!std::isfinite(objective))
        throw std::invalid_argument("archive: non-finite objective");
    if (!measures.allFinite())
        throw std::invalid_argument("archive: non-finite measures");

    const std::vector<int> cell = cell_index(measures);
    const long linear = linear_index(cell);
    CellState& state = cells_[linear];

    Improvement result;
    result.new_cell = !state.elite.has_value();
    result.delta = objective - state.threshold;
    if (objective > state.threshold) {
        state.threshold = (1.0 - spec_.alpha) * state.threshold + spec_.alpha * objective;
        state.elite = Elite{params, objective, measures, cell};
        if (result.new_cell) filled_order_.push_back(linear);
        result.accepted = true;
    }
    return result;
}

ArchiveMetrics GridArchive::metrics() const {
    ArchiveMetrics m;
    m.num_elites = num_elites();
    m.coverage = static_cast<double>(m.num_elites) / static_cast<double>(spec_.total_cells());
    bool first = true;
    for (long linear : filled_order_) {
        const double obj = cells_[linear].elite->objective;
        m.qd_score += obj - spec_.score_offset;
        if (first || obj > m.best_reward) {
            m.best_reward = obj;
            first = false;
        }
    }
    return m;
}

std::vector<std::pair<double, double>> GridArchive::cdf(int num_bins) const {
    if (empty()) throw std::runtime_error("archive: cdf of empty archive");
    if (num_bins < 1) throw std::invalid_argument("archive: cdf needs num_bins >= 1");

    std::vector<double> objectives;
    objectives.reserve(filled_order_.size());
    for (long linear : filled_order_) objectives.push_back(cells_[linear].elite->objective);
    const auto [lo_it, hi_it] = std::minmax_element(objectives.begin(), objectives.end());
    const double lo = *lo_it, hi = *hi_it;

    std::vector<std::pair<double, double>> out;
    out.reserve(num_bins);
    const double n = static_cast<double>(objectives.size());
    for (int b = 0; b < num_bins; ++b) {
        const double thr =
            num_bins == 1 ? lo : lo + (hi - lo) * static_cast<double>(b) / (num_bins - 1);
        long count = std::count_if(objectives.begin(), objectives.end(),
                                   [thr](double o) { return o >= thr; });
        out.emplace_back(thr, static_cast<double>(count) / n);
    }
    return out;
}

const Elite& GridArchive::sample_elite(Rng& rng) const {
    if (empty()) throw std::runtime_error("archive: sample_elite on empty archive");
    std::uniform_int_distribution<std::size_t> dist(0, filled_order_.size() - 1);
    return *cells_[filled_order_[dist(rng)]].elite;
}

GridArchive GridArchive::corrected(const Evaluator& evaluator, int n_reevals) const {
    if (n_reevals < 1) throw std::invalid_argument("archive: n_reevals must be >= 1");
    ArchiveSpec corrected_spec = spec_;
    corrected_spec.alpha = 1.0;  // hard archive: keep the best corrected solution
    GridArchive out(corrected_spec);

    for (long linear : filled_order_) {
        const Elite& elite = *cells_[linear].elite;
        // running mean (exact for a constant stream, so a deterministic
        // evaluator reproduces the stored objective bit for bit)
        double obj_mean = 0.0;
        Eigen::VectorXd measure_mean = Eigen::VectorXd::Zero(spec_.dims());
        try {
            for (int r = 0; r < n_reevals; ++r) {
                auto [obj, measures] = evaluator(elite.params);
                obj_mean += (obj - obj_mean) / (r + 1);
                measure_mean += (measures - measure_mean) / (r + 1);
            }
        } catch (const std::exception& e) {
            std::string cell_str;
            for (int c : elite.cell) cell_str += std::to_string(c) + ",";
            throw std::runtime_error("archive: re-evaluation failed for elite in cell (" +
                                     cell_str + "): " + e.what());
        }
        out.insert(elite.params, obj_mean, measure_mean);
    }
    return out;
}

void GridArchive::restore_cell(long linear, double threshold, std::optional<Elite> elite) {
    CellState& state = cells_[linear];
    const bool was_filled = state.elite.has_value();
    state.threshold = threshold;
    state.elite = std::move(elite);
    if (!was_filled && state.elite.has_value()) filled_order_.push_back(linear);
}

}  // namespace qdarbor
