#pragma once

#include <Eigen/Core>

namespace qdarbor {

struct AnalyticEval {
    double f = 0.0;
    Eigen::VectorXd grad_f;
    Eigen::VectorXd measures;   // k entries, each in [0,1]
    Eigen::MatrixXd grad_m;     // k x n, row i = gradient of measure i
};

// Differentiable QD benchmark: sphere objective f(theta) = -||theta||^2 with
// k linear measure maps m_i = clip(w_i . theta / n, 0, 1). Gradients are exact;
// measure gradients vanish where the clip saturates.
class AnalyticProblem {
public:
    AnalyticProblem(int dimension, Eigen::MatrixXd measure_weights);

    // Default instance: w_i has value 2 on the i-th of k contiguous blocks.
    static AnalyticProblem sphere_linear(int dimension, int num_measures);

    AnalyticEval eval(const Eigen::VectorXd& theta) const;

    int dimension() const { return dimension_; }
    int num_measures() const { return static_cast<int>(measure_weights_.rows()); }
    const Eigen::MatrixXd& measure_weights() const { return measure_weights_; }

private:
    int dimension_;
    Eigen::MatrixXd measure_weights_;  // k x n
};

}  // namespace qdarbor
