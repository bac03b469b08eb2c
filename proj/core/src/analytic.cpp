#include "qdarbor/analytic.hpp"

#include <stdexcept>

namespace qdarbor {

AnalyticProblem::AnalyticProblem(int dimension, Eigen::MatrixXd measure_weights)
    : dimension_(dimension), measure_weights_(std::move(measure_weights)) {
    if (dimension < 1) throw std::invalid_argument("analytic: dimension must be >= 1");
    if (measure_weights_.cols() != dimension)
        throw std::invalid_argument("analytic: weight columns must equal dimension");
}

AnalyticProblem AnalyticProblem::sphere_linear(int dimension, int num_measures) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(num_measures, dimension);
    const int block = dimension / num_measures;
    for (int i = 0; i < num_measures; ++i) {
        const int begin = i * block;
        const int end = (i == num_measures - 1) ? dimension : begin + block;
        for (int j = begin; j < end; ++j) w(i, j) = 2.0;
    }
    return AnalyticProblem(dimension, std::move(w));
}

AnalyticEval AnalyticProblem::eval(const Eigen::VectorXd& theta) const {
    if (theta.size() != dimension_)
        throw std::invalid_argument("analytic: theta has wrong dimension");
    AnalyticEval out;
    out.f = -theta.squaredNorm();
    out.grad_f = -2.0 * theta;
    const int k = num_measures();
    const double n = static_cast<double>(dimension_);
    out.measures.resize(k);
    out.grad_m = Eigen::MatrixXd::Zero(k, dimension_);
    for (int i = 0; i < k; ++i) {
        const double raw = measure_weights_.row(i).dot(theta) / n;
        if (raw <= 0.0) {
            out.measures[i] = 0.0;
        } else if (raw >= 1.0) {
            out.measures[i] = 1.0;
        } else {
            out.measures[i] = raw;
            out.grad_m.row(i) = measure_weights_.row(i) / n;
        }
    }
    return out;
}

}  // namespace qdarbor
