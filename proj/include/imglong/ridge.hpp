#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "imglong/errors.hpp"

namespace imglong {

struct ridge_solution {
    Eigen::MatrixXd weights;          // p x q
    std::vector<double> training_mse; // per output column
};

// (XᵀX + λI) W = XᵀT, one solve shared by all output columns
inline ridge_solution ridge_solve(const Eigen::MatrixXd& X, const Eigen::MatrixXd& T,
                                  double lambda, const char* who = "ridge_solve") {
    if (X.rows() != T.rows())
        throw std::invalid_argument(std::string(who) + ": row counts differ");
    if (lambda < 0.0) throw std::invalid_argument(std::string(who) + ": lambda must be >= 0");

    Eigen::MatrixXd gram = X.transpose() * X;
    gram.diagonal().array() += lambda;

    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success)
        throw numerical_error(std::string(who) +
                              ": normal equations singular; increase lambda above 0");

    ridge_solution sol;
    sol.weights = llt.solve(X.transpose() * T);
    sol.training_mse.reserve(static_cast<std::size_t>(T.cols()));
    const Eigen::MatrixXd resid = T - X * sol.weights;
    for (Eigen::Index c = 0; c < T.cols(); ++c)
        sol.training_mse.push_back(resid.col(c).squaredNorm() / static_cast<double>(T.rows()));
    return sol;
}

} // namespace imglong
