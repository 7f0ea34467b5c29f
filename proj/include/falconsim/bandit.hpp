#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "falconsim/dqn.hpp"
#include "falconsim/sched.hpp"

namespace falconsim {

// Dense symmetric positive definite solve via Cholesky; dimensions here are
// tiny (the context vector plus a bias term).
inline std::vector<double> spd_solve(const std::vector<double>& A, int d,
                                     const std::vector<double>& b) {
    std::vector<double> L(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = A[static_cast<std::size_t>(i) * d + j];
            for (int k = 0; k < j; ++k)
                s -= L[static_cast<std::size_t>(i) * d + k] * L[static_cast<std::size_t>(j) * d + k];
            if (i == j) {
                if (s <= 0) throw std::runtime_error("matrix not positive definite");
                L[static_cast<std::size_t>(i) * d + j] = std::sqrt(s);
            } else {
                L[static_cast<std::size_t>(i) * d + j] = s / L[static_cast<std::size_t>(j) * d + j];
            }
        }
    }
    std::vector<double> y(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        double s = b[static_cast<std::size_t>(i)];
        for (int k = 0; k < i; ++k) s -= L[static_cast<std::size_t>(i) * d + k] * y[static_cast<std::size_t>(k)];
        y[static_cast<std::size_t>(i)] = s / L[static_cast<std::size_t>(i) * d + i];
    }
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int i = d - 1; i >= 0; --i) {
        double s = y[static_cast<std::size_t>(i)];
        for (int k = i + 1; k < d; ++k) s -= L[static_cast<std::size_t>(k) * d + i] * x[static_cast<std::size_t>(k)];
        x[static_cast<std::size_t>(i)] = s / L[static_cast<std::size_t>(i) * d + i];
    }
    return x;
}

// One LinUCB arm: ridge design matrix A (init identity) and response vector b.
struct LinUcbArm {
    explicit LinUcbArm(int d)
        : dim(d), A(static_cast<std::size_t>(d) * d, 0.0), b(static_cast<std::size_t>(d), 0.0) {
        for (int i = 0; i < d; ++i) A[static_cast<std::size_t>(i) * d + i] = 1.0;
    }

    int dim;
    std::vector<double> A;
    std::vector<double> b;

    void update(const std::vector<double>& x, double reward) {
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j)
                A[static_cast<std::size_t>(i) * dim + j] += x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(j)];
        for (int i = 0; i < dim; ++i) b[static_cast<std::size_t>(i)] += reward * x[static_cast<std::size_t>(i)];
    }

    std::vector<double> theta() const { return spd_solve(A, dim, b); }

    // theta^T x + alpha * sqrt(x^T A^-1 x)
    double score(const std::vector<double>& x, double alpha) const {
        const auto th = theta();
        const auto Ainv_x = spd_solve(A, dim, x);
        double mean = 0.0, width = 0.0;
        for (int i = 0; i < dim; ++i) {
            mean += th[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
            width += x[static_cast<std::size_t>(i)] * Ainv_x[static_cast<std::size_t>(i)];
        }
        return mean + alpha * std::sqrt(std::max(width, 0.0));
    }
};

inline int ucb_select(const std::vector<LinUcbArm>& arms,
                      const std::vector<double>& context, double alpha) {
    int best = 0;
    double best_score = -1e300;
    for (std::size_t a = 0; a < arms.size(); ++a) {
        const double s = arms[a].score(context, alpha);
        if (s > best_score + 1e-12) {
            best_score = s;
            best = static_cast<int>(a);
        }
    }
    return best;
}

} // namespace falconsim
