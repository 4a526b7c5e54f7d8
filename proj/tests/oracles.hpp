#pragma once
// Reference implementations used only by tests. Each one takes a different route from the
// library code it checks.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace oracle {

/// Ridge weights through the thin SVD of X (d x M): W = Y V diag(s / (s^2 + alpha)) U^T.
/// With alpha = 0 the reciprocal is dropped for numerically zero s (pseudo-inverse).
inline Eigen::RowVectorXd ridge_svd(const Eigen::MatrixXd& X, const Eigen::RowVectorXd& Y, double alpha) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd s = svd.singularValues();
    const double tol = static_cast<double>(std::max(X.rows(), X.cols())) * std::numeric_limits<double>::epsilon() *
                       (s.size() ? s(0) : 0.0);
    Eigen::VectorXd g(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (alpha > 0.0)
            g(i) = s(i) / (s(i) * s(i) + alpha);
        else
            g(i) = s(i) > tol ? 1.0 / s(i) : 0.0;
    }
    return (Y * svd.matrixV()) * g.asDiagonal() * svd.matrixU().transpose();
}

struct Counts {
    std::size_t bright = 0, dark = 0, false_bright = 0, false_dark = 0;
};

inline Counts count(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth) {
    Counts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (truth[i]) {
            ++c.bright;
            if (!pred[i]) ++c.false_dark;
        } else {
            ++c.dark;
            if (pred[i]) ++c.false_bright;
        }
    }
    return c;
}

inline double fidelity(const Counts& c) {
    return 1.0 - 0.5 * (static_cast<double>(c.false_bright) / static_cast<double>(c.dark) +
                        static_cast<double>(c.false_dark) / static_cast<double>(c.bright));
}

/// 1 - P(D_k | B_l) - P(B_k | D_l) from explicit conditional counting.
inline std::optional<double> cross_fidelity(const std::vector<std::uint8_t>& k, const std::vector<std::uint8_t>& l) {
    double bl = 0, dl = 0, dk_bl = 0, bk_dl = 0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        if (l[i]) {
            ++bl;
            dk_bl += k[i] == 0;
        } else {
            ++dl;
            bk_dl += k[i] == 1;
        }
    }
    if (bl == 0 || dl == 0) return std::nullopt;
    return 1.0 - dk_bl / bl - bk_dl / dl;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

}  // namespace oracle
