#pragma once

// Contrastive loss: L0 pulls positive pairs together, L1 pushes negatives past a margin.

#include <span>
#include <vector>

#include <Eigen/Core>

#include "jalign/error.hpp"

namespace jalign {

struct LossConfig {
    double mu = 1.0;
};

struct PairLoss {
    double value = 0.0;
    Eigen::VectorXd g1;
    Eigen::VectorXd g2;
};

inline constexpr double kLossDistanceEps = 1e-12;

namespace detail {
inline void check_pair(const Eigen::Ref<const Eigen::VectorXd>& f1, const Eigen::Ref<const Eigen::VectorXd>& f2) {
    if (f1.size() != f2.size()) throw Error(ErrorKind::InvalidInput, "descriptor dimensions differ");
}
}  // namespace detail

/// ||f1 - f2||, with zero subgradient at coincidence.
inline PairLoss positive_loss(const Eigen::Ref<const Eigen::VectorXd>& f1,
                              const Eigen::Ref<const Eigen::VectorXd>& f2) {
    detail::check_pair(f1, f2);
    PairLoss r;
    const Eigen::VectorXd diff = f1 - f2;
    const double d = diff.norm();
    if (d < kLossDistanceEps) {
        r.g1 = Eigen::VectorXd::Zero(f1.size());
        r.g2 = r.g1;
        return r;
    }
    r.value = d;
    r.g1 = diff / d;
    r.g2 = -r.g1;
    return r;
}

/// max(0, mu - ||f1 - f2||); zero subgradient at d = 0 and at the hinge.
inline PairLoss negative_loss(const Eigen::Ref<const Eigen::VectorXd>& f1,
                              const Eigen::Ref<const Eigen::VectorXd>& f2, const LossConfig& cfg) {
    detail::check_pair(f1, f2);
    PairLoss r;
    r.g1 = Eigen::VectorXd::Zero(f1.size());
    r.g2 = r.g1;
    const Eigen::VectorXd diff = f1 - f2;
    const double d = diff.norm();
    if (d >= cfg.mu) return r;
    r.value = cfg.mu - d;
    if (d < kLossDistanceEps) return r;
    r.g1 = -diff / d;
    r.g2 = -r.g1;
    return r;
}

struct DescriptorPair {
    Eigen::VectorXd first;
    Eigen::VectorXd second;
};

struct BatchObjective {
    double total = 0.0;
    std::vector<PairLoss> positive;
    std::vector<PairLoss> negative;
};

/// Sum of L0 over positives plus L1 over negatives (no averaging).
inline BatchObjective batch_objective(std::span<const DescriptorPair> positives,
                                      std::span<const DescriptorPair> negatives, const LossConfig& cfg) {
    BatchObjective b;
    b.positive.reserve(positives.size());
    b.negative.reserve(negatives.size());
    for (const auto& p : positives) {
        b.positive.push_back(positive_loss(p.first, p.second));
        b.total += b.positive.back().value;
    }
    for (const auto& n : negatives) {
        b.negative.push_back(negative_loss(n.first, n.second, cfg));
        b.total += b.negative.back().value;
    }
    return b;
}

}  // namespace jalign
