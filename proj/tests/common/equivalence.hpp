#pragma once

// Random instances comparing the library losses with the loop oracles. Each
// function returns the largest absolute difference over the value and every
// gradient entry.

#include <algorithm>
#include <cmath>

#include "gpcl/losses.hpp"
#include "oracles.hpp"

namespace equivalence {

using gpcl::Matrix;

inline double max_abs(const Matrix& a, const Matrix& b) {
    return a.size() ? (a - b).cwiseAbs().maxCoeff() : 0.0;
}

struct Instance {
    int n1 = 0, n2 = 0, classes = 0;
    Matrix e1, e2;
    gpcl::PseudoLabels pl1, pl2;
    gpcl::MatchList pairs;
    gpcl::GuidedLossConfig cfg;
};

inline Instance random_instance(gpcl::Rng& rng) {
    Instance in;
    in.n1 = 2 + static_cast<int>(gpcl::uniform_index(rng, 63));
    in.n2 = 2 + static_cast<int>(gpcl::uniform_index(rng, 63));
    in.classes = 2 + static_cast<int>(gpcl::uniform_index(rng, 4));
    const int dim = 2 + static_cast<int>(gpcl::uniform_index(rng, 15));
    in.e1 = oracle::random_unit_rows(in.n1, dim, rng);
    in.e2 = oracle::random_unit_rows(in.n2, dim, rng);
    in.pl1 = oracle::random_pseudo_labels(static_cast<std::size_t>(in.n1), in.classes, rng);
    in.pl2 = oracle::random_pseudo_labels(static_cast<std::size_t>(in.n2), in.classes, rng);
    const int p = 1 + static_cast<int>(gpcl::uniform_index(rng, static_cast<std::size_t>(std::min(in.n1, in.n2))));
    in.pairs = oracle::random_matches(in.n1, in.n2, p, rng);
    in.cfg.tau = gpcl::uniform(rng, 0.05, 1.0);
    in.cfg.gamma = gpcl::uniform(rng, 0.3, 0.9);
    in.cfg.label_guidance = gpcl::uniform(rng) < 0.8;
    in.cfg.confidence_guidance = gpcl::uniform(rng) < 0.8;
    in.cfg.renormalize_gated = gpcl::uniform(rng) < 0.3;
    return in;
}

inline double compare(const gpcl::LossValue& lv, const oracle::Result& ref) {
    return std::max({std::abs(lv.value - ref.value), max_abs(lv.grad("E1"), ref.g1), max_abs(lv.grad("E2"), ref.g2)});
}

inline double guided_in_cloud(std::uint64_t seed) {
    gpcl::Rng rng(seed);
    const auto in = random_instance(rng);
    gpcl::InCloudNegatives negs;
    negs.view1 = gpcl::sample_without_replacement(static_cast<std::size_t>(in.n1), gpcl::uniform_index(rng, static_cast<std::size_t>(in.n1) + 1), rng);
    negs.view2 = gpcl::sample_without_replacement(static_cast<std::size_t>(in.n2), gpcl::uniform_index(rng, static_cast<std::size_t>(in.n2) + 1), rng);
    const auto lv = gpcl::guided_contrastive(in.pairs, in.e1, in.e2, in.pl1, in.pl2, negs, in.cfg);
    const auto ref = oracle::guided(in.pairs, in.e1, in.e2, in.pl1, in.pl2, negs.view1, negs.view2, in.cfg);
    return compare(lv, ref);
}

inline double guided_bank(std::uint64_t seed) {
    gpcl::Rng rng(seed);
    const auto in = random_instance(rng);
    gpcl::BankNegatives bank;
    const int k = static_cast<int>(gpcl::uniform_index(rng, 64));
    bank.keys = oracle::random_unit_rows(k, in.e1.cols(), rng);
    for (int i = 0; i < k; ++i) bank.tags.push_back(static_cast<int>(gpcl::uniform_index(rng, static_cast<std::size_t>(in.classes))));
    const auto lv = gpcl::guided_contrastive(in.pairs, in.e1, in.e2, in.pl1, in.pl2, bank, in.cfg);
    const auto ref = oracle::guided_bank(in.pairs, in.e1, in.e2, in.pl1, in.pl2, bank.keys, bank.tags, in.cfg);
    return compare(lv, ref);
}

inline double infonce(std::uint64_t seed) {
    gpcl::Rng rng(seed);
    const auto in = random_instance(rng);
    return compare(gpcl::point_infonce(in.pairs, in.e1, in.e2, in.cfg.tau), oracle::infonce(in.pairs, in.e1, in.e2, in.cfg.tau));
}

inline double mse(std::uint64_t seed) {
    gpcl::Rng rng(seed);
    const auto in = random_instance(rng);
    return compare(gpcl::mse_consistency(in.pairs, in.e1, in.e2), oracle::mse(in.pairs, in.e1, in.e2));
}

// gamma = 0, no label guidance, view-2 negatives = the positive keys, no
// view-1 negatives: the guided loss reduces to PointInfoNCE with detached keys.
inline double reduction(std::uint64_t seed) {
    gpcl::Rng rng(seed);
    auto in = random_instance(rng);
    in.cfg.gamma = 0.0;
    in.cfg.label_guidance = false;
    in.cfg.confidence_guidance = true;
    in.cfg.renormalize_gated = false;
    gpcl::InCloudNegatives negs;
    for (const auto& [i, j] : in.pairs) negs.view2.push_back(j);
    const auto guided = gpcl::guided_contrastive(in.pairs, in.e1, in.e2, in.pl1, in.pl2, negs, in.cfg);
    const auto nce = gpcl::point_infonce(in.pairs, in.e1, in.e2, in.cfg.tau);
    return std::max(std::abs(guided.value - nce.value), max_abs(guided.grad("E1"), nce.grad("E1")));
}

} // namespace equivalence
