#pragma once

// Central finite-difference checks shared by the unit and acceptance tests.
// Each check builds one random instance from `seed` and returns the largest
// relative error over every checked coordinate.

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "gpcl/losses.hpp"
#include "gpcl/model.hpp"
#include "oracles.hpp"

namespace gradcheck {

using gpcl::Matrix;

inline constexpr double kStep = 1e-5;
inline constexpr double kKinkMargin = 1e-3;

struct Report {
    double max_rel = 0.0;
    long checked = 0;
    bool skipped = false; // instance rejected (too close to a kink)

    void add(double analytic, double numeric) {
        max_rel = std::max(max_rel, oracle::rel_error(analytic, numeric));
        ++checked;
    }
};

// Compares grad(m) with the central difference of f over every entry of m.
inline void check_matrix(Report& r, Matrix& m, const Matrix& grad, const std::function<double()>& f) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) r.add(grad(i, j), oracle::central_difference(f, &m(i, j), kStep));
    }
}

inline gpcl::PseudoLabels gated_labels(std::size_t n, int classes, gpcl::Rng& rng, bool open, double gamma) {
    auto pl = oracle::random_pseudo_labels(n, classes, rng);
    for (Eigen::Index i = 0; i < pl.confidence.size(); ++i) {
        pl.confidence[i] = open ? gpcl::uniform(rng, gamma, 1.0) : gpcl::uniform(rng, 0.0, gamma * 0.99);
    }
    return pl;
}

// --- losses -----------------------------------------------------------------

inline Report cross_entropy(std::uint64_t seed) {
    gpcl::Rng rng(seed);
    const int n = 2 + static_cast<int>(gpcl::uniform_index(rng, 10));
    const int c = 2 + static_cast<int>(gpcl::uniform_index(rng, 5));
    Matrix s = oracle::random_matrix(n, c, rng, -3, 3);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = static_cast<int>(gpcl::uniform_index(rng, static_cast<std::size_t>(c + 1))) - 1;
    y[0] = 0;
    const auto lv = gpcl::cross_entropy(s, y);
    Report r;
    check_matrix(r, s, lv.grad("scores"), [&] { return gpcl::cross_entropy(s, y).value; });
    return r;
}

inline Report self_training(std::uint64_t seed) {
    gpcl::Rng rng(seed);
    const int n = 2 + static_cast<int>(gpcl::uniform_index(rng, 10));
    const int c = 2 + static_cast<int>(gpcl::uniform_index(rng, 5));
    Matrix s = oracle::random_matrix(n, c, rng, -3, 3);
    const auto teacher = gpcl::pseudo_labels(oracle::random_matrix(n, c, rng));
    const auto lv = gpcl::self_training_loss(s, teacher.labels);
    Report r;
    check_matrix(r, s, lv.grad("scores"), [&] { return gpcl::self_training_loss(s, teacher.labels).value; });
    return r;
}

// One gate side open at a time, so the loss depends on the gradient-carrying
// view only through its anchor rows and the stop-gradient surrogate equals
// the true derivative.
inline Report guided(std::uint64_t seed, bool bank) {
    gpcl::Rng rng(seed);
    const int n1 = 4 + static_cast<int>(gpcl::uniform_index(rng, 12));
    const int n2 = 4 + static_cast<int>(gpcl::uniform_index(rng, 12));
    const int classes = 2 + static_cast<int>(gpcl::uniform_index(rng, 4));
    const int dim = 2 + static_cast<int>(gpcl::uniform_index(rng, 4));
    gpcl::GuidedLossConfig cfg;
    cfg.tau = gpcl::uniform(rng, 0.1, 1.0);
    const auto pairs = oracle::random_matches(n1, n2, 1 + static_cast<int>(gpcl::uniform_index(rng, std::min(n1, n2))), rng);
    Matrix e1 = oracle::random_unit_rows(n1, dim, rng);
    Matrix e2 = oracle::random_unit_rows(n2, dim, rng);
    gpcl::Negatives negs;
    if (bank) {
        gpcl::BankNegatives b;
        const int k = 1 + static_cast<int>(gpcl::uniform_index(rng, 10));
        b.keys = oracle::random_unit_rows(k, dim, rng);
        for (int i = 0; i < k; ++i) b.tags.push_back(static_cast<int>(gpcl::uniform_index(rng, static_cast<std::size_t>(classes))));
        negs = b;
    } else {
        gpcl::InCloudNegatives in;
        in.view1 = gpcl::sample_without_replacement(static_cast<std::size_t>(n1), gpcl::uniform_index(rng, static_cast<std::size_t>(n1)) + 1, rng);
        in.view2 = gpcl::sample_without_replacement(static_cast<std::size_t>(n2), gpcl::uniform_index(rng, static_cast<std::size_t>(n2)) + 1, rng);
        negs = in;
    }
    Report r;
    for (int side = 0; side < 2; ++side) {
        // side 0: u1 terms only (C2 >= gamma, C1 < gamma); side 1: the mirror.
        const auto pl1 = gated_labels(static_cast<std::size_t>(n1), classes, rng, side == 1, cfg.gamma);
        const auto pl2 = gated_labels(static_cast<std::size_t>(n2), classes, rng, side == 0, cfg.gamma);
        auto f = [&] { return gpcl::guided_contrastive(pairs, e1, e2, pl1, pl2, negs, cfg).value; };
        const auto lv = gpcl::guided_contrastive(pairs, e1, e2, pl1, pl2, negs, cfg);
        if (side == 0) {
            check_matrix(r, e1, lv.grad("E1"), f);
        } else {
            check_matrix(r, e2, lv.grad("E2"), f);
        }
    }
    return r;
}

inline Report infonce(std::uint64_t seed) {
    gpcl::Rng rng(seed);
    const int n1 = 3 + static_cast<int>(gpcl::uniform_index(rng, 10));
    const int n2 = 3 + static_cast<int>(gpcl::uniform_index(rng, 10));
    const int dim = 2 + static_cast<int>(gpcl::uniform_index(rng, 4));
    const double tau = gpcl::uniform(rng, 0.1, 1.0);
    const auto pairs = oracle::random_matches(n1, n2, 1 + static_cast<int>(gpcl::uniform_index(rng, std::min(n1, n2))), rng);
    Matrix e1 = oracle::random_unit_rows(n1, dim, rng);
    Matrix e2 = oracle::random_unit_rows(n2, dim, rng);
    const auto lv = gpcl::point_infonce(pairs, e1, e2, tau);
    auto f = [&] { return gpcl::point_infonce(pairs, e1, e2, tau).value; };
    Report r;
    check_matrix(r, e1, lv.grad("E1"), f);
    check_matrix(r, e2, lv.grad("E2"), f);
    return r;
}

template <typename Loss>
Report consistency(std::uint64_t seed, Loss loss) {
    gpcl::Rng rng(seed);
    const int n1 = 3 + static_cast<int>(gpcl::uniform_index(rng, 10));
    const int n2 = 3 + static_cast<int>(gpcl::uniform_index(rng, 10));
    const int dim = 2 + static_cast<int>(gpcl::uniform_index(rng, 4));
    const auto pairs = oracle::random_matches(n1, n2, 1 + static_cast<int>(gpcl::uniform_index(rng, std::min(n1, n2))), rng);
    Matrix e1 = oracle::random_matrix(n1, dim, rng);
    Matrix e2 = oracle::random_matrix(n2, dim, rng);
    const auto lv = loss(pairs, e1, e2);
    auto f = [&] { return loss(pairs, e1, e2).value; };
    Report r;
    check_matrix(r, e1, lv.grad("E1"), f);
    check_matrix(r, e2, lv.grad("E2"), f);
    return r;
}

inline Report mse(std::uint64_t seed) { return consistency(seed, gpcl::mse_consistency); }
inline Report cosine(std::uint64_t seed) { return consistency(seed, gpcl::cosine_consistency); }

// --- model ------------------------------------------------------------------

inline gpcl::ModelConfig small_model(int in_dim, int classes) {
    gpcl::ModelConfig c;
    c.in_dim = in_dim;
    c.hidden = 6;
    c.feat_dim = 5;
    c.proj_hidden = 5;
    c.embed_dim = 4;
    c.class_count = classes;
    c.pool_size = 1.5;
    return c;
}

inline gpcl::ModelParams random_params(const gpcl::ModelConfig& cfg, gpcl::Rng& rng) {
    auto p = gpcl::ModelParams::zeros(cfg);
    p.for_each([&](const std::string&, auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = gpcl::uniform(rng, -0.8, 0.8);
    });
    return p;
}

inline double min_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().minCoeff() : 1.0; }

// Smallest distance from any coordinate to a voxel boundary.
inline double voxel_margin(const gpcl::PointCloud& cloud, double size) {
    double margin = size;
    for (Eigen::Index i = 0; i < cloud.coords.rows(); ++i) {
        for (int d = 0; d < 3; ++d) {
            const double t = cloud.coords(i, d) / size;
            margin = std::min(margin, std::abs(t - std::round(t)) * size);
        }
    }
    return margin;
}

// Scalar loss CE(S, Y) + sum(G_e * E) + 0.5 * PointInfoNCE over pairs inside
// the cloud, through the full model, checked against every parameter and
// every input coordinate and feature.
inline Report model(std::uint64_t seed) {
    gpcl::Rng rng(seed);
    const int classes = 2 + static_cast<int>(gpcl::uniform_index(rng, 3));
    const int n = 6 + static_cast<int>(gpcl::uniform_index(rng, 6));
    auto cloud = oracle::random_cloud(n, 2, classes, rng, 2.0);
    const auto cfg = small_model(5, classes);
    auto params = random_params(cfg, rng);
    const Matrix g_embed = oracle::random_matrix(n, cfg.embed_dim, rng);
    gpcl::MatchList pairs;
    const auto perm = gpcl::random_permutation(static_cast<std::size_t>(n), rng);
    for (int i = 0; i < n / 2; ++i) pairs.emplace_back(i, perm[static_cast<std::size_t>(i)]);

    auto loss = [&](const gpcl::Activations& a) {
        double v = gpcl::cross_entropy(a.scores, cloud.labels).value;
        v += (g_embed.array() * a.embed.array()).sum();
        v += 0.5 * gpcl::point_infonce(pairs, a.embed, a.embed, 0.5).value;
        return v;
    };

    Report r;
    const auto act = gpcl::forward(params, cloud);
    if (std::min({min_abs(act.pre1), min_abs(act.pre2), min_abs(act.pre_p1)}) < kKinkMargin ||
        voxel_margin(cloud, cfg.pool_size) < kKinkMargin) {
        r.skipped = true;
        return r;
    }
    gpcl::GradOutputs go;
    go.d_scores = gpcl::cross_entropy(act.scores, cloud.labels).grad("scores");
    const auto nce = gpcl::point_infonce(pairs, act.embed, act.embed, 0.5);
    go.d_embed = g_embed + 0.5 * (nce.grad("E1") + nce.grad("E2"));
    const auto back = gpcl::backward(params, act, go);

    auto f = [&] { return loss(gpcl::forward(params, cloud)); };
    std::vector<double*> slots;
    std::vector<double> analytic;
    params.for_each([&](const std::string&, auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) slots.push_back(t.data() + i);
    });
    back.params.for_each([&](const std::string&, const auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) analytic.push_back(t.data()[i]);
    });
    for (std::size_t k = 0; k < slots.size(); ++k) r.add(analytic[k], oracle::central_difference(f, slots[k], kStep));

    for (Eigen::Index i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) r.add(back.d_input(i, d), oracle::central_difference(f, &cloud.coords(i, d), kStep));
        for (int d = 0; d < cloud.feat_dim(); ++d) r.add(back.d_input(i, 3 + d), oracle::central_difference(f, &cloud.feats(i, d), kStep));
    }
    return r;
}

} // namespace gradcheck
