#include "gpcl/losses.hpp"

#include <cmath>
#include <limits>

#include "gpcl/error.hpp"

namespace gpcl {

namespace {
constexpr double kTiny = 1e-12;
} // namespace

const Matrix& LossValue::grad(const std::string& name) const {
    auto it = grads.find(name);
    if (it == grads.end()) throw InvalidArgument("loss has no gradient for '" + name + "'");
    return it->second;
}

void GuidedLossConfig::validate() const {
    if (!(tau > 0.0)) throw InvalidArgument("temperature must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("confidence threshold must lie in [0, 1]");
}

LossValue cross_entropy(const Matrix& scores, std::span<const int> labels) {
    if (static_cast<Eigen::Index>(labels.size()) != scores.rows()) throw InvalidArgument("label count does not match score rows");
    const Eigen::Index classes = scores.cols();
    Matrix grad = Matrix::Zero(scores.rows(), classes);
    double total = 0.0;
    long counted = 0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y == kIgnoreLabel) continue;
        if (y < kIgnoreLabel || y >= classes) throw InvalidArgument("label " + std::to_string(y) + " out of range");
        const double mx = scores.row(i).maxCoeff();
        const Eigen::RowVectorXd shifted = (scores.row(i).array() - mx).exp().matrix();
        const double sum = shifted.sum();
        total += mx + std::log(sum) - scores(i, y);
        grad.row(i) = shifted / sum;
        grad(i, y) -= 1.0;
        ++counted;
    }
    if (counted == 0) throw InvalidArgument("cross entropy needs at least one non-ignored label");
    LossValue out;
    out.value = total / static_cast<double>(counted);
    out.grads["scores"] = grad / static_cast<double>(counted);
    return out;
}

PseudoLabels pseudo_labels(const Matrix& scores) {
    PseudoLabels pl;
    pl.labels.resize(static_cast<std::size_t>(scores.rows()));
    pl.confidence.resize(scores.rows());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < scores.cols(); ++c) {
            if (scores(i, c) > scores(i, best)) best = c;
        }
        const double mx = scores(i, best);
        const double sum = (scores.row(i).array() - mx).exp().sum();
        pl.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
        pl.confidence[i] = 1.0 / sum;
    }
    return pl;
}

int guidance_mask(int label1, int label2, bool matched) { return matched || label1 != label2 ? 1 : 0; }

namespace {

void check_embeddings(const Matrix& e1, const Matrix& e2, const PseudoLabels& pl1, const PseudoLabels& pl2) {
    if (e1.cols() != e2.cols()) throw InvalidArgument("embedding widths differ between views");
    if (static_cast<Eigen::Index>(pl1.size()) != e1.rows() || static_cast<Eigen::Index>(pl2.size()) != e2.rows()) {
        throw InvalidArgument("pseudo labels do not match embedding rows");
    }
}

void check_index(int idx, Eigen::Index n, const char* what) {
    if (idx < 0 || idx >= n) throw InvalidArgument(std::string(what) + " index out of range");
}

// -log softmax of the positive among {positive} + included negatives, and the
// gradient with respect to the anchor.
struct SideTerm {
    double loss = 0.0;
    Eigen::RowVectorXd d_anchor;
};

SideTerm pair_side(const Eigen::RowVectorXd& anchor, const Eigen::RowVectorXd& positive,
                   const std::vector<Eigen::RowVectorXd>& negatives, double tau) {
    const double pos = anchor.dot(positive) / tau;
    std::vector<double> logits;
    logits.reserve(negatives.size());
    double mx = pos;
    for (const auto& k : negatives) {
        logits.push_back(anchor.dot(k) / tau);
        mx = std::max(mx, logits.back());
    }
    double sum = std::exp(pos - mx);
    for (double l : logits) sum += std::exp(l - mx);
    const double lse = mx + std::log(sum);
    SideTerm t;
    t.loss = lse - pos;
    t.d_anchor = (std::exp(pos - lse) - 1.0) * positive;
    for (std::size_t k = 0; k < negatives.size(); ++k) t.d_anchor += std::exp(logits[k] - lse) * negatives[k];
    t.d_anchor /= tau;
    return t;
}

} // namespace

LossValue guided_pair_loss(int i, int j, const Matrix& e1, const Matrix& e2, const PseudoLabels& pl1,
                           const PseudoLabels& pl2, std::span<const int> neg2, std::span<const int> neg1,
                           const GuidedLossConfig& cfg) {
    cfg.validate();
    check_embeddings(e1, e2, pl1, pl2);
    check_index(i, e1.rows(), "anchor");
    check_index(j, e2.rows(), "positive");

    LossValue out;
    out.grads["E1"] = Matrix::Zero(e1.rows(), e1.cols());
    out.grads["E2"] = Matrix::Zero(e2.rows(), e2.cols());

    const bool open1 = !cfg.confidence_guidance || pl2.confidence[j] >= cfg.gamma;
    const bool open2 = !cfg.confidence_guidance || pl1.confidence[i] >= cfg.gamma;

    if (open1) {
        std::vector<Eigen::RowVectorXd> keys;
        for (int k : neg2) {
            check_index(k, e2.rows(), "negative");
            if (k == j) continue;
            const int g = cfg.label_guidance ? guidance_mask(pl1.labels[static_cast<std::size_t>(i)],
                                                             pl2.labels[static_cast<std::size_t>(k)], false)
                                             : 1;
            if (g) keys.push_back(e2.row(k));
        }
        const SideTerm t = pair_side(e1.row(i), e2.row(j), keys, cfg.tau);
        out.value += t.loss;
        out.grads["E1"].row(i) += t.d_anchor;
    }
    if (open2) {
        std::vector<Eigen::RowVectorXd> keys;
        for (int k : neg1) {
            check_index(k, e1.rows(), "negative");
            if (k == i) continue;
            const int g = cfg.label_guidance ? guidance_mask(pl1.labels[static_cast<std::size_t>(k)],
                                                             pl2.labels[static_cast<std::size_t>(j)], false)
                                             : 1;
            if (g) keys.push_back(e1.row(k));
        }
        const SideTerm t = pair_side(e2.row(j), e1.row(i), keys, cfg.tau);
        out.value += t.loss;
        out.grads["E2"].row(j) += t.d_anchor;
    }
    return out;
}

namespace {

// One side of the batched loss. Row m of `anchors` is pulled towards row m of
// `positives` against the columns of `keys` where `include(m, k)` is set.
// Rows with a closed gate contribute nothing.
struct BatchSide {
    Vector loss;    // per row, zero where gated
    Matrix d_anchor; // per row, unscaled
};

BatchSide batch_side(const Matrix& anchors, const Matrix& positives, const Matrix& keys,
                     const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& include,
                     const std::vector<char>& open, double tau) {
    const Eigen::Index p = anchors.rows();
    BatchSide out;
    out.loss = Vector::Zero(p);
    out.d_anchor = Matrix::Zero(p, anchors.cols());
    const Vector pos = (anchors.array() * positives.array()).rowwise().sum().matrix() / tau;
    Matrix logits;
    if (keys.rows() > 0) logits.noalias() = anchors * keys.transpose() / tau;
    Matrix weights = Matrix::Zero(p, keys.rows());
    Vector w_pos = Vector::Zero(p);
    for (Eigen::Index m = 0; m < p; ++m) {
        if (!open[static_cast<std::size_t>(m)]) continue;
        double mx = pos[m];
        for (Eigen::Index k = 0; k < keys.rows(); ++k) {
            if (include(m, k)) mx = std::max(mx, logits(m, k));
        }
        double sum = std::exp(pos[m] - mx);
        for (Eigen::Index k = 0; k < keys.rows(); ++k) {
            if (include(m, k)) {
                weights(m, k) = std::exp(logits(m, k) - mx);
                sum += weights(m, k);
            }
        }
        const double lse = mx + std::log(sum);
        out.loss[m] = lse - pos[m];
        w_pos[m] = std::exp(pos[m] - lse) - 1.0;
        weights.row(m) /= sum;
    }
    out.d_anchor = positives.array().colwise() * w_pos.array();
    if (keys.rows() > 0) out.d_anchor.noalias() += weights * keys;
    out.d_anchor /= tau;
    return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) { return m(rows, Eigen::all); }

} // namespace

LossValue guided_contrastive(const MatchList& positives, const Matrix& e1, const Matrix& e2,
                             const PseudoLabels& pl1, const PseudoLabels& pl2, const Negatives& negatives,
                             const GuidedLossConfig& cfg, GuidedDiagnostics* diag) {
    cfg.validate();
    check_embeddings(e1, e2, pl1, pl2);
    if (positives.empty()) throw InvalidArgument("guided contrastive loss needs at least one positive pair");

    const auto p = static_cast<Eigen::Index>(positives.size());
    std::vector<int> anchor1(positives.size()), anchor2(positives.size());
    std::vector<char> open1(positives.size()), open2(positives.size());
    for (std::size_t m = 0; m < positives.size(); ++m) {
        const auto [i, j] = positives[m];
        check_index(i, e1.rows(), "anchor");
        check_index(j, e2.rows(), "positive");
        anchor1[m] = i;
        anchor2[m] = j;
        open1[m] = !cfg.confidence_guidance || pl2.confidence[j] >= cfg.gamma;
        open2[m] = !cfg.confidence_guidance || pl1.confidence[i] >= cfg.gamma;
    }
    const Matrix a1 = gather_rows(e1, anchor1);
    const Matrix a2 = gather_rows(e2, anchor2);

    using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
    Matrix keys1, keys2; // negatives for the u1 side come from view 2 and vice versa
    BoolArray include1, include2;
    long seen = 0, masked = 0;

    if (const auto* bank = std::get_if<BankNegatives>(&negatives)) {
        const auto k = static_cast<Eigen::Index>(bank->size());
        if (k > 0 && bank->keys.cols() != e1.cols()) throw InvalidArgument("bank key width differs from embeddings");
        if (bank->keys.rows() != k) throw InvalidArgument("bank keys and tags disagree in length");
        keys1 = bank->keys;
        keys2 = bank->keys;
        include1.resize(p, k);
        include2.resize(p, k);
        for (Eigen::Index m = 0; m < p; ++m) {
            const int y1 = pl1.labels[static_cast<std::size_t>(anchor1[static_cast<std::size_t>(m)])];
            const int y2 = pl2.labels[static_cast<std::size_t>(anchor2[static_cast<std::size_t>(m)])];
            for (Eigen::Index c = 0; c < k; ++c) {
                const int tag = bank->tags[static_cast<std::size_t>(c)];
                include1(m, c) = !cfg.label_guidance || guidance_mask(y1, tag, false);
                include2(m, c) = !cfg.label_guidance || guidance_mask(y2, tag, false);
            }
        }
        seen = 2 * p * k;
        masked = seen - include1.count() - include2.count();
    } else {
        const auto& in = std::get<InCloudNegatives>(negatives);
        for (int k : in.view1) check_index(k, e1.rows(), "negative");
        for (int k : in.view2) check_index(k, e2.rows(), "negative");
        keys1 = gather_rows(e2, in.view2);
        keys2 = gather_rows(e1, in.view1);
        include1.resize(p, static_cast<Eigen::Index>(in.view2.size()));
        include2.resize(p, static_cast<Eigen::Index>(in.view1.size()));
        for (Eigen::Index m = 0; m < p; ++m) {
            const int i = anchor1[static_cast<std::size_t>(m)], j = anchor2[static_cast<std::size_t>(m)];
            const int y1 = pl1.labels[static_cast<std::size_t>(i)];
            const int y2 = pl2.labels[static_cast<std::size_t>(j)];
            for (Eigen::Index c = 0; c < include1.cols(); ++c) {
                const int k = in.view2[static_cast<std::size_t>(c)];
                const bool candidate = k != j;
                const bool keep = candidate && (!cfg.label_guidance || guidance_mask(y1, pl2.labels[static_cast<std::size_t>(k)], false));
                include1(m, c) = keep;
                seen += candidate;
                masked += candidate && !keep;
            }
            for (Eigen::Index c = 0; c < include2.cols(); ++c) {
                const int k = in.view1[static_cast<std::size_t>(c)];
                const bool candidate = k != i;
                const bool keep = candidate && (!cfg.label_guidance || guidance_mask(pl1.labels[static_cast<std::size_t>(k)], y2, false));
                include2(m, c) = keep;
                seen += candidate;
                masked += candidate && !keep;
            }
        }
    }

    const BatchSide side1 = batch_side(a1, gather_rows(e2, anchor2), keys1, include1, open1, cfg.tau);
    const BatchSide side2 = batch_side(a2, gather_rows(e1, anchor1), keys2, include2, open2, cfg.tau);

    int open_pairs = 0, open_gates = 0;
    for (std::size_t m = 0; m < positives.size(); ++m) {
        open_pairs += (open1[m] || open2[m]) ? 1 : 0;
        open_gates += open1[m] + open2[m];
    }
    if (diag) {
        diag->pairs = static_cast<int>(p);
        diag->open_gates = open_gates;
        diag->negatives_seen = seen;
        diag->negatives_masked = masked;
    }

    LossValue out;
    Matrix g1 = Matrix::Zero(e1.rows(), e1.cols());
    Matrix g2 = Matrix::Zero(e2.rows(), e2.cols());
    const double denom = cfg.renormalize_gated ? static_cast<double>(open_pairs) : static_cast<double>(p);
    if (denom > 0.0) {
        // Fixed summation order keeps the value reproducible.
        double total = 0.0;
        for (Eigen::Index m = 0; m < p; ++m) total += side1.loss[m] + side2.loss[m];
        out.value = total / denom;
        for (Eigen::Index m = 0; m < p; ++m) {
            if (open1[static_cast<std::size_t>(m)]) g1.row(anchor1[static_cast<std::size_t>(m)]) += side1.d_anchor.row(m) / denom;
            if (open2[static_cast<std::size_t>(m)]) g2.row(anchor2[static_cast<std::size_t>(m)]) += side2.d_anchor.row(m) / denom;
        }
    }
    out.grads["E1"] = std::move(g1);
    out.grads["E2"] = std::move(g2);
    return out;
}

LossValue point_infonce(const MatchList& positives, const Matrix& e1, const Matrix& e2, double tau) {
    if (positives.empty()) throw InvalidArgument("PointInfoNCE needs at least one positive pair");
    if (!(tau > 0.0)) throw InvalidArgument("temperature must be positive");
    if (e1.cols() != e2.cols()) throw InvalidArgument("embedding widths differ between views");
    std::vector<int> rows1, rows2;
    for (const auto& [i, j] : positives) {
        check_index(i, e1.rows(), "anchor");
        check_index(j, e2.rows(), "key");
        rows1.push_back(i);
        rows2.push_back(j);
    }
    const Matrix a = gather_rows(e1, rows1);
    const Matrix k = gather_rows(e2, rows2);
    const auto p = static_cast<Eigen::Index>(positives.size());
    Matrix logits = a * k.transpose() / tau;
    double total = 0.0;
    for (Eigen::Index m = 0; m < p; ++m) {
        const double mx = logits.row(m).maxCoeff();
        logits.row(m) = (logits.row(m).array() - mx).exp().matrix();
        const double sum = logits.row(m).sum();
        total += mx + std::log(sum) - (a.row(m).dot(k.row(m)) / tau);
        logits.row(m) /= sum; // softmax
    }
    Matrix d_logits = logits;
    d_logits.diagonal().array() -= 1.0;
    d_logits /= static_cast<double>(p);
    const Matrix da = d_logits * k / tau;
    const Matrix dk = d_logits.transpose() * a / tau;

    LossValue out;
    out.value = total / static_cast<double>(p);
    Matrix g1 = Matrix::Zero(e1.rows(), e1.cols());
    Matrix g2 = Matrix::Zero(e2.rows(), e2.cols());
    for (Eigen::Index m = 0; m < p; ++m) {
        g1.row(rows1[static_cast<std::size_t>(m)]) += da.row(m);
        g2.row(rows2[static_cast<std::size_t>(m)]) += dk.row(m);
    }
    out.grads["E1"] = std::move(g1);
    out.grads["E2"] = std::move(g2);
    return out;
}

LossValue mse_consistency(const MatchList& matches, const Matrix& e1, const Matrix& e2) {
    if (matches.empty()) throw InvalidArgument("MSE consistency needs at least one matched pair");
    if (e1.cols() != e2.cols()) throw InvalidArgument("embedding widths differ between views");
    const double scale = 1.0 / static_cast<double>(matches.size());
    LossValue out;
    Matrix g1 = Matrix::Zero(e1.rows(), e1.cols());
    Matrix g2 = Matrix::Zero(e2.rows(), e2.cols());
    double total = 0.0;
    for (const auto& [i, j] : matches) {
        check_index(i, e1.rows(), "first");
        check_index(j, e2.rows(), "second");
        const Eigen::RowVectorXd diff = e1.row(i) - e2.row(j);
        total += diff.squaredNorm();
        g1.row(i) += 2.0 * scale * diff;
        g2.row(j) -= 2.0 * scale * diff;
    }
    out.value = total * scale;
    out.grads["E1"] = std::move(g1);
    out.grads["E2"] = std::move(g2);
    return out;
}

LossValue cosine_consistency(const MatchList& matches, const Matrix& e1, const Matrix& e2) {
    if (matches.empty()) throw InvalidArgument("cosine consistency needs at least one matched pair");
    if (e1.cols() != e2.cols()) throw InvalidArgument("embedding widths differ between views");
    const double scale = 1.0 / static_cast<double>(matches.size());
    LossValue out;
    Matrix g1 = Matrix::Zero(e1.rows(), e1.cols());
    Matrix g2 = Matrix::Zero(e2.rows(), e2.cols());
    double total = 0.0;
    for (const auto& [i, j] : matches) {
        check_index(i, e1.rows(), "first");
        check_index(j, e2.rows(), "second");
        const Eigen::RowVectorXd a = e1.row(i), b = e2.row(j);
        const double na = std::max(a.norm(), kTiny), nb = std::max(b.norm(), kTiny);
        const double cos = a.dot(b) / (na * nb);
        total += 1.0 - cos;
        g1.row(i) -= scale * (b / (na * nb) - cos * a / (na * na));
        g2.row(j) -= scale * (a / (na * nb) - cos * b / (nb * nb));
    }
    out.value = total * scale;
    out.grads["E1"] = std::move(g1);
    out.grads["E2"] = std::move(g2);
    return out;
}

LossValue self_training_loss(const Matrix& scores, std::span<const int> fixed_labels) {
    return cross_entropy(scores, fixed_labels);
}

} // namespace gpcl
