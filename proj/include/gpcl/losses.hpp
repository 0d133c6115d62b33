#pragma once

#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gpcl/augment.hpp"
#include "gpcl/core.hpp"

namespace gpcl {

// A scalar loss and its gradients. Only differentiable inputs get an entry;
// detached inputs are absent. Keys: "scores", "E1", "E2".
struct LossValue {
    double value = 0.0;
    std::map<std::string, Matrix> grads;

    [[nodiscard]] bool has_grad(const std::string& name) const { return grads.contains(name); }
    [[nodiscard]] const Matrix& grad(const std::string& name) const;
};

struct PseudoLabels {
    std::vector<int> labels;
    Vector confidence;

    [[nodiscard]] std::size_t size() const { return labels.size(); }
};

struct GuidedLossConfig {
    double tau = 0.1;
    double gamma = 0.75;
    // Pseudo-label guidance: drop negatives sharing the anchor's pseudo label.
    bool label_guidance = true;
    // Confidence guidance: gate each side on the key's confidence.
    bool confidence_guidance = true;
    // Divide by the number of pairs with an open gate instead of |M_p|.
    bool renormalize_gated = false;

    void validate() const;
};

// Detached negative keys drawn from the memory bank; tags are class ids.
struct BankNegatives {
    Matrix keys;
    std::vector<int> tags;

    [[nodiscard]] std::size_t size() const { return tags.size(); }
};

// Negative index sets inside the two views.
struct InCloudNegatives {
    std::vector<int> view1;
    std::vector<int> view2;
};

using Negatives = std::variant<InCloudNegatives, BankNegatives>;

struct GuidedDiagnostics {
    int pairs = 0;
    int open_gates = 0;        // out of 2 * pairs
    long negatives_seen = 0;   // candidate negatives over both sides
    long negatives_masked = 0; // removed by pseudo-label guidance

    [[nodiscard]] double gate_rate() const { return pairs ? open_gates / (2.0 * pairs) : 0.0; }
    [[nodiscard]] double mask_rate() const {
        return negatives_seen ? static_cast<double>(negatives_masked) / static_cast<double>(negatives_seen) : 0.0;
    }
};

// Mean over non-ignored points of -S_i[Y_i] + logsumexp(S_i).
LossValue cross_entropy(const Matrix& scores, std::span<const int> labels);

// argmax (lowest index on ties) and max softmax probability per row.
PseudoLabels pseudo_labels(const Matrix& scores);

// 1 for a matched pair, otherwise 1 iff the pseudo labels differ.
int guidance_mask(int label1, int label2, bool matched);

// Guided loss of one positive pair (i, j) with in-cloud negatives: the u1
// term pulls E1_i towards a detached E2_j against detached E2 negatives, gated
// on C2_j >= gamma; the u2 term is the mirror image.
LossValue guided_pair_loss(int i, int j, const Matrix& e1, const Matrix& e2, const PseudoLabels& pl1,
                           const PseudoLabels& pl2, std::span<const int> neg2, std::span<const int> neg1,
                           const GuidedLossConfig& cfg);

// Average of the pair loss over `positives`.
LossValue guided_contrastive(const MatchList& positives, const Matrix& e1, const Matrix& e2,
                             const PseudoLabels& pl1, const PseudoLabels& pl2, const Negatives& negatives,
                             const GuidedLossConfig& cfg, GuidedDiagnostics* diag = nullptr);

// InfoNCE over matched points; keys are the second elements of `positives`.
// Gradients flow into both embeddings.
LossValue point_infonce(const MatchList& positives, const Matrix& e1, const Matrix& e2, double tau);

LossValue mse_consistency(const MatchList& matches, const Matrix& e1, const Matrix& e2);

LossValue cosine_consistency(const MatchList& matches, const Matrix& e1, const Matrix& e2);

// Cross entropy against labels fixed before training.
LossValue self_training_loss(const Matrix& scores, std::span<const int> fixed_labels);

} // namespace gpcl
