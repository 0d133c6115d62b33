#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "gpcl/core.hpp"

namespace gpcl {

// Pointwise network standing in for a sparse U-Net:
//
//   h1 = relu(W1 [xyz, feats] + b1)                      N x H
//   p  = voxel mean of h1 over cells of size pool_size    N x H
//   F  = relu(W2 [h1, p] + b2)                            N x C_F   backbone
//   S  = Wc F + bc                                        N x |C|   classifier
//   E  = normalize(Wp2 relu(Wp1 F + bp1) + bp2)           N x C_E   projector
struct ModelConfig {
    int in_dim = 6;
    int hidden = 64;
    int feat_dim = 32;
    int proj_hidden = 32;
    int embed_dim = 16;
    int class_count = 6;
    double pool_size = 0.5;
    bool normalize_embeddings = true;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
    ModelConfig config;
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;
    Matrix wc;
    Vector bc;
    Matrix wp1;
    Vector bp1;
    Matrix wp2;
    Vector bp2;
    // Bumped by every in-place update; activations remember the version they saw.
    std::uint64_t version = 0;

    static ModelParams zeros(const ModelConfig& cfg);
    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

    // f(name, tensor) for every trainable tensor in a fixed order.
    template <typename F>
    void for_each(F&& f) {
        visit(*this, f);
    }
    template <typename F>
    void for_each(F&& f) const {
        visit(*this, f);
    }

    [[nodiscard]] Eigen::Index parameter_count() const;
    [[nodiscard]] bool all_finite() const;
    [[nodiscard]] bool bitwise_equal(const ModelParams& other) const;

    // this += scale * other (shapes must match). Does not bump the version.
    void add_scaled(const ModelParams& other, double scale);

private:
    template <typename Self, typename F>
    static void visit(Self& p, F& f) {
        f("w1", p.w1);
        f("b1", p.b1);
        f("w2", p.w2);
        f("b2", p.b2);
        f("wc", p.wc);
        f("bc", p.bc);
        f("wp1", p.wp1);
        f("bp1", p.bp1);
        f("wp2", p.wp2);
        f("bp2", p.bp2);
    }
};

using ParamGrads = ModelParams;

// Everything the backward pass needs from one forward pass over one cloud.
struct Activations {
    std::uint64_t version = 0;
    Matrix input;
    Matrix pre1;
    Matrix h1;
    std::vector<int> point_cell;
    std::vector<double> cell_weight; // 1 / cell size
    Matrix concat;
    Matrix pre2;
    Matrix feat;

    bool has_scores = false;
    Matrix scores;

    bool has_embed = false;
    Matrix pre_p1;
    Matrix hp1;
    Matrix raw_embed;
    Vector embed_norm;
    Matrix embed;
    // Rows whose pre-normalization norm fell under the epsilon guard.
    int degenerate_rows = 0;
};

struct GradOutputs {
    Matrix d_feat;   // optional, N x C_F
    Matrix d_scores; // optional, N x |C|
    Matrix d_embed;  // optional, N x C_E
};

struct BackwardResult {
    ParamGrads params;
    Matrix d_input; // N x (3 + C_0), coordinates first
};

Matrix model_input(const PointCloud& cloud);

Matrix backbone_forward(const ModelParams& params, const PointCloud& cloud, Activations& act);
Matrix classifier_forward(const ModelParams& params, const Matrix& feat);
Matrix projector_forward(const ModelParams& params, const Matrix& feat, Activations* act = nullptr);

struct Heads {
    bool scores = true;
    bool embed = true;
};

Activations forward(const ModelParams& params, const PointCloud& cloud, Heads heads = {});

BackwardResult backward(const ModelParams& params, const Activations& act, const GradOutputs& grads);

inline constexpr double kEmbedNormEpsilon = 1e-12;

// Versioned binary checkpoint: exact double round trip.
void write_params(std::ostream& out, const ModelParams& params);
ModelParams read_params(std::istream& in);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

} // namespace gpcl
