#include "gpcl/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "binary_io.hpp"
#include "gpcl/error.hpp"
#include "gpcl/random.hpp"

namespace gpcl {

void ModelConfig::validate() const {
    if (in_dim < 3) throw InvalidArgument("model input needs at least the three coordinates");
    if (hidden < 1 || feat_dim < 1 || proj_hidden < 1) throw InvalidArgument("layer widths must be positive");
    if (embed_dim < 2) throw InvalidArgument("embedding width must be at least 2");
    if (class_count < 2) throw InvalidArgument("class_count must be at least 2");
    if (!(pool_size > 0.0)) throw InvalidArgument("pool_size must be positive");
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    p.w1 = Matrix::Zero(cfg.hidden, cfg.in_dim);
    p.b1 = Vector::Zero(cfg.hidden);
    p.w2 = Matrix::Zero(cfg.feat_dim, 2 * cfg.hidden);
    p.b2 = Vector::Zero(cfg.feat_dim);
    p.wc = Matrix::Zero(cfg.class_count, cfg.feat_dim);
    p.bc = Vector::Zero(cfg.class_count);
    p.wp1 = Matrix::Zero(cfg.proj_hidden, cfg.feat_dim);
    p.bp1 = Vector::Zero(cfg.proj_hidden);
    p.wp2 = Matrix::Zero(cfg.embed_dim, cfg.proj_hidden);
    p.bp2 = Vector::Zero(cfg.embed_dim);
    return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p = zeros(cfg);
    Rng rng(derive_seed(seed, 0x1417));
    // Uniform with variance 2 / fan_in, weights only; biases start at zero.
    auto fill = [&rng](Matrix& w) {
        const double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
            for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = uniform(rng, -bound, bound);
        }
    };
    fill(p.w1);
    fill(p.w2);
    fill(p.wc);
    fill(p.wp1);
    fill(p.wp2);
    return p;
}

Eigen::Index ModelParams::parameter_count() const {
    Eigen::Index n = 0;
    for_each([&n](const char*, const auto& t) { n += t.size(); });
    return n;
}

bool ModelParams::all_finite() const {
    bool ok = true;
    for_each([&ok](const char*, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
}

bool ModelParams::bitwise_equal(const ModelParams& other) const {
    if (!(config == other.config)) return false;
    std::vector<const double*> mine, theirs;
    std::vector<Eigen::Index> sizes;
    for_each([&](const char*, const auto& t) {
        mine.push_back(t.data());
        sizes.push_back(t.size());
    });
    other.for_each([&](const char*, const auto& t) { theirs.push_back(t.data()); });
    for (std::size_t k = 0; k < mine.size(); ++k) {
        if (std::memcmp(mine[k], theirs[k], static_cast<std::size_t>(sizes[k]) * sizeof(double)) != 0) return false;
    }
    return true;
}

void ModelParams::add_scaled(const ModelParams& other, double scale) {
    std::vector<const double*> src;
    other.for_each([&src](const char*, const auto& t) { src.push_back(t.data()); });
    std::size_t k = 0;
    for_each([&](const char*, auto& t) {
        Eigen::Map<const Eigen::ArrayXd> o(src[k++], t.size());
        Eigen::Map<Eigen::ArrayXd>(t.data(), t.size()) += scale * o;
    });
}

Matrix model_input(const PointCloud& cloud) {
    Matrix x(static_cast<Eigen::Index>(cloud.size()), 3 + cloud.feat_dim());
    x.leftCols<3>() = cloud.coords;
    x.rightCols(cloud.feat_dim()) = cloud.feats;
    return x;
}

namespace {

void check_finite(const ModelParams& params) {
    if (!params.all_finite()) throw NumericalError("non-finite model parameters");
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& grad, const Matrix& pre) {
    return (pre.array() > 0.0).select(grad, 0.0);
}

} // namespace

Matrix backbone_forward(const ModelParams& params, const PointCloud& cloud, Activations& act) {
    const auto& cfg = params.config;
    if (cloud.empty()) throw InvalidArgument("backbone_forward on an empty cloud");
    if (3 + cloud.feat_dim() != cfg.in_dim) {
        throw InvalidArgument("cloud has " + std::to_string(3 + cloud.feat_dim()) + " input channels, model expects " +
                              std::to_string(cfg.in_dim));
    }
    check_finite(params);

    act = Activations{};
    act.version = params.version;
    act.input = model_input(cloud);
    act.pre1 = (act.input * params.w1.transpose()).rowwise() + params.b1.transpose();
    act.h1 = relu(act.pre1);

    const VoxelGrid grid = voxelize(cloud.coords, cfg.pool_size);
    act.point_cell = grid.point_cell;
    act.cell_weight.resize(grid.cell_count());
    for (std::size_t c = 0; c < grid.cell_count(); ++c) {
        act.cell_weight[c] = 1.0 / static_cast<double>(grid.cells[c].size());
    }

    const Eigen::Index n = act.h1.rows(), h = act.h1.cols();
    act.concat.resize(n, 2 * h);
    act.concat.leftCols(h) = act.h1;
    Vector cell_sum(static_cast<Eigen::Index>(grid.cell_count()));
    for (Eigen::Index col = 0; col < h; ++col) {
        cell_sum.setZero();
        for (Eigen::Index i = 0; i < n; ++i) cell_sum[act.point_cell[static_cast<std::size_t>(i)]] += act.h1(i, col);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int cell = act.point_cell[static_cast<std::size_t>(i)];
            act.concat(i, h + col) = cell_sum[cell] * act.cell_weight[static_cast<std::size_t>(cell)];
        }
    }

    act.pre2 = (act.concat * params.w2.transpose()).rowwise() + params.b2.transpose();
    act.feat = relu(act.pre2);
    return act.feat;
}

Matrix classifier_forward(const ModelParams& params, const Matrix& feat) {
    if (feat.cols() != params.config.feat_dim) throw InvalidArgument("feature width mismatch in classifier");
    return (feat * params.wc.transpose()).rowwise() + params.bc.transpose();
}

Matrix projector_forward(const ModelParams& params, const Matrix& feat, Activations* act) {
    if (feat.cols() != params.config.feat_dim) throw InvalidArgument("feature width mismatch in projector");
    Matrix pre = (feat * params.wp1.transpose()).rowwise() + params.bp1.transpose();
    Matrix hidden = relu(pre);
    Matrix raw = (hidden * params.wp2.transpose()).rowwise() + params.bp2.transpose();
    Vector norms = raw.rowwise().norm();
    int degenerate = 0;
    Matrix embed = raw;
    if (params.config.normalize_embeddings) {
        for (Eigen::Index i = 0; i < raw.rows(); ++i) {
            if (norms[i] < kEmbedNormEpsilon) {
                ++degenerate;
                norms[i] = kEmbedNormEpsilon;
            }
            embed.row(i) /= norms[i];
        }
    }
    if (act) {
        act->has_embed = true;
        act->pre_p1 = std::move(pre);
        act->hp1 = std::move(hidden);
        act->raw_embed = std::move(raw);
        act->embed_norm = std::move(norms);
        act->embed = embed;
        act->degenerate_rows = degenerate;
    }
    return embed;
}

Activations forward(const ModelParams& params, const PointCloud& cloud, Heads heads) {
    Activations act;
    backbone_forward(params, cloud, act);
    if (heads.scores) {
        act.scores = classifier_forward(params, act.feat);
        act.has_scores = true;
    }
    if (heads.embed) projector_forward(params, act.feat, &act);
    return act;
}

BackwardResult backward(const ModelParams& params, const Activations& act, const GradOutputs& grads) {
    if (act.version != params.version) throw InvalidArgument("stale activations: parameters changed since forward");
    const Eigen::Index n = act.feat.rows();
    const Eigen::Index h = params.config.hidden;

    BackwardResult out;
    out.params = ModelParams::zeros(params.config);
    auto& g = out.params;

    Matrix d_feat = Matrix::Zero(n, params.config.feat_dim);
    if (grads.d_feat.size() > 0) {
        if (grads.d_feat.rows() != n || grads.d_feat.cols() != d_feat.cols()) throw InvalidArgument("d_feat shape mismatch");
        d_feat += grads.d_feat;
    }
    if (grads.d_scores.size() > 0) {
        if (!act.has_scores) throw InvalidArgument("score gradient given but the classifier was not run");
        if (grads.d_scores.rows() != n || grads.d_scores.cols() != params.config.class_count) {
            throw InvalidArgument("d_scores shape mismatch");
        }
        g.wc.noalias() = grads.d_scores.transpose() * act.feat;
        g.bc = grads.d_scores.colwise().sum().transpose();
        d_feat.noalias() += grads.d_scores * params.wc;
    }
    if (grads.d_embed.size() > 0) {
        if (!act.has_embed) throw InvalidArgument("embedding gradient given but the projector was not run");
        if (grads.d_embed.rows() != n || grads.d_embed.cols() != params.config.embed_dim) {
            throw InvalidArgument("d_embed shape mismatch");
        }
        Matrix d_raw = grads.d_embed;
        if (params.config.normalize_embeddings) {
            // e = r / |r|  =>  dr = (de - e (e . de)) / |r|
            const Vector proj = (act.embed.array() * grads.d_embed.array()).rowwise().sum();
            for (Eigen::Index i = 0; i < n; ++i) {
                d_raw.row(i) = (grads.d_embed.row(i) - proj[i] * act.embed.row(i)) / act.embed_norm[i];
            }
        }
        g.wp2.noalias() = d_raw.transpose() * act.hp1;
        g.bp2 = d_raw.colwise().sum().transpose();
        const Matrix d_pre_p1 = relu_backward(d_raw * params.wp2, act.pre_p1);
        g.wp1.noalias() = d_pre_p1.transpose() * act.feat;
        g.bp1 = d_pre_p1.colwise().sum().transpose();
        d_feat.noalias() += d_pre_p1 * params.wp1;
    }

    const Matrix d_pre2 = relu_backward(d_feat, act.pre2);
    g.w2.noalias() = d_pre2.transpose() * act.concat;
    g.b2 = d_pre2.colwise().sum().transpose();
    const Matrix d_concat = d_pre2 * params.w2;

    Matrix d_h1 = d_concat.leftCols(h);
    Vector cell_sum(static_cast<Eigen::Index>(act.cell_weight.size()));
    for (Eigen::Index col = 0; col < h; ++col) {
        cell_sum.setZero();
        for (Eigen::Index i = 0; i < n; ++i) cell_sum[act.point_cell[static_cast<std::size_t>(i)]] += d_concat(i, h + col);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int cell = act.point_cell[static_cast<std::size_t>(i)];
            d_h1(i, col) += cell_sum[cell] * act.cell_weight[static_cast<std::size_t>(cell)];
        }
    }

    const Matrix d_pre1 = relu_backward(d_h1, act.pre1);
    g.w1.noalias() = d_pre1.transpose() * act.input;
    g.b1 = d_pre1.colwise().sum().transpose();
    out.d_input = d_pre1 * params.w1;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kCheckpointMagic[4] = {'G', 'P', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
} // namespace

void write_params(std::ostream& out, const ModelParams& params) {
    out.write(kCheckpointMagic, 4);
    io::put<std::uint32_t>(out, kCheckpointVersion);
    const auto& c = params.config;
    for (int v : {c.in_dim, c.hidden, c.feat_dim, c.proj_hidden, c.embed_dim, c.class_count}) {
        io::put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    }
    io::put<double>(out, c.pool_size);
    io::put<std::uint8_t>(out, c.normalize_embeddings ? 1 : 0);
    io::put<std::uint32_t>(out, 10);
    params.for_each([&out](const char* name, const auto& t) {
        io::put_string(out, name);
        io::put_tensor(out, t);
    });
}

ModelParams read_params(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw DataError("not a model checkpoint");
    const auto version = io::get<std::uint32_t>(in);
    if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    ModelConfig c;
    for (int* v : {&c.in_dim, &c.hidden, &c.feat_dim, &c.proj_hidden, &c.embed_dim, &c.class_count}) {
        *v = static_cast<int>(io::get<std::uint32_t>(in));
    }
    c.pool_size = io::get<double>(in);
    c.normalize_embeddings = io::get<std::uint8_t>(in) != 0;
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw DataError(std::string("bad model config in checkpoint: ") + e.what());
    }
    const auto count = io::get<std::uint32_t>(in);
    if (count != 10) throw DataError("unexpected tensor count in checkpoint");
    ModelParams p = ModelParams::zeros(c);
    p.for_each([&in](const char* name, auto& t) {
        const std::string stored = io::get_string(in);
        if (stored != name) throw DataError("expected tensor " + std::string(name) + ", found " + stored);
        io::get_tensor(in, t, name);
    });
    return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    write_params(out, params);
    if (!out) throw DataError("write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return read_params(in);
}

} // namespace gpcl
