#include "gpcl/trainer.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "gpcl/error.hpp"

namespace gpcl {

namespace {

constexpr char kStateMagic[4] = {'G', 'P', 'T', 'S'};
constexpr std::uint32_t kStateVersion = 1;

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table, const char* what) {
    for (const auto& [name, value] : table) {
        if (name == s) return value;
    }
    throw InvalidArgument(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
std::string_view enum_name(E e, const std::array<std::pair<std::string_view, E>, N>& table) {
    for (const auto& [name, value] : table) {
        if (value == e) return name;
    }
    return "?";
}

constexpr std::array<std::pair<std::string_view, Strategy>, 6> kStrategies{{
    {"sup_only", Strategy::SupOnly},
    {"mse", Strategy::Mse},
    {"cosine", Strategy::Cosine},
    {"point_infonce", Strategy::PointInfoNce},
    {"self_training", Strategy::SelfTraining},
    {"guided", Strategy::Guided},
}};
constexpr std::array<std::pair<std::string_view, SamplerKind>, 2> kSamplers{{
    {"random", SamplerKind::Random},
    {"cbs", SamplerKind::Cbs},
}};
constexpr std::array<std::pair<std::string_view, OptimizerKind>, 2> kOptimizers{{
    {"sgd_poly", OptimizerKind::SgdPoly},
    {"adam_cosine", OptimizerKind::AdamCosine},
}};
constexpr std::array<std::pair<std::string_view, FullLabelSource>, 2> kFullLabelSources{{
    {"independent", FullLabelSource::Independent},
    {"same_scene", FullLabelSource::SameScene},
}};

std::string fmt_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw InvalidArgument("bad number for " + key + ": '" + s + "'");
    return v;
}

template <typename I>
I parse_int(const std::string& key, const std::string& s) {
    I v{};
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw InvalidArgument("bad integer for " + key + ": '" + s + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw InvalidArgument("bad boolean for " + key + ": '" + s + "'");
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

struct Field {
    const char* key;
    std::string (*get)(const TrainConfig&);
    void (*set)(TrainConfig&, const std::string&);
};

#define GPCL_REAL(name, member) \
    Field{name, [](const TrainConfig& c) { return fmt_double(c.member); }, \
          [](TrainConfig& c, const std::string& v) { c.member = parse_double(name, v); }}
#define GPCL_INT(name, member) \
    Field{name, [](const TrainConfig& c) { return std::to_string(c.member); }, \
          [](TrainConfig& c, const std::string& v) { c.member = parse_int<decltype(c.member)>(name, v); }}
#define GPCL_BOOL(name, member) \
    Field{name, [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }, \
          [](TrainConfig& c, const std::string& v) { c.member = parse_bool(name, v); }}
#define GPCL_TEXT(name, member) \
    Field{name, [](const TrainConfig& c) { return c.member; }, \
          [](TrainConfig& c, const std::string& v) { c.member = v; }}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        Field{"strategy", [](const TrainConfig& c) { return std::string(strategy_name(c.strategy)); },
              [](TrainConfig& c, const std::string& v) { c.strategy = parse_strategy(v); }},
        GPCL_REAL("lambda", lambda),
        GPCL_REAL("tau", guided.tau),
        GPCL_REAL("gamma", guided.gamma),
        GPCL_BOOL("label_guidance", guided.label_guidance),
        GPCL_BOOL("confidence_guidance", guided.confidence_guidance),
        GPCL_BOOL("renormalize_gated", guided.renormalize_gated),
        Field{"sampler", [](const TrainConfig& c) { return std::string(sampler_name(c.sampler)); },
              [](TrainConfig& c, const std::string& v) { c.sampler = parse_sampler(v); }},
        GPCL_INT("k_p", k_p),
        GPCL_INT("k_n", k_n),
        GPCL_INT("bank_capacity", bank_capacity),
        GPCL_INT("bank_update", bank_update),
        GPCL_REAL("bank_warm_ratio", bank_warm_ratio),
        GPCL_BOOL("bank_confidence_filter", bank_confidence_filter),
        GPCL_BOOL("checkpoint_bank", checkpoint_bank),
        Field{"optimizer", [](const TrainConfig& c) { return std::string(optimizer_name(c.optimizer)); },
              [](TrainConfig& c, const std::string& v) { c.optimizer = parse_optimizer(v); }},
        GPCL_REAL("lr", lr),
        GPCL_REAL("poly_power", poly_power),
        GPCL_REAL("momentum", momentum),
        GPCL_REAL("adam_beta1", adam_beta1),
        GPCL_REAL("adam_beta2", adam_beta2),
        GPCL_REAL("adam_eps", adam_eps),
        GPCL_REAL("weight_decay", weight_decay),
        GPCL_INT("batch_labeled", batch_labeled),
        GPCL_INT("batch_unlabeled", batch_unlabeled),
        GPCL_INT("total_iters", total_iters),
        GPCL_INT("warmup_iters", warmup_iters),
        GPCL_INT("seed", seed),
        GPCL_INT("eval_every", eval_every),
        GPCL_INT("log_every", log_every),
        GPCL_INT("in_dim", model.in_dim),
        GPCL_INT("hidden", model.hidden),
        GPCL_INT("feat_dim", model.feat_dim),
        GPCL_INT("proj_hidden", model.proj_hidden),
        GPCL_INT("embed_dim", model.embed_dim),
        GPCL_INT("class_count", model.class_count),
        GPCL_REAL("pool_size", model.pool_size),
        GPCL_BOOL("normalize_embeddings", model.normalize_embeddings),
        Field{"preset", [](const TrainConfig& c) { return std::string(preset_name(c.augment.preset)); },
              [](TrainConfig& c, const std::string& v) { c.augment.preset = parse_preset(v); }},
        GPCL_REAL("crop_size", augment.crop_size),
        GPCL_REAL("fov_min", augment.fov_min),
        GPCL_REAL("fov_max", augment.fov_max),
        GPCL_REAL("rotation_min", augment.rotation_min),
        GPCL_REAL("rotation_max", augment.rotation_max),
        GPCL_BOOL("flip", augment.flip),
        GPCL_REAL("scale_min", augment.scale_min),
        GPCL_REAL("scale_max", augment.scale_max),
        GPCL_INT("min_overlap", augment.min_overlap_points),
        GPCL_INT("max_retries", augment.max_retries),
        GPCL_BOOL("recenter", augment.recenter),
        Field{"full_label_source",
              [](const TrainConfig& c) { return std::string(enum_name(c.full_label_source, kFullLabelSources)); },
              [](TrainConfig& c, const std::string& v) {
                  c.full_label_source = parse_enum(v, kFullLabelSources, "full-label source");
              }},
        GPCL_TEXT("init_checkpoint", init_checkpoint),
        GPCL_TEXT("pseudo_from", pseudo_from),
        GPCL_TEXT("dump_dir", dump_dir),
    };
    return table;
}

#undef GPCL_REAL
#undef GPCL_INT
#undef GPCL_BOOL
#undef GPCL_TEXT

// Flat views over every tensor of a parameter set, in for_each order.
std::vector<Eigen::Map<Eigen::ArrayXd>> flat(ModelParams& p) {
    std::vector<Eigen::Map<Eigen::ArrayXd>> out;
    p.for_each([&out](const char*, auto& t) { out.emplace_back(t.data(), t.size()); });
    return out;
}

void apply_optimizer(TrainState& state, ParamGrads& grads, const TrainConfig& cfg, double lr) {
    auto p = flat(state.params);
    auto g = flat(grads);
    auto m1 = flat(state.moment1);
    auto m2 = flat(state.moment2);
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (cfg.weight_decay > 0.0) g[k] += cfg.weight_decay * p[k];
        if (cfg.optimizer == OptimizerKind::SgdPoly) {
            if (cfg.momentum > 0.0) {
                m1[k] = cfg.momentum * m1[k] + g[k];
                p[k] -= lr * m1[k];
            } else {
                p[k] -= lr * g[k];
            }
        } else {
            const double t = static_cast<double>(state.iteration + 1);
            const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
            const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
            m1[k] = cfg.adam_beta1 * m1[k] + (1.0 - cfg.adam_beta1) * g[k];
            m2[k] = cfg.adam_beta2 * m2[k] + (1.0 - cfg.adam_beta2) * g[k].square();
            p[k] -= lr * (m1[k] / c1) / ((m2[k] / c2).sqrt() + cfg.adam_eps);
        }
    }
    ++state.params.version;
}

bool any_nonzero(const Matrix& m) { return m.size() > 0 && (m.array() != 0.0).any(); }

std::vector<int> labels_by_origin(const PointCloud& view, const std::vector<int>& fixed) {
    std::vector<int> out(view.size(), kIgnoreLabel);
    for (std::size_t i = 0; i < view.size(); ++i) {
        const auto id = static_cast<std::size_t>(view.origin_ids[i]);
        if (id < fixed.size()) out[i] = fixed[id];
    }
    return out;
}

void dump_batch(const TrainConfig& cfg, std::int64_t it, const std::vector<const PointCloud*>& labeled,
                const std::vector<UnlabeledItem>& unlabeled) {
    if (cfg.dump_dir.empty()) return;
    try {
        const std::filesystem::path dir(cfg.dump_dir);
        std::filesystem::create_directories(dir);
        const auto stem = "iter" + std::to_string(it);
        for (std::size_t k = 0; k < labeled.size(); ++k) {
            save_scene(*labeled[k], dir / (stem + "_labeled" + std::to_string(k) + ".gpcl"));
        }
        for (std::size_t k = 0; k < unlabeled.size(); ++k) {
            save_scene(*unlabeled[k].cloud, dir / (stem + "_unlabeled" + std::to_string(k) + ".gpcl"));
        }
    } catch (const std::exception&) {
        // The numerical error is the one worth reporting.
    }
}

// One unlabeled scene's contribution: the two view forwards and the loss
// gradients at their outputs.
struct PairWork {
    Activations a1, a2;
    Matrix d_embed1, d_embed2, d_scores1, d_scores2;
};

} // namespace

Strategy parse_strategy(std::string_view s) { return parse_enum(s, kStrategies, "strategy"); }
std::string_view strategy_name(Strategy s) { return enum_name(s, kStrategies); }
SamplerKind parse_sampler(std::string_view s) { return parse_enum(s, kSamplers, "sampler"); }
std::string_view sampler_name(SamplerKind s) { return enum_name(s, kSamplers); }
OptimizerKind parse_optimizer(std::string_view s) { return parse_enum(s, kOptimizers, "optimizer"); }
std::string_view optimizer_name(OptimizerKind o) { return enum_name(o, kOptimizers); }

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be a finite nonnegative number");
    guided.validate();
    if (k_p < 1) throw InvalidArgument("k_p must be at least 1");
    if (k_n < 1) throw InvalidArgument("k_n must be at least 1");
    if (bank_capacity < 1) throw InvalidArgument("bank_capacity must be at least 1");
    if (bank_update < 0) throw InvalidArgument("bank_update must be nonnegative");
    if (!(bank_warm_ratio >= 0.0)) throw InvalidArgument("bank_warm_ratio must be nonnegative");
    if (!(lr > 0.0)) throw InvalidArgument("lr must be positive");
    if (!(poly_power >= 0.0)) throw InvalidArgument("poly_power must be nonnegative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw InvalidArgument("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw InvalidArgument("adam_eps must be positive");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be nonnegative");
    if (batch_labeled < 1) throw InvalidArgument("batch_labeled must be at least 1");
    if (batch_unlabeled < 1) throw InvalidArgument("batch_unlabeled must be at least 1");
    if (total_iters < 0) throw InvalidArgument("total_iters must be nonnegative");
    if (warmup_iters < 0 || warmup_iters > total_iters) throw InvalidArgument("warmup_iters must lie in [0, total_iters]");
    if (eval_every < 0 || log_every < 0) throw InvalidArgument("eval_every and log_every must be nonnegative");
    model.validate();
    augment.validate();
    if (strategy == Strategy::SelfTraining && pseudo_from.empty()) {
        throw InvalidArgument("self_training needs a pseudo-label checkpoint (pseudo_from)");
    }
}

TrainConfig TrainConfig::synthetic(Preset preset) {
    TrainConfig cfg;
    cfg.augment = AugmentConfig::for_preset(preset);
    cfg.model.pool_size = preset == Preset::Indoor ? 0.5 : 2.0;
    cfg.total_iters = 2000;
    cfg.warmup_iters = 50;
    cfg.batch_labeled = 4;
    cfg.batch_unlabeled = 4;
    return cfg;
}

std::map<std::string, std::string> TrainConfig::to_map() const {
    std::map<std::string, std::string> kv;
    for (const auto& f : fields()) kv[f.key] = f.get(*this);
    return kv;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(*this, value);
            return;
        }
    }
    throw InvalidArgument("unknown config key '" + key + "'");
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv, TrainConfig base) {
    for (const auto& [k, v] : kv) base.set(k, v);
    return base;
}

TrainConfig TrainConfig::parse(std::istream& in, TrainConfig base) {
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key = value");
        base.set(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
    }
    return base;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path.string());
    return parse(in, std::move(base));
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) { return load(path, TrainConfig{}); }

void TrainConfig::write(std::ostream& out) const {
    for (const auto& f : fields()) out << f.key << " = " << f.get(*this) << '\n';
}

void TrainConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    write(out);
}

double learning_rate(const TrainConfig& cfg, std::int64_t iteration) {
    if (cfg.total_iters <= 0) return cfg.lr;
    const double t = static_cast<double>(iteration) / static_cast<double>(cfg.total_iters);
    if (cfg.optimizer == OptimizerKind::SgdPoly) return cfg.lr * std::pow(std::max(0.0, 1.0 - t), cfg.poly_power);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, t)));
}

RngStreams RngStreams::from_seed(std::uint64_t seed) {
    return {derive_seed(seed, 0x1417), derive_seed(seed, 0xDA7A), derive_seed(seed, 0xA06), derive_seed(seed, 0x5A3)};
}

// ---------------------------------------------------------------------------

TrainState TrainState::initial(const TrainConfig& cfg) {
    TrainState s;
    s.streams = RngStreams::from_seed(cfg.seed);
    if (cfg.init_checkpoint.empty()) {
        s.params = ModelParams::init(cfg.model, s.streams.init);
    } else {
        s.params = load_checkpoint(cfg.init_checkpoint);
        if (!(s.params.config == cfg.model)) throw InvalidArgument("init checkpoint architecture differs from the config");
    }
    s.moment1 = ModelParams::zeros(cfg.model);
    s.moment2 = ModelParams::zeros(cfg.model);
    s.bank = MemoryBank(cfg.model.class_count, cfg.model.embed_dim, cfg.bank_capacity, cfg.bank_update);
    return s;
}

void TrainState::write(std::ostream& out, bool include_bank) const {
    out.write(kStateMagic, 4);
    io::put<std::uint32_t>(out, kStateVersion);
    io::put<std::int64_t>(out, iteration);
    for (auto v : {streams.init, streams.data, streams.augment, streams.sampler}) io::put<std::uint64_t>(out, v);
    write_params(out, params);
    write_params(out, moment1);
    write_params(out, moment2);
    io::put<std::uint8_t>(out, include_bank ? 1 : 0);
    if (include_bank) {
        bank.write(out);
    } else {
        MemoryBank(bank.class_count(), bank.dim(), bank.capacity(), bank.update_quota()).write(out);
    }
}

TrainState TrainState::read(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kStateMagic, 4) != 0) throw DataError("not a training-state checkpoint");
    const auto version = io::get<std::uint32_t>(in);
    if (version != kStateVersion) throw DataError("unsupported training-state version " + std::to_string(version));
    TrainState s;
    s.iteration = io::get<std::int64_t>(in);
    for (auto* v : {&s.streams.init, &s.streams.data, &s.streams.augment, &s.streams.sampler}) *v = io::get<std::uint64_t>(in);
    s.params = read_params(in);
    s.moment1 = read_params(in);
    s.moment2 = read_params(in);
    io::get<std::uint8_t>(in);
    s.bank = MemoryBank::read(in);
    if (!(s.moment1.config == s.params.config) || !(s.moment2.config == s.params.config)) {
        throw DataError("optimizer moments do not match the parameters");
    }
    return s;
}

void TrainState::save(const std::filesystem::path& path, bool include_bank) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    write(out, include_bank);
    if (!out) throw DataError("write failed for " + path.string());
}

TrainState TrainState::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return read(in);
}

// ---------------------------------------------------------------------------

PointCloud prepare_eval(const PointCloud& cloud, Preset preset) {
    return preset == Preset::Indoor ? center_xy(cloud) : cloud;
}

PointCloud prepare_labeled(const PointCloud& cloud, const TrainConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return random_rigid(prepare_eval(cloud, cfg.augment.preset), cfg.augment, rng);
}

StepReport train_step(TrainState& state, const std::vector<const PointCloud*>& labeled,
                      const std::vector<UnlabeledItem>& unlabeled, const TrainConfig& cfg) {
    if (labeled.empty()) throw InvalidArgument("labeled batch is empty");
    const std::int64_t it = state.iteration;
    const ModelParams& params = state.params;
    const int classes = params.config.class_count;

    StepReport rep;
    rep.iteration = it;
    rep.lr = learning_rate(cfg, it);

    // Labeled branch.
    std::vector<Activations> lab_acts;
    std::vector<int> lab_labels;
    Eigen::Index rows = 0;
    for (std::size_t k = 0; k < labeled.size(); ++k) {
        if (!labeled[k]->has_labels()) throw InvalidArgument("labeled scene without labels");
        const auto view = prepare_labeled(*labeled[k], cfg, derive_seed(state.streams.augment, static_cast<std::uint64_t>(it), k, 0x1AB));
        lab_acts.push_back(forward(params, view, Heads{true, false}));
        lab_labels.insert(lab_labels.end(), view.labels.begin(), view.labels.end());
        rows += lab_acts.back().scores.rows();
    }
    Matrix lab_scores(rows, classes);
    rows = 0;
    for (const auto& a : lab_acts) {
        lab_scores.middleRows(rows, a.scores.rows()) = a.scores;
        rows += a.scores.rows();
    }
    const LossValue ce = cross_entropy(lab_scores, lab_labels);
    rep.loss_l = ce.value;

    ParamGrads grads = ParamGrads::zeros(params.config);
    rows = 0;
    for (const auto& a : lab_acts) {
        GradOutputs go;
        go.d_scores = ce.grad("scores").middleRows(rows, a.scores.rows());
        rows += a.scores.rows();
        grads.add_scaled(backward(params, a, go).params, 1.0);
    }

    // Unlabeled branch.
    const bool unsup = cfg.strategy != Strategy::SupOnly && it >= cfg.warmup_iters && !unlabeled.empty();
    std::vector<PairWork> work;
    Matrix bank_rows;
    PseudoLabels bank_pl;
    if (unsup) {
        AugmentConfig aug = cfg.augment;
        aug.seed = state.streams.augment;
        const bool need_scores = cfg.strategy == Strategy::Guided || cfg.strategy == Strategy::SelfTraining;
        const bool need_embed = cfg.strategy != Strategy::SelfTraining;
        const bool use_bank = cfg.strategy == Strategy::Guided && cfg.sampler == SamplerKind::Cbs;
        const auto warm = static_cast<std::size_t>(std::ceil(cfg.k_n * cfg.bank_warm_ratio));
        const bool bank_ready = use_bank && state.bank.population() > 0 && state.bank.population() >= warm;
        GuidedDiagnostics diag;
        double sum = 0.0;
        std::vector<Matrix> collected;
        std::vector<PseudoLabels> collected_pl;

        for (std::size_t s = 0; s < unlabeled.size(); ++s) {
            const auto pair_seed = derive_seed(static_cast<std::uint64_t>(it), s);
            const auto sample_seed = derive_seed(state.streams.sampler, static_cast<std::uint64_t>(it), s);
            ViewPair pair;
            try {
                pair = make_view_pair(*unlabeled[s].cloud, aug, pair_seed);
            } catch (const OverlapUnsatisfiable&) {
                ++rep.skipped_pairs;
                continue;
            }
            PairWork w;
            w.a1 = forward(params, pair.view1, Heads{need_scores, need_embed});
            w.a2 = forward(params, pair.view2, Heads{need_scores, need_embed});
            LossValue lv;
            switch (cfg.strategy) {
            case Strategy::Mse:
                lv = mse_consistency(pair.matches, w.a1.embed, w.a2.embed);
                break;
            case Strategy::Cosine:
                lv = cosine_consistency(pair.matches, w.a1.embed, w.a2.embed);
                break;
            case Strategy::PointInfoNce:
                lv = point_infonce(random_positive_pairs(pair.matches, cfg.k_p, sample_seed), w.a1.embed, w.a2.embed,
                                   cfg.guided.tau);
                break;
            case Strategy::SelfTraining: {
                if (unlabeled[s].fixed_labels == nullptr) throw InvalidArgument("self_training needs fixed pseudo labels");
                const auto l1 = self_training_loss(w.a1.scores, labels_by_origin(pair.view1, *unlabeled[s].fixed_labels));
                const auto l2 = self_training_loss(w.a2.scores, labels_by_origin(pair.view2, *unlabeled[s].fixed_labels));
                lv.value = 0.5 * (l1.value + l2.value);
                w.d_scores1 = 0.5 * l1.grad("scores");
                w.d_scores2 = 0.5 * l2.grad("scores");
                break;
            }
            case Strategy::Guided: {
                const auto pl1 = pseudo_labels(w.a1.scores);
                const auto pl2 = pseudo_labels(w.a2.scores);
                const MatchList positives =
                    cfg.sampler == SamplerKind::Cbs
                        ? cbs_positive_pairs(PairPool::build(pair.matches, pl1.labels, classes), cfg.k_p, sample_seed)
                        : random_positive_pairs(pair.matches, cfg.k_p, sample_seed);
                Negatives negatives;
                if (bank_ready) {
                    negatives = state.bank.sample(cfg.k_n, derive_seed(sample_seed, 0xB));
                } else {
                    Rng rng(derive_seed(sample_seed, 0x1C));
                    InCloudNegatives nc;
                    nc.view1 = sample_without_replacement(pair.view1.size(), static_cast<std::size_t>(cfg.k_n), rng);
                    nc.view2 = sample_without_replacement(pair.view2.size(), static_cast<std::size_t>(cfg.k_n), rng);
                    negatives = std::move(nc);
                }
                GuidedDiagnostics d;
                lv = guided_contrastive(positives, w.a1.embed, w.a2.embed, pl1, pl2, negatives, cfg.guided, &d);
                diag.pairs += d.pairs;
                diag.open_gates += d.open_gates;
                diag.negatives_seen += d.negatives_seen;
                diag.negatives_masked += d.negatives_masked;
                if (use_bank) {
                    collected.push_back(w.a1.embed);
                    collected.push_back(w.a2.embed);
                    collected_pl.push_back(pl1);
                    collected_pl.push_back(pl2);
                }
                break;
            }
            case Strategy::SupOnly:
                break;
            }
            if (lv.has_grad("E1")) w.d_embed1 = lv.grad("E1");
            if (lv.has_grad("E2")) w.d_embed2 = lv.grad("E2");
            sum += lv.value;
            work.push_back(std::move(w));
        }
        rep.loss_u = work.empty() ? 0.0 : sum / static_cast<double>(work.size());
        rep.gate_rate = diag.gate_rate();
        rep.mask_rate = diag.mask_rate();

        if (!collected.empty()) {
            Eigen::Index n = 0;
            for (const auto& m : collected) n += m.rows();
            bank_rows.resize(n, params.config.embed_dim);
            bank_pl.confidence.resize(n);
            n = 0;
            for (std::size_t k = 0; k < collected.size(); ++k) {
                bank_rows.middleRows(n, collected[k].rows()) = collected[k];
                bank_pl.confidence.segment(n, collected[k].rows()) = collected_pl[k].confidence;
                bank_pl.labels.insert(bank_pl.labels.end(), collected_pl[k].labels.begin(), collected_pl[k].labels.end());
                n += collected[k].rows();
            }
        }
    }

    rep.loss = rep.loss_u ? rep.loss_l + cfg.lambda * *rep.loss_u : rep.loss_l;
    if (!std::isfinite(rep.loss)) {
        dump_batch(cfg, it, labeled, unlabeled);
        std::ostringstream msg;
        msg << "non-finite loss at iteration " << it << " (L_l=" << rep.loss_l;
        if (rep.loss_u) msg << ", L_u=" << *rep.loss_u;
        msg << ")";
        if (!cfg.dump_dir.empty()) msg << "; batch dumped to " << cfg.dump_dir;
        throw NumericalError(msg.str());
    }

    if (cfg.lambda != 0.0 && !work.empty()) {
        const double w = cfg.lambda / static_cast<double>(work.size());
        for (const auto& pw : work) {
            const bool live = any_nonzero(pw.d_embed1) || any_nonzero(pw.d_embed2) || any_nonzero(pw.d_scores1) ||
                              any_nonzero(pw.d_scores2);
            if (!live) continue;
            auto side = [&](const Activations& a, const Matrix& de, const Matrix& ds) {
                GradOutputs go;
                if (de.size() > 0) go.d_embed = w * de;
                if (ds.size() > 0) go.d_scores = w * ds;
                grads.add_scaled(backward(params, a, go).params, 1.0);
            };
            side(pw.a1, pw.d_embed1, pw.d_scores1);
            side(pw.a2, pw.d_embed2, pw.d_scores2);
        }
    }
    if (!grads.all_finite()) {
        dump_batch(cfg, it, labeled, unlabeled);
        throw NumericalError("non-finite gradient at iteration " + std::to_string(it));
    }

    apply_optimizer(state, grads, cfg, rep.lr);
    if (!state.params.all_finite()) {
        dump_batch(cfg, it, labeled, unlabeled);
        throw NumericalError("parameters became non-finite at iteration " + std::to_string(it));
    }
    if (bank_rows.rows() > 0) {
        const double min_conf = cfg.bank_confidence_filter ? cfg.guided.gamma : 0.0;
        state.bank.update(bank_rows, bank_pl, min_conf, derive_seed(state.streams.sampler, static_cast<std::uint64_t>(it), 0xBA));
    }
    ++state.iteration;
    return rep;
}

// ---------------------------------------------------------------------------

std::vector<int> predict(const ModelParams& params, const PointCloud& cloud, Preset preset) {
    const auto act = forward(params, prepare_eval(cloud, preset), Heads{true, false});
    std::vector<int> out(cloud.size());
    for (Eigen::Index i = 0; i < act.scores.rows(); ++i) {
        Eigen::Index best = 0;
        act.scores.row(i).maxCoeff(&best);
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

EvalResult evaluate(const ModelParams& params, const SceneSet& eval_set, Preset preset) {
    EvalResult r{ConfusionMatrix(params.config.class_count), {}};
    for (const auto& scene : eval_set.scenes) {
        if (!scene.has_labels()) throw DataError("evaluation scene has no labels");
        const auto pred = predict(params, scene, preset);
        r.confusion.accumulate(scene.labels, pred);
    }
    r.scores = score(r.confusion);
    return r;
}

std::vector<std::vector<int>> make_fixed_pseudo_labels(const ModelParams& teacher, const SceneSet& set, Preset preset) {
    std::vector<std::vector<int>> out;
    out.reserve(set.size());
    for (const auto& scene : set.scenes) {
        const auto pred = predict(teacher, scene, preset);
        int max_id = -1;
        for (int id : scene.origin_ids) max_id = std::max(max_id, id);
        std::vector<int> by_id(static_cast<std::size_t>(max_id + 1), kIgnoreLabel);
        for (std::size_t i = 0; i < pred.size(); ++i) by_id[static_cast<std::size_t>(scene.origin_ids[i])] = pred[i];
        out.push_back(std::move(by_id));
    }
    return out;
}

EpochSampler::EpochSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
    if (n == 0) throw InvalidArgument("cannot sample from an empty set");
}

std::vector<int> EpochSampler::take(std::int64_t start, int count) const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(count));
    for (std::int64_t pos = start; pos < start + count; ++pos) {
        const auto epoch = pos / static_cast<std::int64_t>(n_);
        if (epoch != cached_epoch_) {
            Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(epoch)));
            cached_ = random_permutation(n_, rng);
            cached_epoch_ = epoch;
        }
        out.push_back(cached_[static_cast<std::size_t>(pos % static_cast<std::int64_t>(n_))]);
    }
    return out;
}

std::string LogRow::csv() const {
    auto opt = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
    std::string s = std::to_string(iter);
    for (const auto& field : {fmt_double(lr), fmt_double(loss_l), opt(loss_u), fmt_double(gate_rate),
                              fmt_double(mask_rate), opt(miou), opt(macc)}) {
        s += ',';
        s += field;
    }
    return s;
}

TrainResult train_run(const SceneSet& labeled, const SceneSet& unlabeled, const SceneSet* eval_set,
                      const TrainConfig& cfg, const RunOptions& options) {
    cfg.validate();
    if (labeled.empty()) throw InvalidArgument("labeled set is empty");
    for (const SceneSet* set : {&labeled, &unlabeled, eval_set}) {
        if (set == nullptr) continue;
        for (const auto& scene : set->scenes) {
            if (scene.feat_dim() + 3 != cfg.model.in_dim) throw InvalidArgument("scene features do not match model in_dim");
            if (scene.class_count != cfg.model.class_count) throw InvalidArgument("scene class count does not match the model");
        }
    }

    TrainResult result;
    if (options.resume_from) {
        result.state = TrainState::load(*options.resume_from);
        if (!(result.state.params.config == cfg.model)) throw InvalidArgument("resume checkpoint architecture differs from the config");
    } else {
        result.state = TrainState::initial(cfg);
    }
    TrainState& state = result.state;

    const bool full_labels = unlabeled.empty();
    const SceneSet& pool = full_labels ? labeled : unlabeled;
    std::vector<std::vector<int>> fixed;
    if (cfg.strategy == Strategy::SelfTraining) {
        fixed = make_fixed_pseudo_labels(load_checkpoint(cfg.pseudo_from), pool, cfg.augment.preset);
    }

    const EpochSampler lab_sampler(labeled.size(), derive_seed(state.streams.data, 1));
    const EpochSampler unl_sampler(pool.size(), derive_seed(state.streams.data, 2));

    std::ofstream log_file;
    if (options.metrics_csv) {
        const bool append = options.resume_from && std::filesystem::exists(*options.metrics_csv);
        log_file.open(*options.metrics_csv, append ? std::ios::app : std::ios::trunc);
        if (!log_file) throw DataError("cannot write " + options.metrics_csv->string());
        if (!append) log_file << kMetricsHeader << '\n';
    }

    const std::int64_t end = options.stop_at ? std::min(*options.stop_at, cfg.total_iters) : cfg.total_iters;
    for (std::int64_t t = state.iteration; t < end; ++t) {
        std::vector<const PointCloud*> lab;
        const auto lab_idx = lab_sampler.take(t * cfg.batch_labeled, cfg.batch_labeled);
        for (int i : lab_idx) lab.push_back(&labeled.scenes[static_cast<std::size_t>(i)]);

        std::vector<UnlabeledItem> unl;
        if (full_labels && cfg.full_label_source == FullLabelSource::SameScene) {
            for (int i : lab_idx) {
                unl.push_back({&pool.scenes[static_cast<std::size_t>(i)], fixed.empty() ? nullptr : &fixed[static_cast<std::size_t>(i)]});
            }
        } else {
            for (int i : unl_sampler.take(t * cfg.batch_unlabeled, cfg.batch_unlabeled)) {
                unl.push_back({&pool.scenes[static_cast<std::size_t>(i)], fixed.empty() ? nullptr : &fixed[static_cast<std::size_t>(i)]});
            }
        }

        const StepReport rep = train_step(state, lab, unl, cfg);
        if (options.on_step) options.on_step(rep);

        const std::int64_t done = t + 1;
        const bool do_eval = eval_set != nullptr && !eval_set->empty() &&
                             ((cfg.eval_every > 0 && done % cfg.eval_every == 0) || done == cfg.total_iters);
        const bool do_log = do_eval || (cfg.log_every > 0 && done % cfg.log_every == 0) || done == cfg.total_iters;
        if (!do_log) continue;
        LogRow row{done, rep.lr, rep.loss_l, rep.loss_u, rep.gate_rate, rep.mask_rate, std::nullopt, std::nullopt};
        if (do_eval) {
            auto ev = evaluate(state.params, *eval_set, cfg.augment.preset);
            row.miou = ev.scores.miou;
            row.macc = ev.scores.macc;
            if (done == cfg.total_iters) result.final_eval = std::move(ev);
        }
        if (log_file.is_open()) log_file << row.csv() << '\n' << std::flush;
        result.log.push_back(row);
    }

    if (!result.final_eval && eval_set != nullptr && !eval_set->empty() && state.iteration == cfg.total_iters) {
        result.final_eval = evaluate(state.params, *eval_set, cfg.augment.preset);
    }
    if (options.state_out) state.save(*options.state_out, cfg.checkpoint_bank);
    return result;
}

} // namespace gpcl
