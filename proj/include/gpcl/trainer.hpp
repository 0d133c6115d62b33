#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gpcl/augment.hpp"
#include "gpcl/core.hpp"
#include "gpcl/losses.hpp"
#include "gpcl/metrics.hpp"
#include "gpcl/model.hpp"
#include "gpcl/sampling.hpp"

namespace gpcl {

enum class Strategy { SupOnly, Mse, Cosine, PointInfoNce, SelfTraining, Guided };
enum class SamplerKind { Random, Cbs };
enum class OptimizerKind { SgdPoly, AdamCosine };
// Where unlabeled scenes come from when the unlabeled split is empty.
enum class FullLabelSource { Independent, SameScene };

Strategy parse_strategy(std::string_view s);
std::string_view strategy_name(Strategy s);
SamplerKind parse_sampler(std::string_view s);
std::string_view sampler_name(SamplerKind s);
OptimizerKind parse_optimizer(std::string_view s);
std::string_view optimizer_name(OptimizerKind o);

struct TrainConfig {
    Strategy strategy = Strategy::Guided;
    double lambda = 0.1;
    GuidedLossConfig guided;
    SamplerKind sampler = SamplerKind::Cbs;
    int k_p = 1024;
    int k_n = 2048;

    int bank_capacity = 256;
    int bank_update = 8;
    // Bank negatives replace in-cloud negatives once the bank holds K_n * ratio entries.
    double bank_warm_ratio = 0.25;
    // Only points with confidence >= gamma enter the bank.
    bool bank_confidence_filter = true;
    bool checkpoint_bank = true;

    OptimizerKind optimizer = OptimizerKind::SgdPoly;
    double lr = 0.2;
    double poly_power = 0.9;
    double momentum = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;

    int batch_labeled = 4;
    int batch_unlabeled = 4;
    std::int64_t total_iters = 2000;
    std::int64_t warmup_iters = 200;
    std::uint64_t seed = 0;
    std::int64_t eval_every = 500;
    std::int64_t log_every = 10;

    ModelConfig model;
    AugmentConfig augment;
    FullLabelSource full_label_source = FullLabelSource::Independent;

    std::string init_checkpoint;
    std::string pseudo_from;
    std::string dump_dir;

    void validate() const;

    // Scaled schedule for the synthetic scene presets.
    static TrainConfig synthetic(Preset preset);

    // Flat `key = value` text, one field per line; '#' starts a comment.
    [[nodiscard]] std::map<std::string, std::string> to_map() const;
    void set(const std::string& key, const std::string& value);
    // Keys not present keep the value from `base`.
    static TrainConfig from_map(const std::map<std::string, std::string>& kv, TrainConfig base);
    static TrainConfig parse(std::istream& in, TrainConfig base);
    static TrainConfig load(const std::filesystem::path& path, TrainConfig base);
    static TrainConfig load(const std::filesystem::path& path);
    void write(std::ostream& out) const;
    void save(const std::filesystem::path& path) const;
};

double learning_rate(const TrainConfig& cfg, std::int64_t iteration);

struct RngStreams {
    std::uint64_t init = 0;
    std::uint64_t data = 0;
    std::uint64_t augment = 0;
    std::uint64_t sampler = 0;

    static RngStreams from_seed(std::uint64_t seed);
    bool operator==(const RngStreams&) const = default;
};

struct TrainState {
    ModelParams params;
    // SGD uses moment1 as velocity; Adam uses both.
    ModelParams moment1;
    ModelParams moment2;
    MemoryBank bank;
    std::int64_t iteration = 0;
    RngStreams streams;

    static TrainState initial(const TrainConfig& cfg);

    void write(std::ostream& out, bool include_bank = true) const;
    static TrainState read(std::istream& in);
    void save(const std::filesystem::path& path, bool include_bank = true) const;
    static TrainState load(const std::filesystem::path& path);
};

struct StepReport {
    std::int64_t iteration = 0;
    double lr = 0.0;
    double loss_l = 0.0;
    std::optional<double> loss_u;
    double loss = 0.0;
    double gate_rate = 0.0;
    double mask_rate = 0.0;
    int skipped_pairs = 0;
};

struct UnlabeledItem {
    const PointCloud* cloud = nullptr;
    // Self-training targets indexed by origin id.
    const std::vector<int>* fixed_labels = nullptr;
};

// The labeled branch: full scene, xy-centered for the indoor preset, random
// rigid transform.
PointCloud prepare_labeled(const PointCloud& cloud, const TrainConfig& cfg, std::uint64_t seed);

// Scene as seen at evaluation time (xy-centered for the indoor preset).
PointCloud prepare_eval(const PointCloud& cloud, Preset preset);

StepReport train_step(TrainState& state, const std::vector<const PointCloud*>& labeled,
                      const std::vector<UnlabeledItem>& unlabeled, const TrainConfig& cfg);

struct EvalResult {
    ConfusionMatrix confusion;
    SegmentationScores scores;
};

std::vector<int> predict(const ModelParams& params, const PointCloud& cloud, Preset preset);
EvalResult evaluate(const ModelParams& params, const SceneSet& eval_set, Preset preset);

// Fixed targets for self-training, indexed by origin id.
std::vector<std::vector<int>> make_fixed_pseudo_labels(const ModelParams& teacher, const SceneSet& set,
                                                       Preset preset);

// Deterministic index stream over n items: per-epoch reshuffles derived from the seed.
class EpochSampler {
public:
    EpochSampler(std::size_t n, std::uint64_t seed);
    // Items at positions [start, start + count) of the infinite stream.
    [[nodiscard]] std::vector<int> take(std::int64_t start, int count) const;

private:
    std::size_t n_;
    std::uint64_t seed_;
    mutable std::int64_t cached_epoch_ = -1;
    mutable std::vector<int> cached_;
};

inline constexpr std::string_view kMetricsHeader = "iter,lr,loss_l,loss_u,gate_rate,mask_rate,miou,macc";

struct LogRow {
    std::int64_t iter = 0;
    double lr = 0.0;
    double loss_l = 0.0;
    std::optional<double> loss_u;
    double gate_rate = 0.0;
    double mask_rate = 0.0;
    std::optional<double> miou;
    std::optional<double> macc;

    [[nodiscard]] std::string csv() const;
};

struct RunOptions {
    std::optional<std::filesystem::path> metrics_csv;
    // Resume from this state checkpoint instead of starting fresh.
    std::optional<std::filesystem::path> resume_from;
    // Stop after this iteration (exclusive) and save the state; total_iters still sets the schedule.
    std::optional<std::int64_t> stop_at;
    std::optional<std::filesystem::path> state_out;
    std::function<void(const StepReport&)> on_step;
};

struct TrainResult {
    TrainState state;
    std::vector<LogRow> log;
    std::optional<EvalResult> final_eval;
};

TrainResult train_run(const SceneSet& labeled, const SceneSet& unlabeled, const SceneSet* eval_set,
                      const TrainConfig& cfg, const RunOptions& options = {});

} // namespace gpcl
