// gpcl: command-line driver for data generation, splitting, training,
// evaluation and embedding export.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gpcl/augment.hpp"
#include "gpcl/core.hpp"
#include "gpcl/error.hpp"
#include "gpcl/losses.hpp"
#include "gpcl/metrics.hpp"
#include "gpcl/model.hpp"
#include "gpcl/synth.hpp"
#include "gpcl/trainer.hpp"
#include "run_manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitBadArgs = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

using gpcl::cli::RunManifest;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw gpcl::DataError("cannot create output directory " + dir.string());
    const auto probe = dir / ".gpcl_write_probe";
    {
        std::ofstream out(probe);
        if (!out) throw gpcl::DataError("output directory " + dir.string() + " is not writable");
    }
    fs::remove(probe, ec);
}

// Accepts a manifest file or a directory holding manifest.csv.
fs::path resolve_manifest(const fs::path& p) {
    if (fs::is_directory(p)) return p / "manifest.csv";
    return p;
}

void print_histogram(const gpcl::SceneSet& set) {
    std::vector<long> counts(static_cast<std::size_t>(set.class_count), 0);
    long ignored = 0, total = 0;
    for (const auto& s : set.scenes) {
        for (int l : s.labels) {
            ++total;
            if (l < 0) {
                ++ignored;
            } else {
                ++counts[static_cast<std::size_t>(l)];
            }
        }
    }
    std::cout << "class,points,share\n";
    for (std::size_t c = 0; c < counts.size(); ++c) {
        std::cout << c << ',' << counts[c] << ',' << std::setprecision(6)
                  << (total ? static_cast<double>(counts[c]) / static_cast<double>(total) : 0.0) << '\n';
    }
    if (ignored) std::cout << "ignore," << ignored << ",\n";
}

// ---------------------------------------------------------------------------

struct GenArgs {
    std::string preset = "indoor";
    int scenes = 0;
    std::uint64_t seed = 0;
    std::uint64_t first_scene = 0;
    int scenes_per_group = 1;
    std::string out;
    double rare_fraction = 0.0;
    int points_min = 0;
    int points_max = 0;
    int objects_min = -1;
    int objects_max = -1;
    double noise = -1.0;
};

int cmd_gen_data(const GenArgs& a, RunManifest& manifest) {
    if (a.scenes < 1) throw gpcl::InvalidArgument("--scenes must be at least 1");
    auto cfg = gpcl::parse_preset(a.preset) == gpcl::Preset::Indoor ? gpcl::SynthConfig::indoor_default()
                                                                    : gpcl::SynthConfig::outdoor_default();
    cfg.seed = a.seed;
    cfg.rare_class_fraction = a.rare_fraction;
    if (a.points_min > 0) cfg.points_min = a.points_min;
    if (a.points_max > 0) cfg.points_max = a.points_max;
    if (a.objects_min >= 0) cfg.object_count_min = a.objects_min;
    if (a.objects_max >= 0) cfg.object_count_max = a.objects_max;
    if (a.noise >= 0.0) cfg.noise_sigma = a.noise;
    cfg.validate();

    const fs::path out(a.out);
    ensure_dir(out);
    const auto t0 = std::chrono::steady_clock::now();
    const auto set = gpcl::gen_scene_set(cfg, a.scenes, a.scenes_per_group, a.first_scene);
    std::vector<gpcl::ManifestEntry> entries;
    for (std::size_t i = 0; i < set.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "scene_%04zu.gpcl", i);
        gpcl::save_scene(set.scenes[i], out / name);
        entries.push_back({name, set.group_ids[i]});
    }
    gpcl::write_manifest(entries, out / "manifest.csv");
    manifest.add_timing("generate_seconds", seconds_since(t0));

    print_histogram(set);
    std::cout << "wrote " << set.size() << " scenes to " << out.string() << '\n';

    manifest.set_config({{"preset", a.preset},
                         {"scenes", a.scenes},
                         {"scenes_per_group", a.scenes_per_group},
                         {"first_scene", a.first_scene},
                         {"extent", {cfg.extent_min, cfg.extent_max}},
                         {"objects", {cfg.object_count_min, cfg.object_count_max}},
                         {"points", {cfg.points_min, cfg.points_max}},
                         {"class_count", cfg.class_count},
                         {"noise_sigma", cfg.noise_sigma},
                         {"rare_class_fraction", cfg.rare_class_fraction}});
    manifest.add_seed("seed", a.seed);
    for (const auto& e : entries) manifest.add_output("scene", out / e.path);
    manifest.add_output("manifest", out / "manifest.csv");
    manifest.save(out / "run_manifest.json");
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct SplitArgs {
    std::string manifest;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    bool sequence_aware = false;
    std::string transductive;
    std::string out;
};

int cmd_split(const SplitArgs& a, RunManifest& manifest) {
    if (!(a.ratio > 0.0 && a.ratio <= 1.0)) throw gpcl::InvalidArgument("--ratio must lie in (0, 1]");
    const fs::path in = resolve_manifest(a.manifest);
    const auto entries = gpcl::read_manifest(in);
    if (entries.empty()) throw gpcl::DataError("manifest " + in.string() + " lists no scenes");
    std::vector<int> groups;
    for (const auto& e : entries) groups.push_back(e.group_id);
    const auto idx = gpcl::split_indices(groups, a.ratio, a.sequence_aware, a.seed);

    std::vector<gpcl::ManifestEntry> labeled, unlabeled;
    auto absolute = [](gpcl::ManifestEntry e) {
        e.path = fs::absolute(e.path).lexically_normal();
        return e;
    };
    for (int i : idx.labeled) labeled.push_back(absolute(entries[static_cast<std::size_t>(i)]));
    for (int i : idx.unlabeled) unlabeled.push_back(absolute(entries[static_cast<std::size_t>(i)]));
    if (!a.transductive.empty()) {
        const fs::path extra = resolve_manifest(a.transductive);
        for (const auto& e : gpcl::read_manifest(extra)) unlabeled.push_back(absolute(e));
        manifest.add_input("transductive_manifest", extra);
    }

    const fs::path out(a.out);
    ensure_dir(out);
    gpcl::write_manifest(labeled, out / "labeled.csv");
    gpcl::write_manifest(unlabeled, out / "unlabeled.csv");
    std::cout << "labeled " << labeled.size() << ", unlabeled " << unlabeled.size() << '\n';

    manifest.set_config({{"ratio", a.ratio}, {"sequence_aware", a.sequence_aware}, {"transductive", !a.transductive.empty()}});
    manifest.add_seed("seed", a.seed);
    manifest.add_input("manifest", in);
    manifest.add_output("labeled", out / "labeled.csv");
    manifest.add_output("unlabeled", out / "unlabeled.csv");
    manifest.save(out / "run_manifest.json");
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string labeled;
    std::string unlabeled;
    std::string eval;
    std::string config;
    std::vector<std::string> sets;
    std::string preset = "indoor";
    std::string strategy;
    std::string sampler;
    std::int64_t iters = -1;
    std::int64_t warmup = -1;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string pseudo_from;
    std::string init_checkpoint;
    std::string resume;
    std::int64_t stop_at = -1;
    std::string out;
    bool quiet = false;
};

gpcl::SceneSet load_optional_set(const std::string& path) {
    if (path.empty()) return {};
    return gpcl::load_scene_set(resolve_manifest(path));
}

int cmd_train(const TrainArgs& a, RunManifest& manifest) {
    auto cfg = gpcl::TrainConfig::synthetic(gpcl::parse_preset(a.preset));
    if (!a.config.empty()) cfg = gpcl::TrainConfig::load(a.config, cfg);
    for (const auto& kv : a.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw gpcl::InvalidArgument("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!a.strategy.empty()) cfg.strategy = gpcl::parse_strategy(a.strategy);
    if (!a.sampler.empty()) cfg.sampler = gpcl::parse_sampler(a.sampler);
    if (a.iters >= 0) cfg.total_iters = a.iters;
    if (a.warmup >= 0) cfg.warmup_iters = a.warmup;
    if (a.seed_given) cfg.seed = a.seed;
    if (!a.pseudo_from.empty()) cfg.pseudo_from = a.pseudo_from;
    if (!a.init_checkpoint.empty()) cfg.init_checkpoint = a.init_checkpoint;
    if (cfg.warmup_iters > cfg.total_iters) cfg.warmup_iters = cfg.total_iters;
    cfg.validate();

    const auto t_load = std::chrono::steady_clock::now();
    const auto labeled = gpcl::load_scene_set(resolve_manifest(a.labeled));
    if (labeled.empty()) throw gpcl::DataError("labeled manifest lists no scenes");
    const auto unlabeled = load_optional_set(a.unlabeled);
    const auto eval = load_optional_set(a.eval);
    cfg.model.in_dim = 3 + labeled.scenes.front().feat_dim();
    cfg.model.class_count = labeled.class_count;
    manifest.add_timing("load_seconds", seconds_since(t_load));

    const fs::path out(a.out);
    ensure_dir(out);
    cfg.save(out / "config.txt");

    gpcl::RunOptions opts;
    opts.metrics_csv = out / "metrics.csv";
    if (!a.resume.empty()) opts.resume_from = fs::path(a.resume);
    if (a.stop_at >= 0) opts.stop_at = a.stop_at;
    opts.state_out = out / "state.gpts";
    if (!a.quiet) {
        opts.on_step = [&cfg](const gpcl::StepReport& r) {
            const auto done = r.iteration + 1;
            if (cfg.log_every > 0 && done % std::max<std::int64_t>(cfg.log_every * 10, 1) != 0) return;
            std::cout << "iter " << done << " lr " << r.lr << " L_l " << r.loss_l;
            if (r.loss_u) std::cout << " L_u " << *r.loss_u << " gate " << r.gate_rate << " mask " << r.mask_rate;
            std::cout << '\n' << std::flush;
        };
    }

    const auto t_train = std::chrono::steady_clock::now();
    const auto result = gpcl::train_run(labeled, unlabeled, eval.empty() ? nullptr : &eval, cfg, opts);
    manifest.add_timing("train_seconds", seconds_since(t_train));
    gpcl::save_checkpoint(result.state.params, out / "model.gpck");

    if (result.final_eval) {
        const auto& s = result.final_eval->scores;
        std::cout << "final mIoU " << s.miou << " mAcc " << s.macc << '\n';
        gpcl::write_class_table(result.final_eval->confusion, out / "class_iou.csv");
    }
    std::cout << "stopped at iteration " << result.state.iteration << " of " << cfg.total_iters << '\n';

    json config = cfg.to_map();
    manifest.set_config(config);
    const auto streams = gpcl::RngStreams::from_seed(cfg.seed);
    manifest.add_seed("seed", cfg.seed);
    manifest.add_seed("init", streams.init);
    manifest.add_seed("data", streams.data);
    manifest.add_seed("augment", streams.augment);
    manifest.add_seed("sampler", streams.sampler);
    manifest.add_input("labeled_manifest", resolve_manifest(a.labeled));
    if (!a.unlabeled.empty()) manifest.add_input("unlabeled_manifest", resolve_manifest(a.unlabeled));
    if (!a.eval.empty()) manifest.add_input("eval_manifest", resolve_manifest(a.eval));
    if (!a.config.empty()) manifest.add_input("config", a.config);
    if (!a.resume.empty()) manifest.add_input("resume_state", a.resume);
    if (!cfg.pseudo_from.empty()) manifest.add_input("pseudo_from", cfg.pseudo_from);
    if (!cfg.init_checkpoint.empty()) manifest.add_input("init_checkpoint", cfg.init_checkpoint);
    manifest.add_output("config", out / "config.txt");
    manifest.add_output("checkpoint", out / "model.gpck");
    manifest.add_output("state", out / "state.gpts");
    manifest.add_output("metrics", out / "metrics.csv");
    if (result.final_eval) manifest.add_output("class_iou", out / "class_iou.csv");
    manifest.save(out / "run_manifest.json");
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string predictions;
    std::string manifest;
    std::string preset = "indoor";
    std::string out;
};

int cmd_eval(const EvalArgs& a, RunManifest& manifest) {
    if (a.checkpoint.empty() == a.predictions.empty()) {
        throw gpcl::InvalidArgument("pass exactly one of --checkpoint and --predictions");
    }
    const fs::path in = resolve_manifest(a.manifest);
    const auto set = gpcl::load_scene_set(in);
    if (set.empty()) throw gpcl::DataError("evaluation manifest lists no scenes");
    for (const auto& s : set.scenes) {
        if (!s.has_labels()) throw gpcl::DataError("evaluation scenes must carry labels");
    }
    manifest.add_input("manifest", in);

    gpcl::ConfusionMatrix cm(set.class_count);
    if (!a.checkpoint.empty()) {
        const auto params = gpcl::load_checkpoint(a.checkpoint);
        if (params.config.class_count != set.class_count) throw gpcl::DataError("checkpoint and scenes disagree on class count");
        cm = gpcl::evaluate(params, set, gpcl::parse_preset(a.preset)).confusion;
        manifest.add_input("checkpoint", a.checkpoint);
    } else {
        const fs::path pred_path = resolve_manifest(a.predictions);
        const auto pred = gpcl::load_scene_set(pred_path);
        if (pred.size() != set.size()) throw gpcl::DataError("prediction and evaluation manifests differ in length");
        for (std::size_t i = 0; i < set.size(); ++i) {
            if (!pred.scenes[i].has_labels() || pred.scenes[i].size() != set.scenes[i].size()) {
                throw gpcl::DataError("prediction scene " + std::to_string(i) + " does not match its evaluation scene");
            }
            cm.accumulate(set.scenes[i].labels, pred.scenes[i].labels);
        }
        manifest.add_input("predictions", pred_path);
    }

    const auto s = gpcl::score(cm);
    std::cout << "mIoU " << s.miou << "\nmAcc " << s.macc << '\n';
    for (int c = 0; c < set.class_count; ++c) {
        const auto& iou = s.iou[static_cast<std::size_t>(c)];
        std::cout << "class " << c << " IoU " << (iou ? std::to_string(*iou) : std::string("n/a")) << '\n';
    }
    if (!a.out.empty()) {
        const fs::path out(a.out);
        ensure_dir(out);
        gpcl::write_class_table(cm, out / "class_iou.csv");
        json report = {{"miou", s.miou}, {"macc", s.macc}, {"points", cm.total()}};
        {
            std::ofstream f(out / "report.json");
            if (!f) throw gpcl::DataError("cannot write report");
            f << report.dump(2) << '\n';
        }
        manifest.set_config({{"preset", a.preset}});
        manifest.add_output("class_iou", out / "class_iou.csv");
        manifest.add_output("report", out / "report.json");
        manifest.save(out / "run_manifest.json");
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct EmbedArgs {
    std::string checkpoint;
    std::string scene;
    std::string preset = "indoor";
    std::string out;
};

int cmd_embed(const EmbedArgs& a, RunManifest& manifest) {
    const auto params = gpcl::load_checkpoint(a.checkpoint);
    const auto cloud = gpcl::load_scene(a.scene);
    if (cloud.feat_dim() + 3 != params.config.in_dim) throw gpcl::DataError("scene features do not match the checkpoint");
    const auto act = gpcl::forward(params, gpcl::prepare_eval(cloud, gpcl::parse_preset(a.preset)));
    const auto pl = gpcl::pseudo_labels(act.scores);

    const fs::path out(a.out);
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw gpcl::DataError("cannot write " + out.string());
    f << "origin_id,class,pseudo_class,confidence";
    for (Eigen::Index d = 0; d < act.embed.cols(); ++d) f << ",e_" << d;
    f << '\n' << std::setprecision(9);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        f << cloud.origin_ids[i] << ',' << (cloud.has_labels() ? cloud.labels[i] : gpcl::kIgnoreLabel) << ','
          << pl.labels[i] << ',' << pl.confidence[r];
        for (Eigen::Index d = 0; d < act.embed.cols(); ++d) f << ',' << act.embed(r, d);
        f << '\n';
    }
    f.close();
    std::cout << "wrote " << cloud.size() << " embeddings to " << out.string() << '\n';

    manifest.set_config({{"preset", a.preset}});
    manifest.add_input("checkpoint", a.checkpoint);
    manifest.add_input("scene", a.scene);
    manifest.add_output("embeddings", out);
    manifest.save(fs::path(out.string() + ".run_manifest.json"));
    return kExitOk;
}

// ---------------------------------------------------------------------------

int run_main(int argc, char** argv);

struct ReplayArgs {
    std::string manifest;
    bool check = false;
};

int cmd_replay(const ReplayArgs& a) {
    std::ifstream in(a.manifest);
    if (!in) throw gpcl::DataError("cannot open " + a.manifest);
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw gpcl::DataError(std::string("malformed run manifest: ") + e.what());
    }
    auto args = m.at("argv").get<std::vector<std::string>>();
    if (args.size() < 2 || args[1] == "replay") throw gpcl::DataError("run manifest holds no replayable command");
    const fs::path cwd = m.at("cwd").get<std::string>();
    const auto recorded = m.at("outputs");

    fs::current_path(cwd);
    std::vector<char*> raw;
    for (auto& s : args) raw.push_back(s.data());
    const int code = run_main(static_cast<int>(raw.size()), raw.data());
    if (code != kExitOk || !a.check) return code;

    int mismatches = 0;
    for (const auto& o : recorded) {
        const auto path = o.at("path").get<std::string>();
        const auto now = gpcl::cli::git_blob_hash(path);
        if (now != o.at("hash").get<std::string>()) {
            std::cerr << "mismatch: " << path << '\n';
            ++mismatches;
        }
    }
    std::cout << "replay: " << recorded.size() - static_cast<std::size_t>(mismatches) << '/' << recorded.size()
              << " outputs identical\n";
    return mismatches ? kExitData : kExitOk;
}

// ---------------------------------------------------------------------------

int run_main(int argc, char** argv) {
    CLI::App app{"Guided point contrastive learning for semi-supervised point-cloud segmentation"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* c_gen = app.add_subcommand("gen-data", "Generate synthetic scenes and a manifest");
    c_gen->add_option("--preset", gen.preset, "indoor or outdoor")->check(CLI::IsMember({"indoor", "outdoor"}));
    c_gen->add_option("--scenes", gen.scenes, "Number of scenes")->required();
    c_gen->add_option("--seed", gen.seed, "Generator seed");
    c_gen->add_option("--first-scene", gen.first_scene, "Scene seed of the first scene");
    c_gen->add_option("--scenes-per-group", gen.scenes_per_group, "Consecutive scenes sharing a group id")
        ->check(CLI::PositiveNumber);
    c_gen->add_option("--rare-fraction", gen.rare_fraction, "Point share of the rare last class");
    c_gen->add_option("--points-min", gen.points_min);
    c_gen->add_option("--points-max", gen.points_max);
    c_gen->add_option("--objects-min", gen.objects_min);
    c_gen->add_option("--objects-max", gen.objects_max);
    c_gen->add_option("--noise", gen.noise, "Coordinate noise sigma in meters");
    c_gen->add_option("--out", gen.out, "Output directory")->required();

    SplitArgs split;
    auto* c_split = app.add_subcommand("split", "Split a scene manifest into labeled and unlabeled parts");
    c_split->add_option("--manifest", split.manifest, "Scene manifest or directory")->required();
    c_split->add_option("--ratio", split.ratio, "Labeled ratio in (0, 1]")->required();
    c_split->add_option("--seed", split.seed);
    c_split->add_flag("--sequence-aware", split.sequence_aware, "Keep groups together where possible");
    c_split->add_option("--transductive", split.transductive, "Append these scenes to the unlabeled part");
    c_split->add_option("--out", split.out, "Output directory")->required();

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train a model");
    c_train->add_option("--labeled", train.labeled, "Labeled manifest")->required();
    c_train->add_option("--unlabeled", train.unlabeled, "Unlabeled manifest");
    c_train->add_option("--eval", train.eval, "Evaluation manifest");
    c_train->add_option("--config", train.config, "key = value config file");
    c_train->add_option("--set", train.sets, "Override a config key (key=value)");
    c_train->add_option("--preset", train.preset, "Schedule preset: indoor or outdoor")
        ->check(CLI::IsMember({"indoor", "outdoor"}));
    c_train->add_option("--strategy", train.strategy, "sup_only|mse|cosine|point_infonce|self_training|guided");
    c_train->add_option("--sampler", train.sampler, "random|cbs");
    c_train->add_option("--iters", train.iters, "Total iterations");
    c_train->add_option("--warmup", train.warmup, "Supervised-only warmup iterations");
    auto* seed_opt = c_train->add_option("--seed", train.seed);
    c_train->add_option("--pseudo-from", train.pseudo_from, "Checkpoint producing self-training labels");
    c_train->add_option("--init-checkpoint", train.init_checkpoint, "Start from these weights");
    c_train->add_option("--resume", train.resume, "Resume from a training-state file");
    c_train->add_option("--stop-at", train.stop_at, "Stop after this many iterations (schedule unchanged)");
    c_train->add_option("--out", train.out, "Output directory")->required();
    c_train->add_flag("--quiet", train.quiet);

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Score a checkpoint or stored predictions");
    c_eval->add_option("--checkpoint", ev.checkpoint);
    c_eval->add_option("--predictions", ev.predictions, "Manifest of scenes whose labels are predictions");
    c_eval->add_option("--manifest", ev.manifest, "Labeled evaluation manifest")->required();
    c_eval->add_option("--preset", ev.preset)->check(CLI::IsMember({"indoor", "outdoor"}));
    c_eval->add_option("--out", ev.out, "Output directory for the report");

    EmbedArgs emb;
    auto* c_embed = app.add_subcommand("embed", "Dump per-point embeddings as CSV");
    c_embed->add_option("--checkpoint", emb.checkpoint)->required();
    c_embed->add_option("--scene", emb.scene, "Scene file")->required();
    c_embed->add_option("--preset", emb.preset)->check(CLI::IsMember({"indoor", "outdoor"}));
    c_embed->add_option("--out", emb.out, "CSV path")->required();

    ReplayArgs replay;
    auto* c_replay = app.add_subcommand("replay", "Re-run the command recorded in a run manifest");
    c_replay->add_option("manifest", replay.manifest)->required();
    c_replay->add_flag("--check", replay.check, "Compare output hashes with the recorded ones");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitBadArgs;
    }

    const std::vector<std::string> args(argv, argv + argc);
    try {
        if (c_gen->parsed()) {
            RunManifest m("gen-data", args);
            return cmd_gen_data(gen, m);
        }
        if (c_split->parsed()) {
            RunManifest m("split", args);
            return cmd_split(split, m);
        }
        if (c_train->parsed()) {
            train.seed_given = seed_opt->count() > 0;
            RunManifest m("train", args);
            return cmd_train(train, m);
        }
        if (c_eval->parsed()) {
            RunManifest m("eval", args);
            return cmd_eval(ev, m);
        }
        if (c_embed->parsed()) {
            RunManifest m("embed", args);
            return cmd_embed(emb, m);
        }
        if (c_replay->parsed()) return cmd_replay(replay);
    } catch (const gpcl::InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitBadArgs;
    } catch (const gpcl::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const gpcl::Error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitBadArgs;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run_main(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "fatal: " << e.what() << '\n';
        return 1;
    }
}
