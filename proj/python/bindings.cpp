#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gpcl/augment.hpp"
#include "gpcl/error.hpp"
#include "gpcl/losses.hpp"
#include "gpcl/metrics.hpp"
#include "gpcl/model.hpp"
#include "gpcl/sampling.hpp"
#include "gpcl/synth.hpp"
#include "gpcl/trainer.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

namespace {

py::dict loss_dict(const gpcl::LossValue& lv) {
    py::dict grads;
    for (const auto& [k, g] : lv.grads) grads[py::str(k)] = g;
    return py::dict("value"_a = lv.value, "grads"_a = grads);
}

gpcl::PseudoLabels make_pl(std::vector<int> labels, gpcl::Vector confidence) {
    if (static_cast<Eigen::Index>(labels.size()) != confidence.size()) {
        throw gpcl::InvalidArgument("labels and confidences differ in length");
    }
    return {std::move(labels), std::move(confidence)};
}

gpcl::TrainConfig config_from(const py::dict& overrides, gpcl::Preset preset) {
    auto cfg = gpcl::TrainConfig::synthetic(preset);
    for (const auto& [k, v] : overrides) cfg.set(py::str(k), py::str(v));
    return cfg;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Guided point contrastive learning for semi-supervised point-cloud segmentation";

    py::register_exception<gpcl::InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<gpcl::DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<gpcl::NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<gpcl::EmptyBank>(m, "EmptyBank", PyExc_RuntimeError);
    py::register_exception<gpcl::OverlapUnsatisfiable>(m, "OverlapUnsatisfiable", PyExc_RuntimeError);

    m.attr("IGNORE_LABEL") = gpcl::kIgnoreLabel;

    py::class_<gpcl::PointCloud>(m, "PointCloud")
        .def(py::init([](gpcl::Coords coords, gpcl::Matrix feats, std::vector<int> labels, int class_count) {
                 return gpcl::PointCloud::from_arrays(std::move(coords), std::move(feats), std::move(labels), class_count);
             }),
             "coords"_a, "feats"_a, "labels"_a = std::vector<int>{}, "class_count"_a)
        .def_readwrite("coords", &gpcl::PointCloud::coords)
        .def_readwrite("feats", &gpcl::PointCloud::feats)
        .def_readwrite("labels", &gpcl::PointCloud::labels)
        .def_readwrite("origin_ids", &gpcl::PointCloud::origin_ids)
        .def_readwrite("class_count", &gpcl::PointCloud::class_count)
        .def("__len__", &gpcl::PointCloud::size)
        .def("subset", [](const gpcl::PointCloud& c, const std::vector<int>& idx) { return c.subset(idx); })
        .def("validate", &gpcl::PointCloud::validate);

    m.def("save_scene", &gpcl::save_scene, "cloud"_a, "path"_a);
    m.def("load_scene", &gpcl::load_scene, "path"_a);

    // synth
    m.def(
        "gen_scene",
        [](const std::string& preset, std::uint64_t seed, std::uint64_t scene_seed, double rare_class_fraction) {
            auto cfg = gpcl::parse_preset(preset) == gpcl::Preset::Indoor ? gpcl::SynthConfig::indoor_default()
                                                                          : gpcl::SynthConfig::outdoor_default();
            cfg.seed = seed;
            cfg.rare_class_fraction = rare_class_fraction;
            return gpcl::gen_scene(cfg, scene_seed);
        },
        "preset"_a = "indoor", "seed"_a = 0, "scene_seed"_a = 0, "rare_class_fraction"_a = 0.0);

    // augment
    py::class_<gpcl::ViewPair>(m, "ViewPair")
        .def_readonly("view1", &gpcl::ViewPair::view1)
        .def_readonly("view2", &gpcl::ViewPair::view2)
        .def_readonly("matches", &gpcl::ViewPair::matches);
    m.def(
        "make_view_pair",
        [](const gpcl::PointCloud& cloud, const std::string& preset, std::uint64_t seed, std::uint64_t pair_seed,
           int min_overlap_points) {
            auto cfg = gpcl::AugmentConfig::for_preset(gpcl::parse_preset(preset));
            cfg.seed = seed;
            if (min_overlap_points > 0) cfg.min_overlap_points = min_overlap_points;
            return gpcl::make_view_pair(cloud, cfg, pair_seed);
        },
        "cloud"_a, "preset"_a = "indoor", "seed"_a = 0, "pair_seed"_a = 0, "min_overlap_points"_a = 0);
    m.def("square_crop", &gpcl::square_crop, "cloud"_a, "center"_a, "size"_a);
    m.def("sector_crop", &gpcl::sector_crop, "cloud"_a, "heading"_a, "fov"_a);
    m.def("rigid_transform", &gpcl::rigid_transform, "cloud"_a, "rotation_z"_a, "flip_x"_a = false, "flip_y"_a = false,
          "scale"_a = 1.0);
    m.def("match_points", &gpcl::match_points, "view1"_a, "view2"_a);

    // losses
    m.def(
        "cross_entropy", [](const gpcl::Matrix& s, const std::vector<int>& y) { return loss_dict(gpcl::cross_entropy(s, y)); },
        "scores"_a, "labels"_a);
    m.def(
        "pseudo_labels",
        [](const gpcl::Matrix& s) {
            const auto pl = gpcl::pseudo_labels(s);
            return py::make_tuple(pl.labels, pl.confidence);
        },
        "scores"_a);
    m.def(
        "guided_contrastive",
        [](const gpcl::MatchList& positives, const gpcl::Matrix& e1, const gpcl::Matrix& e2, std::vector<int> labels1,
           gpcl::Vector conf1, std::vector<int> labels2, gpcl::Vector conf2, std::vector<int> neg1, std::vector<int> neg2,
           double tau, double gamma, bool label_guidance, bool confidence_guidance) {
            gpcl::GuidedLossConfig cfg{tau, gamma, label_guidance, confidence_guidance, false};
            cfg.validate();
            const gpcl::Negatives negs = gpcl::InCloudNegatives{std::move(neg1), std::move(neg2)};
            return loss_dict(gpcl::guided_contrastive(positives, e1, e2, make_pl(std::move(labels1), std::move(conf1)),
                                                      make_pl(std::move(labels2), std::move(conf2)), negs, cfg));
        },
        "positives"_a, "e1"_a, "e2"_a, "labels1"_a, "conf1"_a, "labels2"_a, "conf2"_a, "neg1"_a, "neg2"_a, "tau"_a = 0.1,
        "gamma"_a = 0.75, "label_guidance"_a = true, "confidence_guidance"_a = true);
    m.def(
        "point_infonce",
        [](const gpcl::MatchList& p, const gpcl::Matrix& e1, const gpcl::Matrix& e2, double tau) {
            return loss_dict(gpcl::point_infonce(p, e1, e2, tau));
        },
        "positives"_a, "e1"_a, "e2"_a, "tau"_a = 0.1);
    m.def(
        "mse_consistency",
        [](const gpcl::MatchList& p, const gpcl::Matrix& e1, const gpcl::Matrix& e2) { return loss_dict(gpcl::mse_consistency(p, e1, e2)); },
        "matches"_a, "e1"_a, "e2"_a);

    // sampling
    m.def(
        "cbs_positive_pairs",
        [](const gpcl::MatchList& matches, const std::vector<int>& first_labels, int class_count, int k_p, std::uint64_t seed) {
            return gpcl::cbs_positive_pairs(gpcl::PairPool::build(matches, first_labels, class_count), k_p, seed);
        },
        "matches"_a, "first_labels"_a, "class_count"_a, "k_p"_a, "seed"_a = 0);
    m.def("random_positive_pairs", &gpcl::random_positive_pairs, "matches"_a, "k_p"_a, "seed"_a = 0);

    py::class_<gpcl::MemoryBank>(m, "MemoryBank")
        .def(py::init<int, int, int, int>(), "class_count"_a, "dim"_a, "capacity"_a, "update_quota"_a)
        .def("push", &gpcl::MemoryBank::push, "cls"_a, "embedding"_a)
        .def(
            "sample",
            [](const gpcl::MemoryBank& b, int k_n, std::uint64_t seed) {
                const auto negs = b.sample(k_n, seed);
                return py::make_tuple(negs.keys, negs.tags);
            },
            "k_n"_a, "seed"_a = 0)
        .def("queue",
             [](const gpcl::MemoryBank& b, int cls) {
                 const auto& q = b.queue(cls);
                 gpcl::Matrix out(static_cast<Eigen::Index>(q.size()), b.dim());
                 for (std::size_t k = 0; k < q.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = q[k];
                 return out;
             })
        .def_property_readonly("population", &gpcl::MemoryBank::population);

    // model
    py::class_<gpcl::ModelParams>(m, "ModelParams")
        .def_static("load", &gpcl::load_checkpoint, "path"_a)
        .def("save", [](const gpcl::ModelParams& p, const std::filesystem::path& path) { gpcl::save_checkpoint(p, path); })
        .def("bitwise_equal", &gpcl::ModelParams::bitwise_equal);
    m.def(
        "forward",
        [](const gpcl::ModelParams& p, const gpcl::PointCloud& cloud) {
            const auto act = gpcl::forward(p, cloud);
            return py::dict("feat"_a = act.feat, "scores"_a = act.scores, "embed"_a = act.embed);
        },
        "params"_a, "cloud"_a);
    m.def(
        "predict",
        [](const gpcl::ModelParams& p, const gpcl::PointCloud& cloud, const std::string& preset) {
            return gpcl::predict(p, cloud, gpcl::parse_preset(preset));
        },
        "params"_a, "cloud"_a, "preset"_a = "indoor");

    // metrics
    m.def(
        "segmentation_scores",
        [](const std::vector<int>& truth, const std::vector<int>& pred, int class_count) {
            gpcl::ConfusionMatrix cm(class_count);
            cm.accumulate(truth, pred);
            const auto s = gpcl::score(cm);
            return py::dict("miou"_a = s.miou, "macc"_a = s.macc, "iou"_a = s.iou, "recall"_a = s.recall);
        },
        "truth"_a, "predicted"_a, "class_count"_a);

    // trainer
    m.def(
        "train",
        [](const std::vector<gpcl::PointCloud>& labeled, const std::vector<gpcl::PointCloud>& unlabeled,
           const std::vector<gpcl::PointCloud>& eval, const py::dict& config, const std::string& preset) {
            auto as_set = [](const std::vector<gpcl::PointCloud>& clouds) {
                gpcl::SceneSet s;
                s.scenes = clouds;
                s.group_ids.resize(clouds.size());
                for (std::size_t i = 0; i < clouds.size(); ++i) s.group_ids[i] = static_cast<int>(i);
                s.class_count = clouds.empty() ? 0 : clouds.front().class_count;
                return s;
            };
            const auto cfg = config_from(config, gpcl::parse_preset(preset));
            const auto lab = as_set(labeled), unl = as_set(unlabeled), ev = as_set(eval);
            gpcl::TrainResult r;
            {
                py::gil_scoped_release release;
                r = gpcl::train_run(lab, unl, ev.empty() ? nullptr : &ev, cfg);
            }
            py::list log;
            for (const auto& row : r.log) {
                log.append(py::dict("iter"_a = row.iter, "lr"_a = row.lr, "loss_l"_a = row.loss_l, "loss_u"_a = row.loss_u,
                                    "gate_rate"_a = row.gate_rate, "mask_rate"_a = row.mask_rate, "miou"_a = row.miou));
            }
            py::object miou = py::none();
            if (r.final_eval) miou = py::float_(r.final_eval->scores.miou);
            return py::dict("params"_a = r.state.params, "log"_a = log, "miou"_a = miou);
        },
        "labeled"_a, "unlabeled"_a = std::vector<gpcl::PointCloud>{}, "eval"_a = std::vector<gpcl::PointCloud>{},
        "config"_a = py::dict(), "preset"_a = "indoor");
}
