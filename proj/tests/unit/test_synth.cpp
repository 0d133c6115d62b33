#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gpcl/error.hpp"
#include "gpcl/synth.hpp"

using namespace gpcl;

namespace {

bool bitwise_equal(const PointCloud& a, const PointCloud& b) {
    return a.coords == b.coords && a.feats == b.feats && a.labels == b.labels && a.origin_ids == b.origin_ids &&
           a.class_count == b.class_count;
}

} // namespace

TEST_CASE("empty noiseless room lies on floor and wall planes") {
    auto cfg = SynthConfig::indoor_default();
    cfg.object_count_min = 0;
    cfg.object_count_max = 0;
    cfg.noise_sigma = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto cloud = gen_indoor_scene(cfg, s);
        const double lx = cloud.coords.col(0).maxCoeff();
        const double ly = cloud.coords.col(1).maxCoeff();
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            const auto p = cloud.coords.row(static_cast<Eigen::Index>(i));
            const int y = cloud.labels[i];
            REQUIRE((y == 0 || y == 1));
            if (y == 0) {
                CHECK(p.z() == 0.0);
            } else {
                const bool on_wall = p.x() == 0.0 || p.y() == 0.0 || p.x() == lx || p.y() == ly;
                CHECK(on_wall);
            }
        }
    }
}

TEST_CASE("scene generation is deterministic") {
    for (auto base : {SynthConfig::indoor_default(), SynthConfig::outdoor_default()}) {
        base.seed = 17;
        const auto a = gen_scene(base, 3);
        const auto b = gen_scene(base, 3);
        CHECK(bitwise_equal(a, b));
        const auto c = gen_scene(base, 4);
        CHECK_FALSE(bitwise_equal(a, c));
    }
}

TEST_CASE("indoor scenes honor the configured ranges") {
    const auto cfg = SynthConfig::indoor_default();
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto cloud = gen_indoor_scene(cfg, s);
        CHECK_NOTHROW(cloud.validate());
        CHECK(static_cast<int>(cloud.size()) >= cfg.points_min);
        CHECK(static_cast<int>(cloud.size()) <= cfg.points_max);
        CHECK(cloud.feat_dim() == cfg.feat_dim);
        CHECK(cloud.class_count == cfg.class_count);
        // Nothing pokes through the ceiling.
        CHECK(cloud.coords.col(2).maxCoeff() < 2.5 + 6 * cfg.noise_sigma);
    }
}

TEST_CASE("rare class share tracks the configured fraction") {
    auto cfg = SynthConfig::indoor_default();
    cfg.rare_class_fraction = 0.001;
    cfg.points_min = 100000;
    cfg.points_max = 100000;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto cloud = gen_indoor_scene(cfg, s);
        const auto rare = std::count(cloud.labels.begin(), cloud.labels.end(), cfg.class_count - 1);
        const double share = static_cast<double>(rare) / static_cast<double>(cloud.size());
        CHECK(share >= 0.0005);
        CHECK(share <= 0.002);
    }
}

TEST_CASE("outdoor ground only scene stays within range") {
    auto cfg = SynthConfig::outdoor_default();
    cfg.object_count_min = 0;
    cfg.object_count_max = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto cloud = gen_outdoor_scene(cfg, s);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            CHECK(cloud.labels[i] == 0);
            CHECK(cloud.coords.row(static_cast<Eigen::Index>(i)).norm() <= cfg.extent_max * (1.0 + 1e-12));
        }
    }
}

TEST_CASE("outdoor point density concentrates near the sensor") {
    const auto cfg = SynthConfig::outdoor_default();
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto cloud = gen_outdoor_scene(cfg, s);
        std::vector<double> range;
        for (Eigen::Index i = 0; i < cloud.coords.rows(); ++i) {
            range.push_back(cloud.coords.row(i).norm());
            CHECK(cloud.coords.row(i).norm() <= cfg.extent_max * (1.0 + 1e-12));
        }
        const double mean = std::accumulate(range.begin(), range.end(), 0.0) / static_cast<double>(range.size());
        std::nth_element(range.begin(), range.begin() + static_cast<long>(range.size() / 2), range.end());
        CHECK(range[range.size() / 2] < mean);
    }
}

TEST_CASE("scene sets assign consecutive group ids") {
    auto cfg = SynthConfig::indoor_default();
    cfg.points_min = cfg.points_max = 200;
    const auto set = gen_scene_set(cfg, 5, 2, 10);
    CHECK(set.group_ids == std::vector<int>{0, 0, 1, 1, 2});
    CHECK(bitwise_equal(set.scenes[1], gen_scene(cfg, 11)));
    CHECK_THROWS_AS(gen_scene_set(cfg, 0), InvalidArgument);
}

TEST_CASE("synth config validation") {
    auto cfg = SynthConfig::indoor_default();
    cfg.class_count = 1;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = SynthConfig::indoor_default();
    cfg.noise_sigma = -0.1;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = SynthConfig::indoor_default();
    cfg.rare_class_fraction = 0.5;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = SynthConfig::indoor_default();
    CHECK_THROWS_AS(gen_outdoor_scene(cfg, 0), InvalidArgument);
}
