#pragma once

#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

#include "gpcl/core.hpp"
#include "gpcl/random.hpp"
#include "gpcl/synth.hpp"

namespace gpcl {

// (index in view 1, index in view 2)
using Match = std::pair<int, int>;
using MatchList = std::vector<Match>;

struct AugmentConfig {
    Preset preset = Preset::Indoor;
    double crop_size = 3.5;
    double fov_min = 2.0 * std::numbers::pi / 3.0;
    double fov_max = 2.0 * std::numbers::pi;
    double rotation_min = 0.0;
    double rotation_max = 2.0 * std::numbers::pi;
    bool flip = true;
    double scale_min = 1.0;
    double scale_max = 1.0;
    int min_overlap_points = 256;
    int max_retries = 20;
    // Translate indoor crops so the crop center sits at the origin.
    bool recenter = true;
    std::uint64_t seed = 0;

    void validate() const;

    static AugmentConfig indoor_default();
    static AugmentConfig outdoor_default();
    static AugmentConfig for_preset(Preset p);
};

struct ViewPair {
    PointCloud view1;
    PointCloud view2;
    MatchList matches;
};

// Points with |x - cx| <= size/2 and |y - cy| <= size/2; z is ignored.
PointCloud square_crop(const PointCloud& cloud, const Eigen::Vector2d& center, double size);

// Points whose azimuth lies within fov/2 of `heading` (circular distance).
PointCloud sector_crop(const PointCloud& cloud, double heading, double fov);

// coords <- scale * Rz(rotation_z) * diag(fx, fy, 1) * coords.
PointCloud rigid_transform(const PointCloud& cloud, double rotation_z, bool flip_x, bool flip_y,
                           double scale);

// Translates x and y so the center of the x-y bounding box sits at the origin.
PointCloud center_xy(const PointCloud& cloud);

// Random rotation/flip/scale drawn from the config ranges (no crop).
PointCloud random_rigid(const PointCloud& cloud, const AugmentConfig& cfg, Rng& rng);

// Pairs (i, j) with view1.origin_ids[i] == view2.origin_ids[j], ascending in i.
MatchList match_points(const PointCloud& view1, const PointCloud& view2);

ViewPair make_view_pair(const PointCloud& cloud, const AugmentConfig& cfg, std::uint64_t pair_seed);

} // namespace gpcl
