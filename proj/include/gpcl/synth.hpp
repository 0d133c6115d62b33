#pragma once

#include <cstdint>
#include <string_view>

#include "gpcl/core.hpp"

namespace gpcl {

enum class Preset { Indoor, Outdoor };

Preset parse_preset(std::string_view name);
std::string_view preset_name(Preset p);

// Synthetic scene generator settings.
//
// Indoor: a rectangular room (side lengths in [extent_min, extent_max]) with a
// floor (class 0), four walls (class 1) and axis-aligned boxes of the other
// classes standing on the floor.
// Outdoor: a ground disc (class 0) of radius extent_max around a sensor at the
// origin, plus poles, cars, building walls and other box objects.
//
// With rare_class_fraction > 0 the last class is rare: every scene holds one
// object of that class and each point is drawn from it with that probability.
struct SynthConfig {
    Preset preset = Preset::Indoor;
    double extent_min = 6.0;
    double extent_max = 8.0;
    int object_count_min = 5;
    int object_count_max = 8;
    int points_min = 2000;
    int points_max = 3000;
    int class_count = 6;
    int feat_dim = 3;
    double noise_sigma = 0.01;
    double rare_class_fraction = 0.0;
    // Per-scene color gain range and per-channel offset amplitude.
    double lighting_gain_min = 0.7;
    double lighting_gain_max = 1.3;
    double lighting_offset = 0.08;
    double color_noise = 0.04;
    int max_placement_retries = 500;
    std::uint64_t seed = 0;

    void validate() const;

    static SynthConfig indoor_default();
    static SynthConfig outdoor_default();
};

PointCloud gen_indoor_scene(const SynthConfig& cfg, std::uint64_t scene_seed);
PointCloud gen_outdoor_scene(const SynthConfig& cfg, std::uint64_t scene_seed);
PointCloud gen_scene(const SynthConfig& cfg, std::uint64_t scene_seed);

// `count` scenes with scene seeds first_scene_seed, first_scene_seed+1, ...;
// consecutive runs of `scenes_per_group` share a group id.
SceneSet gen_scene_set(const SynthConfig& cfg, int count, int scenes_per_group = 1,
                       std::uint64_t first_scene_seed = 0);

} // namespace gpcl
