#include "gpcl/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "gpcl/error.hpp"
#include "gpcl/random.hpp"

namespace gpcl {

Preset parse_preset(std::string_view name) {
    if (name == "indoor") return Preset::Indoor;
    if (name == "outdoor") return Preset::Outdoor;
    throw InvalidArgument("unknown preset '" + std::string(name) + "' (expected indoor|outdoor)");
}

std::string_view preset_name(Preset p) { return p == Preset::Indoor ? "indoor" : "outdoor"; }

void SynthConfig::validate() const {
    if (class_count < 2) throw InvalidArgument("class_count must be at least 2");
    if (feat_dim < 0) throw InvalidArgument("feat_dim must be nonnegative");
    if (noise_sigma < 0.0) throw InvalidArgument("noise_sigma must be nonnegative");
    if (rare_class_fraction < 0.0 || rare_class_fraction > 1.0 / class_count) {
        throw InvalidArgument("rare_class_fraction must lie in [0, 1/class_count]");
    }
    const int first_object_class = preset == Preset::Indoor ? 2 : 1;
    if (rare_class_fraction > 0.0 && class_count <= first_object_class) {
        throw InvalidArgument("a rare class needs at least one object class");
    }
    if (!(extent_min > 0.0) || extent_max < extent_min) throw InvalidArgument("bad extent range");
    if (object_count_min < 0 || object_count_max < object_count_min) throw InvalidArgument("bad object count range");
    if (points_min < 1 || points_max < points_min) throw InvalidArgument("bad points range");
    if (lighting_gain_min <= 0.0 || lighting_gain_max < lighting_gain_min) throw InvalidArgument("bad lighting gain range");
}

SynthConfig SynthConfig::indoor_default() { return SynthConfig{}; }

SynthConfig SynthConfig::outdoor_default() {
    SynthConfig cfg;
    cfg.preset = Preset::Outdoor;
    cfg.extent_min = 25.0;
    cfg.extent_max = 25.0;
    cfg.object_count_min = 8;
    cfg.object_count_max = 14;
    cfg.points_min = 3000;
    cfg.points_max = 4000;
    cfg.class_count = 6;
    cfg.noise_sigma = 0.02;
    return cfg;
}

namespace {

using Vec3 = Eigen::Vector3d;

// A sampling primitive: parallelogram origin + a*u + b*v, or an open vertical
// cylinder (center, radius, height) when `cylinder` is set.
struct Surface {
    Vec3 origin;
    Vec3 u;
    Vec3 v;
    bool cylinder = false;
    double radius = 0.0;
    double area = 0.0;
    int label = 0;
    Vec3 color;
};

struct Proto {
    double sx, sy, h;
    Vec3 color;
    bool cylinder = false;
};

Vec3 hashed_color(int cls) {
    Rng rng(derive_seed(0xC0102, static_cast<std::uint64_t>(cls)));
    return {uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85), uniform(rng, 0.15, 0.85)};
}

// Object classes come in look-alike pairs (table/cabinet, bed/chair) so that
// color alone does not separate them.
Proto indoor_proto(int cls) {
    switch (cls) {
    case 0: return {0, 0, 0, {0.50, 0.50, 0.50}};
    case 1: return {0, 0, 0, {0.72, 0.70, 0.64}};
    case 2: return {1.2, 0.8, 0.75, {0.60, 0.42, 0.22}};
    case 3: return {0.6, 0.5, 1.8, {0.56, 0.40, 0.24}};
    case 4: return {2.0, 1.4, 0.5, {0.30, 0.32, 0.68}};
    case 5: return {0.5, 0.5, 0.9, {0.34, 0.33, 0.62}};
    case 6: return {0.35, 0.35, 0.35, {0.80, 0.22, 0.20}};
    case 7: return {1.0, 0.4, 1.1, {0.25, 0.60, 0.30}};
    default: {
        Rng rng(derive_seed(0x1D0, static_cast<std::uint64_t>(cls)));
        return {uniform(rng, 0.3, 1.5), uniform(rng, 0.3, 1.5), uniform(rng, 0.3, 1.8), hashed_color(cls)};
    }
    }
}

Proto outdoor_proto(int cls) {
    switch (cls) {
    case 0: return {0, 0, 0, {0.30, 0.30, 0.30}};
    case 1: return {0.15, 0.15, 4.0, {0.70, 0.70, 0.75}, true};
    case 2: return {4.2, 1.8, 1.5, {0.55, 0.20, 0.20}};
    case 3: return {10.0, 0.4, 6.0, {0.65, 0.60, 0.50}};
    case 4: return {2.0, 2.0, 2.5, {0.20, 0.55, 0.22}};
    case 5: return {0.5, 0.5, 1.7, {0.60, 0.45, 0.40}};
    default: {
        Rng rng(derive_seed(0x0D0, static_cast<std::uint64_t>(cls)));
        return {uniform(rng, 0.4, 3.0), uniform(rng, 0.4, 3.0), uniform(rng, 0.8, 3.0), hashed_color(cls)};
    }
    }
}

Surface rect(const Vec3& origin, const Vec3& u, const Vec3& v, int label, const Vec3& color) {
    Surface s;
    s.origin = origin;
    s.u = u;
    s.v = v;
    s.area = u.cross(v).norm();
    s.label = label;
    s.color = color;
    return s;
}

// Top and four sides of an axis-aligned box standing at z = base.
void add_box(std::vector<Surface>& out, double x0, double y0, double sx, double sy, double base,
             double h, int label, const Vec3& color) {
    const Vec3 ex(sx, 0, 0), ey(0, sy, 0), ez(0, 0, h);
    out.push_back(rect({x0, y0, base + h}, ex, ey, label, color));
    out.push_back(rect({x0, y0, base}, ex, ez, label, color));
    out.push_back(rect({x0, y0 + sy, base}, ex, ez, label, color));
    out.push_back(rect({x0, y0, base}, ey, ez, label, color));
    out.push_back(rect({x0 + sx, y0, base}, ey, ez, label, color));
}

Vec3 sample_surface(const Surface& s, Rng& rng) {
    if (s.cylinder) {
        const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        return s.origin + Vec3(s.radius * std::cos(theta), s.radius * std::sin(theta), 0.0) +
               uniform(rng) * s.v;
    }
    return s.origin + uniform(rng) * s.u + uniform(rng) * s.v;
}

struct Footprint {
    double x0, y0, x1, y1;
    [[nodiscard]] bool overlaps(const Footprint& o, double margin) const {
        return x0 < o.x1 + margin && o.x0 < x1 + margin && y0 < o.y1 + margin && o.y0 < y1 + margin;
    }
};

struct Lighting {
    double gain;
    Vec3 offset;
};

Lighting draw_lighting(const SynthConfig& cfg, Rng& rng) {
    Lighting l;
    l.gain = uniform(rng, cfg.lighting_gain_min, cfg.lighting_gain_max);
    for (int c = 0; c < 3; ++c) l.offset[c] = uniform(rng, -cfg.lighting_offset, cfg.lighting_offset);
    return l;
}

Vec3 jitter_color(const Vec3& base, Rng& rng) {
    std::normal_distribution<double> n(0.0, 0.03);
    return base + Vec3(n(rng), n(rng), n(rng));
}

// Draws `count` points over the surfaces: a point goes to the rare surfaces
// with probability `rare_fraction`, otherwise to the regular surfaces in
// proportion to weighted area.
PointCloud sample_points(const SynthConfig& cfg, const std::vector<Surface>& regular,
                         const std::vector<double>& weights, const std::vector<Surface>& rare,
                         int count, const Lighting& light, Rng& rng) {
    std::discrete_distribution<std::size_t> pick_regular(weights.begin(), weights.end());
    std::vector<double> rare_areas;
    for (const auto& s : rare) rare_areas.push_back(s.area);
    std::discrete_distribution<std::size_t> pick_rare(rare_areas.begin(), rare_areas.end());
    std::normal_distribution<double> coord_noise(0.0, 1.0);
    std::normal_distribution<double> color_noise(0.0, 1.0);

    Coords coords(count, 3);
    Matrix feats(count, cfg.feat_dim);
    std::vector<int> labels(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const bool from_rare = !rare.empty() && uniform(rng) < cfg.rare_class_fraction;
        const Surface& s = from_rare ? rare[pick_rare(rng)] : regular[pick_regular(rng)];
        Vec3 p = sample_surface(s, rng);
        labels[static_cast<std::size_t>(i)] = s.label;
        if (cfg.noise_sigma > 0.0) {
            p += cfg.noise_sigma * Vec3(coord_noise(rng), coord_noise(rng), coord_noise(rng));
        }
        coords.row(i) = p.transpose();
        for (int c = 0; c < cfg.feat_dim; ++c) {
            double value = 0.0;
            if (c < 3) value = light.gain * s.color[c] + light.offset[c];
            feats(i, c) = value + cfg.color_noise * color_noise(rng);
        }
    }
    return PointCloud::from_arrays(std::move(coords), std::move(feats), std::move(labels), cfg.class_count);
}

int draw_object_class(const SynthConfig& cfg, int first_object_class, Rng& rng) {
    const int last = cfg.rare_class_fraction > 0.0 ? cfg.class_count - 2 : cfg.class_count - 1;
    return first_object_class + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(last - first_object_class + 1)));
}

} // namespace

PointCloud gen_indoor_scene(const SynthConfig& cfg, std::uint64_t scene_seed) {
    if (cfg.preset != Preset::Indoor) throw InvalidArgument("gen_indoor_scene needs the indoor preset");
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, scene_seed, 0x1D));

    const double lx = uniform(rng, cfg.extent_min, cfg.extent_max);
    const double ly = uniform(rng, cfg.extent_min, cfg.extent_max);
    const double wall_h = 2.5;
    const Lighting light = draw_lighting(cfg, rng);

    std::vector<Surface> regular;
    std::vector<double> weights;
    auto add_regular = [&](Surface s, double w) {
        weights.push_back(s.area * w);
        regular.push_back(std::move(s));
    };
    const Vec3 floor_color = jitter_color(indoor_proto(0).color, rng);
    const Vec3 wall_color = jitter_color(indoor_proto(1).color, rng);
    add_regular(rect({0, 0, 0}, {lx, 0, 0}, {0, ly, 0}, 0, floor_color), 1.0);
    add_regular(rect({0, 0, 0}, {lx, 0, 0}, {0, 0, wall_h}, 1, wall_color), 0.5);
    add_regular(rect({0, ly, 0}, {lx, 0, 0}, {0, 0, wall_h}, 1, wall_color), 0.5);
    add_regular(rect({0, 0, 0}, {0, ly, 0}, {0, 0, wall_h}, 1, wall_color), 0.5);
    add_regular(rect({lx, 0, 0}, {0, ly, 0}, {0, 0, wall_h}, 1, wall_color), 0.5);

    std::vector<Footprint> placed;
    auto place = [&](int cls, std::vector<Surface>& out, std::vector<double>* w) {
        const Proto proto = indoor_proto(cls);
        const Vec3 color = jitter_color(proto.color, rng);
        for (int attempt = 0; attempt < cfg.max_placement_retries; ++attempt) {
            double sx = proto.sx * uniform(rng, 0.8, 1.2);
            double sy = proto.sy * uniform(rng, 0.8, 1.2);
            if (uniform(rng) < 0.5) std::swap(sx, sy);
            const double h = std::min(proto.h * uniform(rng, 0.85, 1.15), wall_h - 0.1);
            const double margin = 0.15;
            if (sx + 2 * margin >= lx || sy + 2 * margin >= ly) continue;
            const double x0 = uniform(rng, margin, lx - sx - margin);
            const double y0 = uniform(rng, margin, ly - sy - margin);
            const Footprint fp{x0, y0, x0 + sx, y0 + sy};
            bool clash = false;
            for (const auto& other : placed) clash = clash || fp.overlaps(other, 0.1);
            if (clash) continue;
            placed.push_back(fp);
            const auto before = out.size();
            add_box(out, x0, y0, sx, sy, 0.0, h, cls, color);
            if (w) {
                for (auto k = before; k < out.size(); ++k) w->push_back(out[k].area * 1.5);
            }
            return;
        }
        throw Error("infeasible object placement after " + std::to_string(cfg.max_placement_retries) + " retries");
    };

    std::vector<Surface> rare;
    if (cfg.rare_class_fraction > 0.0) place(cfg.class_count - 1, rare, nullptr);
    const int objects = cfg.object_count_min +
                        static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.object_count_max - cfg.object_count_min + 1)));
    if (cfg.class_count > 2 && !(cfg.rare_class_fraction > 0.0 && cfg.class_count == 3)) {
        std::vector<int> classes;
        for (int k = 0; k < objects; ++k) classes.push_back(draw_object_class(cfg, 2, rng));
        // Largest footprints first.
        std::stable_sort(classes.begin(), classes.end(), [](int a, int b) {
            return indoor_proto(a).sx * indoor_proto(a).sy > indoor_proto(b).sx * indoor_proto(b).sy;
        });
        for (int cls : classes) place(cls, regular, &weights);
    }

    const int count = cfg.points_min +
                      static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.points_max - cfg.points_min + 1)));
    return sample_points(cfg, regular, weights, rare, count, light, rng);
}

PointCloud gen_outdoor_scene(const SynthConfig& cfg, std::uint64_t scene_seed) {
    if (cfg.preset != Preset::Outdoor) throw InvalidArgument("gen_outdoor_scene needs the outdoor preset");
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, scene_seed, 0x0D));

    const double max_range = uniform(rng, cfg.extent_min, cfg.extent_max);
    const double sensor_h = 1.7;
    const double r_min = std::min(2.0, 0.5 * max_range);
    const double ground_r = std::sqrt(max_range * max_range - sensor_h * sensor_h);
    const Lighting light = draw_lighting(cfg, rng);

    std::vector<Footprint> placed;
    std::vector<Surface> objects_regular;
    std::vector<double> object_weights;
    std::vector<Surface> rare;
    auto place = [&](int cls, std::vector<Surface>& out, std::vector<double>* w) {
        const Proto proto = outdoor_proto(cls);
        const Vec3 color = jitter_color(proto.color, rng);
        for (int attempt = 0; attempt < cfg.max_placement_retries; ++attempt) {
            double sx = proto.sx * uniform(rng, 0.85, 1.15);
            double sy = proto.sy * uniform(rng, 0.85, 1.15);
            if (!proto.cylinder && uniform(rng) < 0.5) std::swap(sx, sy);
            const double h = proto.h * uniform(rng, 0.85, 1.15);
            const double reach = std::hypot(sx, sy) + 0.5;
            if (r_min + 2.0 + reach >= ground_r) continue;
            const double r = uniform(rng, r_min + 2.0, ground_r - reach);
            const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
            const double cx = r * std::cos(theta), cy = r * std::sin(theta);
            const Footprint fp{cx - sx / 2, cy - sy / 2, cx + sx / 2, cy + sy / 2};
            bool clash = false;
            for (const auto& other : placed) clash = clash || fp.overlaps(other, 0.3);
            if (clash) continue;
            placed.push_back(fp);
            const auto before = out.size();
            if (proto.cylinder) {
                Surface s;
                s.cylinder = true;
                s.origin = {cx, cy, -sensor_h};
                s.radius = sx;
                s.v = {0, 0, h};
                s.area = 2.0 * std::numbers::pi * sx * h;
                s.label = cls;
                s.color = color;
                out.push_back(s);
            } else {
                add_box(out, fp.x0, fp.y0, sx, sy, -sensor_h, h, cls, color);
            }
            // Same per-area falloff as the ground: 1/r^2 at the object's distance.
            if (w) {
                for (auto k = before; k < out.size(); ++k) w->push_back(out[k].area / (r * r));
            }
            return;
        }
        throw Error("infeasible object placement after " + std::to_string(cfg.max_placement_retries) + " retries");
    };

    if (cfg.rare_class_fraction > 0.0) place(cfg.class_count - 1, rare, nullptr);
    const int objects = cfg.object_count_min +
                        static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.object_count_max - cfg.object_count_min + 1)));
    if (!(cfg.rare_class_fraction > 0.0 && cfg.class_count == 2)) {
        for (int k = 0; k < objects; ++k) place(draw_object_class(cfg, 1, rng), objects_regular, &object_weights);
    }

    const int count = cfg.points_min +
                      static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.points_max - cfg.points_min + 1)));
    const double rare_p = rare.empty() ? 0.0 : cfg.rare_class_fraction;
    const double object_share = objects_regular.empty() ? 0.0 : 0.45;

    // Ground points follow the radial beam pattern: range density proportional
    // to 1/r, i.e. log-uniform range in [r_min, ground_r].
    const Vec3 ground_color = jitter_color(outdoor_proto(0).color, rng);
    std::discrete_distribution<std::size_t> pick_object(object_weights.begin(), object_weights.end());
    std::vector<double> rare_areas;
    for (const auto& s : rare) rare_areas.push_back(s.area);
    std::discrete_distribution<std::size_t> pick_rare(rare_areas.begin(), rare_areas.end());
    std::normal_distribution<double> unit(0.0, 1.0);

    Coords coords(count, 3);
    Matrix feats(count, cfg.feat_dim);
    std::vector<int> labels(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double u = uniform(rng);
        Vec3 p;
        int label = 0;
        Vec3 color = ground_color;
        if (u < rare_p) {
            const Surface& s = rare[pick_rare(rng)];
            p = sample_surface(s, rng);
            label = s.label;
            color = s.color;
        } else if (u < rare_p + (1.0 - rare_p) * object_share) {
            const Surface& s = objects_regular[pick_object(rng)];
            p = sample_surface(s, rng);
            label = s.label;
            color = s.color;
        } else {
            const double r = r_min * std::pow(ground_r / r_min, uniform(rng));
            const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
            p = Vec3(r * std::cos(theta), r * std::sin(theta), -sensor_h);
        }
        if (cfg.noise_sigma > 0.0) p += cfg.noise_sigma * Vec3(unit(rng), unit(rng), unit(rng));
        // Objects are placed inside ground_r but tall ones can poke out of the
        // sensor's range; pull those back onto the range sphere.
        const double range = p.norm();
        if (range > max_range) p *= max_range / range;
        coords.row(i) = p.transpose();
        labels[static_cast<std::size_t>(i)] = label;
        for (int c = 0; c < cfg.feat_dim; ++c) {
            double value = 0.0;
            if (c < 3) value = light.gain * color[c] + light.offset[c];
            feats(i, c) = value + cfg.color_noise * unit(rng);
        }
    }
    return PointCloud::from_arrays(std::move(coords), std::move(feats), std::move(labels), cfg.class_count);
}

PointCloud gen_scene(const SynthConfig& cfg, std::uint64_t scene_seed) {
    return cfg.preset == Preset::Indoor ? gen_indoor_scene(cfg, scene_seed) : gen_outdoor_scene(cfg, scene_seed);
}

SceneSet gen_scene_set(const SynthConfig& cfg, int count, int scenes_per_group, std::uint64_t first_scene_seed) {
    if (count < 1) throw InvalidArgument("scene count must be positive");
    if (scenes_per_group < 1) throw InvalidArgument("scenes_per_group must be positive");
    SceneSet set;
    set.class_count = cfg.class_count;
    for (int s = 0; s < count; ++s) {
        set.scenes.push_back(gen_scene(cfg, first_scene_seed + static_cast<std::uint64_t>(s)));
        set.group_ids.push_back(s / scenes_per_group);
    }
    return set;
}

} // namespace gpcl
