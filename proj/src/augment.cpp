#include "gpcl/augment.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "gpcl/error.hpp"

namespace gpcl {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Angle difference wrapped to [0, pi].
double circular_distance(double a, double b) {
    double d = std::fmod(std::abs(a - b), kTwoPi);
    return d > std::numbers::pi ? kTwoPi - d : d;
}

std::vector<int> square_crop_indices(const PointCloud& cloud, const Eigen::Vector2d& center, double size) {
    const double half = 0.5 * size;
    std::vector<int> keep;
    for (Eigen::Index i = 0; i < cloud.coords.rows(); ++i) {
        if (std::abs(cloud.coords(i, 0) - center.x()) <= half && std::abs(cloud.coords(i, 1) - center.y()) <= half) {
            keep.push_back(static_cast<int>(i));
        }
    }
    return keep;
}

std::vector<int> sector_crop_indices(const PointCloud& cloud, double heading, double fov) {
    std::vector<int> keep;
    if (fov >= kTwoPi) {
        keep.resize(cloud.size());
        std::iota(keep.begin(), keep.end(), 0);
        return keep;
    }
    for (Eigen::Index i = 0; i < cloud.coords.rows(); ++i) {
        const double azimuth = std::atan2(cloud.coords(i, 1), cloud.coords(i, 0));
        if (circular_distance(azimuth, heading) <= 0.5 * fov) keep.push_back(static_cast<int>(i));
    }
    return keep;
}

std::size_t overlap_count(const PointCloud& cloud, const std::vector<int>& a, const std::vector<int>& b) {
    std::unordered_set<int> ids;
    ids.reserve(a.size());
    for (int i : a) ids.insert(cloud.origin_ids[static_cast<std::size_t>(i)]);
    std::size_t n = 0;
    for (int j : b) n += ids.count(cloud.origin_ids[static_cast<std::size_t>(j)]);
    return n;
}

struct CropDraw {
    std::vector<int> indices;
    Eigen::Vector2d center = Eigen::Vector2d::Zero();
};

} // namespace

void AugmentConfig::validate() const {
    if (!(crop_size > 0.0)) throw InvalidArgument("crop_size must be positive");
    if (!(fov_min > 0.0) || fov_max > kTwoPi + 1e-12 || fov_max < fov_min) {
        throw InvalidArgument("field-of-view range must lie in (0, 2pi]");
    }
    if (!(scale_min > 0.0) || scale_max < scale_min) throw InvalidArgument("scale range must be positive");
    if (rotation_max < rotation_min) throw InvalidArgument("bad rotation range");
    if (min_overlap_points < 1) throw InvalidArgument("min_overlap_points must be at least 1");
    if (max_retries < 0) throw InvalidArgument("max_retries must be nonnegative");
}

AugmentConfig AugmentConfig::indoor_default() { return AugmentConfig{}; }

AugmentConfig AugmentConfig::outdoor_default() {
    AugmentConfig cfg;
    cfg.preset = Preset::Outdoor;
    cfg.rotation_min = -std::numbers::pi / 4.0;
    cfg.rotation_max = std::numbers::pi / 4.0;
    cfg.scale_min = 0.95;
    cfg.scale_max = 1.05;
    cfg.min_overlap_points = 512;
    cfg.recenter = false;
    return cfg;
}

AugmentConfig AugmentConfig::for_preset(Preset p) {
    return p == Preset::Indoor ? indoor_default() : outdoor_default();
}

PointCloud square_crop(const PointCloud& cloud, const Eigen::Vector2d& center, double size) {
    if (!(size > 0.0)) throw InvalidArgument("crop size must be positive");
    const auto keep = square_crop_indices(cloud, center, size);
    return cloud.subset(keep);
}

PointCloud sector_crop(const PointCloud& cloud, double heading, double fov) {
    if (!(fov > 0.0) || fov > kTwoPi + 1e-12) throw InvalidArgument("fov must lie in (0, 2pi]");
    const auto keep = sector_crop_indices(cloud, heading, fov);
    return cloud.subset(keep);
}

PointCloud rigid_transform(const PointCloud& cloud, double rotation_z, bool flip_x, bool flip_y, double scale) {
    if (!(scale > 0.0)) throw InvalidArgument("scale must be positive");
    const double c = std::cos(rotation_z), s = std::sin(rotation_z);
    Eigen::Matrix3d rot;
    rot << c, -s, 0, s, c, 0, 0, 0, 1;
    const Eigen::Matrix3d flip = Eigen::Vector3d(flip_x ? -1.0 : 1.0, flip_y ? -1.0 : 1.0, 1.0).asDiagonal();
    const Eigen::Matrix3d m = scale * rot * flip;
    PointCloud out = cloud;
    out.coords = cloud.coords * m.transpose();
    return out;
}

PointCloud center_xy(const PointCloud& cloud) {
    PointCloud out = cloud;
    if (cloud.empty()) return out;
    for (int d = 0; d < 2; ++d) {
        const double mid = 0.5 * (cloud.coords.col(d).minCoeff() + cloud.coords.col(d).maxCoeff());
        out.coords.col(d).array() -= mid;
    }
    return out;
}

PointCloud random_rigid(const PointCloud& cloud, const AugmentConfig& cfg, Rng& rng) {
    const double rotation = uniform(rng, cfg.rotation_min, cfg.rotation_max);
    const bool fx = cfg.flip && uniform(rng) < 0.5;
    const bool fy = cfg.flip && uniform(rng) < 0.5;
    const double scale = cfg.scale_max > cfg.scale_min ? uniform(rng, cfg.scale_min, cfg.scale_max) : cfg.scale_min;
    return rigid_transform(cloud, rotation, fx, fy, scale);
}

MatchList match_points(const PointCloud& view1, const PointCloud& view2) {
    std::unordered_map<int, int> index2;
    index2.reserve(view2.size());
    for (std::size_t j = 0; j < view2.origin_ids.size(); ++j) {
        if (!index2.emplace(view2.origin_ids[j], static_cast<int>(j)).second) {
            throw InvalidArgument("duplicate origin id in second view");
        }
    }
    std::unordered_set<int> seen1;
    seen1.reserve(view1.size());
    MatchList matches;
    for (std::size_t i = 0; i < view1.origin_ids.size(); ++i) {
        const int id = view1.origin_ids[i];
        if (!seen1.insert(id).second) throw InvalidArgument("duplicate origin id in first view");
        if (auto it = index2.find(id); it != index2.end()) matches.emplace_back(static_cast<int>(i), it->second);
    }
    return matches;
}

ViewPair make_view_pair(const PointCloud& cloud, const AugmentConfig& cfg, std::uint64_t pair_seed) {
    if (cloud.empty()) throw InvalidArgument("cannot augment an empty cloud");
    cfg.validate();
    Rng crop_rng(derive_seed(cfg.seed, pair_seed, 0xC509));
    Rng rigid_rng(derive_seed(cfg.seed, pair_seed, 0x519D));

    const Eigen::Vector2d lo = cloud.coords.leftCols<2>().colwise().minCoeff().transpose();
    const Eigen::Vector2d hi = cloud.coords.leftCols<2>().colwise().maxCoeff().transpose();
    auto draw = [&]() {
        CropDraw d;
        if (cfg.preset == Preset::Indoor) {
            d.center = {uniform(crop_rng, lo.x(), hi.x()), uniform(crop_rng, lo.y(), hi.y())};
            d.indices = square_crop_indices(cloud, d.center, cfg.crop_size);
        } else {
            const double heading = uniform(crop_rng, 0.0, kTwoPi);
            const double fov = cfg.fov_max > cfg.fov_min ? uniform(crop_rng, cfg.fov_min, cfg.fov_max) : cfg.fov_min;
            d.indices = sector_crop_indices(cloud, heading, fov);
        }
        return d;
    };

    std::optional<std::pair<CropDraw, CropDraw>> accepted;
    std::size_t best = 0;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        CropDraw a = draw();
        CropDraw b = draw();
        const std::size_t overlap = overlap_count(cloud, a.indices, b.indices);
        best = std::max(best, overlap);
        if (overlap >= static_cast<std::size_t>(cfg.min_overlap_points)) {
            accepted.emplace(std::move(a), std::move(b));
            break;
        }
    }
    if (!accepted) {
        throw OverlapUnsatisfiable("no crop pair reached " + std::to_string(cfg.min_overlap_points) +
                                   " overlapping points in " + std::to_string(cfg.max_retries + 1) +
                                   " attempts (best " + std::to_string(best) + ")");
    }

    auto finish = [&](const CropDraw& d) {
        PointCloud view = cloud.subset(d.indices);
        if (cfg.preset == Preset::Indoor && cfg.recenter) {
            view.coords.col(0).array() -= d.center.x();
            view.coords.col(1).array() -= d.center.y();
        }
        return random_rigid(view, cfg, rigid_rng);
    };
    ViewPair pair;
    pair.view1 = finish(accepted->first);
    pair.view2 = finish(accepted->second);
    pair.matches = match_points(pair.view1, pair.view2);
    return pair;
}

} // namespace gpcl
