#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace gpcl {

inline constexpr int kIgnoreLabel = -1;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Coords = Eigen::Matrix<double, Eigen::Dynamic, 3>;

// A point cloud with per-point coordinates, raw features, optional labels and
// origin ids that index into the source cloud and survive augmentation.
struct PointCloud {
    Coords coords;            // N x 3, meters
    Matrix feats;             // N x C_0
    std::vector<int> labels;  // empty, or N entries in [-1, class_count)
    std::vector<int> origin_ids;
    int class_count = 0;

    [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(coords.rows()); }
    [[nodiscard]] bool empty() const { return coords.rows() == 0; }
    [[nodiscard]] bool has_labels() const { return !labels.empty(); }
    [[nodiscard]] int feat_dim() const { return static_cast<int>(feats.cols()); }

    // Throws DataError when an invariant does not hold.
    void validate() const;

    // Rows `indices` in the given order; origin ids and labels follow.
    [[nodiscard]] PointCloud subset(std::span<const int> indices) const;

    // Builds a cloud with origin ids 0..N-1.
    static PointCloud from_arrays(Coords coords, Matrix feats, std::vector<int> labels,
                                  int class_count);
};

struct SceneSet {
    std::vector<PointCloud> scenes;
    std::vector<int> group_ids;
    int class_count = 0;

    [[nodiscard]] std::size_t size() const { return scenes.size(); }
    [[nodiscard]] bool empty() const { return scenes.empty(); }
    void validate() const;
    void append(const SceneSet& other);
};

struct SplitSpec {
    double labeled_ratio = 1.0;
    bool sequence_aware = false;
    std::optional<SceneSet> transductive_extra;
    std::uint64_t seed = 0;
};

struct SplitResult {
    SceneSet labeled;
    SceneSet unlabeled;
    // Indices into the input set; transductive extras are not listed.
    std::vector<int> labeled_indices;
    std::vector<int> unlabeled_indices;
};

// Scene indices only; lets the CLI split manifests without loading clouds.
struct SplitIndices {
    std::vector<int> labeled;
    std::vector<int> unlabeled;
};

SplitIndices split_indices(std::span<const int> group_ids, double labeled_ratio,
                           bool sequence_aware, std::uint64_t seed);

SplitResult split_dataset(const SceneSet& set, const SplitSpec& spec);

using VoxelKey = std::array<std::int64_t, 3>;

struct VoxelKeyHash {
    std::size_t operator()(const VoxelKey& k) const noexcept;
};

// Cells are numbered in order of first appearance, so the grid is a pure
// function of the point order.
struct VoxelGrid {
    double voxel_size = 0.0;
    std::vector<VoxelKey> keys;          // per cell
    std::vector<std::vector<int>> cells; // per cell, point indices ascending
    std::vector<int> point_cell;         // per point, cell index

    [[nodiscard]] std::size_t cell_count() const { return keys.size(); }
};

VoxelKey voxel_key(const Eigen::Vector3d& p, double voxel_size);
VoxelGrid voxelize(const Coords& coords, double voxel_size);
VoxelGrid voxelize(const PointCloud& cloud, double voxel_size);

// Binary scene format, little-endian:
//   "GPCL" u32 version=1, u32 N, u32 C_0, u32 class_count, u8 has_labels,
//   then N records [3 x f32 coords][C_0 x f32 feats][i32 label if has_labels].
PointCloud load_scene(const std::filesystem::path& path);
void save_scene(const PointCloud& cloud, const std::filesystem::path& path);

// Scene-set manifest: CSV `path,group_id`; relative paths resolve against the
// manifest's directory.
struct ManifestEntry {
    std::filesystem::path path;
    int group_id = 0;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);
SceneSet load_scene_set(const std::filesystem::path& manifest);

} // namespace gpcl
