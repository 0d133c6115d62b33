#include "gpcl/core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "gpcl/error.hpp"
#include "gpcl/random.hpp"

namespace gpcl {

void PointCloud::validate() const {
    const auto n = coords.rows();
    if (feats.rows() != n) {
        throw DataError("feature rows (" + std::to_string(feats.rows()) +
                        ") do not match point count (" + std::to_string(n) + ")");
    }
    if (static_cast<Eigen::Index>(origin_ids.size()) != n) {
        throw DataError("origin id count does not match point count");
    }
    if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != n) {
        throw DataError("label count does not match point count");
    }
    if (!coords.allFinite()) throw DataError("non-finite coordinate");
    if (!feats.allFinite()) throw DataError("non-finite feature");
    for (int y : labels) {
        if (y < kIgnoreLabel || y >= class_count) {
            throw DataError("label " + std::to_string(y) + " outside [-1, " +
                            std::to_string(class_count) + ")");
        }
    }
    std::unordered_set<int> seen;
    seen.reserve(origin_ids.size());
    for (int id : origin_ids) {
        if (!seen.insert(id).second) throw DataError("duplicate origin id " + std::to_string(id));
    }
}

PointCloud PointCloud::subset(std::span<const int> indices) const {
    PointCloud out;
    const auto k = static_cast<Eigen::Index>(indices.size());
    out.class_count = class_count;
    out.coords.resize(k, 3);
    out.feats.resize(k, feats.cols());
    out.origin_ids.resize(indices.size());
    if (has_labels()) out.labels.resize(indices.size());
    for (Eigen::Index r = 0; r < k; ++r) {
        const int src = indices[static_cast<std::size_t>(r)];
        out.coords.row(r) = coords.row(src);
        out.feats.row(r) = feats.row(src);
        out.origin_ids[static_cast<std::size_t>(r)] = origin_ids[static_cast<std::size_t>(src)];
        if (has_labels()) out.labels[static_cast<std::size_t>(r)] = labels[static_cast<std::size_t>(src)];
    }
    return out;
}

PointCloud PointCloud::from_arrays(Coords coords, Matrix feats, std::vector<int> labels,
                                   int class_count) {
    PointCloud out;
    out.coords = std::move(coords);
    out.feats = std::move(feats);
    out.labels = std::move(labels);
    out.class_count = class_count;
    out.origin_ids.resize(static_cast<std::size_t>(out.coords.rows()));
    std::iota(out.origin_ids.begin(), out.origin_ids.end(), 0);
    out.validate();
    return out;
}

void SceneSet::validate() const {
    if (group_ids.size() != scenes.size()) throw DataError("group id count does not match scene count");
    if (scenes.empty()) return;
    const int c0 = scenes.front().feat_dim();
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        if (scenes[s].feat_dim() != c0) throw DataError("scenes disagree on feature width");
        if (scenes[s].class_count != class_count) throw DataError("scenes disagree on class count");
        if (group_ids[s] < 0) throw DataError("negative group id");
    }
}

void SceneSet::append(const SceneSet& other) {
    if (!other.empty() && !empty() && other.class_count != class_count) {
        throw DataError("cannot append scene sets with different class counts");
    }
    if (empty()) class_count = other.class_count;
    scenes.insert(scenes.end(), other.scenes.begin(), other.scenes.end());
    group_ids.insert(group_ids.end(), other.group_ids.begin(), other.group_ids.end());
}

// ---------------------------------------------------------------------------
// Splitting

namespace {

// 0/1 subset-sum over `sizes` (visited in `order`) up to `limit`. Returns, per
// reachable sum, the item that first reached it, or -1; sum 0 holds -2.
std::vector<int> subset_sums(const std::vector<int>& sizes, const std::vector<int>& order, int limit) {
    std::vector<int> reach(static_cast<std::size_t>(limit) + 1, -1);
    reach[0] = -2;
    for (int item : order) {
        const int s = sizes[static_cast<std::size_t>(item)];
        for (int sum = limit; sum >= s; --sum) {
            if (reach[static_cast<std::size_t>(sum)] == -1 &&
                reach[static_cast<std::size_t>(sum - s)] != -1) {
                reach[static_cast<std::size_t>(sum)] = item;
            }
        }
    }
    return reach;
}

std::vector<int> reconstruct(const std::vector<int>& reach, const std::vector<int>& sizes, int sum) {
    std::vector<int> items;
    while (sum > 0) {
        const int item = reach[static_cast<std::size_t>(sum)];
        items.push_back(item);
        sum -= sizes[static_cast<std::size_t>(item)];
    }
    return items;
}

} // namespace

SplitIndices split_indices(std::span<const int> group_ids, double labeled_ratio,
                           bool sequence_aware, std::uint64_t seed) {
    const int n = static_cast<int>(group_ids.size());
    if (n == 0) throw InvalidArgument("cannot split an empty scene set");
    if (!(labeled_ratio > 0.0 && labeled_ratio <= 1.0)) {
        throw InvalidArgument("labeled ratio must lie in (0, 1]");
    }
    const int target = std::clamp(static_cast<int>(std::lround(labeled_ratio * n)), 1, n);
    Rng rng(derive_seed(seed, 0x5B117));

    std::vector<char> is_labeled(static_cast<std::size_t>(n), 0);
    if (!sequence_aware) {
        const auto perm = random_permutation(static_cast<std::size_t>(n), rng);
        for (int k = 0; k < target; ++k) is_labeled[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] = 1;
    } else {
        std::map<int, std::vector<int>> by_group;
        for (int s = 0; s < n; ++s) by_group[group_ids[static_cast<std::size_t>(s)]].push_back(s);
        std::vector<std::vector<int>> members;
        std::vector<int> sizes;
        for (auto& [gid, scenes] : by_group) {
            members.push_back(scenes);
            sizes.push_back(static_cast<int>(scenes.size()));
        }
        const int groups = static_cast<int>(members.size());
        const auto order = random_permutation(static_cast<std::size_t>(groups), rng);

        const auto exact = subset_sums(sizes, order, target);
        if (exact[static_cast<std::size_t>(target)] != -1) {
            for (int g : reconstruct(exact, sizes, target)) {
                for (int s : members[static_cast<std::size_t>(g)]) is_labeled[static_cast<std::size_t>(s)] = 1;
            }
        } else {
            bool done = false;
            // Groups are visited in ascending group id, so ties go to the lowest id.
            for (int cut = 0; cut < groups && !done; ++cut) {
                std::vector<int> others;
                for (int g : order) {
                    if (g != cut) others.push_back(g);
                }
                const auto reach = subset_sums(sizes, others, target - 1);
                const int lowest = std::max(0, target - sizes[static_cast<std::size_t>(cut)] + 1);
                for (int sum = target - 1; sum >= lowest; --sum) {
                    if (reach[static_cast<std::size_t>(sum)] == -1) continue;
                    for (int g : reconstruct(reach, sizes, sum)) {
                        for (int s : members[static_cast<std::size_t>(g)]) is_labeled[static_cast<std::size_t>(s)] = 1;
                    }
                    const auto& cut_members = members[static_cast<std::size_t>(cut)];
                    for (int k = 0; k < target - sum; ++k) {
                        is_labeled[static_cast<std::size_t>(cut_members[static_cast<std::size_t>(k)])] = 1;
                    }
                    done = true;
                    break;
                }
            }
            if (!done) throw Error("no sequence-aware split reaches the requested ratio");
        }
    }

    SplitIndices out;
    for (int s = 0; s < n; ++s) {
        (is_labeled[static_cast<std::size_t>(s)] ? out.labeled : out.unlabeled).push_back(s);
    }
    return out;
}

SplitResult split_dataset(const SceneSet& set, const SplitSpec& spec) {
    if (set.empty()) throw InvalidArgument("cannot split an empty scene set");
    set.validate();
    const auto idx = split_indices(set.group_ids, spec.labeled_ratio, spec.sequence_aware, spec.seed);

    SplitResult out;
    out.labeled.class_count = set.class_count;
    out.unlabeled.class_count = set.class_count;
    out.labeled_indices = idx.labeled;
    out.unlabeled_indices = idx.unlabeled;
    for (int s : idx.labeled) {
        out.labeled.scenes.push_back(set.scenes[static_cast<std::size_t>(s)]);
        out.labeled.group_ids.push_back(set.group_ids[static_cast<std::size_t>(s)]);
    }
    for (int s : idx.unlabeled) {
        out.unlabeled.scenes.push_back(set.scenes[static_cast<std::size_t>(s)]);
        out.unlabeled.group_ids.push_back(set.group_ids[static_cast<std::size_t>(s)]);
    }
    if (spec.transductive_extra) out.unlabeled.append(*spec.transductive_extra);
    return out;
}

// ---------------------------------------------------------------------------
// Voxel grid

std::size_t VoxelKeyHash::operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = mix_seed(static_cast<std::uint64_t>(k[0]));
    h = mix_seed(h ^ static_cast<std::uint64_t>(k[1]));
    h = mix_seed(h ^ static_cast<std::uint64_t>(k[2]));
    return static_cast<std::size_t>(h);
}

VoxelKey voxel_key(const Eigen::Vector3d& p, double voxel_size) {
    return {static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
            static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
            static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
}

VoxelGrid voxelize(const Coords& coords, double voxel_size) {
    if (!(voxel_size > 0.0)) throw InvalidArgument("voxel size must be positive");
    if (coords.rows() == 0) throw InvalidArgument("cannot voxelize an empty cloud");
    if (!coords.allFinite()) throw InvalidArgument("non-finite coordinate");

    VoxelGrid grid;
    grid.voxel_size = voxel_size;
    grid.point_cell.resize(static_cast<std::size_t>(coords.rows()));
    std::unordered_map<VoxelKey, int, VoxelKeyHash> index;
    index.reserve(static_cast<std::size_t>(coords.rows()));
    for (Eigen::Index i = 0; i < coords.rows(); ++i) {
        const VoxelKey key = voxel_key(coords.row(i).transpose(), voxel_size);
        auto [it, inserted] = index.try_emplace(key, static_cast<int>(grid.keys.size()));
        if (inserted) {
            grid.keys.push_back(key);
            grid.cells.emplace_back();
        }
        grid.cells[static_cast<std::size_t>(it->second)].push_back(static_cast<int>(i));
        grid.point_cell[static_cast<std::size_t>(i)] = it->second;
    }
    return grid;
}

VoxelGrid voxelize(const PointCloud& cloud, double voxel_size) {
    return voxelize(cloud.coords, voxel_size);
}

// ---------------------------------------------------------------------------
// Scene files

namespace {

constexpr char kMagic[4] = {'G', 'P', 'C', 'L'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& buf, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    buf.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    template <typename T>
    T get(const char* what) {
        if (pos_ + sizeof(T) > data_.size()) throw DataError(std::string("truncated scene file reading ") + what);
        std::array<unsigned char, sizeof(T)> bytes;
        std::memcpy(bytes.data(), data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
        pos_ += sizeof(T);
        return std::bit_cast<T>(bytes);
    }

    [[nodiscard]] std::size_t remaining() const { return data_.size() - pos_; }

private:
    std::string data_;
    std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

PointCloud load_scene(const std::filesystem::path& path) {
    Reader r(slurp(path));
    if (r.remaining() == 0) throw DataError("empty scene file " + path.string());
    for (char c : kMagic) {
        if (r.get<char>("magic") != c) throw DataError("bad magic in " + path.string());
    }
    const auto version = r.get<std::uint32_t>("version");
    if (version != kVersion) throw DataError("unsupported scene version " + std::to_string(version));
    const auto n = r.get<std::uint32_t>("point count");
    const auto c0 = r.get<std::uint32_t>("feature width");
    const auto class_count = r.get<std::uint32_t>("class count");
    const auto has_labels = r.get<std::uint8_t>("label flag");
    if (has_labels > 1) throw DataError("malformed label flag");

    const std::size_t record = 4 * (3 + static_cast<std::size_t>(c0)) + (has_labels ? 4 : 0);
    if (r.remaining() < record * n) throw DataError("truncated scene file " + path.string());
    if (r.remaining() > record * n) throw DataError("trailing bytes in scene file " + path.string());

    PointCloud cloud;
    cloud.class_count = static_cast<int>(class_count);
    cloud.coords.resize(n, 3);
    cloud.feats.resize(n, c0);
    if (has_labels) cloud.labels.resize(n);
    cloud.origin_ids.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        for (int d = 0; d < 3; ++d) cloud.coords(i, d) = r.get<float>("coords");
        for (std::uint32_t c = 0; c < c0; ++c) cloud.feats(i, c) = r.get<float>("feats");
        if (has_labels) {
            const auto y = r.get<std::int32_t>("label");
            if (y < kIgnoreLabel || y >= static_cast<std::int32_t>(class_count)) {
                throw DataError("label " + std::to_string(y) + " out of range in " + path.string());
            }
            cloud.labels[i] = y;
        }
        cloud.origin_ids[i] = static_cast<int>(i);
    }
    cloud.validate();
    return cloud;
}

void save_scene(const PointCloud& cloud, const std::filesystem::path& path) {
    cloud.validate();
    std::string buf;
    buf.reserve(21 + cloud.size() * (4 * (3 + static_cast<std::size_t>(cloud.feat_dim())) + 4));
    buf.append(kMagic, 4);
    put<std::uint32_t>(buf, kVersion);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(cloud.size()));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(cloud.feat_dim()));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(cloud.class_count));
    put<std::uint8_t>(buf, cloud.has_labels() ? 1 : 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        for (int d = 0; d < 3; ++d) put<float>(buf, static_cast<float>(cloud.coords(r, d)));
        for (int c = 0; c < cloud.feat_dim(); ++c) put<float>(buf, static_cast<float>(cloud.feats(r, c)));
        if (cloud.has_labels()) put<std::int32_t>(buf, cloud.labels[i]);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    std::getline(in, line);
    if (line != "path,group_id") throw DataError("manifest " + path.string() + " lacks the `path,group_id` header");
    const auto base = path.parent_path();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw DataError("malformed manifest line: " + line);
        ManifestEntry e;
        e.path = line.substr(0, comma);
        if (e.path.is_relative()) e.path = base / e.path;
        try {
            e.group_id = std::stoi(line.substr(comma + 1));
        } catch (const std::exception&) {
            throw DataError("malformed group id in manifest line: " + line);
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << "path,group_id\n";
    for (const auto& e : entries) out << e.path.generic_string() << ',' << e.group_id << '\n';
}

SceneSet load_scene_set(const std::filesystem::path& manifest) {
    SceneSet set;
    for (const auto& e : read_manifest(manifest)) {
        set.scenes.push_back(load_scene(e.path));
        set.group_ids.push_back(e.group_id);
    }
    if (!set.scenes.empty()) set.class_count = set.scenes.front().class_count;
    set.validate();
    return set;
}

} // namespace gpcl
