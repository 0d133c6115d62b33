#include "gpcl/sampling.hpp"

#include <numeric>

#include "binary_io.hpp"
#include "gpcl/error.hpp"

namespace gpcl {

PairPool PairPool::build(const MatchList& matches, std::span<const int> first_labels, int class_count) {
    if (class_count < 1) throw InvalidArgument("class_count must be positive");
    PairPool pool;
    pool.by_class.resize(static_cast<std::size_t>(class_count));
    for (const auto& m : matches) {
        if (m.first < 0 || static_cast<std::size_t>(m.first) >= first_labels.size()) {
            throw InvalidArgument("pair index outside the pseudo-label array");
        }
        const int c = first_labels[static_cast<std::size_t>(m.first)];
        if (c < 0 || c >= class_count) throw InvalidArgument("pseudo label out of range");
        pool.by_class[static_cast<std::size_t>(c)].push_back(m);
    }
    return pool;
}

std::size_t PairPool::total() const {
    std::size_t n = 0;
    for (const auto& g : by_class) n += g.size();
    return n;
}

std::vector<std::size_t> PairPool::counts() const {
    std::vector<std::size_t> c;
    for (const auto& g : by_class) c.push_back(g.size());
    return c;
}

std::vector<std::size_t> balanced_quotas(std::span<const std::size_t> supply, std::size_t budget, Rng& rng) {
    const std::size_t classes = supply.size();
    std::vector<std::size_t> take(classes, 0);
    if (classes == 0) return take;
    const std::size_t available = std::accumulate(supply.begin(), supply.end(), std::size_t{0});
    const std::size_t base = budget / classes;
    std::size_t taken = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        take[c] = std::min(base, supply[c]);
        taken += take[c];
    }
    std::size_t shortfall = std::min(budget, available) - taken;
    while (shortfall > 0) {
        std::vector<std::size_t> open;
        for (std::size_t c = 0; c < classes; ++c) {
            if (take[c] < supply[c]) open.push_back(c);
        }
        const std::size_t each = shortfall / open.size();
        if (each == 0) {
            for (int pick : sample_without_replacement(open.size(), shortfall, rng)) {
                ++take[open[static_cast<std::size_t>(pick)]];
            }
            break;
        }
        for (std::size_t c : open) {
            const std::size_t add = std::min(each, supply[c] - take[c]);
            take[c] += add;
            shortfall -= add;
        }
    }
    return take;
}

MatchList cbs_positive_pairs(const PairPool& pool, int k_p, std::uint64_t seed) {
    if (k_p < 1) throw InvalidArgument("K_p must be at least 1");
    if (pool.total() == 0) throw InvalidArgument("cannot sample positives from an empty pool");
    Rng rng(derive_seed(seed, 0xCB5));
    const auto supply = pool.counts();
    const auto quotas = balanced_quotas(supply, static_cast<std::size_t>(k_p), rng);
    MatchList out;
    out.reserve(std::min(static_cast<std::size_t>(k_p), pool.total()));
    for (std::size_t c = 0; c < quotas.size(); ++c) {
        for (int idx : sample_without_replacement(supply[c], quotas[c], rng)) {
            out.push_back(pool.by_class[c][static_cast<std::size_t>(idx)]);
        }
    }
    return out;
}

MatchList random_positive_pairs(const MatchList& matches, int k_p, std::uint64_t seed) {
    if (k_p < 1) throw InvalidArgument("K_p must be at least 1");
    if (matches.empty()) throw InvalidArgument("cannot sample positives from an empty match list");
    Rng rng(derive_seed(seed, 0x4A2D));
    MatchList out;
    for (int idx : sample_without_replacement(matches.size(), static_cast<std::size_t>(k_p), rng)) {
        out.push_back(matches[static_cast<std::size_t>(idx)]);
    }
    return out;
}

// ---------------------------------------------------------------------------

MemoryBank::MemoryBank(int class_count, int dim, int capacity, int update_quota)
    : dim_(dim), capacity_(capacity), update_quota_(update_quota),
      queues_(static_cast<std::size_t>(class_count)) {
    if (class_count < 1) throw InvalidArgument("memory bank needs at least one class");
    if (dim < 1) throw InvalidArgument("memory bank embedding width must be positive");
    if (capacity < 1) throw InvalidArgument("memory bank capacity must be positive");
    if (update_quota < 0) throw InvalidArgument("memory bank update quota must be nonnegative");
}

void MemoryBank::push(int cls, const Eigen::RowVectorXd& embedding) {
    if (cls < 0 || cls >= class_count()) throw InvalidArgument("bank class out of range");
    if (embedding.size() != dim_) throw InvalidArgument("bank embedding width mismatch");
    auto& q = queues_[static_cast<std::size_t>(cls)];
    q.push_back(embedding);
    while (q.size() > static_cast<std::size_t>(capacity_)) q.pop_front();
}

void MemoryBank::update(const Matrix& embeddings, const PseudoLabels& pl, double min_confidence, std::uint64_t seed) {
    if (static_cast<Eigen::Index>(pl.size()) != embeddings.rows()) throw InvalidArgument("pseudo labels do not match embeddings");
    std::vector<std::vector<int>> eligible(queues_.size());
    for (std::size_t i = 0; i < pl.size(); ++i) {
        const int c = pl.labels[i];
        if (c < 0 || c >= class_count()) throw InvalidArgument("pseudo label out of range");
        if (pl.confidence[static_cast<Eigen::Index>(i)] >= min_confidence) eligible[static_cast<std::size_t>(c)].push_back(static_cast<int>(i));
    }
    Rng rng(derive_seed(seed, 0xBA4C));
    for (std::size_t c = 0; c < queues_.size(); ++c) {
        const auto& rows = eligible[c];
        for (int pick : sample_without_replacement(rows.size(), static_cast<std::size_t>(update_quota_), rng)) {
            push(static_cast<int>(c), embeddings.row(rows[static_cast<std::size_t>(pick)]));
        }
    }
}

BankNegatives MemoryBank::sample(int k_n, std::uint64_t seed) const {
    if (k_n < 0) throw InvalidArgument("K_n must be nonnegative");
    if (population() == 0) throw EmptyBank("memory bank is empty");
    Rng rng(derive_seed(seed, 0x5A4B));
    std::vector<std::size_t> supply;
    for (const auto& q : queues_) supply.push_back(q.size());
    const auto quotas = balanced_quotas(supply, static_cast<std::size_t>(k_n), rng);
    BankNegatives out;
    const auto total = std::accumulate(quotas.begin(), quotas.end(), std::size_t{0});
    out.keys.resize(static_cast<Eigen::Index>(total), dim_);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < quotas.size(); ++c) {
        for (int idx : sample_without_replacement(supply[c], quotas[c], rng)) {
            out.keys.row(row++) = queues_[c][static_cast<std::size_t>(idx)];
            out.tags.push_back(static_cast<int>(c));
        }
    }
    return out;
}

std::size_t MemoryBank::population() const {
    std::size_t n = 0;
    for (const auto& q : queues_) n += q.size();
    return n;
}

void MemoryBank::write(std::ostream& out) const {
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(queues_.size()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(capacity_));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(update_quota_));
    for (const auto& q : queues_) {
        io::put<std::uint32_t>(out, static_cast<std::uint32_t>(q.size()));
        for (const auto& e : q) {
            for (Eigen::Index d = 0; d < e.size(); ++d) io::put<double>(out, e[d]);
        }
    }
}

MemoryBank MemoryBank::read(std::istream& in) {
    const auto classes = io::get<std::uint32_t>(in);
    const auto dim = io::get<std::uint32_t>(in);
    const auto capacity = io::get<std::uint32_t>(in);
    const auto quota = io::get<std::uint32_t>(in);
    MemoryBank bank(static_cast<int>(classes), static_cast<int>(dim), static_cast<int>(capacity), static_cast<int>(quota));
    for (std::uint32_t c = 0; c < classes; ++c) {
        const auto n = io::get<std::uint32_t>(in);
        if (n > capacity) throw DataError("memory bank queue exceeds its capacity");
        for (std::uint32_t k = 0; k < n; ++k) {
            Eigen::RowVectorXd e(dim);
            for (std::uint32_t d = 0; d < dim; ++d) e[d] = io::get<double>(in);
            bank.queues_[c].push_back(std::move(e));
        }
    }
    return bank;
}

} // namespace gpcl
