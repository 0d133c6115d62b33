#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <span>
#include <vector>

#include "gpcl/augment.hpp"
#include "gpcl/losses.hpp"

namespace gpcl {

// Matched pairs grouped by the pseudo class of their first point.
struct PairPool {
    std::vector<MatchList> by_class;

    static PairPool build(const MatchList& matches, std::span<const int> first_labels, int class_count);

    [[nodiscard]] std::size_t total() const;
    [[nodiscard]] std::vector<std::size_t> counts() const;
};

// Splits `budget` over classes with the given supply: each class first gets
// min(floor(budget / classes), supply); the remaining budget is handed out
// evenly over classes that still have supply, odd units going to distinct
// random classes. Total = min(budget, sum of supply).
std::vector<std::size_t> balanced_quotas(std::span<const std::size_t> supply, std::size_t budget, Rng& rng);

// Category-balanced positive sampling: per-class quota min(floor(K_p/|C|), N_M^c)
// topped up from the remaining pairs until min(K_p, |M|) pairs are drawn.
MatchList cbs_positive_pairs(const PairPool& pool, int k_p, std::uint64_t seed);

// Uniform sampling without replacement of min(K_p, |M|) pairs.
MatchList random_positive_pairs(const MatchList& matches, int k_p, std::uint64_t seed);

// Category-aware FIFO queues of detached embeddings.
class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(int class_count, int dim, int capacity, int update_quota);

    // Appends to queue `cls`, evicting the oldest entry past capacity.
    void push(int cls, const Eigen::RowVectorXd& embedding);

    // For each class, pushes up to update_quota rows drawn uniformly from the
    // rows with that pseudo label and confidence >= min_confidence.
    void update(const Matrix& embeddings, const PseudoLabels& pl, double min_confidence, std::uint64_t seed);

    // Even per-class draw without replacement; see balanced_quotas. Throws
    // EmptyBank when every queue is empty.
    [[nodiscard]] BankNegatives sample(int k_n, std::uint64_t seed) const;

    [[nodiscard]] int class_count() const { return static_cast<int>(queues_.size()); }
    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] int capacity() const { return capacity_; }
    [[nodiscard]] int update_quota() const { return update_quota_; }
    [[nodiscard]] std::size_t population() const;
    [[nodiscard]] const std::deque<Eigen::RowVectorXd>& queue(int cls) const { return queues_.at(static_cast<std::size_t>(cls)); }

    void write(std::ostream& out) const;
    static MemoryBank read(std::istream& in);

    bool operator==(const MemoryBank&) const = default;

private:
    int dim_ = 0;
    int capacity_ = 0;
    int update_quota_ = 0;
    std::vector<std::deque<Eigen::RowVectorXd>> queues_;
};

} // namespace gpcl
