#include <doctest.h>

#include <set>
#include <sstream>

#include "gpcl/error.hpp"
#include "gpcl/sampling.hpp"
#include "sampler_checks.hpp"

using namespace gpcl;

namespace {

// Pool with `counts[c]` pairs of class c; pair k is (k, 1000 + k).
struct Fixture {
    MatchList matches;
    std::vector<int> labels;
    PairPool pool;
};

Fixture make_pool(const std::vector<int>& counts) {
    Fixture f;
    int next = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        for (int k = 0; k < counts[c]; ++k) {
            f.matches.emplace_back(next, 1000 + next);
            f.labels.push_back(static_cast<int>(c));
            ++next;
        }
    }
    f.pool = PairPool::build(f.matches, f.labels, static_cast<int>(counts.size()));
    return f;
}

std::vector<int> per_class(const MatchList& draw, const std::vector<int>& labels, int classes) {
    std::vector<int> out(static_cast<std::size_t>(classes), 0);
    for (const auto& [i, j] : draw) ++out[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    return out;
}

Eigen::RowVectorXd tagged(double id) {
    Eigen::RowVectorXd e(2);
    e << id, 0.0;
    return e;
}

} // namespace

TEST_CASE("cbs with a rare and an absent class") {
    const auto f = make_pool({100, 100, 100, 1, 0});
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto draw = cbs_positive_pairs(f.pool, 10, seed);
        CHECK(draw.size() == 10);
        const auto counts = per_class(draw, f.labels, 5);
        CHECK(counts[0] >= 2);
        CHECK(counts[1] >= 2);
        CHECK(counts[2] >= 2);
        CHECK(counts[3] == 1);
        CHECK(counts[4] == 0);
        std::set<int> firsts;
        for (const auto& m : draw) CHECK(firsts.insert(m.first).second);
    }
}

TEST_CASE("balanced quotas") {
    Rng rng(1);
    const std::vector<std::size_t> supply{100, 100, 100, 1, 0};
    CHECK(balanced_quotas(supply, 10, rng) == std::vector<std::size_t>{3, 3, 3, 1, 0});
    const std::vector<std::size_t> small{1, 2, 0};
    CHECK(balanced_quotas(small, 10, rng) == std::vector<std::size_t>{1, 2, 0});
    const std::vector<std::size_t> even{5, 5, 5};
    CHECK(balanced_quotas(even, 6, rng) == std::vector<std::size_t>{2, 2, 2});
    CHECK(balanced_quotas(std::vector<std::size_t>{}, 6, rng).empty());
}

TEST_CASE("cbs returns every pair when the budget covers the pool") {
    const auto f = make_pool({3, 0, 2});
    const auto draw = cbs_positive_pairs(f.pool, 10, 7);
    CHECK(draw.size() == 5);
    std::set<int> firsts;
    for (const auto& m : draw) firsts.insert(m.first);
    CHECK(firsts.size() == 5);
}

TEST_CASE("cbs with a single populated class") {
    const auto f = make_pool({0, 0, 50, 0, 0});
    const auto draw = cbs_positive_pairs(f.pool, 10, 3);
    CHECK(draw.size() == 10);
    CHECK(per_class(draw, f.labels, 5)[2] == 10);
}

TEST_CASE("cbs balance over random pools") {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto msg = sampler_checks::cbs_balance(seed);
        CHECK_MESSAGE(msg.empty(), msg);
    }
}

TEST_CASE("random positive sampling") {
    const auto f = make_pool({20, 20});
    const auto draw = random_positive_pairs(f.matches, 15, 4);
    CHECK(draw.size() == 15);
    std::set<int> firsts;
    for (const auto& m : draw) {
        CHECK(firsts.insert(m.first).second);
        CHECK(m.second == 1000 + m.first);
    }
    CHECK(random_positive_pairs(f.matches, 15, 4) == draw);
    CHECK(random_positive_pairs(f.matches, 100, 4).size() == 40);
}

TEST_CASE("positive sampling rejects bad input") {
    const auto f = make_pool({2, 2});
    CHECK_THROWS_AS(cbs_positive_pairs(f.pool, 0, 1), InvalidArgument);
    CHECK_THROWS_AS(random_positive_pairs(f.matches, 0, 1), InvalidArgument);
    CHECK_THROWS_AS(cbs_positive_pairs(make_pool({0, 0}).pool, 3, 1), InvalidArgument);
    CHECK_THROWS_AS(random_positive_pairs({}, 3, 1), InvalidArgument);
    const std::vector<int> bad{0, 5};
    CHECK_THROWS_AS(PairPool::build({{0, 0}, {1, 1}}, bad, 2), InvalidArgument);
    CHECK_THROWS_AS(PairPool::build({{3, 0}}, bad, 2), InvalidArgument);
}

TEST_CASE("fifo eviction") {
    MemoryBank bank(2, 2, 4, 1);
    for (int k = 1; k <= 6; ++k) bank.push(0, tagged(k));
    const auto& q = bank.queue(0);
    REQUIRE(q.size() == 4);
    for (int k = 0; k < 4; ++k) CHECK(q[static_cast<std::size_t>(k)][0] == k + 3);
    CHECK(bank.queue(1).empty());
    CHECK(bank.population() == 4);
}

TEST_CASE("update leaves classes without eligible rows unchanged") {
    MemoryBank bank(3, 2, 5, 2);
    bank.push(2, tagged(99));
    Matrix e(4, 2);
    e << 1, 0, 2, 0, 3, 0, 4, 0;
    PseudoLabels pl;
    pl.labels = {0, 0, 1, 0};
    pl.confidence = Eigen::VectorXd::Constant(4, 0.9);
    pl.confidence[2] = 0.1;
    bank.update(e, pl, 0.5, 11);
    CHECK(bank.queue(0).size() == 2);
    CHECK(bank.queue(1).empty());
    REQUIRE(bank.queue(2).size() == 1);
    CHECK(bank.queue(2)[0][0] == 99);
    for (const auto& row : bank.queue(0)) CHECK(row[0] != 3);
}

TEST_CASE("negative sampling is even across classes") {
    MemoryBank bank(3, 2, 8, 1);
    for (int c = 0; c < 3; ++c) {
        for (int k = 0; k < 8; ++k) bank.push(c, tagged(10 * c + k));
    }
    const auto negs = bank.sample(6, 5);
    REQUIRE(negs.size() == 6);
    std::vector<int> counts(3, 0);
    for (int t : negs.tags) ++counts[static_cast<std::size_t>(t)];
    CHECK(counts == std::vector<int>{2, 2, 2});
    for (std::size_t k = 0; k < negs.size(); ++k) {
        CHECK(static_cast<int>(negs.keys(static_cast<Eigen::Index>(k), 0)) / 10 == negs.tags[k]);
    }
}

TEST_CASE("negative sampling with an empty queue") {
    MemoryBank bank(3, 2, 8, 1);
    for (int k = 0; k < 5; ++k) {
        bank.push(1, tagged(k));
        bank.push(2, tagged(10 + k));
    }
    const auto negs = bank.sample(6, 2);
    std::vector<int> counts(3, 0);
    for (int t : negs.tags) ++counts[static_cast<std::size_t>(t)];
    CHECK(counts == std::vector<int>{0, 3, 3});
}

TEST_CASE("negative sampling returns the whole bank when it is small") {
    MemoryBank bank(2, 2, 8, 1);
    for (int k = 0; k < 3; ++k) bank.push(0, tagged(k));
    bank.push(1, tagged(7));
    const auto negs = bank.sample(10, 9);
    CHECK(negs.size() == 4);
    std::set<int> ids;
    for (std::size_t k = 0; k < negs.size(); ++k) ids.insert(static_cast<int>(negs.keys(static_cast<Eigen::Index>(k), 0)));
    CHECK(ids == std::set<int>{0, 1, 2, 7});
}

TEST_CASE("empty bank") {
    MemoryBank bank(2, 2, 4, 1);
    CHECK_THROWS_AS((void)bank.sample(3, 0), EmptyBank);
}

TEST_CASE("bank against shadow lists over random sequences") {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const auto msg = sampler_checks::bank_sequence(seed);
        CHECK_MESSAGE(msg.empty(), msg);
    }
}

TEST_CASE("bank serialization round trip") {
    MemoryBank bank(3, 2, 4, 2);
    Rng rng(3);
    for (int k = 0; k < 9; ++k) bank.push(static_cast<int>(uniform_index(rng, 3)), tagged(uniform(rng)));
    std::stringstream ss;
    bank.write(ss);
    CHECK(MemoryBank::read(ss) == bank);
}

TEST_CASE("bank rejects bad configuration") {
    CHECK_THROWS_AS(MemoryBank(0, 2, 4, 1), InvalidArgument);
    CHECK_THROWS_AS(MemoryBank(2, 0, 4, 1), InvalidArgument);
    CHECK_THROWS_AS(MemoryBank(2, 2, 0, 1), InvalidArgument);
    CHECK_THROWS_AS(MemoryBank(2, 2, 4, -1), InvalidArgument);
    MemoryBank bank(2, 2, 4, 1);
    CHECK_THROWS_AS(bank.push(2, tagged(0)), InvalidArgument);
    CHECK_THROWS_AS(bank.push(0, Eigen::RowVectorXd::Zero(3)), InvalidArgument);
}
