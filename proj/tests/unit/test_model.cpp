#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "gpcl/error.hpp"
#include "gpcl/model.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace gpcl;

namespace {

ModelConfig default_cfg() {
    ModelConfig c;
    c.in_dim = 6;
    c.class_count = 4;
    return c;
}

double max_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

} // namespace

TEST_CASE("zero parameters give zero features") {
    Rng rng(1);
    const auto cloud = oracle::random_cloud(40, 3, 4, rng);
    const auto p = ModelParams::zeros(default_cfg());
    Activations act;
    const Matrix f = backbone_forward(p, cloud, act);
    CHECK(f.rows() == 40);
    CHECK(f.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward matches the straight-line oracle") {
    Rng rng(2);
    for (int t = 0; t < 10; ++t) {
        auto cfg = default_cfg();
        cfg.pool_size = uniform(rng, 0.3, 3.0);
        const auto cloud = oracle::random_cloud(60, 3, 4, rng);
        auto p = gradcheck::random_params(cfg, rng);
        const auto act = forward(p, cloud);
        const auto ref = oracle::model_forward(p, cloud);
        CHECK(max_diff(act.feat, ref.feat) <= 1e-12);
        CHECK(max_diff(act.scores, ref.scores) <= 1e-12);
        CHECK(max_diff(act.embed, ref.embed) <= 1e-12);
        CHECK(max_diff(classifier_forward(p, act.feat), ref.scores) <= 1e-12);
        CHECK(max_diff(projector_forward(p, act.feat), ref.embed) <= 1e-12);
    }
}

TEST_CASE("outputs are permutation equivariant") {
    Rng rng(3);
    const auto cloud = oracle::random_cloud(80, 3, 4, rng);
    const auto p = ModelParams::init(default_cfg(), 5);
    const auto perm = random_permutation(80, rng);
    const auto permuted = cloud.subset(perm);
    const auto a = forward(p, cloud);
    const auto b = forward(p, permuted);
    for (int k = 0; k < 80; ++k) {
        const int src = perm[static_cast<std::size_t>(k)];
        CHECK((a.feat.row(src) - b.feat.row(k)).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((a.scores.row(src) - b.scores.row(k)).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((a.embed.row(src) - b.embed.row(k)).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("classifier head") {
    Rng rng(4);
    auto cfg = default_cfg();
    auto p = gradcheck::random_params(cfg, rng);
    const Matrix zero = Matrix::Zero(5, cfg.feat_dim);
    const Matrix s = classifier_forward(p, zero);
    for (int i = 0; i < 5; ++i) CHECK(s.row(i) == p.bc.transpose());

    cfg.feat_dim = cfg.class_count;
    auto q = ModelParams::zeros(cfg);
    q.wc = Matrix::Identity(cfg.class_count, cfg.class_count);
    const Matrix f = oracle::random_matrix(7, cfg.feat_dim, rng);
    CHECK(classifier_forward(q, f) == f);

    const Matrix g = oracle::random_matrix(7, p.config.feat_dim, rng);
    Matrix expect(7, p.config.class_count);
    for (int i = 0; i < 7; ++i) {
        for (int c = 0; c < p.config.class_count; ++c) {
            double v = p.bc[c];
            for (int k = 0; k < p.config.feat_dim; ++k) v += p.wc(c, k) * g(i, k);
            expect(i, c) = v;
        }
    }
    CHECK(max_diff(classifier_forward(p, g), expect) <= 1e-12);
}

TEST_CASE("projector rows are unit length") {
    Rng rng(5);
    const auto cfg = default_cfg();
    for (int t = 0; t < 20; ++t) {
        auto p = gradcheck::random_params(cfg, rng);
        const Matrix f = oracle::random_matrix(30, cfg.feat_dim, rng, -5, 5);
        const Matrix e = projector_forward(p, f);
        for (int i = 0; i < 30; ++i) CHECK(std::abs(e.row(i).norm() - 1.0) <= 1e-9);
    }
}

TEST_CASE("projector with zero weights returns the normalized bias") {
    Rng rng(6);
    auto p = ModelParams::zeros(default_cfg());
    p.bp2 = oracle::random_matrix(p.config.embed_dim, 1, rng).col(0);
    const Matrix e = projector_forward(p, oracle::random_matrix(9, p.config.feat_dim, rng));
    const Eigen::RowVectorXd expect = p.bp2.transpose() / p.bp2.norm();
    for (int i = 0; i < 9; ++i) CHECK((e.row(i) - expect).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("degenerate embeddings are guarded and counted") {
    Rng rng(7);
    const auto cloud = oracle::random_cloud(10, 3, 4, rng);
    const auto p = ModelParams::zeros(default_cfg());
    const auto act = forward(p, cloud);
    CHECK(act.degenerate_rows == 10);
    CHECK(act.embed.allFinite());
}

TEST_CASE("backward with zero output gradients is zero") {
    Rng rng(8);
    const auto cloud = oracle::random_cloud(30, 3, 4, rng);
    const auto cfg = default_cfg();
    const auto p = gradcheck::random_params(cfg, rng);
    const auto act = forward(p, cloud);
    GradOutputs go;
    go.d_scores = Matrix::Zero(30, cfg.class_count);
    go.d_embed = Matrix::Zero(30, cfg.embed_dim);
    const auto back = backward(p, act, go);
    back.params.for_each([](const char*, const auto& t) { CHECK(t.cwiseAbs().maxCoeff() == 0.0); });
    CHECK(back.d_input.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward is linear in the output gradients") {
    Rng rng(9);
    const auto cloud = oracle::random_cloud(30, 3, 4, rng);
    const auto cfg = default_cfg();
    const auto p = gradcheck::random_params(cfg, rng);
    const auto act = forward(p, cloud);
    for (int t = 0; t < 10; ++t) {
        GradOutputs g1, g2, mix;
        g1.d_scores = oracle::random_matrix(30, cfg.class_count, rng);
        g1.d_embed = oracle::random_matrix(30, cfg.embed_dim, rng);
        g2.d_scores = oracle::random_matrix(30, cfg.class_count, rng);
        g2.d_embed = oracle::random_matrix(30, cfg.embed_dim, rng);
        const double a = uniform(rng, -2, 2), b = uniform(rng, -2, 2);
        mix.d_scores = a * g1.d_scores + b * g2.d_scores;
        mix.d_embed = a * g1.d_embed + b * g2.d_embed;
        const auto r1 = backward(p, act, g1);
        const auto r2 = backward(p, act, g2);
        auto combined = ModelParams::zeros(cfg);
        combined.add_scaled(r1.params, a);
        combined.add_scaled(r2.params, b);
        const auto rm = backward(p, act, mix);
        std::vector<const double*> lhs;
        rm.params.for_each([&](const char*, const auto& t) { lhs.push_back(t.data()); });
        std::size_t k = 0;
        combined.for_each([&](const char*, const auto& t) {
            for (Eigen::Index i = 0; i < t.size(); ++i) CHECK(std::abs(t.data()[i] - lhs[k][i]) <= 1e-10);
            ++k;
        });
        CHECK(max_diff(rm.d_input, a * r1.d_input + b * r2.d_input) <= 1e-10);
    }
}

TEST_CASE("full model gradients match finite differences") {
    int done = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 0; done < 100; ++seed) {
        const auto r = gradcheck::model(seed);
        if (r.skipped) continue;
        worst = std::max(worst, r.max_rel);
        ++done;
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("stale activations are rejected") {
    Rng rng(10);
    const auto cloud = oracle::random_cloud(10, 3, 4, rng);
    auto p = ModelParams::init(default_cfg(), 1);
    const auto act = forward(p, cloud);
    p.version++;
    GradOutputs go;
    go.d_scores = Matrix::Ones(10, 4);
    CHECK_THROWS_AS(backward(p, act, go), InvalidArgument);
}

TEST_CASE("shape mismatches are rejected") {
    Rng rng(11);
    const auto cloud = oracle::random_cloud(10, 2, 4, rng);
    const auto p = ModelParams::init(default_cfg(), 1);
    CHECK_THROWS_AS(forward(p, cloud), InvalidArgument);
    auto bad = default_cfg();
    bad.embed_dim = 1;
    CHECK_THROWS_AS(ModelParams::zeros(bad), InvalidArgument);
}

TEST_CASE("checkpoint round trip is bit exact") {
    Rng rng(12);
    auto p = gradcheck::random_params(default_cfg(), rng);
    p.w1(0, 0) = 0.1;
    std::stringstream ss;
    write_params(ss, p);
    const auto q = read_params(ss);
    CHECK(q.bitwise_equal(p));

    const auto path = std::filesystem::temp_directory_path() / "gpcl_test_model.gpck";
    save_checkpoint(p, path);
    CHECK(load_checkpoint(path).bitwise_equal(p));

    std::stringstream junk("GPCK garbage");
    CHECK_THROWS_AS(read_params(junk), DataError);
}
