#include "cgqr/query_refinement.hpp"
#include "oracles/nn_oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace cgqr;
using namespace cgqr::query;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            m(i, j) = n(rng);
    return m;
}

AttentionParams random_params(int d, std::mt19937_64& rng, double gamma)
{
    return {random_matrix(d, d, rng, 0.7), random_matrix(d, d, rng, 0.7), random_matrix(d, d, rng, 0.7),
            random_matrix(d, d, rng, 0.7), gamma};
}

oracle::Mat to_rows(const Matrix& m)
{
    oracle::Mat out(m.rows(), std::vector<double>(m.cols()));
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j)
            out[i][j] = m(i, j);
    return out;
}

contour::ShapeDescriptor descriptor(double a)
{
    return {0.1 * a, 0.2 * a, 0.05 * a, 0.3 * a, 0.02 * a, -0.04 * a};
}

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor t(std::move(shape));
    for (auto& v : t.storage())
        v = n(rng);
    return t;
}

}  // namespace

TEST_CASE("query embedding")
{
    std::mt19937_64 rng(1);
    EmbeddingParams p{random_matrix(8, 6, rng), random_matrix(8, 1, rng).col(0), random_matrix(4, 8, rng)};

    const auto zero = embed_queries({contour::ShapeDescriptor{}}, p);
    for (int j = 0; j < 8; ++j)
        CHECK(zero.queries(0, j) == p.bias(j));

    const auto q0 = embed_queries({descriptor(0.0)}, p).queries.row(0);
    const auto q1 = embed_queries({descriptor(1.0)}, p).queries.row(0);
    const auto q2 = embed_queries({descriptor(2.0)}, p).queries.row(0);
    CHECK(((q2 - q1) - (q1 - q0)).cwiseAbs().maxCoeff() < 1e-12);

    const auto bank = embed_queries({descriptor(1), descriptor(2), descriptor(3)}, p);
    CHECK(bank.size() == 7);
    CHECK(bank.dim() == 8);
    CHECK(bank.contour_count() == 3);
    CHECK(bank.provenance[2] == Provenance::Contour);
    CHECK(bank.provenance[3] == Provenance::Base);
    CHECK(bank.queries.bottomRows(4) == p.base);

    const auto base_only = embed_queries({descriptor(1), descriptor(2), descriptor(3)}, p, false);
    CHECK(base_only.size() == 4);
    CHECK(base_only.contour_count() == 0);

    // batched op: descriptors must be (B, K, 6)
    nn::Var proj(Tensor({8, 6}, 0.1)), bias(Tensor({8}, 0.0)), base(Tensor({4, 8}, 0.0));
    CHECK_THROWS_AS(embed_queries_op(Tensor({1, 3, 5}), proj, bias, base, true), ShapeError);
    CHECK(embed_queries_op(Tensor({2, 3, 6}), proj, bias, base, true).shape() == std::vector<int>{2, 7, 8});
    CHECK(embed_queries_op(Tensor({2, 3, 6}), nn::Var{}, nn::Var{}, base, false).shape() ==
          std::vector<int>{2, 4, 8});
}

TEST_CASE("pyramid fusion")
{
    std::mt19937_64 rng(2);
    encoder::FeatureSet fs;
    fs.maps = {random_tensor({16, 16, 16}, rng), random_tensor({32, 8, 8}, rng), random_tensor({64, 4, 4}, rng)};
    const std::array<Matrix, 3> align{random_matrix(32, 16, rng), random_matrix(32, 32, rng),
                                      random_matrix(32, 64, rng)};
    const auto tokens = fuse_pyramid(fs, align);
    CHECK(tokens.tokens.rows() == 256);
    CHECK(tokens.tokens.cols() == 32);
    CHECK(tokens.height == 16);
    CHECK(tokens.width == 16);

    encoder::FeatureSet zero;
    zero.maps = {Tensor({16, 16, 16}), Tensor({32, 8, 8}), Tensor({64, 4, 4})};
    CHECK(fuse_pyramid(zero, align).tokens.isZero(0.0));

    encoder::FeatureSet only_first = fs;
    only_first.maps[1].fill(0.0);
    only_first.maps[2].fill(0.0);
    const auto single = fuse_pyramid(only_first, align);
    double worst = 0.0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 32; ++c) {
                double v = 0.0;
                for (int ch = 0; ch < 16; ++ch)
                    v += align[0](c, ch) * fs.maps[0][(static_cast<std::size_t>(ch) * 16 + y) * 16 + x];
                worst = std::max(worst, std::abs(v - single.tokens(y * 16 + x, c)));
            }
    CHECK(worst < 1e-12);
    CHECK(fuse_pyramid(fs, align, true).tokens == single.tokens);
}

TEST_CASE("refine examples")
{
    const Matrix ones = Matrix::Ones(1, 1);
    FusedTokens zero{Matrix::Zero(2, 1), 1, 2};
    QueryBank q{Matrix::Ones(1, 1), {Provenance::Base}};
    const auto [_, trace0] = refine(zero, q, {ones, ones, ones, ones, 1.0});
    CHECK(trace0.weights(0, 0) == doctest::Approx(0.5));
    CHECK(trace0.weights(0, 1) == doctest::Approx(0.5));

    FusedTokens f{Matrix(2, 1), 1, 2};
    f.tokens << 1.0, -1.0;
    const auto [out, trace] = refine(f, q, {ones, ones, ones, ones, 1.0});

    // the five equations written out for M = 1, N = 2, d = 1
    const double e2 = std::exp(2.0);
    const double a0 = e2 / (1.0 + e2), a1 = 1.0 / (1.0 + e2);
    const double h = a0 * 1.0 + a1 * -1.0;
    const double m0 = a0 * h, m1 = a1 * h;
    CHECK(std::abs(trace.weights(0, 0) - a0) < 1e-12);
    CHECK(std::abs(trace.weights(0, 1) - a1) < 1e-12);
    CHECK(std::abs(trace.context(0, 0) - h) < 1e-12);
    CHECK(std::abs(trace.modulation(0, 0) - m0) < 1e-12);
    CHECK(std::abs(out.tokens(0, 0) - (1.0 + m0)) < 1e-12);
    CHECK(std::abs(out.tokens(1, 0) - (-1.0 + m1)) < 1e-12);
    CHECK(out.height == 1);
    CHECK(out.width == 2);
}

TEST_CASE("refine matches the loop evaluator")
{
    std::mt19937_64 rng(3);
    for (int t = 0; t < 30; ++t) {
        const int m = 1 + rng() % 5, n = 1 + rng() % 12, d = 1 + rng() % 6;
        const Matrix f = random_matrix(n, d, rng), q = random_matrix(m, d, rng);
        const auto p = random_params(d, rng, 0.3 + t * 0.1);
        const Matrix ours = attention_forward(f, q, p);
        const auto ref = oracle::attention(to_rows(f), to_rows(q), to_rows(p.w_query), to_rows(p.w_key),
                                           to_rows(p.w_value), to_rows(p.w_modulation), p.gamma);
        double worst = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
                worst = std::max(worst, std::abs(ours(i, j) - ref.refined[i][j]));
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("gamma zero is the identity")
{
    std::mt19937_64 rng(4);
    for (int t = 0; t < 20; ++t) {
        const int m = 1 + rng() % 6, n = 1 + rng() % 30, d = 1 + rng() % 8;
        FusedTokens f{random_matrix(n, d, rng), 1, n};
        QueryBank q{random_matrix(m, d, rng), std::vector<Provenance>(m, Provenance::Base)};
        const auto [out, _] = refine(f, q, random_params(d, rng, 0.0));
        CHECK(out.tokens == f.tokens);
    }
}

TEST_CASE("softmax rows lie on the simplex")
{
    std::mt19937_64 rng(5);
    for (int t = 0; t < 200; ++t) {
        const int m = 1 + rng() % 8, n = 1 + rng() % 64;
        const Matrix a = softmax_rows(random_matrix(m, n, rng, 1.0 + 30.0 * (t % 4)));
        CHECK(a.minCoeff() >= 0.0);
        for (int i = 0; i < m; ++i)
            CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-5);
    }
}

TEST_CASE("attention gradients match finite differences")
{
    std::mt19937_64 rng(6);
    const int m = 2, n = 6, d = 3;
    Matrix f = random_matrix(n, d, rng), q = random_matrix(m, d, rng);
    AttentionParams p = random_params(d, rng, 0.8);

    AttentionCache cache;
    attention_forward(f, q, p, &cache);
    const auto g = attention_backward(f, q, p, cache, Matrix::Ones(n, d));

    std::vector<double*> x;
    std::vector<double> analytic;
    auto add = [&](Matrix& value, const Matrix& grad) {
        for (int i = 0; i < value.rows(); ++i)
            for (int j = 0; j < value.cols(); ++j) {
                x.push_back(&value(i, j));
                analytic.push_back(grad(i, j));
            }
    };
    add(f, g.d_tokens);
    add(q, g.d_queries);
    add(p.w_query, g.d_w_query);
    add(p.w_key, g.d_w_key);
    add(p.w_value, g.d_w_value);
    add(p.w_modulation, g.d_w_modulation);
    x.push_back(&p.gamma);
    analytic.push_back(g.d_gamma);

    const auto numeric = oracle::numeric_gradient([&]() { return attention_forward(f, q, p).sum(); }, x);
    CHECK(oracle::relative_error(analytic, numeric) < 1e-5);
}

TEST_CASE("permuting queries permutes the trace and keeps the output")
{
    std::mt19937_64 rng(7);
    const int m = 5, n = 9, d = 4;
    FusedTokens f{random_matrix(n, d, rng), 3, 3};
    QueryBank q{random_matrix(m, d, rng), std::vector<Provenance>(m, Provenance::Base)};
    const auto p = random_params(d, rng, 0.9);
    const std::vector<int> perm{3, 0, 4, 1, 2};
    QueryBank qp = q;
    for (int i = 0; i < m; ++i)
        qp.queries.row(i) = q.queries.row(perm[i]);
    const auto [out, trace] = refine(f, q, p);
    const auto [outp, tracep] = refine(f, qp, p);
    for (int i = 0; i < m; ++i)
        CHECK((tracep.weights.row(i) - trace.weights.row(perm[i])).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((outp.tokens - out.tokens).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("flatten and unflatten")
{
    std::mt19937_64 rng(8);
    const Tensor grid = random_tensor({32, 8, 8}, rng);
    const auto tokens = flatten(grid);
    CHECK(unflatten(tokens) == grid);
    for (int i : {0, 7, 8, 37, 63})
        for (int c : {0, 5, 31})
            CHECK(tokens.tokens(i, c) == grid[(static_cast<std::size_t>(c) * 8 + i / 8) * 8 + i % 8]);

    FusedTokens twelve{random_matrix(12, 5, rng), 3, 4};
    CHECK(unflatten(twelve).shape() == std::vector<int>{5, 3, 4});
    FusedTokens bad{random_matrix(12, 5, rng), 5, 4};
    CHECK_THROWS_AS(unflatten(bad), ShapeError);
}

TEST_CASE("dimension mismatch is rejected")
{
    std::mt19937_64 rng(9);
    FusedTokens f{random_matrix(6, 4, rng), 2, 3};
    QueryBank q{random_matrix(2, 3, rng), {Provenance::Base, Provenance::Base}};
    CHECK_THROWS_AS(refine(f, q, random_params(4, rng, 0.0)), ShapeError);
}
