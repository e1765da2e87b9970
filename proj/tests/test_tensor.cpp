#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "tedio/ops.hpp"
#include "tedio/tensor.hpp"

using namespace tedio;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape bookkeeping") {
    Tensor t({2, 3, 4});
    CHECK(t.numel() == 24);
    CHECK(t.dim(-1) == 4);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.f, 2.f, 3.f}), DimensionError);
    CHECK_THROWS_AS((void)numel_of({2, 0}), DimensionError);
}

TEST_CASE("matmul identity and unit selection") {
    auto I = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto A = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto P = matmul(I, A);
    for (int i = 0; i < 4; ++i) CHECK(P.ptr()[i] == A.ptr()[i]);

    auto row = Tensor::from({1, 2}, {1, 0});
    auto col = Tensor::from({2, 1}, {2, 3});
    CHECK(matmul(row, col).item() == doctest::Approx(2.0));

    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST_CASE("matmul batches with shared rhs") {
    Rng rng(7);
    auto a = testutil::random_tensor<float>({3, 4, 5}, rng);
    auto b = testutil::random_tensor<float>({5, 2}, rng);
    auto out = matmul(a, b);
    CHECK(out.shape == Shape{3, 4, 2});
    // batch 1 equals the standalone product
    auto a1 = Tensor({4, 5});
    std::copy_n(a.ptr() + 20, 20, a1.ptr());
    auto out1 = matmul(a1, b);
    for (int i = 0; i < 8; ++i) CHECK(out.ptr()[8 + i] == out1.ptr()[i]);
}

TEST_CASE("softmax closed-form values") {
    auto y = softmax(Tensor::from({2}, {0, 0}), 0);
    CHECK(y.ptr()[0] == doctest::Approx(0.5));
    CHECK(y.ptr()[1] == doctest::Approx(0.5));

    auto y2 = softmax(Tensor::from({2}, {std::log(2.f), 0}), 0);
    CHECK(y2.ptr()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
    CHECK(y2.ptr()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-6));

    auto y3 = softmax(Tensor::from({2}, {1000, 0}), 0);
    CHECK(y3.ptr()[0] == doctest::Approx(1.0));
    CHECK(y3.ptr()[1] == doctest::Approx(0.0));
    CHECK(y3.all_finite());

    auto nan = Tensor::from({2}, {std::nanf(""), 0});
    CHECK_THROWS_AS(softmax(nan, 0), NumericError);
}

TEST_CASE("softmax rows sum to one across magnitudes") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const double scale = trial % 3 == 0 ? 1e3 : (trial % 3 == 1 ? 1.0 : 1e-3);
        auto x = testutil::random_tensor<float>({4, 7}, rng, scale);
        auto y = softmax(x, -1);
        for (int r = 0; r < 4; ++r) {
            double s = 0;
            for (int j = 0; j < 7; ++j) s += y.ptr()[r * 7 + j];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("softmax along a middle axis matches last-axis path") {
    Rng rng(13);
    auto x = testutil::random_tensor<float>({3, 5, 2}, rng);
    auto y = softmax(x, 1);
    std::vector<int64_t> order{0, 2, 1};
    auto xt = permute(x, order);
    auto yt = permute(softmax(xt, -1), order);
    CHECK(max_abs_diff(y, yt) < 1e-6f);
}

TEST_CASE("permute transposes and round trips bit-exactly") {
    auto x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    std::vector<int64_t> order{1, 0};
    auto t = permute(x, order);
    CHECK(t.shape == Shape{3, 2});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) CHECK(t.ptr()[j * 2 + i] == x.ptr()[i * 3 + j]);

    Rng rng(3);
    auto big = testutil::random_tensor<float>({3, 4, 5}, rng);
    std::vector<int64_t> fwd{2, 0, 1}, inv{1, 2, 0};
    auto round = permute(permute(big, fwd), inv);
    CHECK(max_abs_diff(round, big) == 0.0f);  // bit-exact

    std::vector<int64_t> bad{0, 0, 1};
    CHECK_THROWS_AS(permute(big, bad), DimensionError);
}

TEST_CASE("frame-major tokens regroup to spatial-major") {
    // tokens [(f0,w0),(f0,w1),(f1,w0),(f1,w1)] -> [(w0,f0),(w0,f1),(w1,f0),(w1,f1)]
    auto x = Tensor::from({2, 2}, {0, 1, 2, 3});  // [F, W] with token index f*W+w
    std::vector<int64_t> order{1, 0};
    auto y = permute_reshape(x, order, {4});
    CHECK(y.ptr()[0] == 0);  // (w0,f0)
    CHECK(y.ptr()[1] == 2);  // (w0,f1)
    CHECK(y.ptr()[2] == 1);  // (w1,f0)
    CHECK(y.ptr()[3] == 3);  // (w1,f1)

    CHECK_THROWS_AS(reshape(x, {5}), DimensionError);
}

TEST_CASE("elementwise suite") {
    CHECK(mean(Tensor::from({3}, {1, 2, 3})).item() == doctest::Approx(2.0));
    CHECK(square(Tensor::from({1}, {-2})).item() == doctest::Approx(4.0));
    CHECK(gelu(Tensor::from({1}, {0})).item() == doctest::Approx(0.0));
    CHECK(sum(Tensor::from({4}, {1, 2, 3, 4})).item() == doctest::Approx(10.0));

    auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto v = Tensor::from({2}, {10, 20});
    auto s = add(a, v);  // trailing broadcast
    CHECK(s.ptr()[0] == 11);
    CHECK(s.ptr()[3] == 24);
    CHECK(mul_scalar(a, 2.f).ptr()[3] == 8);
    CHECK_THROWS_AS(add(a, Tensor({3})), DimensionError);
}

TEST_CASE("layer_norm closed forms") {
    const int64_t D = 6;
    auto x = Tensor::full({2, D}, 3.25f);  // constant tokens
    auto gain = Tensor::full({D}, 1.f);
    auto bias = Tensor::zeros({D});
    auto y = layer_norm(x, gain, bias);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.ptr()[i]) < 1e-4);

    auto x2 = Tensor::from({1, 2}, {1, -1});
    auto y2 = layer_norm(x2, Tensor::full({2}, 1.f), Tensor::zeros({2}));
    const double want = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y2.ptr()[0] == doctest::Approx(want).epsilon(1e-6));
    CHECK(y2.ptr()[1] == doctest::Approx(-want).epsilon(1e-6));

    CHECK_THROWS_AS(layer_norm(x2, Tensor::full({3}, 1.f), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("slice and gather") {
    auto x = Tensor::from({2, 4}, {0, 1, 2, 3, 10, 11, 12, 13});
    auto s = slice_last(x, 1, 2);
    CHECK(s.shape == Shape{2, 2});
    CHECK(s.ptr()[0] == 1);
    CHECK(s.ptr()[3] == 12);

    std::vector<int64_t> idx{1, 1, 0};
    auto g = gather_rows(x, idx);
    CHECK(g.shape == Shape{3, 4});
    CHECK(g.ptr()[0] == 10);
    CHECK(g.ptr()[8] == 0);
    std::vector<int64_t> bad{2};
    CHECK_THROWS_AS(gather_rows(x, bad), UsageError);
}

TEST_CASE("diag_band reads offsets") {
    auto I3 = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto d0 = diag_band(I3, 0);
    CHECK(d0.shape == Shape{3});
    CHECK(d0.ptr()[0] == 1);
    CHECK(d0.ptr()[2] == 1);
    auto d1 = diag_band(I3, 1);
    CHECK(d1.shape == Shape{2});
    CHECK(d1.ptr()[0] == 0);
    CHECK(d1.ptr()[1] == 0);

    auto m = Tensor::from({3, 3}, {.6f, .3f, .1f, .2f, .5f, .3f, .1f, .2f, .7f});
    auto dm = diag_band(m, -1);
    CHECK(dm.ptr()[0] == doctest::Approx(0.2));
    CHECK(dm.ptr()[1] == doctest::Approx(0.2));

    CHECK_THROWS_AS(diag_band(I3, 3), UsageError);
}

TEST_CASE("rng determinism") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const double x = a.normal(), y = b.normal(), z = c.normal();
        all_equal = all_equal && (x == y);
        any_diff = any_diff || (x != z);
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_SUITE_END();
