#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "bev/blob.hpp"
#include "bev/gradcheck.hpp"
#include "bev/ops.hpp"

using namespace bev;

namespace {

// reference convolution: direct quadruple loop
Tensor<double> conv2d_naive(const Tensor<double>& in, const Tensor<double>& w,
                            const Tensor<double>& b, int stride, int pad) {
    const int ci = in.dim(0), h = in.dim(1), ww = in.dim(2);
    const int co = w.dim(0), k = w.dim(2);
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (ww + 2 * pad - k) / stride + 1;
    Tensor<double> out({co, ho, wo});
    for (int oc = 0; oc < co; ++oc)
        for (int y = 0; y < ho; ++y)
            for (int x = 0; x < wo; ++x) {
                double acc = b.data()[oc];
                for (int c = 0; c < ci; ++c)
                    for (int di = 0; di < k; ++di)
                        for (int dj = 0; dj < k; ++dj) {
                            const int iy = y * stride - pad + di;
                            const int ix = x * stride - pad + dj;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= ww) continue;
                            acc += in.data()[(c * h + iy) * ww + ix] *
                                   w.data()[((oc * ci + c) * k + di) * k + dj];
                        }
                out.data()[(oc * ho + y) * wo + x] = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("conv2d basic values") {
    // 1x3x3 ones, 1x1x3x3 ones kernel, pad 1: center output is the full sum
    Tensor<float> in = Tensor<float>::full({1, 3, 3}, 1.0f);
    Tensor<float> w = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
    Tensor<float> b({1});
    Tensor<float> out = conv2d(in, w, b, 1, 1);
    CHECK(out.shape() == std::vector<int>{1, 3, 3});
    CHECK(out.data()[4] == doctest::Approx(9.0));
    CHECK(out.data()[0] == doctest::Approx(4.0));

    // identity 1x1 kernel reproduces the input
    Rng rng(7);
    Tensor<float> x = random_tensor<float>({2, 4, 5}, rng);
    Tensor<float> eye({2, 2, 1, 1});
    eye.data()[0] = 1.0f;  // [0,0]
    eye.data()[3] = 1.0f;  // [1,1]
    Tensor<float> y = conv2d(x, eye, Tensor<float>({2}), 1, 0);
    for (long long i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d matches the naive loop") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const int stride = 1 + trial % 2;
        const int pad = trial % 3;
        Tensor<double> in = random_tensor<double>({2, 5, 6}, rng);
        Tensor<double> w = random_tensor<double>({3, 2, 3, 3}, rng);
        Tensor<double> b = random_tensor<double>({3}, rng);
        Tensor<double> fast = conv2d(in, w, b, stride, pad);
        Tensor<double> ref = conv2d_naive(in, w, b, stride, pad);
        REQUIRE(fast.shape() == ref.shape());
        for (long long i = 0; i < fast.numel(); ++i)
            CHECK(fast.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv2d rejects channel mismatch with a shape diagnostic") {
    Tensor<float> in({2, 5, 5});
    Tensor<float> w({3, 4, 3, 3});
    Tensor<float> b({3});
    CHECK_THROWS_WITH_AS(conv2d(in, w, b, 1, 1),
                         doctest::Contains("channels"), std::invalid_argument);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const int stride = 1 + trial % 2;
        auto fn = [stride](Tape<double>& tp, const std::vector<Tensor<double>>& in) {
            (void)tp;
            return mean(conv2d(in[0], in[1], in[2], stride, 1));
        };
        auto res = check_gradients(
            "conv2d", fn,
            {random_tensor<double>({2, 5, 5}, rng), random_tensor<double>({3, 2, 3, 3}, rng),
             random_tensor<double>({3}, rng)});
        CHECK_MESSAGE(res.pass, res.name, " max rel err ", res.max_rel_err);
    }
}

TEST_CASE("bilinear_sample values") {
    // 1x4x5 image with value = row*10 + col
    Tensor<float> img({1, 4, 5});
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 5; ++c) img.data()[r * 5 + c] = 10.0f * r + c;

    SUBCASE("integer coordinate hits the pixel exactly") {
        Tensor<float> coords({1, 2}, {2.0f, 3.0f});  // x=2, y=3
        auto res = bilinear_sample(img, coords);
        CHECK(res.valid[0] == 1);
        CHECK(res.values.data()[0] == doctest::Approx(32.0));
    }
    SUBCASE("midpoint between horizontal neighbours") {
        Tensor<float> img2({1, 1, 2}, {0.0f, 1.0f});
        Tensor<float> coords({1, 2}, {0.5f, 0.0f});
        auto res = bilinear_sample(img2, coords);
        CHECK(res.values.data()[0] == doctest::Approx(0.5));
    }
    SUBCASE("out of bounds is zero and invalid") {
        Tensor<float> coords({2, 2}, {-5.0f, -5.0f, 4.5f, 0.0f});
        auto res = bilinear_sample(img, coords);
        CHECK(res.valid[0] == 0);
        CHECK(res.valid[1] == 0);
        CHECK(res.values.data()[0] == 0.0f);
        CHECK(res.values.data()[1] == 0.0f);
    }
    SUBCASE("non-finite coordinates are rejected") {
        Tensor<float> coords({1, 2}, {std::numeric_limits<float>::quiet_NaN(), 0.0f});
        CHECK_THROWS_AS(bilinear_sample(img, coords), std::invalid_argument);
    }
}

TEST_CASE("bilinear_sample gradients match finite differences") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        // coords strictly interior, away from the integer lattice
        Tensor<double> coords({6, 2});
        for (int i = 0; i < 6; ++i) {
            coords.data()[2 * i] = rng.uniform(0.15, 4.85);
            coords.data()[2 * i + 1] = rng.uniform(0.15, 3.85);
            if (std::abs(coords.data()[2 * i] - std::round(coords.data()[2 * i])) < 0.05)
                coords.data()[2 * i] += 0.1;
            if (std::abs(coords.data()[2 * i + 1] - std::round(coords.data()[2 * i + 1])) < 0.05)
                coords.data()[2 * i + 1] += 0.1;
        }
        auto fn = [](Tape<double>& tp, const std::vector<Tensor<double>>& in) {
            (void)tp;
            auto res = bilinear_sample(in[0], in[1]);
            return mean(res.values);
        };
        auto res = check_gradients("bilinear_sample", fn,
                                   {random_tensor<double>({3, 5, 6}, rng), coords});
        CHECK_MESSAGE(res.pass, res.name, " max rel err ", res.max_rel_err);
    }
}

TEST_CASE("scatter_add values and oracle") {
    SUBCASE("two values into one cell sum") {
        Tensor<float> v({2, 3}, {1, 2, 3, 10, 20, 30});
        Tensor<float> out = scatter_add(v, {1, 1}, 4);
        CHECK(out.data()[3] == doctest::Approx(11.0));
        CHECK(out.data()[4] == doctest::Approx(22.0));
        CHECK(out.data()[5] == doctest::Approx(33.0));
        CHECK(out.data()[0] == 0.0f);
        CHECK(out.data()[9] == 0.0f);
    }
    SUBCASE("all sentinel gives zeros") {
        Tensor<float> v({3, 2}, {1, 2, 3, 4, 5, 6});
        Tensor<float> out = scatter_add(v, {-1, -1, -1}, 5);
        for (long long i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.0f);
    }
    SUBCASE("index past the end is rejected") {
        Tensor<float> v({1, 2}, {1, 2});
        CHECK_THROWS_AS(scatter_add(v, {4}, 4), std::invalid_argument);
    }
    SUBCASE("random instance equals a naive accumulation loop") {
        Rng rng(41);
        const int n = 40, m = 9, c = 5;
        Tensor<double> v = random_tensor<double>({n, c}, rng);
        std::vector<long long> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = rng.uniform_int(-1, m - 1);
        Tensor<double> out = scatter_add(v, idx, m);
        std::vector<double> ref(m * c, 0.0);
        for (int i = 0; i < n; ++i) {
            if (idx[i] < 0) continue;
            for (int j = 0; j < c; ++j) ref[idx[i] * c + j] += v.data()[i * c + j];
        }
        for (long long i = 0; i < out.numel(); ++i)
            CHECK(out.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("scatter/gather adjointness") {
    // <scatter(v), u> == <v, gather(u)> — backward is exactly the gather
    Rng rng(43);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 30, m = 8, c = 4;
        Tensor<double> v = random_tensor<double>({n, c}, rng);
        std::vector<long long> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = rng.uniform_int(-1, m - 1);
        Tensor<double> u = random_tensor<double>({m, c}, rng);

        Tensor<double> sv = scatter_add(v, idx, m);
        double lhs = 0.0;
        for (long long i = 0; i < sv.numel(); ++i) lhs += sv.data()[i] * u.data()[i];

        double rhs = 0.0;
        for (int i = 0; i < n; ++i) {
            if (idx[i] < 0) continue;
            for (int j = 0; j < c; ++j) rhs += v.data()[i * c + j] * u.data()[idx[i] * c + j];
        }
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
    }
}

TEST_CASE("elementwise values") {
    Tensor<float> x({2}, {-1.0f, 2.0f});
    Tensor<float> r = relu(x);
    CHECK(r.data()[0] == 0.0f);
    CHECK(r.data()[1] == 2.0f);

    Tensor<float> logits = Tensor<float>::full({4}, 1.7f);
    Tensor<float> sm = softmax(logits, 0);
    for (int i = 0; i < 4; ++i) CHECK(sm.data()[i] == doctest::Approx(0.25));

    Tensor<float> a({2, 2}, {1, 2, 3, 4});
    Tensor<float> s = Tensor<float>::scalar(10.0f);
    Tensor<float> y = mul(a, s);
    CHECK(y.data()[3] == 40.0f);
    Tensor<float> z = add(a, a);
    CHECK(z.data()[2] == 6.0f);
    CHECK_THROWS_AS(add(a, Tensor<float>({3})), std::invalid_argument);
}

TEST_CASE("softmax normalizes along every axis") {
    Rng rng(47);
    Tensor<double> x = random_tensor<double>({3, 4, 5}, rng, -4.0, 4.0);
    for (int axis = 0; axis < 3; ++axis) {
        Tensor<double> y = softmax(x, axis);
        const auto strides = std::vector<long long>{20, 5, 1};
        const long long inner = strides[axis];
        const long long len = x.dim(axis);
        const long long outer = x.numel() / (inner * len);
        for (long long o = 0; o < outer; ++o)
            for (long long i = 0; i < inner; ++i) {
                double s = 0.0;
                for (long long j = 0; j < len; ++j) s += y.data()[o * len * inner + j * inner + i];
                CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
            }
    }
}

TEST_CASE("elementwise gradients match finite differences") {
    Rng rng(53);
    using In = std::vector<Tensor<double>>;
    struct Named {
        const char* name;
        GradFn fn;
        std::vector<std::vector<int>> shapes;
    };
    std::vector<Named> ops = {
        {"add", [](Tape<double>&, const In& in) { return mean(add(in[0], in[1])); }, {{3, 4}, {3, 4}}},
        {"add_scalar_tensor",
         [](Tape<double>&, const In& in) { return mean(add(in[0], in[1])); },
         {{3, 4}, {}}},
        {"sub", [](Tape<double>&, const In& in) { return mean(sub(in[0], in[1])); }, {{3, 4}, {3, 4}}},
        {"mul", [](Tape<double>&, const In& in) { return mean(mul(in[0], in[1])); }, {{3, 4}, {3, 4}}},
        {"mul_scalar_tensor",
         [](Tape<double>&, const In& in) { return mean(mul(in[0], in[1])); },
         {{}, {3, 4}}},
        {"exp", [](Tape<double>&, const In& in) { return mean(bev::exp(in[0])); }, {{3, 4}}},
        {"relu",
         [](Tape<double>&, const In& in) { return mean(relu(in[0])); },
         {{3, 4}}},
        {"sigmoid", [](Tape<double>&, const In& in) { return mean(sigmoid(in[0])); }, {{3, 4}}},
        {"softmax",
         [](Tape<double>&, const In& in) { return mean(mul(softmax(in[0], 1), in[1])); },
         {{3, 4}, {3, 4}}},
        {"mean", [](Tape<double>&, const In& in) { return mean(mul(in[0], in[0])); }, {{3, 4}}},
        {"sum", [](Tape<double>&, const In& in) { return sum(mul(in[0], in[0])); }, {{3, 4}}},
        {"concat",
         [](Tape<double>&, const In& in) {
             return mean(mul(concat<double>({in[0], in[1]}, 1), concat<double>({in[1], in[0]}, 1)));
         },
         {{3, 4}, {3, 4}}},
        {"reshape",
         [](Tape<double>&, const In& in) { return mean(mul(reshape(in[0], {4, 3}), in[1])); },
         {{3, 4}, {4, 3}}},
        {"permute",
         [](Tape<double>&, const In& in) { return mean(mul(permute(in[0], {1, 0}), in[1])); },
         {{3, 4}, {4, 3}}},
        {"slice",
         [](Tape<double>&, const In& in) { return mean(mul(slice(in[0], 1, 1, 2), in[1])); },
         {{3, 4}, {3, 2}}},
        {"repeat_rows",
         [](Tape<double>&, const In& in) { return mean(mul(repeat_rows(in[0], 3), in[1])); },
         {{2, 4}, {6, 4}}},
        {"scale_rows",
         [](Tape<double>&, const In& in) { return mean(scale_rows(in[0], in[1])); },
         {{5, 4}, {5}}},
    };
    for (const auto& op : ops) {
        for (int trial = 0; trial < 20; ++trial) {
            In inputs;
            for (const auto& sh : op.shapes) inputs.push_back(random_tensor<double>(sh, rng));
            // relu: keep values away from the kink so the subgradient choice
            // cannot collide with the finite-difference step
            if (std::string(op.name) == "relu")
                for (auto& t : inputs)
                    for (long long i = 0; i < t.numel(); ++i)
                        if (std::abs(t.data()[i]) < 1e-3) t.data()[i] += 0.01;
            auto res = check_gradients(op.name, op.fn, inputs);
            CHECK_MESSAGE(res.pass, op.name, " max rel err ", res.max_rel_err);
        }
    }
}

TEST_CASE("bce_with_logits") {
    SUBCASE("logit 0, label 1 gives ln 2") {
        Tensor<float> x = Tensor<float>::scalar(0.0f);
        Tensor<float> y = Tensor<float>::scalar(1.0f);
        CHECK(bce_with_logits(x, y, 1.0f).value() == doctest::Approx(0.6931472).epsilon(1e-5));
    }
    SUBCASE("saturated logit stays finite") {
        Tensor<float> x = Tensor<float>::scalar(80.0f);
        Tensor<float> y = Tensor<float>::scalar(1.0f);
        const float v = bce_with_logits(x, y, 1.0f).value();
        CHECK(std::isfinite(v));
        CHECK(v == doctest::Approx(0.0).epsilon(1e-6));
        Tensor<float> xn = Tensor<float>::scalar(-80.0f);
        CHECK(std::isfinite(bce_with_logits(xn, y, 1.0f).value()));
    }
    SUBCASE("labels outside {0,1} are rejected") {
        Tensor<float> x = Tensor<float>::scalar(0.0f);
        Tensor<float> y = Tensor<float>::scalar(0.5f);
        CHECK_THROWS_AS(bce_with_logits(x, y, 1.0f), std::invalid_argument);
    }
    SUBCASE("gradient matches finite differences") {
        Rng rng(59);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor<double> labels({3, 4});
            for (long long i = 0; i < labels.numel(); ++i)
                labels.data()[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
            const double pw = rng.uniform(0.5, 3.0);
            auto fn = [labels, pw](Tape<double>&, const std::vector<Tensor<double>>& in) {
                return bce_with_logits(in[0], labels, pw);
            };
            auto res = check_gradients("bce", fn, {random_tensor<double>({3, 4}, rng, -3.0, 3.0)});
            CHECK_MESSAGE(res.pass, "bce max rel err ", res.max_rel_err);
        }
    }
}

TEST_CASE("l1_masked") {
    SUBCASE("identical tensors give zero") {
        Rng rng(61);
        Tensor<float> p = random_tensor<float>({4, 4}, rng);
        Tensor<float> m = Tensor<float>::full({4, 4}, 1.0f);
        CHECK(l1_masked(p, p, m).value() == 0.0f);
    }
    SUBCASE("all-zero mask is guarded") {
        Tensor<float> p({2}, {1.0f, 2.0f});
        Tensor<float> t({2}, {0.0f, 0.0f});
        Tensor<float> m({2});
        CHECK(l1_masked(p, t, m).value() == 0.0f);
    }
    SUBCASE("random masked instance equals a naive loop") {
        Rng rng(67);
        Tensor<double> p = random_tensor<double>({5, 6}, rng);
        Tensor<double> t = random_tensor<double>({5, 6}, rng);
        Tensor<double> m({5, 6});
        for (long long i = 0; i < m.numel(); ++i) m.data()[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        double acc = 0.0, cnt = 0.0;
        for (long long i = 0; i < p.numel(); ++i) {
            acc += m.data()[i] * std::abs(p.data()[i] - t.data()[i]);
            cnt += m.data()[i];
        }
        CHECK(l1_masked(p, t, m).value() ==
              doctest::Approx(acc / std::max(cnt, 1.0)).epsilon(1e-12));
    }
    SUBCASE("gradient matches finite differences") {
        Rng rng(71);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor<double> m({4, 5});
            for (long long i = 0; i < m.numel(); ++i) m.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
            auto fn = [m](Tape<double>&, const std::vector<Tensor<double>>& in) {
                return l1_masked(in[0], in[1], m);
            };
            auto res = check_gradients(
                "l1_masked", fn,
                {random_tensor<double>({4, 5}, rng), random_tensor<double>({4, 5}, rng)});
            CHECK_MESSAGE(res.pass, "l1_masked max rel err ", res.max_rel_err);
        }
    }
}

TEST_CASE("tape backward basics") {
    SUBCASE("leaf loss has unit gradient") {
        Tape<float> tape;
        Tensor<float> x = tape.leaf(Tensor<float>::scalar(3.0f));
        tape.backward(x);
        CHECK(tape.grad(x)[0] == 1.0f);
    }
    SUBCASE("product rule") {
        Tape<float> tape;
        Tensor<float> x = tape.leaf(Tensor<float>::scalar(2.0f));
        Tensor<float> y = tape.leaf(Tensor<float>::scalar(3.0f));
        Tensor<float> loss = mul(x, y);
        tape.backward(loss);
        CHECK(tape.grad(x)[0] == 3.0f);
        CHECK(tape.grad(y)[0] == 2.0f);
    }
    SUBCASE("non-scalar loss is rejected") {
        Tape<float> tape;
        Tensor<float> x = tape.leaf(Tensor<float>({2, 2}));
        CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
    }
    SUBCASE("one backward per forward episode") {
        Tape<float> tape;
        Tensor<float> x = tape.leaf(Tensor<float>::scalar(1.0f));
        tape.backward(x);
        CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
    }
    SUBCASE("fan-out accumulates") {
        Tape<float> tape;
        Tensor<float> x = tape.leaf(Tensor<float>::scalar(5.0f));
        Tensor<float> loss = add(mul(x, x), x);  // x^2 + x, d/dx = 2x + 1
        tape.backward(loss);
        CHECK(tape.grad(x)[0] == doctest::Approx(11.0f));
    }
}

TEST_CASE("forward is deterministic for a fixed seed") {
    auto run = [] {
        Rng rng(1234);
        Tensor<float> in = random_tensor<float>({3, 8, 8}, rng);
        Tensor<float> w = random_tensor<float>({4, 3, 3, 3}, rng);
        Tensor<float> b = random_tensor<float>({4}, rng);
        Tape<float> tape;
        Tensor<float> wb = tape.leaf(w);
        Tensor<float> out = relu(conv2d(in, wb, b, 2, 1));
        Tensor<float> loss = mean(out);
        tape.backward(loss);
        auto g = tape.grad(wb);
        g.push_back(loss.value());
        return g;
    };
    auto a = run();
    auto b = run();
    CHECK(a == b);  // bit identical
}

TEST_CASE("blob round trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "bev_blob_test";
    fs::create_directories(dir);
    Rng rng(77);
    Tensor<float> t = random_tensor<float>({2, 3, 4}, rng);
    const std::string path = (dir / "t.bevt").string();
    write_blob(path, t);
    Tensor<float> r = read_blob<float>(path);
    CHECK(r.shape() == t.shape());
    CHECK(std::memcmp(r.data(), t.data(), sizeof(float) * t.numel()) == 0);

    // rank-0 scalar survives
    write_blob(path, Tensor<float>::scalar(4.25f));
    CHECK(read_blob<float>(path).value() == 4.25f);

    CHECK_THROWS_WITH_AS(read_blob<float>((dir / "absent.bevt").string()),
                         doctest::Contains("absent.bevt"), std::invalid_argument);
    {
        std::ofstream bad((dir / "bad.bevt").string(), std::ios::binary);
        bad.write("NOPE", 4);
    }
    CHECK_THROWS_AS(read_blob<float>((dir / "bad.bevt").string()), std::invalid_argument);
    fs::remove_all(dir);
}

TEST_CASE("gradcheck flags a corrupted backward rule") {
    // negative control: analytic gradient deliberately scaled by 2
    auto bad_square = [](Tape<double>& tp, const std::vector<Tensor<double>>& in) {
        Tensor<double> out = Tensor<double>::scalar(in[0].value() * in[0].value());
        if (!in[0].on_tape()) return out;
        const int nx = in[0].node();
        const double x = in[0].value();
        return tp.emit(std::move(out), [nx, x](Tape<double>& t, int self) {
            t.grad_buf(nx)[0] += t.grad_view(self)[0] * 4.0 * x;  // should be 2x
        });
    };
    auto res = check_gradients("corrupted", bad_square, {Tensor<double>::scalar(1.5)});
    CHECK_FALSE(res.pass);
    CHECK(res.max_rel_err > 0.1);
}
