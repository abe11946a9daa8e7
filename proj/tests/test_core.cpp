#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <omp.h>
#include <sstream>

#include "geoscene/adam.hpp"
#include "geoscene/errors.hpp"
#include "geoscene/kernels.hpp"
#include "geoscene/ops.hpp"
#include "geoscene/reference.hpp"
#include "geoscene/rng.hpp"
#include "geoscene/tensor.hpp"
#include "geoscene/tensor_io.hpp"

#include "test_util.hpp"

using namespace geoscene;
using testutil::fd_check;
using testutil::fill_uniform;

namespace {

std::vector<double> widen(const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
}

TensorPtrT<double> rand_input(std::vector<int> shape, Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
    auto t = make_tensor<double>(std::move(shape), true);
    fill_uniform(t, rng, lo, hi);
    return t;
}

TensorPtrT<double> rand_weights(std::vector<int> shape, Rng& rng) {
    auto t = make_tensor<double>(std::move(shape));
    fill_uniform(t, rng, -1.0, 1.0);
    return t;
}

TensorPtrT<double> scalarize(TapeT<double>& tape, const TensorPtrT<double>& y,
                             const TensorPtrT<double>& w) {
    return sum_all(tape, mul(tape, y, w));
}

} // namespace

TEST_CASE("matmul: hand example") {
    auto a = make_tensor<float>({2, 2}, {1, 2, 3, 4});
    auto b = make_tensor<float>({2, 2}, {5, 6, 7, 8});
    std::vector<float> c(4);
    kernels::matmul(a->data.data(), b->data.data(), c.data(), 2, 2, 2);
    CHECK(c == std::vector<float>{19, 22, 43, 50});
}

TEST_CASE("matmul kernels agree with the serial oracle") {
    Rng rng(101);
    for (int inst = 0; inst < 50; ++inst) {
        const int m = 1 + int(rng.uniform_int(12));
        const int k = 1 + int(rng.uniform_int(24));
        const int n = 1 + int(rng.uniform_int(12));
        std::vector<float> a(size_t(m) * k), b(size_t(k) * n), c(size_t(m) * n);
        for (auto& v : a) v = float(rng.uniform(-1, 1));
        for (auto& v : b) v = float(rng.uniform(-1, 1));
        kernels::matmul(a.data(), b.data(), c.data(), m, k, n);
        std::vector<double> cd(size_t(m) * n);
        ref::matmul(widen(a).data(), widen(b).data(), cd.data(), m, k, n);
        CHECK(testutil::max_abs_diff(c, std::vector<float>(cd.begin(), cd.end())) <= 1e-6);

        // A * B^T through the dedicated kernel vs the oracle on B transposed
        std::vector<float> bt(size_t(n) * k), cnt(size_t(m) * n);
        std::vector<double> btd(size_t(n) * k);
        for (int j = 0; j < n; ++j)
            for (int p = 0; p < k; ++p) {
                bt[size_t(j) * k + p] = b[size_t(p) * n + j];
                btd[size_t(j) * k + p] = double(b[size_t(p) * n + j]);
            }
        kernels::matmul_nt(a.data(), bt.data(), cnt.data(), m, k, n);
        CHECK(testutil::max_abs_diff(cnt, std::vector<float>(cd.begin(), cd.end())) <= 1e-6);
    }
}

TEST_CASE("matmul is invariant to the OpenMP thread count") {
    Rng rng(77);
    const int m = 33, k = 17, n = 29;
    std::vector<float> a(size_t(m) * k), b(size_t(k) * n);
    for (auto& v : a) v = float(rng.uniform(-1, 1));
    for (auto& v : b) v = float(rng.uniform(-1, 1));
    std::vector<float> c1(size_t(m) * n), c4(size_t(m) * n);
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    kernels::matmul(a.data(), b.data(), c1.data(), m, k, n);
    omp_set_num_threads(4);
    kernels::matmul(a.data(), b.data(), c4.data(), m, k, n);
    omp_set_num_threads(saved);
    CHECK(c1 == c4);
}

TEST_CASE("softmax_rows: examples and oracle") {
    std::vector<float> y(2);
    std::vector<float> x{0.f, 0.f};
    kernels::softmax_rows(x.data(), y.data(), 1, 2);
    CHECK(y[0] == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-7));

    std::vector<float> big{1000.f, 1000.f, 1000.f}, yb(3);
    kernels::softmax_rows(big.data(), yb.data(), 1, 3);
    for (float v : yb) {
        CHECK(std::isfinite(v));
        CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    }

    Rng rng(202);
    for (int inst = 0; inst < 50; ++inst) {
        const int m = 1 + int(rng.uniform_int(8));
        const int n = 1 + int(rng.uniform_int(16));
        std::vector<float> xs(size_t(m) * n), ys(xs.size());
        for (auto& v : xs) v = float(rng.uniform(-4, 4));
        kernels::softmax_rows(xs.data(), ys.data(), m, n);
        std::vector<double> yd(xs.size());
        ref::softmax_rows(widen(xs).data(), yd.data(), m, n);
        CHECK(testutil::max_abs_diff(ys, std::vector<float>(yd.begin(), yd.end())) <= 1e-5);
        for (int i = 0; i < m; ++i) {
            double s = 0;
            for (int j = 0; j < n; ++j) s += ys[size_t(i) * n + j];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("gelu matches the exact-erf formula") {
    std::vector<float> x{-3.f, -1.f, 0.f, 0.5f, 2.f, 8.f}, y(6);
    kernels::gelu(x.data(), y.data(), x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double xd = double(x[i]);
        const double want = xd * 0.5 * (1.0 + std::erf(xd / std::sqrt(2.0)));
        CHECK(double(y[i]) == doctest::Approx(want).epsilon(1e-6));
    }
    CHECK(y[2] == 0.0f);
}

TEST_CASE("tape: quadratic loss gradient and contract errors") {
    TapeT<float> tape;
    auto x = make_tensor<float>({3}, {1, 2, 3}, true);
    auto loss = sum_all(tape, mul(tape, x, x));
    CHECK(loss->item() == doctest::Approx(14.0));
    tape.backward(loss);
    CHECK(x->grad == std::vector<float>{2, 4, 6});
    CHECK_THROWS_AS(tape.backward(loss), contract_error);

    TapeT<float> tape2;
    auto y = mul(tape2, x, x);
    CHECK_THROWS_AS(tape2.backward(y), contract_error);
}

TEST_CASE("NoGradGuard detaches everything recorded inside it") {
    TapeT<float> tape;
    auto x = make_tensor<float>({2}, {1, 2}, true);
    {
        NoGradGuardT<float> guard(tape);
        auto y = scale(tape, x, 2.0);
        CHECK_FALSE(y->requires_grad);
    }
    CHECK(tape.size() == 0);
    auto z = scale(tape, x, 2.0);
    CHECK(z->requires_grad);
    CHECK(tape.size() == 1);
}

TEST_CASE("op gradients survive a central-difference audit") {
    Rng rng(303);
    const double tol = 1e-5;

    auto check = [&](const char* name, testutil::FdReport rep) {
        INFO(name << ": max_rel " << rep.max_rel << " over " << rep.checked);
        CHECK(rep.max_rel <= tol);
        CHECK(rep.checked > 0);
    };

    {
        auto a = rand_input({3, 4}, rng);
        auto b = rand_input({4, 2}, rng);
        auto w = rand_weights({3, 2}, rng);
        check("matmul", fd_check({a, b}, [&](TapeT<double>& t) {
            return scalarize(t, matmul(t, a, b), w);
        }));
    }
    {
        auto a = rand_input({3, 4}, rng);
        auto b = rand_input({2, 4}, rng);
        auto w = rand_weights({3, 2}, rng);
        check("matmul_nt", fd_check({a, b}, [&](TapeT<double>& t) {
            return scalarize(t, matmul_nt(t, a, b), w);
        }));
    }
    {
        auto a = rand_input({2, 3}, rng);
        auto b = rand_input({2, 3}, rng);
        auto w = rand_weights({2, 3}, rng);
        check("add", fd_check({a, b}, [&](TapeT<double>& t) {
            return scalarize(t, add(t, a, b), w);
        }));
        check("sub", fd_check({a, b}, [&](TapeT<double>& t) {
            return scalarize(t, sub(t, a, b), w);
        }));
        check("mul", fd_check({a, b}, [&](TapeT<double>& t) {
            return scalarize(t, mul(t, a, b), w);
        }));
        check("scale", fd_check({a}, [&](TapeT<double>& t) {
            return scalarize(t, scale(t, a, -1.7), w);
        }));
    }
    {
        auto a = rand_input({3, 4}, rng);
        auto v = rand_input({1, 4}, rng);
        auto w = rand_weights({3, 4}, rng);
        check("add_rowvec", fd_check({a, v}, [&](TapeT<double>& t) {
            return scalarize(t, add_rowvec(t, a, v), w);
        }));
    }
    {
        auto x = rand_input({3, 5}, rng, -2, 2);
        auto w = rand_weights({3, 5}, rng);
        check("softmax_rows", fd_check({x}, [&](TapeT<double>& t) {
            return scalarize(t, softmax_rows(t, x), w);
        }));
        check("gelu", fd_check({x}, [&](TapeT<double>& t) {
            return scalarize(t, gelu(t, x), w);
        }));
    }
    {
        auto x = rand_input({4, 6}, rng);
        auto g = rand_input({6}, rng, 0.5, 1.5);
        auto b = rand_input({6}, rng, -0.5, 0.5);
        auto w = rand_weights({4, 6}, rng);
        check("layer_norm", fd_check({x, g, b}, [&](TapeT<double>& t) {
            return scalarize(t, layer_norm(t, x, g, b), w);
        }));
    }
    {
        auto x = rand_input({2, 3}, rng);
        check("sum_all", fd_check({x}, [&](TapeT<double>& t) { return sum_all(t, x); }));
        check("mean_all", fd_check({x}, [&](TapeT<double>& t) { return mean_all(t, x); }));
    }
    {
        auto x = rand_input({5, 4}, rng);
        auto w = rand_weights({2, 4}, rng);
        check("slice_rows", fd_check({x}, [&](TapeT<double>& t) {
            return scalarize(t, slice_rows(t, x, 1, 3), w);
        }));
        auto wc = rand_weights({5, 2}, rng);
        check("slice_cols", fd_check({x}, [&](TapeT<double>& t) {
            return scalarize(t, slice_cols(t, x, 1, 3), wc);
        }));
    }
    {
        auto a = rand_input({2, 3}, rng);
        auto b = rand_input({4, 3}, rng);
        auto w = rand_weights({6, 3}, rng);
        check("concat_rows", fd_check({a, b}, [&](TapeT<double>& t) {
            return scalarize(t, concat_rows<double>(t, {a, b}), w);
        }));
        auto c = rand_input({2, 5}, rng);
        auto wc = rand_weights({2, 8}, rng);
        check("concat_cols", fd_check({a, c}, [&](TapeT<double>& t) {
            return scalarize(t, concat_cols<double>(t, {a, c}), wc);
        }));
    }
    {
        auto table = rand_input({6, 3}, rng);
        const std::vector<int> ids{2, 0, 2, 5};
        auto w = rand_weights({4, 3}, rng);
        check("embedding_lookup", fd_check({table}, [&](TapeT<double>& t) {
            return scalarize(t, embedding_lookup(t, table, ids), w);
        }));
    }
    {
        auto x = rand_input({2, 6}, rng);
        auto w = rand_weights({3, 4}, rng);
        check("reshape", fd_check({x}, [&](TapeT<double>& t) {
            return scalarize(t, reshape(t, x, {3, 4}), w);
        }));
    }
    {
        auto x = rand_input({3, 3}, rng, 0.05, 1.0);
        x->data[4] = 2.0; // unambiguous argmax, far from the tie kink
        auto w = rand_weights({3, 3}, rng);
        check("normalize_map", fd_check({x}, [&](TapeT<double>& t) {
            return scalarize(t, normalize_map(t, x), w);
        }));
    }
    {
        auto a = rand_input({7, 7}, rng, 0.0, 1.0);
        auto w0 = rand_weights({3}, rng);
        auto w1 = rand_weights({2}, rng);
        check("aggregate_cross_view", fd_check({a}, [&](TapeT<double>& t) {
            auto [o0, o1] = aggregate_cross_view(t, a, 3, 2);
            return add(t, scalarize(t, o0, w0), scalarize(t, o1, w1));
        }));
    }
    {
        auto x = rand_input({5, 4}, rng);
        auto w = rand_weights({5, 5}, rng);
        check("compute_joint_attention", fd_check({x}, [&](TapeT<double>& t) {
            return scalarize(t, compute_joint_attention(t, x), w);
        }));
    }
}

TEST_CASE("adam: closed-form first step") {
    auto p = make_tensor<float>({1}, {1.0f}, true);
    p->ensure_grad();
    p->grad[0] = 1.0f;
    AdamT<float> opt({p}, {.lr = 0.1});
    opt.step();
    CHECK(double(p->data[0]) == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adam agrees with the per-element oracle over two steps") {
    Rng rng(404);
    auto pf = make_tensor<float>({10}, true);
    auto pd = make_tensor<double>({10}, true);
    std::vector<double> start(10), m(10, 0.0), v(10, 0.0);
    for (size_t i = 0; i < 10; ++i) {
        start[i] = rng.uniform(-1, 1);
        pf->data[i] = float(start[i]);
        pd->data[i] = double(pf->data[i]);
    }
    AdamConfig cfg{.lr = 0.01};
    AdamT<float> of({pf}, cfg);
    AdamT<double> od({pd}, cfg);
    std::vector<double> oracle(pd->data);
    for (int step = 1; step <= 2; ++step) {
        pf->ensure_grad();
        pd->ensure_grad();
        for (size_t i = 0; i < 10; ++i) {
            pf->grad[i] = float(rng.uniform(-1, 1));
            pd->grad[i] = double(pf->grad[i]);
            oracle[i] = ref::adam_element(oracle[i], double(pf->grad[i]), m[i], v[i],
                                          step, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
        }
        of.step();
        od.step();
        of.zero_grad();
        od.zero_grad();
    }
    CHECK(testutil::max_abs_diff(pd->data, oracle) <= 1e-15);
    for (size_t i = 0; i < 10; ++i)
        CHECK(std::abs(double(pf->data[i]) - oracle[i]) <= 1e-6);
}

TEST_CASE("adam: zero gradients leave parameters untouched") {
    auto p = make_tensor<float>({3}, {0.25f, -0.5f, 1.75f}, true);
    p->ensure_grad();
    AdamT<float> opt({p}, {});
    opt.step();
    CHECK(p->data == std::vector<float>{0.25f, -0.5f, 1.75f});
}

TEST_CASE("adam: error contracts") {
    auto p = make_tensor<float>({2}, {1.f, 2.f});
    p->requires_grad = true; // grad storage deliberately left unallocated
    AdamT<float> opt({p}, {});
    CHECK_THROWS_AS(opt.step(), contract_error); // no gradient buffer yet

    p->ensure_grad();
    p->grad[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        opt.step();
        FAIL("expected numeric_error");
    } catch (const numeric_error& e) {
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
}

TEST_CASE("clip_grad_norm scales only above the threshold") {
    auto p = make_tensor<float>({2}, {0.f, 0.f}, true);
    p->ensure_grad();
    p->grad = {3.f, 4.f};
    AdamT<float> opt({p}, {});
    CHECK(opt.clip_grad_norm(1.0) == doctest::Approx(5.0));
    CHECK(p->grad[0] == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(p->grad[1] == doctest::Approx(0.8).epsilon(1e-6));
    CHECK(opt.clip_grad_norm(10.0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p->grad[0] == doctest::Approx(0.6).epsilon(1e-6)); // untouched
}

TEST_CASE("tensor file format round-trips bit-exactly") {
    Rng rng(505);
    TensorT<float> t({3, 5, 2});
    for (auto& v : t.data) v = float(rng.uniform(-10, 10));
    t.data[0] = -0.0f;
    t.data[1] = 1e-38f;

    std::ostringstream os1(std::ios::binary);
    write_tensor(os1, t);
    std::istringstream is(os1.str(), std::ios::binary);
    auto back = read_tensor(is, "<mem>");
    CHECK(back.shape == t.shape);
    std::ostringstream os2(std::ios::binary);
    write_tensor(os2, back);
    CHECK(os1.str() == os2.str());
}

TEST_CASE("tensor file format: malformed inputs name the failing offset") {
    TensorT<float> t({2, 2});
    std::ostringstream os(std::ios::binary);
    write_tensor(os, t);
    const std::string good = os.str();

    auto expect_format_error = [](const std::string& bytes, const char* needle) {
        std::istringstream is(bytes, std::ios::binary);
        try {
            read_tensor(is, "<mem>");
            FAIL_CHECK("expected format_error for " << needle);
        } catch (const format_error& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
            CHECK(e.exit_code() == 2);
        }
    };

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    expect_format_error(bad_magic, "offset 0");

    std::string bad_version = good;
    bad_version[4] = 9;
    expect_format_error(bad_version, "version 9");

    std::string bad_ndim = good;
    bad_ndim[8] = char(0xFF);
    expect_format_error(bad_ndim, "ndim");

    expect_format_error(good.substr(0, 2), "offset 0");
    expect_format_error(good.substr(0, good.size() - 3), "truncated payload");
}

TEST_CASE("rng: forks are independent of parent draw position") {
    Rng a(42), b(42);
    (void)b.next_u64();
    (void)b.next_u64();
    Rng fa = a.fork("stream"), fb = b.fork("stream");
    for (int i = 0; i < 8; ++i) CHECK(fa.next_u64() == fb.next_u64());
    CHECK(a.fork("x").next_u64() != a.fork("y").next_u64());
}

TEST_CASE("rng: state round-trips through text, including the normal spare") {
    Rng a(7);
    (void)a.normal(); // leaves a cached spare behind
    const std::string snap = a.state();
    std::vector<double> want;
    for (int i = 0; i < 9; ++i) want.push_back(a.normal());
    Rng b(999);
    b.set_state(snap);
    for (int i = 0; i < 9; ++i) CHECK(b.normal() == want[size_t(i)]);
}
