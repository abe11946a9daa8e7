#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "geoscene/checkpoint.hpp"
#include "geoscene/errors.hpp"
#include "geoscene/scenegen.hpp"
#include "geoscene/trainer.hpp"

#include "test_util.hpp"

using namespace geoscene;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

const fs::path& shared_dataset() {
    static const fs::path root = [] {
        const fs::path dir = fresh_dir("trainer_ds64");
        GenConfig cfg;
        generate_dataset(dir, 501, 32, cfg);
        return dir;
    }();
    return root;
}

TrainConfig fast_cfg(const fs::path& out) {
    TrainConfig c;
    c.seed = 11;
    c.dataset_root = shared_dataset().string();
    c.steps = 8;
    c.batch_size = 2;
    c.lr = 1e-3;
    c.lambda = 3.0;
    c.h = 64;
    c.w = 64;
    c.p = 8;
    c.d = 16;
    c.heads = 2;
    c.blocks = 2;
    c.mlp_ratio = 2;
    c.t_train = 20;
    c.eval_interval = 0;
    c.checkpoint_interval = 0;
    c.out_dir = out.string();
    c.grad_clip = 1.0;
    c.probe_size = 2;
    return c;
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
    std::ifstream is(p);
    REQUIRE_MESSAGE(is.good(), "cannot open " << p.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(is, line)) {
        std::vector<std::string> f;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                f.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        f.push_back(cur);
        rows.push_back(f);
    }
    return rows;
}

fs::path write_cfg(const fs::path& dir, const std::string& body) {
    const fs::path p = dir / "train.cfg";
    std::ofstream os(p);
    os << body;
    return p;
}

} // namespace

TEST_CASE("config parsing: comments, whitespace, defaults, and errors") {
    const fs::path dir = fresh_dir("trainer_cfg");
    const auto good = write_cfg(dir, "# smoke settings\n"
                                     "seed = 19   # trailing note\n"
                                     "steps=3\n"
                                     "\n"
                                     "  lr = 0.5\n"
                                     "dataset_root=ds\n"
                                     "detach_attention=true\n"
                                     "normalize=0\n");
    const TrainConfig c = load_train_config(good);
    CHECK(c.seed == 19);
    CHECK(c.steps == 3);
    CHECK(c.lr == 0.5);
    CHECK(c.dataset_root == "ds");
    CHECK(c.detach_attention);
    CHECK_FALSE(c.normalize);
    CHECK(c.batch_size == 8);  // untouched default
    CHECK(c.lambda == 3.0);    // untouched default
    CHECK(c.schedule == "cosine");

    CHECK_THROWS_AS(load_train_config(dir / "missing.cfg"), data_error);
    CHECK_THROWS_WITH_AS(load_train_config(write_cfg(dir, "seed=1\nsteps\n")),
                         doctest::Contains(":2: expected key=value"), param_error);
    CHECK_THROWS_WITH_AS(load_train_config(write_cfg(dir, "turbo=1\n")),
                         doctest::Contains("unknown key"), param_error);
    CHECK_THROWS_WITH_AS(load_train_config(write_cfg(dir, "steps=3.5\n")),
                         doctest::Contains("expects a number"), param_error);
    CHECK_THROWS_WITH_AS(load_train_config(write_cfg(dir, "normalize=maybe\n")),
                         doctest::Contains("expects true/false"), param_error);
}

TEST_CASE("config dump and reload preserve every field") {
    TrainConfig c;
    c.seed = 123;
    c.dataset_root = "dsroot";
    c.steps = 77;
    c.batch_size = 3;
    c.lr = 0.00125;
    c.lambda = 1.5;
    c.b_star = 1;
    c.normalize = false;
    c.h = 32;
    c.w = 48;
    c.p = 8;
    c.d = 24;
    c.heads = 3;
    c.blocks = 5;
    c.mlp_ratio = 2;
    c.t_train = 250;
    c.schedule = "linear";
    c.eval_interval = 9;
    c.checkpoint_interval = 4;
    c.out_dir = "runs/x";
    c.grad_clip = 0.5;
    c.detach_attention = true;
    c.resume = "ck.gamkpack";
    c.probe_size = 3;

    const fs::path dir = fresh_dir("trainer_dump");
    const std::string first = dump_config(c);
    const TrainConfig back = load_train_config(write_cfg(dir, first));
    CHECK(dump_config(back) == first);
}

TEST_CASE("config validation rejects out-of-range settings") {
    TrainConfig base;
    base.dataset_root = "x";
    CHECK_NOTHROW(base.validate());

    auto broken = [&](auto mutate) {
        TrainConfig c = base;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), param_error);
    };
    broken([](TrainConfig& c) { c.steps = 0; });
    broken([](TrainConfig& c) { c.batch_size = 0; });
    broken([](TrainConfig& c) { c.lambda = -0.5; });
    broken([](TrainConfig& c) { c.lr = 0.0; });
    broken([](TrainConfig& c) { c.h = 60; });
    broken([](TrainConfig& c) { c.schedule = "quadratic"; });
    broken([](TrainConfig& c) { c.dataset_root.clear(); });
    broken([](TrainConfig& c) { c.probe_size = 0; });
}

TEST_CASE("smoke run: metrics schema, agreement cadence, and a falling loss") {
    TrainConfig c = load_train_config(fixtures() / "smoke.cfg");
    c.dataset_root = shared_dataset().string();
    c.out_dir = fresh_dir("trainer_smoke").string();

    const TrainResult r = train(c);
    CHECK(r.steps_run == 50);
    CHECK(fs::exists(r.checkpoint_path));

    const auto rows = csv_rows(r.metrics_path);
    REQUIRE(rows.size() == 51);
    const std::vector<std::string> header{"step",    "l_diff", "l_attn0",
                                          "l_attn1", "l_attn", "total",
                                          "attn_agreement"};
    CHECK(rows[0] == header);
    for (size_t i = 1; i < rows.size(); ++i) {
        REQUIRE(rows[i].size() == 7);
        CHECK(rows[i][0] == std::to_string(i));
        const double l_diff = std::stod(rows[i][1]);
        const double l_attn = std::stod(rows[i][4]);
        const double total = std::stod(rows[i][5]);
        CHECK(std::isfinite(total));
        CHECK(total == doctest::Approx(l_diff + 3.0 * l_attn).epsilon(1e-6));
        const bool eval_step = i % 25 == 0 || i == 50;
        CHECK(rows[i][6].empty() == !eval_step);
        if (eval_step) {
            const double agreement = std::stod(rows[i][6]);
            CHECK(agreement >= -1.0);
            CHECK(agreement <= 1.0);
        }
    }

    double first = 0.0, last = 0.0;
    for (size_t i = 1; i <= 10; ++i) first += std::stod(rows[i][5]) / 10.0;
    for (size_t i = 41; i <= 50; ++i) last += std::stod(rows[i][5]) / 10.0;
    CHECK(last < first);
    CHECK(r.last.total == doctest::Approx(std::stod(rows[50][5])).epsilon(1e-15));
}

TEST_CASE("training is bitwise deterministic in the seed") {
    TrainConfig a = fast_cfg(fresh_dir("trainer_det_a"));
    TrainConfig b = fast_cfg(fresh_dir("trainer_det_b"));
    const auto ra = train(a);
    const auto rb = train(b);
    CHECK(same_bytes(ra.metrics_path, rb.metrics_path));
    CHECK(same_bytes(ra.checkpoint_path, rb.checkpoint_path));

    TrainConfig c = fast_cfg(fresh_dir("trainer_det_c"));
    c.seed = 12;
    const auto rc = train(c);
    CHECK_FALSE(same_bytes(ra.metrics_path, rc.metrics_path));
}

TEST_CASE("lambda=0 collapses the total onto the denoising term") {
    TrainConfig c = fast_cfg(fresh_dir("trainer_lambda0"));
    c.lambda = 0.0;
    const auto r = train(c);
    const auto rows = csv_rows(r.metrics_path);
    REQUIRE(rows.size() == size_t(c.steps) + 1);
    for (size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i][5] == rows[i][1]); // total column == l_diff column verbatim
        CHECK(std::stod(rows[i][4]) > 0.0);
    }
}

TEST_CASE("detached attention supervision updates parameters like lambda=0") {
    TrainConfig a = fast_cfg(fresh_dir("trainer_detach_a"));
    a.lambda = 0.0;
    TrainConfig b = fast_cfg(fresh_dir("trainer_detach_b"));
    b.lambda = 3.0;
    b.detach_attention = true;
    const auto ra = train(a);
    const auto rb = train(b);
    CHECK(same_bytes(ra.checkpoint_path, rb.checkpoint_path));
    CHECK_FALSE(same_bytes(ra.metrics_path, rb.metrics_path)); // totals differ
}

TEST_CASE("resume reproduces the uninterrupted trajectory byte for byte") {
    TrainConfig whole = fast_cfg(fresh_dir("trainer_resume_whole"));
    whole.steps = 10;
    const auto rw = train(whole);

    const fs::path split_dir = fresh_dir("trainer_resume_split");
    TrainConfig leg1 = fast_cfg(split_dir);
    leg1.steps = 5;
    const auto r1 = train(leg1);
    CHECK(r1.steps_run == 5);

    TrainConfig leg2 = fast_cfg(split_dir);
    leg2.steps = 10;
    leg2.resume = r1.checkpoint_path.string();
    const auto r2 = train(leg2);
    CHECK(r2.steps_run == 10);

    CHECK(same_bytes(rw.metrics_path, r2.metrics_path));
    CHECK(same_bytes(rw.checkpoint_path, r2.checkpoint_path));
}

TEST_CASE("resume validates checkpoint stream state") {
    const fs::path dir = fresh_dir("trainer_resume_bad");
    TrainConfig c = fast_cfg(dir / "run");
    c.steps = 3;
    const auto r = train(c);

    Checkpoint ck = load_checkpoint(r.checkpoint_path);
    ck.rng_states.erase("stream.noise");
    const fs::path stripped = dir / "stripped.gamkpack";
    save_checkpoint(stripped, ck);

    TrainConfig again = fast_cfg(dir / "run2");
    again.steps = 6;
    again.resume = stripped.string();
    CHECK_THROWS_WITH_AS(train(again), doctest::Contains("missing stream state"),
                         format_error);

    TrainConfig gone = fast_cfg(dir / "run3");
    gone.resume = (dir / "nope.gamkpack").string();
    CHECK_THROWS_AS(train(gone), data_error);
}

TEST_CASE("checkpoint cadence and container round-trip") {
    const fs::path out = fresh_dir("trainer_ckpt");
    TrainConfig c = fast_cfg(out);
    c.steps = 6;
    c.checkpoint_interval = 2;
    const auto r = train(c);

    CHECK(fs::exists(out / "checkpoint_2.gamkpack"));
    CHECK(fs::exists(out / "checkpoint_4.gamkpack"));
    CHECK_FALSE(fs::exists(out / "checkpoint_6.gamkpack")); // folded into final
    CHECK(fs::exists(out / "checkpoint_final.gamkpack"));

    const Checkpoint ck = load_checkpoint(r.checkpoint_path);
    CHECK(ck.step == 6);
    CHECK(ck.config.h == 64);
    CHECK(ck.config.d == 16);
    CHECK_FALSE(ck.params.empty());
    CHECK(ck.moments.size() == 2 * ck.params.size()); // m and v per parameter
    for (const char* key : {"stream.batch", "stream.noise", "stream.timestep",
                            "epoch.order", "epoch.cursor"})
        CHECK(ck.rng_states.count(key) == 1);

    const fs::path copy = out / "copy.gamkpack";
    save_checkpoint(copy, ck);
    CHECK(same_bytes(r.checkpoint_path, copy));
}

TEST_CASE("dataset validation: geometry and existence") {
    TrainConfig c = fast_cfg(fresh_dir("trainer_geom"));
    c.h = 32;
    c.w = 32;
    CHECK_THROWS_WITH_AS(train(c), doctest::Contains("disagrees"), data_error);

    TrainConfig missing = fast_cfg(fresh_dir("trainer_missing"));
    missing.dataset_root = (fs::path(missing.out_dir) / "nowhere").string();
    CHECK_THROWS_AS(train(missing), data_error);
}

TEST_CASE("divergent training aborts with a step-numbered error") {
    TrainConfig c = fast_cfg(fresh_dir("trainer_nan"));
    c.lr = 1e15;
    c.grad_clip = 0.0; // let the update explode
    c.steps = 10;
    CHECK_THROWS_WITH_AS(train(c), doctest::Contains("step"), numeric_error);
}
