#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "edslm/data.hpp"
#include "edslm/model.hpp"
#include "edslm/trainer.hpp"

using namespace edslm;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const char* stem) {
        path = (std::filesystem::temp_directory_path() /
                (std::string(stem) + "." + std::to_string(::getpid()) + ".tmp"))
                   .string();
    }
    ~TempFile() { std::remove(path.c_str()); }
};

// Vocab-sized tiny models: training examples use BOS/EOS ids, so the
// embedding must cover the full shared vocabulary.
ModelConfig tiny_encdec() {
    ModelConfig c;
    c.kind = ModelKind::encoder_decoder;
    c.n_enc_layers = 1;
    c.n_dec_layers = 1;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_kv_heads = 1;
    c.d_ff = 32;
    c.vocab_size = Vocab::kSize;
    c.ntk_train_len = 64;
    c.max_enc_len = 64;
    c.max_dec_len = 64;
    return c;
}

ModelConfig tiny_deconly() {
    ModelConfig c = tiny_encdec();
    c.kind = ModelKind::decoder_only;
    c.n_enc_layers = 0;
    c.n_dec_layers = 2;
    return c;
}

TrainConfig short_run(int64_t total, int64_t batch, int64_t accum, uint64_t seed) {
    TrainConfig c;
    c.peak_lr = 1e-3;
    c.warmup_steps = 2;
    c.total_steps = total;
    c.batch_size = batch;
    c.grad_accum_steps = accum;
    c.seed = seed;
    c.objective = Objective::seq2seq;
    return c;
}

std::vector<float> snapshot(const Model& m) {
    std::vector<float> out;
    for (const Tensor& p : m.parameters()) {
        auto v = p.values();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]));
    return worst;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("train config validation rejects bad fields") {
    TrainConfig c = short_run(10, 2, 1, 0);
    CHECK_NOTHROW(c.validate());
    TrainConfig bad = c;
    bad.peak_lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.total_steps = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.grad_accum_steps = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.warmup_steps = 10;  // effective warmup == total
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("short runs shrink the warmup, long runs keep it") {
    TrainConfig c;
    c.warmup_steps = 2000;
    c.total_steps = 500;
    CHECK(c.effective_warmup() == 100);
    c.total_steps = 10000;
    CHECK(c.effective_warmup() == 2000);
    c.total_steps = 400;
    c.warmup_steps = 30;  // explicit short warmup is respected
    CHECK(c.effective_warmup() == 30);
}

TEST_CASE("lr schedule: linear warmup, cosine decay, clamp past the end") {
    TrainConfig c;
    c.peak_lr = 3e-4;
    c.warmup_steps = 2000;
    c.total_steps = 10000;
    CHECK(lr_at(0, c) == 0.0);
    CHECK(lr_at(1000, c) == doctest::Approx(1.5e-4).epsilon(1e-12));
    CHECK(lr_at(2000, c) == doctest::Approx(3e-4).epsilon(1e-12));
    // midpoint of the cosine phase: progress 0.5 -> half the peak
    CHECK(lr_at(6000, c) == doctest::Approx(1.5e-4).epsilon(1e-12));
    // progress 0.25 -> peak * 0.5 * (1 + cos(pi/4))
    const double expected = 3e-4 * 0.5 * (1.0 + std::sqrt(2.0) / 2.0);
    CHECK(lr_at(4000, c) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(lr_at(10000, c) == 0.0);
    CHECK(lr_at(123456, c) == 0.0);
    CHECK(lr_at(9999, c) > 0.0);
    for (int64_t s = 2000; s < 9900; s += 700) CHECK(lr_at(s, c) >= lr_at(s + 100, c));
    CHECK_THROWS_AS(lr_at(-1, c), std::invalid_argument);
}

TEST_CASE("adamw: zero gradients and zero weight decay leave weights untouched") {
    Tensor w = Tensor::from({3}, {1.0f, -2.0f, 0.5f}, true).set_name("w");
    AdamW opt({w}, /*weight_decay=*/0.0);
    w.zero_grad();
    opt.step(0.1);
    CHECK(w.at(0) == 1.0f);
    CHECK(w.at(1) == -2.0f);
    CHECK(w.at(2) == 0.5f);
}

TEST_CASE("adamw: decoupled weight decay shrinks weights even with zero gradients") {
    Tensor w = Tensor::from({1}, {1.0f}, true).set_name("w");
    AdamW opt({w}, /*weight_decay=*/0.1);
    w.zero_grad();
    opt.step(0.1);
    // update = wd * w = 0.1, w <- 1 - lr * 0.1 = 0.99
    CHECK(w.at(0) == doctest::Approx(0.99).epsilon(1e-6));
}

TEST_CASE("adamw: two steps match the scalar hand recursion") {
    Tensor w = Tensor::from({1}, {1.0f}, true).set_name("w");
    AdamW opt({w}, /*weight_decay=*/0.1);
    const double b1 = 0.9, b2 = 0.95, eps = 1e-8, wd = 0.1, lr = 0.01;
    double wh = 1.0, mh = 0.0, vh = 0.0;
    const double grads[2] = {0.5, -0.3};
    for (int t = 1; t <= 2; ++t) {
        w.grad()[0] = static_cast<float>(grads[t - 1]);
        opt.step(lr);
        const double g = grads[t - 1];
        mh = b1 * mh + (1 - b1) * g;
        vh = b2 * vh + (1 - b2) * g * g;
        const double mhat = mh / (1 - std::pow(b1, t));
        const double vhat = vh / (1 - std::pow(b2, t));
        wh -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * wh);
        CHECK(w.at(0) == doctest::Approx(wh).epsilon(1e-6));
    }
    CHECK(opt.t() == 2);
}

TEST_CASE("adamw: descends a quadratic bowl") {
    Tensor w = Tensor::from({4}, {2.0f, -1.5f, 0.7f, 3.0f}, true).set_name("w");
    const float target[4] = {-0.3f, 0.4f, 1.2f, -2.0f};
    AdamW opt({w}, /*weight_decay=*/0.0);
    auto loss = [&]() {
        double s = 0.0;
        for (int i = 0; i < 4; ++i) s += (w.at(i) - target[i]) * (w.at(i) - target[i]);
        return s;
    };
    const double initial = loss();
    for (int step = 0; step < 400; ++step) {
        w.zero_grad();
        for (int i = 0; i < 4; ++i) w.grad()[i] = 2.0f * (w.at(i) - target[i]);
        opt.step(0.05);
    }
    CHECK(loss() < initial / 1000.0);
}

TEST_CASE("adamw: non-finite gradient aborts and names the tensor") {
    Tensor w = Tensor::from({2}, {1.0f, 2.0f}, true).set_name("dec.0.w1");
    AdamW opt({w});
    w.zero_grad();
    w.grad()[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(opt.step(0.01), doctest::Contains("dec.0.w1"), std::runtime_error);
    Tensor inf_w = Tensor::from({1}, {1.0f}, true).set_name("w_inf");
    AdamW opt2({inf_w});
    inf_w.grad()[0] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_WITH_AS(opt2.step(0.01), doctest::Contains("w_inf"), std::runtime_error);
}

TEST_CASE("example_nll: finite losses, scaling, and error contracts") {
    Model ed = build_model(tiny_encdec(), 5);
    Model dd = build_model(tiny_deconly(), 6);
    TaskExample ex;
    ex.x = tokenize("abcd");
    ex.y = tokenize("abcd");

    Graph g1;
    Tensor l1 = example_nll(g1, ed, ex, 1.0);
    CHECK(std::isfinite(static_cast<double>(l1.at(0))));
    Graph g2;
    Tensor l2 = example_nll(g2, ed, ex, 0.25);
    CHECK(l2.at(0) == doctest::Approx(0.25 * l1.at(0)).epsilon(1e-6));

    Graph g3;
    Tensor l3 = example_nll(g3, dd, ex, 1.0);
    CHECK(std::isfinite(static_cast<double>(l3.at(0))));
    // untrained models sit near the uniform baseline ln(vocab)
    CHECK(l1.at(0) > 3.0);
    CHECK(l1.at(0) < 12.0);
    CHECK(l3.at(0) > 3.0);
    CHECK(l3.at(0) < 12.0);

    CHECK(example_loss_tokens(ex) == 5);
    TaskExample empty;
    Graph g4;
    CHECK_THROWS_AS(example_nll(g4, ed, empty, 1.0), std::invalid_argument);
}

TEST_CASE("data cycler: epochwise permutations, reshuffled, and position-addressable") {
    const size_t n = 16;
    DataCycler a(n, 99);
    std::vector<size_t> epoch0, epoch1;
    for (int64_t i = 0; i < 16; ++i) epoch0.push_back(a.index_at(i));
    for (int64_t i = 16; i < 32; ++i) epoch1.push_back(a.index_at(i));

    auto is_perm = [&](std::vector<size_t> v) {
        std::sort(v.begin(), v.end());
        for (size_t i = 0; i < v.size(); ++i)
            if (v[i] != i) return false;
        return true;
    };
    CHECK(is_perm(epoch0));
    CHECK(is_perm(epoch1));
    CHECK(epoch0 != epoch1);  // reshuffle between epochs

    // a fresh cycler addressed mid-stream agrees with the walked one (resume)
    DataCycler b(n, 99);
    CHECK(b.index_at(23) == epoch1[23 - 16]);
    CHECK(b.index_at(3) == epoch0[3]);

    DataCycler c(n, 100);
    std::vector<size_t> other;
    for (int64_t i = 0; i < 16; ++i) other.push_back(c.index_at(i));
    CHECK(other != epoch0);  // seed matters

    CHECK_THROWS_AS(DataCycler(0, 1), std::invalid_argument);
    CHECK_THROWS_AS(a.index_at(-1), std::invalid_argument);
}

TEST_CASE("gradient accumulation matches one large batch") {
    auto data = make_synthetic_task(TaskKind::copy, 12, 7);
    Model a = build_model(tiny_encdec(), 33);
    Model b = build_model(tiny_encdec(), 33);

    TrainConfig ca = short_run(10, 2, 4, 21);
    TrainConfig cb = short_run(10, 8, 1, 21);
    AdamW oa(a.parameters());
    AdamW ob(b.parameters());
    auto ra = train(a, data, ca, oa);
    auto rb = train(b, data, cb, ob);

    CHECK(ra.size() == 10);
    CHECK(rb.size() == 10);
    CHECK(max_abs_diff(snapshot(a), snapshot(b)) <= 1e-5);
    for (size_t i = 0; i < ra.size(); ++i) {
        CHECK(ra[i].loss == doctest::Approx(rb[i].loss).epsilon(1e-9));
        CHECK(ra[i].lr == rb[i].lr);
    }
}

TEST_CASE("training is deterministic in seed, config, and data") {
    auto data = make_synthetic_task(TaskKind::reverse, 10, 11);
    Model a = build_model(tiny_deconly(), 44);
    Model b = build_model(tiny_deconly(), 44);
    TrainConfig cfg = short_run(6, 2, 1, 5);
    AdamW oa(a.parameters());
    AdamW ob(b.parameters());
    auto ra = train(a, data, cfg, oa);
    auto rb = train(b, data, cfg, ob);
    CHECK(snapshot(a) == snapshot(b));  // bit-identical
    for (size_t i = 0; i < ra.size(); ++i) {
        CHECK(ra[i].loss == rb[i].loss);
        CHECK(ra[i].lr == rb[i].lr);
    }

    Model c = build_model(tiny_deconly(), 44);
    TrainConfig other = cfg;
    other.seed = 6;  // different data order -> different trajectory
    AdamW oc(c.parameters());
    train(c, data, other, oc);
    CHECK(snapshot(a) != snapshot(c));
}

TEST_CASE("train rejects kd objective, empty datasets, and bad start steps") {
    auto data = make_synthetic_task(TaskKind::copy, 4, 1);
    Model m = build_model(tiny_encdec(), 2);
    AdamW opt(m.parameters());
    TrainConfig cfg = short_run(4, 1, 1, 0);
    TrainConfig kd = cfg;
    kd.objective = Objective::kd;
    CHECK_THROWS_AS(train(m, data, kd, opt), std::invalid_argument);
    CHECK_THROWS_AS(train(m, {}, cfg, opt), std::invalid_argument);
    CHECK_THROWS_AS(train(m, data, cfg, opt, -1), std::invalid_argument);
    CHECK_THROWS_AS(train(m, data, cfg, opt, 5), std::invalid_argument);
}

TEST_CASE("checkpoint: save and load round-trip bit-exactly") {
    Model m = build_model(tiny_encdec(), 17);
    AdamW opt(m.parameters());
    auto data = make_synthetic_task(TaskKind::copy, 6, 3);
    TrainConfig cfg = short_run(3, 2, 1, 9);
    train(m, data, cfg, opt);

    TempFile ckpt("trainer_ckpt");
    const std::string echo = "run=demo\nseed=9";  // newline survives escaping
    save_checkpoint(ckpt.path, m, 3, echo, &opt);

    Model fresh = build_model(tiny_encdec(), 999);  // different init
    AdamW fresh_opt(fresh.parameters());
    CHECK(snapshot(fresh) != snapshot(m));
    LoadedCheckpoint loaded = load_checkpoint(ckpt.path, fresh, &fresh_opt);
    CHECK(loaded.step == 3);
    CHECK(loaded.config_echo == echo);
    CHECK(snapshot(fresh) == snapshot(m));
    CHECK(fresh_opt.t() == opt.t());
    auto sa = opt.state_tensors();
    auto sb = fresh_opt.state_tensors();
    REQUIRE(sa.size() == sb.size());
    for (size_t i = 0; i < sa.size(); ++i) {
        auto va = sa[i].second.values();
        auto vb = sb[i].second.values();
        REQUIRE(va.size() == vb.size());
        for (size_t j = 0; j < va.size(); ++j) CHECK(va[j] == vb[j]);
    }
}

TEST_CASE("checkpoint: corruption and mismatches are rejected") {
    Model m = build_model(tiny_encdec(), 1);
    TempFile ckpt("trainer_ckpt_bad");
    save_checkpoint(ckpt.path, m, 0, "echo");

    // params-only checkpoint cannot restore optimizer state
    Model target = build_model(tiny_encdec(), 2);
    AdamW opt(target.parameters());
    CHECK_THROWS_AS(load_checkpoint(ckpt.path, target, &opt), std::runtime_error);
    CHECK_NOTHROW(load_checkpoint(ckpt.path, target));

    // different architecture -> shape mismatch
    ModelConfig other_cfg = tiny_encdec();
    other_cfg.d_ff = 48;
    Model other = build_model(other_cfg, 3);
    CHECK_THROWS_AS(load_checkpoint(ckpt.path, other), std::runtime_error);

    // flip one payload byte -> checksum mismatch
    {
        std::fstream f(ckpt.path, std::ios::in | std::ios::out | std::ios::binary);
        REQUIRE(f.good());
        f.seekp(-1, std::ios::end);
        char last = 0;
        f.seekg(-1, std::ios::end);
        f.read(&last, 1);
        f.seekp(-1, std::ios::end);
        last = static_cast<char>(last ^ 0x40);
        f.write(&last, 1);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(ckpt.path, target), doctest::Contains("checksum"),
                         std::runtime_error);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/path/ckpt", target), std::runtime_error);
}

TEST_CASE("checkpoint: save, load, resume matches uninterrupted training bit for bit") {
    auto data = make_synthetic_task(TaskKind::copy, 6, 13);  // small set -> crosses epochs
    TrainConfig cfg = short_run(8, 2, 1, 31);

    Model solo = build_model(tiny_encdec(), 55);
    AdamW solo_opt(solo.parameters());
    auto solo_recs = train(solo, data, cfg, solo_opt);
    REQUIRE(solo_recs.size() == 8);

    // interrupted run: steps [0,4), checkpoint, fresh objects, resume [4,8)
    Model first = build_model(tiny_encdec(), 55);
    AdamW first_opt(first.parameters());
    auto first_recs = train(first, data, cfg, first_opt, 0, "", 4);
    REQUIRE(first_recs.size() == 4);
    TempFile ckpt("trainer_resume");
    save_checkpoint(ckpt.path, first, 4, "resume-test", &first_opt);

    Model second = build_model(tiny_encdec(), 77);  // init overwritten by the load
    AdamW second_opt(second.parameters());
    LoadedCheckpoint lc = load_checkpoint(ckpt.path, second, &second_opt);
    CHECK(lc.step == 4);
    CHECK(second_opt.t() == 4);
    auto second_recs = train(second, data, cfg, second_opt, lc.step);
    REQUIRE(second_recs.size() == 4);

    CHECK(snapshot(second) == snapshot(solo));  // bit-identical trajectories
    for (size_t i = 0; i < 4; ++i) {
        CHECK(first_recs[i].loss == solo_recs[i].loss);
        CHECK(second_recs[i].loss == solo_recs[i + 4].loss);
        CHECK(second_recs[i].lr == solo_recs[i + 4].lr);
    }
}

TEST_CASE("metrics csv: header, one row per step, columns match the records") {
    auto data = make_synthetic_task(TaskKind::copy, 4, 17);
    Model m = build_model(tiny_deconly(), 3);
    AdamW opt(m.parameters());
    TrainConfig cfg = short_run(4, 1, 1, 2);
    TempFile csv("trainer_metrics");
    auto recs = train(m, data, cfg, opt, 0, csv.path);
    auto lines = read_lines(csv.path);
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] == "step,loss,lr,tokens_per_s");
    for (int i = 1; i <= 4; ++i) {
        std::istringstream row(lines[static_cast<size_t>(i)]);
        std::string cell;
        std::getline(row, cell, ',');
        CHECK(std::stoll(cell) == i - 1);
        std::getline(row, cell, ',');
        CHECK(std::stod(cell) == doctest::Approx(recs[static_cast<size_t>(i - 1)].loss).epsilon(1e-8));
        std::getline(row, cell, ',');
        CHECK(std::stod(cell) == doctest::Approx(lr_at(i - 1, cfg)).epsilon(1e-8));
        std::getline(row, cell, ',');
        CHECK(std::stod(cell) >= 0.0);
    }

    // a resumed run appends rows without repeating the header
    TempFile csv2("trainer_metrics_resume");
    Model m2 = build_model(tiny_deconly(), 3);
    AdamW opt2(m2.parameters());
    train(m2, data, cfg, opt2, 0, csv2.path, 2);
    train(m2, data, cfg, opt2, 2, csv2.path);
    auto lines2 = read_lines(csv2.path);
    REQUIRE(lines2.size() == 5);
    CHECK(lines2[0] == "step,loss,lr,tokens_per_s");
    CHECK(lines2[1].rfind("0,", 0) == 0);
    CHECK(lines2[3].rfind("2,", 0) == 0);
    CHECK(lines2[4].rfind("3,", 0) == 0);
}

TEST_CASE("a short copy run reduces the training loss") {
    auto data = make_synthetic_task(TaskKind::copy, 32, 29);
    Model m = build_model(tiny_encdec(), 101);
    AdamW opt(m.parameters());
    TrainConfig cfg = short_run(30, 4, 1, 3);
    cfg.peak_lr = 3e-3;
    auto recs = train(m, data, cfg, opt);
    REQUIRE(recs.size() == 30);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 5; ++i) head += recs[static_cast<size_t>(i)].loss;
    for (int i = 25; i < 30; ++i) tail += recs[static_cast<size_t>(i)].loss;
    CHECK(tail < head * 0.9);
}

TEST_SUITE_END();
