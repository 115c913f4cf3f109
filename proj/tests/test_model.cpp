#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "iqshrink/checkpoint.hpp"
#include "iqshrink/checks.hpp"
#include "iqshrink/model.hpp"

using namespace iqshrink;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.units = 4;
    cfg.d = 4;
    cfg.heads = 2;
    cfg.ccsa_depth = 1;
    cfg.depth_a = 1;
    cfg.depth_b = 1;
    cfg.channels = 2;
    cfg.num_classes = 3;
    cfg.frame_len = 16;
    cfg.seed = 7;
    return cfg;
}

ModelConfig table_row_config(std::int64_t ccsa, std::int64_t da, std::int64_t db) {
    ModelConfig cfg;
    cfg.units = 16;
    cfg.d = 32;
    cfg.heads = 2;
    cfg.ccsa_depth = ccsa;
    cfg.depth_a = da;
    cfg.depth_b = db;
    cfg.channels = 8;
    cfg.num_classes = 24;
    cfg.frame_len = 1024;
    cfg.seed = 1;
    return cfg;
}

Dataset tiny_dataset(std::int64_t frames_per_cell = 12) {
    DatasetSpec spec;
    spec.schemes = {Scheme::BPSK, Scheme::QPSK, Scheme::QAM16};
    spec.snr_grid_db = {10};
    spec.frames_per_cell = frames_per_cell;
    spec.frame_len = 16;
    spec.samples_per_symbol = 4;
    spec.seed = 99;
    return generate_dataset(spec);
}

}  // namespace

TEST_CASE("same seed builds bitwise-identical models") {
    ModelConfig cfg = tiny_config();
    Model<double> m1(cfg), m2(cfg);
    auto& p1 = m1.parameters();
    auto& p2 = m2.parameters();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i]->name == p2[i]->name);
        for (std::int64_t j = 0; j < p1[i]->numel(); ++j) {
            CHECK(p1[i]->value[j] == p2[i]->value[j]);
        }
    }
}

TEST_CASE("invalid configs are rejected with the violated invariant") {
    ModelConfig cfg = tiny_config();
    cfg.heads = 3;  // does not divide d = 4
    CHECK_THROWS_AS(Model<double>{cfg}, config_error);
    cfg = tiny_config();
    cfg.num_classes = 1;
    CHECK_THROWS_AS(Model<double>{cfg}, config_error);
    cfg = tiny_config();
    cfg.units = 1;
    CHECK_THROWS_AS(Model<double>{cfg}, config_error);
    cfg = tiny_config();
    cfg.depth_b = 9;  // spatial extent collapses below 2
    CHECK_THROWS_AS(Model<double>{cfg}, config_error);
}

TEST_CASE("parameter count equals the hand-summed layer-by-layer total") {
    ModelConfig cfg;
    cfg.units = 2;
    cfg.d = 2;
    cfg.heads = 1;
    cfg.ccsa_depth = 1;
    cfg.depth_a = 1;
    cfg.depth_b = 1;
    cfg.channels = 2;
    cfg.num_classes = 2;
    cfg.frame_len = 16;
    Model<double> model(cfg);

    // independent accounting
    const std::int64_t d = 2, u = 2, C = 2, K = 2;
    const std::int64_t embed = d + d;
    const std::int64_t qkvo = 4 * (d * d + d);
    const std::int64_t ffn = d * 4 * d + 4 * d + 4 * d * d + d;
    const std::int64_t lns = 2 * (d + d);
    const std::int64_t ccsa = qkvo + ffn + lns;
    const std::int64_t project = d * C;
    const std::int64_t lstm = 4 * (u * (2 + u) + u);
    auto path = [](std::int64_t c) { return (c * c + c) + 2 * c + (c * c + c); };
    const std::int64_t c0 = C + 1;
    const std::int64_t mid = c0 / 2;
    const std::int64_t block_a = 9 * c0 * mid + 2 * mid + 9 * mid * c0 + 2 * c0 + 2 * path(c0) + 2;
    const std::int64_t block_b = 9 * c0 * 2 * c0 + 4 * c0 + 9 * 2 * c0 * 2 * c0 + 4 * c0 +
                                 c0 * 2 * c0 + 2 * path(2 * c0) + 2;
    const std::int64_t head = 2 * (2 * c0) + (2 * c0) * K + K;
    const std::int64_t expected = embed + ccsa + project + lstm + block_a + block_b + head;

    const ParamCount pc = model.count_params();
    CHECK(pc.total == expected);
    std::int64_t breakdown_sum = 0;
    for (const auto& [module, count] : pc.by_module) breakdown_sum += count;
    CHECK(breakdown_sum == pc.total);
    CHECK(pc.by_module.at("embed") == embed);
    CHECK(pc.by_module.at("ccsa") == ccsa);
    CHECK(pc.by_module.at("project") == project);
    CHECK(pc.by_module.at("lstm") == lstm);
    CHECK(pc.by_module.at("shrink") == block_a + block_b);
    CHECK(pc.by_module.at("head") == head);
}

TEST_CASE("reference configuration lands within five percent of 178284 parameters") {
    Model<double> model(table_row_config(2, 3, 3));
    const std::int64_t total = model.count_params().total;
    CHECK(std::fabs(static_cast<double>(total) - 178284.0) / 178284.0 <= 0.05);
}

TEST_CASE("parameter and FLOP orderings across the reference rows") {
    Model<double> row1(table_row_config(1, 3, 3));
    Model<double> row2(table_row_config(2, 3, 3));
    Model<double> row3(table_row_config(3, 3, 3));
    Model<double> row4(table_row_config(2, 2, 2));
    Model<double> row5(table_row_config(2, 1, 1));

    CHECK(row1.count_params().total < row2.count_params().total);
    CHECK(row2.count_params().total < row3.count_params().total);
    CHECK(row5.count_params().total < row4.count_params().total);
    CHECK(row4.count_params().total < row2.count_params().total);

    CHECK(row1.count_flops().total() < row2.count_flops().total());
    CHECK(row2.count_flops().total() < row3.count_flops().total());
    CHECK(row5.count_flops().total() < row4.count_flops().total());
    CHECK(row4.count_flops().total() < row2.count_flops().total());
}

TEST_CASE("doubling T exactly doubles the attention FLOP contribution") {
    ModelConfig cfg = tiny_config();
    cfg.frame_len = 64;
    Model<double> m1(cfg);
    cfg.frame_len = 128;
    Model<double> m2(cfg);
    CHECK(m2.count_flops().ccsa == 2 * m1.count_flops().ccsa);
}

TEST_CASE("forward produces probability rows; eval mode is pure and batch-independent") {
    ModelConfig cfg = tiny_config();
    Model<double> model(cfg);
    Rng rng(5);
    Tensor<double> x(Shape{3, cfg.frame_len, 2});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1.0, 1.0);

    Tensor<double> p1 = model.forward(x, Mode::Eval);
    for (std::int64_t b = 0; b < 3; ++b) {
        double s = 0.0;
        for (std::int64_t k = 0; k < cfg.num_classes; ++k) {
            CHECK(p1.at2(b, k) >= 0.0);
            s += p1.at2(b, k);
        }
        CHECK(std::fabs(s - 1.0) <= 1e-6);
    }
    Tensor<double> p2 = model.forward(x, Mode::Eval);
    for (std::int64_t i = 0; i < p1.numel(); ++i) CHECK(p1[i] == p2[i]);

    // batch of two identical frames -> identical rows
    Tensor<double> xx(Shape{2, cfg.frame_len, 2});
    for (std::int64_t i = 0; i < cfg.frame_len * 2; ++i) {
        xx[i] = x[i];
        xx[cfg.frame_len * 2 + i] = x[i];
    }
    Tensor<double> pp = model.forward(xx, Mode::Eval);
    for (std::int64_t k = 0; k < cfg.num_classes; ++k) CHECK(pp.at2(0, k) == pp.at2(1, k));

    Tensor<double> wrong(Shape{1, cfg.frame_len + 1, 2});
    CHECK_THROWS_AS(model.forward(wrong, Mode::Eval), contract_error);
}

TEST_CASE("loss oracle values") {
    ModelConfig cfg = tiny_config();
    cfg.l2 = 0.0;
    Model<double> model(cfg);

    Tensor<double> perfect(Shape{2, 3});
    perfect.at2(0, 1) = 1.0;
    perfect.at2(1, 0) = 1.0;
    CHECK(loss_with_l2(perfect, {1, 0}, model, 0.0) == doctest::Approx(0.0).epsilon(1e-9));

    Tensor<double> uniform(Shape{1, 3});
    uniform.fill(1.0 / 3.0);
    CHECK(loss_with_l2(uniform, {2}, model, 0.0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    Tensor<double> uniform4(Shape{1, 4});
    uniform4.fill(0.25);
    ModelConfig cfg4 = tiny_config();
    cfg4.num_classes = 4;
    cfg4.l2 = 0.0;
    Model<double> model4(cfg4);
    CHECK(loss_with_l2(uniform4, {0}, model4, 0.0) == doctest::Approx(1.386294).epsilon(1e-6));

    // lambda = 0 reduces to plain cross-entropy even with nonzero weights
    const double with_reg = loss_with_l2(uniform, {2}, model, 1e-3);
    CHECK(with_reg > std::log(3.0));
    CHECK(loss_with_l2(uniform, {2}, model, 0.0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    CHECK_THROWS_AS(loss_with_l2(uniform, {3}, model, 0.0), contract_error);
}

TEST_CASE("adam: zero gradient is a fixed point, first step magnitude is the learning rate") {
    Parameter<double> w(Shape{2}, "w");
    w.value[0] = 5.0;
    w.value[1] = -3.0;
    std::vector<Parameter<double>*> params{&w};
    AdamState<double> state;
    state.init(params);

    adam_step(params, state, 0.01);
    CHECK(w.value[0] == 5.0);
    CHECK(w.value[1] == -3.0);

    // first step with fresh moments: bias correction makes the update +-lr
    AdamState<double> fresh;
    fresh.init(params);
    w.grad[0] = 0.25;
    w.grad[1] = -7.0;
    adam_step(params, fresh, 0.01);
    CHECK(std::fabs(std::fabs(w.value[0] - 5.0) - 0.01) <= 1e-6);
    CHECK(std::fabs(std::fabs(w.value[1] + 3.0) - 0.01) <= 1e-6);
    CHECK(w.value[0] < 5.0);   // moves against the gradient sign
    CHECK(w.value[1] > -3.0);

    w.grad[0] = std::nan("");
    CHECK_THROWS_AS(adam_step(params, fresh, 0.01), numeric_error);
}

TEST_CASE("adam trajectories are deterministic") {
    auto run = [] {
        Parameter<double> w(Shape{3}, "w");
        w.value[0] = 1.0;
        w.value[1] = -2.0;
        w.value[2] = 0.5;
        std::vector<Parameter<double>*> params{&w};
        AdamState<double> state;
        state.init(params);
        Rng rng(55);
        for (int step = 0; step < 50; ++step) {
            for (std::int64_t i = 0; i < 3; ++i) w.grad[i] = rng.uniform(-1.0, 1.0);
            adam_step(params, state, 1e-3);
        }
        return w.value;
    };
    Tensor<double> a = run(), b = run();
    for (std::int64_t i = 0; i < 3; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("scripted stagnant validation: LR halves after exactly five epochs, stop after thirty") {
    PlateauScheduler sched(1e-3, 0.5, 1e-8, 5, 30);
    std::vector<int> drop_epochs;
    int stop_epoch = 0;
    for (int epoch = 1; epoch <= 40; ++epoch) {
        auto d = sched.observe(1.0);  // constant validation loss
        if (d.reduced) drop_epochs.push_back(epoch);
        if (d.stop) {
            stop_epoch = epoch;
            break;
        }
    }
    // epoch 1 sets the best; epochs 2..6 are the five stagnant observations
    REQUIRE(drop_epochs.size() == 5);
    CHECK(drop_epochs[0] == 6);
    CHECK(drop_epochs[1] == 11);
    CHECK(drop_epochs[2] == 16);
    CHECK(drop_epochs[3] == 21);
    CHECK(drop_epochs[4] == 26);
    CHECK(stop_epoch == 31);  // thirty stagnant epochs
    CHECK(sched.lr() == doctest::Approx(1e-3 * std::pow(0.5, 5)).epsilon(1e-12));
}

TEST_CASE("scheduler resets both counters on improvement and respects the floor") {
    PlateauScheduler sched(4e-8, 0.5, 1e-8, 2, 6);
    CHECK(sched.observe(1.0).improved);
    CHECK(!sched.observe(1.0).reduced);
    CHECK(sched.observe(1.0).reduced);  // two stagnant epochs
    CHECK(sched.lr() == doctest::Approx(2e-8).epsilon(1e-12));
    CHECK(sched.observe(0.5).improved);  // resets both counters
    CHECK(!sched.observe(0.5).reduced);  // equal loss is not an improvement
    CHECK(sched.observe(0.5 + 1e-7).reduced);
    CHECK(sched.lr() == doctest::Approx(1e-8).epsilon(1e-12));
    CHECK(!sched.observe(0.6).reduced);  // reduction reset the LR counter
    CHECK(sched.observe(0.6).reduced);
    CHECK(sched.lr() == doctest::Approx(1e-8).epsilon(1e-12));  // clamped at the floor
}

TEST_CASE("fit wires the scheduler consistently into the epoch log") {
    Dataset ds = tiny_dataset();
    std::vector<std::int64_t> train_idx, val_idx;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(ds.frames.size()); ++i) {
        (i % 3 == 0 ? val_idx : train_idx).push_back(i);
    }
    ModelConfig cfg = tiny_config();
    cfg.seed = 3;
    Model<float> model(cfg);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.lr_init = 1e-20;  // parameter updates vanish in 32-bit
    tc.lr_min = 1e-26;
    tc.lr_patience = 3;
    tc.early_stop_patience = 8;
    tc.max_epochs = 60;
    TrainingLog log = fit(model, ds, train_idx, val_idx, tc);

    // replay the recorded validation losses through a fresh scheduler and
    // demand the identical drop/stop/lr trace
    PlateauScheduler replay(tc.lr_init, tc.lr_factor, tc.lr_min, tc.lr_patience,
                            tc.early_stop_patience);
    std::vector<int> expect_drops;
    int expect_stop = 0;
    for (const auto& e : log.epochs) {
        CHECK(e.lr == doctest::Approx(replay.lr()).epsilon(1e-15));
        auto d = replay.observe(e.val_loss);
        if (d.reduced) expect_drops.push_back(e.epoch);
        if (d.stop) {
            expect_stop = e.epoch;
            break;
        }
    }
    CHECK(log.lr_drop_epochs == expect_drops);
    CHECK(log.stopped_epoch == expect_stop);
    CHECK(log.best_val_loss == doctest::Approx(replay.best()).epsilon(1e-15));
}

TEST_CASE("learning rate never drops below the floor") {
    Dataset ds = tiny_dataset();
    std::vector<std::int64_t> train_idx, val_idx;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(ds.frames.size()); ++i) {
        (i % 3 == 0 ? val_idx : train_idx).push_back(i);
    }
    ModelConfig cfg = tiny_config();
    Model<float> model(cfg);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.lr_init = 4e-20;
    tc.lr_min = 1e-20;
    tc.max_epochs = 40;
    TrainingLog log = fit(model, ds, train_idx, val_idx, tc);
    for (const auto& e : log.epochs) CHECK(e.lr >= tc.lr_min);
    CHECK(log.final_lr == doctest::Approx(tc.lr_min).epsilon(1e-12));
}

TEST_CASE("fit is deterministic and restores the best-validation snapshot") {
    Dataset ds = tiny_dataset();
    std::vector<std::int64_t> train_idx, val_idx;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(ds.frames.size()); ++i) {
        (i % 4 == 0 ? val_idx : train_idx).push_back(i);
    }
    ModelConfig cfg = tiny_config();
    cfg.seed = 11;
    TrainConfig tc;
    tc.batch_size = 8;
    tc.lr_init = 3e-3;
    tc.max_epochs = 6;

    auto run = [&](std::vector<float>& params_out) {
        Model<float> model(cfg);
        TrainingLog log = fit(model, ds, train_idx, val_idx, tc);
        for (auto* p : model.parameters()) {
            for (std::int64_t i = 0; i < p->numel(); ++i) params_out.push_back(p->value[i]);
        }
        return log;
    };
    std::vector<float> pa, pb;
    TrainingLog la = run(pa);
    TrainingLog lb = run(pb);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
    REQUIRE(la.epochs.size() == lb.epochs.size());
    for (std::size_t i = 0; i < la.epochs.size(); ++i) {
        CHECK(la.epochs[i].val_loss == lb.epochs[i].val_loss);
        CHECK(la.epochs[i].train_loss == lb.epochs[i].train_loss);
    }

    // the restored snapshot reproduces the minimum validation loss in the log
    double min_val = la.epochs[0].val_loss;
    for (const auto& e : la.epochs) min_val = std::min(min_val, e.val_loss);
    CHECK(la.best_val_loss == doctest::Approx(min_val).epsilon(1e-12));
    Model<float> model(cfg);
    TrainingLog log = fit(model, ds, train_idx, val_idx, tc);
    auto [re_loss, re_acc] = evaluate_loss_acc(model, ds, val_idx, tc.batch_size);
    CHECK(re_loss == doctest::Approx(log.best_val_loss).epsilon(1e-9));
}

TEST_CASE("checkpoint round-trip preserves parameters, buffers, and optimizer state") {
    ModelConfig cfg = tiny_config();
    cfg.seed = 21;
    Model<float> model(cfg);

    // move the running statistics off their initial values
    Rng rng(2);
    Tensor<float> x(Shape{4, cfg.frame_len, 2});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    model.forward(x, Mode::Train);

    AdamState<float> opt;
    opt.init(model.parameters());
    std::vector<int> labels{0, 1, 2, 0};
    model.zero_grads();
    model.forward(x, Mode::Train);
    model.backward(labels);
    adam_step(model.parameters(), opt, 1e-3);

    const std::string path = "test_checkpoint.iqck";
    save_checkpoint(path, model, &opt, 0xdeadbeefULL);
    LoadedCheckpoint<float> loaded = load_checkpoint<float>(path);

    CHECK(loaded.model->config().units == cfg.units);
    CHECK(loaded.model->config().seed == cfg.seed);
    CHECK(loaded.rng_state == 0xdeadbeefULL);
    CHECK(loaded.has_opt);
    CHECK(loaded.opt.step == opt.step);

    auto& p1 = model.parameters();
    auto& p2 = loaded.model->parameters();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        for (std::int64_t j = 0; j < p1[i]->numel(); ++j) {
            CHECK(p1[i]->value[j] == p2[i]->value[j]);  // float32 storage is lossless here
        }
        for (std::int64_t j = 0; j < p1[i]->numel(); ++j) {
            CHECK(opt.m[i][j] == loaded.opt.m[i][j]);
            CHECK(opt.v[i][j] == loaded.opt.v[i][j]);
        }
    }
    auto b1 = model.buffers();
    auto b2 = loaded.model->buffers();
    REQUIRE(b1.size() == b2.size());
    for (std::size_t i = 0; i < b1.size(); ++i) {
        for (std::int64_t j = 0; j < b1[i].second->numel(); ++j) {
            CHECK((*b1[i].second)[j] == (*b2[i].second)[j]);
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("corrupted checkpoint magic is rejected") {
    const std::string path = "bad_checkpoint.iqck";
    write_text_file(path, "NOPE....");
    CHECK_THROWS_AS(load_checkpoint<float>(path), checkpoint_error);
    std::remove(path.c_str());
}

TEST_CASE("tiny end-to-end gradient check") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        CHECK(check_full_model(seed) <= 1e-4);
    }
}
