#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "mulki/error.hpp"
#include "mulki/experiment.hpp"
#include "mulki/optim.hpp"
#include "mulki/rng.hpp"
#include "mulki/runner.hpp"

using namespace mulki;

namespace {

StreamConfig small_stream() {
    StreamConfig c;
    c.n_tasks = 3;
    c.classes_per_task = 3;
    c.d_in = 8;
    c.train_per_class = 20;
    c.test_per_class = 10;
    c.pretrain_per_class = 10;
    return c;
}

HyperParams small_hyper() {
    HyperParams h;
    h.iterations_per_task = 40;
    h.batch_size = 8;
    h.we_interval = 10;
    h.ewe_eta = 2;
    return h;
}

PretrainConfig small_pretrain() {
    PretrainConfig p;
    p.iterations = 50;
    p.batch_size = 16;
    return p;
}

EncoderDims small_dims(const StreamSpec& s) { return dims_for(s, 4, 12, 6); }

}  // namespace

TEST_CASE("pretraining: zero iterations, determinism and empty pool") {
    const StreamSpec s = generate_stream(small_stream(), 1);
    PretrainConfig p = small_pretrain();
    p.iterations = 0;
    p.seed = 4;
    const ModelSnapshot raw = pretrain(s, small_dims(s), p);
    CHECK(raw.params_flat() == DualEncoder::init(mix_seed(4, 0x9E7), small_dims(s)).params_flat());

    p.iterations = 30;
    CHECK(pretrain(s, small_dims(s), p).params_flat() == pretrain(s, small_dims(s), p).params_flat());
    CHECK(pretrain(s, small_dims(s), p).params_flat() != raw.params_flat());

    StreamSpec empty = s;
    empty.pretrain_pool = SampleSet{s.config.d_in, {}, {}};
    CHECK_THROWS_AS(pretrain(empty, small_dims(s), p), ConfigError);
}

TEST_CASE("disabled components reproduce a plain fine-tuning loop bit for bit") {
    const StreamSpec s = generate_stream(small_stream(), 2);
    const ModelSnapshot c0 = pretrain(s, small_dims(s), small_pretrain());
    const HyperParams ft = apply_variant(small_hyper(), "continual_ft");
    const std::uint64_t seed = 17;
    const RunRecord rec = run_stream(s, c0, ft, seed);

    // Reference loop: cross-entropy only, fresh AdamW per task.
    DualEncoder student = c0.thaw();
    for (std::size_t t = 0; t < s.tasks.size(); ++t) {
        const TaskSpec& task = s.tasks[t];
        AdamW opt({ft.lr, 0.9, 0.999, 1e-8, ft.weight_decay});
        for (std::size_t k = 1; k <= ft.iterations_per_task; ++k) {
            const Batch b = sample_batch(task, ft.batch_size, mix_seed(seed, task.task_id), k - 1);
            const Tensor logits = scale(
                cosine_sim_matrix(student.encode_images(b.images), student.encode_texts(task.token_ids())),
                1.0 / ft.tau_ce);
            const Tensor loss = cross_entropy(logits, b.local_labels);
            for (Tensor& p : student.parameters()) {
                p.zero_grad();
            }
            loss.backward();
            opt.step(student.parameters());
        }
        CHECK(rec.task_models[t].params_flat() == student.params_flat());
    }
}

TEST_CASE("teachers stay constant and prototypes live only inside a task") {
    const StreamSpec s = generate_stream(small_stream(), 3);
    const ModelSnapshot c0 = pretrain(s, small_dims(s), small_pretrain());
    const auto c0_params = c0.params_flat();
    std::size_t begins = 0;
    std::size_t ends = 0;
    std::size_t iterations = 0;
    TrainObserver obs;
    obs.on_task_begin = [&](std::size_t, const PrototypeStore& store) {
        CHECK(store.empty());
        ++begins;
    };
    obs.on_iteration = [&](std::size_t task_id, std::size_t, const PrototypeStore& store, const DualEncoder&) {
        const TaskSpec& task = s.tasks[task_id - 1];
        CHECK(store.size() == task.classes.size());
        for (const ClassSpec& c : task.classes) {
            CHECK(store.contains(c.class_id));
        }
        ++iterations;
    };
    obs.on_task_end = [&](std::size_t, const PrototypeStore& store) {
        CHECK(store.empty());
        ++ends;
    };
    const HyperParams h = small_hyper();
    const ModelSnapshot prev(c0.thaw());
    const auto prev_params = prev.params_flat();
    train_task(c0, prev, s.tasks[0], s.config.mode, h, 5, &obs);
    CHECK(c0.params_flat() == c0_params);
    CHECK(prev.params_flat() == prev_params);

    run_stream(s, c0, h, 5, &obs);
    CHECK(begins == 1 + s.tasks.size());
    CHECK(ends == begins);
    CHECK(iterations == begins * h.iterations_per_task);
    CHECK(c0.params_flat() == c0_params);
}

TEST_CASE("first task distils from two identical teachers") {
    const StreamSpec s = generate_stream(small_stream(), 4);
    const ModelSnapshot c0 = pretrain(s, small_dims(s), small_pretrain());
    const RunRecord rec = run_stream(s, c0, small_hyper(), 1);
    for (const IterationLog& e : rec.log) {
        if (e.task_id != 1) {
            continue;
        }
        CHECK(e.breakdown.fd0 == e.breakdown.fd_prev);
        CHECK(e.breakdown.ird0 == e.breakdown.ird_prev);
        for (double r : e.breakdown.per_sample_r0) {
            CHECK(r == 0.5);
        }
    }
}

TEST_CASE("run record shape, row 0 and ensembled task models") {
    const StreamSpec s = generate_stream(small_stream(), 5);
    const ModelSnapshot c0 = pretrain(s, small_dims(s), small_pretrain());
    HyperParams h = small_hyper();
    h.enable.ewe = true;
    const RunRecord rec = run_stream(s, c0, h, 2);
    CHECK(rec.matrix.n_tasks() == 3);
    CHECK(rec.matrix.values().size() == 12);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(rec.matrix.at(0, j) == evaluate(c0, s, 0, j));
        CHECK(rec.matrix.at(3, j) == evaluate(ModelSnapshot(rec.task_models[2]), s, 3, j));
    }
    CHECK(rec.log.size() == 3 * h.iterations_per_task);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(rec.task_models[t].params_flat() == rec.we_states[t].theta_hat);
        CHECK(rec.we_states[t].m == h.iterations_per_task / h.we_interval);
    }
    for (const IterationLog& e : rec.log) {
        CHECK(std::isfinite(e.breakdown.total));
        CHECK(e.breakdown.wc >= 0.0);
    }
}

TEST_CASE("runs are deterministic per seed") {
    const StreamSpec s = generate_stream(small_stream(), 6);
    const ModelSnapshot c0 = pretrain(s, small_dims(s), small_pretrain());
    const HyperParams h = small_hyper();
    const RunRecord a = run_stream(s, c0, h, 9);
    const RunRecord b = run_stream(s, c0, h, 9);
    const RunRecord c = run_stream(s, c0, h, 10);
    CHECK(a.matrix == b.matrix);
    CHECK(losses_csv(a.log) == losses_csv(b.log));
    CHECK(a.task_models.back().params_flat() == b.task_models.back().params_flat());
    CHECK(a.task_models.back().params_flat() != c.task_models.back().params_flat());
}

TEST_CASE("class-incremental streams never apply weight consolidation") {
    StreamConfig cfg = small_stream();
    cfg.mode = StreamMode::class_incremental;
    const StreamSpec s = generate_stream(cfg, 7);
    const ModelSnapshot c0 = pretrain(s, small_dims(s), small_pretrain());
    const RunRecord rec = run_stream(s, c0, small_hyper(), 3);
    for (const IterationLog& e : rec.log) {
        CHECK(e.breakdown.wc == 0.0);
    }
    CHECK_FALSE(wc_active(small_hyper(), StreamMode::class_incremental));
    CHECK(wc_active(small_hyper(), StreamMode::multi_domain));
}

TEST_CASE("a non-finite loss aborts with the breakdown") {
    const StreamSpec s = generate_stream(small_stream(), 8);
    const ModelSnapshot c0 = pretrain(s, small_dims(s), small_pretrain());
    HyperParams h = small_hyper();
    h.lambda1 = std::numeric_limits<double>::max();
    h.lambda2 = std::numeric_limits<double>::max();
    try {
        run_stream(s, c0, h, 1);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("task 1 iteration 1") != std::string::npos);
        CHECK(msg.find("mdd=") != std::string::npos);
    }
}

TEST_CASE("default stream: C0 has zero-shot headroom and early training lowers the loss") {
    const StreamConfig cfg;
    const PretrainConfig pcfg;
    HyperParams h;
    h.iterations_per_task = 50;
    std::vector<double> zero_shot(cfg.n_tasks, 0.0);
    std::vector<double> drops;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const StreamSpec s = generate_stream(cfg, seed);
        PretrainConfig p = pcfg;
        p.seed = seed;
        const ModelSnapshot c0 = pretrain(s, dims_for(s, 16, 64, 16), p);
        const auto row = zero_shot_row(c0, s);
        for (std::size_t j = 0; j < row.size(); ++j) {
            zero_shot[j] += row[j] / 5.0;
        }
        const TaskResult r = train_task(c0, c0, s.tasks[0], cfg.mode, h, seed);
        double head = 0.0;
        double tail = 0.0;
        for (std::size_t k = 0; k < 10; ++k) {
            CHECK(std::isfinite(r.log[k].breakdown.total));
            head += r.log[k].breakdown.total;
            tail += r.log[40 + k].breakdown.total;
        }
        drops.push_back(head - tail);
    }
    const double chance = 1.0 / static_cast<double>(cfg.classes_per_task);
    for (double z : zero_shot) {
        CHECK(z > chance + 0.1);
        CHECK(z < 0.95);
    }
    std::sort(drops.begin(), drops.end());
    CHECK(drops[2] > 0.0);
}
