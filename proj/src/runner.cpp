#include "mulki/runner.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "mulki/error.hpp"
#include "mulki/optim.hpp"
#include "mulki/rng.hpp"

namespace mulki {

void PretrainConfig::validate() const {
    if (batch_size == 0) {
        throw ConfigError("pretrain.batch_size must be positive");
    }
    if (!(lr > 0.0) || weight_decay < 0.0 || !(tau_ce > 0.0)) {
        throw ConfigError("pretrain: lr and tau_ce must be positive, weight_decay non-negative");
    }
}

Json PretrainConfig::to_json() const {
    return {{"iterations", iterations}, {"batch_size", batch_size}, {"lr", lr},
            {"weight_decay", weight_decay}, {"tau_ce", tau_ce}, {"seed", seed}};
}

PretrainConfig PretrainConfig::from_json(const Json& j, const std::string& path) {
    PretrainConfig c;
    ObjectReader r(j, path);
    r.optional("iterations", c.iterations);
    r.optional("batch_size", c.batch_size);
    r.optional("lr", c.lr);
    r.optional("weight_decay", c.weight_decay);
    r.optional("tau_ce", c.tau_ce);
    r.optional("seed", c.seed);
    r.finish();
    c.validate();
    return c;
}

EncoderDims dims_for(const StreamSpec& stream, std::size_t d_tok, std::size_t hidden, std::size_t embed_dim) {
    return {stream.config.d_in, d_tok, hidden, embed_dim, stream.vocab_size()};
}

ModelSnapshot pretrain(const StreamSpec& stream, const EncoderDims& dims, const PretrainConfig& cfg) {
    cfg.validate();
    const SampleSet& pool = stream.pretrain_pool;
    if (pool.size() == 0) {
        throw ConfigError("pretraining pool is empty");
    }
    if (dims.d_in != pool.dim || dims.vocab_size < stream.vocab_size()) {
        throw DimensionError("pretrain: encoder dims do not match the stream");
    }
    DualEncoder model = DualEncoder::init(mix_seed(cfg.seed, 0x9E7), dims);
    AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    Rng rng(mix_seed(cfg.seed, 0xB47C));
    const std::size_t b = cfg.batch_size;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        std::vector<double> x;
        x.reserve(b * pool.dim);
        std::vector<std::size_t> tokens(b);
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t idx = rng.index(pool.size());
            const auto row = pool.row(idx);
            x.insert(x.end(), row.begin(), row.end());
            tokens[i] = pool.labels[idx];
        }
        std::map<std::size_t, std::size_t> slot;
        std::vector<std::size_t> unique;
        for (std::size_t t : tokens) {
            if (slot.emplace(t, unique.size()).second) {
                unique.push_back(t);
            }
        }
        std::vector<std::size_t> labels(b);
        for (std::size_t i = 0; i < b; ++i) {
            labels[i] = slot.at(tokens[i]);
        }
        const std::size_t u = unique.size();
        std::vector<double> target(u * b, 0.0);
        std::vector<double> counts(u, 0.0);
        for (std::size_t i = 0; i < b; ++i) {
            counts[labels[i]] += 1.0;
        }
        for (std::size_t i = 0; i < b; ++i) {
            target[labels[i] * b + i] = 1.0 / counts[labels[i]];
        }

        const Tensor img = model.encode_images(Tensor::matrix(b, pool.dim, std::move(x)));
        const Tensor txt = model.encode_texts(unique);
        const Tensor logits = scale(cosine_sim_matrix(img, txt), 1.0 / cfg.tau_ce);
        const Tensor i2t = cross_entropy(logits, labels);
        const Tensor t2i =
            mean(soft_cross_entropy_rows(Tensor::matrix(u, b, std::move(target)), softmax(transpose(logits), 1)));
        const Tensor loss = scale(add(i2t, t2i), 0.5);
        if (!std::isfinite(loss.item())) {
            throw NumericError("pretrain: non-finite loss at iteration " + std::to_string(it));
        }
        for (Tensor& p : model.parameters()) {
            p.zero_grad();
        }
        loss.backward();
        opt.step(model.parameters());
    }
    return ModelSnapshot(model);
}

EnsembleMode ensemble_mode(const HyperParams& hyper) {
    if (hyper.enable.ewe) {
        return EnsembleMode::ewe;
    }
    return hyper.enable.we ? EnsembleMode::we : EnsembleMode::off;
}

bool wc_active(const HyperParams& hyper, StreamMode mode) {
    return hyper.enable.wc && hyper.lambda_wc != 0.0 && mode == StreamMode::multi_domain;
}

namespace {

std::map<std::size_t, Tensor> images_by_class(const TaskSpec& task) {
    std::map<std::size_t, std::vector<double>> rows;
    for (std::size_t i = 0; i < task.train.size(); ++i) {
        const auto r = task.train.row(i);
        auto& dst = rows[task.train.labels[i]];
        dst.insert(dst.end(), r.begin(), r.end());
    }
    std::map<std::size_t, Tensor> out;
    const std::size_t d = task.train.dim;
    for (const ClassSpec& c : task.classes) {
        auto it = rows.find(c.class_id);
        if (it == rows.end()) {
            throw DegenerateInputError("task " + std::to_string(task.task_id) + ": class " +
                                       std::to_string(c.class_id) + " has no training samples");
        }
        const std::size_t n = it->second.size() / d;
        out.emplace(c.class_id, Tensor::matrix(n, d, std::move(it->second)));
    }
    return out;
}

std::string dump_breakdown(const LossBreakdown& b) {
    std::ostringstream os;
    os << "ce=" << b.ce << " csa=" << b.csa << " fd0=" << b.fd0 << " fd_prev=" << b.fd_prev << " ird0=" << b.ird0
       << " ird_prev=" << b.ird_prev << " idd0=" << b.idd0 << " idd_prev=" << b.idd_prev << " mdd=" << b.mdd
       << " wc=" << b.wc << " total=" << b.total;
    return os.str();
}

}  // namespace

TaskResult train_task(const ModelSnapshot& c0, const ModelSnapshot& c_prev, const TaskSpec& task,
                      StreamMode mode, const HyperParams& hyper, std::uint64_t seed,
                      const TrainObserver* observer) {
    hyper.validate();
    DualEncoder student = c_prev.thaw();
    const std::vector<double> theta_prev = c_prev.params_flat();
    const bool wc = wc_active(hyper, mode);
    WEState we = we_init(theta_prev, hyper.we_interval, hyper.ewe_eta, ensemble_mode(hyper));
    AdamW opt({hyper.lr, 0.9, 0.999, 1e-8, hyper.weight_decay});

    PrototypeStore store(hyper.gamma);
    if (observer && observer->on_task_begin) {
        observer->on_task_begin(task.task_id, store);
    }
    store.initialize(c0, images_by_class(task));

    const std::vector<std::size_t> class_ids = task.class_ids();
    const std::uint64_t batch_seed = mix_seed(seed, task.task_id);
    TaskResult result{ModelSnapshot(student).model(), {}, {}};
    result.log.reserve(hyper.iterations_per_task);

    for (std::size_t k = 1; k <= hyper.iterations_per_task; ++k) {
        Batch batch = sample_batch(task, hyper.batch_size, batch_seed, k - 1);
        const Tensor feats = student.encode_images(batch.images);
        store.ema_update(detach(feats), batch.class_ids);
        const Tensor protos = store.matrix(class_ids);
        const BatchInputs inputs{batch.images, batch.local_labels, task.token_ids()};
        Objective obj = total_loss(student, feats, c0, c_prev, inputs, protos, hyper, wc, theta_prev);
        if (!std::isfinite(obj.breakdown.total)) {
            throw NumericError("task " + std::to_string(task.task_id) + " iteration " + std::to_string(k) +
                               ": non-finite loss (" + dump_breakdown(obj.breakdown) + ")");
        }
        for (Tensor& p : student.parameters()) {
            p.zero_grad();
        }
        obj.loss.backward();
        opt.step(student.parameters());
        if (we_step(we, student.params_flat(), k) && ewe_step(we, student, k)) {
            opt.reset();
        }
        result.log.push_back({task.task_id, k, std::move(obj.breakdown)});
        if (observer && observer->on_iteration) {
            observer->on_iteration(task.task_id, k, store, student);
        }
    }

    DualEncoder final_model = student.copy(false);
    final_model.load_flat(final_params(we, student.params_flat()));
    store.purge();
    if (observer && observer->on_task_end) {
        observer->on_task_end(task.task_id, store);
    }
    result.model = std::move(final_model);
    result.we = std::move(we);
    return result;
}

std::vector<double> zero_shot_row(const ModelSnapshot& model, const StreamSpec& stream) {
    AccuracyMatrix m(stream.tasks.size());
    evaluate_row(model, stream, 0, m);
    return m.row(0);
}

RunRecord run_stream(const StreamSpec& stream, const ModelSnapshot& c0, const HyperParams& hyper, std::uint64_t seed,
                     const TrainObserver* observer) {
    hyper.validate();
    const std::size_t n = stream.tasks.size();
    RunRecord rec;
    rec.seed = seed;
    rec.matrix = AccuracyMatrix(n);
    evaluate_row(c0, stream, 0, rec.matrix);
    ModelSnapshot prev = c0;
    for (std::size_t i = 0; i < n; ++i) {
        TaskResult r = train_task(c0, prev, stream.tasks[i], stream.config.mode, hyper, seed, observer);
        prev = ModelSnapshot(r.model);
        evaluate_row(prev, stream, i + 1, rec.matrix);
        rec.log.insert(rec.log.end(), std::make_move_iterator(r.log.begin()), std::make_move_iterator(r.log.end()));
        rec.task_models.push_back(std::move(r.model));
        rec.we_states.push_back(std::move(r.we));
    }
    return rec;
}

std::string losses_csv(const std::vector<IterationLog>& log) {
    std::string out = "task,iteration,ce,csa,fd0,fd_prev,ird0,ird_prev,idd0,idd_prev,mdd,wc,total,r0_mean\n";
    for (const IterationLog& e : log) {
        const LossBreakdown& b = e.breakdown;
        double r0 = 0.0;
        for (double v : b.per_sample_r0) {
            r0 += v;
        }
        r0 = b.per_sample_r0.empty() ? 0.0 : r0 / static_cast<double>(b.per_sample_r0.size());
        out += std::to_string(e.task_id) + "," + std::to_string(e.iteration);
        for (double v : {b.ce, b.csa, b.fd0, b.fd_prev, b.ird0, b.ird_prev, b.idd0, b.idd_prev, b.mdd, b.wc, b.total,
                         r0}) {
            out += "," + format_double(v);
        }
        out += "\n";
    }
    return out;
}

void write_run(const std::filesystem::path& dir, const RunRecord& record) {
    Json metrics = metrics_json(record.matrix);
    metrics["seed"] = record.seed;
    write_text_file(dir / "metrics.json", canonical_dump(metrics, 2) + "\n");
    write_text_file(dir / "losses.csv", losses_csv(record.log));
    if (!record.config_echo.is_null()) {
        write_text_file(dir / "config.json", canonical_dump(record.config_echo, 2) + "\n");
    }
    for (std::size_t i = 0; i < record.task_models.size(); ++i) {
        const std::string id = std::to_string(i + 1);
        save_checkpoint(dir / "checkpoints" / ("task_" + id), record.task_models[i]);
        save_we_state(dir / "checkpoints" / ("we_task_" + id), record.we_states[i]);
    }
}

}  // namespace mulki
