#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "mulki/encoder.hpp"
#include "mulki/hyper.hpp"
#include "mulki/io.hpp"
#include "mulki/losses.hpp"
#include "mulki/metrics.hpp"
#include "mulki/protostore.hpp"
#include "mulki/taskgen.hpp"
#include "mulki/weightspace.hpp"

namespace mulki {

struct PretrainConfig {
    std::size_t iterations = 1500;
    std::size_t batch_size = 64;
    double lr = 3e-3;
    double weight_decay = 1e-4;
    double tau_ce = 0.07;
    std::uint64_t seed = 0;

    void validate() const;
    Json to_json() const;
    static PretrainConfig from_json(const Json& j, const std::string& path);
};

// Symmetric image<->token contrastive training on the stream's pretraining
// pool. Texts in a batch are the distinct tokens present; the text->image
// target is uniform over the images carrying that token.
ModelSnapshot pretrain(const StreamSpec& stream, const EncoderDims& dims, const PretrainConfig& cfg);

EncoderDims dims_for(const StreamSpec& stream, std::size_t d_tok, std::size_t hidden, std::size_t embed_dim);

struct IterationLog {
    std::size_t task_id = 0;
    std::size_t iteration = 0;
    LossBreakdown breakdown;
};

// Optional instrumentation. on_task_begin runs before the prototype store is
// initialized and on_task_end after it is purged.
struct TrainObserver {
    std::function<void(std::size_t task_id, const PrototypeStore&)> on_task_begin;
    std::function<void(std::size_t task_id, std::size_t iteration, const PrototypeStore&, const DualEncoder& student)>
        on_iteration;
    std::function<void(std::size_t task_id, const PrototypeStore&)> on_task_end;
};

struct TaskResult {
    DualEncoder model;  // final (ensembled) parameters, frozen
    WEState we;
    std::vector<IterationLog> log;
};

EnsembleMode ensemble_mode(const HyperParams& hyper);
bool wc_active(const HyperParams& hyper, StreamMode mode);

// Trains one task starting from c_prev. Batches are drawn with
// sample_batch(task, B, mix_seed(seed, task_id), k - 1) for k = 1..iterations.
TaskResult train_task(const ModelSnapshot& c0, const ModelSnapshot& c_prev, const TaskSpec& task,
                      StreamMode mode, const HyperParams& hyper, std::uint64_t seed,
                      const TrainObserver* observer = nullptr);

struct RunRecord {
    AccuracyMatrix matrix;
    std::vector<IterationLog> log;
    std::vector<DualEncoder> task_models;
    std::vector<WEState> we_states;
    Json config_echo;
    std::uint64_t seed = 0;
};

RunRecord run_stream(const StreamSpec& stream, const ModelSnapshot& c0, const HyperParams& hyper, std::uint64_t seed,
                     const TrainObserver* observer = nullptr);

// Zero-shot row of a frozen model over all tasks.
std::vector<double> zero_shot_row(const ModelSnapshot& model, const StreamSpec& stream);

// dir/metrics.json, dir/losses.csv, dir/config.json,
// dir/checkpoints/task_<i>.{json,bin}, dir/checkpoints/we_task_<i>.{json,bin}
void write_run(const std::filesystem::path& dir, const RunRecord& record);

std::string losses_csv(const std::vector<IterationLog>& log);

}  // namespace mulki
