#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mulki/io.hpp"
#include "mulki/tensor.hpp"

namespace mulki {

enum class StreamMode { multi_domain, class_incremental };

StreamMode parse_stream_mode(std::string_view name);
std::string to_string(StreamMode mode);

// Row-major sample matrix with one label per row.
struct SampleSet {
    std::size_t dim = 0;
    std::vector<double> x;
    std::vector<std::size_t> labels;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return std::span<const double>(x).subspan(i * dim, dim); }
    Tensor as_tensor() const { return Tensor::matrix(size(), dim, x); }
    bool operator==(const SampleSet&) const = default;
};

struct ClassSpec {
    std::size_t class_id = 0;
    std::size_t token_id = 0;
    std::vector<double> mean;
    double noise_scale = 0.3;
    std::size_t domain_id = 0;
    bool operator==(const ClassSpec&) const = default;
};

struct TaskSpec {
    std::size_t task_id = 0;
    std::vector<ClassSpec> classes;
    SampleSet train;  // labels are global class ids
    SampleSet test;

    std::vector<std::size_t> class_ids() const;
    std::vector<std::size_t> token_ids() const;
    // Position of a class inside this task; throws LookupError.
    std::size_t local_index(std::size_t class_id) const;
    bool operator==(const TaskSpec&) const = default;
};

struct StreamConfig {
    StreamMode mode = StreamMode::multi_domain;
    std::size_t n_tasks = 5;
    std::size_t classes_per_task = 5;
    std::size_t d_in = 32;
    std::size_t train_per_class = 200;
    std::size_t test_per_class = 100;
    std::size_t pretrain_per_class = 20;
    double label_noise = 0.1;
    double sigma = 0.3;
    // Radius of class means around their domain centre.
    double class_spread = 1.0;
    // Standard deviation of per-dimension domain offsets.
    double domain_offset = 1.0;
    // Minimum distance between class means of different domains.
    double domain_floor = 1.0;

    void validate() const;
    Json to_json() const;
    static StreamConfig from_json(const Json& j, const std::string& path);
    bool operator==(const StreamConfig&) const = default;
};

inline constexpr int kStreamSchemaVersion = 1;

struct StreamSpec {
    StreamConfig config;
    std::uint64_t seed = 0;
    // Weakly labelled pool covering every class; labels are token ids.
    SampleSet pretrain_pool;
    std::vector<TaskSpec> tasks;

    std::size_t n_classes() const { return config.n_tasks * config.classes_per_task; }
    // Class tokens 1..n_classes plus the template token 0.
    std::size_t vocab_size() const { return n_classes() + 1; }
    bool operator==(const StreamSpec&) const = default;
};

StreamSpec generate_stream(const StreamConfig& config, std::uint64_t seed);

// Canonical JSON: sorted keys, "%.17g" doubles, "schema_version": 1.
std::string stream_to_json_text(const StreamSpec& stream);
StreamSpec stream_from_json_text(std::string_view text, const std::string& source);
void save_stream(const std::filesystem::path& path, const StreamSpec& stream);
StreamSpec load_stream(const std::filesystem::path& path);

struct Batch {
    Tensor images;                         // [B x d_in]
    std::vector<std::size_t> class_ids;    // global ids
    std::vector<std::size_t> local_labels; // index into task.classes
};

// Uniform sampling with replacement from the task's training set; a pure
// function of (seed, iteration).
Batch sample_batch(const TaskSpec& task, std::size_t batch_size, std::uint64_t seed, std::size_t iteration);

class BatchSampler {
public:
    BatchSampler(const TaskSpec& task, std::size_t batch_size, std::uint64_t seed, std::size_t iterations);

    bool done() const { return next_ >= iterations_; }
    std::size_t iteration() const { return next_; }
    Batch next();

private:
    const TaskSpec* task_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t iterations_;
    std::size_t next_ = 0;
};

}  // namespace mulki
