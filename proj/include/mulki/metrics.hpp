#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "mulki/error.hpp"
#include "mulki/io.hpp"
#include "mulki/taskgen.hpp"
#include "mulki/tensor.hpp"

namespace mulki {

// (N+1) x N grid. Row 0 is the initial model, row i the model after task i.
// Column j holds task j+1 (columns are 0-based here; tasks are 1-based).
class AccuracyMatrix {
public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(std::size_t n_tasks) : n_(n_tasks), values_((n_tasks + 1) * n_tasks, 0.0) {}
    AccuracyMatrix(std::size_t n_tasks, std::vector<double> values);
    static AccuracyMatrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t n_tasks() const { return n_; }
    double at(std::size_t row, std::size_t col) const { return values_.at(row * n_ + col); }
    void set(std::size_t row, std::size_t col, double v);
    std::vector<double> row(std::size_t r) const;
    std::span<const double> values() const { return values_; }

    Json to_json() const;
    bool operator==(const AccuracyMatrix&) const = default;

private:
    std::size_t n_ = 0;
    std::vector<double> values_;
};

// Mean over tasks j >= 2 of the mean accuracy of models trained strictly before j.
double transfer(const AccuracyMatrix& a);
// Mean over rows 1..N and all columns.
double avg(const AccuracyMatrix& a);
// Mean of the final row.
double last(const AccuracyMatrix& a);
// Mean over rows i of the mean over seen tasks j <= i.
double current_avg(const AccuracyMatrix& a);

struct MetricSummary {
    double transfer = 0.0;
    double avg = 0.0;
    double last = 0.0;
    double current_avg = 0.0;
};

MetricSummary summarize(const AccuracyMatrix& a);

// {"matrix", "transfer", "avg", "last", "current_avg", "zero_shot_row"}
Json metrics_json(const AccuracyMatrix& a);

template <class M>
concept EmbeddingModel = requires(const M& m, const Tensor& x, std::span<const std::size_t> ids) {
    { m.encode_images(x) } -> std::convertible_to<Tensor>;
    { m.encode_texts(ids) } -> std::convertible_to<Tensor>;
};

// Fraction of test samples whose highest-cosine candidate text is their own
// class. candidates are (class id, token id) pairs.
template <EmbeddingModel M>
double evaluate(const M& model, const SampleSet& test, std::span<const std::size_t> candidate_classes,
                std::span<const std::size_t> candidate_tokens) {
    if (test.size() == 0) {
        throw ContractError("evaluate: empty test set");
    }
    if (candidate_classes.empty() || candidate_classes.size() != candidate_tokens.size()) {
        throw ContractError("evaluate: candidate classes and tokens must be non-empty and aligned");
    }
    const Tensor img = model.encode_images(test.as_tensor());
    const Tensor txt = model.encode_texts(candidate_tokens);
    const Tensor sim = cosine_sim_matrix(img, txt);
    const std::size_t k = candidate_classes.size();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c) {
            if (sim.at(i, c) > sim.at(i, best)) {
                best = c;
            }
        }
        correct += candidate_classes[best] == test.labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

// Candidate label space for evaluating task `task_index` (0-based) with the
// model of row `row`: the task's own classes in multi_domain mode, classes of
// tasks 1..max(row, task) in class_incremental mode.
void candidate_space(const StreamSpec& stream, std::size_t row, std::size_t task_index,
                     std::vector<std::size_t>& classes, std::vector<std::size_t>& tokens);

template <EmbeddingModel M>
double evaluate(const M& model, const StreamSpec& stream, std::size_t row, std::size_t task_index) {
    std::vector<std::size_t> classes;
    std::vector<std::size_t> tokens;
    candidate_space(stream, row, task_index, classes, tokens);
    return evaluate(model, stream.tasks.at(task_index).test, classes, tokens);
}

// Fills row `row` of the matrix by evaluating on every task.
template <EmbeddingModel M>
void evaluate_row(const M& model, const StreamSpec& stream, std::size_t row, AccuracyMatrix& out) {
    for (std::size_t j = 0; j < stream.tasks.size(); ++j) {
        out.set(row, j, evaluate(model, stream, row, j));
    }
}

}  // namespace mulki
