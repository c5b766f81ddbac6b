#include "mulki/metrics.hpp"

namespace mulki {

AccuracyMatrix::AccuracyMatrix(std::size_t n_tasks, std::vector<double> values)
    : n_(n_tasks), values_(std::move(values)) {
    if (values_.size() != (n_ + 1) * n_) {
        throw DimensionError("accuracy matrix needs (N+1) x N values");
    }
    for (double v : values_) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ContractError("accuracy outside [0, 1]");
        }
    }
}

AccuracyMatrix AccuracyMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.size() < 2) {
        throw DimensionError("accuracy matrix needs at least two rows");
    }
    const std::size_t n = rows.size() - 1;
    std::vector<double> flat;
    for (const auto& r : rows) {
        if (r.size() != n) {
            throw DimensionError("accuracy matrix rows must have N = rows - 1 entries");
        }
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return AccuracyMatrix(n, std::move(flat));
}

void AccuracyMatrix::set(std::size_t row, std::size_t col, double v) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw ContractError("accuracy outside [0, 1]");
    }
    values_.at(row * n_ + col) = v;
}

std::vector<double> AccuracyMatrix::row(std::size_t r) const {
    const auto first = values_.begin() + static_cast<std::ptrdiff_t>(r * n_);
    return {first, first + static_cast<std::ptrdiff_t>(n_)};
}

Json AccuracyMatrix::to_json() const {
    Json rows = Json::array();
    for (std::size_t r = 0; r <= n_; ++r) {
        rows.push_back(row(r));
    }
    return rows;
}

double transfer(const AccuracyMatrix& a) {
    const std::size_t n = a.n_tasks();
    if (n < 2) {
        throw ContractError("transfer needs at least two tasks");
    }
    double total = 0.0;
    for (std::size_t col = 1; col < n; ++col) {
        // Task col+1 is unseen by the models of rows 1..col.
        double s = 0.0;
        for (std::size_t row = 1; row <= col; ++row) {
            s += a.at(row, col);
        }
        total += s / static_cast<double>(col);
    }
    return total / static_cast<double>(n - 1);
}

double avg(const AccuracyMatrix& a) {
    const std::size_t n = a.n_tasks();
    double s = 0.0;
    for (std::size_t row = 1; row <= n; ++row) {
        for (std::size_t col = 0; col < n; ++col) {
            s += a.at(row, col);
        }
    }
    return s / static_cast<double>(n * n);
}

double last(const AccuracyMatrix& a) {
    const std::size_t n = a.n_tasks();
    double s = 0.0;
    for (std::size_t col = 0; col < n; ++col) {
        s += a.at(n, col);
    }
    return s / static_cast<double>(n);
}

double current_avg(const AccuracyMatrix& a) {
    const std::size_t n = a.n_tasks();
    double total = 0.0;
    for (std::size_t row = 1; row <= n; ++row) {
        double s = 0.0;
        for (std::size_t col = 0; col < row; ++col) {
            s += a.at(row, col);
        }
        total += s / static_cast<double>(row);
    }
    return total / static_cast<double>(n);
}

MetricSummary summarize(const AccuracyMatrix& a) { return {transfer(a), avg(a), last(a), current_avg(a)}; }

Json metrics_json(const AccuracyMatrix& a) {
    const MetricSummary m = summarize(a);
    return {{"matrix", a.to_json()},
            {"transfer", m.transfer},
            {"avg", m.avg},
            {"last", m.last},
            {"current_avg", m.current_avg},
            {"zero_shot_row", a.row(0)}};
}

void candidate_space(const StreamSpec& stream, std::size_t row, std::size_t task_index,
                     std::vector<std::size_t>& classes, std::vector<std::size_t>& tokens) {
    classes.clear();
    tokens.clear();
    if (stream.config.mode == StreamMode::multi_domain) {
        const TaskSpec& t = stream.tasks.at(task_index);
        classes = t.class_ids();
        tokens = t.token_ids();
        return;
    }
    const std::size_t upto = std::max(row, task_index + 1);
    for (std::size_t t = 0; t < upto && t < stream.tasks.size(); ++t) {
        for (const ClassSpec& c : stream.tasks[t].classes) {
            classes.push_back(c.class_id);
            tokens.push_back(c.token_id);
        }
    }
}

}  // namespace mulki
