#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mulki/encoder.hpp"
#include "mulki/error.hpp"
#include "mulki/metrics.hpp"
#include "oracles.hpp"

using namespace mulki;

namespace {

// Reads the class straight out of the first input coordinate.
struct LookupModel {
    std::size_t n_classes;

    Tensor encode_images(const Tensor& x) const {
        std::vector<double> out(x.rows() * n_classes, 0.0);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            out[r * n_classes + static_cast<std::size_t>(x.at(r, 0))] = 1.0;
        }
        return Tensor::matrix(x.rows(), n_classes, out);
    }
    Tensor encode_texts(std::span<const std::size_t> tokens) const {
        std::vector<double> out(tokens.size() * n_classes, 0.0);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            out[i * n_classes + tokens[i] - 1] = 1.0;
        }
        return Tensor::matrix(tokens.size(), n_classes, out);
    }
};

template <class M>
struct Doubled {
    const M& inner;
    Tensor encode_images(const Tensor& x) const { return scale(inner.encode_images(x), 2.0); }
    Tensor encode_texts(std::span<const std::size_t> t) const { return scale(inner.encode_texts(t), 2.0); }
};

StreamConfig small_config(StreamMode mode) {
    StreamConfig c;
    c.mode = mode;
    c.n_tasks = 3;
    c.classes_per_task = 5;
    c.d_in = 8;
    c.train_per_class = 5;
    c.test_per_class = 60;
    return c;
}

}  // namespace

TEST_CASE("hand-built N = 2 matrix") {
    const AccuracyMatrix a = AccuracyMatrix::from_rows({{.5, .5}, {1, .5}, {1, 1}});
    CHECK(transfer(a) == 0.5);
    CHECK(avg(a) == 0.875);
    CHECK(last(a) == 1.0);
    CHECK(current_avg(a) == 1.0);
    const Json j = metrics_json(a);
    CHECK(j.at("zero_shot_row") == Json::array({0.5, 0.5}));
    CHECK(j.at("matrix").size() == 3);
    for (const char* key : {"transfer", "avg", "last", "current_avg"}) {
        CHECK(j.contains(key));
    }
}

TEST_CASE("constant matrices give the constant") {
    for (double c : {0.0, 0.25, 0.7, 1.0}) {
        for (std::size_t n : {2u, 3u, 5u}) {
            const AccuracyMatrix a(n, std::vector<double>((n + 1) * n, c));
            CHECK(std::abs(transfer(a) - c) < 1e-15);
            CHECK(std::abs(avg(a) - c) < 1e-15);
            CHECK(std::abs(last(a) - c) < 1e-15);
            CHECK(std::abs(current_avg(a) - c) < 1e-15);
        }
    }
}

TEST_CASE("transfer ignores row 0 and the diagonal-and-below entries") {
    const std::size_t n = 4;
    Rng rng(1);
    AccuracyMatrix a(n);
    AccuracyMatrix b(n);
    for (std::size_t i = 0; i <= n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const bool feeds = i >= 1 && j >= i;  // task j+1 unseen by the model of row i
            const double v = rng.uniform();
            a.set(i, j, v);
            b.set(i, j, feeds ? v : (i + j) % 2 == 0 ? 0.0 : 1.0);
        }
    }
    CHECK(transfer(a) == transfer(b));
}

TEST_CASE("summaries stay within the entry range; row permutation moves only last") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Rng rng(seed);
        const std::size_t n = 2 + rng.index(5);
        std::vector<std::vector<double>> rows(n + 1, std::vector<double>(n));
        for (auto& r : rows) {
            for (double& v : r) {
                v = rng.uniform();
            }
        }
        const AccuracyMatrix a = AccuracyMatrix::from_rows(rows);
        double lo = 1.0;
        double hi = 0.0;
        for (double v : a.values()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        for (double s : {transfer(a), avg(a), last(a), current_avg(a)}) {
            CHECK(s >= lo);
            CHECK(s <= hi);
        }
        auto swapped = rows;
        std::swap(swapped[1], swapped[n]);
        const AccuracyMatrix b = AccuracyMatrix::from_rows(swapped);
        CHECK(std::abs(avg(a) - avg(b)) < 1e-12);
    }
    const AccuracyMatrix x = AccuracyMatrix::from_rows({{0, 0}, {0.2, 0.4}, {0.9, 0.7}});
    const AccuracyMatrix y = AccuracyMatrix::from_rows({{0, 0}, {0.9, 0.7}, {0.2, 0.4}});
    CHECK(last(x) != last(y));
    CHECK(avg(x) == avg(y));
}

TEST_CASE("matrix validation") {
    CHECK_THROWS_AS(AccuracyMatrix::from_rows({{0.5, 0.5}, {0.5}}), DimensionError);
    CHECK_THROWS_AS(AccuracyMatrix(2, std::vector<double>(5, 0.5)), DimensionError);
    AccuracyMatrix a(2);
    CHECK_THROWS_AS(a.set(0, 0, 1.5), ContractError);
}

TEST_CASE("an oracle lookup model scores 1 and scaling changes nothing") {
    SampleSet test;
    test.dim = 2;
    const std::vector<std::size_t> classes{3, 5, 6};
    const std::vector<std::size_t> tokens{4, 6, 7};
    for (std::size_t c : classes) {
        for (int k = 0; k < 4; ++k) {
            test.x.push_back(static_cast<double>(c));
            test.x.push_back(0.3 * k);
            test.labels.push_back(c);
        }
    }
    const LookupModel m{8};
    CHECK(evaluate(m, test, classes, tokens) == 1.0);
    CHECK(evaluate(Doubled<LookupModel>{m}, test, classes, tokens) == 1.0);
    CHECK_THROWS_AS(evaluate(m, SampleSet{2, {}, {}}, classes, tokens), ContractError);
}

TEST_CASE("cosine scale invariance on a real encoder") {
    const StreamSpec s = generate_stream(small_config(StreamMode::multi_domain), 2);
    const ModelSnapshot m(DualEncoder::init(3, {8, 4, 8, 6, s.vocab_size()}));
    for (std::size_t j = 0; j < s.tasks.size(); ++j) {
        CHECK(evaluate(m, s, 0, j) == evaluate(Doubled<ModelSnapshot>{m}, s, 0, j));
    }
}

TEST_CASE("random-init models sit near chance") {
    double total = 0.0;
    std::size_t count = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const StreamSpec s = generate_stream(small_config(StreamMode::multi_domain), seed);
        const ModelSnapshot m(DualEncoder::init(100 + seed, {8, 16, 64, 16, s.vocab_size()}));
        for (std::size_t j = 0; j < s.tasks.size(); ++j) {
            total += evaluate(m, s, 0, j);
            ++count;
        }
    }
    CHECK(std::abs(total / static_cast<double>(count) - 0.2) <= 0.1);
}

TEST_CASE("candidate label spaces by mode") {
    std::vector<std::size_t> classes;
    std::vector<std::size_t> tokens;
    const StreamSpec md = generate_stream(small_config(StreamMode::multi_domain), 4);
    candidate_space(md, 3, 1, classes, tokens);
    CHECK(classes == md.tasks[1].class_ids());
    CHECK(tokens == md.tasks[1].token_ids());

    const StreamSpec ci = generate_stream(small_config(StreamMode::class_incremental), 4);
    candidate_space(ci, 1, 0, classes, tokens);
    CHECK(classes.size() == 5);
    candidate_space(ci, 2, 0, classes, tokens);
    CHECK(classes.size() == 10);
    candidate_space(ci, 0, 2, classes, tokens);  // unseen task: its own classes are included
    CHECK(classes.size() == 15);
}
