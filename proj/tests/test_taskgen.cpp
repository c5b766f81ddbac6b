#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "mulki/error.hpp"
#include "mulki/io.hpp"
#include "mulki/taskgen.hpp"

using namespace mulki;
namespace fs = std::filesystem;

namespace {

StreamConfig small_config(StreamMode mode) {
    StreamConfig c;
    c.mode = mode;
    c.n_tasks = 3;
    c.classes_per_task = 4;
    c.d_in = 6;
    c.train_per_class = 30;
    c.test_per_class = 10;
    c.pretrain_per_class = 5;
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "mulki_test_taskgen" / name;
    fs::remove_all(p);
    return p;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("generation is a pure function of config and seed") {
    const StreamConfig c = small_config(StreamMode::multi_domain);
    CHECK(generate_stream(c, 5) == generate_stream(c, 5));
    CHECK_FALSE(generate_stream(c, 5) == generate_stream(c, 6));
    CHECK(stream_to_json_text(generate_stream(c, 5)) == stream_to_json_text(generate_stream(c, 5)));
}

TEST_CASE("stream shape and identifiers") {
    for (StreamMode mode : {StreamMode::multi_domain, StreamMode::class_incremental}) {
        const StreamSpec s = generate_stream(small_config(mode), 1);
        CHECK(s.tasks.size() == 3);
        CHECK(s.n_classes() == 12);
        std::set<std::size_t> classes;
        std::set<std::size_t> tokens;
        for (std::size_t t = 0; t < s.tasks.size(); ++t) {
            const TaskSpec& task = s.tasks[t];
            CHECK(task.task_id == t + 1);
            CHECK(task.train.size() == 4 * 30);
            CHECK(task.test.size() == 4 * 10);
            for (const ClassSpec& c : task.classes) {
                classes.insert(c.class_id);
                tokens.insert(c.token_id);
                CHECK(c.token_id >= 1);
                CHECK(c.token_id < s.vocab_size());
                CHECK(c.mean.size() == 6);
                const std::size_t tests = std::count(task.test.labels.begin(), task.test.labels.end(), c.class_id);
                CHECK(tests == 10);
            }
        }
        CHECK(classes.size() == 12);
        CHECK(tokens.size() == 12);
        CHECK(s.pretrain_pool.size() == 12 * 5);
        for (std::size_t tok : s.pretrain_pool.labels) {
            CHECK(tok >= 1);
            CHECK(tok <= 12);
        }
    }
}

TEST_CASE("train and test draws differ") {
    const StreamSpec s = generate_stream(small_config(StreamMode::multi_domain), 2);
    const TaskSpec& t = s.tasks[0];
    for (std::size_t i = 0; i < t.test.size(); ++i) {
        for (std::size_t j = 0; j < t.train.size(); ++j) {
            CHECK(t.test.row(i)[0] != t.train.row(j)[0]);
        }
    }
}

TEST_CASE("per-class sample means sit within 3 sigma / sqrt(n) of the class mean") {
    StreamConfig c = small_config(StreamMode::multi_domain);
    c.train_per_class = 400;
    const StreamSpec s = generate_stream(c, 3);
    std::size_t outside = 0;
    std::size_t total = 0;
    for (const TaskSpec& t : s.tasks) {
        for (const ClassSpec& cls : t.classes) {
            std::vector<double> m(c.d_in, 0.0);
            std::size_t n = 0;
            for (std::size_t i = 0; i < t.train.size(); ++i) {
                if (t.train.labels[i] != cls.class_id) {
                    continue;
                }
                ++n;
                for (std::size_t k = 0; k < c.d_in; ++k) {
                    m[k] += t.train.row(i)[k];
                }
            }
            for (std::size_t k = 0; k < c.d_in; ++k) {
                ++total;
                outside += std::abs(m[k] / static_cast<double>(n) - cls.mean[k]) >
                                   3.0 * cls.noise_scale / std::sqrt(static_cast<double>(n))
                               ? 1
                               : 0;
            }
        }
    }
    // 3-sigma bands leave about 0.27% outside; 72 coordinates here.
    CHECK(outside <= 2);
    CHECK(total == 72);
}

TEST_CASE("multi-domain class means respect the domain floor") {
    StreamConfig c = small_config(StreamMode::multi_domain);
    c.domain_floor = 1.5;
    const StreamSpec s = generate_stream(c, 4);
    for (std::size_t a = 0; a < s.tasks.size(); ++a) {
        for (std::size_t b = a + 1; b < s.tasks.size(); ++b) {
            for (const ClassSpec& x : s.tasks[a].classes) {
                for (const ClassSpec& y : s.tasks[b].classes) {
                    CHECK(x.domain_id != y.domain_id);
                    CHECK(dist(x.mean, y.mean) >= 1.5);
                }
            }
        }
    }
    c.domain_floor = 1e6;
    CHECK_THROWS_AS(generate_stream(c, 4), ConfigError);
}

TEST_CASE("save and load round-trip byte-identically") {
    const fs::path dir = scratch("roundtrip");
    const StreamSpec s = generate_stream(small_config(StreamMode::class_incremental), 5);
    save_stream(dir / "a.json", s);
    const StreamSpec back = load_stream(dir / "a.json");
    CHECK(back == s);
    save_stream(dir / "b.json", back);
    CHECK(read_text_file(dir / "a.json") == read_text_file(dir / "b.json"));
    CHECK(parse_json(read_text_file(dir / "a.json"), "a").at("schema_version") == kStreamSchemaVersion);
}

TEST_CASE("corrupted stream files fail with the field named") {
    const StreamSpec s = generate_stream(small_config(StreamMode::multi_domain), 6);
    Json j = parse_json(stream_to_json_text(s), "s");
    j["tasks"][1]["classes"][0]["noise_scale"] = "loud";
    try {
        stream_from_json_text(j.dump(), "bad.json");
        FAIL("expected a parse error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bad.json") != std::string::npos);
        CHECK(msg.find("noise_scale") != std::string::npos);
    }
    CHECK_THROWS_AS(stream_from_json_text("{\"schema_version\": 1,", "trunc.json"), ParseError);
    Json v = parse_json(stream_to_json_text(s), "s");
    v["schema_version"] = 99;
    CHECK_THROWS_AS(stream_from_json_text(v.dump(), "v.json"), ParseError);
}

TEST_CASE("invalid configs") {
    StreamConfig c = small_config(StreamMode::multi_domain);
    c.n_tasks = 1;
    CHECK_THROWS_AS(generate_stream(c, 0), ConfigError);
    c = small_config(StreamMode::multi_domain);
    c.classes_per_task = 1;
    CHECK_THROWS_AS(generate_stream(c, 0), ConfigError);
    c = small_config(StreamMode::multi_domain);
    c.sigma = 0.0;
    CHECK_THROWS_AS(generate_stream(c, 0), ConfigError);
    CHECK_THROWS_AS(parse_stream_mode("online"), ConfigError);
    CHECK_THROWS_AS(StreamConfig::from_json(Json{{"n_task", 3}}, "stream"), ConfigError);
}

TEST_CASE("batches are deterministic per seed and iteration") {
    const StreamSpec s = generate_stream(small_config(StreamMode::multi_domain), 7);
    const TaskSpec& t = s.tasks[1];
    const Batch a = sample_batch(t, 16, 9, 3);
    const Batch b = sample_batch(t, 16, 9, 3);
    const Batch c = sample_batch(t, 16, 9, 4);
    CHECK(a.images.to_vector() == b.images.to_vector());
    CHECK(a.class_ids == b.class_ids);
    CHECK(a.images.to_vector() != c.images.to_vector());
    CHECK(a.images.shape() == Shape{16, 6});
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(t.classes[a.local_labels[i]].class_id == a.class_ids[i]);
    }
    BatchSampler it(t, 16, 9, 5);
    std::size_t n = 0;
    while (!it.done()) {
        const std::size_t k = it.iteration();
        CHECK(it.next().class_ids == sample_batch(t, 16, 9, k).class_ids);
        ++n;
    }
    CHECK(n == 5);
    CHECK_THROWS_AS(it.next(), ContractError);
    CHECK_THROWS_AS(t.local_index(999), LookupError);
}
