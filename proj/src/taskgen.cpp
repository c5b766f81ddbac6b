#include "mulki/taskgen.hpp"

#include <algorithm>
#include <cmath>

#include "mulki/error.hpp"
#include "mulki/rng.hpp"

namespace mulki {

StreamMode parse_stream_mode(std::string_view name) {
    if (name == "multi_domain") {
        return StreamMode::multi_domain;
    }
    if (name == "class_incremental") {
        return StreamMode::class_incremental;
    }
    throw ConfigError("unknown stream mode '" + std::string(name) + "' (expected multi_domain or class_incremental)");
}

std::string to_string(StreamMode mode) {
    return mode == StreamMode::multi_domain ? "multi_domain" : "class_incremental";
}

// ---------------------------------------------------------------- TaskSpec

std::vector<std::size_t> TaskSpec::class_ids() const {
    std::vector<std::size_t> ids;
    for (const ClassSpec& c : classes) {
        ids.push_back(c.class_id);
    }
    return ids;
}

std::vector<std::size_t> TaskSpec::token_ids() const {
    std::vector<std::size_t> ids;
    for (const ClassSpec& c : classes) {
        ids.push_back(c.token_id);
    }
    return ids;
}

std::size_t TaskSpec::local_index(std::size_t class_id) const {
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i].class_id == class_id) {
            return i;
        }
    }
    throw LookupError("class " + std::to_string(class_id) + " is not part of task " + std::to_string(task_id));
}

// ---------------------------------------------------------------- config

void StreamConfig::validate() const {
    if (n_tasks < 2) {
        throw ConfigError("stream.n_tasks must be >= 2");
    }
    if (classes_per_task < 2) {
        throw ConfigError("stream.classes_per_task must be >= 2");
    }
    if (d_in == 0) {
        throw ConfigError("stream.d_in must be >= 1");
    }
    if (train_per_class == 0 || test_per_class == 0) {
        throw ConfigError("stream.train_per_class and stream.test_per_class must be >= 1");
    }
    if (!(label_noise >= 0.0 && label_noise < 1.0)) {
        throw ConfigError("stream.label_noise must be in [0, 1)");
    }
    if (!(sigma > 0.0)) {
        throw ConfigError("stream.sigma must be > 0");
    }
    if (!(class_spread > 0.0) || !(domain_offset >= 0.0) || !(domain_floor >= 0.0)) {
        throw ConfigError("stream.class_spread must be > 0; domain_offset and domain_floor >= 0");
    }
}

Json StreamConfig::to_json() const {
    return {{"mode", to_string(mode)},
            {"n_tasks", n_tasks},
            {"classes_per_task", classes_per_task},
            {"d_in", d_in},
            {"train_per_class", train_per_class},
            {"test_per_class", test_per_class},
            {"pretrain_per_class", pretrain_per_class},
            {"label_noise", label_noise},
            {"sigma", sigma},
            {"class_spread", class_spread},
            {"domain_offset", domain_offset},
            {"domain_floor", domain_floor}};
}

StreamConfig StreamConfig::from_json(const Json& j, const std::string& path) {
    StreamConfig c;
    ObjectReader r(j, path);
    std::string mode = to_string(c.mode);
    r.optional("mode", mode);
    c.mode = parse_stream_mode(mode);
    r.optional("n_tasks", c.n_tasks);
    r.optional("classes_per_task", c.classes_per_task);
    r.optional("d_in", c.d_in);
    r.optional("train_per_class", c.train_per_class);
    r.optional("test_per_class", c.test_per_class);
    r.optional("pretrain_per_class", c.pretrain_per_class);
    r.optional("label_noise", c.label_noise);
    r.optional("sigma", c.sigma);
    r.optional("class_spread", c.class_spread);
    r.optional("domain_offset", c.domain_offset);
    r.optional("domain_floor", c.domain_floor);
    r.finish();
    c.validate();
    return c;
}

// ---------------------------------------------------------------- generation

namespace {

using Matrix = std::vector<std::vector<double>>;

// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
Matrix random_rotation(std::size_t n, Rng& rng) {
    Matrix q;
    while (q.size() < n) {
        std::vector<double> v(n);
        for (double& x : v) {
            x = rng.normal();
        }
        for (const auto& u : q) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                dot += v[i] * u[i];
            }
            for (std::size_t i = 0; i < n; ++i) {
                v[i] -= dot * u[i];
            }
        }
        double nrm = 0.0;
        for (double x : v) {
            nrm += x * x;
        }
        nrm = std::sqrt(nrm);
        if (nrm < 1e-8) {
            continue;
        }
        for (double& x : v) {
            x /= nrm;
        }
        q.push_back(std::move(v));
    }
    return q;
}

std::vector<double> unit_direction(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    double nrm = 0.0;
    do {
        nrm = 0.0;
        for (double& x : v) {
            x = rng.normal();
            nrm += x * x;
        }
        nrm = std::sqrt(nrm);
    } while (nrm < 1e-8);
    for (double& x : v) {
        x /= nrm;
    }
    return v;
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ss += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return std::sqrt(ss);
}

struct Frame {
    Matrix rotation;
    std::vector<double> offset;
};

std::vector<double> place(const Frame& f, const std::vector<double>& local, double spread) {
    const std::size_t n = local.size();
    std::vector<double> out(f.offset);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            acc += f.rotation[k][i] * local[k];
        }
        out[i] += spread * acc;
    }
    return out;
}

void draw_samples(SampleSet& set, const ClassSpec& c, std::size_t label, std::size_t count, Rng& rng) {
    for (std::size_t s = 0; s < count; ++s) {
        for (double mu : c.mean) {
            set.x.push_back(mu + c.noise_scale * rng.normal());
        }
        set.labels.push_back(label);
    }
}

constexpr int kMaxFloorAttempts = 1000;

}  // namespace

StreamSpec generate_stream(const StreamConfig& config, std::uint64_t seed) {
    config.validate();
    const std::size_t n = config.d_in;
    const std::size_t n_domains = config.mode == StreamMode::multi_domain ? config.n_tasks : 1;

    // Local (pre-frame) class directions, fixed per class.
    Rng class_rng(mix_seed(seed, 0xC1A55));
    std::vector<std::vector<double>> local;
    for (std::size_t c = 0; c < config.n_tasks * config.classes_per_task; ++c) {
        local.push_back(unit_direction(n, class_rng));
    }
    auto domain_of = [&](std::size_t cls) {
        return config.mode == StreamMode::multi_domain ? cls / config.classes_per_task : std::size_t{0};
    };

    Rng frame_rng(mix_seed(seed, 0xF4A3E));
    std::vector<Frame> frames;
    for (std::size_t d = 0; d < n_domains; ++d) {
        Frame f;
        f.rotation = random_rotation(n, frame_rng);
        frames.push_back(std::move(f));
    }
    std::vector<std::vector<double>> means;
    for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxFloorAttempts) {
            throw ConfigError("could not place domains above stream.domain_floor; lower it or raise domain_offset");
        }
        for (Frame& f : frames) {
            f.offset.assign(n, 0.0);
            for (double& x : f.offset) {
                x = config.domain_offset * frame_rng.normal();
            }
        }
        means.clear();
        for (std::size_t c = 0; c < local.size(); ++c) {
            means.push_back(place(frames[domain_of(c)], local[c], config.class_spread));
        }
        double closest = INFINITY;
        for (std::size_t a = 0; a < means.size(); ++a) {
            for (std::size_t b = a + 1; b < means.size(); ++b) {
                if (domain_of(a) != domain_of(b)) {
                    closest = std::min(closest, distance(means[a], means[b]));
                }
            }
        }
        if (n_domains == 1 || closest >= config.domain_floor) {
            break;
        }
    }

    StreamSpec s;
    s.config = config;
    s.seed = seed;
    s.pretrain_pool.dim = n;
    const std::size_t n_classes = s.n_classes();
    for (std::size_t t = 0; t < config.n_tasks; ++t) {
        TaskSpec task;
        task.task_id = t + 1;
        task.train.dim = n;
        task.test.dim = n;
        for (std::size_t k = 0; k < config.classes_per_task; ++k) {
            const std::size_t cls = t * config.classes_per_task + k;
            task.classes.push_back(ClassSpec{cls, cls + 1, means[cls], config.sigma, domain_of(cls)});
        }
        for (const ClassSpec& c : task.classes) {
            Rng train_rng(mix_seed(mix_seed(seed, c.class_id), 1));
            Rng test_rng(mix_seed(mix_seed(seed, c.class_id), 2));
            draw_samples(task.train, c, c.class_id, config.train_per_class, train_rng);
            draw_samples(task.test, c, c.class_id, config.test_per_class, test_rng);
        }
        s.tasks.push_back(std::move(task));
    }

    Rng pool_rng(mix_seed(seed, 0x9001));
    for (const TaskSpec& task : s.tasks) {
        for (const ClassSpec& c : task.classes) {
            for (std::size_t i = 0; i < config.pretrain_per_class; ++i) {
                std::size_t token = c.token_id;
                if (pool_rng.bernoulli(config.label_noise)) {
                    // Any other class token, uniformly.
                    std::size_t other = pool_rng.index(n_classes - 1);
                    if (other >= c.class_id) {
                        ++other;
                    }
                    token = other + 1;
                }
                for (double mu : c.mean) {
                    s.pretrain_pool.x.push_back(mu + c.noise_scale * pool_rng.normal());
                }
                s.pretrain_pool.labels.push_back(token);
            }
        }
    }
    return s;
}

// ---------------------------------------------------------------- serialization

namespace {

Json samples_to_json(const SampleSet& set) {
    Json rows = Json::array();
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto r = set.row(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return {{"dim", set.dim}, {"labels", set.labels}, {"x", std::move(rows)}};
}

SampleSet samples_from_json(const Json& j, const std::string& path) {
    SampleSet set;
    ObjectReader r(j, path);
    r.required("dim", set.dim);
    r.required("labels", set.labels);
    const Json& rows = r.child("x");
    r.finish();
    if (!rows.is_array() || rows.size() != set.labels.size()) {
        throw ParseError(r.path("x") + ": expected one row per label");
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Json& row = rows[i];
        if (!row.is_array() || row.size() != set.dim) {
            throw ParseError(r.path("x") + "[" + std::to_string(i) + "]: expected " + std::to_string(set.dim) +
                             " numbers");
        }
        for (const Json& v : row) {
            if (!v.is_number()) {
                throw ParseError(r.path("x") + "[" + std::to_string(i) + "]: non-numeric entry");
            }
            set.x.push_back(v.get<double>());
        }
    }
    return set;
}

}  // namespace

std::string stream_to_json_text(const StreamSpec& stream) {
    Json j;
    j["schema_version"] = kStreamSchemaVersion;
    j["seed"] = stream.seed;
    j["config"] = stream.config.to_json();
    j["vocab_size"] = stream.vocab_size();
    j["pretrain_pool"] = samples_to_json(stream.pretrain_pool);
    j["tasks"] = Json::array();
    for (const TaskSpec& t : stream.tasks) {
        Json classes = Json::array();
        for (const ClassSpec& c : t.classes) {
            classes.push_back({{"class_id", c.class_id},
                               {"token_id", c.token_id},
                               {"mean", c.mean},
                               {"noise_scale", c.noise_scale},
                               {"domain_id", c.domain_id}});
        }
        j["tasks"].push_back({{"task_id", t.task_id},
                              {"classes", std::move(classes)},
                              {"train", samples_to_json(t.train)},
                              {"test", samples_to_json(t.test)}});
    }
    return canonical_dump(j) + "\n";
}

StreamSpec stream_from_json_text(std::string_view text, const std::string& source) {
    const Json j = parse_json(text, source);
    StreamSpec s;
    try {
        ObjectReader r(j, "");
        int version = 0;
        r.required("schema_version", version);
        if (version != kStreamSchemaVersion) {
            throw ParseError("schema_version: unsupported value " + std::to_string(version));
        }
        r.required("seed", s.seed);
        s.config = StreamConfig::from_json(r.child("config"), "config");
        std::size_t vocab = 0;
        r.required("vocab_size", vocab);
        s.pretrain_pool = samples_from_json(r.child("pretrain_pool"), "pretrain_pool");
        const Json& tasks = r.child("tasks");
        r.finish();
        if (vocab != s.vocab_size()) {
            throw ParseError("vocab_size: does not match config");
        }
        if (!tasks.is_array() || tasks.size() != s.config.n_tasks) {
            throw ParseError("tasks: expected " + std::to_string(s.config.n_tasks) + " tasks");
        }
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            const std::string tp = "tasks[" + std::to_string(t) + "]";
            ObjectReader tr(tasks[t], tp);
            TaskSpec task;
            tr.required("task_id", task.task_id);
            const Json& classes = tr.child("classes");
            task.train = samples_from_json(tr.child("train"), tp + ".train");
            task.test = samples_from_json(tr.child("test"), tp + ".test");
            tr.finish();
            if (!classes.is_array() || classes.empty()) {
                throw ParseError(tp + ".classes: expected a non-empty array");
            }
            for (std::size_t c = 0; c < classes.size(); ++c) {
                ObjectReader cr(classes[c], tp + ".classes[" + std::to_string(c) + "]");
                ClassSpec cs;
                cr.required("class_id", cs.class_id);
                cr.required("token_id", cs.token_id);
                cr.required("mean", cs.mean);
                cr.required("noise_scale", cs.noise_scale);
                cr.required("domain_id", cs.domain_id);
                cr.finish();
                if (cs.token_id == 0 || cs.token_id >= vocab) {
                    throw ParseError(cr.path("token_id") + ": outside vocabulary");
                }
                task.classes.push_back(std::move(cs));
            }
            s.tasks.push_back(std::move(task));
        }
    } catch (const ConfigError& e) {
        throw ParseError(source + ": " + e.what());
    } catch (const ParseError& e) {
        const std::string what = e.what();
        if (what.rfind(source, 0) == 0) {
            throw;
        }
        throw ParseError(source + ": " + what);
    }
    return s;
}

void save_stream(const std::filesystem::path& path, const StreamSpec& stream) {
    write_text_file(path, stream_to_json_text(stream));
}

StreamSpec load_stream(const std::filesystem::path& path) {
    return stream_from_json_text(read_text_file(path), path.string());
}

// ---------------------------------------------------------------- batches

Batch sample_batch(const TaskSpec& task, std::size_t batch_size, std::uint64_t seed, std::size_t iteration) {
    const std::size_t n = task.train.size();
    if (n == 0) {
        throw DegenerateInputError("task " + std::to_string(task.task_id) + " has no training samples");
    }
    Rng rng(mix_seed(seed, iteration));
    const std::size_t d = task.train.dim;
    Batch b;
    std::vector<double> x;
    x.reserve(batch_size * d);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::size_t idx = rng.index(n);
        const auto row = task.train.row(idx);
        x.insert(x.end(), row.begin(), row.end());
        const std::size_t cls = task.train.labels[idx];
        b.class_ids.push_back(cls);
        b.local_labels.push_back(task.local_index(cls));
    }
    b.images = Tensor::matrix(batch_size, d, std::move(x));
    return b;
}

BatchSampler::BatchSampler(const TaskSpec& task, std::size_t batch_size, std::uint64_t seed, std::size_t iterations)
    : task_(&task), batch_size_(batch_size), seed_(seed), iterations_(iterations) {}

Batch BatchSampler::next() {
    if (done()) {
        throw ContractError("BatchSampler exhausted");
    }
    return sample_batch(*task_, batch_size_, seed_, next_++);
}

}  // namespace mulki
