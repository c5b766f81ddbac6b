#include "mulki/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mulki/error.hpp"
#include "mulki/metrics.hpp"

namespace mulki {

namespace fs = std::filesystem;

Json hyper_to_json(const HyperParams& h) {
    return {{"tau", h.tau},
            {"tau_ce", h.tau_ce},
            {"alpha", h.alpha},
            {"beta", h.beta},
            {"lambda1", h.lambda1},
            {"lambda2", h.lambda2},
            {"lambda_wc", h.lambda_wc},
            {"gamma0", h.gamma.gamma0},
            {"gamma_step", h.gamma.step},
            {"gamma_max", h.gamma.max},
            {"iterations_per_task", h.iterations_per_task},
            {"batch_size", h.batch_size},
            {"lr", h.lr},
            {"weight_decay", h.weight_decay},
            {"we_interval", h.we_interval},
            {"ewe_eta", h.ewe_eta},
            {"weighting", to_string(h.weighting)},
            {"enable",
             {{"csa", h.enable.csa},
              {"fd", h.enable.fd},
              {"ird", h.enable.ird},
              {"idd", h.enable.idd},
              {"wc", h.enable.wc},
              {"we", h.enable.we},
              {"ewe", h.enable.ewe}}}};
}

HyperParams hyper_from_json(const Json& j, const std::string& path) {
    HyperParams h;
    ObjectReader r(j, path);
    r.optional("tau", h.tau);
    r.optional("tau_ce", h.tau_ce);
    r.optional("alpha", h.alpha);
    r.optional("beta", h.beta);
    r.optional("lambda1", h.lambda1);
    r.optional("lambda2", h.lambda2);
    r.optional("lambda_wc", h.lambda_wc);
    r.optional("gamma0", h.gamma.gamma0);
    r.optional("gamma_step", h.gamma.step);
    r.optional("gamma_max", h.gamma.max);
    r.optional("iterations_per_task", h.iterations_per_task);
    r.optional("batch_size", h.batch_size);
    r.optional("lr", h.lr);
    r.optional("weight_decay", h.weight_decay);
    r.optional("we_interval", h.we_interval);
    r.optional("ewe_eta", h.ewe_eta);
    std::string weighting = to_string(h.weighting);
    r.optional("weighting", weighting);
    h.weighting = parse_weighting(weighting);
    if (r.has("enable")) {
        ObjectReader e(r.child("enable"), r.path("enable"));
        e.optional("csa", h.enable.csa);
        e.optional("fd", h.enable.fd);
        e.optional("ird", h.enable.ird);
        e.optional("idd", h.enable.idd);
        e.optional("wc", h.enable.wc);
        e.optional("we", h.enable.we);
        e.optional("ewe", h.enable.ewe);
        e.finish();
    }
    r.finish();
    h.validate();
    return h;
}

ExperimentConfig parse_experiment(const Json& doc) {
    if (!doc.is_object()) {
        throw ConfigError("experiment config must be a JSON object");
    }
    ExperimentConfig c;
    c.source = doc;
    ObjectReader r(doc, "");
    r.optional("variant", c.variant);
    r.optional("seeds", c.seeds);
    r.optional("output_dir", c.output_dir);
    r.optional("stream_seed", c.stream_seed);
    if (r.has("stream")) {
        c.stream = StreamConfig::from_json(r.child("stream"), "stream");
    }
    if (r.has("model")) {
        ObjectReader m(r.child("model"), "model");
        m.optional("d_tok", c.model.d_tok);
        m.optional("hidden", c.model.hidden);
        m.optional("embed_dim", c.model.embed_dim);
        m.finish();
        if (c.model.d_tok == 0 || c.model.hidden == 0 || c.model.embed_dim == 0) {
            throw ConfigError("model dimensions must be positive");
        }
    }
    if (r.has("pretrain")) {
        c.pretrain = PretrainConfig::from_json(r.child("pretrain"), "pretrain");
    }
    if (r.has("hyper")) {
        c.hyper = hyper_from_json(r.child("hyper"), "hyper");
    }
    r.finish();
    if (c.seeds.empty()) {
        throw ConfigError("seeds must list at least one seed");
    }
    apply_variant(c.hyper, c.variant);
    return c;
}

ExperimentConfig load_experiment(const fs::path& path) {
    try {
        return parse_experiment(parse_json(read_text_file(path), path.string()));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

Json experiment_to_json(const ExperimentConfig& cfg) {
    return {{"variant", cfg.variant},
            {"seeds", cfg.seeds},
            {"output_dir", cfg.output_dir},
            {"stream_seed", cfg.stream_seed},
            {"stream", cfg.stream.to_json()},
            {"model", {{"d_tok", cfg.model.d_tok}, {"hidden", cfg.model.hidden}, {"embed_dim", cfg.model.embed_dim}}},
            {"pretrain", cfg.pretrain.to_json()},
            {"hyper", hyper_to_json(cfg.hyper)}};
}

const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names{"mulki",    "wo_we_wc", "wo_we",        "only_fd",
                                                "only_ird", "only_idd", "only_mdd",     "continual_ft",
                                                "only_c0",  "only_prev", "average"};
    return names;
}

HyperParams apply_variant(const HyperParams& base, std::string_view variant) {
    HyperParams h = base;
    auto distill_only = [&h](bool fd, bool ird, bool idd) {
        h.enable = Components{false, fd, ird, idd, false, false, false};
    };
    if (variant == "mulki") {
    } else if (variant == "wo_we_wc") {
        h.enable.we = false;
        h.enable.ewe = false;
        h.enable.wc = false;
    } else if (variant == "wo_we") {
        h.enable.we = false;
        h.enable.ewe = false;
    } else if (variant == "only_fd") {
        distill_only(true, false, false);
    } else if (variant == "only_ird") {
        distill_only(false, true, false);
    } else if (variant == "only_idd") {
        distill_only(false, false, true);
    } else if (variant == "only_mdd") {
        distill_only(true, true, true);
    } else if (variant == "continual_ft") {
        h.lambda1 = 0.0;
        h.lambda2 = 0.0;
        h.enable = Components{false, false, false, false, false, false, false};
    } else if (variant == "only_c0") {
        h.weighting = Weighting::only_c0;
    } else if (variant == "only_prev") {
        h.weighting = Weighting::only_prev;
    } else if (variant == "average") {
        h.weighting = Weighting::average;
    } else {
        throw ConfigError("unknown variant '" + std::string(variant) + "'");
    }
    return h;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
    std::vector<std::uint64_t> seeds;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = std::min(text.find(',', pos), text.size());
        const std::string item(text.substr(pos, comma - pos));
        if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
            throw ConfigError("--seeds expects comma-separated non-negative integers, got '" + std::string(text) +
                              "'");
        }
        seeds.push_back(std::stoull(item));
        pos = comma + 1;
    }
    return seeds;
}

// ------------------------------------------------------------------ commands

void cmd_generate(const fs::path& config, const fs::path& out) {
    const ExperimentConfig cfg = load_experiment(config);
    save_stream(out, generate_stream(cfg.stream, cfg.stream_seed));
}

namespace {

EncoderDims dims_of(const ExperimentConfig& cfg, const StreamSpec& stream) {
    return dims_for(stream, cfg.model.d_tok, cfg.model.hidden, cfg.model.embed_dim);
}

void write_zero_shot(const fs::path& path, const std::vector<double>& row) {
    write_text_file(path, canonical_dump(Json{{"zero_shot_row", row}}, 2) + "\n");
}

struct Prepared {
    ExperimentConfig cfg;
    StreamSpec stream;
    std::optional<ModelSnapshot> c0;
};

Prepared prepare(const RunOptions& opts) {
    Prepared p{load_experiment(opts.config), {}, std::nullopt};
    if (opts.seeds) {
        if (opts.seeds->empty()) {
            throw ConfigError("--seeds must list at least one seed");
        }
        p.cfg.seeds = *opts.seeds;
    }
    if (opts.variant) {
        apply_variant(p.cfg.hyper, *opts.variant);
        p.cfg.variant = *opts.variant;
    }
    p.stream = opts.stream ? load_stream(*opts.stream) : generate_stream(p.cfg.stream, p.cfg.stream_seed);
    if (opts.c0) {
        DualEncoder m = load_checkpoint(*opts.c0);
        if (m.dims().d_in != p.stream.config.d_in || m.dims().vocab_size < p.stream.vocab_size()) {
            throw DimensionError("checkpoint " + opts.c0->string() + " does not fit the stream");
        }
        p.c0.emplace(m);
    } else {
        p.c0.emplace(pretrain(p.stream, dims_of(p.cfg, p.stream), p.cfg.pretrain));
    }
    return p;
}

Json run_echo(const ExperimentConfig& cfg, const std::string& variant, std::uint64_t seed) {
    return {{"config", cfg.source}, {"resolved", experiment_to_json(cfg)}, {"variant", variant}, {"seed", seed}};
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

struct Stat {
    double mean = 0.0;
    double std = 0.0;
};

Stat stat(const std::vector<double>& v) {
    Stat s;
    for (double x : v) {
        s.mean += x;
    }
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) {
            ss += (x - s.mean) * (x - s.mean);
        }
        s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

const std::vector<std::string> kMetricNames{"transfer", "avg", "last", "current_avg"};

// Rows of {name, per-metric samples}; emits CSV and JSON tables of mean +- std.
struct Table {
    std::vector<std::pair<std::string, std::map<std::string, std::vector<double>>>> rows;

    void add(const std::string& name, const Json& metrics) {
        auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& r) { return r.first == name; });
        if (it == rows.end()) {
            rows.emplace_back(name, std::map<std::string, std::vector<double>>{});
            it = rows.end() - 1;
        }
        for (const std::string& m : kMetricNames) {
            it->second[m].push_back(metrics.at(m).get<double>());
        }
    }

    std::string csv(const std::string& key) const {
        std::string out = key + ",n";
        for (const std::string& m : kMetricNames) {
            out += "," + m + "_mean," + m + "_std";
        }
        out += "\n";
        for (const auto& [name, samples] : rows) {
            out += name + "," + std::to_string(samples.at("transfer").size());
            for (const std::string& m : kMetricNames) {
                const Stat s = stat(samples.at(m));
                out += "," + format_double(s.mean) + "," + format_double(s.std);
            }
            out += "\n";
        }
        return out;
    }

    Json json(const std::string& key) const {
        Json arr = Json::array();
        for (const auto& [name, samples] : rows) {
            Json row{{key, name}, {"n", samples.at("transfer").size()}};
            for (const std::string& m : kMetricNames) {
                const Stat s = stat(samples.at(m));
                row[m] = {{"mean", s.mean}, {"std", s.std}, {"values", samples.at(m)}};
            }
            arr.push_back(row);
        }
        return arr;
    }
};

}  // namespace

void cmd_pretrain(const fs::path& config, const fs::path& stream_path, const fs::path& out_prefix) {
    const ExperimentConfig cfg = load_experiment(config);
    const StreamSpec stream = load_stream(stream_path);
    const ModelSnapshot c0 = pretrain(stream, dims_of(cfg, stream), cfg.pretrain);
    save_checkpoint(out_prefix, c0.model());
    write_zero_shot(with_suffix(out_prefix, ".zero_shot.json"), zero_shot_row(c0, stream));
}

void cmd_run(const RunOptions& opts) {
    const Prepared p = prepare(opts);
    const HyperParams hyper = apply_variant(p.cfg.hyper, p.cfg.variant);
    for (std::uint64_t seed : p.cfg.seeds) {
        RunRecord rec = run_stream(p.stream, *p.c0, hyper, seed);
        rec.config_echo = run_echo(p.cfg, p.cfg.variant, seed);
        write_run(opts.out / seed_dir(seed), rec);
    }
}

void cmd_ablate(const RunOptions& opts) {
    const Prepared p = prepare(opts);
    Table table;
    for (const std::string& variant : variant_names()) {
        const HyperParams hyper = apply_variant(p.cfg.hyper, variant);
        for (std::uint64_t seed : p.cfg.seeds) {
            RunRecord rec = run_stream(p.stream, *p.c0, hyper, seed);
            rec.config_echo = run_echo(p.cfg, variant, seed);
            write_run(opts.out / variant / seed_dir(seed), rec);
            table.add(variant, metrics_json(rec.matrix));
        }
    }
    write_text_file(opts.out / "ablation.csv", table.csv("variant"));
    write_text_file(opts.out / "ablation.json", canonical_dump(table.json("variant"), 2) + "\n");
}

void cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out,
                const std::optional<fs::path>& series_out) {
    if (run_dirs.empty()) {
        throw ConfigError("report needs at least one run directory");
    }
    Table table;
    std::string series = "run,seed,after_task,eval_task,accuracy\n";
    for (const fs::path& dir : run_dirs) {
        std::vector<fs::path> files;
        if (fs::exists(dir / "metrics.json")) {
            files.push_back(dir / "metrics.json");
        } else if (fs::is_directory(dir)) {
            for (const auto& entry : fs::directory_iterator(dir)) {
                if (fs::exists(entry.path() / "metrics.json")) {
                    files.push_back(entry.path() / "metrics.json");
                }
            }
            std::sort(files.begin(), files.end());
        }
        if (files.empty()) {
            throw LookupError("no metrics.json under " + dir.string());
        }
        const std::string name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
        for (const fs::path& f : files) {
            const Json m = parse_json(read_text_file(f), f.string());
            table.add(name, m);
            const std::string seed = m.contains("seed") ? m.at("seed").dump() : "";
            const Json& rows = m.at("matrix");
            for (std::size_t i = 0; i < rows.size(); ++i) {
                for (std::size_t j = 0; j < rows[i].size(); ++j) {
                    series += name + "," + seed + "," + std::to_string(i) + "," + std::to_string(j + 1) + "," +
                              format_double(rows[i][j].get<double>()) + "\n";
                }
            }
        }
    }
    if (out.extension() == ".json") {
        write_text_file(out, canonical_dump(table.json("run"), 2) + "\n");
    } else {
        write_text_file(out, table.csv("run"));
    }
    if (series_out) {
        write_text_file(*series_out, series);
    }
}

}  // namespace mulki
