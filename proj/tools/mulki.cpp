// mulki: command-line front end for stream generation, pretraining, training runs,
// ablations and reports.
#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mulki/error.hpp"
#include "mulki/experiment.hpp"

namespace {

struct Args {
    std::string config;
    std::string stream;
    std::string c0;
    std::string out;
    std::string seeds;
    std::string variant;
    std::string series;
    std::vector<std::string> runs;
};

mulki::RunOptions run_options(const Args& a) {
    mulki::RunOptions o;
    o.config = a.config;
    if (!a.stream.empty()) {
        o.stream = a.stream;
    }
    if (!a.c0.empty()) {
        o.c0 = a.c0;
    }
    o.out = a.out;
    if (!a.seeds.empty()) {
        o.seeds = mulki::parse_seed_list(a.seeds);
    }
    if (!a.variant.empty()) {
        o.variant = a.variant;
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MulKI continual-learning lab"};
    app.require_subcommand(1);
    Args a;

    auto add_config = [&a](CLI::App* cmd) {
        cmd->add_option("--config", a.config, "experiment config (JSON)")->required()->envname("MULKI_CONFIG");
    };
    auto add_out = [&a](CLI::App* cmd, const std::string& what) {
        cmd->add_option("--out", a.out, what)->required()->envname("MULKI_OUT");
    };
    auto add_run_flags = [&](CLI::App* cmd) {
        add_config(cmd);
        cmd->add_option("--stream", a.stream, "stream JSON; generated from the config when omitted")
            ->envname("MULKI_STREAM");
        cmd->add_option("--c0", a.c0, "C0 checkpoint prefix; pretrained from the config when omitted")
            ->envname("MULKI_C0");
        add_out(cmd, "output directory");
        cmd->add_option("--seeds", a.seeds, "comma-separated seeds, overrides the config")->envname("MULKI_SEEDS");
    };

    CLI::App* gen = app.add_subcommand("generate", "write a synthetic task stream");
    add_config(gen);
    add_out(gen, "stream JSON path");

    CLI::App* pre = app.add_subcommand("pretrain", "pretrain C0 on the stream's pool");
    add_config(pre);
    pre->add_option("--stream", a.stream, "stream JSON")->required()->envname("MULKI_STREAM");
    add_out(pre, "checkpoint prefix");

    CLI::App* run = app.add_subcommand("run", "sequential training over the stream");
    add_run_flags(run);
    run->add_option("--variant", a.variant, "variant name, overrides the config")->envname("MULKI_VARIANT");

    CLI::App* abl = app.add_subcommand("ablate", "run every variant of the ablation grid");
    add_run_flags(abl);

    CLI::App* rep = app.add_subcommand("report", "merge run directories into one table");
    rep->add_option("runs", a.runs, "run directories")->required();
    add_out(rep, "table path (.csv or .json)");
    rep->add_option("--series", a.series, "per-task accuracy-over-time CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            mulki::cmd_generate(a.config, a.out);
        } else if (pre->parsed()) {
            mulki::cmd_pretrain(a.config, a.stream, a.out);
        } else if (run->parsed()) {
            mulki::cmd_run(run_options(a));
        } else if (abl->parsed()) {
            mulki::cmd_ablate(run_options(a));
        } else if (rep->parsed()) {
            std::vector<std::filesystem::path> dirs(a.runs.begin(), a.runs.end());
            std::optional<std::filesystem::path> series;
            if (!a.series.empty()) {
                series = a.series;
            }
            mulki::cmd_report(dirs, a.out, series);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "mulki: %s\n", e.what());
        return 2;
    }
    return 0;
}
