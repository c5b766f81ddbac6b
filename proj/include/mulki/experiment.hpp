#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mulki/hyper.hpp"
#include "mulki/io.hpp"
#include "mulki/runner.hpp"
#include "mulki/taskgen.hpp"

namespace mulki {

struct ModelConfig {
    std::size_t d_tok = 16;
    std::size_t hidden = 64;
    std::size_t embed_dim = 16;
};

// One experiment document. Every field has a default; unknown keys are errors.
struct ExperimentConfig {
    std::string variant = "mulki";
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "runs";
    std::uint64_t stream_seed = 0;
    StreamConfig stream;
    ModelConfig model;
    PretrainConfig pretrain;
    HyperParams hyper;
    // The document as read, echoed into every run directory.
    Json source = Json::object();
};

ExperimentConfig parse_experiment(const Json& doc);
ExperimentConfig load_experiment(const std::filesystem::path& path);
// Fully resolved configuration, defaults included.
Json experiment_to_json(const ExperimentConfig& cfg);

Json hyper_to_json(const HyperParams& h);
HyperParams hyper_from_json(const Json& j, const std::string& path);

// Names of the ablation grid, in report order.
const std::vector<std::string>& variant_names();
// Applies a named variant on top of a base configuration. ConfigError on unknown names.
HyperParams apply_variant(const HyperParams& base, std::string_view variant);

// Command implementations behind the CLI. Each reads its inputs, never
// modifies them, and writes only under the given output path.
struct RunOptions {
    std::filesystem::path config;
    std::optional<std::filesystem::path> stream;  // generated from the config when absent
    std::optional<std::filesystem::path> c0;      // pretrained from the config when absent
    std::filesystem::path out;
    std::optional<std::vector<std::uint64_t>> seeds;
    std::optional<std::string> variant;
};

void cmd_generate(const std::filesystem::path& config, const std::filesystem::path& out);
void cmd_pretrain(const std::filesystem::path& config, const std::filesystem::path& stream,
                  const std::filesystem::path& out_prefix);
void cmd_run(const RunOptions& opts);
void cmd_ablate(const RunOptions& opts);
void cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out,
                const std::optional<std::filesystem::path>& series_out);

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace mulki
