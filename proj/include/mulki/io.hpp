#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mulki {

using Json = nlohmann::json;

// "%.17g"; throws on non-finite values, which JSON cannot carry.
std::string format_double(double v);

// Canonical JSON text: sorted keys, doubles as "%.17g", integers verbatim.
// indent < 0 gives the compact single-line form.
std::string canonical_dump(const Json& j, int indent = -1);

// Parses JSON; syntax errors become ParseError naming the source and line.
Json parse_json(std::string_view text, const std::string& source);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Raw little-endian float64 arrays.
void write_f64_le(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_f64_le(const std::filesystem::path& path);

// A manifest "<prefix>.json" beside a flat array "<prefix>.bin". The manifest
// records the array length so truncated files are rejected on load.
struct FlatBundle {
    Json manifest;
    std::vector<double> values;
};

void save_bundle(const std::filesystem::path& prefix, const Json& manifest, std::span<const double> values);
FlatBundle load_bundle(const std::filesystem::path& prefix);

// Reads fields of one JSON object and rejects keys nobody asked for.
// Errors name the dotted path of the offending field.
class ObjectReader {
public:
    ObjectReader(const Json& j, std::string path);

    template <class T>
    void optional(const std::string& key, T& dst) {
        seen_.push_back(key);
        if (!j_.contains(key)) {
            return;
        }
        try {
            dst = j_.at(key).get<T>();
        } catch (const Json::exception&) {
            fail(key, "has the wrong type");
        }
    }

    template <class T>
    void required(const std::string& key, T& dst) {
        if (!j_.contains(key)) {
            fail(key, "is missing");
        }
        optional(key, dst);
    }

    const Json& child(const std::string& key);
    bool has(const std::string& key) const { return j_.contains(key); }
    std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    // Throws ConfigError naming the first unknown key.
    void finish() const;

    [[noreturn]] void fail(const std::string& key, const std::string& what) const;

private:
    const Json& j_;
    std::string path_;
    std::vector<std::string> seen_;
};

std::filesystem::path with_suffix(const std::filesystem::path& prefix, std::string_view suffix);

}  // namespace mulki
