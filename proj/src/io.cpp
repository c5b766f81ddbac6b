#include "mulki/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mulki/error.hpp"

namespace mulki {

std::string format_double(double v) {
    if (!std::isfinite(v)) {
        throw NumericError("cannot serialize non-finite value");
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

void dump_string(std::string& out, const std::string& s) {
    // nlohmann's escaping is already canonical; reuse it for a single string.
    out += Json(s).dump();
}

void dump(std::string& out, const Json& j, int indent, int depth) {
    const auto newline = [&](int d) {
        if (indent >= 0) {
            out += '\n';
            out.append(static_cast<std::size_t>(indent * d), ' ');
        }
    };
    switch (j.type()) {
        case Json::value_t::object: {
            if (j.empty()) {
                out += "{}";
                return;
            }
            out += '{';
            bool first = true;
            for (const auto& [key, value] : j.items()) {
                if (!first) {
                    out += ',';
                }
                first = false;
                newline(depth + 1);
                dump_string(out, key);
                out += indent >= 0 ? ": " : ":";
                dump(out, value, indent, depth + 1);
            }
            newline(depth);
            out += '}';
            return;
        }
        case Json::value_t::array: {
            if (j.empty()) {
                out += "[]";
                return;
            }
            // Numeric arrays stay on one line so large matrices remain readable.
            const bool flat = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_primitive(); });
            out += '[';
            bool first = true;
            for (const auto& e : j) {
                if (!first) {
                    out += flat && indent >= 0 ? ", " : ",";
                }
                first = false;
                if (!flat) {
                    newline(depth + 1);
                }
                dump(out, e, indent, depth + 1);
            }
            if (!flat) {
                newline(depth);
            }
            out += ']';
            return;
        }
        case Json::value_t::number_float:
            out += format_double(j.get<double>());
            return;
        default:
            out += j.dump();
            return;
    }
}

}  // namespace

std::string canonical_dump(const Json& j, int indent) {
    std::string out;
    dump(out, j, indent, 0);
    return out;
}

Json parse_json(std::string_view text, const std::string& source) {
    try {
        return Json::parse(text.begin(), text.end());
    } catch (const Json::parse_error& e) {
        const std::size_t pos = std::min<std::size_t>(e.byte, text.size());
        std::size_t line = 1;
        for (std::size_t i = 0; i + 1 < pos; ++i) {
            if (text[i] == '\n') {
                ++line;
            }
        }
        throw ParseError(source + ":" + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void write_f64_le(const std::filesystem::path& path, std::span<const double> values) {
    std::string bytes(values.size() * 8, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (std::size_t b = 0; b < 8; ++b) {
            bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
        }
    }
    write_text_file(path, bytes);
}

std::vector<double> read_f64_le(const std::filesystem::path& path) {
    const std::string bytes = read_text_file(path);
    if (bytes.size() % 8 != 0) {
        throw ParseError(path.string() + ": length " + std::to_string(bytes.size()) + " is not a multiple of 8");
    }
    std::vector<double> values(bytes.size() / 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = 0;
        for (std::size_t b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
        }
        values[i] = std::bit_cast<double>(bits);
    }
    return values;
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, std::string_view suffix) {
    return std::filesystem::path(prefix.string() + std::string(suffix));
}

void save_bundle(const std::filesystem::path& prefix, const Json& manifest, std::span<const double> values) {
    Json m = manifest;
    m["value_count"] = values.size();
    write_text_file(with_suffix(prefix, ".json"), canonical_dump(m, 2) + "\n");
    write_f64_le(with_suffix(prefix, ".bin"), values);
}

FlatBundle load_bundle(const std::filesystem::path& prefix) {
    const auto mpath = with_suffix(prefix, ".json");
    FlatBundle b;
    b.manifest = parse_json(read_text_file(mpath), mpath.string());
    b.values = read_f64_le(with_suffix(prefix, ".bin"));
    if (!b.manifest.contains("value_count") || b.manifest["value_count"].get<std::size_t>() != b.values.size()) {
        throw ParseError(mpath.string() + ": value_count does not match the .bin length");
    }
    return b;
}

ObjectReader::ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) {
        throw ConfigError((path_.empty() ? std::string("config") : path_) + " must be a JSON object");
    }
}

const Json& ObjectReader::child(const std::string& key) {
    seen_.push_back(key);
    if (!j_.contains(key)) {
        fail(key, "is missing");
    }
    return j_.at(key);
}

void ObjectReader::finish() const {
    for (const auto& [key, value] : j_.items()) {
        if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
            throw ConfigError("unknown config key '" + path(key) + "'");
        }
    }
}

void ObjectReader::fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config key '" + path(key) + "' " + what);
}

}  // namespace mulki
