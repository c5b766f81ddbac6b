#include <filesystem>
#include <limits>

#include "doctest.h"
#include "mulki/error.hpp"
#include "mulki/io.hpp"

using namespace mulki;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "mulki_test_io" / name;
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("format_double round-trips exactly") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK_THROWS_AS(format_double(std::numeric_limits<double>::quiet_NaN()), NumericError);
}

TEST_CASE("canonical dump sorts keys and is stable") {
    const Json a = parse_json(R"({"b": 1, "a": [0.1, 2], "c": {"z": true, "y": null}})", "inline");
    const Json b = parse_json(R"({"c": {"y": null, "z": true}, "a": [0.1, 2], "b": 1})", "inline");
    CHECK(canonical_dump(a) == canonical_dump(b));
    CHECK(canonical_dump(a) == R"({"a":[0.10000000000000001,2],"b":1,"c":{"y":null,"z":true}})");
    CHECK(parse_json(canonical_dump(a, 2), "again") == a);
}

TEST_CASE("parse errors name the source and line") {
    try {
        parse_json("{\n  \"a\": 1,\n  oops\n}", "cfg.json");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("cfg.json") != std::string::npos);
        CHECK(msg.find("3") != std::string::npos);
    }
}

TEST_CASE("flat arrays round-trip bit-exactly") {
    const fs::path dir = scratch("bundle");
    const std::vector<double> values{0.1, -0.0, 1e-308, 123456789.123456789};
    save_bundle(dir / "b", Json{{"kind", "test"}}, values);
    const FlatBundle back = load_bundle(dir / "b");
    CHECK(back.values == values);
    CHECK(back.manifest.at("kind") == "test");

    write_f64_le(dir / "b.bin", std::vector<double>{1.0});
    CHECK_THROWS_AS(load_bundle(dir / "b"), ParseError);
}

TEST_CASE("object reader rejects unknown keys with their dotted path") {
    const Json j = parse_json(R"({"known": 3, "extra": 1})", "x");
    ObjectReader r(j, "outer");
    int known = 0;
    r.optional("known", known);
    CHECK(known == 3);
    try {
        r.finish();
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("outer.extra") != std::string::npos);
    }

    ObjectReader typed(j, "");
    std::string s;
    CHECK_THROWS_AS(typed.optional("known", s), ConfigError);
    int missing = 0;
    ObjectReader req(j, "");
    CHECK_THROWS_AS(req.required("absent", missing), ConfigError);
}
