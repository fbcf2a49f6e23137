#include <catch2/catch_amalgamated.hpp>

#include "blockwise/schema.hpp"

using nlohmann::json;
using namespace blockwise;

TEST_CASE("type checks") {
    json schema = {{"type", "object"},
                   {"required", {"name"}},
                   {"properties", {{"name", {{"type", "string"}}}}}};
    CHECK(matches_schema(json{{"name", "x"}}, schema));
    CHECK_FALSE(matches_schema(json{{"name", 3}}, schema));
    CHECK_FALSE(matches_schema(json::array(), schema));

    auto errors = validate_against_schema(json::object(), schema);
    REQUIRE(errors.size() == 1);
    CHECK(errors[0].find("missing required property 'name'") != std::string::npos);
}

TEST_CASE("integer bounds and enums") {
    json schema = {{"type", "integer"}, {"minimum", 0}, {"maximum", 5}};
    CHECK(matches_schema(json(0), schema));
    CHECK(matches_schema(json(5), schema));
    CHECK_FALSE(matches_schema(json(6), schema));
    CHECK_FALSE(matches_schema(json(-1), schema));
    CHECK_FALSE(matches_schema(json(3.5), schema));

    json en = {{"enum", {"learner", "partner"}}};
    CHECK(matches_schema(json("learner"), en));
    CHECK_FALSE(matches_schema(json("teacher"), en));
}

TEST_CASE("arrays: items, bounds, uniqueness") {
    json schema = {{"type", "array"},
                   {"items", {{"type", "string"}}},
                   {"maxItems", 2},
                   {"uniqueItems", true}};
    CHECK(matches_schema(json::array({"a", "b"}), schema));
    CHECK_FALSE(matches_schema(json::array({"a", "b", "c"}), schema));
    CHECK_FALSE(matches_schema(json::array({"a", "a"}), schema));
    CHECK_FALSE(matches_schema(json::array({"a", 1}), schema));
}

TEST_CASE("additionalProperties=false rejects strays") {
    json schema = {{"type", "object"},
                   {"additionalProperties", false},
                   {"properties", {{"a", {{"type", "integer"}}}}}};
    CHECK(matches_schema(json{{"a", 1}}, schema));
    auto errors = validate_against_schema(json{{"a", 1}, {"b", 2}}, schema);
    REQUIRE(errors.size() == 1);
    CHECK(errors[0].find("unexpected property 'b'") != std::string::npos);
}

TEST_CASE("nested error paths carry a locus") {
    json schema = {{"type", "object"},
                   {"properties",
                    {{"scores",
                      {{"type", "object"},
                       {"properties", {{"grammar", {{"type", "integer"}, {"maximum", 5}}}}}}}}}};
    auto errors = validate_against_schema(json{{"scores", {{"grammar", 6}}}}, schema);
    REQUIRE(errors.size() == 1);
    CHECK(errors[0].find("/scores/grammar") != std::string::npos);
}
