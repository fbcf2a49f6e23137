#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "blockwise/common.hpp"

namespace blockwise {

// Minimal JSON-Schema subset validator covering the keywords used by the
// shipped agent I/O schemas: type, properties, required, additionalProperties,
// items, minItems, maxItems, uniqueItems, minimum, maximum, enum, minLength.
// Errors are returned as "<json-pointer>: message" strings.

namespace detail {

inline bool type_matches(const nlohmann::json& doc, const std::string& type) {
    if (type == "object") return doc.is_object();
    if (type == "array") return doc.is_array();
    if (type == "string") return doc.is_string();
    if (type == "integer") return doc.is_number_integer();
    if (type == "number") return doc.is_number();
    if (type == "boolean") return doc.is_boolean();
    if (type == "null") return doc.is_null();
    return false;
}

inline void validate_node(const nlohmann::json& doc, const nlohmann::json& schema,
                          const std::string& path, std::vector<std::string>& errors) {
    if (!schema.is_object()) return;

    if (schema.contains("type")) {
        const auto& t = schema["type"];
        bool ok = false;
        if (t.is_string()) {
            ok = type_matches(doc, t.get<std::string>());
        } else if (t.is_array()) {
            for (const auto& alt : t)
                if (type_matches(doc, alt.get<std::string>())) { ok = true; break; }
        }
        if (!ok) {
            errors.push_back(path + ": expected type " + t.dump() + ", got " +
                             std::string(doc.type_name()));
            return;  // descending further would only cascade
        }
    }

    if (schema.contains("enum")) {
        bool found = false;
        for (const auto& allowed : schema["enum"])
            if (allowed == doc) { found = true; break; }
        if (!found) errors.push_back(path + ": value " + doc.dump() + " not in enum");
    }

    if (doc.is_number()) {
        double v = doc.get<double>();
        if (schema.contains("minimum") && v < schema["minimum"].get<double>())
            errors.push_back(path + ": " + doc.dump() + " below minimum " + schema["minimum"].dump());
        if (schema.contains("maximum") && v > schema["maximum"].get<double>())
            errors.push_back(path + ": " + doc.dump() + " above maximum " + schema["maximum"].dump());
    }

    if (doc.is_string() && schema.contains("minLength")) {
        if (doc.get<std::string>().size() < schema["minLength"].get<size_t>())
            errors.push_back(path + ": string shorter than minLength " + schema["minLength"].dump());
    }

    if (doc.is_array()) {
        if (schema.contains("minItems") && doc.size() < schema["minItems"].get<size_t>())
            errors.push_back(path + ": fewer than minItems " + schema["minItems"].dump());
        if (schema.contains("maxItems") && doc.size() > schema["maxItems"].get<size_t>())
            errors.push_back(path + ": more than maxItems " + schema["maxItems"].dump());
        if (schema.value("uniqueItems", false)) {
            for (size_t i = 0; i < doc.size(); ++i)
                for (size_t j = i + 1; j < doc.size(); ++j)
                    if (doc[i] == doc[j]) {
                        errors.push_back(path + ": duplicate item " + doc[i].dump());
                        i = doc.size();
                        break;
                    }
        }
        if (schema.contains("items")) {
            for (size_t i = 0; i < doc.size(); ++i)
                validate_node(doc[i], schema["items"], path + "/" + std::to_string(i), errors);
        }
    }

    if (doc.is_object()) {
        if (schema.contains("required")) {
            for (const auto& key : schema["required"])
                if (!doc.contains(key.get<std::string>()))
                    errors.push_back(path + ": missing required property '" +
                                     key.get<std::string>() + "'");
        }
        const nlohmann::json* props =
            schema.contains("properties") ? &schema["properties"] : nullptr;
        bool additional = schema.value("additionalProperties", true);
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            if (props && props->contains(it.key())) {
                validate_node(it.value(), (*props)[it.key()], path + "/" + it.key(), errors);
            } else if (!additional) {
                errors.push_back(path + ": unexpected property '" + it.key() + "'");
            }
        }
    }
}

}  // namespace detail

inline std::vector<std::string> validate_against_schema(const nlohmann::json& doc,
                                                        const nlohmann::json& schema) {
    std::vector<std::string> errors;
    detail::validate_node(doc, schema, "", errors);
    return errors;
}

inline bool matches_schema(const nlohmann::json& doc, const nlohmann::json& schema) {
    return validate_against_schema(doc, schema).empty();
}

}  // namespace blockwise
