#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "blockwise/common.hpp"
#include "blockwise/schema.hpp"

namespace blockwise {

struct DecodingParams {
    double temperature = 0.0;
    int max_tokens = 1024;

    friend bool operator==(const DecodingParams&, const DecodingParams&) = default;
};

inline void to_json(nlohmann::json& j, const DecodingParams& d) {
    j = {{"temperature", d.temperature}, {"max_tokens", d.max_tokens}};
}

inline void from_json(const nlohmann::json& j, DecodingParams& d) {
    d.temperature = j.value("temperature", 0.0);
    d.max_tokens = j.value("max_tokens", 1024);
}

/// How to reach one model. The credential is an environment-variable NAME;
/// the value is read at call time and never serialized anywhere.
struct BackendRef {
    std::string name;
    std::string kind;  // "http_completion" | "scripted_mock"
    std::string endpoint;
    std::string model;
    std::string credential_env;
    bool supports_thinking = true;
};

inline void to_json(nlohmann::json& j, const BackendRef& b) {
    j = {{"name", b.name},          {"kind", b.kind},
         {"endpoint", b.endpoint},  {"model", b.model},
         {"credential_env", b.credential_env}, {"supports_thinking", b.supports_thinking}};
}

inline void from_json(const nlohmann::json& j, BackendRef& b) {
    b.name = j.at("name").get<std::string>();
    b.kind = j.at("kind").get<std::string>();
    b.endpoint = j.value("endpoint", "");
    b.model = j.value("model", "");
    b.credential_env = j.value("credential_env", "");
    b.supports_thinking = j.value("supports_thinking", true);
    if (b.kind != "http_completion" && b.kind != "scripted_mock")
        throw ConfigError("backend " + b.name + ": unknown kind '" + b.kind + "'");
}

struct GenerationRequest {
    std::string role;
    std::string phase;
    std::string conversation_id;
    std::string prompt;
    std::string prompt_asset_id;
    std::string schema_id;
    DecodingParams decoding;
    bool thinking = false;
};

struct GenerationReply {
    nlohmann::json document;
    std::string model;
    double latency_ms = 0.0;
};

class ModelBackend {
public:
    virtual ~ModelBackend() = default;

    virtual GenerationReply generate(const GenerationRequest& request) = 0;
    virtual std::string name() const = 0;
    virtual std::string model() const = 0;
    virtual bool supports_thinking() const = 0;
};

/// Plain HTTP completion backend. Posts {model, prompt, temperature,
/// max_tokens, thinking} and expects {"content": <json or json-string>}.
class HttpCompletionBackend : public ModelBackend {
public:
    explicit HttpCompletionBackend(BackendRef ref) : ref_(std::move(ref)) {
        if (ref_.endpoint.empty())
            throw ConfigError("backend " + ref_.name + ": http_completion needs an endpoint");
    }

    GenerationReply generate(const GenerationRequest& request) override;

    std::string name() const override { return ref_.name; }
    std::string model() const override { return ref_.model; }
    bool supports_thinking() const override { return ref_.supports_thinking; }

private:
    BackendRef ref_;
};

struct StructuredResult {
    nlohmann::json document;
    std::string model;
    int attempts = 1;
    double latency_ms = 0.0;
    std::vector<std::string> validation_trail;  // one entry per failed attempt
};

/// Schema retries exhausted; carries every raw output for postmortem.
class GenerationError : public Error {
public:
    GenerationError(const std::string& what, std::vector<nlohmann::json> raw)
        : Error(what), raw_outputs(std::move(raw)) {}

    std::vector<nlohmann::json> raw_outputs;
};

/// Generate-and-validate loop: one initial call plus up to retry_limit
/// re-prompts, each re-prompt carrying the validation errors verbatim.
inline StructuredResult generate_structured(ModelBackend& backend,
                                            const GenerationRequest& request,
                                            const nlohmann::json& output_schema, int retry_limit,
                                            const std::string& retry_template = "") {
    StructuredResult result;
    std::vector<nlohmann::json> raws;
    GenerationRequest attempt = request;
    for (int call = 0; call <= retry_limit; ++call) {
        GenerationReply reply = backend.generate(attempt);
        result.latency_ms += reply.latency_ms;
        result.attempts = call + 1;
        auto errors = validate_against_schema(reply.document, output_schema);
        if (errors.empty()) {
            result.document = reply.document;
            result.model = reply.model;
            return result;
        }
        raws.push_back(reply.document);
        std::string error_text = join(errors, "; ");
        result.validation_trail.push_back(error_text);
        std::string suffix = retry_template.empty()
                                 ? "\n\nThe previous response failed validation: " + error_text +
                                       "\nReturn only JSON that satisfies the schema."
                                 : retry_template;
        // Re-prompt = original prompt + the validation failure.
        attempt.prompt = request.prompt + suffix;
    }
    throw GenerationError("structured generation failed after " +
                              std::to_string(retry_limit + 1) + " attempts (" + request.phase +
                              "/" + request.role + "): " + result.validation_trail.back(),
                          std::move(raws));
}

}  // namespace blockwise
