#pragma once

// Out-of-line definition for HttpCompletionBackend::generate. Kept in its own
// header so translation units that only ever use mocks (most tests) do not
// compile httplib.

#include "httplib.h"

#include "blockwise/backend.hpp"

namespace blockwise {

inline GenerationReply HttpCompletionBackend::generate(const GenerationRequest& request) {
    nlohmann::json payload = {{"model", ref_.model},
                              {"prompt", request.prompt},
                              {"temperature", request.decoding.temperature},
                              {"max_tokens", request.decoding.max_tokens},
                              {"thinking", request.thinking}};

    httplib::Client client(ref_.endpoint);
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(60, 0);
    httplib::Headers headers;
    if (!ref_.credential_env.empty()) {
        const char* credential = std::getenv(ref_.credential_env.c_str());
        if (!credential)
            throw ConfigError("backend " + ref_.name + ": environment variable " +
                              ref_.credential_env + " is not set");
        headers.emplace("Authorization", std::string("Bearer ") + credential);
    }

    auto start = std::chrono::steady_clock::now();
    auto res = client.Post("/v1/complete", headers, payload.dump(), "application/json");
    auto elapsed = std::chrono::duration<double, std::milli>(
        std::chrono::steady_clock::now() - start);

    if (!res)
        throw BackendError("backend " + ref_.name + ": transport failure contacting " +
                           ref_.endpoint + " (" + httplib::to_string(res.error()) + ")");
    if (res->status != 200)
        throw BackendError("backend " + ref_.name + ": HTTP " + std::to_string(res->status));

    nlohmann::json body;
    try {
        body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
        throw BackendError("backend " + ref_.name + ": non-JSON response: " + e.what());
    }
    if (!body.contains("content"))
        throw BackendError("backend " + ref_.name + ": response lacks 'content'");

    GenerationReply reply;
    reply.model = ref_.model;
    reply.latency_ms = elapsed.count();
    if (body["content"].is_string()) {
        try {
            reply.document = nlohmann::json::parse(body["content"].get<std::string>());
        } catch (const nlohmann::json::parse_error&) {
            // Not JSON; surface the raw text so the schema retry loop can
            // report it back to the model.
            reply.document = body["content"];
        }
    } else {
        reply.document = body["content"];
    }
    return reply;
}

}  // namespace blockwise
