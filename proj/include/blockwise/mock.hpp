#pragma once

#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "blockwise/assets.hpp"
#include "blockwise/backend.hpp"
#include "blockwise/common.hpp"
#include "blockwise/schema.hpp"

namespace blockwise {

// Deterministic scripted backend used by every test suite and by the CLI's
// --mock flag. Responses are addressed by (role, phase, conversation id,
// call ordinal); the ordinal is a per-(role, phase, conversation) counter
// that increments on every call, which is what makes retry sequences
// scriptable.

/// The canonical phase names. The mock validates scripted responses against
/// the owning phase's schema at load time (unless marked "malformed").
inline std::string schema_id_for_phase(const std::string& phase) {
    if (phase == "score.h1" || phase == "score.sample" || phase == "score.draft" ||
        phase == "score.refine")
        return "schemas/scoring_assessment.v1";
    if (phase == "score.h2") return "schemas/refined_assessment.v1";
    if (phase == "score.h3") return "schemas/judge_consensus.v1";
    if (phase == "rec.h1" || phase == "rec.h2" || phase == "rec.sample" ||
        phase == "rec.draft" || phase == "rec.refine")
        return "schemas/recommendation.v1";
    if (phase == "rec.h3") return "schemas/judge_recommendation.v1";
    throw ConfigError("unknown pipeline phase: " + phase);
}

class MockScript {
public:
    MockScript() = default;

    explicit MockScript(const nlohmann::json& doc) {
        if (doc.contains("default")) global_default_ = doc["default"];
        if (doc.contains("defaults")) {
            for (auto it = doc["defaults"].begin(); it != doc["defaults"].end(); ++it)
                defaults_[it.key()] = it.value();
        }
        if (doc.contains("entries")) {
            for (const auto& e : doc["entries"]) {
                Entry entry;
                entry.response = e.at("response");
                entry.malformed = e.value("malformed", false);
                Key key{e.at("role").get<std::string>(), e.at("phase").get<std::string>(),
                        e.at("conversation").get<std::string>(), e.value("ordinal", 0)};
                entries_[key] = std::move(entry);
            }
        }
    }

    static MockScript from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open mock script: " + path);
        try {
            return MockScript(nlohmann::json::parse(in));
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("mock script " + path + ": " + e.what());
        }
    }

    /// Load-time check: every non-malformed scripted response must satisfy
    /// its phase's schema. Catches fixture rot before a pipeline ever runs.
    void check_against_schemas(const AssetStore& assets) const {
        auto check = [&](const nlohmann::json& doc, const std::string& phase,
                         const std::string& where) {
            auto errors = validate_against_schema(doc, assets.schema(schema_id_for_phase(phase)));
            if (!errors.empty())
                throw FormatError("mock script: " + where + " violates the " + phase +
                                  " schema: " + join(errors, "; "));
        };
        for (const auto& [key, entry] : entries_) {
            if (entry.malformed) continue;
            const auto& [role, phase, conversation, ordinal] = key;
            check(entry.response, phase,
                  "entry (" + role + ", " + phase + ", " + conversation + ", " +
                      std::to_string(ordinal) + ")");
        }
        for (const auto& [key, doc] : defaults_) {
            std::string phase = key.substr(0, key.find('/'));
            check(doc, phase, "default '" + key + "'");
        }
        // The global default cannot be schema-checked: it has no phase.
    }

    /// Lookup, least to most generic: exact entry, "<phase>/<role>" default,
    /// "<phase>" default, global default. Returns nullptr when nothing is
    /// scripted (the backend then synthesizes a schema-valid document).
    const nlohmann::json* lookup(const std::string& role, const std::string& phase,
                                 const std::string& conversation, int ordinal) const {
        auto it = entries_.find(Key{role, phase, conversation, ordinal});
        if (it != entries_.end()) return &it->second.response;
        auto d = defaults_.find(phase + "/" + role);
        if (d != defaults_.end()) return &d->second;
        d = defaults_.find(phase);
        if (d != defaults_.end()) return &d->second;
        if (!global_default_.is_null()) return &global_default_;
        return nullptr;
    }

private:
    using Key = std::tuple<std::string, std::string, std::string, int>;
    struct Entry {
        nlohmann::json response;
        bool malformed = false;
    };

    std::map<Key, Entry> entries_;
    std::map<std::string, nlohmann::json> defaults_;
    nlohmann::json global_default_;

    friend class MockBackend;
};

class MockBackend : public ModelBackend {
public:
    explicit MockBackend(MockScript script, std::string name = "mock",
                         std::string model = "mock-model", bool thinking_supported = true)
        : script_(std::move(script)),
          name_(std::move(name)),
          model_(std::move(model)),
          thinking_supported_(thinking_supported) {}

    GenerationReply generate(const GenerationRequest& request) override {
        int ordinal;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            ordinal = counters_[{request.role, request.phase, request.conversation_id}]++;
            ++total_calls_;
        }
        GenerationReply reply;
        reply.model = model_;
        reply.latency_ms = 0.0;  // deterministic output, golden-file friendly
        const nlohmann::json* scripted =
            script_.lookup(request.role, request.phase, request.conversation_id, ordinal);
        reply.document = scripted ? *scripted : synthesize(request.phase);
        return reply;
    }

    std::string name() const override { return name_; }
    std::string model() const override { return model_; }
    bool supports_thinking() const override { return thinking_supported_; }

    int call_count() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return total_calls_;
    }

    void reset_counters() {
        std::lock_guard<std::mutex> lock(mutex_);
        counters_.clear();
        total_calls_ = 0;
    }

    /// Neutral schema-valid document per phase; the fallback of last resort
    /// that keeps mock_generate total.
    static nlohmann::json synthesize(const std::string& phase) {
        const nlohmann::json scores = {{"grammar", 3}, {"vocabulary", 3}, {"ic", 3}};
        if (phase == "score.h1" || phase == "score.h2" || phase == "score.sample" ||
            phase == "score.draft" || phase == "score.refine")
            return {{"scores", scores},
                    {"rationale", "default mock assessment"},
                    {"advanced_usage", nlohmann::json::array()}};
        if (phase == "score.h3")
            return {{"scores", scores},
                    {"feedback", "default mock feedback"},
                    {"rationale", "default mock consensus"}};
        if (phase == "rec.h1" || phase == "rec.h2" || phase == "rec.sample" ||
            phase == "rec.draft" || phase == "rec.refine")
            return {{"grammar_picks", nlohmann::json::array()},
                    {"vocab_picks", nlohmann::json::array()},
                    {"observations", "default mock observations"},
                    {"ic_feedback", "default mock ic feedback"}};
        if (phase == "rec.h3")
            return {{"grammar_top", nlohmann::json::array()},
                    {"vocab_top", nlohmann::json::array()},
                    {"ic_feedback", "default mock ic feedback"},
                    {"rationale", "default mock rationale"}};
        throw ConfigError("mock: unknown phase '" + phase + "'");
    }

private:
    MockScript script_;
    std::string name_;
    std::string model_;
    bool thinking_supported_;

    mutable std::mutex mutex_;
    std::map<std::tuple<std::string, std::string, std::string>, int> counters_;
    int total_calls_ = 0;
};

}  // namespace blockwise
