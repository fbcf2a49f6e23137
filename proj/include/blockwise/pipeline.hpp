#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "blockwise/assets.hpp"
#include "blockwise/backend.hpp"
#include "blockwise/common.hpp"
#include "blockwise/conversation.hpp"
#include "blockwise/curriculum.hpp"
#include "blockwise/schema.hpp"

namespace blockwise {

// The four conversation-assessment methods, each a two-stage pipeline
// (scoring, then recommendation) over the ModelBackend interface:
//
//   SelfConsistency  N independent analyses, aggregated per dimension
//   SelfRefine       one analysis, iteratively refined, last wins
//   HomoMAD          H1 independent panel -> H2 critic-led debate -> H3 judge,
//                    all roles on one backend
//   HeteroMAD        same three phases, specialists on different backends
//
// The critic composes its digest locally (no backend call), so a retry-free
// MAD stage makes exactly 7 backend calls: 3 + 3 + 1.

// ---------------------------------------------------------------------------
// Roles and phases
// ---------------------------------------------------------------------------

enum class AgentRole {
    strict_grammarian,
    lexical_auditor,
    pragmatic_communicator,
    grammar_expert,
    vocabulary_expert,
    conversation_expert,
    critic,
    judge,
    analyst,  // the non-role-specialized worker used by SelfConsistency/SelfRefine
};

inline std::string role_name(AgentRole r) {
    switch (r) {
        case AgentRole::strict_grammarian: return "StrictGrammarian";
        case AgentRole::lexical_auditor: return "LexicalAuditor";
        case AgentRole::pragmatic_communicator: return "PragmaticCommunicator";
        case AgentRole::grammar_expert: return "GrammarExpert";
        case AgentRole::vocabulary_expert: return "VocabularyExpert";
        case AgentRole::conversation_expert: return "ConversationExpert";
        case AgentRole::critic: return "Critic";
        case AgentRole::judge: return "Judge";
        case AgentRole::analyst: return "Analyst";
    }
    return "?";
}

inline AgentRole role_from_name(const std::string& s) {
    for (AgentRole r : {AgentRole::strict_grammarian, AgentRole::lexical_auditor,
                        AgentRole::pragmatic_communicator, AgentRole::grammar_expert,
                        AgentRole::vocabulary_expert, AgentRole::conversation_expert,
                        AgentRole::critic, AgentRole::judge, AgentRole::analyst})
        if (role_name(r) == s) return r;
    throw ConfigError("unknown agent role: " + s);
}

inline const std::vector<AgentRole>& scoring_specialists() {
    static const std::vector<AgentRole> roles = {AgentRole::strict_grammarian,
                                                 AgentRole::lexical_auditor,
                                                 AgentRole::pragmatic_communicator};
    return roles;
}

inline const std::vector<AgentRole>& recommendation_specialists() {
    static const std::vector<AgentRole> roles = {AgentRole::grammar_expert,
                                                 AgentRole::vocabulary_expert,
                                                 AgentRole::conversation_expert};
    return roles;
}

namespace phase {
inline constexpr const char* score_h1 = "score.h1";
inline constexpr const char* score_h2 = "score.h2";
inline constexpr const char* score_h3 = "score.h3";
inline constexpr const char* score_sample = "score.sample";
inline constexpr const char* score_draft = "score.draft";
inline constexpr const char* score_refine = "score.refine";
inline constexpr const char* rec_h1 = "rec.h1";
inline constexpr const char* rec_h2 = "rec.h2";
inline constexpr const char* rec_h3 = "rec.h3";
inline constexpr const char* rec_sample = "rec.sample";
inline constexpr const char* rec_draft = "rec.draft";
inline constexpr const char* rec_refine = "rec.refine";
}  // namespace phase

// ---------------------------------------------------------------------------
// Agent outputs and the phase log
// ---------------------------------------------------------------------------

struct AgentAssessment {
    AgentRole role;
    DimensionScores scores;
    std::string rationale;
    std::set<std::string> advanced_usage;  // catalog ids beyond exposure

    friend bool operator==(const AgentAssessment&, const AgentAssessment&) = default;
};

inline void to_json(nlohmann::json& j, const AgentAssessment& a) {
    j = {{"role", role_name(a.role)},
         {"scores", a.scores},
         {"rationale", a.rationale},
         {"advanced_usage", a.advanced_usage}};
}

struct AgentRecommendation {
    AgentRole role;
    std::vector<GrammarSkillId> grammar_picks;  // ranked, <= 2
    std::vector<VocabTopicId> vocab_picks;      // ranked, <= 2
    std::string observations;
    std::string ic_feedback;

    friend bool operator==(const AgentRecommendation&, const AgentRecommendation&) = default;
};

inline void to_json(nlohmann::json& j, const AgentRecommendation& r) {
    j = {{"role", role_name(r.role)},
         {"grammar_picks", r.grammar_picks},
         {"vocab_picks", r.vocab_picks},
         {"observations", r.observations},
         {"ic_feedback", r.ic_feedback}};
}

/// One record per agent message. Latency is the only wall-clock field and is
/// 0 for mocks, so seeded runs serialize byte-identically.
struct PhaseLogEntry {
    std::string phase;
    std::string role;
    std::string backend;  // empty for locally composed messages (the critic)
    std::string model;
    std::string prompt_asset_id;
    std::string prompt;
    nlohmann::json response;
    int attempts = 0;  // backend calls consumed by this entry (0 for the critic)
    double latency_ms = 0.0;
    bool thinking = false;
    std::vector<std::string> peer_order;  // H2: the shuffled peer presentation order
    std::vector<std::string> warnings;
};

inline void to_json(nlohmann::json& j, const PhaseLogEntry& e) {
    j = {{"phase", e.phase},       {"role", e.role},
         {"backend", e.backend},   {"model", e.model},
         {"prompt_asset_id", e.prompt_asset_id},
         {"prompt", e.prompt},     {"response", e.response},
         {"attempts", e.attempts}, {"latency_ms", e.latency_ms},
         {"thinking", e.thinking}};
    if (!e.peer_order.empty()) j["peer_order"] = e.peer_order;
    if (!e.warnings.empty()) j["warnings"] = e.warnings;
}

struct PhaseLog {
    std::vector<PhaseLogEntry> entries;
    nlohmann::json context = nlohmann::json::object();

    int backend_calls() const {
        int n = 0;
        for (const auto& e : entries) n += e.attempts;
        return n;
    }
    void warn(const std::string& message) {
        if (!context.contains("warnings")) context["warnings"] = nlohmann::json::array();
        context["warnings"].push_back(message);
    }
};

inline void to_json(nlohmann::json& j, const PhaseLog& log) {
    j = {{"entries", log.entries}, {"context", log.context}};
}

struct ScoreResult {
    DimensionScores consensus;
    std::string feedback;
    std::string rationale;
    PhaseLog phase_log;
    std::string method_tag;
};

inline void to_json(nlohmann::json& j, const ScoreResult& r) {
    j = {{"consensus", r.consensus},
         {"feedback", r.feedback},
         {"rationale", r.rationale},
         {"method_tag", r.method_tag},
         {"phase_log", r.phase_log}};
}

struct Recommendation {
    std::vector<GrammarSkillId> grammar_top;  // ranked, <= 2
    std::vector<VocabTopicId> vocab_top;      // ranked, <= 2
    std::string ic_feedback;
    std::string rationale;
    PhaseLog phase_log;
};

inline void to_json(nlohmann::json& j, const Recommendation& r) {
    j = {{"grammar_top", r.grammar_top},
         {"vocab_top", r.vocab_top},
         {"ic_feedback", r.ic_feedback},
         {"rationale", r.rationale},
         {"phase_log", r.phase_log}};
}

/// A pipeline phase failed; whatever was logged before the failure rides
/// along for postmortem.
class PipelineError : public Error {
public:
    PipelineError(const std::string& what, PhaseLog log)
        : Error(what), partial_log(std::move(log)) {}

    PhaseLog partial_log;
};

// ---------------------------------------------------------------------------
// Method configuration
// ---------------------------------------------------------------------------

enum class MethodKind { self_consistency, self_refine, homo_mad, hetero_mad };

inline std::string method_kind_name(MethodKind k) {
    switch (k) {
        case MethodKind::self_consistency: return "self_consistency";
        case MethodKind::self_refine: return "self_refine";
        case MethodKind::homo_mad: return "homo_mad";
        case MethodKind::hetero_mad: return "hetero_mad";
    }
    return "?";
}

inline MethodKind method_kind_from_name(const std::string& s) {
    for (MethodKind k : {MethodKind::self_consistency, MethodKind::self_refine,
                         MethodKind::homo_mad, MethodKind::hetero_mad})
        if (method_kind_name(k) == s) return k;
    throw ConfigError("unknown method kind: " + s);
}

struct MethodConfig {
    MethodKind kind = MethodKind::hetero_mad;
    std::string name;  // report label; derived from kind/thinking when empty
    bool thinking = false;
    int samples = 3;            // SelfConsistency
    int refine_iterations = 2;  // SelfRefine
    int retry_limit = 2;
    std::map<std::string, std::string> bindings;  // role -> backend name
    std::string backend;                          // catch-all binding
    DecodingParams decoding;
    std::uint64_t seed = 0;
    bool skip_debate_on_unanimity = false;  // cost switch; the standard flow always debates
    std::string rubric_asset = "rubric/cefr_a2_spoken_interaction.v1";

    std::string label() const {
        if (!name.empty()) return name;
        std::string base;
        switch (kind) {
            case MethodKind::self_consistency: base = "SelfConsistency"; break;
            case MethodKind::self_refine: base = "SelfRefine"; break;
            case MethodKind::homo_mad: base = "HomoMAD"; break;
            case MethodKind::hetero_mad: base = "HeteroMAD"; break;
        }
        if (kind == MethodKind::self_consistency || kind == MethodKind::self_refine)
            base += thinking ? "-WT" : "-NT";
        return base;
    }

    std::string binding_for(const std::string& role) const {
        auto it = bindings.find(role);
        if (it != bindings.end()) return it->second;
        if (!backend.empty()) return backend;
        throw ConfigError("method " + label() + ": no backend bound for role " + role);
    }
};

inline void to_json(nlohmann::json& j, const MethodConfig& c) {
    j = {{"kind", method_kind_name(c.kind)},
         {"name", c.name},
         {"thinking", c.thinking},
         {"samples", c.samples},
         {"refine_iterations", c.refine_iterations},
         {"retry_limit", c.retry_limit},
         {"bindings", c.bindings},
         {"backend", c.backend},
         {"decoding", c.decoding},
         {"seed", c.seed},
         {"skip_debate_on_unanimity", c.skip_debate_on_unanimity},
         {"rubric_asset", c.rubric_asset}};
}

inline void from_json(const nlohmann::json& j, MethodConfig& c) {
    c.kind = method_kind_from_name(j.at("kind").get<std::string>());
    c.name = j.value("name", "");
    c.thinking = j.value("thinking", false);
    c.samples = j.value("samples", 3);
    c.refine_iterations = j.value("refine_iterations", 2);
    c.retry_limit = j.value("retry_limit", 2);
    if (j.contains("bindings"))
        c.bindings = j["bindings"].get<std::map<std::string, std::string>>();
    c.backend = j.value("backend", "");
    if (j.contains("decoding")) c.decoding = j["decoding"].get<DecodingParams>();
    c.seed = j.value("seed", std::uint64_t{0});
    c.skip_debate_on_unanimity = j.value("skip_debate_on_unanimity", false);
    c.rubric_asset = j.value("rubric_asset", c.rubric_asset);
}

/// Structural violations throw ConfigError; soft issues come back as
/// warnings. A HeteroMAD whose specialists share one backend is a warning,
/// not an error: it degenerates to HomoMAD but must still run (that
/// equivalence is itself a tested property).
inline std::vector<std::string> validate_method_config(const MethodConfig& c) {
    std::vector<std::string> warnings;
    if (c.samples < 1) throw ConfigError("samples must be >= 1");
    if (c.refine_iterations < 0) throw ConfigError("refine_iterations must be >= 0");
    if (c.retry_limit < 0) throw ConfigError("retry_limit must be >= 0");

    if (c.kind == MethodKind::homo_mad || c.kind == MethodKind::hetero_mad) {
        std::set<std::string> all_bindings;
        std::set<std::string> specialist_bindings;
        for (AgentRole r : scoring_specialists()) {
            std::string b = c.binding_for(role_name(r));
            all_bindings.insert(b);
            specialist_bindings.insert(b);
        }
        for (AgentRole r : recommendation_specialists())
            all_bindings.insert(c.binding_for(role_name(r)));
        all_bindings.insert(c.binding_for(role_name(AgentRole::judge)));

        if (c.kind == MethodKind::homo_mad && all_bindings.size() != 1)
            throw ConfigError("homo_mad requires all roles bound to one backend; got " +
                              join(all_bindings, ", "));
        if (c.kind == MethodKind::hetero_mad && specialist_bindings.size() < 2)
            warnings.push_back(
                "hetero_mad specialists all share one backend; configuration degenerates to "
                "homo_mad");
    } else {
        c.binding_for(role_name(AgentRole::analyst));  // throws when unbound
    }
    if (c.kind == MethodKind::self_refine && c.refine_iterations == 0)
        warnings.push_back("self_refine with 0 refinement passes is a single draft");
    return warnings;
}

class BackendSet {
public:
    void add(std::shared_ptr<ModelBackend> backend) {
        backends_[backend->name()] = std::move(backend);
    }

    ModelBackend& at(const std::string& name) const {
        auto it = backends_.find(name);
        if (it == backends_.end()) throw ConfigError("no backend named '" + name + "'");
        return *it->second;
    }

    bool has(const std::string& name) const { return backends_.count(name) > 0; }
    size_t size() const { return backends_.size(); }

private:
    std::map<std::string, std::shared_ptr<ModelBackend>> backends_;
};

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

class PipelineEngine {
public:
    PipelineEngine(const Curriculum& curriculum, const AssetStore& assets,
                   const BackendSet& backends)
        : curriculum_(&curriculum), assets_(&assets), backends_(&backends) {}

    // -- scoring stage ------------------------------------------------------

    std::vector<AgentAssessment> score_h1(const Conversation& conv, const ExposureSet& exposure,
                                          const std::string& rubric_asset_id,
                                          const MethodConfig& config, PhaseLog& log) const {
        std::vector<AgentAssessment> out;
        for (AgentRole role : scoring_specialists()) {
            std::string asset = "prompts/score_h1." + snake(role) + ".v1";
            std::map<std::string, std::string> vars = common_vars(conv, exposure);
            vars["rubric"] = assets_->text(rubric_asset_id);
            vars["schema"] = schema_text("schemas/scoring_assessment.v1");
            auto [doc, entry] =
                call(role, phase::score_h1, conv, asset, render_template(assets_->text(asset), vars),
                     "schemas/scoring_assessment.v1", config, log);
            out.push_back(parse_assessment(role, doc, exposure, entry, log));
        }
        return out;
    }

    std::vector<AgentAssessment> score_h2(const std::vector<AgentAssessment>& initial,
                                          const Conversation& conv, const ExposureSet& exposure,
                                          const MethodConfig& config, PhaseLog& log) const {
        if (initial.size() != 3) throw DomainError("score_h2 expects exactly 3 assessments");

        if (config.skip_debate_on_unanimity && unanimous(initial)) {
            log.context["debate_skipped"] = "unanimous initial assessments";
            return initial;
        }

        nlohmann::json digest = critic_digest_scores(initial);
        log.entries.push_back(critic_entry(phase::score_h2, digest));

        std::vector<AgentAssessment> refined;
        for (size_t idx = 0; idx < initial.size(); ++idx) {
            const AgentAssessment& own = initial[idx];
            std::vector<AgentAssessment> peers;
            for (size_t p = 0; p < initial.size(); ++p)
                if (p != idx) peers.push_back(initial[p]);
            deterministic_shuffle(peers, derive_seed(config.seed, conv.id, phase::score_h2,
                                                     role_name(own.role)));

            std::map<std::string, std::string> vars;
            vars["role"] = role_name(own.role);
            vars["own"] = nlohmann::json(own).dump(2);
            vars["digest"] = digest.dump(2);
            vars["peers"] = nlohmann::json(peers).dump(2);
            vars["schema"] = schema_text("schemas/refined_assessment.v1");

            std::string asset = "prompts/score_h2.debate.v1";
            auto [doc, entry] = call(own.role, phase::score_h2, conv, asset,
                                     render_template(assets_->text(asset), vars),
                                     "schemas/refined_assessment.v1", config, log);
            log.entries[entry].peer_order = role_names(peers);
            // H2 revisions may flag new advanced usage; filtered like H1.
            refined.push_back(parse_assessment(own.role, doc, exposure, entry, log));
        }
        return refined;
    }

    ScoreResult score_h3(const std::vector<AgentAssessment>& initial,
                         const std::vector<AgentAssessment>& refined, const Conversation& conv,
                         const MethodConfig& config, PhaseLog log) const {
        std::map<std::string, std::string> vars;
        vars["initial"] = nlohmann::json(initial).dump(2);
        vars["refined"] = nlohmann::json(refined).dump(2);
        vars["schema"] = schema_text("schemas/judge_consensus.v1");

        std::string asset = "prompts/score_h3.judge.v1";
        auto [doc, entry] =
            call(AgentRole::judge, phase::score_h3, conv, asset,
                 render_template(assets_->text(asset), vars), "schemas/judge_consensus.v1",
                 config, log);
        (void)entry;

        ScoreResult result;
        result.consensus = doc.at("scores").get<DimensionScores>();
        result.feedback = doc.at("feedback").get<std::string>();
        result.rationale = doc.at("rationale").get<std::string>();
        result.method_tag = config.label();
        result.phase_log = std::move(log);
        return result;
    }

    ScoreResult run_scoring(const Conversation& conv, const ExposureSet& exposure,
                            const MethodConfig& config) const {
        conv.check();
        PhaseLog log = fresh_log(conv, config, "scoring");
        check_thinking_support(config);
        try {
            switch (config.kind) {
                case MethodKind::homo_mad:
                case MethodKind::hetero_mad: {
                    auto initial = score_h1(conv, exposure, config.rubric_asset, config, log);
                    auto refined = score_h2(initial, conv, exposure, config, log);
                    return score_h3(initial, refined, conv, config, std::move(log));
                }
                case MethodKind::self_consistency:
                    return score_self_consistency(conv, exposure, config, std::move(log));
                case MethodKind::self_refine:
                    return score_self_refine(conv, exposure, config, std::move(log));
            }
        } catch (const PipelineError&) {
            throw;
        } catch (const Error& e) {
            throw PipelineError(std::string("scoring stage failed: ") + e.what(), std::move(log));
        }
        throw ConfigError("unreachable method kind");
    }

    // -- recommendation stage -----------------------------------------------

    std::vector<AgentRecommendation> recommend_h1(const Conversation& conv,
                                                  const ExposureSet& exposure,
                                                  const MethodConfig& config,
                                                  PhaseLog& log) const {
        std::vector<AgentRecommendation> out;
        for (AgentRole role : recommendation_specialists()) {
            std::string asset = "prompts/rec_h1." + snake(role) + ".v1";
            std::map<std::string, std::string> vars = common_vars(conv, exposure);
            add_catalog_vars(vars);
            vars["schema"] = schema_text("schemas/recommendation.v1");
            auto [doc, entry] =
                call(role, phase::rec_h1, conv, asset, render_template(assets_->text(asset), vars),
                     "schemas/recommendation.v1", config, log);
            out.push_back(parse_recommendation(role, doc, phase::rec_h1, conv, config, entry, log));
        }
        return out;
    }

    std::vector<AgentRecommendation> recommend_h2(const std::vector<AgentRecommendation>& initial,
                                                  const ScoreResult& score_result,
                                                  const Conversation& conv,
                                                  const MethodConfig& config,
                                                  PhaseLog& log) const {
        if (initial.size() != 3) throw DomainError("recommend_h2 expects exactly 3 recommendations");

        nlohmann::json digest = critic_digest_recs(initial);
        log.entries.push_back(critic_entry(phase::rec_h2, digest));

        std::vector<AgentRecommendation> refined;
        for (size_t idx = 0; idx < initial.size(); ++idx) {
            const AgentRecommendation& own = initial[idx];
            std::vector<AgentRecommendation> peers;
            for (size_t p = 0; p < initial.size(); ++p)
                if (p != idx) peers.push_back(initial[p]);
            deterministic_shuffle(peers, derive_seed(config.seed, conv.id, phase::rec_h2,
                                                     role_name(own.role)));

            std::map<std::string, std::string> vars;
            vars["role"] = role_name(own.role);
            vars["own"] = nlohmann::json(own).dump(2);
            vars["digest"] = digest.dump(2);
            vars["peers"] = nlohmann::json(peers).dump(2);
            // The one place scoring output feeds the recommendation pipeline.
            vars["score_rationale"] = score_result.rationale;
            vars["schema"] = schema_text("schemas/recommendation.v1");

            std::string asset = "prompts/rec_h2.debate.v1";
            auto [doc, entry] = call(own.role, phase::rec_h2, conv, asset,
                                     render_template(assets_->text(asset), vars),
                                     "schemas/recommendation.v1", config, log);
            log.entries[entry].peer_order = role_names(peers);
            refined.push_back(
                parse_recommendation(own.role, doc, phase::rec_h2, conv, config, entry, log));
        }
        return refined;
    }

    Recommendation recommend_h3(const std::vector<AgentRecommendation>& initial,
                                const std::vector<AgentRecommendation>& refined,
                                const Conversation& conv, const MethodConfig& config,
                                PhaseLog log) const {
        std::vector<std::string> grammar_candidates = pick_union(initial, refined, true);
        std::vector<std::string> vocab_candidates = pick_union(initial, refined, false);

        std::map<std::string, std::string> vars;
        vars["initial"] = nlohmann::json(initial).dump(2);
        vars["refined"] = nlohmann::json(refined).dump(2);
        vars["candidates_grammar"] = join(grammar_candidates, ", ");
        vars["candidates_vocab"] = join(vocab_candidates, ", ");
        vars["schema"] = schema_text("schemas/judge_recommendation.v1");

        std::string asset = "prompts/rec_h3.judge.v1";
        std::string prompt = render_template(assets_->text(asset), vars);
        const nlohmann::json& schema = assets_->schema("schemas/judge_recommendation.v1");
        ModelBackend& backend = backends_->at(config.binding_for(role_name(AgentRole::judge)));

        // Joint schema + closure loop: the judge may only rank ids the agents
        // actually proposed in either round.
        GenerationRequest request;
        request.role = role_name(AgentRole::judge);
        request.phase = phase::rec_h3;
        request.conversation_id = conv.id;
        request.prompt = prompt;
        request.prompt_asset_id = asset;
        request.schema_id = "schemas/judge_recommendation.v1";
        request.decoding = config.decoding;
        request.thinking = config.thinking;

        PhaseLogEntry entry;
        entry.phase = request.phase;
        entry.role = request.role;
        entry.backend = backend.name();
        entry.prompt_asset_id = asset;
        entry.prompt = prompt;
        entry.thinking = config.thinking;

        std::vector<nlohmann::json> raws;
        GenerationRequest attempt = request;
        for (int call_n = 0; call_n <= config.retry_limit; ++call_n) {
            GenerationReply reply = backend.generate(attempt);
            entry.attempts = call_n + 1;
            entry.latency_ms += reply.latency_ms;
            entry.model = reply.model;

            std::vector<std::string> errors = validate_against_schema(reply.document, schema);
            if (errors.empty()) {
                auto outside = [](const std::vector<std::string>& ids,
                                  const std::vector<std::string>& allowed) {
                    std::vector<std::string> bad;
                    for (const auto& id : ids)
                        if (std::find(allowed.begin(), allowed.end(), id) == allowed.end())
                            bad.push_back(id);
                    return bad;
                };
                auto g = reply.document.at("grammar_top").get<std::vector<std::string>>();
                auto v = reply.document.at("vocab_top").get<std::vector<std::string>>();
                for (const auto& id : outside(g, grammar_candidates))
                    errors.push_back("grammar_top id '" + id + "' was not proposed by any agent");
                for (const auto& id : outside(v, vocab_candidates))
                    errors.push_back("vocab_top id '" + id + "' was not proposed by any agent");
            }
            if (errors.empty()) {
                entry.response = reply.document;
                log.entries.push_back(entry);

                Recommendation rec;
                rec.grammar_top = dedupe(reply.document.at("grammar_top").get<std::vector<std::string>>());
                rec.vocab_top = dedupe(reply.document.at("vocab_top").get<std::vector<std::string>>());
                rec.ic_feedback = reply.document.at("ic_feedback").get<std::string>();
                rec.rationale = reply.document.at("rationale").get<std::string>();
                rec.phase_log = std::move(log);
                return rec;
            }
            raws.push_back(reply.document);
            entry.warnings.push_back("attempt " + std::to_string(call_n + 1) +
                                     " rejected: " + join(errors, "; "));
            attempt.prompt = prompt + "\n\nThe previous response was rejected: " +
                             join(errors, "; ") +
                             "\nReturn only JSON that satisfies the schema and draws ids from "
                             "the candidate lists.";
        }
        entry.response = raws.empty() ? nlohmann::json() : raws.back();
        log.entries.push_back(entry);
        throw PipelineError("recommendation judge failed after " +
                                std::to_string(config.retry_limit + 1) + " attempts",
                            std::move(log));
    }

    Recommendation run_recommendation(const Conversation& conv, const ExposureSet& exposure,
                                      const ScoreResult& score_result,
                                      const MethodConfig& config) const {
        conv.check();
        PhaseLog log = fresh_log(conv, config, "recommendation");
        check_thinking_support(config);
        try {
            switch (config.kind) {
                case MethodKind::homo_mad:
                case MethodKind::hetero_mad: {
                    auto initial = recommend_h1(conv, exposure, config, log);
                    auto refined = recommend_h2(initial, score_result, conv, config, log);
                    return recommend_h3(initial, refined, conv, config, std::move(log));
                }
                case MethodKind::self_consistency:
                    return recommend_self_consistency(conv, exposure, score_result, config,
                                                      std::move(log));
                case MethodKind::self_refine:
                    return recommend_self_refine(conv, exposure, score_result, config,
                                                 std::move(log));
            }
        } catch (const PipelineError&) {
            throw;
        } catch (const Error& e) {
            throw PipelineError(std::string("recommendation stage failed: ") + e.what(),
                                std::move(log));
        }
        throw ConfigError("unreachable method kind");
    }

    /// Union of advanced_usage across every assessment message in the phase
    /// log, minus exposure. Feeds the mastery module's DBA trigger.
    std::set<std::string> detect_advanced_usage(const ScoreResult& result,
                                                const ExposureSet& exposure) const {
        std::set<std::string> out;
        for (const auto& entry : result.phase_log.entries) {
            if (!entry.response.is_object() || !entry.response.contains("advanced_usage"))
                continue;
            for (const auto& id_json : entry.response["advanced_usage"]) {
                std::string id = id_json.get<std::string>();
                if (curriculum_->has_catalog_id(id) && !exposure.contains_id(id)) out.insert(id);
            }
        }
        return out;
    }

    const Curriculum& curriculum() const { return *curriculum_; }

private:
    const Curriculum* curriculum_;
    const AssetStore* assets_;
    const BackendSet* backends_;

    static std::string snake(AgentRole role) {
        std::string name = role_name(role);
        std::string out;
        for (char c : name) {
            if (std::isupper(static_cast<unsigned char>(c))) {
                if (!out.empty()) out.push_back('_');
                out.push_back(static_cast<char>(std::tolower(c)));
            } else {
                out.push_back(c);
            }
        }
        return out;
    }

    template <typename T>
    static std::vector<std::string> role_names(const std::vector<T>& xs) {
        std::vector<std::string> out;
        for (const auto& x : xs) out.push_back(role_name(x.role));
        return out;
    }

    static std::vector<std::string> dedupe(const std::vector<std::string>& ids) {
        std::vector<std::string> out;
        for (const auto& id : ids)
            if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
        return out;
    }

    static bool unanimous(const std::vector<AgentAssessment>& xs) {
        for (size_t i = 1; i < xs.size(); ++i)
            if (!(xs[i].scores == xs[0].scores)) return false;
        return true;
    }

    std::string schema_text(const std::string& id) const { return assets_->schema(id).dump(2); }

    PhaseLog fresh_log(const Conversation& conv, const MethodConfig& config,
                       const std::string& stage) const {
        PhaseLog log;
        log.context["stage"] = stage;
        log.context["method"] = method_kind_name(config.kind);
        log.context["label"] = config.label();
        log.context["thinking"] = config.thinking;
        log.context["seed"] = config.seed;
        log.context["conversation"] = conv.id;
        auto warnings = validate_method_config(config);
        for (const auto& w : warnings) log.warn(w);
        return log;
    }

    void check_thinking_support(const MethodConfig& config) const {
        if (!config.thinking) return;
        std::set<std::string> names;
        if (config.kind == MethodKind::homo_mad || config.kind == MethodKind::hetero_mad) {
            for (AgentRole r : scoring_specialists()) names.insert(config.binding_for(role_name(r)));
            for (AgentRole r : recommendation_specialists())
                names.insert(config.binding_for(role_name(r)));
            names.insert(config.binding_for(role_name(AgentRole::judge)));
        } else {
            names.insert(config.binding_for(role_name(AgentRole::analyst)));
        }
        for (const auto& n : names)
            if (!backends_->at(n).supports_thinking())
                throw ConfigError("backend '" + n +
                                  "' does not support thinking mode; thinking=true rejected");
    }

    std::map<std::string, std::string> common_vars(const Conversation& conv,
                                                   const ExposureSet& exposure) const {
        std::map<std::string, std::string> vars;
        vars["conversation"] = conv.transcript();
        vars["exposure_skills"] = exposure.skills.empty() ? "(none)" : join(exposure.skills, ", ");
        vars["exposure_vocab"] = exposure.vocab.empty() ? "(none)" : join(exposure.vocab, ", ");
        vars["exposure_topics"] = exposure.topics.empty() ? "(none)" : join(exposure.topics, ", ");
        return vars;
    }

    void add_catalog_vars(std::map<std::string, std::string>& vars) const {
        std::vector<std::string> g, v;
        for (const auto& [id, entry] : curriculum_->skills)
            g.push_back("- " + id + (entry.name.empty() ? "" : " (" + entry.name + ")"));
        for (const auto& [id, topic] : curriculum_->vocab_topics)
            v.push_back("- " + id + (topic.name.empty() ? "" : " (" + topic.name + ")"));
        vars["catalog_grammar"] = join(g, "\n");
        vars["catalog_vocab"] = join(v, "\n");
    }

    /// One schema-validated backend call; appends a log entry and returns
    /// (document, entry index).
    std::pair<nlohmann::json, size_t> call(AgentRole role, const std::string& phase_name,
                                           const Conversation& conv, const std::string& asset,
                                           const std::string& prompt,
                                           const std::string& schema_id,
                                           const MethodConfig& config, PhaseLog& log) const {
        ModelBackend& backend = backends_->at(config.binding_for(role_name(role)));
        GenerationRequest request;
        request.role = role_name(role);
        request.phase = phase_name;
        request.conversation_id = conv.id;
        request.prompt = prompt;
        request.prompt_asset_id = asset;
        request.schema_id = schema_id;
        request.decoding = config.decoding;
        request.thinking = config.thinking;

        PhaseLogEntry entry;
        entry.phase = phase_name;
        entry.role = request.role;
        entry.backend = backend.name();
        entry.prompt_asset_id = asset;
        entry.prompt = prompt;
        entry.thinking = config.thinking;

        try {
            StructuredResult res = generate_structured(backend, request, assets_->schema(schema_id),
                                                       config.retry_limit);
            entry.model = res.model;
            entry.attempts = res.attempts;
            entry.latency_ms = res.latency_ms;
            entry.response = res.document;
            for (size_t k = 0; k < res.validation_trail.size(); ++k)
                entry.warnings.push_back("attempt " + std::to_string(k + 1) +
                                         " failed validation: " + res.validation_trail[k]);
            log.entries.push_back(entry);
            return {res.document, log.entries.size() - 1};
        } catch (const GenerationError& e) {
            entry.attempts = config.retry_limit + 1;
            entry.response = e.raw_outputs.empty() ? nlohmann::json() : e.raw_outputs.back();
            entry.warnings.push_back(e.what());
            log.entries.push_back(entry);
            throw PipelineError(e.what(), log);
        }
    }

    AgentAssessment parse_assessment(AgentRole role, const nlohmann::json& doc,
                                     const ExposureSet& exposure, size_t entry_idx,
                                     PhaseLog& log) const {
        AgentAssessment a;
        a.role = role;
        a.scores = doc.at("scores").get<DimensionScores>();
        a.rationale = doc.at("rationale").get<std::string>();
        if (doc.contains("advanced_usage")) {
            for (const auto& id_json : doc["advanced_usage"]) {
                std::string id = id_json.get<std::string>();
                if (!curriculum_->has_catalog_id(id)) {
                    log.entries[entry_idx].warnings.push_back("advanced_usage id '" + id +
                                                              "' not in catalogs, dropped");
                } else if (exposure.contains_id(id)) {
                    log.entries[entry_idx].warnings.push_back("advanced_usage id '" + id +
                                                              "' already exposed, dropped");
                } else {
                    a.advanced_usage.insert(id);
                }
            }
        }
        return a;
    }

    /// Catalog validation with one repair retry, then drop-with-warning.
    AgentRecommendation parse_recommendation(AgentRole role, nlohmann::json doc,
                                             const std::string& phase_name,
                                             const Conversation& conv, const MethodConfig& config,
                                             size_t entry_idx, PhaseLog& log) const {
        auto invalid_ids = [&](const nlohmann::json& d) {
            std::vector<std::string> bad;
            for (const auto& id : d.at("grammar_picks"))
                if (!curriculum_->has_skill(id.get<std::string>()))
                    bad.push_back(id.get<std::string>());
            for (const auto& id : d.at("vocab_picks"))
                if (!curriculum_->has_topic(id.get<std::string>()))
                    bad.push_back(id.get<std::string>());
            return bad;
        };

        std::vector<std::string> bad = invalid_ids(doc);
        if (!bad.empty()) {
            std::map<std::string, std::string> vars;
            add_catalog_vars(vars);
            vars["bad_ids"] = join(bad, ", ");
            std::string repair_suffix =
                render_template(assets_->text("prompts/retry.catalog.v1"), vars);

            ModelBackend& backend = backends_->at(config.binding_for(role_name(role)));
            GenerationRequest request;
            request.role = role_name(role);
            request.phase = phase_name;
            request.conversation_id = conv.id;
            request.prompt = log.entries[entry_idx].prompt + "\n\n" + repair_suffix;
            request.prompt_asset_id = "prompts/retry.catalog.v1";
            request.schema_id = "schemas/recommendation.v1";
            request.decoding = config.decoding;
            request.thinking = config.thinking;

            StructuredResult res = generate_structured(
                backend, request, assets_->schema("schemas/recommendation.v1"),
                config.retry_limit);
            log.entries[entry_idx].attempts += res.attempts;
            log.entries[entry_idx].latency_ms += res.latency_ms;
            log.entries[entry_idx].warnings.push_back(
                "out-of-catalog picks [" + join(bad, ", ") + "], repair retry issued");
            log.entries[entry_idx].response = res.document;
            doc = res.document;

            for (const auto& still_bad : invalid_ids(doc))
                log.entries[entry_idx].warnings.push_back("pick '" + still_bad +
                                                          "' still not in catalog, dropped");
        }

        AgentRecommendation rec;
        rec.role = role;
        for (const auto& id : doc.at("grammar_picks"))
            if (curriculum_->has_skill(id.get<std::string>()))
                rec.grammar_picks.push_back(id.get<std::string>());
        for (const auto& id : doc.at("vocab_picks"))
            if (curriculum_->has_topic(id.get<std::string>()))
                rec.vocab_picks.push_back(id.get<std::string>());
        rec.grammar_picks = dedupe(rec.grammar_picks);
        rec.vocab_picks = dedupe(rec.vocab_picks);
        if (rec.grammar_picks.size() > 2) rec.grammar_picks.resize(2);
        if (rec.vocab_picks.size() > 2) rec.vocab_picks.resize(2);
        rec.observations = doc.value("observations", "");
        rec.ic_feedback = doc.at("ic_feedback").get<std::string>();
        return rec;
    }

    static PhaseLogEntry critic_entry(const std::string& phase_name, nlohmann::json digest) {
        PhaseLogEntry entry;
        entry.phase = phase_name;
        entry.role = role_name(AgentRole::critic);
        entry.attempts = 0;  // locally composed, no backend call
        entry.response = std::move(digest);
        return entry;
    }

    static nlohmann::json critic_digest_scores(const std::vector<AgentAssessment>& xs) {
        nlohmann::json per_dim = nlohmann::json::object();
        nlohmann::json conflicts = nlohmann::json::array();
        auto get = [](const AgentAssessment& a, const std::string& dim) {
            if (dim == "grammar") return a.scores.grammar;
            if (dim == "vocabulary") return a.scores.vocabulary;
            return a.scores.ic;
        };
        for (const std::string dim : {"grammar", "vocabulary", "ic"}) {
            int lo = 5, hi = 0;
            nlohmann::json by_role = nlohmann::json::object();
            for (const auto& a : xs) {
                int v = get(a, dim);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
                by_role[role_name(a.role)] = v;
            }
            per_dim[dim] = {{"min", lo}, {"max", hi}, {"spread", hi - lo}, {"scores", by_role}};
            if (hi - lo > 0)
                conflicts.push_back(dim + ": scores differ by " + std::to_string(hi - lo) +
                                    " (min " + std::to_string(lo) + ", max " + std::to_string(hi) +
                                    ")");
        }
        return {{"kind", "score_digest"}, {"per_dimension", per_dim}, {"conflicts", conflicts}};
    }

    static nlohmann::json critic_digest_recs(const std::vector<AgentRecommendation>& xs) {
        nlohmann::json g = nlohmann::json::object();
        nlohmann::json v = nlohmann::json::object();
        for (const auto& r : xs) {
            for (const auto& id : r.grammar_picks) g[id] = g.value(id, 0) + 1;
            for (const auto& id : r.vocab_picks) v[id] = v.value(id, 0) + 1;
        }
        return {{"kind", "recommendation_digest"},
                {"grammar_pick_counts", g},
                {"vocab_pick_counts", v}};
    }

    static std::vector<std::string> pick_union(const std::vector<AgentRecommendation>& a,
                                               const std::vector<AgentRecommendation>& b,
                                               bool grammar) {
        std::vector<std::string> out;
        auto take = [&](const std::vector<AgentRecommendation>& xs) {
            for (const auto& r : xs)
                for (const auto& id : (grammar ? r.grammar_picks : r.vocab_picks))
                    if (std::find(out.begin(), out.end(), id) == out.end()) out.push_back(id);
        };
        take(a);
        take(b);
        return out;
    }

    // -- baselines ------------------------------------------------------------

    ScoreResult score_self_consistency(const Conversation& conv, const ExposureSet& exposure,
                                       const MethodConfig& config, PhaseLog log) const {
        std::vector<AgentAssessment> samples;
        for (int k = 0; k < config.samples; ++k) {
            std::string asset = "prompts/score.analyst.v1";
            std::map<std::string, std::string> vars = common_vars(conv, exposure);
            vars["rubric"] = assets_->text(config.rubric_asset);
            vars["schema"] = schema_text("schemas/scoring_assessment.v1");
            auto [doc, entry] = call(AgentRole::analyst, phase::score_sample, conv, asset,
                                     render_template(assets_->text(asset), vars),
                                     "schemas/scoring_assessment.v1", config, log);
            samples.push_back(parse_assessment(AgentRole::analyst, doc, exposure, entry, log));
        }

        auto median_of = [](std::vector<int> v) {
            std::sort(v.begin(), v.end());
            return v[(v.size() - 1) / 2];
        };
        std::vector<int> g, vo, ic;
        for (const auto& s : samples) {
            g.push_back(s.scores.grammar);
            vo.push_back(s.scores.vocabulary);
            ic.push_back(s.scores.ic);
        }
        ScoreResult result;
        result.consensus = {median_of(g), median_of(vo), median_of(ic)};

        // Feedback from the sample closest to the aggregated vector
        // (L1 distance, earliest index on ties).
        size_t best = 0;
        int best_dist = samples[0].scores.l1_distance(result.consensus);
        for (size_t i = 1; i < samples.size(); ++i) {
            int d = samples[i].scores.l1_distance(result.consensus);
            if (d < best_dist) {
                best = i;
                best_dist = d;
            }
        }
        log.context["aggregation"] = "per-dimension median";
        log.context["feedback_sample"] = best;
        result.feedback = samples[best].rationale;
        result.rationale = samples[best].rationale;
        result.method_tag = config.label();
        result.phase_log = std::move(log);
        return result;
    }

    ScoreResult score_self_refine(const Conversation& conv, const ExposureSet& exposure,
                                  const MethodConfig& config, PhaseLog log) const {
        std::map<std::string, std::string> vars = common_vars(conv, exposure);
        vars["rubric"] = assets_->text(config.rubric_asset);
        vars["schema"] = schema_text("schemas/scoring_assessment.v1");
        std::string draft_asset = "prompts/score.analyst.v1";
        auto [doc, entry] = call(AgentRole::analyst, phase::score_draft, conv, draft_asset,
                                 render_template(assets_->text(draft_asset), vars),
                                 "schemas/scoring_assessment.v1", config, log);
        AgentAssessment current = parse_assessment(AgentRole::analyst, doc, exposure, entry, log);

        for (int k = 0; k < config.refine_iterations; ++k) {
            std::map<std::string, std::string> rvars = common_vars(conv, exposure);
            rvars["rubric"] = assets_->text(config.rubric_asset);
            rvars["previous"] = nlohmann::json(current).dump(2);
            rvars["schema"] = schema_text("schemas/scoring_assessment.v1");
            std::string asset = "prompts/score_refine.analyst.v1";
            auto [rdoc, rentry] = call(AgentRole::analyst, phase::score_refine, conv, asset,
                                       render_template(assets_->text(asset), rvars),
                                       "schemas/scoring_assessment.v1", config, log);
            current = parse_assessment(AgentRole::analyst, rdoc, exposure, rentry, log);
        }

        ScoreResult result;
        result.consensus = current.scores;
        result.feedback = current.rationale;
        result.rationale = current.rationale;
        result.method_tag = config.label();
        result.phase_log = std::move(log);
        return result;
    }

    Recommendation recommend_self_consistency(const Conversation& conv,
                                              const ExposureSet& exposure,
                                              const ScoreResult& score_result,
                                              const MethodConfig& config, PhaseLog log) const {
        std::vector<AgentRecommendation> samples;
        for (int k = 0; k < config.samples; ++k) {
            std::string asset = "prompts/rec.analyst.v1";
            std::map<std::string, std::string> vars = common_vars(conv, exposure);
            add_catalog_vars(vars);
            vars["score_rationale"] = score_result.rationale;
            vars["schema"] = schema_text("schemas/recommendation.v1");
            auto [doc, entry] = call(AgentRole::analyst, phase::rec_sample, conv, asset,
                                     render_template(assets_->text(asset), vars),
                                     "schemas/recommendation.v1", config, log);
            samples.push_back(
                parse_recommendation(AgentRole::analyst, doc, phase::rec_sample, conv, config,
                                     entry, log));
        }

        // Majority vote per list: rank by (votes desc, first appearance asc).
        auto aggregate = [&](bool grammar) {
            std::vector<std::string> order;
            std::map<std::string, int> votes;
            for (const auto& s : samples)
                for (const auto& id : (grammar ? s.grammar_picks : s.vocab_picks)) {
                    if (!votes.count(id)) order.push_back(id);
                    votes[id]++;
                }
            std::stable_sort(order.begin(), order.end(),
                             [&](const std::string& a, const std::string& b) {
                                 return votes[a] > votes[b];
                             });
            if (order.size() > 2) order.resize(2);
            return order;
        };

        Recommendation rec;
        rec.grammar_top = aggregate(true);
        rec.vocab_top = aggregate(false);

        // Text comes from the sample that overlaps the aggregate most.
        auto overlap = [&](const AgentRecommendation& s) {
            int n = 0;
            for (const auto& id : s.grammar_picks)
                if (std::find(rec.grammar_top.begin(), rec.grammar_top.end(), id) !=
                    rec.grammar_top.end())
                    ++n;
            for (const auto& id : s.vocab_picks)
                if (std::find(rec.vocab_top.begin(), rec.vocab_top.end(), id) !=
                    rec.vocab_top.end())
                    ++n;
            return n;
        };
        size_t best = 0;
        int best_overlap = overlap(samples[0]);
        for (size_t i = 1; i < samples.size(); ++i) {
            int o = overlap(samples[i]);
            if (o > best_overlap) {
                best = i;
                best_overlap = o;
            }
        }
        log.context["aggregation"] = "majority vote";
        log.context["feedback_sample"] = best;
        rec.ic_feedback = samples[best].ic_feedback;
        rec.rationale = samples[best].observations;
        rec.phase_log = std::move(log);
        return rec;
    }

    Recommendation recommend_self_refine(const Conversation& conv, const ExposureSet& exposure,
                                         const ScoreResult& score_result,
                                         const MethodConfig& config, PhaseLog log) const {
        std::map<std::string, std::string> vars = common_vars(conv, exposure);
        add_catalog_vars(vars);
        vars["score_rationale"] = score_result.rationale;
        vars["schema"] = schema_text("schemas/recommendation.v1");
        std::string draft_asset = "prompts/rec.analyst.v1";
        auto [doc, entry] = call(AgentRole::analyst, phase::rec_draft, conv, draft_asset,
                                 render_template(assets_->text(draft_asset), vars),
                                 "schemas/recommendation.v1", config, log);
        AgentRecommendation current = parse_recommendation(AgentRole::analyst, doc,
                                                           phase::rec_draft, conv, config, entry,
                                                           log);

        for (int k = 0; k < config.refine_iterations; ++k) {
            std::map<std::string, std::string> rvars = common_vars(conv, exposure);
            add_catalog_vars(rvars);
            rvars["score_rationale"] = score_result.rationale;
            rvars["previous"] = nlohmann::json(current).dump(2);
            rvars["schema"] = schema_text("schemas/recommendation.v1");
            std::string asset = "prompts/rec_refine.analyst.v1";
            auto [rdoc, rentry] = call(AgentRole::analyst, phase::rec_refine, conv, asset,
                                       render_template(assets_->text(asset), rvars),
                                       "schemas/recommendation.v1", config, log);
            current = parse_recommendation(AgentRole::analyst, rdoc, phase::rec_refine, conv,
                                           config, rentry, log);
        }

        Recommendation rec;
        rec.grammar_top = current.grammar_picks;
        rec.vocab_top = current.vocab_picks;
        rec.ic_feedback = current.ic_feedback;
        rec.rationale = current.observations;
        rec.phase_log = std::move(log);
        return rec;
    }
};

}  // namespace blockwise
