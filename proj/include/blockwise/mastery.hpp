#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "blockwise/common.hpp"
#include "blockwise/conversation.hpp"
#include "blockwise/curriculum.hpp"

namespace blockwise {

// Progression state machine: 70% mastery gating per block, per-block review
// groups for anything under 100%, day+2/day+5 spaced re-testing after each
// pass, carry-forward until a 100% re-test, and diagnostic bridge assessments
// (DBAs) that personalize the next block. All transitions are pure
// (state, event) -> state over an injectable virtual clock, so a persisted
// event log replays to a bit-identical state.

/// Address of a mastery component: a block's own group (review=false,
/// index=i) or a carried review group (review=true, index=r, block=origin).
struct GvcPosition {
    int block = 0;
    int index = 0;
    bool review = false;

    friend bool operator==(const GvcPosition&, const GvcPosition&) = default;
    friend bool operator<(const GvcPosition& a, const GvcPosition& b) {
        if (a.review != b.review) return !a.review;  // natives sort before reviews
        if (a.block != b.block) return a.block < b.block;
        return a.index < b.index;
    }

    std::string to_string() const {
        return std::string(review ? "review " : "") + "(" + std::to_string(block) + "," +
               std::to_string(index) + ")";
    }
};

inline void to_json(nlohmann::json& j, const GvcPosition& p) {
    j = {{"block", p.block}, {"index", p.index}, {"review", p.review}};
}

inline void from_json(const nlohmann::json& j, GvcPosition& p) {
    p.block = j.at("block").get<int>();
    p.index = j.at("index").get<int>();
    p.review = j.value("review", false);
}

struct GvcResult {
    GvcPosition position;
    double mastery_percent = 0.0;
    std::set<GrammarSkillId> missed_skills;
    std::set<VocabTopicId> missed_vocab;

    void check() const {
        if (mastery_percent < 0.0 || mastery_percent > 100.0)
            throw DomainError("mastery_percent out of range: " +
                              std::to_string(mastery_percent));
        bool full = mastery_percent == 100.0;
        bool empty = missed_skills.empty() && missed_vocab.empty();
        if (full != empty)
            throw DomainError("gvc result " + position.to_string() +
                              ": mastery 100 iff missed sets empty");
    }
};

inline void to_json(nlohmann::json& j, const GvcResult& r) {
    j = {{"position", r.position},
         {"mastery_percent", r.mastery_percent},
         {"missed_skills", r.missed_skills},
         {"missed_vocab", r.missed_vocab}};
}

inline void from_json(const nlohmann::json& j, GvcResult& r) {
    r.position = j.at("position").get<GvcPosition>();
    r.mastery_percent = j.at("mastery_percent").get<double>();
    r.missed_skills = j.value("missed_skills", std::set<std::string>{});
    r.missed_vocab = j.value("missed_vocab", std::set<std::string>{});
    r.check();
}

struct MasteryDecision {
    int block = 0;
    bool passed = false;
    std::vector<GvcPosition> failing_groups;  // mastery_percent < threshold
};

struct ReviewGroup {
    int origin_block = 0;
    int review_index = 0;  // the source group's index; stable across re-derivations
    std::set<GrammarSkillId> target_skills;
    std::set<VocabTopicId> target_vocab;
    std::vector<int> due_dates;  // pending re-test days, ascending
    std::optional<double> last_score;

    friend bool operator==(const ReviewGroup&, const ReviewGroup&) = default;
};

inline void to_json(nlohmann::json& j, const ReviewGroup& g) {
    j = {{"origin_block", g.origin_block},
         {"review_index", g.review_index},
         {"target_skills", g.target_skills},
         {"target_vocab", g.target_vocab},
         {"due_dates", g.due_dates}};
    if (g.last_score) j["last_score"] = *g.last_score;
}

inline void from_json(const nlohmann::json& j, ReviewGroup& g) {
    g.origin_block = j.at("origin_block").get<int>();
    g.review_index = j.at("review_index").get<int>();
    g.target_skills = j.value("target_skills", std::set<std::string>{});
    g.target_vocab = j.value("target_vocab", std::set<std::string>{});
    g.due_dates = j.value("due_dates", std::vector<int>{});
    if (j.contains("last_score")) g.last_score = j["last_score"].get<double>();
}

struct DbaResult {
    int from_block = 0;
    int to_block = 0;
    std::map<std::string, double> per_id_percent;
    std::vector<GvcPosition> removed_groups;
};

inline void to_json(nlohmann::json& j, const DbaResult& d) {
    j = {{"from_block", d.from_block},
         {"to_block", d.to_block},
         {"per_id_percent", d.per_id_percent},
         {"removed_groups", d.removed_groups}};
}

inline void from_json(const nlohmann::json& j, DbaResult& d) {
    d.from_block = j.at("from_block").get<int>();
    d.to_block = j.at("to_block").get<int>();
    d.per_id_percent = j.value("per_id_percent", std::map<std::string, double>{});
    d.removed_groups = j.value("removed_groups", std::vector<GvcPosition>{});
}

struct MasteryConfig {
    double pass_threshold = 70.0;       // block progression gate
    double retire_threshold = 100.0;    // review groups retire only at full mastery
    double dba_skip_threshold = 70.0;   // mirrors the progression criterion
    double weight_grammar = 1.0;        // per-GVC composition weights
    double weight_vocab = 1.0;
    double weight_conversation = 1.0;
    int review_offset_1 = 2;            // re-test days after a pass
    int review_offset_2 = 5;
};

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

/// Per-GVC mastery percentage: weighted mean of the grammar-lesson %, the
/// vocabulary-lesson %, and the conversation's rescaled mean dimension score.
inline double compose_gvc_mastery(double grammar_pct, double vocab_pct,
                                  const DimensionScores& conversation,
                                  const MasteryConfig& cfg = {}) {
    for (double p : {grammar_pct, vocab_pct})
        if (p < 0.0 || p > 100.0)
            throw DomainError("component percent out of range: " + std::to_string(p));
    conversation.check();
    double conv_pct = (rescale_score(conversation.grammar) +
                       rescale_score(conversation.vocabulary) + rescale_score(conversation.ic)) /
                      3.0;
    double wsum = cfg.weight_grammar + cfg.weight_vocab + cfg.weight_conversation;
    if (wsum <= 0.0) throw ConfigError("mastery weights must sum to a positive value");
    return (cfg.weight_grammar * grammar_pct + cfg.weight_vocab * vocab_pct +
            cfg.weight_conversation * conv_pct) /
           wsum;
}

/// Pass iff every result (block groups plus any folded-in review
/// assessments) reaches the threshold.
inline MasteryDecision evaluate_block_mastery(const std::vector<GvcResult>& results, int block,
                                              double threshold = 70.0) {
    if (results.empty())
        throw DomainError("evaluate_block_mastery: no results for block " + std::to_string(block));
    MasteryDecision decision;
    decision.block = block;
    decision.passed = true;
    for (const auto& r : results) {
        r.check();
        if (r.mastery_percent < threshold) {
            decision.passed = false;
            decision.failing_groups.push_back(r.position);
        }
    }
    std::sort(decision.failing_groups.begin(), decision.failing_groups.end());
    return decision;
}

/// One review group per native group below 100%, carrying exactly its missed
/// skills/vocabulary. r = source group index.
inline std::vector<ReviewGroup> derive_review_groups(const std::vector<GvcResult>& results,
                                                     int block) {
    std::vector<ReviewGroup> out;
    for (const auto& r : results) {
        if (r.position.review || r.position.block != block) continue;
        if (r.mastery_percent >= 100.0) continue;
        ReviewGroup g;
        g.origin_block = block;
        g.review_index = r.position.index;
        g.target_skills = r.missed_skills;
        g.target_vocab = r.missed_vocab;
        out.push_back(std::move(g));
    }
    std::sort(out.begin(), out.end(), [](const ReviewGroup& a, const ReviewGroup& b) {
        return a.review_index < b.review_index;
    });
    return out;
}

inline std::vector<int> schedule_reviews(int pass_day, const MasteryConfig& cfg = {}) {
    return {pass_day + cfg.review_offset_1, pass_day + cfg.review_offset_2};
}

// ---------------------------------------------------------------------------
// Learner state and events
// ---------------------------------------------------------------------------

struct LearnerState {
    int schema_version = 1;
    std::string learner_id;
    int current_block = 1;
    int clock_day = 0;
    std::map<std::pair<int, int>, GvcResult> session_results;        // (t,i) -> result
    std::map<std::pair<int, int>, double> session_review_scores;     // (b,r) -> latest score
    std::vector<ReviewGroup> carry_forward;                          // sorted by (b,r)
    std::set<std::string> advanced_usage_log;
    std::vector<DbaResult> dba_history;

    ReviewGroup* find_review(int b, int r) {
        for (auto& g : carry_forward)
            if (g.origin_block == b && g.review_index == r) return &g;
        return nullptr;
    }

    const ReviewGroup* find_review(int b, int r) const {
        return const_cast<LearnerState*>(this)->find_review(b, r);
    }

    std::set<int> removed_groups(int block) const {
        std::set<int> out;
        for (const auto& d : dba_history)
            if (d.to_block == block)
                for (const auto& p : d.removed_groups) out.insert(p.index);
        return out;
    }
};

inline void to_json(nlohmann::json& j, const LearnerState& s) {
    nlohmann::json results = nlohmann::json::array();
    for (const auto& [key, r] : s.session_results) results.push_back(r);
    nlohmann::json reviews = nlohmann::json::array();
    for (const auto& [key, score] : s.session_review_scores)
        reviews.push_back({{"origin_block", key.first}, {"review_index", key.second},
                           {"score", score}});
    j = {{"schema_version", s.schema_version},
         {"learner_id", s.learner_id},
         {"current_block", s.current_block},
         {"clock_day", s.clock_day},
         {"session_results", results},
         {"session_review_scores", reviews},
         {"carry_forward", s.carry_forward},
         {"advanced_usage_log", s.advanced_usage_log},
         {"dba_history", s.dba_history}};
}

inline void from_json(const nlohmann::json& j, LearnerState& s) {
    s.schema_version = j.at("schema_version").get<int>();
    if (s.schema_version != 1)
        throw FormatError("learner state: unsupported schema_version " +
                          std::to_string(s.schema_version));
    s.learner_id = j.at("learner_id").get<std::string>();
    s.current_block = j.at("current_block").get<int>();
    s.clock_day = j.at("clock_day").get<int>();
    s.session_results.clear();
    for (const auto& rj : j.value("session_results", nlohmann::json::array())) {
        GvcResult r = rj.get<GvcResult>();
        s.session_results[{r.position.block, r.position.index}] = r;
    }
    s.session_review_scores.clear();
    for (const auto& rj : j.value("session_review_scores", nlohmann::json::array()))
        s.session_review_scores[{rj.at("origin_block").get<int>(),
                                 rj.at("review_index").get<int>()}] =
            rj.at("score").get<double>();
    s.carry_forward = j.value("carry_forward", std::vector<ReviewGroup>{});
    s.advanced_usage_log = j.value("advanced_usage_log", std::set<std::string>{});
    s.dba_history = j.value("dba_history", std::vector<DbaResult>{});
}

struct SessionPlanEntry {
    enum class Kind { review, group };
    Kind kind;
    GvcPosition position;
    bool due = true;  // reviews only: false when the next re-test day is in the future

    std::string to_string() const {
        std::string s = position.to_string();
        if (kind == Kind::review && !due) s += " [not yet due]";
        return s;
    }
};

struct SessionPlan {
    int block = 0;
    std::vector<SessionPlanEntry> entries;
};

/// What an applied event did, for timelines and the CLI.
struct TransitionNotes {
    std::vector<std::string> lines;
    std::optional<MasteryDecision> decision;
    std::vector<GvcPosition> dba_trigger;
};

class LearnerEngine {
public:
    explicit LearnerEngine(const Curriculum& curriculum, MasteryConfig cfg = {})
        : curriculum_(&curriculum), cfg_(cfg) {}

    const MasteryConfig& config() const { return cfg_; }

    LearnerState initial_state(const std::string& learner_id) const {
        LearnerState s;
        s.learner_id = learner_id;
        return s;
    }

    /// Pure transition. Throws on script inconsistencies; the input state is
    /// taken by value so a failed apply leaves the caller's state untouched.
    LearnerState apply(LearnerState state, const nlohmann::json& event,
                       TransitionNotes* notes = nullptr) const {
        TransitionNotes local;
        TransitionNotes& n = notes ? *notes : local;
        std::string type = event.value("type", "");

        if (type == "advance_clock") {
            int day = event.at("day").get<int>();
            if (day < state.clock_day)
                throw DomainError("advance_clock: day " + std::to_string(day) +
                                  " precedes current day " + std::to_string(state.clock_day));
            state.clock_day = day;
        } else if (type == "gvc_result") {
            apply_gvc_result(state, event, n);
        } else if (type == "review_result") {
            apply_review_result(state, event, n);
        } else if (type == "evaluate_block") {
            apply_evaluate_block(state, event, n);
        } else if (type == "advanced_usage") {
            apply_advanced_usage(state, event, n);
        } else if (type == "dba_result") {
            apply_dba_result(state, event, n);
        } else {
            throw FormatError("unknown event type: '" + type + "'");
        }
        return state;
    }

    LearnerState replay(const std::string& learner_id,
                        const std::vector<nlohmann::json>& events) const {
        LearnerState state = initial_state(learner_id);
        for (const auto& e : events) state = apply(std::move(state), e);
        return state;
    }

    /// Session plan for a block: every carried review assessment first (in
    /// (origin block, review index) order, not-yet-due ones flagged), then
    /// the block's own groups in order, minus DBA removals.
    SessionPlan begin_block(const LearnerState& state, int block) const {
        if (block != state.current_block)
            throw DomainError("block " + std::to_string(block) + " is not unlocked (current is " +
                              std::to_string(state.current_block) + ")");
        const ConceptBlock* cb = curriculum_->find_block(block);
        if (!cb) throw NotFoundError("no such block: " + std::to_string(block));

        SessionPlan plan;
        plan.block = block;
        for (const auto& g : state.carry_forward) {
            bool due = false;
            for (int d : g.due_dates)
                if (d <= state.clock_day) due = true;
            plan.entries.push_back({SessionPlanEntry::Kind::review,
                                    {g.origin_block, g.review_index, true},
                                    due});
        }
        std::set<int> removed = state.removed_groups(block);
        for (const auto& g : cb->groups)
            if (!removed.count(g.index))
                plan.entries.push_back({SessionPlanEntry::Kind::group, {block, g.index, false},
                                        true});
        return plan;
    }

private:
    const Curriculum* curriculum_;
    MasteryConfig cfg_;

    static std::string format_percent(double p) {
        if (p == std::floor(p)) return std::to_string(static_cast<int>(p));
        return format_double(p, 2);
    }

    void apply_gvc_result(LearnerState& state, const nlohmann::json& event,
                          TransitionNotes& n) const {
        int block = event.at("block").get<int>();
        int group = event.at("group").get<int>();
        if (block != state.current_block)
            throw DomainError("gvc_result for block " + std::to_string(block) +
                              " but current block is " + std::to_string(state.current_block));
        if (!curriculum_->find_group({block, group}))
            throw NotFoundError("gvc_result: no group (" + std::to_string(block) + "," +
                                std::to_string(group) + ")");
        if (state.removed_groups(block).count(group))
            throw DomainError("gvc_result: group (" + std::to_string(block) + "," +
                              std::to_string(group) + ") was removed by a DBA");

        GvcResult r;
        r.position = {block, group, false};
        if (event.contains("mastery_percent")) {
            r.mastery_percent = event.at("mastery_percent").get<double>();
        } else {
            r.mastery_percent = compose_gvc_mastery(
                event.at("grammar_percent").get<double>(), event.at("vocab_percent").get<double>(),
                event.at("conversation_scores").get<DimensionScores>(), cfg_);
        }
        for (const auto& id : event.value("missed_skills", std::vector<std::string>{})) {
            if (!curriculum_->has_skill(id))
                throw DomainError("gvc_result: unknown skill id '" + id + "'");
            r.missed_skills.insert(id);
        }
        for (const auto& id : event.value("missed_vocab", std::vector<std::string>{})) {
            if (!curriculum_->has_topic(id))
                throw DomainError("gvc_result: unknown vocab topic id '" + id + "'");
            r.missed_vocab.insert(id);
        }
        r.check();
        state.session_results[{block, group}] = r;
        n.lines.push_back("gvc result (" + std::to_string(block) + "," + std::to_string(group) +
                          ") mastery " + format_percent(r.mastery_percent));
    }

    void apply_review_result(LearnerState& state, const nlohmann::json& event,
                             TransitionNotes& n) const {
        int b = event.at("origin_block").get<int>();
        int r = event.at("review_index").get<int>();
        double score = event.at("score").get<double>();
        if (score < 0.0 || score > 100.0)
            throw DomainError("review_result: score out of range: " + std::to_string(score));
        ReviewGroup* group = state.find_review(b, r);
        if (!group)
            throw DomainError("review_result: no carried review group (" + std::to_string(b) +
                              "," + std::to_string(r) + ")");

        state.session_review_scores[{b, r}] = score;
        group->last_score = score;
        // Due dates at or before today are satisfied by this re-test.
        std::erase_if(group->due_dates, [&](int d) { return d <= state.clock_day; });

        std::string label = "review (" + std::to_string(b) + "," + std::to_string(r) +
                            ") re-test " + format_percent(score);
        if (score >= cfg_.retire_threshold) {
            std::erase_if(state.carry_forward, [&](const ReviewGroup& g) {
                return g.origin_block == b && g.review_index == r;
            });
            n.lines.push_back(label + " -> retired");
        } else {
            // A failed re-test re-schedules +2/+5 from the re-test day.
            for (int d : schedule_reviews(state.clock_day, cfg_)) {
                if (std::find(group->due_dates.begin(), group->due_dates.end(), d) ==
                    group->due_dates.end())
                    group->due_dates.push_back(d);
            }
            std::sort(group->due_dates.begin(), group->due_dates.end());
            std::vector<std::string> days;
            for (int d : group->due_dates) days.push_back("day " + std::to_string(d));
            n.lines.push_back(label + " -> retained, due " + join(days, ", "));
        }
    }

    void apply_evaluate_block(LearnerState& state, const nlohmann::json& event,
                              TransitionNotes& n) const {
        int block = event.at("block").get<int>();
        if (block != state.current_block)
            throw DomainError("evaluate_block for block " + std::to_string(block) +
                              " but current block is " + std::to_string(state.current_block));
        const ConceptBlock* cb = curriculum_->find_block(block);
        if (!cb) throw NotFoundError("no such block: " + std::to_string(block));

        std::set<int> removed = state.removed_groups(block);
        std::vector<GvcResult> combined;
        for (const auto& g : cb->groups) {
            if (removed.count(g.index)) continue;
            auto it = state.session_results.find({block, g.index});
            if (it == state.session_results.end())
                throw DomainError("incomplete block: missing result for (" +
                                  std::to_string(block) + "," + std::to_string(g.index) + ")");
            combined.push_back(it->second);
        }
        std::vector<GvcResult> natives = combined;
        // Review assessments taken this session are folded in as additional
        // equally weighted components (the block augmented with its carried
        // review groups).
        for (const auto& [key, score] : state.session_review_scores) {
            GvcResult r;
            r.position = {key.first, key.second, true};
            r.mastery_percent = score;
            if (score < 100.0) {
                const ReviewGroup* g = state.find_review(key.first, key.second);
                if (g) {
                    r.missed_skills = g->target_skills;
                    r.missed_vocab = g->target_vocab;
                } else {
                    // group already retired at 100 earlier in the session
                    r.missed_skills.insert("(review)");
                }
            }
            // review entries bypass the catalog check; targets were validated
            // when the deficit was first logged
            combined.push_back(r);
        }

        MasteryDecision decision = evaluate_block_mastery(combined, block, cfg_.pass_threshold);
        double min_pct = 100.0;
        for (const auto& r : combined) min_pct = std::min(min_pct, r.mastery_percent);

        // Anything under 100% spawns (or refreshes) its review group — on
        // pass and fail alike, idempotently under the (b, r) key.
        for (const auto& derived : derive_review_groups(natives, block)) {
            ReviewGroup* existing = state.find_review(derived.origin_block, derived.review_index);
            if (existing) {
                existing->target_skills.insert(derived.target_skills.begin(),
                                               derived.target_skills.end());
                existing->target_vocab.insert(derived.target_vocab.begin(),
                                              derived.target_vocab.end());
            } else {
                state.carry_forward.push_back(derived);
                std::sort(state.carry_forward.begin(), state.carry_forward.end(),
                          [](const ReviewGroup& a, const ReviewGroup& b) {
                              return std::pair(a.origin_block, a.review_index) <
                                     std::pair(b.origin_block, b.review_index);
                          });
            }
            n.lines.push_back("review group (" + std::to_string(derived.origin_block) + "," +
                              std::to_string(derived.review_index) + ") targets skills={" +
                              join(derived.target_skills, ",") + "} vocab={" +
                              join(derived.target_vocab, ",") + "}");
        }

        if (decision.passed) {
            n.lines.insert(n.lines.begin(), "block " + std::to_string(block) +
                                                " evaluated: PASS (min " + format_percent(min_pct) +
                                                ")");
            state.current_block = block + 1;
            state.session_results.clear();
            state.session_review_scores.clear();
            for (auto& g : state.carry_forward) {
                for (int d : schedule_reviews(state.clock_day, cfg_)) {
                    if (std::find(g.due_dates.begin(), g.due_dates.end(), d) ==
                        g.due_dates.end())
                        g.due_dates.push_back(d);
                }
                std::sort(g.due_dates.begin(), g.due_dates.end());
                n.lines.push_back("review (" + std::to_string(g.origin_block) + "," +
                                  std::to_string(g.review_index) + ") scheduled day " +
                                  std::to_string(state.clock_day + cfg_.review_offset_1) +
                                  ", day " +
                                  std::to_string(state.clock_day + cfg_.review_offset_2));
            }
            n.lines.push_back("block " + std::to_string(state.current_block) + " unlocked");

            // DBA trigger: logged advanced usage intersecting the next
            // block's taught content.
            const ConceptBlock* next = curriculum_->find_block(state.current_block);
            if (next && !state.advanced_usage_log.empty()) {
                for (const auto& g : next->groups) {
                    std::set<std::string> content = curriculum_->group_catalog_content(g);
                    for (const auto& id : state.advanced_usage_log) {
                        if (content.count(id)) {
                            n.dba_trigger.push_back({next->index, g.index, false});
                            break;
                        }
                    }
                }
                if (!n.dba_trigger.empty()) {
                    std::vector<std::string> names;
                    for (const auto& p : n.dba_trigger)
                        names.push_back("(" + std::to_string(p.block) + "," +
                                        std::to_string(p.index) + ")");
                    n.lines.push_back("dba trigger: advanced usage overlaps block " +
                                      std::to_string(next->index) + " group(s): " +
                                      join(names, ", "));
                }
            }
        } else {
            std::vector<std::string> names;
            for (const auto& p : decision.failing_groups) names.push_back(p.to_string());
            n.lines.insert(n.lines.begin(),
                           "block " + std::to_string(block) + " evaluated: BLOCKED (min " +
                               format_percent(min_pct) + "; failing: " + join(names, ", ") + ")");
        }
        n.decision = decision;
    }

    void apply_advanced_usage(LearnerState& state, const nlohmann::json& event,
                              TransitionNotes& n) const {
        std::vector<std::string> logged;
        for (const auto& id_json : event.at("ids")) {
            std::string id = id_json.get<std::string>();
            if (!curriculum_->has_catalog_id(id)) {
                n.lines.push_back("advanced usage id '" + id + "' not in catalogs, ignored");
                continue;
            }
            if (state.advanced_usage_log.insert(id).second) logged.push_back(id);
        }
        if (!logged.empty())
            n.lines.push_back("advanced usage logged: " + join(logged, ", "));
    }

    void apply_dba_result(LearnerState& state, const nlohmann::json& event,
                          TransitionNotes& n) const {
        DbaResult dba;
        dba.to_block = state.current_block;
        dba.from_block = state.current_block - 1;
        const ConceptBlock* cb = curriculum_->find_block(dba.to_block);
        if (!cb)
            throw NotFoundError("dba_result: no block " + std::to_string(dba.to_block) +
                                " to personalize");
        for (auto it = event.at("per_id_percent").begin(); it != event.at("per_id_percent").end();
             ++it) {
            if (!curriculum_->has_catalog_id(it.key()))
                throw DomainError("dba_result: unknown catalog id '" + it.key() + "'");
            dba.per_id_percent[it.key()] = it.value().get<double>();
        }

        std::set<int> already_removed = state.removed_groups(dba.to_block);
        for (const auto& g : cb->groups) {
            if (already_removed.count(g.index)) continue;
            std::set<std::string> content = curriculum_->group_catalog_content(g);
            bool any = false, all_above = true;
            for (const auto& [id, pct] : dba.per_id_percent) {
                if (!content.count(id)) continue;
                any = true;
                if (pct < cfg_.dba_skip_threshold) all_above = false;
            }
            if (any && all_above) dba.removed_groups.push_back({dba.to_block, g.index, false});
        }

        // One demonstration is enough; assessed ids stop triggering DBAs.
        for (const auto& [id, pct] : dba.per_id_percent) state.advanced_usage_log.erase(id);

        state.dba_history.push_back(dba);
        if (dba.removed_groups.empty()) {
            n.lines.push_back("dba applied between blocks " + std::to_string(dba.from_block) +
                              " and " + std::to_string(dba.to_block) + ": removed none");
        } else {
            std::vector<std::string> names;
            for (const auto& p : dba.removed_groups)
                names.push_back("(" + std::to_string(p.block) + "," + std::to_string(p.index) +
                                ")");
            n.lines.push_back("dba applied between blocks " + std::to_string(dba.from_block) +
                              " and " + std::to_string(dba.to_block) + ": removed " +
                              join(names, ", "));
        }
    }
};

// ---------------------------------------------------------------------------
// Persistence: one state document per learner plus an append-only event log,
// atomic write-rename on update, lock-guarded single-writer per learner.
// ---------------------------------------------------------------------------

/// Exclusive advisory lock on a learner's state files. Held for the duration
/// of a step; a second writer fails fast instead of corrupting state.
class LearnerLock {
public:
    LearnerLock(const std::filesystem::path& dir, const std::string& learner_id) {
        std::filesystem::create_directories(dir);
        path_ = dir / (learner_id + ".lock");
        fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0) throw IoError("cannot open lock file " + path_.string());
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            fd_ = -1;
            throw IoError("learner '" + learner_id + "' is locked by another writer");
        }
    }

    ~LearnerLock() {
        if (fd_ >= 0) {
            ::flock(fd_, LOCK_UN);
            ::close(fd_);
        }
    }

    LearnerLock(const LearnerLock&) = delete;
    LearnerLock& operator=(const LearnerLock&) = delete;

private:
    std::filesystem::path path_;
    int fd_ = -1;
};

inline std::filesystem::path learner_state_path(const std::filesystem::path& dir,
                                                const std::string& learner_id) {
    return dir / (learner_id + ".state.json");
}

inline std::filesystem::path learner_events_path(const std::filesystem::path& dir,
                                                 const std::string& learner_id) {
    return dir / (learner_id + ".events.jsonl");
}

inline void save_learner_state(const std::filesystem::path& dir, const LearnerState& state) {
    std::filesystem::create_directories(dir);
    auto path = learner_state_path(dir, state.learner_id);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << nlohmann::json(state).dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

inline LearnerState load_learner_state(const std::filesystem::path& dir,
                                       const std::string& learner_id) {
    auto path = learner_state_path(dir, learner_id);
    std::ifstream in(path);
    if (!in) throw IoError("no state for learner '" + learner_id + "' at " + path.string());
    try {
        return nlohmann::json::parse(in).get<LearnerState>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("learner state " + path.string() + ": " + e.what());
    }
}

inline void append_learner_event(const std::filesystem::path& dir, const std::string& learner_id,
                                 const nlohmann::json& event) {
    std::filesystem::create_directories(dir);
    std::ofstream out(learner_events_path(dir, learner_id), std::ios::app);
    if (!out) throw IoError("cannot append to event log for learner '" + learner_id + "'");
    out << event.dump() << "\n";
}

inline std::vector<nlohmann::json> load_learner_events(const std::filesystem::path& dir,
                                                       const std::string& learner_id) {
    std::ifstream in(learner_events_path(dir, learner_id));
    if (!in) return {};
    std::vector<nlohmann::json> events;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            events.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("event log for '" + learner_id + "' line " +
                              std::to_string(lineno) + ": " + e.what());
        }
    }
    return events;
}

}  // namespace blockwise
