#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "blockwise/common.hpp"

namespace blockwise {

// The block/group instructional algebra: an ordered sequence of concept
// blocks, each a sequence of GVC groups (grammar -> vocabulary ->
// conversation), plus the skill and vocabulary-topic catalogs that
// recommendations draw from.

using GrammarSkillId = std::string;
using VocabTopicId = std::string;
using LexicalItem = std::string;

struct GrammarLesson {
    std::string id;
    std::set<GrammarSkillId> taught_rules;
};

struct VocabularyLesson {
    std::string id;
    std::set<LexicalItem> introduced_items;
    std::set<VocabTopicId> topic_ids;
};

struct GuidedTask {
    std::string id;
    std::string description;
};

struct ConversationLesson {
    std::string id;
    GuidedTask task;
    std::set<LexicalItem> lex_req;
    // Optional hook for the off-by-default grammar-coverage check.
    std::set<GrammarSkillId> grammar_req;
};

struct GvcGroup {
    int index = 0;  // i, 1-based within the block
    GrammarLesson grammar;
    VocabularyLesson vocabulary;
    ConversationLesson conversation;
};

struct ConceptBlock {
    int index = 0;  // t, 1-based instructional time
    std::vector<GvcGroup> groups;
};

struct SkillEntry {
    GrammarSkillId id;
    std::string name;
};

struct VocabTopic {
    VocabTopicId id;
    std::string name;
    std::set<LexicalItem> items;
};

/// (t, i) address of a group. Both 1-based.
struct GroupRef {
    int block = 0;
    int group = 0;

    friend bool operator==(const GroupRef&, const GroupRef&) = default;
    friend bool operator<(const GroupRef& a, const GroupRef& b) {
        return a.block != b.block ? a.block < b.block : a.group < b.group;
    }
};

struct ExposureSet {
    std::set<GrammarSkillId> skills;
    std::set<LexicalItem> vocab;
    std::set<VocabTopicId> topics;

    bool contains_id(const std::string& id) const {
        return skills.count(id) || topics.count(id);
    }
    friend bool operator==(const ExposureSet&, const ExposureSet&) = default;
};

struct Violation {
    enum class Kind { Ordering, Coverage, DanglingReference };
    Kind kind;
    int block = 0;
    int group = 0;
    std::string item;    // offending lexical item or id
    std::string detail;  // human-readable explanation

    std::string to_string() const {
        const char* k = kind == Kind::Ordering       ? "OrderingViolation"
                        : kind == Kind::Coverage     ? "CoverageViolation"
                                                     : "DanglingReference";
        std::ostringstream os;
        os << k << " at (t=" << block << ", i=" << group << ")";
        if (!item.empty()) os << " [" << item << "]";
        if (!detail.empty()) os << ": " << detail;
        return os.str();
    }
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool valid() const { return violations.empty(); }
    std::string to_string() const {
        if (valid()) return "curriculum valid\n";
        std::string out;
        for (const auto& v : violations) out += v.to_string() + "\n";
        return out;
    }
};

struct ValidateOptions {
    // Off by default: the lexical coverage condition is the only one the
    // curriculum formalizes; grammar coverage is an extra, optional check.
    bool grammar_coverage = false;
};

class Curriculum {
public:
    std::vector<ConceptBlock> blocks;
    std::map<GrammarSkillId, SkillEntry> skills;
    std::map<VocabTopicId, VocabTopic> vocab_topics;

    // Populated at load time: G->V->C key-order violations are a property of
    // the serialized document and can only be observed while parsing.
    std::vector<Violation> load_ordering_violations;

    const ConceptBlock* find_block(int t) const {
        for (const auto& b : blocks)
            if (b.index == t) return &b;
        return nullptr;
    }

    const GvcGroup* find_group(GroupRef ref) const {
        const ConceptBlock* b = find_block(ref.block);
        if (!b) return nullptr;
        for (const auto& g : b->groups)
            if (g.index == ref.group) return &g;
        return nullptr;
    }

    const GvcGroup& group_at(GroupRef ref) const {
        const GvcGroup* g = find_group(ref);
        if (!g)
            throw NotFoundError("no such curriculum position (t=" + std::to_string(ref.block) +
                                ", i=" + std::to_string(ref.group) + ")");
        return *g;
    }

    bool has_skill(const GrammarSkillId& id) const { return skills.count(id) > 0; }
    bool has_topic(const VocabTopicId& id) const { return vocab_topics.count(id) > 0; }
    bool has_catalog_id(const std::string& id) const { return has_skill(id) || has_topic(id); }

    std::set<std::string> catalog_ids() const {
        std::set<std::string> out;
        for (const auto& [id, _] : skills) out.insert(id);
        for (const auto& [id, _] : vocab_topics) out.insert(id);
        return out;
    }

    /// Group content as catalog ids (taught skills + vocabulary topics).
    /// Used by advanced-usage triggers and DBA personalization.
    std::set<std::string> group_catalog_content(const GvcGroup& g) const {
        std::set<std::string> out(g.grammar.taught_rules.begin(), g.grammar.taught_rules.end());
        out.insert(g.vocabulary.topic_ids.begin(), g.vocabulary.topic_ids.end());
        return out;
    }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Union of introduced_items over all groups strictly preceding (t, i) in
/// curriculum order, across block boundaries.
inline std::set<LexicalItem> prior_vocabulary(const Curriculum& cur, int t, int i) {
    if (!cur.find_group({t, i}))
        throw NotFoundError("no such curriculum position (t=" + std::to_string(t) +
                            ", i=" + std::to_string(i) + ")");
    std::set<LexicalItem> out;
    for (const auto& block : cur.blocks) {
        for (const auto& g : block.groups) {
            if (block.index > t || (block.index == t && g.index >= i)) continue;
            out.insert(g.vocabulary.introduced_items.begin(), g.vocabulary.introduced_items.end());
        }
    }
    return out;
}

/// Everything the learner has met up to `pos`. include_current = true counts
/// the addressed group itself (the state after finishing its conversation
/// lesson); false gives the exposure entering the group.
inline ExposureSet cumulative_exposure(const Curriculum& cur, GroupRef pos, bool include_current) {
    if (!cur.find_group(pos))
        throw NotFoundError("no such curriculum position (t=" + std::to_string(pos.block) +
                            ", i=" + std::to_string(pos.group) + ")");
    ExposureSet out;
    for (const auto& block : cur.blocks) {
        for (const auto& g : block.groups) {
            bool before = block.index < pos.block ||
                          (block.index == pos.block && g.index < pos.group);
            bool current = block.index == pos.block && g.index == pos.group;
            if (!(before || (current && include_current))) continue;
            out.skills.insert(g.grammar.taught_rules.begin(), g.grammar.taught_rules.end());
            out.vocab.insert(g.vocabulary.introduced_items.begin(),
                             g.vocabulary.introduced_items.end());
            out.topics.insert(g.vocabulary.topic_ids.begin(), g.vocabulary.topic_ids.end());
        }
    }
    return out;
}

/// 0-5 ordinal score -> 0-100 percentage, linear.
inline int rescale_score(int s) {
    if (s < 0 || s > 5)
        throw DomainError("score out of range 0-5: " + std::to_string(s));
    return 20 * s;
}

inline ValidationReport validate_curriculum(const Curriculum& cur,
                                            const ValidateOptions& opts = {}) {
    ValidationReport report;
    report.violations = cur.load_ordering_violations;

    for (const auto& block : cur.blocks) {
        for (const auto& g : block.groups) {
            for (const auto& rule : g.grammar.taught_rules) {
                if (!cur.has_skill(rule))
                    report.violations.push_back({Violation::Kind::DanglingReference, block.index,
                                                 g.index, rule,
                                                 "taught rule not in skill catalog"});
            }
            for (const auto& topic : g.vocabulary.topic_ids) {
                if (!cur.has_topic(topic))
                    report.violations.push_back({Violation::Kind::DanglingReference, block.index,
                                                 g.index, topic,
                                                 "topic not in vocab_topics catalog"});
            }

            std::set<LexicalItem> available = prior_vocabulary(cur, block.index, g.index);
            available.insert(g.vocabulary.introduced_items.begin(),
                             g.vocabulary.introduced_items.end());
            for (const auto& item : g.conversation.lex_req) {
                if (!available.count(item))
                    report.violations.push_back(
                        {Violation::Kind::Coverage, block.index, g.index, item,
                         "task requires item not introduced here or earlier"});
            }

            if (opts.grammar_coverage) {
                ExposureSet exp = cumulative_exposure(cur, {block.index, g.index}, true);
                for (const auto& rule : g.conversation.grammar_req) {
                    if (!exp.skills.count(rule))
                        report.violations.push_back(
                            {Violation::Kind::Coverage, block.index, g.index, rule,
                             "task requires grammar rule not yet taught"});
                }
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Loading. Parsed with ordered_json so that component key order inside each
// group is observable: a group serialized with vocabulary before grammar is
// an OrderingViolation.
// ---------------------------------------------------------------------------

namespace detail {

inline const nlohmann::ordered_json& require_field(const nlohmann::ordered_json& obj,
                                                   const std::string& key,
                                                   const std::string& locus) {
    if (!obj.is_object() || !obj.contains(key))
        throw FormatError("curriculum: missing field '" + key + "' at " + locus);
    return obj[key];
}

inline std::set<std::string> normalized_item_set(const nlohmann::ordered_json& arr,
                                                 const std::string& locus) {
    if (!arr.is_array()) throw FormatError("curriculum: expected array at " + locus);
    std::set<std::string> out;
    for (const auto& v : arr) {
        if (!v.is_string()) throw FormatError("curriculum: expected string at " + locus);
        std::string norm = normalize_lexical_item(v.get<std::string>());
        if (!norm.empty()) out.insert(norm);
    }
    return out;
}

inline std::set<std::string> id_set(const nlohmann::ordered_json& arr, const std::string& locus) {
    if (!arr.is_array()) throw FormatError("curriculum: expected array at " + locus);
    std::set<std::string> out;
    for (const auto& v : arr) {
        if (!v.is_string()) throw FormatError("curriculum: expected string at " + locus);
        out.insert(v.get<std::string>());
    }
    return out;
}

}  // namespace detail

inline Curriculum curriculum_from_json(const nlohmann::ordered_json& doc) {
    Curriculum cur;
    const auto& skills = detail::require_field(doc, "skills", "top level");
    for (size_t k = 0; k < skills.size(); ++k) {
        const auto& s = skills[k];
        std::string locus = "skills[" + std::to_string(k) + "]";
        SkillEntry entry{detail::require_field(s, "id", locus).get<std::string>(),
                         s.value("name", "")};
        cur.skills[entry.id] = entry;
    }
    const auto& topics = detail::require_field(doc, "vocab_topics", "top level");
    for (size_t k = 0; k < topics.size(); ++k) {
        const auto& tj = topics[k];
        std::string locus = "vocab_topics[" + std::to_string(k) + "]";
        VocabTopic topic;
        topic.id = detail::require_field(tj, "id", locus).get<std::string>();
        topic.name = tj.value("name", "");
        if (tj.contains("items"))
            topic.items = detail::normalized_item_set(tj["items"], locus + ".items");
        cur.vocab_topics[topic.id] = topic;
    }

    const auto& blocks = detail::require_field(doc, "blocks", "top level");
    if (!blocks.is_array()) throw FormatError("curriculum: 'blocks' must be an array");
    int expected_t = 1;
    for (const auto& bj : blocks) {
        std::string b_locus = "blocks[" + std::to_string(expected_t - 1) + "]";
        ConceptBlock block;
        block.index = bj.contains("index") ? bj["index"].get<int>() : expected_t;
        if (block.index != expected_t)
            throw FormatError("curriculum: block indices must be contiguous from 1; got " +
                              std::to_string(block.index) + " at " + b_locus);
        ++expected_t;

        const auto& groups = detail::require_field(bj, "groups", b_locus);
        int expected_i = 1;
        for (const auto& gj : groups) {
            std::string g_locus =
                b_locus + ".groups[" + std::to_string(expected_i - 1) + "]";
            GvcGroup group;
            group.index = expected_i++;

            // Observe the serialized component order before reading fields.
            std::vector<std::string> order;
            for (auto it = gj.begin(); it != gj.end(); ++it) {
                if (it.key() == "grammar" || it.key() == "vocabulary" ||
                    it.key() == "conversation")
                    order.push_back(it.key());
            }
            std::vector<std::string> expected_order = {"grammar", "vocabulary", "conversation"};
            if (order != expected_order) {
                cur.load_ordering_violations.push_back(
                    {Violation::Kind::Ordering, block.index, group.index, "",
                     "components serialized as [" + join(order, ", ") +
                         "], expected grammar, vocabulary, conversation"});
            }

            const auto& grammar = detail::require_field(gj, "grammar", g_locus);
            group.grammar.id = grammar.value("id", "");
            group.grammar.taught_rules =
                detail::id_set(detail::require_field(grammar, "taught_rules", g_locus + ".grammar"),
                               g_locus + ".grammar.taught_rules");
            if (group.grammar.taught_rules.empty())
                throw FormatError("curriculum: taught_rules empty at " + g_locus + ".grammar");

            const auto& vocab = detail::require_field(gj, "vocabulary", g_locus);
            group.vocabulary.id = vocab.value("id", "");
            group.vocabulary.introduced_items = detail::normalized_item_set(
                detail::require_field(vocab, "items", g_locus + ".vocabulary"),
                g_locus + ".vocabulary.items");
            if (group.vocabulary.introduced_items.empty())
                throw FormatError("curriculum: vocabulary items empty at " + g_locus +
                                  ".vocabulary");
            if (vocab.contains("topics"))
                group.vocabulary.topic_ids =
                    detail::id_set(vocab["topics"], g_locus + ".vocabulary.topics");

            const auto& conv = detail::require_field(gj, "conversation", g_locus);
            group.conversation.id = conv.value("id", "");
            if (conv.contains("task")) {
                group.conversation.task.id = conv["task"].value("id", "");
                group.conversation.task.description = conv["task"].value("description", "");
            }
            if (conv.contains("lex_req"))
                group.conversation.lex_req = detail::normalized_item_set(
                    conv["lex_req"], g_locus + ".conversation.lex_req");
            if (conv.contains("grammar_req"))
                group.conversation.grammar_req = detail::id_set(
                    conv["grammar_req"], g_locus + ".conversation.grammar_req");

            block.groups.push_back(std::move(group));
        }
        if (block.groups.empty())
            throw FormatError("curriculum: block " + std::to_string(block.index) +
                              " has no groups");
        cur.blocks.push_back(std::move(block));
    }
    return cur;
}

inline Curriculum load_curriculum(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open curriculum file: " + path);
    nlohmann::ordered_json doc;
    try {
        doc = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("curriculum: " + path + ": " + e.what());
    }
    return curriculum_from_json(doc);
}

}  // namespace blockwise
