#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "blockwise/common.hpp"
#include "blockwise/curriculum.hpp"

namespace blockwise {

/// One 0-5 rating per rubric dimension.
struct DimensionScores {
    int grammar = 0;
    int vocabulary = 0;
    int ic = 0;

    friend bool operator==(const DimensionScores&, const DimensionScores&) = default;

    void check() const {
        for (int v : {grammar, vocabulary, ic})
            if (v < 0 || v > 5)
                throw DomainError("dimension score out of range 0-5: " + std::to_string(v));
    }

    int l1_distance(const DimensionScores& other) const {
        return std::abs(grammar - other.grammar) + std::abs(vocabulary - other.vocabulary) +
               std::abs(ic - other.ic);
    }
};

inline void to_json(nlohmann::json& j, const DimensionScores& s) {
    j = {{"grammar", s.grammar}, {"vocabulary", s.vocabulary}, {"ic", s.ic}};
}

inline void from_json(const nlohmann::json& j, DimensionScores& s) {
    s.grammar = j.at("grammar").get<int>();
    s.vocabulary = j.at("vocabulary").get<int>();
    s.ic = j.at("ic").get<int>();
    s.check();
}

struct Turn {
    std::string speaker;  // "learner" | "partner"
    std::string text;
    std::int64_t timestamp = 0;

    friend bool operator==(const Turn&, const Turn&) = default;
};

inline void to_json(nlohmann::json& j, const Turn& t) {
    j = {{"speaker", t.speaker}, {"text", t.text}, {"timestamp", t.timestamp}};
}

inline void from_json(const nlohmann::json& j, Turn& t) {
    t.speaker = j.at("speaker").get<std::string>();
    t.text = j.at("text").get<std::string>();
    t.timestamp = j.value("timestamp", std::int64_t{0});
}

/// A learner transcript tied to a curriculum position.
struct Conversation {
    std::string id;
    std::string learner_id;
    GroupRef lesson_ref;
    std::vector<Turn> turns;

    void check() const {
        if (id.empty()) throw FormatError("conversation: empty id");
        bool has_learner_turn = false;
        std::int64_t prev = INT64_MIN;
        for (const auto& t : turns) {
            if (t.speaker != "learner" && t.speaker != "partner")
                throw FormatError("conversation " + id + ": speaker must be learner|partner, got '" +
                                  t.speaker + "'");
            if (t.speaker == "learner") has_learner_turn = true;
            if (t.timestamp < prev)
                throw FormatError("conversation " + id + ": turns not time-ordered");
            prev = t.timestamp;
        }
        if (!has_learner_turn)
            throw FormatError("conversation " + id + ": needs at least one learner turn");
    }

    std::string transcript() const {
        std::string out;
        for (const auto& t : turns) out += t.speaker + ": " + t.text + "\n";
        return out;
    }
};

inline void to_json(nlohmann::json& j, const Conversation& c) {
    j = {{"id", c.id},
         {"learner_id", c.learner_id},
         {"lesson_ref", {{"block", c.lesson_ref.block}, {"group", c.lesson_ref.group}}},
         {"turns", c.turns}};
}

inline void from_json(const nlohmann::json& j, Conversation& c) {
    c.id = j.at("id").get<std::string>();
    c.learner_id = j.value("learner_id", "");
    c.lesson_ref.block = j.at("lesson_ref").at("block").get<int>();
    c.lesson_ref.group = j.at("lesson_ref").at("group").get<int>();
    c.turns = j.at("turns").get<std::vector<Turn>>();
    c.check();
}

inline Conversation load_conversation(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open conversation file: " + path);
    try {
        return nlohmann::json::parse(in).get<Conversation>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("conversation: " + path + ": " + e.what());
    }
}

}  // namespace blockwise
