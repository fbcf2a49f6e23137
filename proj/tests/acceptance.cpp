// Acceptance suite: one criterion per --criterion index, one pass/fail line
// per criterion, nonzero exit when any executed criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "blockwise/benchmark.hpp"
#include "blockwise/config.hpp"
#include "blockwise/mastery.hpp"
#include "blockwise/metrics.hpp"
#include "blockwise/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blockwise;

namespace {

std::string fixture(const std::string& name) {
    return std::string(BLOCKWISE_FIXTURE_DIR) + "/" + name;
}

int failures = 0;
int sub_failures = 0;

void sub(bool ok, const std::string& what) {
    if (!ok) {
        ++sub_failures;
        std::cout << "    FAIL " << what << "\n";
    }
}

void finish(int index, const std::string& title) {
    bool ok = sub_failures == 0;
    std::cout << "criterion " << index << ": " << (ok ? "PASS" : "FAIL") << " — " << title << "\n";
    if (!ok) ++failures;
    sub_failures = 0;
}

const Curriculum& demo() {
    static Curriculum cur = load_curriculum(fixture("curriculum/a2_demo.json"));
    return cur;
}

const AssetStore& assets() {
    static AssetStore store{BLOCKWISE_ASSET_DIR};
    return store;
}

// ---------------------------------------------------------------------------
// 1. Average-DOV arithmetic identities over fixed per-dimension inputs
// ---------------------------------------------------------------------------

void criterion_1() {
    struct Identity {
        double g, v, ic, expected;
    };
    // Each tuple's average is computed through degree_of_variation over
    // constructed 100-record score vectors whose per-dimension deviations
    // reproduce the inputs exactly.
    const std::vector<Identity> identities = {
        {0.11, 0.27, 0.32, 0.23}, {0.27, 0.64, 0.39, 0.43}, {0.32, 0.43, 0.48, 0.41},
        {0.41, 0.48, 0.48, 0.45}, {0.98, 1.27, 0.93, 1.06}, {0.82, 1.00, 0.86, 0.89},
    };
    for (const auto& id : identities) {
        const int n = 100;
        std::vector<DimensionScores> consensus(n, DimensionScores{2, 2, 2});
        std::vector<DimensionScores> preds(n, DimensionScores{2, 2, 2});
        auto distribute = [&](double dov, int DimensionScores::*dim) {
            int remaining = static_cast<int>(std::lround(dov * n));
            for (int i = 0; i < n && remaining > 0; ++i) {
                int d = std::min(2, remaining);
                preds[i].*dim += d;
                remaining -= d;
            }
        };
        distribute(id.g, &DimensionScores::grammar);
        distribute(id.v, &DimensionScores::vocabulary);
        distribute(id.ic, &DimensionScores::ic);

        DovReport r = degree_of_variation(preds, consensus);
        sub(std::abs(r.grammar - id.g) <= 1e-12, "per-dimension reconstruction (grammar)");
        sub(std::abs(r.vocabulary - id.v) <= 1e-12, "per-dimension reconstruction (vocabulary)");
        sub(std::abs(r.ic - id.ic) <= 1e-12, "per-dimension reconstruction (ic)");

        char line[160];
        std::snprintf(line, sizeof(line),
                      "average DOV of (%.2f, %.2f, %.2f) = %.4f, expected %.2f +/- 0.005",
                      id.g, id.v, id.ic, r.average, id.expected);
        sub(std::abs(r.average - id.expected) <= 0.005, line);
    }
    finish(1, "average-DOV arithmetic identities over per-dimension inputs (+/-0.005)");
}

// ---------------------------------------------------------------------------
// 2. Quadratic weighted kappa vs an independent brute-force oracle
// ---------------------------------------------------------------------------

double qwk_oracle(const std::vector<int>& a, const std::vector<int>& b, int categories = 6) {
    const double n = static_cast<double>(a.size());
    std::vector<std::vector<double>> O(categories, std::vector<double>(categories, 0.0));
    std::vector<double> ma(categories, 0.0), mb(categories, 0.0);
    for (size_t k = 0; k < a.size(); ++k) {
        O[a[k]][b[k]] += 1.0 / n;
        ma[a[k]] += 1.0 / n;
        mb[b[k]] += 1.0 / n;
    }
    double num = 0.0, den = 0.0;
    for (int i = 0; i < categories; ++i)
        for (int j = 0; j < categories; ++j) {
            double w = static_cast<double>((i - j) * (i - j));
            num += w * O[i][j];
            den += w * ma[i] * mb[j];
        }
    if (den == 0.0) return 1.0;
    return 1.0 - num / den;
}

void criterion_2() {
    std::mt19937 rng(190823);
    std::uniform_int_distribution<int> cat(0, 5);
    for (int t = 0; t < 200; ++t) {
        size_t n = 5 + static_cast<size_t>(rng() % 80);
        std::vector<int> a(n), b(n);
        for (auto& x : a) x = cat(rng);
        for (auto& x : b) x = cat(rng);
        double lib = quadratic_weighted_kappa(a, b);
        double oracle = qwk_oracle(a, b);
        if (std::abs(lib - oracle) > 1e-12) {
            sub(false, "oracle deviation > 1e-12 on case " + std::to_string(t));
            break;
        }
        if (quadratic_weighted_kappa(b, a) != lib) {
            sub(false, "rater-swap symmetry violated on case " + std::to_string(t));
            break;
        }
    }
    std::vector<int> same = {0, 5, 3, 2, 2, 4, 1};
    sub(quadratic_weighted_kappa(same, same) == 1.0, "kappa != 1.0 on identical vectors");
    finish(2, "quadratic weighted kappa: oracle equivalence (1e-12), exact 1.0, swap symmetry");
}

// ---------------------------------------------------------------------------
// 3. Closest-match enumeration and the all-tie semantics
// ---------------------------------------------------------------------------

void criterion_3() {
    std::mt19937 rng(777);
    std::uniform_int_distribution<int> cat(0, 5);
    std::vector<DimensionScores> consensus;
    std::map<std::string, std::vector<DimensionScores>> runs;
    const std::vector<std::string> methods = {"alpha", "beta", "gamma"};
    for (int i = 0; i < 10; ++i) {
        consensus.push_back({cat(rng), cat(rng), cat(rng)});
        for (const auto& m : methods) runs[m].push_back({cat(rng), cat(rng), cat(rng)});
    }
    std::map<std::string, int> credit;
    for (int i = 0; i < 10; ++i) {
        int best = 1 << 20;
        for (const auto& m : methods)
            best = std::min(best, runs[m][i].l1_distance(consensus[i]));
        for (const auto& m : methods)
            if (runs[m][i].l1_distance(consensus[i]) == best) credit[m]++;
    }
    auto rates = closest_match_rate(runs, consensus);
    for (const auto& m : methods)
        sub(std::abs(rates[m] - 10.0 * credit[m]) <= 1e-12,
            m + " rate differs from exhaustive enumeration");

    // all-tie fixture: every method equidistant on every conversation
    std::map<std::string, std::vector<DimensionScores>> tie;
    std::vector<DimensionScores> tie_consensus(4, DimensionScores{3, 3, 3});
    tie["a"] = std::vector<DimensionScores>(4, DimensionScores{4, 3, 3});
    tie["b"] = std::vector<DimensionScores>(4, DimensionScores{2, 3, 3});
    tie["c"] = std::vector<DimensionScores>(4, DimensionScores{3, 4, 3});
    auto tie_rates = closest_match_rate(tie, tie_consensus);
    double total = 0.0;
    for (const auto& [name, rate] : tie_rates) {
        sub(rate == 100.0, name + " should be credited on every tied conversation");
        total += rate;
    }
    sub(total == 300.0, "tie rates should sum to 300%");
    finish(3, "closest-match equals exhaustive enumeration; all-tie fixture sums to 300%");
}

// ---------------------------------------------------------------------------
// 4. Pipeline call-count contracts and homo/hetero config equivalence
// ---------------------------------------------------------------------------

void criterion_4() {
    json defaults = {
        {"score.h1",
         {{"scores", {{"grammar", 4}, {"vocabulary", 3}, {"ic", 4}}},
          {"rationale", "initial"},
          {"advanced_usage", json::array()}}},
        {"score.h2",
         {{"scores", {{"grammar", 4}, {"vocabulary", 4}, {"ic", 4}}},
          {"rationale", "refined"},
          {"advanced_usage", json::array()}}},
        {"score.h3",
         {{"scores", {{"grammar", 4}, {"vocabulary", 4}, {"ic", 4}}},
          {"feedback", "fb"},
          {"rationale", "judge"}}},
        {"score.sample",
         {{"scores", {{"grammar", 3}, {"vocabulary", 3}, {"ic", 3}}},
          {"rationale", "sample"},
          {"advanced_usage", json::array()}}},
        {"score.draft",
         {{"scores", {{"grammar", 3}, {"vocabulary", 3}, {"ic", 3}}},
          {"rationale", "draft"},
          {"advanced_usage", json::array()}}},
        {"score.refine",
         {{"scores", {{"grammar", 3}, {"vocabulary", 4}, {"ic", 3}}},
          {"rationale", "refined draft"},
          {"advanced_usage", json::array()}}},
        {"rec.h1",
         {{"grammar_picks", {"questions_wh"}}, {"vocab_picks", {"food_drink"}},
          {"observations", "obs"}, {"ic_feedback", "icf"}}},
        {"rec.h2",
         {{"grammar_picks", {"questions_wh"}}, {"vocab_picks", {"food_drink"}},
          {"observations", "obs"}, {"ic_feedback", "icf"}}},
        {"rec.h3",
         {{"grammar_top", {"questions_wh"}}, {"vocab_top", {"food_drink"}},
          {"ic_feedback", "icf"}, {"rationale", "why"}}},
        {"rec.sample",
         {{"grammar_picks", {"questions_wh"}}, {"vocab_picks", json::array()},
          {"observations", "obs"}, {"ic_feedback", "icf"}}},
        {"rec.draft",
         {{"grammar_picks", {"questions_wh"}}, {"vocab_picks", json::array()},
          {"observations", "obs"}, {"ic_feedback", "icf"}}},
        {"rec.refine",
         {{"grammar_picks", {"questions_wh"}}, {"vocab_picks", json::array()},
          {"observations", "obs"}, {"ic_feedback", "icf"}}},
    };
    json script = {{"defaults", defaults}};

    Conversation conv;
    conv.id = "acc";
    conv.learner_id = "L";
    conv.lesson_ref = {2, 2};
    conv.turns = {{"partner", "hello", 0}, {"learner", "hello there", 1}};
    ExposureSet exposure = cumulative_exposure(demo(), {2, 2}, true);

    auto run_counts = [&](MethodKind kind) {
        auto mock = std::make_shared<MockBackend>(MockScript(script));
        BackendSet set;
        set.add(mock);
        MethodConfig config;
        config.kind = kind;
        config.backend = "mock";
        config.seed = 7;
        PipelineEngine engine(demo(), assets(), set);
        ScoreResult score = engine.run_scoring(conv, exposure, config);
        int scoring_calls = mock->call_count();
        Recommendation rec = engine.run_recommendation(conv, exposure, score, config);
        int rec_calls = mock->call_count() - scoring_calls;
        return std::tuple(scoring_calls, rec_calls, json(score), json(rec));
    };

    auto [hs_calls, hr_calls, hs, hr] = run_counts(MethodKind::hetero_mad);
    sub(hs_calls == 7, "HeteroMAD scoring made " + std::to_string(hs_calls) + " calls, want 7");
    sub(hr_calls == 7,
        "HeteroMAD recommendation made " + std::to_string(hr_calls) + " calls, want 7");

    auto [sc_calls, scr_calls, sc_s, sc_r] = run_counts(MethodKind::self_consistency);
    sub(sc_calls == 3, "SelfConsistency scoring made " + std::to_string(sc_calls) + ", want 3");
    sub(scr_calls == 3,
        "SelfConsistency recommendation made " + std::to_string(scr_calls) + ", want 3");

    auto [sr_calls, srr_calls, sr_s, sr_r] = run_counts(MethodKind::self_refine);
    sub(sr_calls == 3, "SelfRefine scoring made " + std::to_string(sr_calls) + ", want 1+2");
    sub(srr_calls == 3,
        "SelfRefine recommendation made " + std::to_string(srr_calls) + ", want 1+2");

    auto [os_calls, or_calls, os, orr] = run_counts(MethodKind::homo_mad);
    sub(os_calls == 7 && or_calls == 7, "HomoMAD call counts differ from 7+7");

    auto strip = [](json j) {
        j.erase("method_tag");
        if (j.contains("phase_log") && j["phase_log"].contains("context")) {
            j["phase_log"]["context"].erase("method");
            j["phase_log"]["context"].erase("label");
            j["phase_log"]["context"].erase("warnings");
        }
        return j;
    };
    sub(strip(hs) == strip(os),
        "HeteroMAD(identical bindings) scoring output differs from HomoMAD");
    sub(strip(hr) == strip(orr),
        "HeteroMAD(identical bindings) recommendation output differs from HomoMAD");
    finish(4, "retry-free call counts (7/7 MAD, 3 SC, 1+2 SR) and homo/hetero equivalence");
}

// ---------------------------------------------------------------------------
// 5. Mastery state machine: 1,000-event randomized simulation + replay
// ---------------------------------------------------------------------------

void criterion_5() {
    auto start = std::chrono::steady_clock::now();
    LearnerEngine engine(demo());
    std::mt19937 rng(20250809);

    int total_events = 0;
    int learner_index = 0;
    int pass_events = 0;
    bool invariants_ok = true;
    std::string first_violation;

    auto violate = [&](const std::string& what) {
        if (invariants_ok) first_violation = what;
        invariants_ok = false;
    };

    while (total_events < 1000) {
        ++learner_index;
        std::string learner_id = "sim-" + std::to_string(learner_index);
        LearnerState state = engine.initial_state(learner_id);
        std::vector<json> log;
        // deficits awaiting retirement: (block, group) -> first-seen flag
        std::set<std::pair<int, int>> open_deficits;

        auto apply = [&](const json& event, TransitionNotes* notes = nullptr) {
            state = engine.apply(std::move(state), event, notes);
            log.push_back(event);
            ++total_events;
        };

        while (total_events < 1000) {
            const ConceptBlock* cb = demo().find_block(state.current_block);
            if (!cb) {
                // curriculum finished: drain remaining reviews
                if (state.carry_forward.empty()) break;
                auto g = state.carry_forward[rng() % state.carry_forward.size()];
                apply(json{{"type", "review_result"}, {"origin_block", g.origin_block},
                           {"review_index", g.review_index}, {"score", 100}});
                open_deficits.erase({g.origin_block, g.review_index});
                continue;
            }

            int prev_block = state.current_block;
            int prev_day = state.clock_day;

            for (const auto& g : cb->groups) {
                int pct = 40 + static_cast<int>(rng() % 61);
                json e;
                if (pct >= 100) {
                    e = json{{"type", "gvc_result"}, {"block", prev_block}, {"group", g.index},
                             {"mastery_percent", 100},
                             {"missed_skills", json::array()},
                             {"missed_vocab", json::array()}};
                } else {
                    e = json{{"type", "gvc_result"}, {"block", prev_block}, {"group", g.index},
                             {"mastery_percent", pct},
                             {"missed_skills", {*g.grammar.taught_rules.begin()}},
                             {"missed_vocab",
                              json::array({*g.vocabulary.topic_ids.begin()})}};
                }
                apply(e);
            }
            if (!state.carry_forward.empty() && rng() % 2 == 0) {
                auto g = state.carry_forward[rng() % state.carry_forward.size()];
                int score = (rng() % 3 == 0) ? 100 : 50 + static_cast<int>(rng() % 50);
                apply(json{{"type", "review_result"}, {"origin_block", g.origin_block},
                           {"review_index", g.review_index}, {"score", score}});
                if (score == 100) {
                    open_deficits.erase({g.origin_block, g.review_index});
                    if (state.find_review(g.origin_block, g.review_index))
                        violate("100% re-test did not retire the review group");
                }
            }

            TransitionNotes notes;
            apply(json{{"type", "evaluate_block"}, {"block", prev_block}}, &notes);

            if (!notes.decision) violate("evaluation produced no decision");
            bool advanced = state.current_block > prev_block;
            if (advanced && !(notes.decision && notes.decision->passed))
                violate("block advanced without a passing decision");
            if (notes.decision && notes.decision->passed != advanced)
                violate("pass/advance mismatch");
            if (state.current_block < prev_block) violate("current_block decreased");

            // every sub-100 native group now has exactly one carry-forward entry
            for (const auto& g : cb->groups) {
                int count = 0;
                for (const auto& r : state.carry_forward)
                    if (r.origin_block == prev_block && r.review_index == g.index) ++count;
                if (count > 1) violate("duplicate review group for one source group");
            }
            if (advanced) {
                ++pass_events;
                // every pass schedules +2/+5 for every carried group
                for (const auto& r : state.carry_forward) {
                    bool has2 = std::find(r.due_dates.begin(), r.due_dates.end(),
                                          prev_day + 2) != r.due_dates.end();
                    bool has5 = std::find(r.due_dates.begin(), r.due_dates.end(),
                                          prev_day + 5) != r.due_dates.end();
                    if (!has2 || !has5) violate("pass event missing +2/+5 schedule");
                    open_deficits.insert({r.origin_block, r.review_index});
                }
            }
            // conservation: open deficits stay represented until retired
            for (const auto& [b, i] : open_deficits) {
                const ReviewGroup* r = state.find_review(b, i);
                if (!r) violate("deficit dropped without a 100% re-test");
                else if (r->target_skills.empty() && r->target_vocab.empty())
                    violate("review group lost its targets");
            }

            apply(json{{"type", "advance_clock"},
                       {"day", state.clock_day + 1 + static_cast<int>(rng() % 4)}});
        }

        LearnerState replayed = engine.replay(learner_id, log);
        if (json(replayed).dump() != json(state).dump())
            violate("replay of the event log is not bit-identical");
    }

    auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start);
    sub(invariants_ok, "invariant violation: " + first_violation);
    sub(pass_events > 0, "simulation never passed a block");
    sub(total_events >= 1000, "fewer than 1000 events applied");
    char line[96];
    std::snprintf(line, sizeof(line), "runtime %.2fs exceeds 10s budget", elapsed.count());
    sub(elapsed.count() < 10.0, line);
    finish(5, "1,000-event randomized mastery simulation with bit-identical replay (<10s)");
}

// ---------------------------------------------------------------------------
// 6. End-to-end golden benchmark run through the CLI, twice
// ---------------------------------------------------------------------------

void criterion_6() {
    fs::path out1 = fs::temp_directory_path() / "blockwise_acc_bench1";
    fs::path out2 = fs::temp_directory_path() / "blockwise_acc_bench2";
    fs::remove_all(out1);
    fs::remove_all(out2);

    std::string base = std::string(BLOCKWISE_CLI_PATH) + " benchmark --corpus " +
                       fixture("benchmark_corpus.jsonl") + " --methods " +
                       fixture("configs/benchmark_methods.json") + " --curriculum " +
                       fixture("curriculum/a2_demo.json") + " --assets " +
                       std::string(BLOCKWISE_ASSET_DIR) + " --mock " +
                       fixture("mocks/benchmark_mock.json") + " --seed 7 --out ";
    int rc1 = std::system((base + out1.string() + " > /dev/null 2>&1").c_str());
    int rc2 = std::system((base + out2.string() + " > /dev/null 2>&1").c_str());
    sub(rc1 == 0, "first CLI invocation failed");
    sub(rc2 == 0, "second CLI invocation failed");

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    };
    for (const char* name :
         {"report.csv", "report.md", "hist_grammar.csv", "hist_vocabulary.csv", "hist_ic.csv"}) {
        std::string a = slurp(out1 / name);
        sub(!a.empty(), std::string(name) + " missing or empty");
        sub(a == slurp(out2 / name), std::string(name) + " differs between invocations");
        sub(a == slurp(fixture(std::string("golden/") + name)),
            std::string(name) + " differs from the checked-in golden");
    }
    fs::remove_all(out1);
    fs::remove_all(out2);
    finish(6, "20-conversation scripted benchmark is byte-identical to the golden, twice");
}

// ---------------------------------------------------------------------------
// 7. Curriculum validator catches the seeded violation set with exact loci
// ---------------------------------------------------------------------------

void criterion_7() {
    sub(validate_curriculum(demo()).valid(), "violation-free fixture reported violations");

    {
        Curriculum cur = load_curriculum(fixture("curriculum/ordering_violations.json"));
        std::set<std::pair<int, int>> loci;
        for (const auto& v : validate_curriculum(cur).violations) {
            sub(v.kind == Violation::Kind::Ordering, "unexpected violation kind in ordering set");
            loci.insert({v.block, v.group});
        }
        std::set<std::pair<int, int>> expected = {{1, 1}, {1, 2}, {2, 1}, {2, 2}, {3, 1}};
        sub(loci == expected, "ordering loci mismatch (want 5 exact positions)");
    }
    {
        Curriculum cur = load_curriculum(fixture("curriculum/coverage_violations.json"));
        std::set<std::tuple<std::string, int, int>> loci;
        for (const auto& v : validate_curriculum(cur).violations) {
            sub(v.kind == Violation::Kind::Coverage, "unexpected violation kind in coverage set");
            loci.insert({v.item, v.block, v.group});
        }
        std::set<std::tuple<std::string, int, int>> expected = {{"coffee", 1, 1},
                                                                {"passport", 1, 1},
                                                                {"ticket", 2, 1},
                                                                {"snow", 2, 2},
                                                                {"umbrella", 3, 1}};
        sub(loci == expected, "coverage loci mismatch (want 5 exact item/position pairs)");
    }
    {
        Curriculum cur = load_curriculum(fixture("curriculum/dangling_violations.json"));
        std::set<std::tuple<std::string, int, int>> loci;
        for (const auto& v : validate_curriculum(cur).violations) {
            sub(v.kind == Violation::Kind::DanglingReference,
                "unexpected violation kind in dangling set");
            loci.insert({v.item, v.block, v.group});
        }
        std::set<std::tuple<std::string, int, int>> expected = {
            {"past_perfect", 1, 1}, {"astronomy", 2, 2}, {"superlatives", 3, 2}};
        sub(loci == expected, "dangling-reference loci mismatch (want 3 exact ids)");
    }
    finish(7, "validator catches 5 ordering + 5 coverage + 3 dangling violations with exact loci");
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::string(argv[i]) == "--criterion" && i + 1 < argc) only = std::atoi(argv[i + 1]);
    }
    using Fn = void (*)();
    const Fn criteria[] = {criterion_1, criterion_2, criterion_3, criterion_4,
                           criterion_5, criterion_6, criterion_7};
    try {
        if (only >= 1 && only <= 7) {
            criteria[only - 1]();
        } else {
            for (Fn fn : criteria) fn();
        }
    } catch (const std::exception& e) {
        std::cout << "criterion aborted with exception: " << e.what() << "\n";
        return 3;
    }
    return failures == 0 ? 0 : 1;
}
