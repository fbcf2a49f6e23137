#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fixture(const std::string& name) {
    return std::string(BLOCKWISE_FIXTURE_DIR) + "/" + name;
}

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args, bool merge_stderr = true) {
    std::string cmd = std::string(BLOCKWISE_CLI_PATH) + " " + args +
                      (merge_stderr ? " 2>&1" : " 2>/dev/null");
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult result;
    char buf[4096];
    size_t n;
    while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) result.output.append(buf, n);
    int rc = pclose(pipe);
    result.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    return result;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string pipeline_flags() {
    return " --curriculum " + fixture("curriculum/a2_demo.json") + " --assets " +
           std::string(BLOCKWISE_ASSET_DIR) + " --mock " + fixture("mocks/echo_mock.json") +
           " --method " + fixture("configs/hetero_mad.json") + " --seed 7";
}

}  // namespace

TEST_CASE("validate: exit codes 0 / 1 / 2") {
    auto ok = run_cli("validate " + fixture("curriculum/a2_demo.json"));
    CHECK(ok.exit_code == 0);
    CHECK(ok.output.find("curriculum valid") != std::string::npos);

    auto bad = run_cli("validate " + fixture("curriculum/coverage_violations.json"));
    CHECK(bad.exit_code == 1);
    CHECK(bad.output.find("CoverageViolation") != std::string::npos);
    CHECK(bad.output.find("t=2, i=1") != std::string::npos);

    auto missing = run_cli("validate /nonexistent/curriculum.json");
    CHECK(missing.exit_code == 2);
}

TEST_CASE("score: deterministic document, audit controls the phase log") {
    std::string base = "score --conversation " + fixture("conversations/cli_conv.json") +
                       pipeline_flags();

    auto first = run_cli(base, /*merge_stderr=*/false);
    REQUIRE(first.exit_code == 0);
    json doc = json::parse(first.output);
    CHECK(doc["consensus"]["grammar"] == 4);
    CHECK(doc["consensus"]["vocabulary"] == 4);
    CHECK(doc["consensus"]["ic"] == 4);
    CHECK(doc["method_tag"] == "HeteroMAD");
    CHECK_FALSE(doc.contains("phase_log"));

    auto second = run_cli(base, /*merge_stderr=*/false);
    CHECK(first.output == second.output);  // golden-file stable

    auto audited = run_cli(base + " --audit", /*merge_stderr=*/false);
    json audited_doc = json::parse(audited.output);
    REQUIRE(audited_doc.contains("phase_log"));
    CHECK(audited_doc["phase_log"]["entries"].size() == 8);  // 3+critic+3+judge
}

TEST_CASE("recommend: emits picks from the mock consensus") {
    auto r = run_cli("recommend --conversation " + fixture("conversations/cli_conv.json") +
                         pipeline_flags(),
                     /*merge_stderr=*/false);
    REQUIRE(r.exit_code == 0);
    json doc = json::parse(r.output);
    CHECK(doc["grammar_top"] == json::array({"questions_wh"}));
    CHECK(doc["vocab_top"] == json::array({"food_drink"}));
    CHECK_FALSE(doc.contains("phase_log"));

    auto audited = run_cli("recommend --conversation " + fixture("conversations/cli_conv.json") +
                               pipeline_flags() + " --audit",
                           /*merge_stderr=*/false);
    json audited_doc = json::parse(audited.output);
    CHECK(audited_doc.contains("phase_log"));
    REQUIRE(audited_doc.contains("scoring"));
    CHECK(audited_doc["scoring"].contains("phase_log"));
}

TEST_CASE("score --format md renders a table") {
    auto r = run_cli("score --conversation " + fixture("conversations/cli_conv.json") +
                         pipeline_flags() + " --format md",
                     /*merge_stderr=*/false);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("| Grammar | 4 |") != std::string::npos);
}

TEST_CASE("unreachable backend exits with the environment code") {
    setenv("BLOCKWISE_QWEN_KEY", "dummy-key", 1);
    auto r = run_cli("score --conversation " + fixture("conversations/cli_conv.json") +
                     " --curriculum " + fixture("curriculum/a2_demo.json") + " --assets " +
                     std::string(BLOCKWISE_ASSET_DIR) + " --method " +
                     fixture("configs/hetero_mad.json") + " --backends " +
                     fixture("configs/backends_http.json"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("error:") != std::string::npos);
}

TEST_CASE("simulate: 30-day timeline matches the hand-simulated golden") {
    auto r = run_cli("simulate --script " + fixture("simulate/thirty_day.json") +
                         " --days 30 --curriculum " + fixture("curriculum/a2_demo.json"),
                     /*merge_stderr=*/false);
    REQUIRE(r.exit_code == 0);
    CHECK(r.output == slurp(fixture("golden/thirty_day.txt")));
}

TEST_CASE("simulate: all-100 fixture advances every block with empty carry-forward") {
    fs::path dir = fs::temp_directory_path() / "blockwise_cli_sim100";
    fs::remove_all(dir);
    fs::create_directories(dir);
    json days = json::array();
    for (int t = 1; t <= 3; ++t) {
        json events = json::array();
        for (int i = 1; i <= 2; ++i)
            events.push_back({{"type", "gvc_result"}, {"block", t}, {"group", i},
                              {"mastery_percent", 100},
                              {"missed_skills", json::array()},
                              {"missed_vocab", json::array()}});
        events.push_back({{"type", "evaluate_block"}, {"block", t}});
        days.push_back({{"day", t - 1}, {"events", events}});
    }
    {
        std::ofstream f(dir / "all100.json");
        f << json{{"learner_id", "ace"}, {"days", days}}.dump();
    }
    auto r = run_cli("simulate --script " + (dir / "all100.json").string() +
                         " --days 5 --curriculum " + fixture("curriculum/a2_demo.json") +
                         " --out " + (dir / "state").string(),
                     /*merge_stderr=*/false);
    REQUIRE(r.exit_code == 0);
    for (int t = 1; t <= 3; ++t)
        CHECK(r.output.find("block " + std::to_string(t) + " evaluated: PASS") !=
              std::string::npos);
    CHECK(r.output.find("review group") == std::string::npos);

    json state = json::parse(slurp(dir / "state" / "ace.state.json"));
    CHECK(state["current_block"] == 4);
    CHECK(state["carry_forward"].empty());
    fs::remove_all(dir);
}

TEST_CASE("simulate: inconsistent script names the day and event") {
    fs::path dir = fs::temp_directory_path() / "blockwise_cli_sim";
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "bad.json");
        f << R"({"learner_id":"L","days":[{"day":0,"events":[
              {"type":"review_result","origin_block":9,"review_index":1,"score":50}]}]})";
    }
    auto r = run_cli("simulate --script " + (dir / "bad.json").string() +
                     " --days 5 --curriculum " + fixture("curriculum/a2_demo.json"));
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("day 0") != std::string::npos);
    CHECK(r.output.find("review_result") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("learner step/status roundtrip with persisted state") {
    fs::path dir = fs::temp_directory_path() / "blockwise_cli_learner";
    fs::remove_all(dir);
    fs::create_directories(dir);

    auto write_event = [&](const std::string& name, const json& e) {
        std::ofstream f(dir / name);
        f << e.dump();
        return (dir / name).string();
    };
    std::string flags = " --state-dir " + (dir / "state").string() + " --curriculum " +
                        fixture("curriculum/a2_demo.json") + " --learner L1";

    auto e1 = write_event("e1.json", {{"type", "gvc_result"}, {"block", 1}, {"group", 1},
                                      {"mastery_percent", 100},
                                      {"missed_skills", json::array()},
                                      {"missed_vocab", json::array()}});
    auto r1 = run_cli("learner step --event " + e1 + flags);
    CHECK(r1.exit_code == 0);
    CHECK(r1.output.find("gvc result (1,1) mastery 100") != std::string::npos);

    auto e2 = write_event("e2.json", {{"type", "gvc_result"}, {"block", 1}, {"group", 2},
                                      {"mastery_percent", 80},
                                      {"missed_skills", {"questions_wh"}},
                                      {"missed_vocab", json::array()}});
    CHECK(run_cli("learner step --event " + e2 + flags).exit_code == 0);

    auto e3 = write_event("e3.json", {{"type", "evaluate_block"}, {"block", 1}});
    auto r3 = run_cli("learner step --event " + e3 + flags);
    CHECK(r3.exit_code == 0);
    CHECK(r3.output.find("PASS") != std::string::npos);

    auto status = run_cli("learner status --learner L1 --state-dir " + (dir / "state").string());
    CHECK(status.exit_code == 0);
    CHECK(status.output.find("block 2") != std::string::npos);
    CHECK(status.output.find("review (1,2)") != std::string::npos);

    // the event log replays: stepping an out-of-order event fails cleanly
    auto bad = write_event("bad.json", {{"type", "gvc_result"}, {"block", 9}, {"group", 1},
                                        {"mastery_percent", 100},
                                        {"missed_skills", json::array()},
                                        {"missed_vocab", json::array()}});
    CHECK(run_cli("learner step --event " + bad + flags).exit_code == 1);

    fs::remove_all(dir);
}

TEST_CASE("--config supplies defaults and is validated up front") {
    fs::path dir = fs::temp_directory_path() / "blockwise_cli_appcfg";
    fs::remove_all(dir);
    fs::create_directories(dir);

    SECTION("valid config drives a score run") {
        std::ofstream f(dir / "app.json");
        f << json{{"curriculum", fixture("curriculum/a2_demo.json")},
                  {"method", fixture("configs/hetero_mad.json")},
                  {"assets", std::string(BLOCKWISE_ASSET_DIR)},
                  {"assets_dir", std::string(BLOCKWISE_ASSET_DIR)},
                  {"seed", 7}}
                 .dump();
        f.close();
        auto r = run_cli("score --conversation " + fixture("conversations/cli_conv.json") +
                             " --config " + (dir / "app.json").string() + " --mock " +
                             fixture("mocks/echo_mock.json"),
                         /*merge_stderr=*/false);
        REQUIRE(r.exit_code == 0);
        CHECK(json::parse(r.output)["consensus"]["grammar"] == 4);
    }
    SECTION("config referencing a missing file fails before running") {
        std::ofstream f(dir / "bad.json");
        f << json{{"curriculum", (dir / "missing.json").string()},
                  {"assets_dir", std::string(BLOCKWISE_ASSET_DIR)}}
                 .dump();
        f.close();
        auto r = run_cli("score --conversation " + fixture("conversations/cli_conv.json") +
                         " --config " + (dir / "bad.json").string() + " --mock " +
                         fixture("mocks/echo_mock.json") + " --method " +
                         fixture("configs/hetero_mad.json"));
        CHECK(r.exit_code == 2);
    }
    fs::remove_all(dir);
}

TEST_CASE("benchmark CLI: byte-identical across invocations and against the golden") {
    fs::path out1 = fs::temp_directory_path() / "blockwise_cli_bench1";
    fs::path out2 = fs::temp_directory_path() / "blockwise_cli_bench2";
    fs::remove_all(out1);
    fs::remove_all(out2);

    std::string base = "benchmark --corpus " + fixture("benchmark_corpus.jsonl") +
                       " --methods " + fixture("configs/benchmark_methods.json") +
                       " --curriculum " + fixture("curriculum/a2_demo.json") + " --assets " +
                       std::string(BLOCKWISE_ASSET_DIR) + " --mock " +
                       fixture("mocks/benchmark_mock.json") + " --seed 7 --out ";

    auto r1 = run_cli(base + out1.string(), /*merge_stderr=*/false);
    REQUIRE(r1.exit_code == 0);
    CHECK(r1.output.find("HeteroMAD") != std::string::npos);
    auto r2 = run_cli(base + out2.string(), /*merge_stderr=*/false);
    REQUIRE(r2.exit_code == 0);

    for (const char* name :
         {"report.csv", "report.md", "hist_grammar.csv", "hist_vocabulary.csv", "hist_ic.csv"}) {
        CHECK(slurp(out1 / name) == slurp(out2 / name));
        CHECK(slurp(out1 / name) == slurp(fixture(std::string("golden/") + name)));
    }
    // run archives are deterministic too
    CHECK(slurp(out1 / "runs" / "HeteroMAD.jsonl") == slurp(out2 / "runs" / "HeteroMAD.jsonl"));
    fs::remove_all(out1);
    fs::remove_all(out2);
}
