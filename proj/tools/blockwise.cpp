// blockwise — single entry point for curriculum validation, conversation
// scoring/recommendation, benchmarking, learner-state progression, and
// virtual-clock simulation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "blockwise/benchmark.hpp"
#include "blockwise/config.hpp"
#include "blockwise/curriculum.hpp"
#include "blockwise/mastery.hpp"
#include "blockwise/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blockwise;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;  // validation/metric/progression failures
constexpr int kExitEnv = 2;     // I/O, parse, config, backend failures

struct CommonOpts {
    std::string config_path;
    std::string curriculum_path;
    std::string backends_path;
    std::string method_path;
    std::string assets_dir = "assets";
    std::string state_dir = "state";
    std::string mock_path;
    std::optional<std::uint64_t> seed;
    bool audit = false;
    std::string out;
    std::string format = "json";
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_method = true) {
    cmd->add_option("--config", o.config_path, "application config file (JSON)");
    cmd->add_option("--curriculum", o.curriculum_path, "curriculum file (JSON)");
    cmd->add_option("--assets", o.assets_dir, "asset directory (prompts, schemas, rubric)");
    if (with_method) {
        cmd->add_option("--backends", o.backends_path, "backend config file (JSON array)");
        cmd->add_option("--method", o.method_path, "method config file (JSON)");
        cmd->add_option("--mock", o.mock_path,
                        "mock script; replaces every backend with a scripted mock");
    }
    cmd->add_option("--seed", o.seed, "root seed for all pipeline randomness");
    cmd->add_option("--out", o.out, "write primary output here instead of stdout");
    cmd->add_option("--format", o.format, "output format: json, md, csv")
        ->check(CLI::IsMember({"json", "md", "csv"}));
}

/// Fold an optional --config file into unset options.
void resolve(CommonOpts& o) {
    if (o.config_path.empty()) return;
    AppConfig cfg = load_app_config(o.config_path);
    if (o.curriculum_path.empty()) o.curriculum_path = cfg.curriculum;
    if (o.backends_path.empty()) o.backends_path = cfg.backends;
    if (o.method_path.empty()) o.method_path = cfg.method;
    if (o.assets_dir == "assets") o.assets_dir = cfg.assets_dir;
    if (o.state_dir == "state") o.state_dir = cfg.state_dir;
    if (!o.seed) o.seed = cfg.seed;
    if (cfg.verbosity > 0) {
        std::cerr << "config: curriculum=" << o.curriculum_path
                  << " backends=" << o.backends_path << " method=" << o.method_path
                  << " assets=" << o.assets_dir << " state=" << o.state_dir << "\n";
    }
}

void write_primary(const CommonOpts& o, const std::string& text) {
    if (o.out.empty()) {
        std::cout << text;
        if (!text.empty() && text.back() != '\n') std::cout << "\n";
    } else {
        std::ofstream f(o.out);
        if (!f) throw IoError("cannot write " + o.out);
        f << text;
        if (!text.empty() && text.back() != '\n') f << "\n";
    }
}

struct PipelineSetup {
    Curriculum curriculum;
    std::unique_ptr<AssetStore> assets;
    BackendSet backends;
    MethodConfig method;
};

PipelineSetup setup_pipeline(CommonOpts& o) {
    resolve(o);
    if (o.curriculum_path.empty()) throw ConfigError("a curriculum file is required");
    if (o.method_path.empty()) throw ConfigError("a method config file is required");

    PipelineSetup s;
    s.curriculum = load_curriculum(o.curriculum_path);
    s.assets = std::make_unique<AssetStore>(o.assets_dir);
    s.method = load_method_config(o.method_path);
    if (o.seed) s.method.seed = *o.seed;

    if (!o.mock_path.empty()) {
        MockScript script = MockScript::from_file(o.mock_path);
        script.check_against_schemas(*s.assets);
        s.backends.add(std::make_shared<MockBackend>(std::move(script)));
        s.method.bindings.clear();
        s.method.backend = "mock";
    } else if (!o.backends_path.empty()) {
        s.backends = build_backend_set(load_backend_refs(o.backends_path));
    } else {
        throw ConfigError("either --backends or --mock is required");
    }

    for (const auto& warning : validate_method_config(s.method))
        std::cerr << "warning: " << warning << "\n";
    return s;
}

std::string render_score(const ScoreResult& r, const CommonOpts& o) {
    if (o.format == "md") {
        std::string md = "# Conversation scores (" + r.method_tag + ")\n\n";
        md += "| Dimension | Score |\n| --- | --- |\n";
        md += "| Grammar | " + std::to_string(r.consensus.grammar) + " |\n";
        md += "| Vocabulary | " + std::to_string(r.consensus.vocabulary) + " |\n";
        md += "| IC | " + std::to_string(r.consensus.ic) + " |\n\n";
        md += "Feedback: " + r.feedback + "\n";
        return md;
    }
    if (o.format == "csv") {
        std::string csv = "dimension,score\n";
        csv += "grammar," + std::to_string(r.consensus.grammar) + "\n";
        csv += "vocabulary," + std::to_string(r.consensus.vocabulary) + "\n";
        csv += "ic," + std::to_string(r.consensus.ic) + "\n";
        return csv;
    }
    json doc = r;
    if (!o.audit) doc.erase("phase_log");
    return doc.dump(2);
}

std::string render_recommendation(const Recommendation& r, const ScoreResult& score,
                                  const CommonOpts& o) {
    if (o.format == "md") {
        std::string md = "# Review recommendation\n\n";
        md += "Grammar: " + (r.grammar_top.empty() ? "(none)" : join(r.grammar_top, ", ")) + "\n\n";
        md += "Vocabulary: " + (r.vocab_top.empty() ? "(none)" : join(r.vocab_top, ", ")) + "\n\n";
        md += "IC feedback: " + r.ic_feedback + "\n";
        return md;
    }
    if (o.format == "csv") {
        std::string csv = "list,rank,id\n";
        for (size_t i = 0; i < r.grammar_top.size(); ++i)
            csv += "grammar," + std::to_string(i + 1) + "," + r.grammar_top[i] + "\n";
        for (size_t i = 0; i < r.vocab_top.size(); ++i)
            csv += "vocabulary," + std::to_string(i + 1) + "," + r.vocab_top[i] + "\n";
        return csv;
    }
    json doc = r;
    if (o.audit) {
        doc["scoring"] = score;
    } else {
        doc.erase("phase_log");
    }
    return doc.dump(2);
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_validate(const std::string& path, bool grammar_coverage) {
    Curriculum cur = load_curriculum(path);
    ValidateOptions opts;
    opts.grammar_coverage = grammar_coverage;
    ValidationReport report = validate_curriculum(cur, opts);
    std::cout << report.to_string();
    return report.valid() ? kExitOk : kExitDomain;
}

int cmd_score(CommonOpts& o, const std::string& conversation_path) {
    PipelineSetup s = setup_pipeline(o);
    Conversation conv = load_conversation(conversation_path);
    ExposureSet exposure = cumulative_exposure(s.curriculum, conv.lesson_ref, true);
    PipelineEngine engine(s.curriculum, *s.assets, s.backends);
    ScoreResult result = engine.run_scoring(conv, exposure, s.method);
    write_primary(o, render_score(result, o));
    return kExitOk;
}

int cmd_recommend(CommonOpts& o, const std::string& conversation_path) {
    PipelineSetup s = setup_pipeline(o);
    Conversation conv = load_conversation(conversation_path);
    ExposureSet exposure = cumulative_exposure(s.curriculum, conv.lesson_ref, true);
    PipelineEngine engine(s.curriculum, *s.assets, s.backends);
    ScoreResult score = engine.run_scoring(conv, exposure, s.method);
    Recommendation rec = engine.run_recommendation(conv, exposure, score, s.method);
    write_primary(o, render_recommendation(rec, score, o));
    return kExitOk;
}

int cmd_benchmark(CommonOpts& o, const std::string& corpus_path, const std::string& methods_path,
                  const std::string& out_dir, const std::string& acceptability, unsigned jobs) {
    resolve(o);
    if (o.curriculum_path.empty()) throw ConfigError("a curriculum file is required");
    Curriculum cur = load_curriculum(o.curriculum_path);
    AssetStore assets(o.assets_dir);
    auto corpus = load_corpus(corpus_path, assets);
    auto configs = load_method_configs(methods_path);

    BenchmarkOptions opts;
    opts.seed = o.seed.value_or(0);
    opts.acceptability_mode = acceptability == "exact_set" ? AcceptabilityMode::exact_set
                                                           : AcceptabilityMode::per_item;
    if (jobs > 0) opts.parallelism = jobs;

    BenchmarkHarness harness(cur, assets);
    std::vector<MethodRun> runs;
    if (!o.mock_path.empty()) {
        MockScript script = MockScript::from_file(o.mock_path);
        script.check_against_schemas(assets);
        opts.mock_script = std::move(script);
        for (const auto& config : configs) runs.push_back(harness.run_method(corpus, config, opts));
    } else if (!o.backends_path.empty()) {
        BackendSet backends = build_backend_set(load_backend_refs(o.backends_path));
        for (auto config : configs) {
            config.seed = opts.seed;
            runs.push_back(harness.run_method_with(corpus, std::move(config), backends, opts));
        }
    } else {
        throw ConfigError("benchmark needs --mock or --backends");
    }
    MetricReport report = harness.compute_metrics(corpus, runs, opts);
    emit_report(report, out_dir);
    persist_method_runs(runs, out_dir, report.seed);

    std::cout << "corpus: " << report.corpus_size << " conversations, "
              << report.methods.size() << " methods, seed " << report.seed << "\n";
    for (const auto& m : report.methods) {
        std::cout << m.method << ": average DOV "
                  << (m.dov ? format_double(m.dov->average) : "—") << ", closest match "
                  << (m.closest_match ? format_double(*m.closest_match) + "%" : "—")
                  << ", acceptability "
                  << (m.acceptability ? format_double(*m.acceptability) + "%" : "—");
        if (m.errors > 0) std::cout << " (" << m.errors << " errors)";
        std::cout << "\n";
    }
    std::cout << "report written to " << out_dir << "\n";
    return kExitOk;
}

int cmd_learner_step(CommonOpts& o, const std::string& learner_id,
                     const std::string& event_path) {
    resolve(o);
    if (o.curriculum_path.empty()) throw ConfigError("a curriculum file is required");
    Curriculum cur = load_curriculum(o.curriculum_path);
    LearnerEngine engine(cur);

    LearnerLock lock(o.state_dir, learner_id);  // single writer per learner
    LearnerState state;
    if (fs::exists(learner_state_path(o.state_dir, learner_id)))
        state = load_learner_state(o.state_dir, learner_id);
    else
        state = engine.initial_state(learner_id);

    std::ifstream in(event_path);
    if (!in) throw IoError("cannot open event file: " + event_path);
    json event;
    try {
        event = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("event: ") + e.what());
    }

    TransitionNotes notes;
    state = engine.apply(std::move(state), event, &notes);
    append_learner_event(o.state_dir, learner_id, event);
    save_learner_state(o.state_dir, state);
    for (const auto& line : notes.lines) std::cout << line << "\n";
    for (const auto& p : notes.dba_trigger)
        std::cout << "dba suggested for " << p.to_string() << "\n";
    return kExitOk;
}

int cmd_learner_status(CommonOpts& o, const std::string& learner_id) {
    resolve(o);
    LearnerState state = load_learner_state(o.state_dir, learner_id);
    std::cout << "learner " << state.learner_id << ": block " << state.current_block << ", day "
              << state.clock_day << "\n";
    std::cout << "session results: " << state.session_results.size() << "\n";
    if (state.carry_forward.empty()) {
        std::cout << "carry-forward: none\n";
    } else {
        std::cout << "carry-forward:\n";
        for (const auto& g : state.carry_forward) {
            std::cout << "  review (" << g.origin_block << "," << g.review_index
                      << ") targets skills={" << join(g.target_skills, ",") << "} vocab={"
                      << join(g.target_vocab, ",") << "}";
            if (!g.due_dates.empty()) {
                std::vector<std::string> days;
                for (int d : g.due_dates) days.push_back(std::to_string(d));
                std::cout << " due days [" << join(days, ", ") << "]";
            }
            if (g.last_score) std::cout << " last " << format_double(*g.last_score, 0);
            std::cout << "\n";
        }
    }
    if (!state.advanced_usage_log.empty())
        std::cout << "advanced usage: " << join(state.advanced_usage_log, ", ") << "\n";
    std::cout << "dba history: " << state.dba_history.size() << " record(s)\n";
    return kExitOk;
}

int cmd_simulate(CommonOpts& o, const std::string& script_path, int days) {
    resolve(o);
    if (o.curriculum_path.empty()) throw ConfigError("a curriculum file is required");
    Curriculum cur = load_curriculum(o.curriculum_path);
    LearnerEngine engine(cur);

    std::ifstream in(script_path);
    if (!in) throw IoError("cannot open simulation script: " + script_path);
    json script;
    try {
        script = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("simulation script: ") + e.what());
    }

    std::string learner_id = script.value("learner_id", "learner");
    LearnerState state = engine.initial_state(learner_id);
    std::vector<json> event_log;

    auto apply_logged = [&](const json& event, int day) {
        TransitionNotes notes;
        try {
            state = engine.apply(std::move(state), event, &notes);
        } catch (const Error& e) {
            throw DomainError("day " + std::to_string(day) + ", event " + event.dump() + ": " +
                              e.what());
        }
        event_log.push_back(event);
        for (const auto& line : notes.lines) std::cout << "day " << day << ": " << line << "\n";
        for (const auto& p : notes.dba_trigger)
            std::cout << "day " << day << ": dba suggested for " << p.to_string() << "\n";
    };

    for (const auto& day_entry : script.value("days", json::array())) {
        int day = day_entry.at("day").get<int>();
        if (day >= days) break;
        if (day > state.clock_day || (day == 0 && event_log.empty())) {
            json tick = {{"type", "advance_clock"}, {"day", day}};
            if (day > state.clock_day) {
                state = engine.apply(std::move(state), tick);
                event_log.push_back(tick);
            }
            std::cout << "-- day " << day << " --\n";
        }
        for (const auto& event : day_entry.value("events", json::array())) {
            if (event.value("type", "") == "begin_block") {
                SessionPlan plan = engine.begin_block(state, event.at("block").get<int>());
                std::cout << "day " << day << ": session plan for block " << plan.block << ":\n";
                for (const auto& e : plan.entries)
                    std::cout << "    " << e.to_string() << "\n";
                continue;
            }
            apply_logged(event, day);
        }
    }
    if (days - 1 > state.clock_day) {
        json tick = {{"type", "advance_clock"}, {"day", days - 1}};
        state = engine.apply(std::move(state), tick);
        event_log.push_back(tick);
        std::cout << "-- day " << (days - 1) << " --\n";
    }

    std::cout << "final state:\n" << json(state).dump(2) << "\n";

    if (!o.out.empty()) {
        fs::create_directories(o.out);
        save_learner_state(o.out, state);
        for (const auto& e : event_log) append_learner_event(o.out, learner_id, e);
        std::cout << "state and event log written to " << o.out << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"blockwise — adaptive language-learning orchestration engine"};
    app.require_subcommand(1);

    // validate
    auto* validate = app.add_subcommand("validate", "validate a curriculum file");
    std::string validate_path;
    bool grammar_coverage = false;
    validate->add_option("curriculum", validate_path, "curriculum JSON file")->required();
    validate->add_flag("--grammar-coverage", grammar_coverage,
                       "also check conversation grammar requirements against prior teaching");

    // score
    auto* score = app.add_subcommand("score", "score a conversation transcript");
    CommonOpts score_opts;
    std::string score_conv;
    score->add_option("--conversation", score_conv, "conversation JSON file")->required();
    score->add_flag("--audit", score_opts.audit, "include the full phase log");
    add_common(score, score_opts);

    // recommend
    auto* recommend =
        app.add_subcommand("recommend", "produce review recommendations for a conversation");
    CommonOpts rec_opts;
    std::string rec_conv;
    recommend->add_option("--conversation", rec_conv, "conversation JSON file")->required();
    recommend->add_flag("--audit", rec_opts.audit, "include the full phase logs");
    add_common(recommend, rec_opts);

    // benchmark
    auto* benchmark = app.add_subcommand("benchmark", "run every method over an annotated corpus");
    CommonOpts bench_opts;
    std::string corpus_path, methods_path, bench_out, acceptability = "per_item";
    unsigned jobs = 0;
    benchmark->add_option("--corpus", corpus_path, "annotated corpus (JSONL)")->required();
    benchmark->add_option("--methods", methods_path, "method configs (JSON array)")->required();
    benchmark->add_option("--out", bench_out, "output directory")->required();
    benchmark->add_option("--acceptability", acceptability, "per_item or exact_set")
        ->check(CLI::IsMember({"per_item", "exact_set"}));
    benchmark->add_option("--jobs", jobs, "parallel conversations (default: hardware)");
    benchmark->add_option("--mock", bench_opts.mock_path, "mock script driving all methods");
    benchmark->add_option("--backends", bench_opts.backends_path,
                          "backend config file for live runs");
    benchmark->add_option("--config", bench_opts.config_path, "application config file");
    benchmark->add_option("--curriculum", bench_opts.curriculum_path, "curriculum file");
    benchmark->add_option("--assets", bench_opts.assets_dir, "asset directory");
    benchmark->add_option("--seed", bench_opts.seed, "root seed");

    // learner
    auto* learner = app.add_subcommand("learner", "inspect or advance persisted learner state");
    learner->require_subcommand(1);
    auto* step = learner->add_subcommand("step", "apply one event to a learner's state");
    CommonOpts step_opts;
    std::string step_learner, step_event;
    step->add_option("--learner", step_learner, "learner id")->required();
    step->add_option("--event", step_event, "event JSON file")->required();
    step->add_option("--state-dir", step_opts.state_dir, "state directory");
    step->add_option("--config", step_opts.config_path, "application config file");
    step->add_option("--curriculum", step_opts.curriculum_path, "curriculum file");
    auto* status = learner->add_subcommand("status", "print a learner-state summary");
    CommonOpts status_opts;
    std::string status_learner;
    status->add_option("--learner", status_learner, "learner id")->required();
    status->add_option("--state-dir", status_opts.state_dir, "state directory");
    status->add_option("--config", status_opts.config_path, "application config file");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "drive the mastery machine over virtual days");
    CommonOpts sim_opts;
    std::string sim_script;
    int sim_days = 30;
    simulate->add_option("--script", sim_script, "scripted per-day activities (JSON)")->required();
    simulate->add_option("--days", sim_days, "number of virtual days")->required();
    simulate->add_option("--config", sim_opts.config_path, "application config file");
    simulate->add_option("--curriculum", sim_opts.curriculum_path, "curriculum file");
    simulate->add_option("--out", sim_opts.out, "directory for final state + event log");

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate->parsed()) return cmd_validate(validate_path, grammar_coverage);
        if (score->parsed()) return cmd_score(score_opts, score_conv);
        if (recommend->parsed()) return cmd_recommend(rec_opts, rec_conv);
        if (benchmark->parsed())
            return cmd_benchmark(bench_opts, corpus_path, methods_path, bench_out, acceptability,
                                 jobs);
        if (learner->parsed()) {
            if (step->parsed()) return cmd_learner_step(step_opts, step_learner, step_event);
            if (status->parsed()) return cmd_learner_status(status_opts, status_learner);
        }
        if (simulate->parsed()) return cmd_simulate(sim_opts, sim_script, sim_days);
    } catch (const PipelineError& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::cerr << "phase log:\n" << json(e.partial_log).dump(2) << "\n";
        return kExitEnv;
    } catch (const GenerationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEnv;
    } catch (const BackendError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEnv;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEnv;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEnv;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDomain;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDomain;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitEnv;
    }
    return kExitOk;
}
