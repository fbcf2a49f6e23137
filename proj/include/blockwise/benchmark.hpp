#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "blockwise/common.hpp"
#include "blockwise/conversation.hpp"
#include "blockwise/curriculum.hpp"
#include "blockwise/metrics.hpp"
#include "blockwise/mock.hpp"
#include "blockwise/pipeline.hpp"
#include "blockwise/schema.hpp"

namespace blockwise {

// Evaluation harness: ingest an expert-annotated corpus, run every configured
// method's scoring + recommendation pipeline over it, compute expert IRR and
// per-method agreement/quality metrics, and emit CSV/markdown reports plus
// histogram data.

struct AnnotatedConversation {
    Conversation conversation;
    DimensionScores rater_a;
    DimensionScores rater_b;
    DimensionScores consensus;  // ingested, never computed here
    std::set<GrammarSkillId> expert_grammar_top2;
    std::set<VocabTopicId> expert_vocab_top2;
};

inline void from_json(const nlohmann::json& j, AnnotatedConversation& a) {
    a.conversation = j.at("conversation").get<Conversation>();
    a.rater_a = j.at("rater_a").get<DimensionScores>();
    a.rater_b = j.at("rater_b").get<DimensionScores>();
    a.consensus = j.at("consensus").get<DimensionScores>();
    for (const auto& id : j.at("expert_grammar_top2")) a.expert_grammar_top2.insert(id.get<std::string>());
    for (const auto& id : j.at("expert_vocab_top2")) a.expert_vocab_top2.insert(id.get<std::string>());
    if (a.expert_grammar_top2.size() > 2 || a.expert_vocab_top2.size() > 2)
        throw FormatError("corpus record " + a.conversation.id + ": expert top-2 sets exceed 2");
}

inline void to_json(nlohmann::json& j, const AnnotatedConversation& a) {
    j = {{"conversation", a.conversation},
         {"rater_a", a.rater_a},
         {"rater_b", a.rater_b},
         {"consensus", a.consensus},
         {"expert_grammar_top2", a.expert_grammar_top2},
         {"expert_vocab_top2", a.expert_vocab_top2}};
}

/// JSONL, one AnnotatedConversation per line, schema-validated, duplicate
/// conversation ids rejected.
inline std::vector<AnnotatedConversation> load_corpus(const std::string& path,
                                                      const AssetStore& assets) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open corpus: " + path);
    const nlohmann::json& schema = assets.schema("schemas/annotated_conversation.v1");
    std::vector<AnnotatedConversation> out;
    std::set<std::string> seen;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("corpus " + path + " line " + std::to_string(lineno) + ": " +
                              e.what());
        }
        auto errors = validate_against_schema(doc, schema);
        if (!errors.empty())
            throw FormatError("corpus " + path + " line " + std::to_string(lineno) + ": " +
                              join(errors, "; "));
        AnnotatedConversation rec = doc.get<AnnotatedConversation>();
        if (!seen.insert(rec.conversation.id).second)
            throw FormatError("corpus " + path + " line " + std::to_string(lineno) +
                              ": duplicate conversation id '" + rec.conversation.id + "'");
        out.push_back(std::move(rec));
    }
    if (out.empty()) throw FormatError("corpus " + path + ": no records");
    return out;
}

struct ConversationRun {
    std::string conversation_id;
    std::optional<ScoreResult> score;
    std::optional<Recommendation> recommendation;
    std::string error;  // set when this cell failed

    bool ok() const { return error.empty(); }
};

struct MethodRun {
    std::string method_tag;
    MethodConfig config;
    std::vector<ConversationRun> results;  // corpus order, one per conversation
};

struct DimensionTriple {
    double grammar = 0.0;
    double vocabulary = 0.0;
    double ic = 0.0;
};

struct MethodMetrics {
    std::string method;
    std::optional<DovReport> dov;
    std::optional<double> closest_match;
    std::optional<double> acceptability;
    int errors = 0;
    int completed = 0;
};

struct MetricReport {
    DimensionTriple irr_agreement;
    DimensionTriple irr_kappa;
    std::vector<MethodMetrics> methods;  // config order
    std::string acceptability_mode;
    std::uint64_t seed = 0;
    size_t corpus_size = 0;
    size_t closest_match_basis = 0;  // conversations where every method scored
    // Histogram bin counts on the rescaled 0-100 scale (bins 0,20,...,100):
    // column "consensus" plus one per method.
    std::map<std::string, std::map<std::string, std::vector<int>>> histograms;
};

struct BenchmarkOptions {
    std::uint64_t seed = 0;
    AcceptabilityMode acceptability_mode = AcceptabilityMode::per_item;
    unsigned parallelism = std::thread::hardware_concurrency();
    // When set, each method runs against a fresh MockBackend built from this
    // script; all role bindings resolve to it.
    std::optional<MockScript> mock_script;
};

namespace detail {

inline std::vector<int> score_histogram(const std::vector<int>& rescaled) {
    std::vector<int> bins(6, 0);  // 0,20,40,60,80,100
    for (int v : rescaled) bins[static_cast<size_t>(v / 20)]++;
    return bins;
}

inline std::string sanitize_filename(const std::string& name) {
    std::string out;
    for (char c : name)
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

}  // namespace detail

class BenchmarkHarness {
public:
    BenchmarkHarness(const Curriculum& curriculum, const AssetStore& assets)
        : curriculum_(&curriculum), assets_(&assets) {}

    /// Runs one method over the whole corpus. Conversations execute in
    /// parallel; results are collected in corpus order. Per-conversation
    /// failures are recorded, not fatal.
    MethodRun run_method(const std::vector<AnnotatedConversation>& corpus, MethodConfig config,
                         const BenchmarkOptions& opts) const {
        config.seed = opts.seed;

        BackendSet backends;
        if (opts.mock_script) {
            auto mock = std::make_shared<MockBackend>(*opts.mock_script);
            backends.add(mock);
            config.bindings.clear();
            config.backend = mock->name();
        } else {
            throw ConfigError(
                "run_method: live backends must be supplied via run_method overload with a "
                "BackendSet");
        }
        return run_method_with(corpus, std::move(config), backends, opts);
    }

    MethodRun run_method_with(const std::vector<AnnotatedConversation>& corpus,
                              MethodConfig config, const BackendSet& backends,
                              const BenchmarkOptions& opts) const {
        PipelineEngine engine(*curriculum_, *assets_, backends);

        MethodRun run;
        run.method_tag = config.label();
        run.config = config;
        run.results.resize(corpus.size());

        auto work = [&](size_t idx) {
            const AnnotatedConversation& rec = corpus[idx];
            ConversationRun& cell = run.results[idx];
            cell.conversation_id = rec.conversation.id;
            try {
                ExposureSet exposure =
                    cumulative_exposure(*curriculum_, rec.conversation.lesson_ref, true);
                ScoreResult score = engine.run_scoring(rec.conversation, exposure, config);
                Recommendation rec_out =
                    engine.run_recommendation(rec.conversation, exposure, score, config);
                cell.score = std::move(score);
                cell.recommendation = std::move(rec_out);
            } catch (const Error& e) {
                cell.error = e.what();
            }
        };

        unsigned workers = std::max(1u, opts.parallelism);
        if (workers <= 1 || corpus.size() <= 1) {
            for (size_t i = 0; i < corpus.size(); ++i) work(i);
        } else {
            std::vector<std::future<void>> futures;
            std::atomic<size_t> next{0};
            unsigned count = std::min<unsigned>(workers, static_cast<unsigned>(corpus.size()));
            for (unsigned w = 0; w < count; ++w)
                futures.push_back(std::async(std::launch::async, [&]() {
                    for (size_t i = next.fetch_add(1); i < corpus.size(); i = next.fetch_add(1))
                        work(i);
                }));
            for (auto& f : futures) f.get();
        }
        return run;
    }

    MetricReport compute_metrics(const std::vector<AnnotatedConversation>& corpus,
                                 const std::vector<MethodRun>& runs,
                                 const BenchmarkOptions& opts) const {
        MetricReport report;
        report.seed = opts.seed;
        report.corpus_size = corpus.size();
        report.acceptability_mode = acceptability_mode_name(opts.acceptability_mode);

        // Expert inter-rater reliability, per dimension.
        std::vector<int> a_g, a_v, a_i, b_g, b_v, b_i;
        for (const auto& rec : corpus) {
            a_g.push_back(rec.rater_a.grammar);
            a_v.push_back(rec.rater_a.vocabulary);
            a_i.push_back(rec.rater_a.ic);
            b_g.push_back(rec.rater_b.grammar);
            b_v.push_back(rec.rater_b.vocabulary);
            b_i.push_back(rec.rater_b.ic);
        }
        report.irr_agreement = {percentage_agreement(a_g, b_g), percentage_agreement(a_v, b_v),
                                percentage_agreement(a_i, b_i)};
        report.irr_kappa = {quadratic_weighted_kappa(a_g, b_g),
                            quadratic_weighted_kappa(a_v, b_v),
                            quadratic_weighted_kappa(a_i, b_i)};

        // Consensus histogram (rescaled).
        {
            std::map<std::string, std::vector<int>> g, v, i;
            std::vector<int> cg, cv, ci;
            for (const auto& rec : corpus) {
                cg.push_back(rescale_score(rec.consensus.grammar));
                cv.push_back(rescale_score(rec.consensus.vocabulary));
                ci.push_back(rescale_score(rec.consensus.ic));
            }
            report.histograms["grammar"]["consensus"] = detail::score_histogram(cg);
            report.histograms["vocabulary"]["consensus"] = detail::score_histogram(cv);
            report.histograms["ic"]["consensus"] = detail::score_histogram(ci);
        }

        // Conversations where every method produced scores; the closest-match
        // comparison is only meaningful there.
        std::vector<size_t> complete_rows;
        for (size_t i = 0; i < corpus.size(); ++i) {
            bool all_ok = true;
            for (const auto& run : runs)
                if (!run.results[i].score) all_ok = false;
            if (all_ok) complete_rows.push_back(i);
        }
        report.closest_match_basis = complete_rows.size();

        std::map<std::string, std::vector<DimensionScores>> cm_runs;
        std::vector<DimensionScores> cm_consensus;
        for (size_t i : complete_rows) cm_consensus.push_back(corpus[i].consensus);

        for (const auto& run : runs) {
            MethodMetrics m;
            m.method = run.method_tag;

            std::vector<DimensionScores> preds, truths;
            std::vector<RecommendationPrediction> rec_preds(corpus.size());
            std::vector<ExpertTargets> experts;
            for (size_t i = 0; i < corpus.size(); ++i) {
                const ConversationRun& cell = run.results[i];
                experts.push_back({corpus[i].expert_grammar_top2, corpus[i].expert_vocab_top2});
                if (cell.error.empty()) {
                    ++m.completed;
                } else {
                    ++m.errors;
                }
                if (cell.score) {
                    preds.push_back(cell.score->consensus);
                    truths.push_back(corpus[i].consensus);
                }
                if (cell.recommendation) {
                    rec_preds[i].grammar = cell.recommendation->grammar_top;
                    rec_preds[i].vocab = cell.recommendation->vocab_top;
                }
            }
            if (!preds.empty()) {
                m.dov = degree_of_variation(preds, truths);
                std::vector<int> hg, hv, hi;
                for (const auto& p : preds) {
                    hg.push_back(rescale_score(p.grammar));
                    hv.push_back(rescale_score(p.vocabulary));
                    hi.push_back(rescale_score(p.ic));
                }
                report.histograms["grammar"][run.method_tag] = detail::score_histogram(hg);
                report.histograms["vocabulary"][run.method_tag] = detail::score_histogram(hv);
                report.histograms["ic"][run.method_tag] = detail::score_histogram(hi);
            }
            m.acceptability =
                recommendation_acceptability(rec_preds, experts, opts.acceptability_mode);

            std::vector<DimensionScores> cm_preds;
            for (size_t i : complete_rows) cm_preds.push_back(run.results[i].score->consensus);
            if (!cm_preds.empty()) cm_runs[run.method_tag] = std::move(cm_preds);

            report.methods.push_back(std::move(m));
        }

        if (cm_runs.size() >= 2 && !cm_consensus.empty()) {
            auto rates = closest_match_rate(cm_runs, cm_consensus);
            for (auto& m : report.methods)
                if (rates.count(m.method)) m.closest_match = rates[m.method];
        }
        return report;
    }

    /// Full protocol: every method over every conversation, metrics, report.
    MetricReport run_benchmark(const std::vector<AnnotatedConversation>& corpus,
                               const std::vector<MethodConfig>& configs,
                               const BenchmarkOptions& opts,
                               std::vector<MethodRun>* runs_out = nullptr) const {
        std::vector<MethodRun> runs;
        for (const auto& config : configs) runs.push_back(run_method(corpus, config, opts));
        MetricReport report = compute_metrics(corpus, runs, opts);
        if (runs_out) *runs_out = std::move(runs);
        return report;
    }

private:
    const Curriculum* curriculum_;
    const AssetStore* assets_;
};

// ---------------------------------------------------------------------------
// Report emission: report.csv + report.md + hist_{grammar,vocabulary,ic}.csv.
// Deterministic content only (no timestamps, no paths), so identical runs
// are byte-identical.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string cell(const std::optional<double>& v) {
    return v ? format_double(*v) : "";
}

inline std::string md_cell(const std::optional<double>& v) {
    return v ? format_double(*v) : "—";
}

}  // namespace detail

inline void emit_report(const MetricReport& report, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);

    {
        std::ofstream csv(out_dir / "report.csv");
        if (!csv) throw IoError("cannot write " + (out_dir / "report.csv").string());
        csv << "section,metric,dimension,method,value\n";
        csv << "irr,percentage_agreement,grammar,," << format_double(report.irr_agreement.grammar)
            << "\n";
        csv << "irr,percentage_agreement,vocabulary,,"
            << format_double(report.irr_agreement.vocabulary) << "\n";
        csv << "irr,percentage_agreement,ic,," << format_double(report.irr_agreement.ic) << "\n";
        csv << "irr,quadratic_weighted_kappa,grammar,," << format_double(report.irr_kappa.grammar)
            << "\n";
        csv << "irr,quadratic_weighted_kappa,vocabulary,,"
            << format_double(report.irr_kappa.vocabulary) << "\n";
        csv << "irr,quadratic_weighted_kappa,ic,," << format_double(report.irr_kappa.ic) << "\n";
        for (const auto& m : report.methods) {
            auto dov = [&](double DovReport::*field) -> std::string {
                return m.dov ? format_double((*m.dov).*field) : "";
            };
            csv << "dov,degree_of_variation,grammar," << m.method << "," << dov(&DovReport::grammar)
                << "\n";
            csv << "dov,degree_of_variation,vocabulary," << m.method << ","
                << dov(&DovReport::vocabulary) << "\n";
            csv << "dov,degree_of_variation,ic," << m.method << "," << dov(&DovReport::ic) << "\n";
            csv << "dov,average_dov,," << m.method << "," << dov(&DovReport::average) << "\n";
            csv << "closest_match,rate,," << m.method << "," << detail::cell(m.closest_match)
                << "\n";
            csv << "acceptability,rate,," << m.method << "," << detail::cell(m.acceptability)
                << "\n";
            csv << "runs,errors,," << m.method << "," << m.errors << "\n";
        }
        csv << "meta,corpus_size,,," << report.corpus_size << "\n";
        csv << "meta,seed,,," << report.seed << "\n";
        csv << "meta,acceptability_mode,,," << report.acceptability_mode << "\n";
        csv << "meta,closest_match_basis,,," << report.closest_match_basis << "\n";
    }

    {
        std::ofstream md(out_dir / "report.md");
        if (!md) throw IoError("cannot write " + (out_dir / "report.md").string());
        md << "# Benchmark report\n\n";
        md << "Corpus: " << report.corpus_size << " conversations. Seed: " << report.seed
           << ". Acceptability mode: " << report.acceptability_mode << ".\n\n";

        md << "## Expert inter-rater reliability\n\n";
        md << "| Dimension | Percentage Agreement | Quadratic Weighted Kappa |\n";
        md << "| --- | --- | --- |\n";
        md << "| Grammar | " << format_double(report.irr_agreement.grammar) << "% | "
           << format_double(report.irr_kappa.grammar) << " |\n";
        md << "| Vocabulary | " << format_double(report.irr_agreement.vocabulary) << "% | "
           << format_double(report.irr_kappa.vocabulary) << " |\n";
        md << "| IC | " << format_double(report.irr_agreement.ic) << "% | "
           << format_double(report.irr_kappa.ic) << " |\n\n";

        md << "## Score agreement\n\n";
        md << "| Metric |";
        for (const auto& m : report.methods) md << " " << m.method << " |";
        md << "\n| --- |";
        for (size_t i = 0; i < report.methods.size(); ++i) md << " --- |";
        md << "\n";
        auto dov_row = [&](const std::string& label, double DovReport::*field) {
            md << "| " << label << " |";
            for (const auto& m : report.methods)
                md << " " << (m.dov ? format_double((*m.dov).*field) : "—") << " |";
            md << "\n";
        };
        dov_row("Grammar DOV", &DovReport::grammar);
        dov_row("Vocabulary DOV", &DovReport::vocabulary);
        dov_row("IC DOV", &DovReport::ic);
        dov_row("Average DOV", &DovReport::average);
        md << "| Closest Match (%) |";
        for (const auto& m : report.methods) md << " " << detail::md_cell(m.closest_match) << " |";
        md << "\n";
        md << "| Errors |";
        for (const auto& m : report.methods) md << " " << m.errors << " |";
        md << "\n\n";
        if (report.closest_match_basis < report.corpus_size)
            md << "Closest match computed over " << report.closest_match_basis << " of "
               << report.corpus_size << " conversations (rows with a scored cell for every "
               << "method).\n\n";

        md << "## Recommendation acceptability\n\n";
        md << "| Method | Acceptability (%) |\n| --- | --- |\n";
        for (const auto& m : report.methods)
            md << "| " << m.method << " | " << detail::md_cell(m.acceptability) << " |\n";
    }

    for (const std::string dim : {"grammar", "vocabulary", "ic"}) {
        std::ofstream hist(out_dir / ("hist_" + dim + ".csv"));
        if (!hist) throw IoError("cannot write histogram for " + dim);
        auto it = report.histograms.find(dim);
        std::vector<std::string> columns;
        if (it != report.histograms.end()) {
            if (it->second.count("consensus")) columns.push_back("consensus");
            for (const auto& [name, bins] : it->second)
                if (name != "consensus") columns.push_back(name);
        }
        hist << "bin";
        for (const auto& c : columns) hist << "," << c;
        hist << "\n";
        for (int bin = 0; bin < 6; ++bin) {
            hist << bin * 20;
            for (const auto& c : columns) hist << "," << it->second.at(c)[bin];
            hist << "\n";
        }
    }
}

/// Persist per-method runs (full phase logs) plus a config snapshot.
inline void persist_method_runs(const std::vector<MethodRun>& runs,
                                const std::filesystem::path& out_dir, std::uint64_t seed) {
    std::filesystem::create_directories(out_dir / "runs");
    nlohmann::json snapshot;
    snapshot["seed"] = seed;
    snapshot["methods"] = nlohmann::json::array();
    for (const auto& run : runs) {
        snapshot["methods"].push_back(run.config);
        std::ofstream out(out_dir / "runs" /
                          (detail::sanitize_filename(run.method_tag) + ".jsonl"));
        if (!out) throw IoError("cannot write run archive for " + run.method_tag);
        for (const auto& cell : run.results) {
            nlohmann::json line = {{"conversation_id", cell.conversation_id}};
            if (cell.score) line["score_result"] = *cell.score;
            if (cell.recommendation) line["recommendation"] = *cell.recommendation;
            if (!cell.error.empty()) line["error"] = cell.error;
            out << line.dump() << "\n";
        }
    }
    std::ofstream cfg(out_dir / "config_snapshot.json");
    if (!cfg) throw IoError("cannot write config snapshot");
    cfg << snapshot.dump(2) << "\n";
}

}  // namespace blockwise
