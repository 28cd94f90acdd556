#include "commands.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "pipeline.hpp"
#include "steering.hpp"
#include "text_util.hpp"

namespace valcon {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return {};
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

std::string read_text(const fs::path& path, std::string_view what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::config, fmt::format("cannot read {} {}", what, path.string()));
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& path, const std::string& text, CommandOutcome& outcome) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::config, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorKind::config, "write failed for " + path.string());
    outcome.files.push_back(path);
}

void ensure_dir(const fs::path& dir, std::string_view what) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        fail(ErrorKind::config, fmt::format("{} {} cannot be created: {}", what, dir.string(), ec.message()));
    }
}

void require_file(const fs::path& path, std::string_view what) {
    if (path.empty()) fail(ErrorKind::config, fmt::format("config has no {}", what));
    if (!fs::is_regular_file(path)) fail(ErrorKind::config, fmt::format("{} {} does not exist", what, path.string()));
}

const std::set<std::string> kConfigKeys{
    "corpus",  "contexts",   "pvq",       "human_responses",  "respondent", "subjects",   "judges",
    "generation", "measures", "entropy_variants", "abstain", "in_context_example", "use_cases", "languages",
    "countries", "value_conditions", "seeds", "n_boot", "ci_level", "concurrency", "simulation", "cache_dir",
    "output_dir", "schema_version", "kind"};

const std::vector<std::string> kSweepAxes{"paraphrase_noise", "question_noise", "language_noise", "usecase_noise"};

// Measure whose inconsistency a noise axis drives.
std::string measure_of_axis(std::string_view axis) {
    if (axis == "paraphrase_noise") return "paraphrase";
    if (axis == "question_noise") return "topic";
    if (axis == "language_noise") return "multilingual";
    return "use_case";
}

double& noise_axis(SyntheticRespondent& r, std::string_view axis) {
    if (axis == "paraphrase_noise") return r.paraphrase_noise;
    if (axis == "question_noise") return r.question_noise;
    if (axis == "language_noise") return r.language_noise;
    return r.usecase_noise;
}

json slice_to_json(const Slice& s) {
    return json{{"model", s.model},          {"language", to_string(s.language)}, {"country", to_string(s.country)},
                {"use_case", to_string(s.use_case)}, {"abstain", s.abstain},   {"condition", s.condition},
                {"participant", s.participant}};
}

Slice slice_from_json(const json& j) {
    Slice s;
    s.model = j.at("model").get<std::string>();
    s.language = parse_language(j.at("language").get<std::string>());
    s.country = parse_country(j.at("country").get<std::string>());
    s.use_case = parse_use_case(j.at("use_case").get<std::string>());
    s.abstain = j.at("abstain").get<bool>();
    s.condition = j.value("condition", "");
    s.participant = j.value("participant", "");
    return s;
}

}  // namespace

SurveyPlan survey_plan(const RunConfig& c) {
    SurveyPlan plan;
    plan.use_cases = c.use_cases;
    plan.abstain = c.abstain;
    plan.in_context_example = c.in_context_example;
    plan.languages = c.languages;
    plan.countries = c.countries;
    plan.value_conditions = c.value_conditions;
    plan.order_seed = c.order_seed;
    plan.concurrency = c.concurrency;
    return plan;
}

AnalysisOptions analysis_options(const RunConfig& c) {
    AnalysisOptions o;
    o.measures = c.measures;
    o.n_boot = c.n_boot;
    o.ci_level = c.ci_level;
    o.bootstrap_seed = c.bootstrap_seed;
    o.entropy_variants = c.entropy_variants;
    return o;
}

namespace {

std::map<std::string, std::vector<std::string>> contexts_by_item(const fs::path& path, const Corpus& corpus) {
    std::map<std::string, std::vector<std::string>> out;
    if (path.empty()) return out;
    require_file(path, "contexts file");
    for (const auto& c : contexts_from_json(read_text(path, "contexts file"))) {
        const QuestionItem* item = corpus.find(c.topic_id, c.question_id, c.language);
        if (!item) {
            fail(ErrorKind::validation, fmt::format("context for {}/{}/{} names no corpus item", c.topic_id,
                                                    c.question_id, to_string(c.language)));
        }
        out[item->coordinates()].push_back(c.context);
    }
    return out;
}

std::vector<PvqItem> load_all_pvq(const RunConfig& c) {
    std::vector<PvqItem> out;
    for (const auto& p : c.pvq) {
        require_file(p, "PVQ file");
        auto items = load_pvq_items(p);
        out.insert(out.end(), items.begin(), items.end());
    }
    return out;
}

std::uint64_t pvq_order_seed(std::uint64_t base, const PvqItem& item) {
    return probe_order_seed(base, pvq_question(item), 0, UseCase::multiple_choice);
}

Progress progress_logger(std::string label) {
    return [label = std::move(label), last = std::size_t{0}](std::size_t done, std::size_t total) mutable {
        const std::size_t tenth = total * (last + 1) / 10;
        if (done == total || (tenth > 0 && done >= tenth)) {
            spdlog::info("{}: {}/{}", label, done, total);
            last = done * 10 / std::max<std::size_t>(total, 1);
        }
    };
}

// Serves nothing; any request means a record is missing from the log.
class CacheOnlyClient final : public ChatClient {
public:
    explicit CacheOnlyClient(std::string model) : model_(std::move(model)) {}
    const std::string& model_name() const override { return model_; }
    CompletionResult complete(const CompletionRequest&) override {
        fail(ErrorKind::validation, fmt::format("record for {} missing from the log; run survey first", model_));
    }

private:
    std::string model_;
};

std::vector<SteerabilityResult> steerability_of(Prober& prober, const std::vector<PvqItem>& items,
                                                std::uint64_t order_seed, std::vector<std::string>& failures) {
    std::vector<SteerabilityResult> out;
    for (const auto& item : items) {
        try {
            out.push_back(measure_steerability(prober, item, pvq_order_seed(order_seed, item)));
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::config) throw;
            failures.push_back(fmt::format("pvq {} ({}): {}", item.id, to_string(item.language), e.what()));
        }
    }
    return out;
}

json steerability_to_json(const SteerabilityResult& r) {
    return json{{"model", r.model},
                {"item_id", r.item_id},
                {"language", to_string(r.language)},
                {"relevant_value", r.relevant_value},
                {"rank_of_relevant", r.rank_of_relevant},
                {"influences", r.influences},
                {"signed_steerability", r.signed_steerability}};
}

json exclusions_to_json(const ExclusionCounts& e) {
    return json{{"degenerate_probes", e.degenerate_probes},
                {"unjudged_generations", e.unjudged_generations},
                {"unusable_judgements", e.unusable_judgements},
                {"missing_items", e.missing_items}};
}

std::vector<ResponseRecord> survey_records(const RecordStore& store) {
    std::vector<ResponseRecord> out;
    for (auto& r : stored_records(store)) {
        if (r.probe.topic_id != kPvqTopic) out.push_back(std::move(r));
    }
    return out;
}

struct AnalysisBundle {
    AnalysisResult result;
    std::vector<SteerabilityResult> steerability;
    std::vector<std::string> failures;
    bool human = false;
};

// Writes scores.csv, report.json and, with PVQ results, steerability.csv.
void write_analysis(const RunConfig& c, const AnalysisBundle& b, CommandOutcome& outcome) {
    json scores = json::array();
    for (const auto& s : b.result.scores) scores.push_back(score_to_json(s));
    json steer = json::array();
    for (const auto& s : b.steerability) steer.push_back(steerability_to_json(s));
    json doc{{"schema_version", 1},
             {"kind", "report"},
             {"scores", scores},
             {"rankings", topic_rankings(b.result.scores)},
             {"excluded", exclusions_to_json(b.result.excluded)},
             {"steerability", steer},
             {"steerability_failures", b.failures},
             {"includes_human_responses", b.human}};
    write_text(c.output_dir / "scores.csv", scores_csv(b.result.scores), outcome);
    write_text(c.output_dir / "report.json", doc.dump(2) + "\n", outcome);
    if (!b.steerability.empty()) write_text(c.output_dir / "steerability.csv", steerability_csv(b.steerability), outcome);
}

json overall_means(const std::vector<ConsistencyScore>& scores) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (const auto& s : scores) {
        if (s.level != "overall") continue;
        auto& a = acc[s.measure];
        a.first += s.value;
        ++a.second;
    }
    json out = json::object();
    for (const auto& [m, a] : acc) out[m] = a.first / static_cast<double>(a.second);
    return out;
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

std::string file_stem(std::string s) {
    for (char& ch : s) {
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '.') ch = '_';
    }
    return s;
}

bool is_inconsistency(const std::string& m) {
    return m == "paraphrase" || m == "topic" || m == "use_case" || m == "multilingual";
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void RunConfig::validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::config, m); };
    for (const auto& e : subjects) e.validate();
    for (const auto& e : judges) e.validate();
    if (generation) generation->validate();
    if (use_cases.empty()) bad("at least one use-case is required");
    if (value_conditions.empty()) bad("value_conditions must list at least \"\" (unsteered)");
    for (const auto& v : value_conditions) {
        if (!v.empty() && !is_schwartz_value(v)) bad(fmt::format("value condition '{}' is not one of the 12 values", v));
    }
    if (n_boot == 0) bad("n_boot must be positive");
    if (!(ci_level > 0.0 && ci_level < 100.0)) bad("ci_level must lie in (0, 100)");
    if (cache_dir.empty()) bad("cache_dir must be set");
    if (output_dir.empty()) bad("output_dir must be set");
    if (sweep) {
        if (std::find(kSweepAxes.begin(), kSweepAxes.end(), sweep->axis) == kSweepAxes.end()) {
            bad(fmt::format("sweep axis '{}' is not a noise parameter", sweep->axis));
        }
        if (sweep->levels.empty()) bad("sweep needs at least one level");
        for (double l : sweep->levels) {
            if (!(l >= 0.0)) bad("sweep levels must be >= 0");
        }
    }
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) fail(ErrorKind::config, "config must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (!kConfigKeys.count(k)) fail(ErrorKind::config, fmt::format("unknown config key '{}'", k));
    }
    RunConfig c;
    try {
        c.corpus = resolve(base_dir, j.value("corpus", ""));
        c.contexts = resolve(base_dir, j.value("contexts", ""));
        for (const auto& p : j.value("pvq", std::vector<std::string>{})) c.pvq.push_back(resolve(base_dir, p));
        c.human_responses = resolve(base_dir, j.value("human_responses", ""));
        c.respondent = resolve(base_dir, j.value("respondent", ""));
        for (const auto& e : j.value("subjects", json::array())) c.subjects.push_back(endpoint_from_json(e));
        for (const auto& e : j.value("judges", json::array())) c.judges.push_back(endpoint_from_json(e));
        if (j.contains("generation")) c.generation = generation_job_from_json(j.at("generation"));
        if (j.contains("measures")) {
            c.measures.clear();
            for (const auto& m : j.at("measures")) c.measures.push_back(parse_measure(m.get<std::string>()));
        }
        c.entropy_variants = j.value("entropy_variants", c.entropy_variants);
        c.abstain = j.value("abstain", c.abstain);
        c.in_context_example = j.value("in_context_example", c.in_context_example);
        if (j.contains("use_cases")) {
            c.use_cases.clear();
            for (const auto& u : j.at("use_cases")) c.use_cases.push_back(parse_use_case(u.get<std::string>()));
        }
        for (const auto& l : j.value("languages", std::vector<std::string>{})) c.languages.push_back(parse_language(l));
        for (const auto& k : j.value("countries", std::vector<std::string>{})) c.countries.push_back(parse_country(k));
        if (j.contains("value_conditions")) c.value_conditions = j.at("value_conditions").get<std::vector<std::string>>();
        if (j.contains("seeds")) {
            const auto& s = j.at("seeds");
            c.order_seed = s.value("order", c.order_seed);
            c.bootstrap_seed = s.value("bootstrap", c.bootstrap_seed);
        }
        c.n_boot = j.value("n_boot", c.n_boot);
        c.ci_level = j.value("ci_level", c.ci_level);
        c.concurrency = j.value("concurrency", c.concurrency);
        if (j.contains("simulation")) {
            const auto& s = j.at("simulation");
            if (s.contains("corpus")) {
                const auto& k = s.at("corpus");
                SyntheticCorpusShape shape;
                shape.topics = k.value("topics", shape.topics);
                shape.questions_per_topic = k.value("questions_per_topic", shape.questions_per_topic);
                shape.paraphrases = k.value("paraphrases", shape.paraphrases);
                if (k.contains("languages")) {
                    shape.languages.clear();
                    for (const auto& l : k.at("languages")) shape.languages.push_back(parse_language(l.get<std::string>()));
                }
                shape.country = parse_country(k.value("country", std::string(to_string(shape.country))));
                c.simulation_corpus = shape;
            }
            if (s.contains("sweep")) {
                const auto& w = s.at("sweep");
                c.sweep = NoiseSweep{w.at("axis").get<std::string>(), w.at("levels").get<std::vector<double>>()};
            }
        }
        c.cache_dir = resolve(base_dir, j.value("cache_dir", c.cache_dir.string()));
        c.output_dir = resolve(base_dir, j.value("output_dir", c.output_dir.string()));
    } catch (const json::exception& e) {
        fail(ErrorKind::config, fmt::format("config: {}", e.what()));
    } catch (const Error& e) {
        fail(ErrorKind::config, fmt::format("config: {}", e.what()));
    }
    c.validate();
    return c;
}

json run_config_to_json(const RunConfig& c) {
    auto paths = [](const std::vector<fs::path>& ps) {
        std::vector<std::string> out;
        for (const auto& p : ps) out.push_back(p.string());
        return out;
    };
    json j{{"corpus", c.corpus.string()},
           {"contexts", c.contexts.string()},
           {"pvq", paths(c.pvq)},
           {"human_responses", c.human_responses.string()},
           {"respondent", c.respondent.string()},
           {"subjects", json::array()},
           {"judges", json::array()},
           {"entropy_variants", c.entropy_variants},
           {"abstain", c.abstain},
           {"in_context_example", c.in_context_example},
           {"value_conditions", c.value_conditions},
           {"seeds", {{"order", c.order_seed}, {"bootstrap", c.bootstrap_seed}}},
           {"n_boot", c.n_boot},
           {"ci_level", c.ci_level},
           {"concurrency", c.concurrency},
           {"cache_dir", c.cache_dir.string()},
           {"output_dir", c.output_dir.string()}};
    for (const auto& e : c.subjects) j["subjects"].push_back(endpoint_to_json(e));
    for (const auto& e : c.judges) j["judges"].push_back(endpoint_to_json(e));
    if (c.generation) j["generation"] = generation_job_to_json(*c.generation);
    j["measures"] = json::array();
    for (Measure m : c.measures) j["measures"].push_back(to_string(m));
    j["use_cases"] = json::array();
    for (UseCase u : c.use_cases) j["use_cases"].push_back(to_string(u));
    j["languages"] = json::array();
    for (Language l : c.languages) j["languages"].push_back(to_string(l));
    j["countries"] = json::array();
    for (Country k : c.countries) j["countries"].push_back(to_string(k));
    if (c.simulation_corpus || c.sweep) {
        json s = json::object();
        if (const auto& k = c.simulation_corpus) {
            json langs = json::array();
            for (Language l : k->languages) langs.push_back(to_string(l));
            s["corpus"] = {{"topics", k->topics},
                           {"questions_per_topic", k->questions_per_topic},
                           {"paraphrases", k->paraphrases},
                           {"languages", langs},
                           {"country", to_string(k->country)}};
        }
        if (c.sweep) s["sweep"] = {{"axis", c.sweep->axis}, {"levels", c.sweep->levels}};
        j["simulation"] = s;
    }
    return j;
}

RunConfig load_run_config(const fs::path& path) {
    const std::string text = read_text(path, "config");
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::config, fmt::format("{}: {}", path.string(), e.what()));
    }
    return run_config_from_json(j, path.parent_path());
}

ExitCode exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument:
        case ErrorKind::config: return ExitCode::config;
        case ErrorKind::network: return ExitCode::network;
        case ErrorKind::validation:
        case ErrorKind::parse: return ExitCode::validation;
        default: return ExitCode::other;
    }
}

// ---------------------------------------------------------------------------
// Commands

CommandOutcome cmd_generate(const RunConfig& c) {
    if (!c.generation) fail(ErrorKind::config, "generate needs a \"generation\" job in the config");
    const GenerationJob& job = *c.generation;
    ensure_dir(c.cache_dir, "cache directory");
    ensure_dir(c.output_dir, "output directory");
    RecordStore store(c.record_log());
    Generator gen(std::make_shared<HttpChatClient>(job.generator), job.generator, store);
    const GenerationOutput out = run_generation(gen, job);

    CommandOutcome outcome;
    const fs::path corpus_path = c.corpus.empty() ? c.output_dir / "corpus.json" : c.corpus;
    write_text(corpus_path, corpus_to_json(out.corpus), outcome);
    write_text(c.output_dir / "drop_report.csv", drop_report_csv(out.report), outcome);
    if (job.bias_contexts) write_text(c.output_dir / "contexts.json", contexts_to_json(out.contexts), outcome);
    const auto& r = out.report;
    outcome.summary = {{"topics", out.corpus.topics.size()},
                       {"items", out.corpus.items.size()},
                       {"requested_questions", r.requested_questions},
                       {"emitted_questions", r.emitted_questions},
                       {"requested_paraphrases", r.requested_paraphrases},
                       {"emitted_paraphrases", r.emitted_paraphrases},
                       {"drops", r.drops.size()},
                       {"warnings", r.warnings},
                       {"generator_calls", gen.calls()},
                       {"cache_hits", gen.cache_hits()},
                       {"contexts", out.contexts.size()}};
    outcome.message = fmt::format("generated {} items over {} topics ({} of {} questions kept; {} generator calls, {} "
                                  "cached) -> {}",
                                  out.corpus.items.size(), out.corpus.topics.size(), r.emitted_questions,
                                  r.requested_questions, gen.calls(), gen.cache_hits(), corpus_path.string());
    return outcome;
}

CommandOutcome cmd_survey(const RunConfig& c) {
    require_file(c.corpus, "corpus");
    if (c.subjects.empty()) fail(ErrorKind::config, "survey needs at least one subject endpoint");
    const bool mc = std::find(c.use_cases.begin(), c.use_cases.end(), UseCase::multiple_choice) != c.use_cases.end();
    for (const auto& e : c.subjects) {
        if ((mc || !c.pvq.empty()) && !e.supports_logprobs) {
            fail(ErrorKind::config, fmt::format("endpoint {} does not return logprobs; multiple-choice probing needs "
                                                "them (drop multiple_choice from use_cases)",
                                                e.model_name));
        }
    }
    const Corpus corpus = load_corpus(c.corpus);
    SurveyPlan plan = survey_plan(c);
    plan.contexts = contexts_by_item(c.contexts, corpus);
    const auto pvq = load_all_pvq(c);
    ensure_dir(c.cache_dir, "cache directory");
    RecordStore store(c.record_log());

    CommandOutcome outcome;
    outcome.summary["subjects"] = json::array();
    std::size_t failures = 0, planned = 0;
    std::vector<std::string> first_failures;
    for (const auto& e : c.subjects) {
        Prober prober(std::make_shared<HttpChatClient>(e), e, store);
        SurveySummary s = run_survey(prober, corpus, plan, progress_logger("survey " + e.model_name));
        std::vector<std::string> pvq_failures;
        const auto steer = steerability_of(prober, pvq, c.order_seed, pvq_failures);
        s.failures.insert(s.failures.end(), pvq_failures.begin(), pvq_failures.end());
        planned += s.planned + pvq.size() * (1 + kSchwartzValues.size());
        failures += s.failures.size();
        for (const auto& f : s.failures) {
            spdlog::warn("{}: {}", e.model_name, f);
            if (first_failures.size() < 5) first_failures.push_back(e.model_name + ": " + f);
        }
        outcome.summary["subjects"].push_back({{"model", e.model_name},
                                               {"planned", s.planned},
                                               {"fetched", s.fetched},
                                               {"from_cache", s.from_cache},
                                               {"degenerate", s.degenerate},
                                               {"pvq_items", steer.size()},
                                               {"failures", s.failures.size()}});
    }
    outcome.summary["records_in_log"] = store.size();
    outcome.files.push_back(c.record_log());
    outcome.message = fmt::format("surveyed {} subject(s): {} probe(s) planned, {} failure(s); log {}", c.subjects.size(),
                                  planned, failures, c.record_log().string());
    if (failures) {
        outcome.code = ExitCode::network;
        outcome.message += "\nrerun survey to resume the failed probes; first failures:";
        for (const auto& f : first_failures) outcome.message += "\n  " + f;
    }
    return outcome;
}

CommandOutcome cmd_judge(const RunConfig& c) {
    require_file(c.corpus, "corpus");
    if (c.judges.empty()) fail(ErrorKind::config, "judge needs at least one judge endpoint");
    const Corpus corpus = load_corpus(c.corpus);
    ensure_dir(c.cache_dir, "cache directory");
    RecordStore store(c.record_log());
    std::set<std::string> models;
    for (const auto& e : c.subjects) models.insert(e.model_name);
    std::vector<ResponseRecord> records;
    for (auto& r : survey_records(store)) {
        if (r.generation && (models.empty() || models.count(r.model))) records.push_back(std::move(r));
    }
    CommandOutcome outcome;
    if (records.empty()) {
        outcome.message = "no open-ended generations in the log; nothing to judge";
        outcome.summary = {{"generations", 0}};
        return outcome;
    }
    std::vector<Judge> judges;
    for (const auto& e : c.judges) judges.emplace_back(std::make_shared<HttpChatClient>(e), e, store);
    const JudgeSummary s = run_judges(judges, corpus, records, c.concurrency, progress_logger("judge"));
    outcome.summary = {{"generations", s.generations}, {"judged", s.judged},     {"from_cache", s.from_cache},
                       {"unusable", s.unusable},       {"failures", s.failures.size()}};
    if (s.agreement) {
        outcome.summary["agreement"] = {{"categories", s.agreement->categories},
                                        {"counts", s.agreement->counts},
                                        {"n_judges", s.agreement->n_judges}};
        outcome.summary["kappa"] = s.kappa ? json(*s.kappa) : json(nullptr);
        write_text(c.output_dir / "agreement.json", outcome.summary.dump(2) + "\n", outcome);
    }
    outcome.message = fmt::format("judged {} generation(s) with {} judge(s): {} new, {} cached, {} unusable, {} failed",
                                  s.generations, judges.size(), s.judged, s.from_cache, s.unusable, s.failures.size());
    if (s.kappa) outcome.message += fmt::format("; Fleiss kappa {:.4f}", *s.kappa);
    for (const auto& f : s.failures) spdlog::warn("{}", f);
    if (!s.failures.empty()) outcome.code = ExitCode::network;
    return outcome;
}

CommandOutcome cmd_analyze(const RunConfig& c) {
    require_file(c.corpus, "corpus");
    if (c.measures.empty()) fail(ErrorKind::config, "analyze needs at least one measure");
    const Corpus corpus = load_corpus(c.corpus);
    const bool have_log = fs::is_regular_file(c.record_log());
    if (!have_log && c.human_responses.empty()) {
        fail(ErrorKind::validation, fmt::format("no record log at {}; run survey first", c.record_log().string()));
    }
    // An empty path keeps the store in memory; analyze never appends anyway.
    RecordStore store(have_log ? c.record_log() : fs::path{});
    AnalysisBundle b;
    ExclusionCounts excluded;
    ResponseSet rs = build_response_set(survey_records(store), stored_judgements(store), corpus, &excluded);
    if (!c.human_responses.empty()) {
        require_file(c.human_responses, "human responses file");
        const ResponseSet human = human_responses_to_records(read_text(c.human_responses, "human responses"), corpus);
        for (const auto& [k, d] : human.entries()) rs.add(k, d);
        b.human = true;
    }
    b.result = analyze(rs, analysis_options(c));
    b.result.excluded = excluded;

    const auto pvq = load_all_pvq(c);
    if (!pvq.empty()) {
        for (const auto& e : c.subjects) {
            Prober prober(std::make_shared<CacheOnlyClient>(e.model_name), e, store);
            const auto steer = steerability_of(prober, pvq, c.order_seed, b.failures);
            b.steerability.insert(b.steerability.end(), steer.begin(), steer.end());
        }
        if (c.subjects.empty()) spdlog::warn("PVQ files given but no subjects; steerability skipped");
    }

    CommandOutcome outcome;
    write_analysis(c, b, outcome);
    outcome.summary = {{"responses", rs.size()},
                       {"scores", b.result.scores.size()},
                       {"overall", overall_means(b.result.scores)},
                       {"excluded", exclusions_to_json(excluded)},
                       {"steerability_items", b.steerability.size()},
                       {"steerability_failures", b.failures.size()}};
    outcome.message = fmt::format("analyzed {} stance responses into {} scores -> {}", rs.size(), b.result.scores.size(),
                                  (c.output_dir / "report.json").string());
    for (const auto& f : b.failures) spdlog::warn("{}", f);
    return outcome;
}

CommandOutcome cmd_simulate(const RunConfig& c) {
    require_file(c.respondent, "respondent file");
    const SyntheticRespondent base = load_respondent(c.respondent);
    const Corpus corpus = c.corpus.empty() ? synthetic_corpus(c.simulation_corpus.value_or(SyntheticCorpusShape{}))
                                           : load_corpus(c.corpus);
    if (auto v = validate_corpus(corpus); !v.empty()) {
        fail(ErrorKind::validation, fmt::format("simulation corpus invalid: {}", v.front()));
    }
    const auto pvq = load_all_pvq(c);
    ensure_dir(c.cache_dir, "cache directory");
    ensure_dir(c.output_dir, "output directory");
    const std::vector<double> levels = c.sweep ? c.sweep->levels : std::vector<double>{std::nan("")};

    CommandOutcome outcome;
    json runs = json::array();
    std::string sweep_csv = "axis,level,paraphrase,topic,use_case,multilingual\n";
    std::vector<double> xs, ys;
    for (double level : levels) {
        SyntheticRespondent resp = base;
        if (c.sweep) noise_axis(resp, c.sweep->axis) = level;
        resp.validate();
        // One log per respondent and corpus, so changing either never replays stale answers.
        const std::string digest =
            sha256_hex(respondent_to_json(resp).dump() + corpus_to_json(corpus)).substr(0, 12);
        RecordStore store(c.cache_dir / fmt::format("simulate-{}.jsonl", digest));

        MockServer mock(resp, corpus, pvq);
        mock.start();
        ModelEndpoint subject;
        subject.base_url = mock.base_url();
        subject.model_name = resp.model_name;
        if (c.concurrency) subject.max_concurrent = c.concurrency;
        ModelEndpoint judge_ep = subject;
        judge_ep.model_name = "synthetic-judge";

        SurveyPlan plan = survey_plan(c);
        plan.contexts = contexts_by_item(c.contexts, corpus);
        Prober prober(std::make_shared<HttpChatClient>(subject), subject, store);
        const SurveySummary survey = run_survey(prober, corpus, plan);
        AnalysisBundle b;
        b.steerability = steerability_of(prober, pvq, c.order_seed, b.failures);
        std::vector<Judge> judges;
        judges.emplace_back(std::make_shared<HttpChatClient>(judge_ep), judge_ep, store);
        const JudgeSummary judged = run_judges(judges, corpus, survey.records, c.concurrency);
        mock.stop();
        if (!survey.failures.empty() || !judged.failures.empty()) {
            const std::string first = survey.failures.empty() ? judged.failures.front() : survey.failures.front();
            fail(ErrorKind::network, fmt::format("simulation against the mock failed: {}", first));
        }

        ExclusionCounts excluded;
        const ResponseSet rs = build_response_set(survey.records, judged.judgements, corpus, &excluded);
        b.result = analyze(rs, analysis_options(c));
        b.result.excluded = excluded;
        const json overall = overall_means(b.result.scores);
        json run{{"model", resp.model_name}, {"records", survey.records.size()}, {"overall", overall},
                 {"excluded", exclusions_to_json(excluded)}};
        if (!c.sweep) {
            write_analysis(c, b, outcome);
        } else {
            run["level"] = level;
            auto cell = [&](const char* m) { return overall.contains(m) ? fmt::format("{}", overall[m].get<double>()) : ""; };
            sweep_csv += fmt::format("{},{},{},{},{},{}\n", c.sweep->axis, level, cell("paraphrase"), cell("topic"),
                                     cell("use_case"), cell("multilingual"));
            const std::string m = measure_of_axis(c.sweep->axis);
            if (overall.contains(m)) {
                xs.push_back(level);
                ys.push_back(overall[m].get<double>());
            }
        }
        runs.push_back(run);
    }
    outcome.summary["runs"] = runs;
    if (c.sweep) {
        write_text(c.output_dir / "sweep.csv", sweep_csv, outcome);
        const std::string m = measure_of_axis(c.sweep->axis);
        outcome.summary["sweep"] = {{"axis", c.sweep->axis}, {"measure", m}};
        if (xs.size() >= 2) outcome.summary["sweep"]["spearman"] = spearman_rho(xs, ys);
        write_text(c.output_dir / "sweep.json", outcome.summary.dump(2) + "\n", outcome);
        outcome.message = fmt::format("swept {} over {} level(s)", c.sweep->axis, levels.size());
        if (xs.size() >= 2) outcome.message += fmt::format("; Spearman rho of {} inconsistency {:.3f}", m, spearman_rho(xs, ys));
    } else {
        outcome.message = fmt::format("simulated {} against a mock respondent -> {}", base.model_name,
                                      (c.output_dir / "report.json").string());
    }
    return outcome;
}

CommandOutcome cmd_report(const RunConfig& c) {
    const fs::path report = c.output_dir / "report.json";
    if (!fs::is_regular_file(report)) {
        fail(ErrorKind::config, fmt::format("no report at {}; run analyze first", report.string()));
    }
    std::vector<ConsistencyScore> scores;
    try {
        const json doc = json::parse(read_text(report, "report"));
        for (const auto& s : doc.at("scores")) scores.push_back(score_from_json(s));
    } catch (const json::exception& e) {
        fail(ErrorKind::validation, fmt::format("{}: {}", report.string(), e.what()));
    }
    const auto figures = figures_from_scores(scores);
    CommandOutcome outcome;
    const fs::path dir = c.output_dir / "figures";
    for (const auto& f : figures) write_text(dir / (f.name + ".svg"), figure_svg(f), outcome);
    if (figures.empty()) {
        Figure empty;
        empty.name = "empty";
        write_text(dir / "empty.svg", figure_svg(empty), outcome);
    }
    write_text(dir / "figures.csv", figures_csv(figures), outcome);
    outcome.summary = {{"figures", figures.size()}, {"scores", scores.size()}};
    outcome.message = fmt::format("wrote {} figure(s) to {}", figures.size(), dir.string());
    return outcome;
}

CommandOutcome cmd_stats(const RunConfig& c) {
    require_file(c.corpus, "corpus");
    const Corpus corpus = load_corpus(c.corpus);
    const auto rows = corpus_stats(corpus);
    CommandOutcome outcome;
    const std::string csv = corpus_stats_csv(rows);
    write_text(c.output_dir / "corpus_stats.csv", csv, outcome);
    outcome.summary["rows"] = json::array();
    for (const auto& r : rows) {
        outcome.summary["rows"].push_back({{"language", to_string(r.language)},
                                           {"country", to_string(r.country)},
                                           {"controversial", r.controversial},
                                           {"translated", r.translated},
                                           {"topics", r.topics},
                                           {"questions", r.questions},
                                           {"total_questions", r.total_questions}});
    }
    outcome.message = csv;
    if (!outcome.message.empty() && outcome.message.back() == '\n') outcome.message.pop_back();
    return outcome;
}

CommandOutcome run_command(const std::string& name, const RunConfig& config) {
    try {
        if (name == "generate") return cmd_generate(config);
        if (name == "survey") return cmd_survey(config);
        if (name == "judge") return cmd_judge(config);
        if (name == "analyze") return cmd_analyze(config);
        if (name == "simulate") return cmd_simulate(config);
        if (name == "report") return cmd_report(config);
        if (name == "stats") return cmd_stats(config);
        fail(ErrorKind::config, fmt::format("unknown command '{}'", name));
    } catch (const Error& e) {
        CommandOutcome o;
        o.code = exit_code_for(e.kind());
        o.message = e.what();
        return o;
    } catch (const std::exception& e) {
        CommandOutcome o;
        o.code = ExitCode::other;
        o.message = e.what();
        return o;
    }
}

// ---------------------------------------------------------------------------
// Reports and figures

json score_to_json(const ConsistencyScore& s) {
    return json{{"measure", s.measure},
                {"level", s.level},
                {"slice", slice_to_json(s.slice)},
                {"use_case_pooled", s.use_case_pooled},
                {"language_pooled", s.language_pooled},
                {"topic_id", s.topic_id},
                {"question_id", s.question_id},
                {"paraphrase", s.paraphrase ? json(*s.paraphrase) : json(nullptr)},
                {"value", s.value},
                {"ci_low", s.ci_low},
                {"ci_high", s.ci_high},
                {"n_components", s.n_components}};
}

ConsistencyScore score_from_json(const json& j) {
    ConsistencyScore s;
    s.measure = j.at("measure").get<std::string>();
    s.level = j.at("level").get<std::string>();
    s.slice = slice_from_json(j.at("slice"));
    s.use_case_pooled = j.value("use_case_pooled", false);
    s.language_pooled = j.value("language_pooled", false);
    s.topic_id = j.value("topic_id", "");
    s.question_id = j.value("question_id", "");
    if (j.contains("paraphrase") && !j.at("paraphrase").is_null()) s.paraphrase = j.at("paraphrase").get<std::size_t>();
    s.value = j.at("value").get<double>();
    s.ci_low = j.at("ci_low").get<double>();
    s.ci_high = j.at("ci_high").get<double>();
    s.n_components = j.value("n_components", std::size_t{0});
    return s;
}

std::vector<Figure> figures_from_scores(const std::vector<ConsistencyScore>& scores) {
    std::map<std::tuple<std::string, Slice, bool, bool>, Figure> by;
    for (const auto& s : scores) {
        if (s.level != "topic" || !(is_inconsistency(s.measure) || s.measure == "support")) continue;
        auto& f = by[{s.measure, s.slice, s.use_case_pooled, s.language_pooled}];
        if (f.bars.empty()) {
            f.measure = s.measure;
            f.slice = s.slice;
            if (is_inconsistency(s.measure)) f.bound = dd_upper_bound(s.slice.abstain ? 3 : 2);
            std::string name = fmt::format("{}_{}_{}_{}_{}", s.measure, s.slice.model,
                                           s.language_pooled ? "all" : to_string(s.slice.language),
                                           to_string(s.slice.country),
                                           s.use_case_pooled ? "both" : to_string(s.slice.use_case));
            if (s.slice.abstain) name += "_abstain";
            if (!s.slice.condition.empty()) name += "_" + s.slice.condition;
            if (!s.slice.participant.empty()) name += "_" + s.slice.participant;
            f.name = file_stem(name);
        }
        f.bars.push_back(s);
    }
    std::vector<Figure> out;
    for (auto& [k, f] : by) out.push_back(std::move(f));
    return out;
}

double figure_y(double value, double y_max) { return kFigureTop + kFigurePlotHeight * (1.0 - value / y_max); }

std::string figure_svg(const Figure& f) {
    constexpr double left = 60.0, bar_w = 28.0, gap = 12.0, bottom_pad = 110.0;
    double y_max = f.bound ? *f.bound * 1.2 : (f.measure == "support" ? 1.0 : 0.0);
    for (const auto& b : f.bars) y_max = std::max({y_max, b.value, b.ci_high});
    if (y_max <= 0.0) y_max = 1.0;
    const double width = left + 20.0 + static_cast<double>(std::max<std::size_t>(f.bars.size(), 1)) * (bar_w + gap);
    const double height = kFigureTop + kFigurePlotHeight + bottom_pad;
    const double base_y = figure_y(0.0, y_max);
    std::string title = f.bars.empty() ? std::string("no scores")
                                       : fmt::format("{} by topic, {} ({})", f.measure, f.slice.model,
                                                     to_string(f.slice.language));
    std::string s = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\" "
        "data-measure=\"{}\" data-y-max=\"{:.17g}\">\n",
        width, height, width, height, xml_escape(f.measure), y_max);
    s += fmt::format("<title>{}</title>\n", xml_escape(title));
    s += fmt::format("<text x=\"{:.1f}\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n", left,
                     xml_escape(title));
    s += fmt::format("<line class=\"axis\" x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n",
                     left, kFigureTop, base_y);
    s += fmt::format("<line class=\"axis\" x1=\"{0:.2f}\" y1=\"{2:.2f}\" x2=\"{1:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n",
                     left, width - 10.0, base_y);
    for (int t = 0; t <= 4; ++t) {
        const double v = y_max * t / 4.0;
        s += fmt::format("<text class=\"tick\" x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"10\" "
                         "text-anchor=\"end\">{:.2f}</text>\n",
                         left - 4.0, figure_y(v, y_max) + 3.0, v);
    }
    for (std::size_t i = 0; i < f.bars.size(); ++i) {
        const auto& b = f.bars[i];
        const double x = left + gap / 2.0 + static_cast<double>(i) * (bar_w + gap);
        const double top = figure_y(b.value, y_max);
        const double cx = x + bar_w / 2.0;
        s += fmt::format("<rect class=\"bar\" x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"#4c78a8\" "
                         "data-topic=\"{}\" data-value=\"{:.17g}\" data-ci-low=\"{:.17g}\" data-ci-high=\"{:.17g}\"/>\n",
                         x, top, bar_w, base_y - top, xml_escape(b.topic_id), b.value, b.ci_low, b.ci_high);
        s += fmt::format("<line class=\"ci\" x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n",
                         cx, figure_y(b.ci_low, y_max), figure_y(b.ci_high, y_max));
        for (double v : {b.ci_low, b.ci_high}) {
            s += fmt::format("<line class=\"ci-cap\" x1=\"{0:.2f}\" y1=\"{2:.2f}\" x2=\"{1:.2f}\" y2=\"{2:.2f}\" "
                             "stroke=\"black\"/>\n",
                             cx - 5.0, cx + 5.0, figure_y(v, y_max));
        }
        s += fmt::format("<text x=\"{0:.2f}\" y=\"{1:.2f}\" font-family=\"sans-serif\" font-size=\"10\" "
                         "text-anchor=\"end\" transform=\"rotate(-60 {0:.2f} {1:.2f})\">{2}</text>\n",
                         cx, base_y + 12.0, xml_escape(b.topic_id));
    }
    if (f.bound) {
        s += fmt::format("<line class=\"bound\" x1=\"{0:.2f}\" y1=\"{2:.4f}\" x2=\"{1:.2f}\" y2=\"{2:.4f}\" stroke=\"gray\" "
                         "stroke-dasharray=\"6,4\" data-value=\"{3:.17g}\"/>\n",
                         left, width - 10.0, figure_y(*f.bound, y_max), *f.bound);
    }
    s += "</svg>\n";
    return s;
}

std::string figures_csv(const std::vector<Figure>& figures) {
    std::string out = "figure,measure,topic_id,value,ci_low,ci_high,bound\n";
    for (const auto& f : figures) {
        for (const auto& b : f.bars) {
            out += fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{}\n", csv_field(f.name), f.measure,
                               csv_field(b.topic_id), b.value, b.ci_low, b.ci_high,
                               f.bound ? fmt::format("{:.17g}", *f.bound) : "");
        }
    }
    return out;
}

json topic_rankings(const std::vector<ConsistencyScore>& scores) {
    std::map<std::tuple<std::string, Slice>, std::vector<std::pair<double, std::string>>> by;
    for (const auto& s : scores) {
        if (s.level == "topic" && (s.measure == "paraphrase" || s.measure == "topic")) {
            by[{s.measure, s.slice}].push_back({s.value, s.topic_id});
        }
    }
    json out = json::array();
    for (auto& [k, v] : by) {
        std::sort(v.begin(), v.end());
        json order = json::array();
        for (const auto& [value, topic] : v) order.push_back({{"topic_id", topic}, {"value", value}});
        out.push_back({{"measure", std::get<0>(k)}, {"slice", slice_to_json(std::get<1>(k))}, {"most_consistent_first", order}});
    }
    return out;
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, "spearman needs two equal samples of size >= 2");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (static_cast<double>(i + j) / 2.0) + 1.0;
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace valcon
