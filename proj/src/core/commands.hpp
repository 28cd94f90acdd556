#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "genpipeline.hpp"
#include "measures.hpp"
#include "pipeline.hpp"
#include "simulator.hpp"

namespace valcon {

struct NoiseSweep {
    std::string axis;  // paraphrase_noise, question_noise, language_noise or usecase_noise
    std::vector<double> levels;
};

// Everything a subcommand needs. Relative paths are resolved against the
// directory of the config file.
struct RunConfig {
    std::filesystem::path corpus;
    std::filesystem::path contexts;         // bias contexts for extra open-ended probes
    std::vector<std::filesystem::path> pvq;  // PVQ item files for steerability
    std::filesystem::path human_responses;  // optional human CSV folded into analysis
    std::filesystem::path respondent;       // simulate / serve-mock
    std::vector<ModelEndpoint> subjects;
    std::vector<ModelEndpoint> judges;
    std::optional<GenerationJob> generation;

    std::vector<Measure> measures{Measure::paraphrase, Measure::topic, Measure::use_case, Measure::multilingual};
    bool entropy_variants = true;
    bool abstain = false;
    bool in_context_example = false;
    std::vector<UseCase> use_cases{UseCase::multiple_choice};
    std::vector<Language> languages;
    std::vector<Country> countries;
    std::vector<std::string> value_conditions{""};
    std::uint64_t order_seed = 0;
    std::uint64_t bootstrap_seed = 0;
    std::size_t n_boot = 2000;
    double ci_level = 95.0;
    std::size_t concurrency = 0;

    std::optional<SyntheticCorpusShape> simulation_corpus;  // used when no corpus is given
    std::optional<NoiseSweep> sweep;

    std::filesystem::path cache_dir = "cache";
    std::filesystem::path output_dir = "out";

    std::filesystem::path record_log() const { return cache_dir / "records.jsonl"; }
    // Structural checks shared by every subcommand.
    void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

// Survey and analysis settings a config implies.
SurveyPlan survey_plan(const RunConfig& c);
AnalysisOptions analysis_options(const RunConfig& c);

// Exit status of a subcommand.
enum class ExitCode : int { ok = 0, other = 1, config = 2, network = 3, validation = 4 };
ExitCode exit_code_for(ErrorKind kind);

struct CommandOutcome {
    ExitCode code = ExitCode::ok;
    std::string message;   // one-paragraph human summary
    nlohmann::json summary = nlohmann::json::object();
    std::vector<std::filesystem::path> files;  // outputs written
};

CommandOutcome cmd_generate(const RunConfig& config);
CommandOutcome cmd_survey(const RunConfig& config);
CommandOutcome cmd_judge(const RunConfig& config);
// Reads only the record log and local files.
CommandOutcome cmd_analyze(const RunConfig& config);
CommandOutcome cmd_simulate(const RunConfig& config);
CommandOutcome cmd_report(const RunConfig& config);
CommandOutcome cmd_stats(const RunConfig& config);

// Dispatch by name; Error exceptions become an outcome with the mapped code.
CommandOutcome run_command(const std::string& name, const RunConfig& config);

// Structured report document written by analyze and read by report.
nlohmann::json score_to_json(const ConsistencyScore& s);
ConsistencyScore score_from_json(const nlohmann::json& j);

// One bar chart: topic-level scores of one measure in one slice.
struct Figure {
    std::string name;  // file stem
    std::string measure;
    Slice slice;
    std::optional<double> bound;  // dashed upper-limit line
    std::vector<ConsistencyScore> bars;
};

std::vector<Figure> figures_from_scores(const std::vector<ConsistencyScore>& scores);
std::string figure_svg(const Figure& f);
std::string figures_csv(const std::vector<Figure>& figures);

// Vertical pixel of a value on the figure axis.
double figure_y(double value, double y_max);
inline constexpr double kFigureTop = 40.0;
inline constexpr double kFigurePlotHeight = 240.0;

// Rank correlation with average ranks for ties; 0 when either side is constant.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

// Paraphrase and topic rankings per slice, most consistent first.
nlohmann::json topic_rankings(const std::vector<ConsistencyScore>& scores);

}  // namespace valcon
