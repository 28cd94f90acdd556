#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "judge.hpp"
#include "llm_client.hpp"
#include "measures.hpp"

namespace valcon {

struct SurveyPlan {
    std::vector<UseCase> use_cases{UseCase::multiple_choice};
    bool abstain = false;
    bool in_context_example = false;
    std::vector<Language> languages;  // empty: every language in the corpus
    std::vector<Country> countries;   // empty: every country
    // Steering conditions; the empty string is the unsteered baseline.
    std::vector<std::string> value_conditions{""};
    // Extra open-ended probes, one per bias context, keyed by item coordinates.
    std::map<std::string, std::vector<std::string>> contexts;
    std::uint64_t order_seed = 0;
    std::size_t concurrency = 0;  // 0: the endpoint's max_concurrent
};

struct PlannedProbe {
    ProbeSpec spec;
    const QuestionItem* item = nullptr;
};

// Lettering depends on the item, paraphrase and use-case but not on the
// steering condition, so every condition of one question shares an order.
std::uint64_t probe_order_seed(std::uint64_t base, const QuestionItem& item, std::size_t paraphrase, UseCase use_case);

// Every (item, paraphrase, use-case, condition) in scope, in corpus order.
std::vector<PlannedProbe> plan_probes(const Corpus& corpus, const SurveyPlan& plan);

struct SurveySummary {
    std::size_t planned = 0;
    std::size_t fetched = 0;
    std::size_t from_cache = 0;
    std::size_t degenerate = 0;
    std::vector<std::string> failures;
    std::vector<ResponseRecord> records;  // plan order; failed probes omitted
};

using Progress = std::function<void(std::size_t done, std::size_t total)>;

// Probes run concurrently; fresh records are committed to the store in
// plan order so the log is identical however requests interleave. A config
// error (e.g. missing logprob support) aborts the run.
SurveySummary run_survey(Prober& prober, const Corpus& corpus, const SurveyPlan& plan, const Progress& progress = {});

struct JudgeSummary {
    std::size_t generations = 0;
    std::size_t judged = 0;
    std::size_t from_cache = 0;
    std::size_t unusable = 0;
    std::vector<std::string> failures;
    std::vector<StanceJudgement> judgements;
    // With two or more judges: stance votes per generation and their agreement.
    std::optional<AgreementMatrix> agreement;
    std::optional<double> kappa;
};

// Judges every open-ended record with every judge.
JudgeSummary run_judges(std::vector<Judge>& judges, const Corpus& corpus, const std::vector<ResponseRecord>& records,
                        std::size_t concurrency = 0, const Progress& progress = {});

// Stance label of a judgement's hard choice.
std::string judgement_stance(const StanceJudgement& j, const QuestionItem& item);

// Records and judgements held in a store.
std::vector<ResponseRecord> stored_records(const RecordStore& store);
std::vector<StanceJudgement> stored_judgements(const RecordStore& store);

}  // namespace valcon
