#pragma once

#include <compare>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "divergence.hpp"
#include "judge.hpp"
#include "llm_client.hpp"

namespace valcon {

// Coordinates of one stance-space response.
struct RecordKey {
    std::string model;
    Language language = Language::eng;
    Country country = Country::US;
    UseCase use_case = UseCase::multiple_choice;
    bool abstain = false;
    std::string condition;    // steering value, empty for none
    std::string participant;  // human respondent id, empty for models
    std::string topic_id;
    std::string question_id;
    std::size_t paraphrase = 0;

    auto operator<=>(const RecordKey&) const = default;
};

// Fixed coordinates shared by the records a measure compares.
struct Slice {
    std::string model;
    Language language = Language::eng;
    Country country = Country::US;
    UseCase use_case = UseCase::multiple_choice;
    bool abstain = false;
    std::string condition;
    std::string participant;

    auto operator<=>(const Slice&) const = default;
    static Slice of(const RecordKey& k);
    RecordKey at(std::string topic, std::string question, std::size_t paraphrase) const;
};

class ResponseSet {
public:
    // Throws on a duplicate key or a distribution outside the stance space.
    void add(const RecordKey& key, Distribution stance);

    const std::map<RecordKey, Distribution>& entries() const { return entries_; }
    const Distribution* find(const RecordKey& key) const;
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    std::vector<Slice> slices() const;
    std::vector<std::string> topics(const Slice& s) const;
    std::vector<std::string> questions(const Slice& s, const std::string& topic) const;
    // Paraphrase distributions ordered by paraphrase index.
    std::vector<std::pair<std::size_t, Distribution>> paraphrases(const Slice& s, const std::string& topic,
                                                                  const std::string& question) const;

private:
    std::map<RecordKey, Distribution> entries_;
};

struct ExclusionCounts {
    std::size_t degenerate_probes = 0;
    std::size_t unjudged_generations = 0;
    std::size_t unusable_judgements = 0;
    std::size_t missing_items = 0;
};

// Projects probe records into stance space. Degenerate multiple-choice
// extractions are excluded; open-ended records take the mean choice
// distribution of their usable judgements.
ResponseSet build_response_set(const std::vector<ResponseRecord>& records,
                               const std::vector<StanceJudgement>& judgements, const Corpus& corpus,
                               ExclusionCounts* excluded = nullptr);

enum class Measure { paraphrase, topic, use_case, multilingual };
std::string_view to_string(Measure m);
Measure parse_measure(std::string_view s);

struct ConsistencyScore {
    std::string measure;  // paraphrase, topic, use_case, multilingual, support, entropy_*
    std::string level;    // component, question, topic, overall
    Slice slice;
    bool use_case_pooled = false;  // use_case measure: both legs compared
    bool language_pooled = false;  // multilingual measure: languages compared
    std::string topic_id;
    std::string question_id;
    std::optional<std::size_t> paraphrase;
    double value = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t n_components = 0;
};

Distribution marginalize_paraphrases(const ResponseSet& rs, const Slice& s, const std::string& topic,
                                     const std::string& question);
std::string max_answer(const ResponseSet& rs, const Slice& s, const std::string& topic, const std::string& question);

ConsistencyScore paraphrase_inconsistency(const ResponseSet& rs, const Slice& s, const std::string& topic,
                                          const std::string& question, const DivergenceConfig& cfg = {});
ConsistencyScore topic_inconsistency(const ResponseSet& rs, const Slice& s, const std::string& topic,
                                     const DivergenceConfig& cfg = {});
// The slice's use_case is ignored; both legs are looked up.
ConsistencyScore usecase_inconsistency(const ResponseSet& rs, const Slice& s, const std::string& topic,
                                       const std::string& question, std::size_t paraphrase,
                                       const DivergenceConfig& cfg = {});
// The slice's language is ignored; multiple-choice records only.
ConsistencyScore multilingual_inconsistency(const ResponseSet& rs, const Slice& s, const std::string& topic,
                                            const std::string& question, std::size_t paraphrase,
                                            const std::vector<Language>& languages, const DivergenceConfig& cfg = {});
double topicwise_support(const ResponseSet& rs, const Slice& s, const std::string& topic);

// Normalized entropy of the max-answer multiset, the entropy-based
// counterpart of the paraphrase and topic measures.
double paraphrase_entropy(const ResponseSet& rs, const Slice& s, const std::string& topic, const std::string& question);
double topic_entropy(const ResponseSet& rs, const Slice& s, const std::string& topic);

struct Interval {
    double low = 0.0;
    double high = 0.0;
};

using Statistic = std::function<double(const std::vector<double>&)>;
double mean_of(const std::vector<double>& v);

// Percentile bootstrap. When n^n <= n_boot every resample is enumerated
// exactly instead of sampled.
Interval bootstrap_ci(const std::vector<double>& values, const Statistic& statistic, std::size_t n_boot = 2000,
                      double level = 95.0, std::uint64_t seed = 0);

// Type-7 sample quantile of an unsorted sample.
double quantile(std::vector<double> v, double q);

// Human CSV: participant,topic_id,question_id,paraphrase,choice[,language]
// with a header row. Each answer becomes a one-hot stance distribution
// under model "human".
ResponseSet human_responses_to_records(const std::string& csv_text, const Corpus& corpus);

// Per-participant inconsistency averaged across participants; NaN-free:
// participants lacking the needed components are skipped.
struct ParticipantAverage {
    double value = 0.0;
    std::size_t participants = 0;
};
ParticipantAverage participant_paraphrase_inconsistency(const ResponseSet& rs, const std::string& topic,
                                                        const std::string& question, const DivergenceConfig& cfg = {});
ParticipantAverage participant_topic_inconsistency(const ResponseSet& rs, const std::string& topic,
                                                   const DivergenceConfig& cfg = {});

struct AnalysisOptions {
    std::vector<Measure> measures{Measure::paraphrase, Measure::topic, Measure::use_case, Measure::multilingual};
    std::size_t n_boot = 2000;
    double ci_level = 95.0;
    std::uint64_t bootstrap_seed = 0;
    bool entropy_variants = true;
    DivergenceConfig divergence;
};

struct AnalysisResult {
    std::vector<ConsistencyScore> scores;
    ExclusionCounts excluded;
};

// Every selected measure at component, question, topic and overall level,
// plus topicwise support. Aggregates carry bootstrap intervals: questions
// are resampled within a topic, topics across the corpus.
AnalysisResult analyze(const ResponseSet& rs, const AnalysisOptions& options);

std::string scores_csv(const std::vector<ConsistencyScore>& scores);

}  // namespace valcon
