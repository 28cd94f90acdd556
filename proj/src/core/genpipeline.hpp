#pragma once

#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "llm_client.hpp"

namespace valcon {

struct GenerationJob {
    Country country = Country::US;
    Language language = Language::eng;
    bool controversial = true;
    std::size_t n_topics = 1;
    std::size_t n_questions_per_topic = 1;
    std::size_t n_paraphrases = 1;
    ModelEndpoint generator;
    std::vector<Language> target_translation_languages;
    bool topic_filter = true;
    bool bias_contexts = false;
    std::size_t max_attempts = 3;  // per structured reply
    std::size_t max_tokens = 1024;
    std::string prompt_version = "gen-v1";

    void validate() const;
};

GenerationJob generation_job_from_json(const nlohmann::json& j);
nlohmann::json generation_job_to_json(const GenerationJob& job);

// Prompt templates.
std::string topics_prompt(std::size_t n, bool controversial, Country country, Language language);
std::string questions_prompt(std::size_t n, bool controversial, Language language, const TopicInfo& topic);
std::string answers_prompt(const std::string& topic, const std::string& question);
std::string paraphrases_prompt(const std::string& question, std::size_t n);
std::string topic_match_prompt(const std::string& topic, const std::string& question);
std::string bias_context_prompt(const std::string& question, const std::string& answer);
std::string translation_prompt(const std::vector<std::string>& texts, Language from, Language to);

// First well-formed JSON value opening with `open` ('[' or '{'), ignoring
// surrounding prose and code fences.
std::optional<nlohmann::ordered_json> first_json(std::string_view text, char open);

// Lowercased, trimmed, trailing punctuation and quotes removed.
std::string normalize_token(std::string_view reply);

// One dropped unit. Units are "question" (reconciles requested against
// emitted items), "paraphrase" and "translation".
struct DropRecord {
    std::string unit;
    std::string reason;
    std::string topic;
    std::string question;
    std::size_t count = 1;
    std::string detail;
};

struct GenerationReport {
    std::size_t requested_questions = 0;
    std::size_t emitted_questions = 0;
    std::size_t requested_paraphrases = 0;
    std::size_t emitted_paraphrases = 0;
    std::size_t requested_translations = 0;
    std::size_t emitted_translations = 0;
    std::vector<DropRecord> drops;
    std::vector<std::string> warnings;

    std::size_t dropped(std::string_view unit) const;
    void drop(DropRecord d);
};

std::string drop_report_csv(const GenerationReport& report);

// Cached generator calls. Each attempt of a retried prompt has its own key,
// so a rerun replays the same replies in the same order.
class Generator {
public:
    Generator(std::shared_ptr<ChatClient> client, ModelEndpoint endpoint, RecordStore& store,
              Clock clock = utc_timestamp);

    std::string complete(const std::string& prompt, std::size_t attempt, std::size_t max_tokens);
    std::size_t calls() const { return calls_; }
    std::size_t cache_hits() const { return hits_; }
    // Timestamp of the first record served or written.
    const std::string& first_timestamp() const { return first_timestamp_; }
    const ModelEndpoint& endpoint() const { return endpoint_; }

private:
    std::shared_ptr<ChatClient> client_;
    ModelEndpoint endpoint_;
    RecordStore& store_;
    Clock clock_;
    std::size_t calls_ = 0;
    std::size_t hits_ = 0;
    std::string first_timestamp_;
};

std::vector<TopicInfo> generate_topics(Generator& gen, const GenerationJob& job, GenerationReport& report);
// Deduplicated questions that pass the topic filter.
std::vector<std::string> generate_questions(Generator& gen, const TopicInfo& topic, const GenerationJob& job,
                                            GenerationReport& report);
// Nullopt when the generator calls the question open-ended.
std::optional<std::vector<Choice>> generate_answers(Generator& gen, const std::string& topic,
                                                    const std::string& question, const GenerationJob& job);
std::vector<std::string> generate_paraphrases(Generator& gen, const std::string& question, std::size_t n,
                                              const GenerationJob& job, GenerationReport& report,
                                              const std::string& topic_id = {});
bool topic_match_filter(Generator& gen, const std::string& topic, const std::string& question,
                        const GenerationJob& job, GenerationReport* report = nullptr);
QuestionItem translate_item(Generator& gen, const QuestionItem& item, Language target, const GenerationJob& job);
Corpus translate_corpus(Generator& gen, const Corpus& corpus, Language target, const GenerationJob& job);
std::string generate_bias_context(Generator& gen, const std::string& question, const std::string& answer,
                                  const GenerationJob& job, GenerationReport* report = nullptr);

struct BiasContext {
    std::string topic_id;
    std::string question_id;
    Language language = Language::eng;
    std::string answer;
    std::string context;
};

std::string contexts_to_json(const std::vector<BiasContext>& contexts);
std::vector<BiasContext> contexts_from_json(std::string_view text);

struct GenerationOutput {
    Corpus corpus;  // source-language items followed by translations
    std::vector<BiasContext> contexts;
    GenerationReport report;
};

GenerationOutput run_generation(Generator& gen, const GenerationJob& job);

}  // namespace valcon
