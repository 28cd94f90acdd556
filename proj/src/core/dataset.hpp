#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "divergence.hpp"

namespace valcon {

enum class Stance { supports, opposes, neutral };
enum class Language { eng, chi, ger, jpn };
enum class Country { US, China, Germany, Japan };

std::string_view to_string(Stance s);
std::string_view to_string(Language l);
std::string_view to_string(Country c);
Stance parse_stance(std::string_view s);
Language parse_language(std::string_view s);
Country parse_country(std::string_view s);

// Full English name used inside generation prompts ("English", "German", ...).
std::string_view language_name(Language l);
std::string_view country_name(Country c);

// Labels of the stance space; neutral only when abstention is enabled.
std::vector<std::string> stance_labels(bool abstain_enabled);

struct Choice {
    std::string text;
    Stance stance = Stance::neutral;

    friend bool operator==(const Choice&, const Choice&) = default;
};

struct QuestionItem {
    std::string topic_id;
    std::string question_id;
    std::vector<std::string> paraphrases;  // [0] is the canonical wording
    std::vector<Choice> choices;
    Language language = Language::eng;
    Country country = Country::US;
    bool controversial = true;
    bool translated = false;

    const std::string& canonical_text() const { return paraphrases.at(0); }
    const Choice* find_choice(std::string_view text) const;
    std::vector<std::string> choice_texts() const;
    // "topic/question/lang", used in messages and as a lookup key.
    std::string coordinates() const;

    friend bool operator==(const QuestionItem&, const QuestionItem&) = default;
};

struct TopicInfo {
    std::string name;
    std::string description;

    friend bool operator==(const TopicInfo&, const TopicInfo&) = default;
};

struct Provenance {
    std::string generator_model;
    std::string date;
    std::string prompt_version;

    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Corpus {
    std::vector<QuestionItem> items;
    std::map<std::string, TopicInfo> topics;
    Provenance provenance;

    const QuestionItem* find(std::string_view topic_id, std::string_view question_id,
                             Language language) const;

    friend bool operator==(const Corpus&, const Corpus&) = default;
};

inline constexpr int kCorpusSchemaVersion = 1;

// Every invariant violation, each prefixed with the item's coordinates.
std::vector<std::string> validate_corpus(const Corpus& corpus);

// Parses and validates; throws parse errors with line/column and validation
// errors listing every violation.
Corpus parse_corpus(std::string_view text, const std::string& source = "<memory>");
Corpus load_corpus(const std::filesystem::path& path);
std::string corpus_to_json(const Corpus& corpus);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

// The abstain option offered in multiple-choice prompts; projects to neutral.
std::string_view abstain_text(Language l);

// Sums choice mass per stance. Without abstention, neutral mass is dropped
// and the remainder renormalized.
Distribution stance_projection(const Distribution& choice_dist, const QuestionItem& item,
                               bool abstain_enabled);

struct CorpusStatsRow {
    bool controversial = false;
    bool translated = false;
    Language language = Language::eng;
    Country country = Country::US;
    std::size_t topics = 0;
    std::size_t questions = 0;
    double questions_per_topic = 0.0;
    double paraphrases_per_question = 0.0;
    std::optional<double> yes_supports_fraction;  // absent when no item has a "yes" choice
    std::size_t total_questions = 0;              // question x paraphrase pairs
};

std::vector<CorpusStatsRow> corpus_stats(const Corpus& corpus);
std::string corpus_stats_csv(const std::vector<CorpusStatsRow>& rows);

}  // namespace valcon
