#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "llm_client.hpp"

namespace valcon {

inline constexpr std::array<std::string_view, 12> kSchwartzValues{
    "self-direction", "stimulation", "hedonism",    "achievement",  "power",       "security",
    "conformity",     "tradition",   "benevolence", "universalism", "spirituality", "humility"};

bool is_schwartz_value(std::string_view v);

inline constexpr std::string_view kPvqTopic = "pvq";

struct PvqItem {
    std::string id;
    std::string statement;
    std::string relevant_value;
    Language language = Language::eng;
    std::string like_text;      // "This person is like me."
    std::string not_like_text;  // "This person is not like me."

    friend bool operator==(const PvqItem&, const PvqItem&) = default;
};

// One file per language: {"schema_version", "kind": "pvq", "language",
// "choices": {"like", "not_like"}, "items": [{"id", "statement", "relevant_value"}]}.
std::vector<PvqItem> parse_pvq_items(std::string_view text, const std::string& source = "<memory>");
std::vector<PvqItem> load_pvq_items(const std::filesystem::path& path);

// Portrait as a two-choice question under the reserved "pvq" topic.
QuestionItem pvq_question(const PvqItem& item);
ProbeSpec pvq_probe(const PvqItem& item, std::optional<std::string> value, std::uint64_t order_seed);

struct Influence {
    double jsd = 0.0;     // D_JS(conditioned || baseline), nats
    double signed_value = 0.0;  // p(c'|v) - p(c'|none), c' = argmax of conditioned
};

Influence value_influence(const Distribution& baseline, const Distribution& conditioned);
// Throws when either leg's extraction was degenerate.
Influence value_influence(const ResponseRecord& baseline, const ResponseRecord& conditioned);

// Position of the relevant value when all values are sorted ascending by
// influence; a tie group spanning positions lo..hi yields floor((lo+hi)/2).
int steerability_rank(const std::map<std::string, double>& influences, const std::string& relevant);

struct SteerabilityResult {
    std::string model;
    std::string item_id;
    Language language = Language::eng;
    std::string relevant_value;
    std::map<std::string, double> influences;
    std::map<std::string, double> signed_steerability;
    int rank_of_relevant = 0;
};

// Baseline plus one probe per value; every probe shares the order seed so
// the lettering is identical across conditions.
SteerabilityResult measure_steerability(Prober& prober, const PvqItem& item, std::uint64_t order_seed);

std::string steerability_csv(const std::vector<SteerabilityResult>& results);

}  // namespace valcon
