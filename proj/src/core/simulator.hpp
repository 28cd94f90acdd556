#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dataset.hpp"
#include "llm_client.hpp"
#include "steering.hpp"

namespace valcon {

struct ValueSensitivity {
    std::string value;
    double shift = 0.0;

    friend bool operator==(const ValueSensitivity&, const ValueSensitivity&) = default;
};

// Parametric answerer with known consistency. Noise enters as keyed
// pseudo-random offsets, so every answer is a pure function of the probe.
struct SyntheticRespondent {
    std::string model_name = "synthetic";
    std::map<std::string, double> topic_stances;  // latent support level per topic
    std::optional<double> default_stance;         // for topics not listed
    double paraphrase_noise = 0.0;
    double question_noise = 0.0;
    double language_noise = 0.0;
    double usecase_noise = 0.0;
    std::optional<ValueSensitivity> value_sensitivity;
    std::uint64_t seed = 0;

    // Every violated invariant, one message each.
    std::vector<std::string> violations() const;
    void validate() const;

    friend bool operator==(const SyntheticRespondent&, const SyntheticRespondent&) = default;
};

// {"schema_version":1,"kind":"respondent","model_name",...,"topic_stances":{..},
//  "value_sensitivity":{"value","shift"},"seed"}
SyntheticRespondent respondent_from_json(const nlohmann::json& j);
nlohmann::json respondent_to_json(const SyntheticRespondent& r);
SyntheticRespondent load_respondent(const std::filesystem::path& path);

// Keyed draw in [-1, 1].
double keyed_uniform(std::uint64_t seed, std::string_view axis, std::string_view key);

// Support probability before it is spread over the item's choices.
double support_level(const SyntheticRespondent& resp, const ProbeSpec& spec, std::size_t n_paraphrases);

// Stance-space answer: supports s, opposes 1 - s, neutral 0 when abstaining.
Distribution stance_answer(const SyntheticRespondent& resp, const ProbeSpec& spec, const QuestionItem& item);

// Spreads stance mass evenly over the choices carrying each stance.
Distribution spread_over_choices(const Distribution& stance, const std::vector<std::string>& choices,
                                 const QuestionItem& item);

// The record an ideal client would log for this probe: option distribution
// for multiple-choice probes, a passage with an embedded stance marker for
// open-ended ones.
ResponseRecord answer(const SyntheticRespondent& resp, const ProbeSpec& spec, const QuestionItem& item);

// "[stance supports=... opposes=... neutral=...]"
std::string stance_marker(const Distribution& stance);
std::optional<Distribution> parse_stance_marker(std::string_view text);

// Scripted replies to the dataset-generation prompts (topics, questions,
// answers, rephrasings, topic checks, bias contexts, translations); nullopt
// for any other prompt.
std::optional<std::string> synthetic_generator_reply(const std::string& prompt);

struct SyntheticCorpusShape {
    std::size_t topics = 4;
    std::size_t questions_per_topic = 5;
    std::size_t paraphrases = 3;
    std::vector<Language> languages{Language::eng};
    Country country = Country::US;
};

// yes/no items with language-tagged wordings; ids agree across languages.
Corpus synthetic_corpus(const SyntheticCorpusShape& shape);

// Local HTTP server speaking the chat-completion wire format on behalf of a
// respondent. Prompts are parsed back to items through their option lines,
// so the randomized letter order is honoured.
class MockServer {
public:
    MockServer(SyntheticRespondent resp, Corpus corpus, std::vector<PvqItem> pvq = {});
    ~MockServer();
    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    // Binds (port 0 picks a free one) and serves on a background thread.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    void stop();
    int port() const;
    std::string base_url() const;
    std::size_t requests_served() const;

    // The reply body for one prompt; throws Error(parse) for prompts the
    // server cannot map back to an item.
    nlohmann::json reply(const std::string& prompt, std::size_t top_logprobs) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Serves requests from a MockServer's reply() without a socket; the reply
// still passes through the wire-format parser.
class LoopbackClient final : public ChatClient {
public:
    explicit LoopbackClient(const MockServer& server, std::string model_name)
        : server_(server), model_(std::move(model_name)) {}
    const std::string& model_name() const override { return model_; }
    CompletionResult complete(const CompletionRequest& request) override;

private:
    const MockServer& server_;
    std::string model_;
};

}  // namespace valcon
