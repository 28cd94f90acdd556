#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "prompts.hpp"
#include "record_store.hpp"

namespace valcon {

using TokenLogprobs = std::vector<std::pair<std::string, double>>;

// Closed rule set: after trimming whitespace and one leading "(", a token
// counts toward letter X iff it equals X followed by one of the suffixes.
struct ExtractionRules {
    std::vector<std::string> suffixes{"", ".", ")", ":"};
};

struct OptionExtraction {
    Distribution option_probs;  // over choice texts, renormalized
    double option_mass = 0.0;   // pre-normalization mass on option tokens
    double none_mass = 0.0;     // mass on every other listed token
    bool degenerate = false;    // no option token present; option_probs uniform
};

// Letter the token maps to, or '\0' when the token is not an option letter.
char match_option_token(std::string_view token, const std::vector<LetterOption>& letters,
                        const ExtractionRules& rules = {});

OptionExtraction extract_option_distribution(const TokenLogprobs& raw_logprobs,
                                             const std::vector<LetterOption>& letters,
                                             const ExtractionRules& rules = {});

struct ModelEndpoint {
    std::string base_url;  // e.g. http://127.0.0.1:8080/v1
    std::string model_name;
    std::string auth_token_env;
    std::size_t max_concurrent = 4;
    double request_timeout_s = 60.0;
    bool supports_logprobs = true;
    std::size_t top_logprobs = 20;
    std::size_t max_retries = 3;
    double backoff_initial_s = 0.5;
    std::size_t open_max_tokens = 512;
    ExtractionRules extraction;

    void validate() const;
};

ModelEndpoint endpoint_from_json(const nlohmann::json& j);
nlohmann::json endpoint_to_json(const ModelEndpoint& e);

struct CompletionRequest {
    std::string prompt;
    std::size_t max_tokens = 1;
    double temperature = 0.0;
    std::size_t top_logprobs = 0;  // 0: do not request logprobs
};

struct CompletionResult {
    std::string text;
    std::optional<TokenLogprobs> first_token_logprobs;
};

class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual const std::string& model_name() const = 0;
    virtual CompletionResult complete(const CompletionRequest& request) = 0;
};

// Chat-completion wire client with bounded exponential backoff on transport
// failures, HTTP 429 and 5xx.
class HttpChatClient final : public ChatClient {
public:
    explicit HttpChatClient(ModelEndpoint endpoint);
    const std::string& model_name() const override { return endpoint_.model_name; }
    const ModelEndpoint& endpoint() const { return endpoint_; }
    CompletionResult complete(const CompletionRequest& request) override;

private:
    ModelEndpoint endpoint_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

// Request body / reply parsing for the chat-completion wire format.
nlohmann::json completion_request_body(const std::string& model, const CompletionRequest& request);
CompletionResult parse_completion_response(const nlohmann::json& body, bool logprobs_requested);

// sha256 over the model name, prompt and decoding parameters. The context
// separates requests whose prompts coincide but whose records differ.
std::string cache_key(std::string_view kind, const std::string& model, const CompletionRequest& request,
                      std::string_view context = {});

struct ResponseRecord {
    std::string model;
    ProbeSpec probe;
    std::string prompt;
    std::vector<LetterOption> letters;
    std::optional<Distribution> option_probs;
    std::optional<std::string> generation;
    double option_mass = 0.0;
    double none_mass = 0.0;
    bool degenerate = false;
    TokenLogprobs raw_logprobs;
    std::string timestamp;
    std::string cache_key;

    friend bool operator==(const ResponseRecord&, const ResponseRecord&) = default;
};

nlohmann::json to_json(const ResponseRecord& r);
ResponseRecord response_from_json(const nlohmann::json& j);
nlohmann::json probe_to_json(const ProbeSpec& p);
ProbeSpec probe_from_json(const nlohmann::json& j);
nlohmann::json distribution_to_json(const Distribution& d);
Distribution distribution_from_json(const nlohmann::json& j);

using Clock = std::function<std::string()>;
std::string utc_timestamp();

// Probes one endpoint; records are content-addressed in the store and served
// from it on repeat.
class Prober {
public:
    Prober(std::shared_ptr<ChatClient> client, ModelEndpoint endpoint, RecordStore& store,
           Clock clock = utc_timestamp);

    ResponseRecord probe(const ProbeSpec& spec, const QuestionItem& item);
    // As probe(); a fresh record is appended to the store only when asked,
    // letting callers commit records in a fixed order.
    ResponseRecord probe(const ProbeSpec& spec, const QuestionItem& item, bool append, bool* from_cache);
    const ModelEndpoint& endpoint() const { return endpoint_; }
    ChatClient& client() { return *client_; }
    RecordStore& store() { return store_; }

private:
    std::shared_ptr<ChatClient> client_;
    ModelEndpoint endpoint_;
    RecordStore& store_;
    Clock clock_;
};

}  // namespace valcon
