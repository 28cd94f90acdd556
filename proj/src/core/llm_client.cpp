#include "llm_client.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <ctime>
#include <thread>

#include "error.hpp"
#include "text_util.hpp"

namespace valcon {

using nlohmann::json;

char match_option_token(std::string_view token, const std::vector<LetterOption>& letters,
                        const ExtractionRules& rules) {
    std::string t = trim(token);
    if (!t.empty() && t.front() == '(') t.erase(0, 1);
    for (const auto& opt : letters) {
        for (const auto& suffix : rules.suffixes) {
            if (t.size() == 1 + suffix.size() && t[0] == opt.letter && t.compare(1, std::string::npos, suffix) == 0) {
                return opt.letter;
            }
        }
    }
    return '\0';
}

OptionExtraction extract_option_distribution(const TokenLogprobs& raw_logprobs,
                                             const std::vector<LetterOption>& letters,
                                             const ExtractionRules& rules) {
    require(!letters.empty(), "letter map is empty");
    std::vector<std::string> labels;
    for (const auto& opt : letters) labels.push_back(opt.choice);
    std::vector<double> mass(letters.size(), 0.0);

    // Sort tokens so the floating-point summation order does not depend on
    // the order the endpoint listed them in.
    TokenLogprobs sorted = raw_logprobs;
    std::sort(sorted.begin(), sorted.end());

    OptionExtraction out;
    for (const auto& [token, logprob] : sorted) {
        const double p = std::exp(logprob);
        const char letter = match_option_token(token, letters, rules);
        if (letter == '\0') {
            out.none_mass += p;
            continue;
        }
        for (std::size_t i = 0; i < letters.size(); ++i) {
            if (letters[i].letter == letter) mass[i] += p;
        }
    }
    for (double m : mass) out.option_mass += m;
    out.none_mass = std::clamp(out.none_mass, 0.0, 1.0);
    if (out.option_mass <= 0.0) {
        out.degenerate = true;
        out.option_probs = Distribution::uniform(std::move(labels));
    } else {
        out.option_probs = Distribution::from_masses(std::move(labels), std::move(mass));
    }
    return out;
}

void ModelEndpoint::validate() const {
    if (base_url.empty()) fail(ErrorKind::config, "endpoint base_url is empty");
    if (model_name.empty()) fail(ErrorKind::config, "endpoint model_name is empty");
    if (max_concurrent < 1) fail(ErrorKind::config, "endpoint max_concurrent must be >= 1");
    if (!(request_timeout_s > 0.0)) fail(ErrorKind::config, "endpoint request_timeout must be > 0");
}

ModelEndpoint endpoint_from_json(const json& j) {
    ModelEndpoint e;
    try {
        e.base_url = j.at("base_url").get<std::string>();
        e.model_name = j.at("model_name").get<std::string>();
        e.auth_token_env = j.value("auth_token_env", "");
        e.max_concurrent = j.value("max_concurrent", e.max_concurrent);
        e.request_timeout_s = j.value("request_timeout_s", e.request_timeout_s);
        e.supports_logprobs = j.value("supports_logprobs", e.supports_logprobs);
        e.top_logprobs = j.value("top_logprobs", e.top_logprobs);
        e.max_retries = j.value("max_retries", e.max_retries);
        e.backoff_initial_s = j.value("backoff_initial_s", e.backoff_initial_s);
        e.open_max_tokens = j.value("open_max_tokens", e.open_max_tokens);
        if (j.contains("extra_token_suffixes")) {
            for (const auto& s : j.at("extra_token_suffixes")) e.extraction.suffixes.push_back(s.get<std::string>());
        }
    } catch (const json::exception& ex) {
        fail(ErrorKind::config, fmt::format("invalid endpoint: {}", ex.what()));
    }
    e.validate();
    return e;
}

json endpoint_to_json(const ModelEndpoint& e) {
    return {{"base_url", e.base_url},
            {"model_name", e.model_name},
            {"auth_token_env", e.auth_token_env},
            {"max_concurrent", e.max_concurrent},
            {"request_timeout_s", e.request_timeout_s},
            {"supports_logprobs", e.supports_logprobs},
            {"top_logprobs", e.top_logprobs},
            {"max_retries", e.max_retries},
            {"backoff_initial_s", e.backoff_initial_s},
            {"open_max_tokens", e.open_max_tokens}};
}

json completion_request_body(const std::string& model, const CompletionRequest& request) {
    json body{{"model", model},
              {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})},
              {"temperature", request.temperature},
              {"n", 1},
              {"max_tokens", request.max_tokens}};
    if (request.top_logprobs > 0) {
        body["logprobs"] = true;
        body["top_logprobs"] = request.top_logprobs;
    }
    return body;
}

CompletionResult parse_completion_response(const json& body, bool logprobs_requested) {
    CompletionResult result;
    try {
        const json& choice = body.at("choices").at(0);
        const json& message = choice.at("message");
        if (message.contains("content") && message.at("content").is_string()) {
            result.text = message.at("content").get<std::string>();
        }
        if (logprobs_requested) {
            auto lp = choice.find("logprobs");
            if (lp == choice.end() || !lp->is_object() || !lp->contains("content") ||
                !lp->at("content").is_array() || lp->at("content").empty()) {
                fail(ErrorKind::config, "endpoint lacks logprob support");
            }
            TokenLogprobs tokens;
            const json& first = lp->at("content").at(0);
            for (const auto& top : first.at("top_logprobs")) {
                tokens.emplace_back(top.at("token").get<std::string>(), top.at("logprob").get<double>());
            }
            if (tokens.empty() && first.contains("token")) {
                tokens.emplace_back(first.at("token").get<std::string>(), first.at("logprob").get<double>());
            }
            result.first_token_logprobs = std::move(tokens);
        }
    } catch (const json::exception& ex) {
        fail(ErrorKind::network, fmt::format("malformed completion response: {}", ex.what()));
    }
    return result;
}

std::string cache_key(std::string_view kind, const std::string& model, const CompletionRequest& request,
                      std::string_view context) {
    json material{{"kind", kind},
                  {"model", model},
                  {"prompt", request.prompt},
                  {"max_tokens", request.max_tokens},
                  {"temperature", request.temperature},
                  {"top_logprobs", request.top_logprobs}};
    if (!context.empty()) material["context"] = context;
    return sha256_hex(material.dump());
}

HttpChatClient::HttpChatClient(ModelEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    endpoint_.validate();
    const auto scheme = endpoint_.base_url.find("://");
    if (scheme == std::string::npos) fail(ErrorKind::config, "endpoint base_url needs a scheme: " + endpoint_.base_url);
    const auto path = endpoint_.base_url.find('/', scheme + 3);
    scheme_host_port_ = endpoint_.base_url.substr(0, path);
    path_prefix_ = path == std::string::npos ? "" : endpoint_.base_url.substr(path);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

CompletionResult HttpChatClient::complete(const CompletionRequest& request) {
    const std::string body = completion_request_body(endpoint_.model_name, request).dump();
    httplib::Headers headers;
    if (!endpoint_.auth_token_env.empty()) {
        if (const char* token = std::getenv(endpoint_.auth_token_env.c_str())) {
            headers.emplace("Authorization", std::string("Bearer ") + token);
        }
    }
    const auto timeout = std::chrono::duration<double>(endpoint_.request_timeout_s);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);

    std::string last_error;
    for (std::size_t attempt = 0; attempt <= endpoint_.max_retries; ++attempt) {
        if (attempt > 0) {
            const double delay = endpoint_.backoff_initial_s * std::pow(2.0, static_cast<double>(attempt - 1));
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
        httplib::Client client(scheme_host_port_);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        auto res = client.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            spdlog::debug("{}: attempt {} failed: {}", endpoint_.model_name, attempt + 1, last_error);
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = fmt::format("HTTP {}", res->status);
            continue;
        }
        if (res->status != 200) {
            fail(ErrorKind::network, fmt::format("{}: HTTP {}: {}", endpoint_.model_name, res->status, res->body));
        }
        json reply;
        try {
            reply = json::parse(res->body);
        } catch (const json::parse_error& ex) {
            fail(ErrorKind::network, fmt::format("{}: reply is not JSON: {}", endpoint_.model_name, ex.what()));
        }
        return parse_completion_response(reply, request.top_logprobs > 0);
    }
    fail(ErrorKind::network, fmt::format("{}: request failed after {} attempt(s): {}", endpoint_.model_name,
                                         endpoint_.max_retries + 1, last_error));
}

json distribution_to_json(const Distribution& d) {
    return {{"labels", d.labels()}, {"probs", d.probs()}};
}

Distribution distribution_from_json(const json& j) {
    return Distribution(j.at("labels").get<std::vector<std::string>>(), j.at("probs").get<std::vector<double>>());
}

json probe_to_json(const ProbeSpec& p) {
    json j{{"topic_id", p.topic_id},
           {"question_id", p.question_id},
           {"language", std::string(to_string(p.language))},
           {"paraphrase_index", p.paraphrase_index},
           {"use_case", std::string(to_string(p.use_case))},
           {"abstain", p.abstain_enabled},
           {"order_seed", p.order_seed},
           {"in_context_example", p.in_context_example}};
    j["value_condition"] = p.value_condition ? json(*p.value_condition) : json(nullptr);
    j["context_statement"] = p.context_statement ? json(*p.context_statement) : json(nullptr);
    j["instruction"] = p.instruction ? json(*p.instruction) : json(nullptr);
    return j;
}

namespace {

std::optional<std::string> optional_string(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
}

}  // namespace

ProbeSpec probe_from_json(const json& j) {
    ProbeSpec p;
    p.topic_id = j.at("topic_id").get<std::string>();
    p.question_id = j.at("question_id").get<std::string>();
    p.language = parse_language(j.at("language").get<std::string>());
    p.paraphrase_index = j.at("paraphrase_index").get<std::size_t>();
    p.use_case = parse_use_case(j.at("use_case").get<std::string>());
    p.abstain_enabled = j.value("abstain", false);
    p.order_seed = j.value("order_seed", std::uint64_t{0});
    p.in_context_example = j.value("in_context_example", false);
    p.value_condition = optional_string(j, "value_condition");
    p.context_statement = optional_string(j, "context_statement");
    p.instruction = optional_string(j, "instruction");
    return p;
}

json to_json(const ResponseRecord& r) {
    json letters = json::array();
    for (const auto& l : r.letters) letters.push_back({{"letter", std::string(1, l.letter)}, {"choice", l.choice}});
    json raw = json::array();
    for (const auto& [token, lp] : r.raw_logprobs) raw.push_back({{"token", token}, {"logprob", lp}});
    json j{{"kind", "probe"},
           {"cache_key", r.cache_key},
           {"model", r.model},
           {"probe", probe_to_json(r.probe)},
           {"prompt", r.prompt},
           {"letters", letters},
           {"option_mass", r.option_mass},
           {"none_mass", r.none_mass},
           {"degenerate", r.degenerate},
           {"raw_logprobs", raw},
           {"timestamp", r.timestamp}};
    j["option_probs"] = r.option_probs ? distribution_to_json(*r.option_probs) : json(nullptr);
    j["generation"] = r.generation ? json(*r.generation) : json(nullptr);
    return j;
}

ResponseRecord response_from_json(const json& j) {
    try {
        ResponseRecord r;
        r.cache_key = j.at("cache_key").get<std::string>();
        r.model = j.at("model").get<std::string>();
        r.probe = probe_from_json(j.at("probe"));
        r.prompt = j.value("prompt", "");
        for (const auto& l : j.at("letters")) {
            r.letters.push_back(LetterOption{l.at("letter").get<std::string>().at(0), l.at("choice").get<std::string>()});
        }
        if (!j.at("option_probs").is_null()) r.option_probs = distribution_from_json(j.at("option_probs"));
        r.generation = optional_string(j, "generation");
        r.option_mass = j.value("option_mass", 0.0);
        r.none_mass = j.at("none_mass").get<double>();
        r.degenerate = j.value("degenerate", false);
        for (const auto& t : j.at("raw_logprobs")) {
            r.raw_logprobs.emplace_back(t.at("token").get<std::string>(), t.at("logprob").get<double>());
        }
        r.timestamp = j.value("timestamp", "");
        if (r.option_probs.has_value() == r.generation.has_value()) {
            fail(ErrorKind::validation, "record " + r.cache_key + " must carry exactly one of option_probs/generation");
        }
        return r;
    } catch (const json::exception& ex) {
        fail(ErrorKind::parse, fmt::format("malformed probe record: {}", ex.what()));
    }
}

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Prober::Prober(std::shared_ptr<ChatClient> client, ModelEndpoint endpoint, RecordStore& store, Clock clock)
    : client_(std::move(client)), endpoint_(std::move(endpoint)), store_(store), clock_(std::move(clock)) {}

ResponseRecord Prober::probe(const ProbeSpec& spec, const QuestionItem& item) {
    return probe(spec, item, true, nullptr);
}

ResponseRecord Prober::probe(const ProbeSpec& spec, const QuestionItem& item, bool append, bool* from_cache) {
    if (from_cache) *from_cache = false;
    if (spec.paraphrase_index >= item.paraphrases.size()) {
        fail(ErrorKind::invalid_argument, "paraphrase index out of range for " + item.coordinates());
    }
    ResponseRecord record;
    record.model = endpoint_.model_name;
    record.probe = spec;
    CompletionRequest request;
    if (spec.use_case == UseCase::multiple_choice) {
        if (!endpoint_.supports_logprobs) fail(ErrorKind::config, endpoint_.model_name + ": endpoint lacks logprob support");
        auto prompt = build_mc_prompt(spec, item);
        record.prompt = std::move(prompt.text);
        record.letters = std::move(prompt.letters);
        request.max_tokens = 1;
        request.top_logprobs = endpoint_.top_logprobs;
    } else {
        record.prompt = build_open_prompt(spec, item);
        request.max_tokens = endpoint_.open_max_tokens;
    }
    request.prompt = record.prompt;
    record.cache_key = cache_key("probe", endpoint_.model_name, request, probe_to_json(spec).dump());
    if (auto cached = store_.find(record.cache_key)) {
        if (from_cache) *from_cache = true;
        return response_from_json(*cached);
    }

    const CompletionResult result = client_->complete(request);
    if (spec.use_case == UseCase::multiple_choice) {
        if (!result.first_token_logprobs) fail(ErrorKind::config, endpoint_.model_name + ": endpoint lacks logprob support");
        record.raw_logprobs = *result.first_token_logprobs;
        auto extraction = extract_option_distribution(record.raw_logprobs, record.letters, endpoint_.extraction);
        record.option_probs = std::move(extraction.option_probs);
        record.option_mass = extraction.option_mass;
        record.none_mass = extraction.none_mass;
        record.degenerate = extraction.degenerate;
    } else {
        record.generation = result.text;
    }
    record.timestamp = clock_();
    if (append) store_.append(to_json(record));
    return record;
}

}  // namespace valcon
