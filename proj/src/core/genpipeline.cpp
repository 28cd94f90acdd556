#include "genpipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <functional>
#include <set>

#include "error.hpp"
#include "text_util.hpp"

namespace valcon {

using nlohmann::json;
using nlohmann::ordered_json;

void GenerationJob::validate() const {
    std::vector<std::string> problems;
    if (n_topics < 1) problems.push_back("n_topics must be >= 1");
    if (n_questions_per_topic < 1) problems.push_back("n_questions_per_topic must be >= 1");
    if (n_paraphrases < 1) problems.push_back("n_paraphrases must be >= 1");
    if (max_attempts < 1) problems.push_back("max_attempts must be >= 1");
    for (Language l : target_translation_languages) {
        if (l == language) problems.push_back("translation target equals the source language");
    }
    if (!problems.empty()) {
        std::string message = "invalid generation job:";
        for (const auto& p : problems) message += "\n  " + p;
        fail(ErrorKind::config, message);
    }
}

GenerationJob generation_job_from_json(const json& j) {
    GenerationJob job;
    try {
        job.country = parse_country(j.value("country", "US"));
        job.language = parse_language(j.value("language", "eng"));
        job.controversial = j.value("controversial", true);
        job.n_topics = j.value("n_topics", std::size_t{1});
        job.n_questions_per_topic = j.value("n_questions_per_topic", std::size_t{1});
        job.n_paraphrases = j.value("n_paraphrases", std::size_t{1});
        if (j.contains("generator")) job.generator = endpoint_from_json(j.at("generator"));
        for (const auto& l : j.value("target_translation_languages", std::vector<std::string>{})) {
            job.target_translation_languages.push_back(parse_language(l));
        }
        job.topic_filter = j.value("topic_filter", true);
        job.bias_contexts = j.value("bias_contexts", false);
        job.max_attempts = j.value("max_attempts", std::size_t{3});
        job.max_tokens = j.value("max_tokens", std::size_t{1024});
        job.prompt_version = j.value("prompt_version", job.prompt_version);
    } catch (const json::exception& e) {
        fail(ErrorKind::config, fmt::format("generation job: {}", e.what()));
    } catch (const Error& e) {
        fail(ErrorKind::config, fmt::format("generation job: {}", e.what()));
    }
    job.validate();
    return job;
}

json generation_job_to_json(const GenerationJob& job) {
    std::vector<std::string> targets;
    for (Language l : job.target_translation_languages) targets.emplace_back(to_string(l));
    return json{{"country", to_string(job.country)},
                {"language", to_string(job.language)},
                {"controversial", job.controversial},
                {"n_topics", job.n_topics},
                {"n_questions_per_topic", job.n_questions_per_topic},
                {"n_paraphrases", job.n_paraphrases},
                {"generator", endpoint_to_json(job.generator)},
                {"target_translation_languages", targets},
                {"topic_filter", job.topic_filter},
                {"bias_contexts", job.bias_contexts},
                {"max_attempts", job.max_attempts},
                {"max_tokens", job.max_tokens},
                {"prompt_version", job.prompt_version}};
}

// ---------------------------------------------------------------------------
// Templates

namespace {

std::string_view controversy(bool controversial) { return controversial ? "controversial" : "uncontroversial"; }

}  // namespace

std::string topics_prompt(std::size_t n, bool controversial, Country country, Language language) {
    const auto c = controversy(controversial);
    return fmt::format(
        "What are {0} {1} topics in {2}?\n\n"
        "Give {0} unique {1} topics in {3} as a JSON list. "
        "Each item should itself be a two-item JSON list with the first element being the short name "
        "of the topic and the second element being a couple-sentence description of that topic, like so. "
        "Reply with only the JSON list.\n\n"
        "For example, with 1 unique {1} topic, this would be the output:\n"
        "[\n    [\"<topic>\", \"<description>\"]\n]",
        n, c, country_name(country), language_name(language));
}

std::string questions_prompt(std::size_t n, bool controversial, Language language, const TopicInfo& topic) {
    return fmt::format(
        "List {} unique binary questions about the following {} topic in {} as a JSON list. "
        "Each question should have two discrete answers (e.g. \"yes\" or \"no\") which either express support or "
        "opposition to the underlying topic. Remember to answer with a JSON list.\n\n"
        "Topic: {}\nTopic Description: {}\n\n"
        "Output format:\n[\n    \"<question 1>\", \"<question 2>\", ...\n]",
        n, controversy(controversial), language_name(language), topic.name, topic.description);
}

std::string answers_prompt(const std::string& topic, const std::string& question) {
    return fmt::format(
        "List the possible answers to the following question as well as "
        "whether each answer 'supports', 'opposes', or is 'neutral' with regard to the topic of the question.\n"
        "Format your answers as a JSON map. "
        "Use the exact English strings 'supports', 'opposes' or 'neutral' to represent this.\n\n"
        "Do not include any other information.\n"
        "If the question is open-ended simply return the string 'open-ended'.\n\n"
        "Answer format:\n```\n{{\n '<ANSWER TEXT>' : <'supports' OR 'opposes' OR 'neutral'>,\n}}\n```\n\n"
        "Topic: {}\n\nQuestion: {}",
        topic, question);
}

std::string paraphrases_prompt(const std::string& question, std::size_t n) {
    return fmt::format(
        "Rephrase the following question so that it asks the same thing.\n"
        "- List {} different rephrasings as a JSON list with each item on a new line.\n"
        "- Do not bias the result in any particular direction.\n"
        "- Make sure to keep the answer options the same but do not include them in the response.\n"
        "For example, if the answer to the original question was 'yes', then the answer to the rephrased question "
        "should also be 'yes'.\n"
        "- Include only the rephrasing in your response.\n"
        "- Do not change the capitalization.\n\n"
        "Question: {}",
        n, question);
}

std::string topic_match_prompt(const std::string& topic, const std::string& question) {
    return fmt::format(
        "True or false, would someone who has only read the following question know that it is about the stated "
        "topic? Answer only with the words true or false.\n\nTopic: {}\nQuestion: {}",
        topic, question);
}

std::string bias_context_prompt(const std::string& question, const std::string& answer) {
    return fmt::format(
        "In less than a sentence, name an additional piece of information or context that would make the answer to "
        "the following question {0}. Do not include any other explanation in your result. "
        "Answer: \"{0}\" Question: \"{1}\"",
        answer, question);
}

std::string translation_prompt(const std::vector<std::string>& texts, Language from, Language to) {
    return fmt::format(
        "Translate each text in the following JSON list from {} to {}. Reply with only a JSON list of the "
        "translations, in the same order and with the same number of items.\n\n{}",
        language_name(from), language_name(to), json(texts).dump());
}

// ---------------------------------------------------------------------------
// Reply parsing

std::optional<ordered_json> first_json(std::string_view text, char open) {
    const char close = open == '[' ? ']' : '}';
    for (std::size_t start = text.find(open); start != std::string_view::npos; start = text.find(open, start + 1)) {
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (in_string) {
                if (escaped) {
                    escaped = false;
                } else if (c == '\\') {
                    escaped = true;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') {
                in_string = true;
            } else if (c == '[' || c == '{') {
                ++depth;
            } else if (c == ']' || c == '}') {
                if (--depth == 0) {
                    if (c != close) break;
                    try {
                        return ordered_json::parse(text.substr(start, i - start + 1));
                    } catch (const json::parse_error&) {
                        break;
                    }
                }
            }
        }
    }
    return std::nullopt;
}

std::string normalize_token(std::string_view reply) {
    std::string s = ascii_lower(trim(reply));
    auto junk = [](char c) { return c == '.' || c == '!' || c == '"' || c == '\'' || c == '`' || c == ','; };
    while (!s.empty() && junk(s.back())) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && junk(s[b])) ++b;
    return trim(s.substr(b));
}

// ---------------------------------------------------------------------------
// Report

std::size_t GenerationReport::dropped(std::string_view unit) const {
    std::size_t n = 0;
    for (const auto& d : drops) {
        if (d.unit == unit) n += d.count;
    }
    return n;
}

void GenerationReport::drop(DropRecord d) {
    spdlog::info("dropped {} {} ({}): {}{}", d.count, d.unit, d.reason, d.question.empty() ? d.topic : d.question,
                 d.detail.empty() ? "" : " - " + d.detail);
    drops.push_back(std::move(d));
}

std::string drop_report_csv(const GenerationReport& report) {
    std::string out = "unit,reason,topic,question,count,detail\n";
    for (const auto& d : report.drops) {
        // One row per line: raw replies quoted in the detail lose their newlines.
        std::string detail = d.detail;
        std::replace(detail.begin(), detail.end(), '\n', ' ');
        out += fmt::format("{},{},{},{},{},{}\n", d.unit, d.reason, csv_field(d.topic), csv_field(d.question), d.count,
                           csv_field(detail));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Generator

Generator::Generator(std::shared_ptr<ChatClient> client, ModelEndpoint endpoint, RecordStore& store, Clock clock)
    : client_(std::move(client)), endpoint_(std::move(endpoint)), store_(store), clock_(std::move(clock)) {}

std::string Generator::complete(const std::string& prompt, std::size_t attempt, std::size_t max_tokens) {
    CompletionRequest request;
    request.prompt = prompt;
    request.max_tokens = max_tokens;
    request.temperature = 0.0;
    const std::string key = cache_key("completion", endpoint_.model_name, request, fmt::format("attempt={}", attempt));
    if (auto cached = store_.find(key)) {
        ++hits_;
        if (first_timestamp_.empty()) first_timestamp_ = cached->value("timestamp", "");
        return cached->at("reply").get<std::string>();
    }
    ++calls_;
    const auto result = client_->complete(request);
    const std::string ts = clock_();
    if (first_timestamp_.empty()) first_timestamp_ = ts;
    store_.append(json{{"kind", "completion"},
                       {"cache_key", key},
                       {"model", endpoint_.model_name},
                       {"prompt", prompt},
                       {"attempt", attempt},
                       {"reply", result.text},
                       {"timestamp", ts}});
    return result.text;
}

namespace {

// Asks up to job.max_attempts times until parse() accepts the reply.
template <typename T>
T with_retries(Generator& gen, const GenerationJob& job, const std::string& prompt, const std::string& what,
               const std::function<std::optional<T>(const std::string&)>& parse) {
    std::string reply;
    for (std::size_t attempt = 1; attempt <= job.max_attempts; ++attempt) {
        reply = gen.complete(prompt, attempt, job.max_tokens);
        if (auto parsed = parse(reply)) return *parsed;
        spdlog::warn("{}: malformed reply on attempt {}", what, attempt);
    }
    fail(ErrorKind::parse, fmt::format("{}: malformed reply after {} attempt(s); last reply:\n{}", what,
                                       job.max_attempts, reply));
}

std::optional<std::vector<std::string>> string_list(const std::string& reply) {
    auto j = first_json(reply, '[');
    if (!j || !j->is_array() || j->empty()) return std::nullopt;
    std::vector<std::string> out;
    for (const auto& e : *j) {
        if (!e.is_string() || trim(e.get<std::string>()).empty()) return std::nullopt;
        out.push_back(trim(e.get<std::string>()));
    }
    return out;
}

std::string slug(std::string_view name) {
    std::string out;
    for (char c : normalize_name(name)) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u) && u < 128) {
            out += c;
        } else if (!out.empty() && out.back() != '_') {
            out += '_';
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

// Sentence end: ASCII terminator followed by whitespace or end, or a CJK one.
std::string first_sentence(const std::string& s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == s.size() || std::isspace(static_cast<unsigned char>(s[i + 1])))) {
            return s.substr(0, i + 1);
        }
        for (std::string_view t : {"。", "！", "？"}) {
            if (s.compare(i, t.size(), t) == 0) return s.substr(0, i + t.size());
        }
    }
    return s;
}

}  // namespace

std::vector<TopicInfo> generate_topics(Generator& gen, const GenerationJob& job, GenerationReport& report) {
    const std::string prompt = topics_prompt(job.n_topics, job.controversial, job.country, job.language);
    const auto pairs = with_retries<std::vector<TopicInfo>>(
        gen, job, prompt, "topic generation", [](const std::string& reply) -> std::optional<std::vector<TopicInfo>> {
            auto j = first_json(reply, '[');
            if (!j || !j->is_array() || j->empty()) return std::nullopt;
            std::vector<TopicInfo> out;
            for (const auto& e : *j) {
                if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string()) return std::nullopt;
                const std::string name = trim(e[0].get<std::string>());
                if (name.empty()) return std::nullopt;
                out.push_back({name, trim(e[1].get<std::string>())});
            }
            return out;
        });
    std::vector<TopicInfo> topics;
    std::set<std::string> seen;
    std::size_t duplicates = 0;
    for (const auto& t : pairs) {
        if (topics.size() == job.n_topics) break;
        if (!seen.insert(normalize_name(t.name)).second) {
            ++duplicates;
            report.warnings.push_back("duplicate topic dropped: " + t.name);
            continue;
        }
        topics.push_back(t);
    }
    const std::size_t missing = job.n_topics - topics.size();
    if (missing > 0) {
        const std::size_t dup = std::min(duplicates, missing);
        if (dup > 0) {
            report.drop({"question", "duplicate_topic", "", "", dup * job.n_questions_per_topic,
                         fmt::format("{} duplicate topic name(s)", dup)});
        }
        if (missing > dup) {
            report.drop({"question", "topic_shortfall", "", "", (missing - dup) * job.n_questions_per_topic,
                         fmt::format("{} of {} topics returned", topics.size(), job.n_topics)});
        }
    }
    return topics;
}

bool topic_match_filter(Generator& gen, const std::string& topic, const std::string& question,
                        const GenerationJob& job, GenerationReport* report) {
    const std::string prompt = topic_match_prompt(topic, question);
    for (std::size_t attempt = 1; attempt <= job.max_attempts; ++attempt) {
        const std::string token = normalize_token(gen.complete(prompt, attempt, 4));
        if (token == "true") return true;
        if (token == "false") return false;
    }
    const std::string warning = fmt::format("topic check gave no true/false after {} attempt(s); treating \"{}\" as off-topic",
                                            job.max_attempts, question);
    spdlog::warn("{}", warning);
    if (report) report->warnings.push_back(warning);
    return false;
}

std::vector<std::string> generate_questions(Generator& gen, const TopicInfo& topic, const GenerationJob& job,
                                            GenerationReport& report) {
    const std::string prompt = questions_prompt(job.n_questions_per_topic, job.controversial, job.language, topic);
    const auto listed = with_retries<std::vector<std::string>>(gen, job, prompt, "questions for " + topic.name, string_list);
    std::vector<std::string> out;
    std::set<std::string> seen;
    std::size_t duplicates = 0;
    for (const auto& q : listed) {
        if (out.size() == job.n_questions_per_topic) break;
        if (seen.insert(normalize_name(q)).second) {
            out.push_back(q);
        } else {
            ++duplicates;
        }
    }
    const std::size_t missing = job.n_questions_per_topic - out.size();
    const std::size_t dup = std::min(duplicates, missing);
    if (dup > 0) report.drop({"question", "duplicate_question", topic.name, "", dup, ""});
    if (missing > dup) {
        report.drop({"question", "question_shortfall", topic.name, "", missing - dup,
                     fmt::format("{} of {} questions returned", out.size(), job.n_questions_per_topic)});
    }
    if (!job.topic_filter) return out;
    std::vector<std::string> kept;
    for (const auto& q : out) {
        if (topic_match_filter(gen, topic.name, q, job, &report)) {
            kept.push_back(q);
        } else {
            report.drop({"question", "topic_mismatch", topic.name, q, 1, ""});
        }
    }
    return kept;
}

std::optional<std::vector<Choice>> generate_answers(Generator& gen, const std::string& topic,
                                                    const std::string& question, const GenerationJob& job) {
    require(!trim(question).empty(), "cannot generate answers for an empty question");
    const std::string prompt = answers_prompt(topic, question);
    struct Parsed {
        bool open_ended = false;
        std::vector<Choice> choices;
    };
    const auto parsed = with_retries<Parsed>(
        gen, job, prompt, "answers for \"" + question + "\"", [&](const std::string& reply) -> std::optional<Parsed> {
            if (normalize_token(reply) == "open-ended") return Parsed{true, {}};
            auto j = first_json(reply, '{');
            if (!j || !j->is_object() || j->empty()) return std::nullopt;
            Parsed p;
            for (const auto& [text, stance] : j->items()) {
                if (!stance.is_string()) return std::nullopt;
                const std::string s = stance.get<std::string>();
                if (s != "supports" && s != "opposes" && s != "neutral") {
                    fail(ErrorKind::validation,
                         fmt::format("answers for \"{}\": stance '{}' is not supports/opposes/neutral", question, s));
                }
                if (trim(text).empty()) return std::nullopt;
                p.choices.push_back({trim(text), parse_stance(s)});
            }
            return p;
        });
    if (parsed.open_ended) return std::nullopt;
    return parsed.choices;
}

std::vector<std::string> generate_paraphrases(Generator& gen, const std::string& question, std::size_t n,
                                              const GenerationJob& job, GenerationReport& report,
                                              const std::string& topic_id) {
    require(n >= 1, "need at least one paraphrase");
    const auto listed = with_retries<std::vector<std::string>>(gen, job, paraphrases_prompt(question, n),
                                                               "paraphrases of \"" + question + "\"", string_list);
    std::vector<std::string> out;
    std::size_t canonical = 0, repeated = 0;
    for (const auto& p : listed) {
        if (out.size() == n) break;
        if (p == question) {
            ++canonical;
        } else if (std::find(out.begin(), out.end(), p) != out.end()) {
            ++repeated;
        } else {
            out.push_back(p);
        }
    }
    std::size_t missing = n - out.size();
    auto take = [&](std::size_t& k, const char* reason) {
        const std::size_t c = std::min(k, missing);
        if (c > 0) report.drop({"paraphrase", reason, topic_id, question, c, ""});
        missing -= c;
    };
    take(canonical, "duplicate_of_canonical");
    take(repeated, "duplicate_paraphrase");
    if (missing > 0) {
        report.drop({"paraphrase", "paraphrase_shortfall", topic_id, question, missing,
                     fmt::format("{} of {} rephrasings returned", out.size(), n)});
    }
    return out;
}

QuestionItem translate_item(Generator& gen, const QuestionItem& item, Language target, const GenerationJob& job) {
    auto translate = [&](const std::vector<std::string>& texts, const char* what) {
        const auto out = with_retries<std::vector<std::string>>(
            gen, job, translation_prompt(texts, item.language, target),
            fmt::format("{} of {} into {}", what, item.coordinates(), to_string(target)), string_list);
        if (out.size() != texts.size()) {
            fail(ErrorKind::validation, fmt::format("{}: {} translated {} text(s) into {}", item.coordinates(), what,
                                                    texts.size(), out.size()));
        }
        return out;
    };
    QuestionItem t = item;
    t.language = target;
    t.translated = true;
    t.paraphrases = translate(item.paraphrases, "wordings");
    const auto choices = translate(item.choice_texts(), "choices");
    for (std::size_t i = 0; i < choices.size(); ++i) t.choices[i].text = choices[i];
    for (std::size_t i = 0; i < t.choices.size(); ++i) {
        if (t.choices[i].stance != item.choices[i].stance) fail(ErrorKind::internal, "stance changed in translation");
    }
    return t;
}

Corpus translate_corpus(Generator& gen, const Corpus& corpus, Language target, const GenerationJob& job) {
    Corpus out;
    out.topics = corpus.topics;
    out.provenance = corpus.provenance;
    for (const auto& item : corpus.items) out.items.push_back(translate_item(gen, item, target, job));
    return out;
}

std::string generate_bias_context(Generator& gen, const std::string& question, const std::string& answer,
                                  const GenerationJob& job, GenerationReport* report) {
    const std::string reply = trim(gen.complete(bias_context_prompt(question, answer), 1, job.max_tokens));
    if (reply.empty()) fail(ErrorKind::validation, fmt::format("empty bias context for \"{}\" -> {}", question, answer));
    const std::string sentence = trim(first_sentence(reply));
    if (sentence != reply) {
        const std::string note = fmt::format("bias context for \"{}\" truncated to its first sentence", question);
        spdlog::info("{}", note);
        if (report) report->warnings.push_back(note);
    }
    return sentence;
}

std::string contexts_to_json(const std::vector<BiasContext>& contexts) {
    json items = json::array();
    for (const auto& c : contexts) {
        items.push_back({{"topic_id", c.topic_id},
                         {"question_id", c.question_id},
                         {"language", to_string(c.language)},
                         {"answer", c.answer},
                         {"context", c.context}});
    }
    return json{{"schema_version", 1}, {"kind", "contexts"}, {"items", items}}.dump(2) + "\n";
}

std::vector<BiasContext> contexts_from_json(std::string_view text) {
    std::vector<BiasContext> out;
    try {
        const json doc = json::parse(text);
        if (doc.value("kind", "") != "contexts") fail(ErrorKind::validation, "contexts file must have kind \"contexts\"");
        for (const auto& c : doc.at("items")) {
            out.push_back({c.at("topic_id").get<std::string>(), c.at("question_id").get<std::string>(),
                           parse_language(c.at("language").get<std::string>()), c.value("answer", ""),
                           c.at("context").get<std::string>()});
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::parse, fmt::format("contexts: {}", e.what()));
    }
    return out;
}

GenerationOutput run_generation(Generator& gen, const GenerationJob& job) {
    job.validate();
    GenerationOutput out;
    auto& report = out.report;
    report.requested_questions = job.n_topics * job.n_questions_per_topic;

    const auto topics = generate_topics(gen, job, report);
    std::set<std::string> ids;
    for (std::size_t ti = 0; ti < topics.size(); ++ti) {
        const auto& topic = topics[ti];
        std::string id = slug(topic.name);
        if (id.empty() || ids.contains(id)) id = fmt::format("topic{:02d}", ti + 1);
        ids.insert(id);
        out.corpus.topics[id] = topic;

        const auto questions = generate_questions(gen, topic, job, report);
        std::size_t qn = 0;
        for (const auto& q : questions) {
            std::optional<std::vector<Choice>> choices;
            try {
                choices = generate_answers(gen, topic.name, q, job);
            } catch (const Error& e) {
                report.drop({"question", e.kind() == ErrorKind::parse ? "answer_parse_failure" : "invalid_stance",
                             id, q, 1, e.what()});
                continue;
            }
            if (!choices) {
                report.drop({"question", "open_ended", id, q, 1, ""});
                continue;
            }
            const bool supports = std::any_of(choices->begin(), choices->end(),
                                              [](const Choice& c) { return c.stance == Stance::supports; });
            const bool opposes = std::any_of(choices->begin(), choices->end(),
                                             [](const Choice& c) { return c.stance == Stance::opposes; });
            if (!supports || !opposes || choices->size() < 2) {
                report.drop({"question", "no_support_or_oppose", id, q, 1, ""});
                continue;
            }
            QuestionItem item;
            item.topic_id = id;
            item.question_id = fmt::format("q{:02d}", ++qn);
            item.language = job.language;
            item.country = job.country;
            item.controversial = job.controversial;
            item.choices = *choices;
            item.paraphrases = {q};
            report.requested_paraphrases += job.n_paraphrases;
            try {
                const auto rephrasings = generate_paraphrases(gen, q, job.n_paraphrases, job, report, id);
                item.paraphrases.insert(item.paraphrases.end(), rephrasings.begin(), rephrasings.end());
            } catch (const Error& e) {
                report.drop({"paraphrase", "paraphrase_parse_failure", id, q, job.n_paraphrases, e.what()});
            }
            report.emitted_paraphrases += item.paraphrases.size() - 1;
            out.corpus.items.push_back(std::move(item));
        }
    }
    report.emitted_questions = out.corpus.items.size();

    const std::size_t sources = out.corpus.items.size();
    for (Language target : job.target_translation_languages) {
        for (std::size_t i = 0; i < sources; ++i) {
            ++report.requested_translations;
            try {
                out.corpus.items.push_back(translate_item(gen, out.corpus.items[i], target, job));
                ++report.emitted_translations;
            } catch (const Error& e) {
                report.drop({"translation", "translation_failure", out.corpus.items[i].topic_id,
                             out.corpus.items[i].canonical_text(), 1, e.what()});
            }
        }
    }

    if (job.bias_contexts) {
        for (std::size_t i = 0; i < sources; ++i) {
            const auto& item = out.corpus.items[i];
            for (const auto& c : item.choices) {
                if (c.stance == Stance::neutral) continue;
                try {
                    out.contexts.push_back({item.topic_id, item.question_id, item.language, c.text,
                                            generate_bias_context(gen, item.canonical_text(), c.text, job, &report)});
                } catch (const Error& e) {
                    report.warnings.push_back(e.what());
                }
            }
        }
    }

    const std::string& ts = gen.first_timestamp();
    out.corpus.provenance = {gen.endpoint().model_name, ts.size() >= 10 ? ts.substr(0, 10) : ts, job.prompt_version};
    const auto problems = validate_corpus(out.corpus);
    if (!problems.empty()) {
        std::string message = "generated corpus failed validation:";
        for (const auto& p : problems) message += "\n  " + p;
        fail(ErrorKind::internal, message);
    }
    return out;
}

}  // namespace valcon
