#include "simulator.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "error.hpp"
#include "text_util.hpp"

namespace valcon {

using nlohmann::json;

std::vector<std::string> SyntheticRespondent::violations() const {
    std::vector<std::string> out;
    for (const auto& [topic, theta] : topic_stances) {
        if (!(theta >= 0.0 && theta <= 1.0)) out.push_back(fmt::format("stance for topic '{}' outside [0,1]", topic));
    }
    if (default_stance && !(*default_stance >= 0.0 && *default_stance <= 1.0)) {
        out.push_back("default_stance outside [0,1]");
    }
    const std::pair<const char*, double> noises[] = {{"paraphrase_noise", paraphrase_noise},
                                                     {"question_noise", question_noise},
                                                     {"language_noise", language_noise},
                                                     {"usecase_noise", usecase_noise}};
    for (const auto& [name, v] : noises) {
        if (!(v >= 0.0) || !std::isfinite(v)) out.push_back(fmt::format("{} must be a finite value >= 0", name));
    }
    if (value_sensitivity) {
        if (value_sensitivity->value.empty()) out.push_back("value_sensitivity.value is empty");
        if (!std::isfinite(value_sensitivity->shift)) out.push_back("value_sensitivity.shift must be finite");
    }
    if (model_name.empty()) out.push_back("model_name is empty");
    return out;
}

void SyntheticRespondent::validate() const {
    const auto problems = violations();
    if (problems.empty()) return;
    std::string message = fmt::format("{} respondent violation(s):", problems.size());
    for (const auto& p : problems) message += "\n  " + p;
    fail(ErrorKind::validation, message);
}

SyntheticRespondent respondent_from_json(const json& j) {
    SyntheticRespondent r;
    try {
        if (j.value("schema_version", 1) != 1) fail(ErrorKind::validation, "unsupported respondent schema_version");
        if (j.contains("kind") && j.at("kind") != "respondent") fail(ErrorKind::validation, "kind must be \"respondent\"");
        static const std::set<std::string> known{"schema_version", "kind",           "model_name",     "topic_stances",
                                                 "default_stance", "paraphrase_noise", "question_noise", "language_noise",
                                                 "usecase_noise",  "value_sensitivity", "seed"};
        for (const auto& [key, value] : j.items()) {
            if (!known.count(key)) fail(ErrorKind::validation, fmt::format("respondent: unknown key '{}'", key));
        }
        r.model_name = j.value("model_name", r.model_name);
        if (j.contains("topic_stances")) r.topic_stances = j.at("topic_stances").get<std::map<std::string, double>>();
        if (j.contains("default_stance") && !j.at("default_stance").is_null()) {
            r.default_stance = j.at("default_stance").get<double>();
        }
        r.paraphrase_noise = j.value("paraphrase_noise", 0.0);
        r.question_noise = j.value("question_noise", 0.0);
        r.language_noise = j.value("language_noise", 0.0);
        r.usecase_noise = j.value("usecase_noise", 0.0);
        if (j.contains("value_sensitivity") && !j.at("value_sensitivity").is_null()) {
            const auto& v = j.at("value_sensitivity");
            r.value_sensitivity = ValueSensitivity{v.at("value").get<std::string>(), v.at("shift").get<double>()};
        }
        r.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
        fail(ErrorKind::validation, fmt::format("respondent: {}", e.what()));
    }
    r.validate();
    return r;
}

json respondent_to_json(const SyntheticRespondent& r) {
    json j{{"schema_version", 1},
           {"kind", "respondent"},
           {"model_name", r.model_name},
           {"topic_stances", r.topic_stances},
           {"paraphrase_noise", r.paraphrase_noise},
           {"question_noise", r.question_noise},
           {"language_noise", r.language_noise},
           {"usecase_noise", r.usecase_noise},
           {"seed", r.seed}};
    if (r.default_stance) j["default_stance"] = *r.default_stance;
    if (r.value_sensitivity) {
        j["value_sensitivity"] = {{"value", r.value_sensitivity->value}, {"shift", r.value_sensitivity->shift}};
    }
    return j;
}

SyntheticRespondent load_respondent(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::config, "cannot open respondent file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return respondent_from_json(json::parse(buf.str()));
    } catch (const json::parse_error& e) {
        fail(ErrorKind::parse, fmt::format("{}: {}", path.string(), e.what()));
    }
}

namespace {

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

}  // namespace

double keyed_uniform(std::uint64_t seed, std::string_view axis, std::string_view key) {
    std::string material(axis);
    material += '\x1f';
    material += key;
    const std::uint64_t h = stable_hash64(material, seed);
    return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

namespace {

std::string join_key(std::initializer_list<std::string_view> parts) {
    std::string out;
    for (auto p : parts) {
        if (!out.empty()) out += '\x1f';
        out += p;
    }
    return out;
}

// Paraphrases come in antithetic pairs (r, r + 1) sharing one draw with
// opposite signs, so the paraphrase marginal carries no paraphrase noise. A
// trailing unpaired paraphrase stays at zero; a lone paraphrase takes the
// draw itself.
double paraphrase_draw(const SyntheticRespondent& resp, const ProbeSpec& spec, std::size_t n_paraphrases) {
    const std::size_t r = spec.paraphrase_index;
    const std::size_t pair = r / 2;
    const double z = keyed_uniform(resp.seed, "paraphrase", join_key({spec.topic_id, spec.question_id, std::to_string(pair)}));
    if (n_paraphrases <= 1) return z;
    if (r % 2 == 0 && r + 1 >= n_paraphrases) return 0.0;
    return r % 2 == 0 ? z : -z;
}

}  // namespace

double support_level(const SyntheticRespondent& resp, const ProbeSpec& spec, std::size_t n_paraphrases) {
    double theta;
    if (auto it = resp.topic_stances.find(spec.topic_id); it != resp.topic_stances.end()) {
        theta = it->second;
    } else if (resp.default_stance) {
        theta = *resp.default_stance;
    } else {
        fail(ErrorKind::invalid_argument, fmt::format("respondent has no stance for topic '{}'", spec.topic_id));
    }
    const auto& t = spec.topic_id;
    double s = theta;
    s += resp.question_noise * keyed_uniform(resp.seed, "question", join_key({t, spec.question_id}));
    s += resp.paraphrase_noise * paraphrase_draw(resp, spec, n_paraphrases);
    s += resp.language_noise * keyed_uniform(resp.seed, "language", join_key({t, to_string(spec.language)}));
    if (spec.use_case == UseCase::open_ended) s += resp.usecase_noise * keyed_uniform(resp.seed, "use_case", t);
    if (spec.value_condition) {
        const auto& v = *spec.value_condition;
        s += resp.paraphrase_noise * keyed_uniform(resp.seed, "value", join_key({t, spec.question_id, v}));
        if (resp.value_sensitivity && resp.value_sensitivity->value == v) s += resp.value_sensitivity->shift;
    }
    return std::clamp(s, 0.0, 1.0);
}

Distribution stance_answer(const SyntheticRespondent& resp, const ProbeSpec& spec, const QuestionItem& item) {
    const double s = support_level(resp, spec, item.paraphrases.size());
    std::vector<double> probs{s, 1.0 - s};
    if (spec.abstain_enabled) probs.push_back(0.0);
    return Distribution(stance_labels(spec.abstain_enabled), probs);
}

Distribution spread_over_choices(const Distribution& stance, const std::vector<std::string>& choices,
                                 const QuestionItem& item) {
    std::vector<Stance> coded;
    std::map<Stance, std::size_t> counts;
    for (const auto& text : choices) {
        Stance st;
        if (const Choice* c = item.find_choice(text)) {
            st = c->stance;
        } else if (text == abstain_text(item.language)) {
            st = Stance::neutral;
        } else {
            fail(ErrorKind::parse, fmt::format("{}: option '{}' is not a choice of the item", item.coordinates(), text));
        }
        coded.push_back(st);
        ++counts[st];
    }
    std::vector<double> probs;
    double total = 0.0;
    for (Stance st : coded) {
        const std::string label(to_string(st));
        const auto& labels = stance.labels();
        const bool present = std::find(labels.begin(), labels.end(), label) != labels.end();
        const double p = present ? stance.prob(label) / static_cast<double>(counts[st]) : 0.0;
        probs.push_back(p);
        total += p;
    }
    if (total <= 0.0) fail(ErrorKind::numeric, item.coordinates() + ": no stance mass lands on any option");
    for (auto& p : probs) p /= total;
    return Distribution(choices, probs);
}

std::string stance_marker(const Distribution& stance) {
    auto p = [&](std::string_view label) {
        const auto& labels = stance.labels();
        return std::find(labels.begin(), labels.end(), label) != labels.end() ? stance.prob(std::string(label)) : 0.0;
    };
    return fmt::format("[stance supports={:.17g} opposes={:.17g} neutral={:.17g}]", p("supports"), p("opposes"),
                       p("neutral"));
}

std::optional<Distribution> parse_stance_marker(std::string_view text) {
    static const std::regex re(R"(\[stance supports=([-+0-9.eE]+) opposes=([-+0-9.eE]+) neutral=([-+0-9.eE]+)\])");
    std::cmatch m;
    if (!std::regex_search(text.data(), text.data() + text.size(), m, re)) return std::nullopt;
    return Distribution({"supports", "opposes", "neutral"},
                        {std::stod(m[1].str()), std::stod(m[2].str()), std::stod(m[3].str())});
}

namespace {

const char* kPassageLead = "Here are some arguments about this question. ";

TokenLogprobs letter_logprobs(const std::vector<LetterOption>& letters, const Distribution& choice_dist) {
    TokenLogprobs out;
    for (const auto& opt : letters) {
        const double p = choice_dist.prob(opt.choice);
        if (p > 0.0) out.emplace_back(std::string(1, opt.letter), std::log(p));
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    return out;
}

}  // namespace

ResponseRecord answer(const SyntheticRespondent& resp, const ProbeSpec& spec, const QuestionItem& item) {
    ResponseRecord rec;
    rec.model = resp.model_name;
    rec.probe = spec;
    const Distribution stance = stance_answer(resp, spec, item);
    if (spec.use_case == UseCase::multiple_choice) {
        const McPrompt prompt = build_mc_prompt(spec, item);
        rec.prompt = prompt.text;
        rec.letters = prompt.letters;
        std::vector<std::string> choices = item.choice_texts();
        if (spec.abstain_enabled) choices.emplace_back(abstain_text(item.language));
        const Distribution dist = spread_over_choices(stance, choices, item);
        rec.option_probs = dist;
        rec.option_mass = 1.0;
        rec.raw_logprobs = letter_logprobs(prompt.letters, dist);
    } else {
        rec.prompt = build_open_prompt(spec, item);
        rec.generation = kPassageLead + stance_marker(stance);
    }
    return rec;
}

Corpus synthetic_corpus(const SyntheticCorpusShape& shape) {
    require(shape.topics >= 1 && shape.questions_per_topic >= 1 && shape.paraphrases >= 1,
            "synthetic corpus counts must be >= 1");
    require(!shape.languages.empty(), "synthetic corpus needs a language");
    Corpus corpus;
    corpus.provenance = {"synthetic", "1970-01-01", "synthetic-v1"};
    for (std::size_t t = 0; t < shape.topics; ++t) {
        const std::string topic = fmt::format("t{:02d}", t + 1);
        corpus.topics[topic] = {fmt::format("synthetic topic {}", t + 1), "generated for simulation"};
        for (std::size_t q = 0; q < shape.questions_per_topic; ++q) {
            for (Language lang : shape.languages) {
                const auto& p = phrases(lang);
                QuestionItem item;
                item.topic_id = topic;
                item.question_id = fmt::format("q{:03d}", q + 1);
                item.language = lang;
                item.country = shape.country;
                item.translated = lang != shape.languages.front();
                for (std::size_t r = 0; r < shape.paraphrases; ++r) {
                    item.paraphrases.push_back(fmt::format("[{}] Should statement {} of topic {} hold, wording {}?",
                                                           to_string(lang), q + 1, t + 1, r + 1));
                }
                item.choices = {{std::string(p.example_yes), Stance::supports},
                                {std::string(p.example_no), Stance::opposes}};
                corpus.items.push_back(std::move(item));
            }
        }
    }
    return corpus;
}

std::optional<std::string> synthetic_generator_reply(const std::string& prompt) {
    auto number = [&](const char* pattern) -> std::size_t {
        std::smatch m;
        if (!std::regex_search(prompt, m, std::regex(pattern))) fail(ErrorKind::parse, "generator prompt without a count");
        return std::stoul(m[1].str());
    };
    auto after = [&](const std::string& tag) {
        const auto pos = prompt.rfind(tag);
        if (pos == std::string::npos) fail(ErrorKind::parse, "generator prompt without '" + tag + "'");
        const auto end = prompt.find('\n', pos);
        return prompt.substr(pos + tag.size(), end == std::string::npos ? std::string::npos : end - pos - tag.size());
    };
    if (starts_with(prompt, "What are ")) {
        const std::size_t n = number(R"(Give (\d+) unique)");
        json list = json::array();
        for (std::size_t i = 1; i <= n; ++i) {
            list.push_back({fmt::format("Synthetic topic {}", i), fmt::format("A made-up topic, number {}.", i)});
        }
        return "Here is the list:\n" + list.dump(4) + "\nLet me know if you need more.";
    }
    if (starts_with(prompt, "List ") && prompt.find("unique binary questions") != std::string::npos) {
        const std::size_t n = number(R"(List (\d+) unique binary)");
        const std::string topic = after("Topic: ");
        json list = json::array();
        for (std::size_t i = 1; i <= n; ++i) list.push_back(fmt::format("Should rule {} of {} apply?", i, topic));
        return list.dump();
    }
    if (starts_with(prompt, "List the possible answers")) return std::string(R"({"yes": "supports", "no": "opposes"})");
    if (starts_with(prompt, "Rephrase the following question")) {
        const std::size_t n = number(R"(List (\d+) different rephrasings)");
        std::string question = after("Question: ");
        if (!question.empty() && question.back() == '?') question.pop_back();
        json list = json::array();
        for (std::size_t i = 1; i <= n; ++i) list.push_back(fmt::format("{}, in wording {}?", question, i));
        return "```json\n" + list.dump(2) + "\n```";
    }
    if (starts_with(prompt, "True or false, would someone")) return std::string("True.");
    if (starts_with(prompt, "In less than a sentence")) {
        std::smatch m;
        std::regex_search(prompt, m, std::regex(R"re(Answer: "([^"]*)")re"));
        return fmt::format("A recent report favours the answer {}.", m.size() > 1 ? m[1].str() : "given");
    }
    if (starts_with(prompt, "Translate each text")) {
        std::smatch m;
        std::regex_search(prompt, m, std::regex(R"(to (\w+)\. Reply)"));
        std::string tag = "xx";
        for (Language l : {Language::eng, Language::chi, Language::ger, Language::jpn}) {
            if (m.size() > 1 && language_name(l) == m[1].str()) tag = std::string(to_string(l));
        }
        const json texts = json::parse(prompt.substr(prompt.rfind("\n\n") + 2));
        json out = json::array();
        for (const auto& t : texts) out.push_back(fmt::format("[{}] {}", tag, t.get<std::string>()));
        return out.dump();
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Mock server

namespace {

struct Entry {
    const QuestionItem* item;
    std::size_t paraphrase;
};

struct ParsedOption {
    char letter;
    std::string text;
};

std::optional<ParsedOption> parse_option_line(const std::string& line) {
    // "- (X) text"
    if (line.size() < 6 || line.compare(0, 3, "- (") != 0 || line[4] != ')' || line[5] != ' ') return std::nullopt;
    if (line[3] < 'A' || line[3] > 'Z') return std::nullopt;
    return ParsedOption{line[3], line.substr(6)};
}

std::string strip_quotes(std::string s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
}

std::string strip_question_label(const std::string& line) {
    for (Language l : {Language::eng, Language::chi, Language::ger, Language::jpn}) {
        const auto label = phrases(l).question_label;
        if (starts_with(line, label)) return line.substr(label.size());
    }
    return line;
}

// Splits "<value sentence> <context>" for language l.
struct Header {
    std::optional<std::string> value;
    std::optional<std::string> context;
};

Header parse_header_rest(std::string rest, Language l) {
    Header h;
    rest = trim(rest);
    if (rest.empty()) return h;
    const auto& p = phrases(l);
    if (starts_with(rest, p.steering_prefix)) {
        const auto end = rest.find(p.steering_suffix, p.steering_prefix.size());
        if (end != std::string::npos && end > p.steering_prefix.size()) {
            h.value = rest.substr(p.steering_prefix.size(), end - p.steering_prefix.size());
            rest = trim(rest.substr(end + p.steering_suffix.size()));
        }
    }
    if (!rest.empty()) h.context = rest;
    return h;
}

json completion_body(const std::string& model, const std::string& content, const TokenLogprobs& top,
                     std::size_t top_k) {
    json choice{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", "stop"}};
    if (top_k > 0) {
        json tops = json::array();
        for (std::size_t i = 0; i < top.size() && i < top_k; ++i) {
            tops.push_back({{"token", top[i].first}, {"logprob", top[i].second}});
        }
        const std::string first = top.empty() ? content : top.front().first;
        const double first_lp = top.empty() ? 0.0 : top.front().second;
        choice["logprobs"] = {{"content", json::array({{{"token", first}, {"logprob", first_lp}, {"top_logprobs", tops}}})}};
    }
    return json{{"id", "mock-" + sha256_hex(content).substr(0, 12)},
                {"object", "chat.completion"},
                {"model", model},
                {"choices", json::array({choice})}};
}

}  // namespace

struct MockServer::Impl {
    SyntheticRespondent resp;
    Corpus corpus;
    std::deque<QuestionItem> pvq_items;
    std::map<std::string, std::vector<Entry>> by_text;
    httplib::Server server;
    std::thread thread;
    int port = -1;
    std::atomic<std::size_t> served{0};

    void index(const QuestionItem& item) {
        for (std::size_t r = 0; r < item.paraphrases.size(); ++r) by_text[item.paraphrases[r]].push_back({&item, r});
    }

    // The item whose wording and choices match; options may add the abstain text.
    Entry lookup(const std::string& text, Language lang, const std::vector<std::string>& options) const {
        auto it = by_text.find(text);
        if (it == by_text.end()) fail(ErrorKind::parse, fmt::format("no item has the wording \"{}\"", text));
        for (const auto& e : it->second) {
            if (e.item->language != lang) continue;
            if (options.empty()) return e;
            bool ok = true;
            for (const auto& o : options) {
                if (!e.item->find_choice(o) && o != abstain_text(lang)) ok = false;
            }
            if (ok) return e;
        }
        fail(ErrorKind::parse, fmt::format("no {} item with wording \"{}\" offers those options", to_string(lang), text));
    }

    static std::optional<Language> language_of_instruction(const std::string& first_line, bool open) {
        for (Language l : {Language::eng, Language::chi, Language::ger, Language::jpn}) {
            const auto& p = phrases(l);
            if (open ? starts_with(first_line, p.open_instruction)
                     : (first_line == p.mc_instruction || first_line == p.pvq_instruction)) {
                return l;
            }
        }
        return std::nullopt;
    }

    json reply(const std::string& prompt, std::size_t top_k) const {
        if (auto text = synthetic_generator_reply(prompt)) return completion_body(resp.model_name, *text, {}, top_k);
        if (prompt.find(kJudgeQuestion) != std::string::npos) return judge_reply(prompt, top_k);
        const auto lines = split_lines(prompt);
        if (lines.empty()) fail(ErrorKind::parse, "empty prompt");
        const bool has_options = std::any_of(lines.begin(), lines.end(),
                                             [](const std::string& l) { return parse_option_line(l).has_value(); });
        return has_options ? mc_reply(lines, top_k) : open_reply(lines, top_k);
    }

    // Final block of option lines, plus the index of its first line.
    static std::pair<std::vector<ParsedOption>, std::size_t> final_options(const std::vector<std::string>& lines) {
        std::size_t end = lines.size();
        while (end > 0 && !parse_option_line(lines[end - 1])) --end;
        std::size_t begin = end;
        while (begin > 0 && parse_option_line(lines[begin - 1])) --begin;
        std::vector<ParsedOption> opts;
        for (std::size_t i = begin; i < end; ++i) opts.push_back(*parse_option_line(lines[i]));
        return {opts, begin};
    }

    json mc_reply(const std::vector<std::string>& lines, std::size_t top_k) const {
        const auto lang = language_of_instruction(lines[0], false);
        if (!lang) fail(ErrorKind::parse, "unrecognized multiple-choice instruction: " + lines[0]);
        const auto [opts, begin] = final_options(lines);
        std::size_t qline = begin;
        while (qline > 0 && trim(lines[qline - 1]).empty()) --qline;
        if (qline == 0) fail(ErrorKind::parse, "no question above the options");
        const std::string text = strip_question_label(lines[qline - 1]);

        std::vector<std::string> option_texts;
        for (const auto& o : opts) option_texts.push_back(o.text);
        const Entry e = lookup(text, *lang, option_texts);

        ProbeSpec spec = ProbeSpec::for_item(*e.item, e.paraphrase, UseCase::multiple_choice);
        spec.abstain_enabled = std::find(option_texts.begin(), option_texts.end(), abstain_text(*lang)) != option_texts.end();
        if (lines.size() > 1 && !trim(lines[1]).empty()) spec.value_condition = parse_header_rest(lines[1], *lang).value;

        const Distribution dist = spread_over_choices(stance_answer(resp, spec, *e.item), option_texts, *e.item);
        std::vector<LetterOption> letters;
        for (const auto& o : opts) letters.push_back({o.letter, o.text});
        const auto top = letter_logprobs(letters, dist);
        return completion_body(resp.model_name, top.front().first, top, top_k);
    }

    json open_reply(const std::vector<std::string>& lines, std::size_t top_k) const {
        const auto lang = language_of_instruction(lines[0], true);
        if (!lang) fail(ErrorKind::parse, "unrecognized prompt: " + lines[0]);
        const std::string text = strip_quotes(strip_question_label(lines.back()));
        const Entry e = lookup(text, *lang, {});
        ProbeSpec spec = ProbeSpec::for_item(*e.item, e.paraphrase, UseCase::open_ended);
        const Header h = parse_header_rest(lines[0].substr(phrases(*lang).open_instruction.size()), *lang);
        spec.value_condition = h.value;
        spec.context_statement = h.context;
        const std::string passage = kPassageLead + stance_marker(stance_answer(resp, spec, *e.item));
        return completion_body(resp.model_name, passage, {{"Here", 0.0}}, top_k);
    }

    json judge_reply(const std::string& prompt, std::size_t top_k) const {
        const auto stance = parse_stance_marker(prompt);
        if (!stance) fail(ErrorKind::parse, "judge prompt carries no stance marker");
        const std::string qtag = "\n\nQuestion: \"";
        const auto qpos = prompt.rfind(qtag);
        const auto qend = prompt.find("\"\n\n" + std::string(kJudgeQuestion));
        if (qpos == std::string::npos || qend == std::string::npos || qend < qpos) {
            fail(ErrorKind::parse, "judge prompt without a quoted question");
        }
        const std::string text = prompt.substr(qpos + qtag.size(), qend - qpos - qtag.size());
        const auto lines = split_lines(prompt);
        const auto [opts, begin] = final_options(lines);
        std::vector<std::string> option_texts;
        for (const auto& o : opts) option_texts.push_back(o.text);
        std::optional<Entry> found;
        for (Language l : {Language::eng, Language::chi, Language::ger, Language::jpn}) {
            try {
                found = lookup(text, l, option_texts);
                break;
            } catch (const Error&) {
            }
        }
        if (!found) fail(ErrorKind::parse, fmt::format("judge prompt question \"{}\" matches no item", text));
        const Distribution dist = spread_over_choices(*stance, option_texts, *found->item);
        std::vector<LetterOption> letters;
        for (const auto& o : opts) letters.push_back({o.letter, o.text});
        const auto top = letter_logprobs(letters, dist);
        return completion_body(resp.model_name + "-judge", top.front().first, top, top_k);
    }
};

MockServer::MockServer(SyntheticRespondent resp, Corpus corpus, std::vector<PvqItem> pvq)
    : impl_(std::make_unique<Impl>()) {
    resp.validate();
    impl_->resp = std::move(resp);
    impl_->corpus = std::move(corpus);
    for (const auto& item : impl_->corpus.items) impl_->index(item);
    for (const auto& p : pvq) {
        impl_->pvq_items.push_back(pvq_question(p));
        impl_->index(impl_->pvq_items.back());
    }
    impl_->server.Post(R"(.*/chat/completions)", [this](const httplib::Request& req, httplib::Response& res) {
        ++impl_->served;
        try {
            const json body = json::parse(req.body);
            const auto& messages = body.at("messages");
            if (!messages.is_array() || messages.empty()) fail(ErrorKind::parse, "no messages");
            const std::string prompt = messages.back().at("content").get<std::string>();
            const std::size_t top_k =
                body.value("logprobs", false) ? std::max<std::size_t>(1, body.value("top_logprobs", std::size_t{1})) : 0;
            res.set_content(reply(prompt, top_k).dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(json{{"error", {{"message", e.what()}, {"type", "invalid_request_error"}}}}.dump(),
                            "application/json");
        }
    });
}

MockServer::~MockServer() { stop(); }

int MockServer::start(const std::string& host, int port) {
    if (impl_->thread.joinable()) return impl_->port;
    impl_->port = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (impl_->port < 0) fail(ErrorKind::config, fmt::format("mock server cannot bind {}:{}", host, port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    spdlog::debug("mock respondent '{}' on {}:{}", impl_->resp.model_name, host, impl_->port);
    return impl_->port;
}

void MockServer::stop() {
    if (!impl_ || !impl_->thread.joinable()) return;
    impl_->server.stop();
    impl_->thread.join();
}

int MockServer::port() const { return impl_->port; }

std::string MockServer::base_url() const { return fmt::format("http://127.0.0.1:{}/v1", impl_->port); }

std::size_t MockServer::requests_served() const { return impl_->served.load(); }

json MockServer::reply(const std::string& prompt, std::size_t top_logprobs) const {
    return impl_->reply(prompt, top_logprobs);
}

CompletionResult LoopbackClient::complete(const CompletionRequest& request) {
    return parse_completion_response(server_.reply(request.prompt, request.top_logprobs), request.top_logprobs > 0);
}

}  // namespace valcon
