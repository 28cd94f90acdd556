#include "dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <tuple>

#include "error.hpp"
#include "text_util.hpp"

namespace valcon {

using nlohmann::json;

std::string_view to_string(Stance s) {
    switch (s) {
        case Stance::supports: return "supports";
        case Stance::opposes: return "opposes";
        case Stance::neutral: return "neutral";
    }
    return "neutral";
}

std::string_view to_string(Language l) {
    switch (l) {
        case Language::eng: return "eng";
        case Language::chi: return "chi";
        case Language::ger: return "ger";
        case Language::jpn: return "jpn";
    }
    return "eng";
}

std::string_view to_string(Country c) {
    switch (c) {
        case Country::US: return "US";
        case Country::China: return "China";
        case Country::Germany: return "Germany";
        case Country::Japan: return "Japan";
    }
    return "US";
}

Stance parse_stance(std::string_view s) {
    if (s == "supports") return Stance::supports;
    if (s == "opposes") return Stance::opposes;
    if (s == "neutral") return Stance::neutral;
    fail(ErrorKind::parse, fmt::format("unknown stance '{}'", s));
}

Language parse_language(std::string_view s) {
    if (s == "eng") return Language::eng;
    if (s == "chi") return Language::chi;
    if (s == "ger") return Language::ger;
    if (s == "jpn") return Language::jpn;
    fail(ErrorKind::parse, fmt::format("unknown language '{}'", s));
}

Country parse_country(std::string_view s) {
    if (s == "US") return Country::US;
    if (s == "China") return Country::China;
    if (s == "Germany") return Country::Germany;
    if (s == "Japan") return Country::Japan;
    fail(ErrorKind::parse, fmt::format("unknown country '{}'", s));
}

std::string_view language_name(Language l) {
    switch (l) {
        case Language::eng: return "English";
        case Language::chi: return "Chinese";
        case Language::ger: return "German";
        case Language::jpn: return "Japanese";
    }
    return "English";
}

std::string_view country_name(Country c) {
    switch (c) {
        case Country::US: return "the United States";
        case Country::China: return "China";
        case Country::Germany: return "Germany";
        case Country::Japan: return "Japan";
    }
    return "the United States";
}

std::vector<std::string> stance_labels(bool abstain_enabled) {
    if (abstain_enabled) return {"supports", "opposes", "neutral"};
    return {"supports", "opposes"};
}

std::string_view abstain_text(Language l) {
    switch (l) {
        case Language::eng: return "I have no answer";
        case Language::chi: return "我没有答案";
        case Language::ger: return "Ich habe keine Antwort";
        case Language::jpn: return "答えはありません";
    }
    return "I have no answer";
}

const Choice* QuestionItem::find_choice(std::string_view text) const {
    for (const auto& c : choices) {
        if (c.text == text) return &c;
    }
    return nullptr;
}

std::vector<std::string> QuestionItem::choice_texts() const {
    std::vector<std::string> out;
    for (const auto& c : choices) out.push_back(c.text);
    return out;
}

std::string QuestionItem::coordinates() const {
    return fmt::format("{}/{}/{}", topic_id, question_id, to_string(language));
}

const QuestionItem* Corpus::find(std::string_view topic_id, std::string_view question_id,
                                 Language language) const {
    for (const auto& item : items) {
        if (item.topic_id == topic_id && item.question_id == question_id && item.language == language) {
            return &item;
        }
    }
    return nullptr;
}

std::vector<std::string> validate_corpus(const Corpus& corpus) {
    std::vector<std::string> problems;
    std::set<std::tuple<std::string, std::string, Language>> seen;
    for (std::size_t i = 0; i < corpus.items.size(); ++i) {
        const auto& item = corpus.items[i];
        const std::string where = fmt::format("item[{}] ({})", i, item.coordinates());
        if (item.topic_id.empty()) problems.push_back(where + ": empty topic_id");
        if (item.question_id.empty()) problems.push_back(where + ": empty question_id");
        if (!corpus.topics.contains(item.topic_id)) {
            problems.push_back(where + ": topic_id '" + item.topic_id + "' does not resolve");
        }
        if (!seen.emplace(item.topic_id, item.question_id, item.language).second) {
            problems.push_back(where + ": duplicate (topic, question, language)");
        }
        if (item.paraphrases.empty()) problems.push_back(where + ": no paraphrases");
        for (std::size_t r = 0; r < item.paraphrases.size(); ++r) {
            if (trim(item.paraphrases[r]).empty()) {
                problems.push_back(fmt::format("{}: paraphrase {} is empty", where, r));
            }
        }
        if (item.choices.size() < 2) problems.push_back(where + ": fewer than two choices");
        std::set<std::string> texts;
        bool supports = false, opposes = false;
        for (const auto& c : item.choices) {
            if (c.text.empty()) problems.push_back(where + ": empty choice text");
            if (!texts.insert(c.text).second) {
                problems.push_back(where + ": duplicate choice text '" + c.text + "'");
            }
            supports = supports || c.stance == Stance::supports;
            opposes = opposes || c.stance == Stance::opposes;
        }
        if (!supports || !opposes) problems.push_back(where + ": no supporting/opposing choice");
    }
    return problems;
}

namespace {

std::pair<std::size_t, std::size_t> line_and_column(std::string_view text, std::size_t byte) {
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            column = 1;
        } else {
            ++column;
        }
    }
    return {line, column};
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) fail(ErrorKind::validation, where + ": missing field '" + key + "'");
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        fail(ErrorKind::validation, where + ": field '" + key + "' has the wrong type");
    }
}

}  // namespace

Corpus parse_corpus(std::string_view text, const std::string& source) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, column] = line_and_column(text, e.byte == 0 ? 0 : e.byte - 1);
        fail(ErrorKind::parse, fmt::format("{}:{}:{}: {}", source, line, column, e.what()));
    }
    if (!doc.is_object()) fail(ErrorKind::validation, source + ": corpus must be a JSON object");
    const int version = field<int>(doc, "schema_version", source);
    if (version != kCorpusSchemaVersion) {
        fail(ErrorKind::validation, fmt::format("{}: unsupported schema_version {}", source, version));
    }

    Corpus corpus;
    if (auto it = doc.find("provenance"); it != doc.end() && it->is_object()) {
        corpus.provenance.generator_model = it->value("generator_model", "");
        corpus.provenance.date = it->value("date", "");
        corpus.provenance.prompt_version = it->value("prompt_version", "");
    }
    const json topics = field<json>(doc, "topics", source);
    if (!topics.is_object()) fail(ErrorKind::validation, source + ": 'topics' must be an object");
    for (const auto& [id, topic] : topics.items()) {
        const std::string where = source + ": topic '" + id + "'";
        corpus.topics[id] = TopicInfo{field<std::string>(topic, "name", where),
                                      topic.value("description", "")};
    }
    const json items = field<json>(doc, "items", source);
    if (!items.is_array()) fail(ErrorKind::validation, source + ": 'items' must be an array");
    std::vector<std::string> problems;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const json& obj = items[i];
        const std::string where = fmt::format("{}: item[{}]", source, i);
        try {
            QuestionItem item;
            item.topic_id = field<std::string>(obj, "topic_id", where);
            item.question_id = field<std::string>(obj, "question_id", where);
            item.language = parse_language(field<std::string>(obj, "language", where));
            item.country = parse_country(field<std::string>(obj, "country", where));
            item.controversial = field<bool>(obj, "controversial", where);
            item.translated = obj.value("translated", false);
            item.paraphrases = field<std::vector<std::string>>(obj, "paraphrases", where);
            const json choices = field<json>(obj, "choices", where);
            for (const auto& c : choices) {
                item.choices.push_back(Choice{field<std::string>(c, "text", where),
                                              parse_stance(field<std::string>(c, "stance", where))});
            }
            corpus.items.push_back(std::move(item));
        } catch (const Error& e) {
            problems.push_back(e.what());
        }
    }
    for (auto& p : validate_corpus(corpus)) problems.push_back(source + ": " + p);
    if (!problems.empty()) {
        std::string message = fmt::format("{} corpus violation(s):", problems.size());
        for (const auto& p : problems) message += "\n  " + p;
        fail(ErrorKind::validation, message);
    }
    return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::config, "cannot open corpus file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_corpus(buffer.str(), path.string());
}

std::string corpus_to_json(const Corpus& corpus) {
    json doc;
    doc["schema_version"] = kCorpusSchemaVersion;
    doc["provenance"] = {{"generator_model", corpus.provenance.generator_model},
                         {"date", corpus.provenance.date},
                         {"prompt_version", corpus.provenance.prompt_version}};
    doc["topics"] = json::object();
    for (const auto& [id, topic] : corpus.topics) {
        doc["topics"][id] = {{"name", topic.name}, {"description", topic.description}};
    }
    doc["items"] = json::array();
    for (const auto& item : corpus.items) {
        json choices = json::array();
        for (const auto& c : item.choices) {
            choices.push_back({{"text", c.text}, {"stance", std::string(to_string(c.stance))}});
        }
        doc["items"].push_back({{"topic_id", item.topic_id},
                                {"question_id", item.question_id},
                                {"language", std::string(to_string(item.language))},
                                {"country", std::string(to_string(item.country))},
                                {"controversial", item.controversial},
                                {"translated", item.translated},
                                {"paraphrases", item.paraphrases},
                                {"choices", choices}});
    }
    return doc.dump(2) + "\n";
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::config, "cannot write corpus file " + path.string());
    out << corpus_to_json(corpus);
}

Distribution stance_projection(const Distribution& choice_dist, const QuestionItem& item,
                               bool abstain_enabled) {
    const auto labels = stance_labels(abstain_enabled);
    std::vector<double> mass(labels.size(), 0.0);
    for (std::size_t k = 0; k < choice_dist.size(); ++k) {
        const std::string& label = choice_dist.labels()[k];
        Stance stance = Stance::neutral;
        if (const Choice* c = item.find_choice(label)) {
            stance = c->stance;
        } else if (label != abstain_text(item.language)) {
            fail(ErrorKind::invalid_argument,
                 fmt::format("{}: unknown choice label '{}'", item.coordinates(), label));
        }
        if (stance == Stance::neutral && !abstain_enabled) continue;
        mass[static_cast<std::size_t>(stance)] += choice_dist[k];
    }
    return Distribution::from_masses(labels, std::move(mass));
}

namespace {

bool is_yes(std::string_view text, Language language) {
    const std::string t = ascii_lower(trim(text));
    switch (language) {
        case Language::eng: return t == "yes";
        case Language::chi: return t == "是" || t == "是的";
        case Language::ger: return t == "ja";
        case Language::jpn: return t == "はい";
    }
    return false;
}

}  // namespace

std::vector<CorpusStatsRow> corpus_stats(const Corpus& corpus) {
    using Key = std::tuple<bool, bool, Language, Country>;
    struct Acc {
        std::set<std::string> topics;
        std::size_t questions = 0, paraphrases = 0, with_yes = 0, yes_supports = 0;
    };
    // Controversial first, matching the usual table layout.
    auto order = [](const Key& a, const Key& b) {
        return std::make_tuple(!std::get<0>(a), std::get<1>(a), std::get<2>(a), std::get<3>(a)) <
               std::make_tuple(!std::get<0>(b), std::get<1>(b), std::get<2>(b), std::get<3>(b));
    };
    std::map<Key, Acc, decltype(order)> groups(order);
    for (const auto& item : corpus.items) {
        Acc& acc = groups[Key{item.controversial, item.translated, item.language, item.country}];
        acc.topics.insert(item.topic_id);
        acc.questions += 1;
        acc.paraphrases += item.paraphrases.size();
        for (const auto& c : item.choices) {
            if (is_yes(c.text, item.language)) {
                acc.with_yes += 1;
                if (c.stance == Stance::supports) acc.yes_supports += 1;
                break;
            }
        }
    }
    std::vector<CorpusStatsRow> rows;
    for (const auto& [key, acc] : groups) {
        CorpusStatsRow row;
        std::tie(row.controversial, row.translated, row.language, row.country) = key;
        row.topics = acc.topics.size();
        row.questions = acc.questions;
        row.questions_per_topic = static_cast<double>(acc.questions) / static_cast<double>(row.topics);
        row.paraphrases_per_question =
            static_cast<double>(acc.paraphrases) / static_cast<double>(acc.questions);
        if (acc.with_yes > 0) {
            row.yes_supports_fraction =
                static_cast<double>(acc.yes_supports) / static_cast<double>(acc.with_yes);
        }
        row.total_questions = acc.paraphrases;
        rows.push_back(row);
    }
    return rows;
}

std::string corpus_stats_csv(const std::vector<CorpusStatsRow>& rows) {
    std::string out =
        "controversial,translated,language,country,topics,questions,questions_per_topic,"
        "paraphrases_per_question,yes_supports_fraction,total_questions\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{},{:.4f},{:.4f},{},{}\n", r.controversial, r.translated,
                           to_string(r.language), to_string(r.country), r.topics, r.questions,
                           r.questions_per_topic, r.paraphrases_per_question,
                           r.yes_supports_fraction ? fmt::format("{:.4f}", *r.yes_supports_fraction) : "",
                           r.total_questions);
    }
    return out;
}

}  // namespace valcon
