#include "steering.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "error.hpp"
#include "text_util.hpp"

namespace valcon {

using nlohmann::json;

bool is_schwartz_value(std::string_view v) {
    return std::find(kSchwartzValues.begin(), kSchwartzValues.end(), v) != kSchwartzValues.end();
}

std::vector<PvqItem> parse_pvq_items(std::string_view text, const std::string& source) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::parse, fmt::format("{}: {}", source, e.what()));
    }
    std::vector<std::string> problems;
    std::vector<PvqItem> items;
    try {
        if (doc.at("schema_version").get<int>() != kCorpusSchemaVersion) problems.push_back("unsupported schema_version");
        if (doc.value("kind", "") != "pvq") problems.push_back("kind must be \"pvq\"");
        const Language lang = parse_language(doc.at("language").get<std::string>());
        const std::string like = doc.at("choices").at("like").get<std::string>();
        const std::string not_like = doc.at("choices").at("not_like").get<std::string>();
        if (like.empty() || not_like.empty() || like == not_like) problems.push_back("choices must be two distinct texts");
        std::set<std::string> ids;
        for (const auto& obj : doc.at("items")) {
            PvqItem item;
            item.id = obj.at("id").get<std::string>();
            item.statement = obj.at("statement").get<std::string>();
            item.relevant_value = obj.at("relevant_value").get<std::string>();
            item.language = lang;
            item.like_text = like;
            item.not_like_text = not_like;
            if (!ids.insert(item.id).second) problems.push_back("duplicate item id " + item.id);
            if (trim(item.statement).empty()) problems.push_back(item.id + ": empty statement");
            if (!is_schwartz_value(item.relevant_value)) {
                problems.push_back(item.id + ": '" + item.relevant_value + "' is not one of the 12 values");
            }
            items.push_back(std::move(item));
        }
    } catch (const json::exception& e) {
        problems.push_back(e.what());
    } catch (const Error& e) {
        problems.push_back(e.what());
    }
    if (!problems.empty()) {
        std::string message = fmt::format("{}: {} PVQ violation(s):", source, problems.size());
        for (const auto& p : problems) message += "\n  " + p;
        fail(ErrorKind::validation, message);
    }
    return items;
}

std::vector<PvqItem> load_pvq_items(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::config, "cannot open PVQ file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_pvq_items(buffer.str(), path.string());
}

QuestionItem pvq_question(const PvqItem& item) {
    QuestionItem q;
    q.topic_id = std::string(kPvqTopic);
    q.question_id = item.id;
    q.paraphrases = {item.statement};
    q.choices = {{item.like_text, Stance::supports}, {item.not_like_text, Stance::opposes}};
    q.language = item.language;
    q.controversial = false;
    return q;
}

ProbeSpec pvq_probe(const PvqItem& item, std::optional<std::string> value, std::uint64_t order_seed) {
    ProbeSpec spec = ProbeSpec::for_item(pvq_question(item), 0, UseCase::multiple_choice);
    spec.order_seed = order_seed;
    spec.value_condition = std::move(value);
    spec.instruction = std::string(phrases(item.language).pvq_instruction);
    return spec;
}

Influence value_influence(const Distribution& baseline, const Distribution& conditioned) {
    Influence out;
    out.jsd = js_divergence(conditioned, baseline);
    const std::string& c = argmax_label(conditioned);
    out.signed_value = conditioned.prob(c) - baseline.prob(c);
    return out;
}

Influence value_influence(const ResponseRecord& baseline, const ResponseRecord& conditioned) {
    for (const auto* r : {&baseline, &conditioned}) {
        if (!r->option_probs || r->degenerate) {
            fail(ErrorKind::numeric, fmt::format("degenerate extraction for {} under {}", r->probe.question_id,
                                                 r->probe.value_condition.value_or("no value")));
        }
    }
    // Align label order; letter orders agree when seeds match, but do not rely on it.
    const auto& base = *baseline.option_probs;
    std::vector<double> aligned;
    for (const auto& l : base.labels()) aligned.push_back(conditioned.option_probs->prob(l));
    return value_influence(base, Distribution(base.labels(), aligned));
}

int steerability_rank(const std::map<std::string, double>& influences, const std::string& relevant) {
    auto it = influences.find(relevant);
    if (it == influences.end()) fail(ErrorKind::invalid_argument, "no influence for relevant value " + relevant);
    const double x = it->second;
    int below = 0;
    int ties = 0;
    for (const auto& [v, inf] : influences) {
        if (inf < x) ++below;
        if (inf == x) ++ties;
    }
    // Positions below .. below + ties - 1 share the value.
    return below + (ties - 1) / 2;
}

SteerabilityResult measure_steerability(Prober& prober, const PvqItem& item, std::uint64_t order_seed) {
    const QuestionItem question = pvq_question(item);
    const ResponseRecord baseline = prober.probe(pvq_probe(item, std::nullopt, order_seed), question);
    SteerabilityResult result;
    result.model = prober.endpoint().model_name;
    result.item_id = item.id;
    result.language = item.language;
    result.relevant_value = item.relevant_value;
    std::vector<std::string> failures;
    for (const auto v : kSchwartzValues) {
        const std::string value(v);
        try {
            const ResponseRecord conditioned = prober.probe(pvq_probe(item, value, order_seed), question);
            const Influence inf = value_influence(baseline, conditioned);
            result.influences[value] = inf.jsd;
            result.signed_steerability[value] = inf.signed_value;
        } catch (const Error& e) {
            failures.push_back(value + ": " + e.what());
        }
    }
    if (!failures.empty()) {
        std::string message = fmt::format("steerability for {} failed for {} value(s):", item.id, failures.size());
        for (const auto& f : failures) message += "\n  " + f;
        fail(ErrorKind::numeric, message);
    }
    result.rank_of_relevant = steerability_rank(result.influences, item.relevant_value);
    return result;
}

std::string steerability_csv(const std::vector<SteerabilityResult>& results) {
    std::string out = "model,item_id,language,relevant_value,rank_of_relevant,relevant_influence,relevant_signed";
    for (auto v : kSchwartzValues) out += fmt::format(",influence_{}", v);
    out += "\n";
    for (const auto& r : results) {
        out += fmt::format("{},{},{},{},{},{},{}", csv_field(r.model), csv_field(r.item_id), to_string(r.language),
                           r.relevant_value, r.rank_of_relevant, r.influences.at(r.relevant_value),
                           r.signed_steerability.at(r.relevant_value));
        for (auto v : kSchwartzValues) out += fmt::format(",{}", r.influences.at(std::string(v)));
        out += "\n";
    }
    return out;
}

}  // namespace valcon
