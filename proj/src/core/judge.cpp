#include "judge.hpp"

#include <fmt/format.h>

#include "error.hpp"

namespace valcon {

using nlohmann::json;

json to_json(const StanceJudgement& j) {
    json letters = json::array();
    for (const auto& l : j.letters) letters.push_back({{"letter", std::string(1, l.letter)}, {"choice", l.choice}});
    json raw = json::array();
    for (const auto& [token, lp] : j.raw_logprobs) raw.push_back({{"token", token}, {"logprob", lp}});
    return {{"kind", "judgement"},
            {"cache_key", j.cache_key},
            {"record_key", j.record_key},
            {"judge_model", j.judge_model},
            {"prompt", j.prompt},
            {"letters", letters},
            {"choice_dist", distribution_to_json(j.choice_dist)},
            {"hard_label", j.hard_label},
            {"usable", j.usable},
            {"none_mass", j.none_mass},
            {"raw_logprobs", raw},
            {"timestamp", j.timestamp}};
}

StanceJudgement judgement_from_json(const json& j) {
    try {
        StanceJudgement out;
        out.cache_key = j.at("cache_key").get<std::string>();
        out.record_key = j.at("record_key").get<std::string>();
        out.judge_model = j.at("judge_model").get<std::string>();
        out.prompt = j.value("prompt", "");
        for (const auto& l : j.at("letters")) {
            out.letters.push_back({l.at("letter").get<std::string>().at(0), l.at("choice").get<std::string>()});
        }
        out.choice_dist = distribution_from_json(j.at("choice_dist"));
        out.hard_label = j.at("hard_label").get<std::string>();
        out.usable = j.at("usable").get<bool>();
        out.none_mass = j.value("none_mass", 0.0);
        for (const auto& t : j.at("raw_logprobs")) {
            out.raw_logprobs.emplace_back(t.at("token").get<std::string>(), t.at("logprob").get<double>());
        }
        out.timestamp = j.value("timestamp", "");
        return out;
    } catch (const json::exception& ex) {
        fail(ErrorKind::parse, fmt::format("malformed judgement record: {}", ex.what()));
    }
}

std::vector<std::string> judge_choices(const QuestionItem& item, bool abstain_enabled) {
    auto choices = item.choice_texts();
    if (abstain_enabled) choices.emplace_back(abstain_text(item.language));
    return choices;
}

Judge::Judge(std::shared_ptr<ChatClient> client, ModelEndpoint endpoint, RecordStore& store, Clock clock)
    : client_(std::move(client)), endpoint_(std::move(endpoint)), store_(store), clock_(std::move(clock)) {}

StanceJudgement Judge::judge(const std::string& generation, const QuestionItem& item, std::size_t paraphrase_index,
                             bool abstain_enabled, std::uint64_t order_seed, const std::string& record_key) {
    return judge(generation, item, paraphrase_index, abstain_enabled, order_seed, record_key, true, nullptr);
}

StanceJudgement Judge::judge(const std::string& generation, const QuestionItem& item, std::size_t paraphrase_index,
                             bool abstain_enabled, std::uint64_t order_seed, const std::string& record_key,
                             bool append, bool* from_cache) {
    if (from_cache) *from_cache = false;
    if (!endpoint_.supports_logprobs) fail(ErrorKind::config, endpoint_.model_name + ": endpoint lacks logprob support");
    if (paraphrase_index >= item.paraphrases.size()) {
        fail(ErrorKind::invalid_argument, "paraphrase index out of range for " + item.coordinates());
    }
    const McPrompt prompt =
        build_judge_prompt(generation, item.paraphrases[paraphrase_index], judge_choices(item, abstain_enabled), order_seed);

    CompletionRequest request;
    request.prompt = prompt.text;
    request.max_tokens = 1;
    request.top_logprobs = endpoint_.top_logprobs;
    const std::string key = cache_key("judgement", endpoint_.model_name, request, record_key);
    if (auto cached = store_.find(key)) {
        if (from_cache) *from_cache = true;
        return judgement_from_json(*cached);
    }

    const auto result = client_->complete(request);
    if (!result.first_token_logprobs) fail(ErrorKind::config, endpoint_.model_name + ": endpoint lacks logprob support");
    const auto extraction = extract_option_distribution(*result.first_token_logprobs, prompt.letters, endpoint_.extraction);

    StanceJudgement j;
    j.record_key = record_key;
    j.judge_model = endpoint_.model_name;
    j.prompt = prompt.text;
    j.letters = prompt.letters;
    j.choice_dist = extraction.option_probs;
    j.hard_label = argmax_label(j.choice_dist);
    j.usable = !extraction.degenerate;
    j.none_mass = extraction.none_mass;
    j.raw_logprobs = *result.first_token_logprobs;
    j.timestamp = clock_();
    j.cache_key = key;
    if (append) store_.append(to_json(j));
    return j;
}

StanceJudgement Judge::judge(const ResponseRecord& record, const QuestionItem& item, bool append, bool* from_cache) {
    if (!record.generation) fail(ErrorKind::invalid_argument, "only open-ended records can be judged");
    return judge(*record.generation, item, record.probe.paraphrase_index, record.probe.abstain_enabled,
                 record.probe.order_seed, record.cache_key, append, from_cache);
}

AgreementMatrix AgreementMatrix::from_votes(const std::vector<std::vector<std::string>>& votes,
                                            std::vector<std::string> categories) {
    AgreementMatrix m;
    m.categories = std::move(categories);
    for (std::size_t i = 0; i < votes.size(); ++i) {
        if (i == 0) m.n_judges = votes[i].size();
        if (votes[i].size() != m.n_judges) {
            fail(ErrorKind::invalid_argument, fmt::format("item {} has {} votes, expected {}", i, votes[i].size(), m.n_judges));
        }
        std::vector<std::size_t> row(m.categories.size(), 0);
        for (const auto& v : votes[i]) {
            auto it = std::find(m.categories.begin(), m.categories.end(), v);
            if (it == m.categories.end()) fail(ErrorKind::invalid_argument, "vote for unknown category '" + v + "'");
            ++row[static_cast<std::size_t>(it - m.categories.begin())];
        }
        m.counts.push_back(std::move(row));
    }
    return m;
}

void AgreementMatrix::validate() const {
    require(n_judges >= 2, "fleiss kappa needs at least two judges");
    require(!counts.empty(), "fleiss kappa needs at least one item");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        require(counts[i].size() == categories.size(), fmt::format("row {} has the wrong width", i));
        std::size_t total = 0;
        for (auto c : counts[i]) total += c;
        require(total == n_judges, fmt::format("row {} sums to {}, expected {}", i, total, n_judges));
    }
}

double fleiss_kappa(const AgreementMatrix& m) {
    m.validate();
    const double n = static_cast<double>(m.n_judges);
    const double items = static_cast<double>(m.counts.size());
    std::vector<double> column(m.categories.size(), 0.0);
    double p_bar = 0.0;
    for (const auto& row : m.counts) {
        double sq = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            const double c = static_cast<double>(row[j]);
            sq += c * c;
            column[j] += c;
        }
        p_bar += (sq - n) / (n * (n - 1.0));
    }
    p_bar /= items;
    double p_e = 0.0;
    for (double c : column) {
        const double p = c / (items * n);
        p_e += p * p;
    }
    if (p_e >= 1.0) {
        if (p_bar >= 1.0) return 1.0;
        fail(ErrorKind::numeric, "kappa undefined");
    }
    return (p_bar - p_e) / (1.0 - p_e);
}

}  // namespace valcon
