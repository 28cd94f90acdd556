#include "measures.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "error.hpp"
#include "text_util.hpp"

namespace valcon {

Slice Slice::of(const RecordKey& k) {
    return Slice{k.model, k.language, k.country, k.use_case, k.abstain, k.condition, k.participant};
}

RecordKey Slice::at(std::string topic, std::string question, std::size_t paraphrase) const {
    return RecordKey{model,       language, country, use_case, abstain, condition, participant, std::move(topic),
                     std::move(question), paraphrase};
}

void ResponseSet::add(const RecordKey& key, Distribution stance) {
    if (stance.labels() != stance_labels(key.abstain)) {
        fail(ErrorKind::invalid_argument, "response for " + key.topic_id + "/" + key.question_id +
                                              " is not a stance-space distribution");
    }
    if (!entries_.emplace(key, std::move(stance)).second) {
        fail(ErrorKind::validation, fmt::format("duplicate response for model {} at {}/{}/{} paraphrase {}", key.model,
                                                key.topic_id, key.question_id, to_string(key.language), key.paraphrase));
    }
}

const Distribution* ResponseSet::find(const RecordKey& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

std::vector<Slice> ResponseSet::slices() const {
    std::set<Slice> out;
    for (const auto& [k, _] : entries_) out.insert(Slice::of(k));
    return {out.begin(), out.end()};
}

std::vector<std::string> ResponseSet::topics(const Slice& s) const {
    std::set<std::string> out;
    for (auto it = entries_.lower_bound(s.at("", "", 0)); it != entries_.end() && Slice::of(it->first) == s; ++it) {
        out.insert(it->first.topic_id);
    }
    return {out.begin(), out.end()};
}

std::vector<std::string> ResponseSet::questions(const Slice& s, const std::string& topic) const {
    std::set<std::string> out;
    for (auto it = entries_.lower_bound(s.at(topic, "", 0));
         it != entries_.end() && Slice::of(it->first) == s && it->first.topic_id == topic; ++it) {
        out.insert(it->first.question_id);
    }
    return {out.begin(), out.end()};
}

std::vector<std::pair<std::size_t, Distribution>> ResponseSet::paraphrases(const Slice& s, const std::string& topic,
                                                                           const std::string& question) const {
    std::vector<std::pair<std::size_t, Distribution>> out;
    for (auto it = entries_.lower_bound(s.at(topic, question, 0)); it != entries_.end() && Slice::of(it->first) == s &&
                                                                     it->first.topic_id == topic &&
                                                                     it->first.question_id == question;
         ++it) {
        out.emplace_back(it->first.paraphrase, it->second);
    }
    return out;
}

namespace {

// Mean of distributions sharing a label set, aligned by label.
Distribution mean_distribution(const std::vector<Distribution>& ds) {
    require(!ds.empty(), "cannot average zero distributions");
    std::vector<double> mass(ds.front().size(), 0.0);
    for (const auto& d : ds) {
        require(std::is_permutation(d.labels().begin(), d.labels().end(), ds.front().labels().begin(),
                                    ds.front().labels().end()),
                "averaged distributions need one label set");
        for (std::size_t k = 0; k < mass.size(); ++k) mass[k] += d.prob(ds.front().labels()[k]);
    }
    return Distribution::from_masses(ds.front().labels(), std::move(mass));
}

// Steering value, bias context, both or neither. Contexts are named by a
// short digest so several contexts per question stay distinct.
std::string condition_of(const ProbeSpec& p) {
    std::string c = p.value_condition.value_or("");
    if (p.context_statement) {
        if (!c.empty()) c += "+";
        c += "context-" + sha256_hex(*p.context_statement).substr(0, 8);
    }
    return c;
}

}  // namespace

ResponseSet build_response_set(const std::vector<ResponseRecord>& records,
                               const std::vector<StanceJudgement>& judgements, const Corpus& corpus,
                               ExclusionCounts* excluded) {
    ExclusionCounts counts;
    std::map<std::string, std::vector<const StanceJudgement*>> by_record;
    for (const auto& j : judgements) by_record[j.record_key].push_back(&j);

    ResponseSet rs;
    for (const auto& r : records) {
        const QuestionItem* item = corpus.find(r.probe.topic_id, r.probe.question_id, r.probe.language);
        if (!item || r.probe.instruction) {
            ++counts.missing_items;
            continue;
        }
        std::optional<Distribution> choice_dist;
        if (r.probe.use_case == UseCase::multiple_choice) {
            if (r.degenerate || !r.option_probs) {
                ++counts.degenerate_probes;
                continue;
            }
            choice_dist = *r.option_probs;
        } else {
            auto it = by_record.find(r.cache_key);
            if (it == by_record.end()) {
                ++counts.unjudged_generations;
                continue;
            }
            std::vector<Distribution> usable;
            for (const auto* j : it->second) {
                if (j->usable) {
                    usable.push_back(j->choice_dist);
                } else {
                    ++counts.unusable_judgements;
                }
            }
            if (usable.empty()) continue;
            choice_dist = mean_distribution(usable);
        }
        RecordKey key{r.model,
                      r.probe.language,
                      item->country,
                      r.probe.use_case,
                      r.probe.abstain_enabled,
                      condition_of(r.probe),
                      "",
                      r.probe.topic_id,
                      r.probe.question_id,
                      r.probe.paraphrase_index};
        rs.add(key, stance_projection(*choice_dist, *item, r.probe.abstain_enabled));
    }
    if (counts.degenerate_probes + counts.unusable_judgements + counts.unjudged_generations > 0) {
        spdlog::info("excluded {} degenerate probe(s), {} unusable judgement(s), {} unjudged generation(s)",
                     counts.degenerate_probes, counts.unusable_judgements, counts.unjudged_generations);
    }
    if (excluded) *excluded = counts;
    return rs;
}

std::string_view to_string(Measure m) {
    switch (m) {
        case Measure::paraphrase: return "paraphrase";
        case Measure::topic: return "topic";
        case Measure::use_case: return "use_case";
        case Measure::multilingual: return "multilingual";
    }
    return "paraphrase";
}

Measure parse_measure(std::string_view s) {
    if (s == "paraphrase") return Measure::paraphrase;
    if (s == "topic") return Measure::topic;
    if (s == "use_case" || s == "use-case" || s == "usecase") return Measure::use_case;
    if (s == "multilingual") return Measure::multilingual;
    fail(ErrorKind::config, fmt::format("unknown measure '{}'", s));
}

Distribution marginalize_paraphrases(const ResponseSet& rs, const Slice& s, const std::string& topic,
                                     const std::string& question) {
    std::vector<Distribution> ds;
    for (auto& [_, d] : rs.paraphrases(s, topic, question)) ds.push_back(d);
    if (ds.empty()) fail(ErrorKind::invalid_argument, fmt::format("no responses for {}/{}", topic, question));
    return mean_distribution(ds);
}

std::string max_answer(const ResponseSet& rs, const Slice& s, const std::string& topic, const std::string& question) {
    return argmax_label(marginalize_paraphrases(rs, s, topic, question));
}

namespace {

ConsistencyScore point_score(std::string measure, std::string level, const Slice& s, std::string topic,
                             std::string question, std::optional<std::size_t> paraphrase, double value,
                             std::size_t n) {
    ConsistencyScore c;
    c.measure = std::move(measure);
    c.level = std::move(level);
    c.slice = s;
    c.topic_id = std::move(topic);
    c.question_id = std::move(question);
    c.paraphrase = paraphrase;
    c.value = value;
    c.ci_low = value;
    c.ci_high = value;
    c.n_components = n;
    return c;
}

}  // namespace

ConsistencyScore paraphrase_inconsistency(const ResponseSet& rs, const Slice& s, const std::string& topic,
                                          const std::string& question, const DivergenceConfig& cfg) {
    std::vector<Distribution> ds;
    for (auto& [_, d] : rs.paraphrases(s, topic, question)) ds.push_back(d);
    if (ds.size() < 2) {
        fail(ErrorKind::invalid_argument,
             fmt::format("paraphrase inconsistency for {}/{} needs >= 2 paraphrases, have {}", topic, question, ds.size()));
    }
    return point_score("paraphrase", "question", s, topic, question, std::nullopt, dd_divergence(ds, cfg), ds.size());
}

ConsistencyScore topic_inconsistency(const ResponseSet& rs, const Slice& s, const std::string& topic,
                                     const DivergenceConfig& cfg) {
    std::vector<Distribution> marginals;
    for (const auto& q : rs.questions(s, topic)) marginals.push_back(marginalize_paraphrases(rs, s, topic, q));
    if (marginals.size() < 2) {
        fail(ErrorKind::invalid_argument,
             fmt::format("topic inconsistency for {} needs >= 2 questions, have {}", topic, marginals.size()));
    }
    return point_score("topic", "topic", s, topic, "", std::nullopt, dd_divergence(marginals, cfg), marginals.size());
}

ConsistencyScore usecase_inconsistency(const ResponseSet& rs, const Slice& s, const std::string& topic,
                                       const std::string& question, std::size_t paraphrase,
                                       const DivergenceConfig& cfg) {
    Slice mc = s;
    mc.use_case = UseCase::multiple_choice;
    Slice oe = s;
    oe.use_case = UseCase::open_ended;
    const Distribution* a = rs.find(mc.at(topic, question, paraphrase));
    const Distribution* b = rs.find(oe.at(topic, question, paraphrase));
    if (!a || !b) {
        fail(ErrorKind::invalid_argument, fmt::format("use-case inconsistency for {}/{}/{}: missing {} record", topic,
                                                      question, paraphrase, !a ? "multiple_choice" : "open_ended"));
    }
    const std::vector<Distribution> pair{*a, *b};
    auto score = point_score("use_case", "component", mc, topic, question, paraphrase, dd_divergence(pair, cfg), 2);
    score.use_case_pooled = true;
    return score;
}

ConsistencyScore multilingual_inconsistency(const ResponseSet& rs, const Slice& s, const std::string& topic,
                                            const std::string& question, std::size_t paraphrase,
                                            const std::vector<Language>& languages, const DivergenceConfig& cfg) {
    std::vector<Distribution> ds;
    for (Language l : languages) {
        Slice sl = s;
        sl.language = l;
        sl.use_case = UseCase::multiple_choice;
        if (const Distribution* d = rs.find(sl.at(topic, question, paraphrase))) ds.push_back(*d);
    }
    if (ds.size() < 2) {
        fail(ErrorKind::invalid_argument, fmt::format("multilingual inconsistency for {}/{}/{} needs >= 2 languages, have {}",
                                                      topic, question, paraphrase, ds.size()));
    }
    Slice out = s;
    out.use_case = UseCase::multiple_choice;
    auto score = point_score("multilingual", "component", out, topic, question, paraphrase, dd_divergence(ds, cfg),
                             ds.size());
    score.language_pooled = true;
    return score;
}

double topicwise_support(const ResponseSet& rs, const Slice& s, const std::string& topic) {
    const auto qs = rs.questions(s, topic);
    if (qs.empty()) fail(ErrorKind::invalid_argument, "no questions with responses under topic " + topic);
    double total = 0.0;
    for (const auto& q : qs) total += marginalize_paraphrases(rs, s, topic, q).prob("supports");
    return total / static_cast<double>(qs.size());
}

double paraphrase_entropy(const ResponseSet& rs, const Slice& s, const std::string& topic, const std::string& question) {
    std::vector<std::string> answers;
    for (auto& [_, d] : rs.paraphrases(s, topic, question)) answers.push_back(argmax_label(d));
    return normalized_entropy(empirical_distribution(answers, stance_labels(s.abstain)));
}

double topic_entropy(const ResponseSet& rs, const Slice& s, const std::string& topic) {
    std::vector<std::string> answers;
    for (const auto& q : rs.questions(s, topic)) answers.push_back(max_answer(rs, s, topic, q));
    return normalized_entropy(empirical_distribution(answers, stance_labels(s.abstain)));
}

double mean_of(const std::vector<double>& v) {
    require(!v.empty(), "mean of an empty sample");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double quantile(std::vector<double> v, double q) {
    require(!v.empty(), "quantile of an empty sample");
    require(q >= 0.0 && q <= 1.0, "quantile level outside [0, 1]");
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Interval bootstrap_ci(const std::vector<double>& values, const Statistic& statistic, std::size_t n_boot, double level,
                      std::uint64_t seed) {
    require(!values.empty(), "bootstrap needs at least one element");
    require(n_boot >= 1, "bootstrap needs n_boot >= 1");
    require(level > 0.0 && level < 100.0, "confidence level must be in (0, 100)");
    const std::size_t n = values.size();

    // n^n without overflow, saturating once above n_boot.
    std::size_t combos = 1;
    bool exhaustive = true;
    for (std::size_t i = 0; i < n && exhaustive; ++i) {
        if (combos > n_boot / n) exhaustive = false;
        combos *= n;
    }
    exhaustive = exhaustive && combos <= n_boot;

    std::vector<double> stats;
    std::vector<double> sample(n);
    if (exhaustive) {
        std::vector<std::size_t> idx(n, 0);
        stats.reserve(combos);
        for (std::size_t c = 0; c < combos; ++c) {
            for (std::size_t i = 0; i < n; ++i) sample[i] = values[idx[i]];
            stats.push_back(statistic(sample));
            for (std::size_t i = 0; i < n && ++idx[i] == n; ++i) idx[i] = 0;
        }
    } else {
        std::mt19937_64 rng(seed);
        const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % n;
        stats.reserve(n_boot);
        for (std::size_t b = 0; b < n_boot; ++b) {
            for (std::size_t i = 0; i < n; ++i) {
                std::uint64_t r;
                do {
                    r = rng();
                } while (r >= limit);
                sample[i] = values[r % n];
            }
            stats.push_back(statistic(sample));
        }
    }
    const double alpha = (1.0 - level / 100.0) / 2.0;
    return Interval{quantile(stats, alpha), quantile(stats, 1.0 - alpha)};
}

ResponseSet human_responses_to_records(const std::string& csv_text, const Corpus& corpus) {
    ResponseSet rs;
    const auto lines = split_lines(csv_text);
    std::size_t row = 0;
    for (const auto& raw : lines) {
        ++row;
        if (trim(raw).empty()) continue;
        const auto fields = parse_csv_line(raw);
        if (row == 1 && !fields.empty() && trim(fields[0]) == "participant") continue;
        auto bad = [&](const std::string& why) -> void {
            fail(ErrorKind::validation, fmt::format("human responses row {}: {}", row, why));
        };
        if (fields.size() != 5 && fields.size() != 6) bad(fmt::format("expected 5 or 6 fields, got {}", fields.size()));
        std::vector<std::string> f;
        for (const auto& x : fields) f.push_back(trim(x));
        for (std::size_t i = 0; i < 5; ++i) {
            if (f[i].empty()) bad("empty field");
        }
        std::size_t paraphrase = 0;
        try {
            std::size_t used = 0;
            const long long v = std::stoll(f[3], &used);
            if (used != f[3].size() || v < 0) throw std::invalid_argument("range");
            paraphrase = static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            bad("paraphrase index '" + f[3] + "' is not a non-negative integer");
        }
        Language lang = Language::eng;
        if (f.size() == 6 && !f[5].empty()) {
            try {
                lang = parse_language(f[5]);
            } catch (const Error&) {
                bad("unknown language '" + f[5] + "'");
            }
        }
        const QuestionItem* item = corpus.find(f[1], f[2], lang);
        if (!item) bad(fmt::format("unknown question {}/{}/{}", f[1], f[2], to_string(lang)));
        if (paraphrase >= item->paraphrases.size()) bad(fmt::format("paraphrase {} out of range", paraphrase));
        const Choice* choice = item->find_choice(f[4]);
        if (!choice) bad("choice '" + f[4] + "' is not an answer to " + item->coordinates());
        if (choice->stance == Stance::neutral) bad("only binary supporting/opposing answers are accepted");
        const Distribution stance(stance_labels(false), choice->stance == Stance::supports ? std::vector<double>{1.0, 0.0}
                                                                                            : std::vector<double>{0.0, 1.0});
        try {
            rs.add(RecordKey{"human", lang, item->country, UseCase::multiple_choice, false, "", f[0], f[1], f[2], paraphrase},
                   stance);
        } catch (const Error& e) {
            bad(e.what());
        }
    }
    return rs;
}

namespace {

std::vector<Slice> participant_slices(const ResponseSet& rs) {
    std::vector<Slice> out;
    for (const auto& s : rs.slices()) {
        if (!s.participant.empty()) out.push_back(s);
    }
    return out;
}

}  // namespace

ParticipantAverage participant_paraphrase_inconsistency(const ResponseSet& rs, const std::string& topic,
                                                        const std::string& question, const DivergenceConfig& cfg) {
    ParticipantAverage out;
    for (const auto& s : participant_slices(rs)) {
        if (rs.paraphrases(s, topic, question).size() < 2) continue;
        out.value += paraphrase_inconsistency(rs, s, topic, question, cfg).value;
        ++out.participants;
    }
    if (out.participants > 0) out.value /= static_cast<double>(out.participants);
    return out;
}

ParticipantAverage participant_topic_inconsistency(const ResponseSet& rs, const std::string& topic,
                                                   const DivergenceConfig& cfg) {
    ParticipantAverage out;
    for (const auto& s : participant_slices(rs)) {
        if (rs.questions(s, topic).size() < 2) continue;
        out.value += topic_inconsistency(rs, s, topic, cfg).value;
        ++out.participants;
    }
    if (out.participants > 0) out.value /= static_cast<double>(out.participants);
    return out;
}

namespace {

class Analyzer {
public:
    Analyzer(const ResponseSet& rs, const AnalysisOptions& o) : rs_(rs), o_(o) {}

    std::vector<ConsistencyScore> run() {
        std::set<Slice> participant_groups;
        for (const auto& s : rs_.slices()) {
            if (!s.participant.empty()) {
                Slice g = s;
                g.participant.clear();
                participant_groups.insert(g);
                continue;
            }
            if (!s.condition.empty()) continue;
            per_slice(s);
        }
        for (const auto& g : participant_groups) participants(g);
        if (selected(Measure::use_case)) use_case();
        if (selected(Measure::multilingual)) multilingual();
        return std::move(out_);
    }

private:
    bool selected(Measure m) const {
        return std::find(o_.measures.begin(), o_.measures.end(), m) != o_.measures.end();
    }

    Interval ci(const std::vector<double>& values, const std::string& descriptor) const {
        return bootstrap_ci(values, mean_of, o_.n_boot, o_.ci_level, stable_hash64(descriptor, o_.bootstrap_seed));
    }

    static std::string describe(const ConsistencyScore& c) {
        return fmt::format("{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}", c.measure, c.level, c.slice.model, to_string(c.slice.language),
                           to_string(c.slice.country), to_string(c.slice.use_case), c.slice.abstain, c.use_case_pooled,
                           c.language_pooled, c.topic_id, c.question_id);
    }

    // Mean of the values; the interval brackets the point estimate.
    ConsistencyScore aggregate(ConsistencyScore proto, const std::vector<double>& values) {
        proto.value = mean_of(values);
        proto.n_components = values.size();
        const auto iv = ci(values, describe(proto));
        proto.ci_low = std::min(iv.low, proto.value);
        proto.ci_high = std::max(iv.high, proto.value);
        proto.paraphrase.reset();
        return proto;
    }

    // Emits topic-level and overall aggregates from question-level values.
    void roll_up(const ConsistencyScore& proto, const std::map<std::string, std::vector<double>>& by_topic) {
        std::vector<double> topic_values;
        for (const auto& [t, vs] : by_topic) {
            if (vs.empty()) continue;
            auto c = proto;
            c.level = "topic";
            c.topic_id = t;
            c.question_id.clear();
            c = aggregate(c, vs);
            topic_values.push_back(c.value);
            out_.push_back(c);
        }
        overall(proto, topic_values);
    }

    void overall(ConsistencyScore proto, const std::vector<double>& topic_values) {
        if (topic_values.empty()) return;
        proto.level = "overall";
        proto.topic_id.clear();
        proto.question_id.clear();
        out_.push_back(aggregate(proto, topic_values));
    }

    void per_slice(const Slice& s) {
        const auto topics = rs_.topics(s);
        if (selected(Measure::paraphrase)) {
            std::map<std::string, std::vector<double>> by_topic;
            std::map<std::string, std::vector<double>> entropy_by_topic;
            for (const auto& t : topics) {
                for (const auto& q : rs_.questions(s, t)) {
                    if (rs_.paraphrases(s, t, q).size() < 2) continue;
                    auto c = paraphrase_inconsistency(rs_, s, t, q, o_.divergence);
                    by_topic[t].push_back(c.value);
                    out_.push_back(c);
                    if (o_.entropy_variants) {
                        const double h = paraphrase_entropy(rs_, s, t, q);
                        entropy_by_topic[t].push_back(h);
                        out_.push_back(point_score("entropy_paraphrase", "question", s, t, q, std::nullopt, h, c.n_components));
                    }
                }
            }
            roll_up(point_score("paraphrase", "", s, "", "", std::nullopt, 0, 0), by_topic);
            if (o_.entropy_variants) {
                roll_up(point_score("entropy_paraphrase", "", s, "", "", std::nullopt, 0, 0), entropy_by_topic);
            }
        }
        if (selected(Measure::topic)) {
            std::vector<double> values;
            std::vector<double> entropies;
            for (const auto& t : topics) {
                if (rs_.questions(s, t).size() < 2) continue;
                auto c = topic_inconsistency(rs_, s, t, o_.divergence);
                values.push_back(c.value);
                out_.push_back(c);
                if (o_.entropy_variants) {
                    const double h = topic_entropy(rs_, s, t);
                    entropies.push_back(h);
                    out_.push_back(point_score("entropy_topic", "topic", s, t, "", std::nullopt, h, c.n_components));
                }
            }
            overall(point_score("topic", "", s, "", "", std::nullopt, 0, 0), values);
            if (o_.entropy_variants) overall(point_score("entropy_topic", "", s, "", "", std::nullopt, 0, 0), entropies);
        }
        // Topicwise support, with the per-question support as components.
        std::map<std::string, std::vector<double>> support;
        for (const auto& t : topics) {
            for (const auto& q : rs_.questions(s, t)) {
                const double v = marginalize_paraphrases(rs_, s, t, q).prob("supports");
                support[t].push_back(v);
                out_.push_back(
                    point_score("support", "question", s, t, q, std::nullopt, v, rs_.paraphrases(s, t, q).size()));
            }
        }
        roll_up(point_score("support", "", s, "", "", std::nullopt, 0, 0), support);
    }

    void participants(const Slice& group) {
        std::vector<Slice> members;
        for (const auto& s : rs_.slices()) {
            Slice g = s;
            g.participant.clear();
            if (!s.participant.empty() && g == group) members.push_back(s);
        }
        std::set<std::pair<std::string, std::string>> tq;
        std::set<std::string> ts;
        for (const auto& m : members) {
            for (const auto& t : rs_.topics(m)) {
                ts.insert(t);
                for (const auto& q : rs_.questions(m, t)) tq.emplace(t, q);
            }
        }
        if (selected(Measure::paraphrase)) {
            std::map<std::string, std::vector<double>> by_topic;
            for (const auto& [t, q] : tq) {
                const auto avg = participant_paraphrase_inconsistency(rs_, t, q, o_.divergence);
                if (avg.participants == 0) continue;
                by_topic[t].push_back(avg.value);
                out_.push_back(point_score("paraphrase", "question", group, t, q, std::nullopt, avg.value, avg.participants));
            }
            roll_up(point_score("paraphrase", "", group, "", "", std::nullopt, 0, 0), by_topic);
        }
        if (selected(Measure::topic)) {
            std::vector<double> values;
            for (const auto& t : ts) {
                const auto avg = participant_topic_inconsistency(rs_, t, o_.divergence);
                if (avg.participants == 0) continue;
                values.push_back(avg.value);
                out_.push_back(point_score("topic", "topic", group, t, "", std::nullopt, avg.value, avg.participants));
            }
            overall(point_score("topic", "", group, "", "", std::nullopt, 0, 0), values);
        }
    }

    // Component -> question (mean over paraphrases) -> topic -> overall.
    void roll_up_components(const ConsistencyScore& proto, const std::vector<ConsistencyScore>& components) {
        std::map<std::string, std::map<std::string, std::vector<double>>> by_tq;
        for (const auto& c : components) by_tq[c.topic_id][c.question_id].push_back(c.value);
        std::map<std::string, std::vector<double>> by_topic;
        for (const auto& [t, qs] : by_tq) {
            for (const auto& [q, vs] : qs) {
                auto c = proto;
                c.level = "question";
                c.topic_id = t;
                c.question_id = q;
                c = aggregate(c, vs);
                by_topic[t].push_back(c.value);
                out_.push_back(c);
            }
        }
        roll_up(proto, by_topic);
    }

    void use_case() {
        for (const auto& s : rs_.slices()) {
            if (s.use_case != UseCase::multiple_choice || !s.condition.empty() || !s.participant.empty()) continue;
            Slice oe = s;
            oe.use_case = UseCase::open_ended;
            std::vector<ConsistencyScore> components;
            for (const auto& [key, _] : rs_.entries()) {
                if (Slice::of(key) != s) continue;
                if (!rs_.find(oe.at(key.topic_id, key.question_id, key.paraphrase))) continue;
                components.push_back(
                    usecase_inconsistency(rs_, s, key.topic_id, key.question_id, key.paraphrase, o_.divergence));
            }
            if (components.empty()) continue;
            out_.insert(out_.end(), components.begin(), components.end());
            auto proto = components.front();
            roll_up_components(proto, components);
        }
    }

    void multilingual() {
        // Group multiple-choice slices that differ only by language.
        std::map<Slice, std::vector<Language>> groups;
        for (const auto& s : rs_.slices()) {
            if (s.use_case != UseCase::multiple_choice || !s.condition.empty() || !s.participant.empty()) continue;
            Slice g = s;
            g.language = Language::eng;
            groups[g].push_back(s.language);
        }
        for (const auto& [g, langs] : groups) {
            if (langs.size() < 2) continue;
            std::set<std::tuple<std::string, std::string, std::size_t>> coords;
            for (Language l : langs) {
                Slice sl = g;
                sl.language = l;
                for (const auto& t : rs_.topics(sl)) {
                    for (const auto& q : rs_.questions(sl, t)) {
                        for (const auto& [r, _] : rs_.paraphrases(sl, t, q)) coords.emplace(t, q, r);
                    }
                }
            }
            std::vector<ConsistencyScore> components;
            for (const auto& [t, q, r] : coords) {
                std::size_t present = 0;
                for (Language l : langs) {
                    Slice sl = g;
                    sl.language = l;
                    if (rs_.find(sl.at(t, q, r))) ++present;
                }
                if (present < 2) continue;
                components.push_back(multilingual_inconsistency(rs_, g, t, q, r, langs, o_.divergence));
            }
            if (components.empty()) continue;
            out_.insert(out_.end(), components.begin(), components.end());
            roll_up_components(components.front(), components);
        }
    }

    const ResponseSet& rs_;
    const AnalysisOptions& o_;
    std::vector<ConsistencyScore> out_;
};

}  // namespace

AnalysisResult analyze(const ResponseSet& rs, const AnalysisOptions& options) {
    require(!options.measures.empty(), "at least one measure must be selected");
    options.divergence.validate();
    AnalysisResult result;
    result.scores = Analyzer(rs, options).run();
    return result;
}

std::string scores_csv(const std::vector<ConsistencyScore>& scores) {
    std::string out =
        "measure,model,language,country,use_case,abstain,condition,level,topic_id,question_id,"
        "paraphrase,value,ci_low,ci_high,n_components\n";
    for (const auto& c : scores) {
        const std::string language = c.language_pooled ? "all" : std::string(to_string(c.slice.language));
        const std::string use_case = c.use_case_pooled ? "both" : std::string(to_string(c.slice.use_case));
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", c.measure, csv_field(c.slice.model), language,
                           to_string(c.slice.country), use_case, c.slice.abstain ? 1 : 0, csv_field(c.slice.condition),
                           c.level, csv_field(c.topic_id), csv_field(c.question_id),
                           c.paraphrase ? std::to_string(*c.paraphrase) : "", c.value, c.ci_low, c.ci_high, c.n_components);
    }
    return out;
}

}  // namespace valcon
