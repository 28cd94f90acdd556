#include "pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "error.hpp"
#include "text_util.hpp"

namespace valcon {

namespace {

// Runs work(i) for i in [0, n) on a few threads and calls commit(i) in index
// order as soon as every earlier index has finished. The first exception
// escaping work() stops the run and is rethrown.
template <typename Work, typename Commit>
void ordered_parallel(std::size_t n, std::size_t workers, Work work, Commit commit) {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::mutex mutex;
    std::vector<char> ready(n, 0);
    std::size_t committed = 0;
    std::exception_ptr fatal;
    auto run = [&] {
        for (;;) {
            if (abort.load()) return;
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                work(i);
            } catch (...) {
                std::lock_guard lock(mutex);
                if (!fatal) fatal = std::current_exception();
                abort = true;
                return;
            }
            std::lock_guard lock(mutex);
            ready[i] = 1;
            while (committed < n && ready[committed]) commit(committed++);
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(run);
    run();
    for (auto& th : pool) th.join();
    if (fatal) std::rethrow_exception(fatal);
}

bool in_scope(const QuestionItem& item, const SurveyPlan& plan) {
    auto has = [](const auto& v, const auto& x) { return v.empty() || std::find(v.begin(), v.end(), x) != v.end(); };
    return has(plan.languages, item.language) && has(plan.countries, item.country);
}

}  // namespace

std::uint64_t probe_order_seed(std::uint64_t base, const QuestionItem& item, std::size_t paraphrase, UseCase use_case) {
    return stable_hash64(fmt::format("{}\x1f{}\x1f{}\x1f{}", item.coordinates(), paraphrase, to_string(use_case), "order"),
                         base);
}

std::vector<PlannedProbe> plan_probes(const Corpus& corpus, const SurveyPlan& plan) {
    require(!plan.use_cases.empty(), "survey needs at least one use-case");
    require(!plan.value_conditions.empty(), "survey needs at least one condition (\"\" for none)");
    std::vector<PlannedProbe> out;
    for (const auto& item : corpus.items) {
        if (!in_scope(item, plan)) continue;
        for (std::size_t r = 0; r < item.paraphrases.size(); ++r) {
            for (UseCase uc : plan.use_cases) {
                ProbeSpec base = ProbeSpec::for_item(item, r, uc);
                base.abstain_enabled = plan.abstain;
                base.in_context_example = plan.in_context_example && uc == UseCase::multiple_choice;
                base.order_seed = probe_order_seed(plan.order_seed, item, r, uc);
                for (const auto& v : plan.value_conditions) {
                    ProbeSpec spec = base;
                    if (!v.empty()) spec.value_condition = v;
                    out.push_back({spec, &item});
                }
                if (uc == UseCase::open_ended) {
                    if (auto it = plan.contexts.find(item.coordinates()); it != plan.contexts.end()) {
                        for (const auto& context : it->second) {
                            ProbeSpec spec = base;
                            spec.context_statement = context;
                            out.push_back({spec, &item});
                        }
                    }
                }
            }
        }
    }
    return out;
}

SurveySummary run_survey(Prober& prober, const Corpus& corpus, const SurveyPlan& plan, const Progress& progress) {
    const auto planned = plan_probes(corpus, plan);
    SurveySummary summary;
    summary.planned = planned.size();
    std::vector<std::optional<ResponseRecord>> slots(planned.size());
    std::vector<char> cached(planned.size(), 0);
    std::vector<std::string> errors(planned.size());
    const std::size_t workers = plan.concurrency ? plan.concurrency : prober.endpoint().max_concurrent;

    ordered_parallel(
        planned.size(), workers,
        [&](std::size_t i) {
            try {
                bool hit = false;
                slots[i] = prober.probe(planned[i].spec, *planned[i].item, false, &hit);
                cached[i] = hit;
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::config) throw;
                errors[i] = fmt::format("{} paraphrase {} ({}): {}", planned[i].item->coordinates(),
                                        planned[i].spec.paraphrase_index, to_string(planned[i].spec.use_case), e.what());
            }
        },
        [&](std::size_t i) {
            if (slots[i] && !cached[i]) prober.store().append(to_json(*slots[i]));
            if (progress) progress(i + 1, planned.size());
        });

    for (std::size_t i = 0; i < planned.size(); ++i) {
        if (!slots[i]) {
            summary.failures.push_back(errors[i]);
            continue;
        }
        (cached[i] ? summary.from_cache : summary.fetched)++;
        if (slots[i]->degenerate) ++summary.degenerate;
        summary.records.push_back(std::move(*slots[i]));
    }
    return summary;
}

std::string judgement_stance(const StanceJudgement& j, const QuestionItem& item) {
    if (const Choice* c = item.find_choice(j.hard_label)) return std::string(to_string(c->stance));
    if (j.hard_label == abstain_text(item.language)) return std::string(to_string(Stance::neutral));
    fail(ErrorKind::validation, fmt::format("{}: judged label '{}' is not a choice", item.coordinates(), j.hard_label));
}

JudgeSummary run_judges(std::vector<Judge>& judges, const Corpus& corpus, const std::vector<ResponseRecord>& records,
                        std::size_t concurrency, const Progress& progress) {
    require(!judges.empty(), "judging needs at least one judge endpoint");
    JudgeSummary summary;
    struct Job {
        const ResponseRecord* record;
        const QuestionItem* item;
        std::size_t judge;
    };
    std::vector<const ResponseRecord*> generations;
    std::vector<Job> jobs;
    for (const auto& r : records) {
        if (!r.generation) continue;
        const QuestionItem* item = corpus.find(r.probe.topic_id, r.probe.question_id, r.probe.language);
        if (!item) {
            summary.failures.push_back(fmt::format("{}/{}/{}: item not in corpus", r.probe.topic_id,
                                                   r.probe.question_id, to_string(r.probe.language)));
            continue;
        }
        generations.push_back(&r);
        for (std::size_t j = 0; j < judges.size(); ++j) jobs.push_back({&r, item, j});
    }
    summary.generations = generations.size();

    std::vector<std::optional<StanceJudgement>> slots(jobs.size());
    std::vector<char> cached(jobs.size(), 0);
    std::vector<std::string> errors(jobs.size());
    std::size_t workers = concurrency;
    if (!workers) {
        for (const auto& j : judges) workers = std::max(workers, j.endpoint().max_concurrent);
    }
    ordered_parallel(
        jobs.size(), workers,
        [&](std::size_t i) {
            try {
                bool hit = false;
                slots[i] = judges[jobs[i].judge].judge(*jobs[i].record, *jobs[i].item, false, &hit);
                cached[i] = hit;
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::config) throw;
                errors[i] = fmt::format("{} judged by {}: {}", jobs[i].item->coordinates(),
                                        judges[jobs[i].judge].endpoint().model_name, e.what());
            }
        },
        [&](std::size_t i) {
            if (slots[i] && !cached[i]) {
                // Judges share one store in practice; append through the first.
                judges[jobs[i].judge].store().append(to_json(*slots[i]));
            }
            if (progress) progress(i + 1, jobs.size());
        });

    std::map<const ResponseRecord*, std::vector<std::optional<std::string>>> votes;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (!slots[i]) {
            summary.failures.push_back(errors[i]);
            continue;
        }
        (cached[i] ? summary.from_cache : summary.judged)++;
        auto& v = votes[jobs[i].record];
        v.resize(judges.size());
        if (slots[i]->usable) {
            v[jobs[i].judge] = judgement_stance(*slots[i], *jobs[i].item);
        } else {
            ++summary.unusable;
        }
        summary.judgements.push_back(std::move(*slots[i]));
    }

    if (judges.size() >= 2) {
        std::vector<std::vector<std::string>> complete;
        for (const auto* g : generations) {
            auto it = votes.find(g);
            if (it == votes.end() || it->second.size() != judges.size()) continue;
            if (!std::all_of(it->second.begin(), it->second.end(), [](const auto& x) { return x.has_value(); })) continue;
            std::vector<std::string> row;
            for (const auto& x : it->second) row.push_back(*x);
            complete.push_back(std::move(row));
        }
        if (!complete.empty()) {
            summary.agreement = AgreementMatrix::from_votes(complete, stance_labels(true));
            try {
                summary.kappa = fleiss_kappa(*summary.agreement);
            } catch (const Error& e) {
                spdlog::warn("agreement: {}", e.what());
            }
        }
    }
    return summary;
}

std::vector<ResponseRecord> stored_records(const RecordStore& store) {
    std::vector<ResponseRecord> out;
    for (const auto& j : store.records_of_kind("probe")) out.push_back(response_from_json(j));
    return out;
}

std::vector<StanceJudgement> stored_judgements(const RecordStore& store) {
    std::vector<StanceJudgement> out;
    for (const auto& j : store.records_of_kind("judgement")) out.push_back(judgement_from_json(j));
    return out;
}

}  // namespace valcon
