#pragma once

#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "llm_client.hpp"

namespace valcon {

struct StanceJudgement {
    std::string record_key;  // cache_key of the judged open-ended record
    std::string judge_model;
    std::string prompt;
    std::vector<LetterOption> letters;
    Distribution choice_dist;  // over the item's choice texts (+ abstain)
    std::string hard_label;
    bool usable = true;  // false when no option letter was found
    double none_mass = 0.0;
    TokenLogprobs raw_logprobs;
    std::string timestamp;
    std::string cache_key;

    friend bool operator==(const StanceJudgement&, const StanceJudgement&) = default;
};

nlohmann::json to_json(const StanceJudgement& j);
StanceJudgement judgement_from_json(const nlohmann::json& j);

// Choice texts the judge picks from for this item.
std::vector<std::string> judge_choices(const QuestionItem& item, bool abstain_enabled);

class Judge {
public:
    Judge(std::shared_ptr<ChatClient> client, ModelEndpoint endpoint, RecordStore& store,
          Clock clock = utc_timestamp);

    // The generation is passed through untouched; repeat calls hit the cache.
    StanceJudgement judge(const std::string& generation, const QuestionItem& item, std::size_t paraphrase_index,
                          bool abstain_enabled, std::uint64_t order_seed, const std::string& record_key);
    StanceJudgement judge(const std::string& generation, const QuestionItem& item, std::size_t paraphrase_index,
                          bool abstain_enabled, std::uint64_t order_seed, const std::string& record_key, bool append,
                          bool* from_cache);

    // Convenience for an open-ended record.
    StanceJudgement judge(const ResponseRecord& record, const QuestionItem& item, bool append = true,
                          bool* from_cache = nullptr);

    const ModelEndpoint& endpoint() const { return endpoint_; }
    RecordStore& store() { return store_; }

private:
    std::shared_ptr<ChatClient> client_;
    ModelEndpoint endpoint_;
    RecordStore& store_;
    Clock clock_;
};

struct AgreementMatrix {
    std::vector<std::string> categories;
    std::vector<std::vector<std::size_t>> counts;  // item x category vote counts
    std::size_t n_judges = 0;

    // votes[i] lists each judge's label for item i.
    static AgreementMatrix from_votes(const std::vector<std::vector<std::string>>& votes,
                                      std::vector<std::string> categories);
    void validate() const;
};

double fleiss_kappa(const AgreementMatrix& m);

}  // namespace valcon
