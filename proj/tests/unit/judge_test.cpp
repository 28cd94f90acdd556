#include <gtest/gtest.h>

#include <random>

#include "error.hpp"
#include "judge.hpp"
#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

using namespace valcon;

namespace {

class ScriptedJudge final : public ChatClient {
public:
    // Puts `p_yes` on whichever letter the prompt assigned to "yes".
    explicit ScriptedJudge(double p_yes) : p_yes_(p_yes) {}
    const std::string& model_name() const override { return name_; }
    CompletionResult complete(const CompletionRequest& request) override {
        ++calls;
        prompts.push_back(request.prompt);
        const char yes = request.prompt.find("- (A) yes") != std::string::npos ? 'A' : 'B';
        const char no = yes == 'A' ? 'B' : 'A';
        if (p_yes_ < 0) return CompletionResult{"Hmm", TokenLogprobs{{"Hmm", -0.01}}};
        return CompletionResult{std::string(1, yes), TokenLogprobs{{std::string(1, yes), std::log(p_yes_)},
                                                                   {std::string(1, no), std::log(1 - p_yes_)}}};
    }
    int calls = 0;
    std::vector<std::string> prompts;

private:
    std::string name_ = "scripted";
    double p_yes_;
};

ModelEndpoint judge_endpoint() {
    ModelEndpoint e;
    e.base_url = "http://127.0.0.1:1/v1";
    e.model_name = "judge-a";
    return e;
}

std::string fixed_clock() { return "2024-01-01T00:00:00Z"; }

std::vector<std::vector<unsigned>> as_unsigned(const AgreementMatrix& m) {
    std::vector<std::vector<unsigned>> out;
    for (const auto& row : m.counts) out.emplace_back(row.begin(), row.end());
    return out;
}

}  // namespace

TEST(JudgeStance, PassThroughOfJudgeLetters) {
    auto client = std::make_shared<ScriptedJudge>(0.99);
    RecordStore store;
    Judge judge(client, judge_endpoint(), store, fixed_clock);
    const auto item = fixture::binary_item();
    const std::string passage = "Adopting it would clearly help everyone.";
    const auto j = judge.judge(passage, item, 0, false, 17, "rec-1");
    EXPECT_EQ(j.hard_label, "yes");
    EXPECT_NEAR(j.choice_dist.prob("yes"), 0.99, 1e-12);
    EXPECT_TRUE(j.usable);
    EXPECT_EQ(j.judge_model, "judge-a");
    EXPECT_NE(client->prompts[0].find("Passage: \"" + passage + "\""), std::string::npos);
    EXPECT_NE(client->prompts[0].find(std::string(kJudgeQuestion)), std::string::npos);
    EXPECT_EQ(store.records_of_kind("judgement").size(), 1u);
    EXPECT_EQ(store.records_of_kind("judgement")[0].at("judge_model"), "judge-a");
}

TEST(JudgeStance, IdempotentAndCached) {
    auto client = std::make_shared<ScriptedJudge>(0.3);
    RecordStore store;
    Judge judge(client, judge_endpoint(), store, fixed_clock);
    const auto item = fixture::binary_item();
    const auto a = judge.judge("Some passage.", item, 1, true, 3, "r");
    const auto b = judge.judge("Some passage.", item, 1, true, 3, "r");
    EXPECT_EQ(a, b);
    EXPECT_EQ(client->calls, 1);
    EXPECT_EQ(a.choice_dist.size(), 3u);
    EXPECT_TRUE(a.choice_dist.has_label("I have no answer"));
    EXPECT_EQ(judgement_from_json(to_json(a)), a);
}

TEST(JudgeStance, EmptyGenerationIsPreconditionError) {
    RecordStore store;
    Judge judge(std::make_shared<ScriptedJudge>(0.5), judge_endpoint(), store, fixed_clock);
    try {
        judge.judge("", fixture::binary_item(), 0, false, 0, "r");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
    }
}

TEST(JudgeStance, DegenerateOutputFlaggedUnusable) {
    RecordStore store;
    Judge judge(std::make_shared<ScriptedJudge>(-1), judge_endpoint(), store, fixed_clock);
    const auto j = judge.judge("text", fixture::binary_item(), 0, false, 0, "r");
    EXPECT_FALSE(j.usable);
}

TEST(FleissKappa, UnanimousAcrossCategoriesIsExactlyOne) {
    std::vector<std::vector<std::string>> votes;
    for (int i = 0; i < 10; ++i) votes.push_back(std::vector<std::string>(3, i % 2 ? "yes" : "no"));
    EXPECT_EQ(fleiss_kappa(AgreementMatrix::from_votes(votes, {"yes", "no"})), 1.0);
}

TEST(FleissKappa, IndependentUniformJudgesNearZero) {
    std::mt19937_64 rng(2024);
    std::bernoulli_distribution coin(0.5);
    std::vector<std::vector<std::string>> votes;
    for (int i = 0; i < 10000; ++i) votes.push_back({coin(rng) ? "a" : "b", coin(rng) ? "a" : "b"});
    EXPECT_LT(std::abs(fleiss_kappa(AgreementMatrix::from_votes(votes, {"a", "b"}))), 0.05);
}

TEST(FleissKappa, MatchesPairwiseOracle) {
    AgreementMatrix m;
    m.categories = {"s", "o", "n"};
    m.n_judges = 3;
    m.counts = {{3, 0, 0}, {1, 2, 0}, {0, 1, 2}, {1, 1, 1}};
    EXPECT_NEAR(fleiss_kappa(m), oracle::fleiss_kappa_pairwise(as_unsigned(m)), 1e-12);
}

TEST(FleissKappa, InvariantToRowAndColumnOrder) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> cat(0, 3);
    for (int trial = 0; trial < 20; ++trial) {
        AgreementMatrix m;
        m.categories = {"a", "b", "c", "d"};
        m.n_judges = 5;
        for (int i = 0; i < 12; ++i) {
            std::vector<std::size_t> row(4, 0);
            for (int j = 0; j < 5; ++j) ++row[cat(rng)];
            m.counts.push_back(row);
        }
        const double k = fleiss_kappa(m);
        EXPECT_NEAR(k, oracle::fleiss_kappa_pairwise(as_unsigned(m)), 1e-12);
        auto shuffled = m;
        std::shuffle(shuffled.counts.begin(), shuffled.counts.end(), rng);
        std::vector<std::size_t> perm{2, 0, 3, 1};
        for (auto& row : shuffled.counts) {
            std::vector<std::size_t> r(4);
            for (std::size_t c = 0; c < 4; ++c) r[perm[c]] = row[c];
            row = r;
        }
        EXPECT_NEAR(fleiss_kappa(shuffled), k, 1e-12);
        EXPECT_GE(k, -1.0);
        EXPECT_LE(k, 1.0);
    }
}

TEST(FleissKappa, SingleCategoryHandling) {
    AgreementMatrix all_one;
    all_one.categories = {"a", "b"};
    all_one.n_judges = 2;
    all_one.counts = {{2, 0}, {2, 0}};
    EXPECT_EQ(fleiss_kappa(all_one), 1.0);
    AgreementMatrix bad;
    bad.categories = {"a"};
    bad.n_judges = 2;
    bad.counts = {{1}};
    EXPECT_THROW(fleiss_kappa(bad), Error);
    AgreementMatrix one_judge;
    one_judge.categories = {"a", "b"};
    one_judge.n_judges = 1;
    one_judge.counts = {{1, 0}};
    EXPECT_THROW(fleiss_kappa(one_judge), Error);
}
