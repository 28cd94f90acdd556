#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "error.hpp"
#include "pipeline.hpp"
#include "simulator.hpp"
#include "../support/oracles.hpp"

using namespace valcon;

namespace {

SyntheticRespondent flat_respondent(double theta, std::uint64_t seed = 1) {
    SyntheticRespondent r;
    r.default_stance = theta;
    r.seed = seed;
    return r;
}

ModelEndpoint endpoint_named(const std::string& name, const std::string& url = "http://127.0.0.1:1/v1") {
    ModelEndpoint e;
    e.base_url = url;
    e.model_name = name;
    e.max_concurrent = 2;
    return e;
}

std::string fixed_clock() { return "1970-01-01T00:00:00Z"; }

// Full in-process pipeline: survey, judge, project, analyze.
AnalysisResult run_pipeline(const SyntheticRespondent& resp, const Corpus& corpus, const SurveyPlan& plan,
                            std::size_t n_boot = 200) {
    MockServer mock(resp, corpus);
    RecordStore store;
    Prober prober(std::make_shared<LoopbackClient>(mock, resp.model_name), endpoint_named(resp.model_name), store,
                  fixed_clock);
    const auto survey = run_survey(prober, corpus, plan);
    EXPECT_TRUE(survey.failures.empty()) << survey.failures.front();
    std::vector<Judge> judges;
    judges.emplace_back(std::make_shared<LoopbackClient>(mock, "judge"), endpoint_named("judge"), store, fixed_clock);
    const auto judged = run_judges(judges, corpus, survey.records);
    EXPECT_TRUE(judged.failures.empty());
    AnalysisOptions options;
    options.n_boot = n_boot;
    ExclusionCounts excluded;
    const auto rs = build_response_set(survey.records, judged.judgements, corpus, &excluded);
    EXPECT_EQ(excluded.degenerate_probes + excluded.unjudged_generations + excluded.unusable_judgements +
                  excluded.missing_items,
              0u);
    return analyze(rs, options);
}

double overall(const AnalysisResult& result, const std::string& measure) {
    double worst = -1.0;
    for (const auto& s : result.scores) {
        if (s.measure == measure && s.level == "overall") worst = std::max(worst, s.value);
    }
    return worst;
}

double max_value(const AnalysisResult& result, const std::string& measure) {
    double worst = -1.0;
    for (const auto& s : result.scores) {
        if (s.measure == measure) worst = std::max(worst, s.value);
    }
    return worst;
}

// Mean paraphrase inconsistency from answer() alone, no transport.
double mean_paraphrase_inconsistency(const SyntheticRespondent& resp, const Corpus& corpus) {
    ResponseSet rs;
    for (const auto& item : corpus.items) {
        for (std::size_t r = 0; r < item.paraphrases.size(); ++r) {
            const auto spec = ProbeSpec::for_item(item, r, UseCase::multiple_choice);
            RecordKey k;
            k.model = resp.model_name;
            k.topic_id = item.topic_id;
            k.question_id = item.question_id;
            k.paraphrase = r;
            k.language = item.language;
            rs.add(k, stance_answer(resp, spec, item));
        }
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : rs.slices()) {
        for (const auto& t : rs.topics(s)) {
            for (const auto& q : rs.questions(s, t)) {
                sum += paraphrase_inconsistency(rs, s, t, q).value;
                ++n;
            }
        }
    }
    return sum / static_cast<double>(n);
}

}  // namespace

TEST(Simulator, NoiselessFullSupport) {
    const Corpus corpus = synthetic_corpus({2, 3, 3, {Language::eng}});
    const auto resp = flat_respondent(1.0);
    for (const auto& item : corpus.items) {
        for (std::size_t r = 0; r < item.paraphrases.size(); ++r) {
            const auto d = stance_answer(resp, ProbeSpec::for_item(item, r, UseCase::multiple_choice), item);
            EXPECT_EQ(d.prob("supports"), 1.0);
            EXPECT_EQ(d.prob("opposes"), 0.0);
            const auto rec = answer(resp, ProbeSpec::for_item(item, r, UseCase::multiple_choice), item);
            EXPECT_EQ(rec.option_probs->prob("yes"), 1.0);
        }
    }
}

TEST(Simulator, UnknownTopicIsAnError) {
    SyntheticRespondent r;
    r.topic_stances = {{"t01", 0.5}};
    const Corpus corpus = synthetic_corpus({2, 1, 1, {Language::eng}});
    EXPECT_NO_THROW(stance_answer(r, ProbeSpec::for_item(corpus.items[0], 0, UseCase::multiple_choice), corpus.items[0]));
    EXPECT_THROW(stance_answer(r, ProbeSpec::for_item(corpus.items[1], 0, UseCase::multiple_choice), corpus.items[1]),
                 Error);
}

TEST(Simulator, RespondentJsonValidation) {
    const auto bad = nlohmann::json::parse(
        R"({"schema_version":1,"kind":"respondent","topic_stances":{"a":1.5},"paraphrase_noise":-0.1,"seed":3})");
    try {
        respondent_from_json(bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::validation);
        EXPECT_NE(std::string(e.what()).find("2 respondent violation"), std::string::npos) << e.what();
    }
    SyntheticRespondent good = flat_respondent(0.4, 9);
    good.paraphrase_noise = 0.2;
    good.value_sensitivity = ValueSensitivity{"power", 0.3};
    EXPECT_EQ(respondent_from_json(respondent_to_json(good)), good);
}

TEST(Simulator, KeyedDrawsAreDeterministicAndBounded) {
    double lo = 1, hi = -1, sum = 0;
    for (int i = 0; i < 20000; ++i) {
        const double u = keyed_uniform(5, "axis", std::to_string(i));
        ASSERT_EQ(u, keyed_uniform(5, "axis", std::to_string(i)));
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    EXPECT_GE(lo, -1.0);
    EXPECT_LE(hi, 1.0);
    EXPECT_LT(lo, -0.99);
    EXPECT_GT(hi, 0.99);
    EXPECT_NEAR(sum / 20000, 0.0, 0.02);
    EXPECT_NE(keyed_uniform(5, "axis", "1"), keyed_uniform(6, "axis", "1"));
}

TEST(Simulator, AntitheticPairsLeaveMarginalUntouched) {
    const Corpus corpus = synthetic_corpus({3, 4, 4, {Language::eng}});
    auto resp = flat_respondent(0.5, 11);
    resp.paraphrase_noise = 0.4;
    for (const auto& item : corpus.items) {
        double mean = 0.0;
        for (std::size_t r = 0; r < 4; ++r) {
            mean += support_level(resp, ProbeSpec::for_item(item, r, UseCase::multiple_choice), 4);
        }
        EXPECT_NEAR(mean / 4, 0.5, 1e-15);
    }
}

TEST(Simulator, StanceMarkerRoundTrip) {
    const Distribution d({"supports", "opposes", "neutral"}, {0.123456789012345678, 1 - 0.123456789012345678, 0});
    const auto back = parse_stance_marker("lead " + stance_marker(d) + " trail");
    ASSERT_TRUE(back);
    EXPECT_EQ(back->probs(), d.probs());
    EXPECT_FALSE(parse_stance_marker("no marker here"));
}

TEST(Simulator, ZeroNoiseEveryMeasureIsZero) {
    const Corpus corpus = synthetic_corpus({3, 3, 3, {Language::eng, Language::ger, Language::chi}});
    SyntheticRespondent resp;
    resp.topic_stances = {{"t01", 0.2}, {"t02", 0.5}, {"t03", 0.9}};
    SurveyPlan plan;
    plan.use_cases = {UseCase::multiple_choice, UseCase::open_ended};
    plan.order_seed = 17;
    const auto result = run_pipeline(resp, corpus, plan);
    for (const char* m : {"paraphrase", "topic", "use_case", "multilingual"}) {
        const double v = max_value(result, m);
        EXPECT_GE(v, 0.0) << m << " missing";
        EXPECT_LT(v, 1e-6) << m;
    }
}

TEST(Simulator, LargerParaphraseNoiseLargerInconsistency) {
    const Corpus corpus = synthetic_corpus({20, 10, 4, {Language::eng}});
    auto lo = flat_respondent(0.5, 21);
    lo.paraphrase_noise = 0.1;
    auto hi = lo;
    hi.paraphrase_noise = 0.3;
    EXPECT_GT(mean_paraphrase_inconsistency(hi, corpus), mean_paraphrase_inconsistency(lo, corpus));
}

// Each noise axis moves its own measure and leaves the other three alone.
TEST(Simulator, NoiseAxesAreSeparable) {
    const Corpus corpus = synthetic_corpus({8, 5, 4, {Language::eng, Language::ger}});
    SurveyPlan plan;
    plan.use_cases = {UseCase::multiple_choice, UseCase::open_ended};
    const std::vector<double> sigmas{0.0, 0.05, 0.1, 0.2, 0.4};
    const std::vector<std::pair<std::string, double SyntheticRespondent::*>> axes{
        {"paraphrase", &SyntheticRespondent::paraphrase_noise},
        {"topic", &SyntheticRespondent::question_noise},
        {"multilingual", &SyntheticRespondent::language_noise},
        {"use_case", &SyntheticRespondent::usecase_noise}};
    const std::vector<std::string> measures{"paraphrase", "topic", "use_case", "multilingual"};
    const auto base = run_pipeline(flat_respondent(0.5, 4), corpus, plan, 50);
    for (const auto& [axis, field] : axes) {
        std::vector<double> on_axis;
        for (double sigma : sigmas) {
            auto resp = flat_respondent(0.5, 4);
            resp.*field = sigma;
            const auto result = run_pipeline(resp, corpus, plan, 50);
            on_axis.push_back(overall(result, axis));
            for (const auto& m : measures) {
                if (m == axis) continue;
                EXPECT_LT(overall(result, m), 2 * std::max(overall(base, m), 1e-6)) << axis << " leaks into " << m;
            }
        }
        for (std::size_t i = 1; i < on_axis.size(); ++i) EXPECT_GT(on_axis[i], on_axis[i - 1]) << axis;
        std::vector<double> xs(sigmas.begin(), sigmas.end());
        EXPECT_GE(oracle::spearman(xs, on_axis), 0.9) << axis;
    }
}

TEST(Simulator, AnswerIsDeterministic) {
    const Corpus corpus = synthetic_corpus({2, 2, 3, {Language::eng}});
    auto resp = flat_respondent(0.5, 8);
    resp.paraphrase_noise = resp.question_noise = 0.1;
    for (const auto& item : corpus.items) {
        auto spec = ProbeSpec::for_item(item, 1, UseCase::multiple_choice);
        spec.order_seed = 99;
        EXPECT_EQ(to_json(answer(resp, spec, item)).dump(), to_json(answer(resp, spec, item)).dump());
    }
}

class MockServerTest : public ::testing::Test {
protected:
    void SetUp() override {
        corpus = synthetic_corpus({2, 2, 3, {Language::eng, Language::jpn}});
        resp = flat_respondent(0.45, 3);
        resp.paraphrase_noise = 0.1;
        resp.question_noise = 0.05;
        resp.usecase_noise = 0.1;
        resp.value_sensitivity = ValueSensitivity{"power", 0.3};
        server = std::make_unique<MockServer>(resp, corpus);
        server->start();
        prober = std::make_unique<Prober>(std::make_shared<HttpChatClient>(endpoint_named("synthetic", server->base_url())),
                                          endpoint_named("synthetic", server->base_url()), store, fixed_clock);
    }

    Corpus corpus;
    SyntheticRespondent resp;
    std::unique_ptr<MockServer> server;
    RecordStore store;
    std::unique_ptr<Prober> prober;
};

TEST_F(MockServerTest, LoopbackMatchesAnswerWithinTolerance) {
    for (const auto& item : corpus.items) {
        for (std::size_t r = 0; r < item.paraphrases.size(); ++r) {
            for (bool abstain : {false, true}) {
                auto spec = ProbeSpec::for_item(item, r, UseCase::multiple_choice);
                spec.order_seed = 1000 + r;
                spec.abstain_enabled = abstain;
                spec.in_context_example = r == 1;
                const auto got = prober->probe(spec, item);
                const auto want = answer(resp, spec, item);
                ASSERT_FALSE(got.degenerate);
                for (const auto& label : want.option_probs->labels()) {
                    EXPECT_NEAR(got.option_probs->prob(label), want.option_probs->prob(label), 1e-9) << label;
                }
                EXPECT_NEAR(got.none_mass, 0.0, 1e-12);
            }
        }
    }
}

TEST_F(MockServerTest, LetterOrderDoesNotChangeStance) {
    const auto& item = corpus.items[0];
    auto spec = ProbeSpec::for_item(item, 0, UseCase::multiple_choice);
    std::optional<Distribution> first;
    std::set<char> yes_letters;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        spec.order_seed = seed;
        const auto rec = prober->probe(spec, item);
        for (const auto& l : rec.letters) {
            if (l.choice == "yes") yes_letters.insert(l.letter);
        }
        const auto stance = stance_projection(*rec.option_probs, item, false);
        if (!first) first = stance;
        EXPECT_NEAR(stance.prob("supports"), first->prob("supports"), 1e-12);
    }
    EXPECT_EQ(yes_letters.size(), 2u);  // both orders were exercised
}

TEST_F(MockServerTest, ValueSensitivityShiftsDistribution) {
    const auto& item = corpus.items[0];
    auto spec = ProbeSpec::for_item(item, 0, UseCase::multiple_choice);
    const double base = prober->probe(spec, item).option_probs->prob("yes");
    spec.value_condition = "power";
    const double steered = prober->probe(spec, item).option_probs->prob("yes");
    spec.value_condition = "hedonism";
    const double other = prober->probe(spec, item).option_probs->prob("yes");
    const double noise = resp.paraphrase_noise;
    EXPECT_NEAR(steered - base, 0.3 + noise * keyed_uniform(resp.seed, "value", "t01\x1fq001\x1fpower"), 1e-9);
    EXPECT_LE(std::abs(other - base), noise + 1e-12);
}

TEST_F(MockServerTest, OpenEndedPassageJudgedBackToStance) {
    Judge judge(std::make_shared<HttpChatClient>(endpoint_named("judge", server->base_url())),
                endpoint_named("judge", server->base_url()), store, fixed_clock);
    for (const auto& item : corpus.items) {
        for (bool abstain : {false, true}) {
            auto spec = ProbeSpec::for_item(item, 2, UseCase::open_ended);
            spec.abstain_enabled = abstain;
            spec.value_condition = abstain ? std::optional<std::string>("power") : std::nullopt;
            spec.context_statement = abstain ? std::optional<std::string>("Some context.") : std::nullopt;
            const auto rec = prober->probe(spec, item);
            ASSERT_TRUE(rec.generation);
            const auto j = judge.judge(rec, item);
            ASSERT_TRUE(j.usable);
            const auto stance = stance_projection(j.choice_dist, item, abstain);
            const auto want = stance_answer(resp, spec, item);
            EXPECT_NEAR(stance.prob("supports"), want.prob("supports"), 1e-9);
        }
    }
}

TEST_F(MockServerTest, UnparseablePromptIsAStructuredError) {
    const std::string prompt = std::string(phrases(Language::eng).mc_instruction) +
                               "\n\nQuestion: nothing we know\n- (A) yes\n- (B) no\nAnswer:";
    try {
        server->reply(prompt, 5);
        FAIL() << "expected a parse error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::parse);
    }
    EXPECT_THROW(server->reply("", 5), Error);
    EXPECT_THROW(server->reply("free text with no structure", 5), Error);
}

TEST_F(MockServerTest, UnparseablePromptOverHttp) {
    QuestionItem stranger = corpus.items[0];
    stranger.paraphrases = {"A wording the server never saw?"};
    try {
        prober->probe(ProbeSpec::for_item(stranger, 0, UseCase::multiple_choice), stranger);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::network);
        EXPECT_NE(std::string(e.what()).find("400"), std::string::npos) << e.what();
    }
    EXPECT_GE(server->requests_served(), 1u);
}

TEST_F(MockServerTest, PvqPortraitsAreAnswered) {
    const auto items = load_pvq_items(std::filesystem::path(VALCON_SOURCE_DIR) / "data" / "pvq21_eng.json");
    auto r = flat_respondent(0.4, 2);
    r.paraphrase_noise = 0.1;
    r.value_sensitivity = ValueSensitivity{items[0].relevant_value, 0.3};
    MockServer pvq_server(r, {}, items);
    RecordStore s;
    Prober p(std::make_shared<LoopbackClient>(pvq_server, "synthetic"), endpoint_named("synthetic"), s, fixed_clock);
    const auto result = measure_steerability(p, items[0], 5);
    EXPECT_EQ(result.rank_of_relevant, 11);
}
