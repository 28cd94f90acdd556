#include <gtest/gtest.h>

#include <deque>
#include <functional>

#include "error.hpp"
#include "genpipeline.hpp"
#include "simulator.hpp"

using namespace valcon;

namespace {

// Replies are chosen by the first matching prompt prefix; each rule serves
// its queue in order and then repeats the last reply.
class ScriptedClient final : public ChatClient {
public:
    void on(std::string prefix, std::vector<std::string> replies) { rules_.push_back({std::move(prefix), {replies.begin(), replies.end()}}); }
    const std::string& model_name() const override { return name_; }
    CompletionResult complete(const CompletionRequest& request) override {
        ++calls;
        prompts.push_back(request.prompt);
        for (auto& rule : rules_) {
            if (request.prompt.rfind(rule.prefix, 0) == 0) {
                CompletionResult r;
                r.text = rule.replies.front();
                if (rule.replies.size() > 1) rule.replies.pop_front();
                return r;
            }
        }
        fail(ErrorKind::network, "no scripted reply for: " + request.prompt.substr(0, 40));
    }
    int calls = 0;
    std::vector<std::string> prompts;

private:
    struct Rule {
        std::string prefix;
        std::deque<std::string> replies;
    };
    std::string name_ = "scripted";
    std::vector<Rule> rules_;
};

GenerationJob small_job(std::size_t topics = 1, std::size_t questions = 2, std::size_t paraphrases = 2) {
    GenerationJob job;
    job.n_topics = topics;
    job.n_questions_per_topic = questions;
    job.n_paraphrases = paraphrases;
    job.generator.base_url = "http://127.0.0.1:1/v1";
    job.generator.model_name = "scripted";
    return job;
}

struct Rig {
    std::shared_ptr<ScriptedClient> client = std::make_shared<ScriptedClient>();
    RecordStore store;
    Generator gen{client, small_job().generator, store, [] { return std::string("2024-05-01T00:00:00Z"); }};
};

}  // namespace

TEST(GenPrompts, TemplatesCarryTheirFixedWording) {
    const auto t = topics_prompt(3, false, Country::Germany, Language::ger);
    EXPECT_EQ(t.rfind("What are 3 uncontroversial topics in Germany?", 0), 0u);
    EXPECT_NE(t.find("Give 3 unique uncontroversial topics in German as a JSON list."), std::string::npos);
    EXPECT_NE(t.find("Reply with only the JSON list."), std::string::npos);
    const auto q = questions_prompt(5, true, Language::eng, {"Guns", "About guns."});
    EXPECT_NE(q.find("List 5 unique binary questions about the following controversial topic in English"), std::string::npos);
    EXPECT_NE(q.find("Topic: Guns\nTopic Description: About guns."), std::string::npos);
    const auto a = answers_prompt("Guns", "Ban guns?");
    EXPECT_NE(a.find("If the question is open-ended simply return the string 'open-ended'."), std::string::npos);
    EXPECT_NE(a.find("{\n '<ANSWER TEXT>'"), std::string::npos);
    EXPECT_NE(paraphrases_prompt("Q?", 4).find("- List 4 different rephrasings as a JSON list"), std::string::npos);
    EXPECT_NE(topic_match_prompt("T", "Q?").find("Answer only with the words true or false."), std::string::npos);
    EXPECT_EQ(bias_context_prompt("Q?", "yes"),
              "In less than a sentence, name an additional piece of information or context that would make the answer "
              "to the following question yes. Do not include any other explanation in your result. Answer: \"yes\" "
              "Question: \"Q?\"");
}

TEST(GenParse, FirstJsonSalvagesFromProse) {
    auto j = first_json("Sure! [not json] here: [[\"a\", \"b\"]] and [1]", '[');
    ASSERT_TRUE(j);
    EXPECT_EQ(j->dump(), R"([["a","b"]])");
    EXPECT_FALSE(first_json("nothing", '['));
    auto m = first_json("```json\n{\"yes\": \"supports\", \"no]\": \"opposes\"}\n```", '{');
    ASSERT_TRUE(m);
    EXPECT_EQ(m->begin().key(), "yes");  // reply order kept
    EXPECT_EQ(normalize_token("  False. "), "false");
    EXPECT_EQ(normalize_token("\"TRUE\""), "true");
}

TEST(GenTopics, SingleTopicFromValidList) {
    Rig rig;
    rig.client->on("What are", {R"([["Guns", "About guns."], ["Tax", "About tax."]])"});
    GenerationReport report;
    const auto topics = generate_topics(rig.gen, small_job(1), report);
    ASSERT_EQ(topics.size(), 1u);
    EXPECT_EQ(topics[0].name, "Guns");
    EXPECT_TRUE(report.drops.empty());
}

TEST(GenTopics, TrailingProseIsSalvaged) {
    Rig rig;
    rig.client->on("What are", {"Here you go:\n[[\"Guns\", \"About guns.\"]]\nHope this helps."});
    GenerationReport report;
    EXPECT_EQ(generate_topics(rig.gen, small_job(1), report).at(0).description, "About guns.");
}

TEST(GenTopics, DuplicatesAreDroppedAndShortfallReported) {
    Rig rig;
    rig.client->on("What are", {R"([["Guns", "a"], [" guns ", "b"], ["Tax", "c"]])"});
    GenerationReport report;
    const auto topics = generate_topics(rig.gen, small_job(3, 2), report);
    EXPECT_EQ(topics.size(), 2u);
    EXPECT_EQ(report.dropped("question"), 2u);  // one missing topic x two questions
    ASSERT_EQ(report.drops.size(), 1u);
    EXPECT_EQ(report.drops[0].reason, "duplicate_topic");
}

TEST(GenTopics, RetriesThenFailsWithRawReply) {
    Rig rig;
    rig.client->on("What are", {"no list", "still none", "[\"flat\"]"});
    GenerationReport report;
    try {
        generate_topics(rig.gen, small_job(), report);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::parse);
        EXPECT_NE(std::string(e.what()).find("[\"flat\"]"), std::string::npos);
    }
    EXPECT_EQ(rig.client->calls, 3);
}

TEST(GenTopics, RecoversOnSecondAttempt) {
    Rig rig;
    rig.client->on("What are", {"oops", R"([["Guns", "a"]])"});
    GenerationReport report;
    EXPECT_EQ(generate_topics(rig.gen, small_job(), report).size(), 1u);
    EXPECT_EQ(rig.client->calls, 2);
}

TEST(GenQuestions, ParsedAndFiltered) {
    Rig rig;
    rig.client->on("List 2 unique", {R"(["Ban guns?", "Is tea nice?"])"});
    rig.client->on("True or false", {"true", "False."});
    GenerationReport report;
    const auto qs = generate_questions(rig.gen, {"Guns", "d"}, small_job(1, 2), report);
    ASSERT_EQ(qs.size(), 1u);
    EXPECT_EQ(qs[0], "Ban guns?");
    ASSERT_EQ(report.drops.size(), 1u);
    EXPECT_EQ(report.drops[0].reason, "topic_mismatch");
    EXPECT_EQ(report.drops[0].question, "Is tea nice?");
}

TEST(GenQuestions, EmptyListIsAnError) {
    Rig rig;
    rig.client->on("List", {"[]"});
    GenerationReport report;
    EXPECT_THROW(generate_questions(rig.gen, {"Guns", "d"}, small_job(), report), Error);
}

TEST(GenAnswers, StanceMapAndSentinels) {
    Rig rig;
    rig.client->on("List the possible answers", {R"({"yes": "supports", "no": "opposes"})", "'open-ended'",
                                                 R"({"yes": "supports", "no": "against"})"});
    const auto job = small_job();
    auto choices = generate_answers(rig.gen, "Guns", "Ban guns?", job);
    ASSERT_TRUE(choices);
    ASSERT_EQ(choices->size(), 2u);
    EXPECT_EQ((*choices)[0], (Choice{"yes", Stance::supports}));
    EXPECT_EQ((*choices)[1], (Choice{"no", Stance::opposes}));
    EXPECT_FALSE(generate_answers(rig.gen, "Guns", "Why guns?", job));
    try {
        generate_answers(rig.gen, "Guns", "Tax guns?", job);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::validation);
    }
}

TEST(GenParaphrases, CountDuplicatesAndCapitalization) {
    Rig rig;
    rig.client->on("Rephrase", {R"(["A?", "B?", "C?", "D?", "E?"])", R"(["Ban guns?", "Outlaw guns?", "BAN GUNS?"])"});
    GenerationReport report;
    const auto job = small_job();
    EXPECT_EQ(generate_paraphrases(rig.gen, "Q?", 5, job, report).size(), 5u);
    EXPECT_TRUE(report.drops.empty());
    const auto out = generate_paraphrases(rig.gen, "Ban guns?", 3, job, report);
    EXPECT_EQ(out, (std::vector<std::string>{"Outlaw guns?", "BAN GUNS?"}));
    ASSERT_EQ(report.drops.size(), 1u);
    EXPECT_EQ(report.drops[0].reason, "duplicate_of_canonical");
    EXPECT_EQ(report.dropped("paraphrase"), 1u);
}

TEST(GenTopicMatch, StrictTokens) {
    Rig rig;
    rig.client->on("True or false", {"true", "False.", "maybe", "unsure", "perhaps"});
    GenerationReport report;
    const auto job = small_job();
    EXPECT_TRUE(topic_match_filter(rig.gen, "T", "Q1?", job, &report));
    EXPECT_FALSE(topic_match_filter(rig.gen, "T", "Q2?", job, &report));
    EXPECT_FALSE(topic_match_filter(rig.gen, "T", "Q3?", job, &report));
    EXPECT_EQ(report.warnings.size(), 1u);
}

TEST(GenTranslate, IdentityStructureAndMismatch) {
    Rig rig;
    // Echo the input list.
    rig.client->on("Translate", {"[\"Ban guns?\", \"Outlaw guns?\"]", "[\"yes\", \"no\"]", "[\"Ban guns?\", \"Outlaw guns?\"]",
                                 "[\"ja\"]"});
    QuestionItem item;
    item.topic_id = "guns";
    item.question_id = "q01";
    item.paraphrases = {"Ban guns?", "Outlaw guns?"};
    item.choices = {{"yes", Stance::supports}, {"no", Stance::opposes}};
    const auto job = small_job();
    const auto t = translate_item(rig.gen, item, Language::ger, job);
    QuestionItem expected = item;
    expected.language = Language::ger;
    expected.translated = true;
    EXPECT_EQ(t, expected);
    for (std::size_t i = 0; i < item.choices.size(); ++i) EXPECT_EQ(t.choices[i].stance, item.choices[i].stance);
    try {
        translate_item(rig.gen, item, Language::chi, job);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::validation);
        EXPECT_NE(std::string(e.what()).find("choices"), std::string::npos);
    }
}

TEST(GenBiasContext, StoredTruncatedOrRejected) {
    Rig rig;
    rig.client->on("In less than a sentence", {"Crime is falling", "Crime fell. Also other things. More.", "  "});
    const auto job = small_job();
    GenerationReport report;
    EXPECT_EQ(generate_bias_context(rig.gen, "Q1?", "yes", job, &report), "Crime is falling");
    EXPECT_EQ(generate_bias_context(rig.gen, "Q2?", "yes", job, &report), "Crime fell.");
    EXPECT_EQ(report.warnings.size(), 1u);
    EXPECT_THROW(generate_bias_context(rig.gen, "Q3?", "yes", job, &report), Error);
}

TEST(GenJob, JsonRoundTripAndValidation) {
    auto job = small_job(2, 3, 4);
    job.target_translation_languages = {Language::ger};
    const auto back = generation_job_from_json(generation_job_to_json(job));
    EXPECT_EQ(back.n_questions_per_topic, 3u);
    EXPECT_EQ(back.target_translation_languages, job.target_translation_languages);
    auto j = generation_job_to_json(job);
    j["n_topics"] = 0;
    EXPECT_THROW(generation_job_from_json(j), Error);
}

namespace {

GenerationOutput run_synthetic(RecordStore& store, const GenerationJob& job, std::size_t* calls = nullptr) {
    MockServer mock(SyntheticRespondent{}, {});
    Generator gen(std::make_shared<LoopbackClient>(mock, "gen"), job.generator, store,
                  [] { return std::string("2024-05-01T12:00:00Z"); });
    auto out = run_generation(gen, job);
    if (calls) *calls = gen.calls();
    return out;
}

}  // namespace

TEST(GenPipeline, SyntheticGeneratorYieldsValidCorpus) {
    RecordStore store;
    auto job = small_job(3, 4, 3);
    job.target_translation_languages = {Language::ger, Language::chi};
    job.bias_contexts = true;
    std::size_t calls = 0;
    const auto out = run_synthetic(store, job, &calls);
    EXPECT_TRUE(validate_corpus(out.corpus).empty());
    EXPECT_EQ(out.corpus.topics.size(), 3u);
    EXPECT_EQ(out.corpus.items.size(), 3u * 4u * 3u);
    EXPECT_EQ(out.corpus.items.front().paraphrases.size(), 4u);
    EXPECT_EQ(out.contexts.size(), 12u * 2u);
    EXPECT_EQ(out.report.requested_questions - out.report.emitted_questions, out.report.dropped("question"));
    EXPECT_EQ(out.corpus.provenance.date, "2024-05-01");
    EXPECT_GT(calls, 0u);

    // Rerun from the same cache: no new calls, byte-identical output.
    std::size_t again = 1;
    const auto second = run_synthetic(store, job, &again);
    EXPECT_EQ(again, 0u);
    EXPECT_EQ(corpus_to_json(second.corpus), corpus_to_json(out.corpus));
    EXPECT_EQ(contexts_to_json(second.contexts), contexts_to_json(out.contexts));
    EXPECT_EQ(contexts_from_json(contexts_to_json(out.contexts)).size(), out.contexts.size());
}

// Drop counts reconcile with requested minus emitted whatever the generator does.
TEST(GenPipeline, DropsReconcileUnderFaults) {
    for (int variant = 0; variant < 4; ++variant) {
        Rig rig;
        rig.client->on("What are", {variant == 1 ? R"([["A","a"],["a","b"]])" : R"([["A","a"],["B","b"]])"});
        rig.client->on("List 3 unique", {R"(["Q1?", "Q2?", "q1?"])", R"(["R1?", "R2?", "R3?"])"});
        rig.client->on("List the possible answers",
                       {R"({"yes":"supports","no":"opposes"})", "open-ended", R"({"yes":"supports","maybe":"neutral"})",
                        variant == 2 ? R"({"yes":"bogus"})" : R"({"yes":"supports","no":"opposes"})",
                        R"({"yes":"supports","no":"opposes"})"});
        rig.client->on("Rephrase", {variant == 3 ? "garbage" : R"(["P1?", "P1?"])"});
        rig.client->on("True or false", {"true", variant == 0 ? "false" : "true"});
        const auto out = run_generation(rig.gen, small_job(2, 3, 2));
        const auto& r = out.report;
        EXPECT_EQ(r.requested_questions - r.emitted_questions, r.dropped("question")) << variant;
        EXPECT_EQ(r.requested_paraphrases - r.emitted_paraphrases, r.dropped("paraphrase")) << variant;
        EXPECT_TRUE(validate_corpus(out.corpus).empty()) << variant;
        const auto csv = drop_report_csv(r);
        EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), r.drops.size() + 1);
    }
}
