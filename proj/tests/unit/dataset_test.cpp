#include <gtest/gtest.h>

#include <fstream>

#include "dataset.hpp"
#include "error.hpp"
#include "../support/fixtures.hpp"

using namespace valcon;

namespace {

std::string two_item_json() {
    return R"({
  "schema_version": 1,
  "provenance": {"generator_model": "gen", "date": "2024-05-01", "prompt_version": "v1"},
  "topics": {"abortion": {"name": "Abortion", "description": "reproductive rights"}},
  "items": [
    {"topic_id": "abortion", "question_id": "q1", "language": "eng", "country": "US",
     "controversial": true, "paraphrases": ["Is abortion a right?", "Is abortion a human right?"],
     "choices": [{"text": "yes", "stance": "supports"}, {"text": "no", "stance": "opposes"}]},
    {"topic_id": "abortion", "question_id": "q2", "language": "eng", "country": "US",
     "controversial": true, "paraphrases": ["Should abortion be banned?"],
     "choices": [{"text": "yes", "stance": "opposes"}, {"text": "no", "stance": "supports"}]}
  ]
})";
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::internal;
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Corpus, ParsesWellFormedTwoItemFile) {
    const Corpus c = parse_corpus(two_item_json());
    ASSERT_EQ(c.items.size(), 2u);
    EXPECT_EQ(c.items[0].canonical_text(), "Is abortion a right?");
    EXPECT_EQ(c.items[1].choices[0].stance, Stance::opposes);
    EXPECT_EQ(c.topics.at("abortion").name, "Abortion");
    EXPECT_EQ(c.provenance.generator_model, "gen");
    EXPECT_NE(c.find("abortion", "q2", Language::eng), nullptr);
    EXPECT_EQ(c.find("abortion", "q2", Language::ger), nullptr);
}

TEST(Corpus, DuplicateTripleNamedInError) {
    auto c = fixture::corpus_of({fixture::binary_item("t", "q"), fixture::binary_item("t", "q")});
    const auto problems = validate_corpus(c);
    ASSERT_EQ(problems.size(), 1u);
    EXPECT_NE(problems[0].find("t/q/eng"), std::string::npos);
    EXPECT_NE(problems[0].find("duplicate (topic, question, language)"), std::string::npos);
    EXPECT_EQ(kind_of([&] { parse_corpus(corpus_to_json(c)); }), ErrorKind::validation);
}

TEST(Corpus, AllNeutralChoicesRejected) {
    auto item = fixture::binary_item();
    for (auto& ch : item.choices) ch.stance = Stance::neutral;
    const std::string msg = message_of([&] { parse_corpus(corpus_to_json(fixture::corpus_of({item}))); });
    EXPECT_NE(msg.find("no supporting/opposing choice"), std::string::npos) << msg;
}

TEST(Corpus, ReportsEveryViolation) {
    auto a = fixture::binary_item("t", "a");
    a.paraphrases.clear();
    auto b = fixture::binary_item("t", "b");
    b.choices.pop_back();
    auto c = fixture::binary_item("t", "c");
    c.choices[1].text = "yes";
    auto corpus = fixture::corpus_of({a, b, c});
    corpus.items.push_back(fixture::binary_item("missing", "d"));
    const auto problems = validate_corpus(corpus);
    // a: no paraphrases; b: one choice and nothing opposing; c: duplicate
    // text; d: unresolved topic.
    EXPECT_EQ(problems.size(), 5u);
    const std::string msg = message_of([&] { parse_corpus(corpus_to_json(corpus)); });
    EXPECT_NE(msg.find("5 corpus violation(s)"), std::string::npos) << msg;
}

TEST(Corpus, ParseErrorCarriesLineAndColumn) {
    const std::string msg = message_of([] { parse_corpus("{\n  \"schema_version\": 1,\n  oops\n}", "bad.json"); });
    EXPECT_NE(msg.find("bad.json:3:"), std::string::npos) << msg;
    EXPECT_EQ(kind_of([] { parse_corpus("[1, 2", "x"); }), ErrorKind::parse);
}

TEST(Corpus, RejectsUnknownSchemaVersion) {
    std::string text = two_item_json();
    text.replace(text.find("\"schema_version\": 1"), 19, "\"schema_version\": 9");
    EXPECT_EQ(kind_of([&] { parse_corpus(text); }), ErrorKind::validation);
}

TEST(Corpus, RoundTripIsFieldForField) {
    auto a = fixture::binary_item("t1", "q1", 5);
    auto b = fixture::binary_item("t2", "q1", 2, Language::jpn);
    b.country = Country::Japan;
    b.translated = true;
    b.controversial = false;
    b.choices.push_back({"分からない", Stance::neutral});
    const Corpus original = fixture::corpus_of({a, b});
    fixture::TempDir dir;
    write_corpus(original, dir / "sub/corpus.json");
    const Corpus loaded = load_corpus(dir / "sub/corpus.json");
    EXPECT_EQ(loaded, original);
    EXPECT_EQ(corpus_to_json(loaded), corpus_to_json(original));
}

TEST(Corpus, MissingFileIsConfigError) {
    EXPECT_EQ(kind_of([] { load_corpus("/nonexistent/corpus.json"); }), ErrorKind::config);
}

TEST(StanceProjection, DirectAndInvertedCoding) {
    auto item = fixture::binary_item();
    const Distribution d({"yes", "no"}, {0.7, 0.3});
    Distribution s = stance_projection(d, item, false);
    EXPECT_EQ(s.labels(), (std::vector<std::string>{"supports", "opposes"}));
    EXPECT_NEAR(s.prob("supports"), 0.7, 1e-12);
    item.choices[0].stance = Stance::opposes;
    item.choices[1].stance = Stance::supports;
    s = stance_projection(d, item, false);
    EXPECT_NEAR(s.prob("supports"), 0.3, 1e-12);
    EXPECT_NEAR(s.prob("opposes"), 0.7, 1e-12);
}

TEST(StanceProjection, NeutralMassKeptWithAbstention) {
    auto item = fixture::binary_item();
    const Distribution d({"yes", "no", "I have no answer"}, {0.48, 0.32, 0.2});
    const Distribution s = stance_projection(d, item, true);
    EXPECT_NEAR(s.prob("neutral"), 0.2, 1e-12);
    EXPECT_NEAR(s.prob("supports") / s.prob("opposes"), 1.5, 1e-12);
    const Distribution forced = stance_projection(d, item, false);
    EXPECT_NEAR(forced.prob("supports"), 0.6, 1e-12);
    EXPECT_FALSE(forced.has_label("neutral"));
}

TEST(StanceProjection, UnknownChoiceLabelIsError) {
    auto item = fixture::binary_item();
    EXPECT_THROW(stance_projection(Distribution({"yes", "maybe"}, {0.5, 0.5}), item, false), Error);
}

TEST(StanceProjection, AlwaysNormalizedProperty) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto item = fixture::binary_item();
    item.choices.push_back({"it depends", Stance::neutral});
    item.choices.push_back({"absolutely", Stance::supports});
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> m{u(rng), u(rng), u(rng), u(rng), trial % 5 == 0 ? 0.0 : u(rng)};
        const auto d = Distribution::from_masses({"yes", "no", "it depends", "absolutely", "I have no answer"}, m);
        for (bool abstain : {false, true}) {
            const auto s = stance_projection(d, item, abstain);
            double total = 0.0;
            for (double p : s.probs()) {
                EXPECT_GE(p, 0.0);
                total += p;
            }
            EXPECT_NEAR(total, 1.0, 1e-9);
        }
    }
}

TEST(CorpusStats, EmptyCorpusGivesEmptyTable) {
    EXPECT_TRUE(corpus_stats(Corpus{}).empty());
}

TEST(CorpusStats, SingleItemCountsParaphrases) {
    const auto rows = corpus_stats(fixture::corpus_of({fixture::binary_item("t", "q", 5)}));
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].total_questions, 5u);
    EXPECT_EQ(rows[0].topics, 1u);
    EXPECT_DOUBLE_EQ(rows[0].paraphrases_per_question, 5.0);
    ASSERT_TRUE(rows[0].yes_supports_fraction.has_value());
    EXPECT_DOUBLE_EQ(*rows[0].yes_supports_fraction, 1.0);
}

TEST(CorpusStats, GroupTotalsSumToCorpusTotal) {
    std::vector<QuestionItem> items;
    std::size_t expected = 0;
    for (int t = 0; t < 6; ++t) {
        for (int q = 0; q < 1 + t % 3; ++q) {
            auto item = fixture::binary_item("t" + std::to_string(t), "q" + std::to_string(q), 1 + (t + q) % 5);
            item.controversial = t % 2 == 0;
            item.language = t < 3 ? Language::eng : Language::ger;
            expected += item.paraphrases.size();
            items.push_back(item);
        }
    }
    const auto rows = corpus_stats(fixture::corpus_of(items));
    std::size_t total = 0;
    for (const auto& r : rows) total += r.total_questions;
    EXPECT_EQ(total, expected);
    EXPECT_EQ(rows.size(), 4u);
    EXPECT_TRUE(rows.front().controversial);
    const std::string csv = corpus_stats_csv(rows);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}
