#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "error.hpp"
#include "llm_client.hpp"
#include "../support/fixtures.hpp"

using namespace valcon;

namespace {

const std::vector<LetterOption> kAB{{'A', "yes"}, {'B', "no"}};

class CountingClient final : public ChatClient {
public:
    explicit CountingClient(std::function<CompletionResult(const CompletionRequest&)> reply)
        : reply_(std::move(reply)) {}
    const std::string& model_name() const override { return name_; }
    CompletionResult complete(const CompletionRequest& request) override {
        ++calls;
        last = request;
        return reply_(request);
    }
    int calls = 0;
    CompletionRequest last;

private:
    std::string name_ = "fake";
    std::function<CompletionResult(const CompletionRequest&)> reply_;
};

ModelEndpoint fake_endpoint() {
    ModelEndpoint e;
    e.base_url = "http://127.0.0.1:1/v1";
    e.model_name = "fake";
    return e;
}

std::string fixed_clock() { return "2024-01-01T00:00:00Z"; }

}  // namespace

TEST(Extraction, ExponentiatesAndNormalizes) {
    const auto out = extract_option_distribution({{" A", -0.105}, {" B", -2.303}}, kAB);
    EXPECT_NEAR(out.option_probs.prob("yes"), 0.9, 1e-3);
    EXPECT_NEAR(out.option_probs.prob("no"), 0.1, 1e-3);
    EXPECT_NEAR(out.none_mass, 0.0, 1e-12);
    EXPECT_FALSE(out.degenerate);
}

TEST(Extraction, ParenthesizedLetterCountsButWordDoesNot) {
    const auto out = extract_option_distribution({{"(A", -0.01}, {"Aardvark", -5.0}}, kAB);
    EXPECT_NEAR(out.option_mass, std::exp(-0.01), 1e-15);
    EXPECT_NEAR(out.none_mass, std::exp(-5.0), 1e-15);
    EXPECT_DOUBLE_EQ(out.option_probs.prob("yes"), 1.0);
    EXPECT_DOUBLE_EQ(out.option_probs.prob("no"), 0.0);
}

TEST(Extraction, RefusalPrefixIsDegenerate) {
    const auto out = extract_option_distribution({{"As", -0.1}}, kAB);
    EXPECT_TRUE(out.degenerate);
    EXPECT_NEAR(out.none_mass, 0.905, 1e-3);
    EXPECT_DOUBLE_EQ(out.option_probs.prob("yes"), 0.5);
}

TEST(Extraction, TokenRuleSet) {
    for (const char* ok : {"A", " A", "A.", "A)", "A:", "(A", "(A)", "\tA\n"}) {
        EXPECT_EQ(match_option_token(ok, kAB), 'A') << ok;
    }
    for (const char* bad : {"a", "AB", "A,", "((A", "Answer", "", "(", "C"}) {
        EXPECT_EQ(match_option_token(bad, kAB), '\0') << bad;
    }
    ExtractionRules extended;
    extended.suffixes.push_back(",");
    EXPECT_EQ(match_option_token("A,", kAB, extended), 'A');
}

TEST(Extraction, VariantsOfOneLetterAccumulate) {
    const auto out = extract_option_distribution({{"A", std::log(0.3)}, {" A", std::log(0.2)}, {"B)", std::log(0.5)}}, kAB);
    EXPECT_NEAR(out.option_probs.prob("yes"), 0.5, 1e-12);
    EXPECT_NEAR(out.option_mass, 1.0, 1e-12);
}

TEST(Extraction, InvariantToKeyOrder) {
    std::mt19937_64 rng(11);
    TokenLogprobs tokens{{" A", -0.7}, {"B", -1.3}, {"(B", -2.9}, {"Sure", -3.1}, {"A.", -4.4}, {"I", -5.0}};
    const auto reference = extract_option_distribution(tokens, kAB);
    for (int i = 0; i < 50; ++i) {
        std::shuffle(tokens.begin(), tokens.end(), rng);
        const auto out = extract_option_distribution(tokens, kAB);
        EXPECT_EQ(out.option_probs, reference.option_probs);
        EXPECT_EQ(out.none_mass, reference.none_mass);
    }
}

TEST(Extraction, MassAccountingBoundedByOne) {
    std::mt19937_64 rng(5);
    std::gamma_distribution<double> g(1.0, 1.0);
    const std::vector<std::string> pool{"A", " B", "(C", "D.", "Hello", "Sorry", "A)", "As", "I"};
    const std::vector<LetterOption> letters{{'A', "a"}, {'B', "b"}, {'C', "c"}};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> w(pool.size());
        double total = 0.0;
        for (auto& x : w) total += (x = g(rng));
        TokenLogprobs tokens;
        // Listed tokens cover at most the whole vocabulary mass.
        const double covered = 0.5 + 0.5 * (trial % 10) / 10.0;
        for (std::size_t i = 0; i < pool.size(); ++i) tokens.emplace_back(pool[i], std::log(covered * w[i] / total));
        const auto out = extract_option_distribution(tokens, letters);
        EXPECT_LE(out.option_mass + out.none_mass, 1.0 + 1e-9);
        EXPECT_GE(out.none_mass, 0.0);
    }
}

TEST(Extraction, ShiftInvariantProbabilities) {
    const TokenLogprobs base{{"A", -0.4}, {"B", -1.9}, {"x", -2.2}};
    const auto ref = extract_option_distribution(base, kAB);
    for (double shift : {-3.0, -0.5, -10.0}) {
        TokenLogprobs shifted;
        for (const auto& [t, lp] : base) shifted.emplace_back(t, lp + shift);
        const auto out = extract_option_distribution(shifted, kAB);
        EXPECT_NEAR(out.option_probs.prob("yes"), ref.option_probs.prob("yes"), 1e-12);
    }
}

TEST(Wire, RequestBody) {
    CompletionRequest r;
    r.prompt = "hi";
    r.top_logprobs = 20;
    const auto body = completion_request_body("m", r);
    EXPECT_EQ(body["model"], "m");
    EXPECT_EQ(body["messages"][0]["role"], "user");
    EXPECT_EQ(body["messages"][0]["content"], "hi");
    EXPECT_EQ(body["temperature"], 0.0);
    EXPECT_EQ(body["n"], 1);
    EXPECT_EQ(body["max_tokens"], 1);
    EXPECT_EQ(body["logprobs"], true);
    EXPECT_EQ(body["top_logprobs"], 20);
    r.top_logprobs = 0;
    EXPECT_FALSE(completion_request_body("m", r).contains("logprobs"));
}

TEST(Wire, ResponseParsingAndMissingLogprobs) {
    const auto reply = nlohmann::json::parse(R"({"choices":[{"message":{"role":"assistant","content":"A"},
        "logprobs":{"content":[{"token":"A","logprob":-0.1,"top_logprobs":[{"token":"A","logprob":-0.1},{"token":"B","logprob":-2.4}]}]}}]})");
    const auto parsed = parse_completion_response(reply, true);
    EXPECT_EQ(parsed.text, "A");
    ASSERT_TRUE(parsed.first_token_logprobs);
    EXPECT_EQ(parsed.first_token_logprobs->size(), 2u);

    const auto bare = nlohmann::json::parse(R"({"choices":[{"message":{"content":"A"}}]})");
    try {
        parse_completion_response(bare, true);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
        EXPECT_NE(std::string(e.what()).find("endpoint lacks logprob support"), std::string::npos);
    }
    EXPECT_EQ(parse_completion_response(bare, false).text, "A");
}

TEST(Endpoint, ValidationAndJson) {
    auto e = fake_endpoint();
    e.max_concurrent = 0;
    EXPECT_THROW(e.validate(), Error);
    const auto j = endpoint_to_json(fake_endpoint());
    const auto back = endpoint_from_json(j);
    EXPECT_EQ(back.base_url, "http://127.0.0.1:1/v1");
    EXPECT_EQ(back.top_logprobs, 20u);
    EXPECT_THROW(endpoint_from_json(nlohmann::json{{"model_name", "x"}}), Error);
}

TEST(CacheKey, DependsOnModelPromptAndDecoding) {
    CompletionRequest r;
    r.prompt = "p";
    const auto k = cache_key("probe", "m", r);
    EXPECT_EQ(k.size(), 64u);
    EXPECT_EQ(k, cache_key("probe", "m", r));
    EXPECT_NE(k, cache_key("probe", "m2", r));
    EXPECT_NE(k, cache_key("judgement", "m", r));
    auto r2 = r;
    r2.max_tokens = 5;
    EXPECT_NE(k, cache_key("probe", "m", r2));
    r2 = r;
    r2.prompt = "q";
    EXPECT_NE(k, cache_key("probe", "m", r2));
}

TEST(Prober, SecondProbeServedFromCache) {
    auto client = std::make_shared<CountingClient>([](const CompletionRequest&) {
        return CompletionResult{"A", TokenLogprobs{{"A", -0.2}, {"B", -1.8}}};
    });
    RecordStore store;
    Prober prober(client, fake_endpoint(), store, fixed_clock);
    const auto item = fixture::binary_item();
    auto spec = ProbeSpec::for_item(item, 1, UseCase::multiple_choice);
    spec.order_seed = 42;
    const auto first = prober.probe(spec, item);
    const auto second = prober.probe(spec, item);
    EXPECT_EQ(client->calls, 1);
    EXPECT_EQ(first, second);
    EXPECT_EQ(to_json(first).dump(), to_json(second).dump());
    EXPECT_EQ(client->last.temperature, 0.0);
    EXPECT_EQ(client->last.max_tokens, 1u);
    EXPECT_EQ(client->last.top_logprobs, 20u);
    EXPECT_EQ(store.size(), 1u);
    ASSERT_TRUE(first.option_probs);
    EXPECT_FALSE(first.generation);
}

TEST(Prober, OpenEndedStoresGeneration) {
    auto client = std::make_shared<CountingClient>([](const CompletionRequest&) {
        return CompletionResult{"A long passage.", std::nullopt};
    });
    RecordStore store;
    Prober prober(client, fake_endpoint(), store, fixed_clock);
    const auto item = fixture::binary_item();
    const auto rec = prober.probe(ProbeSpec::for_item(item, 0, UseCase::open_ended), item);
    ASSERT_TRUE(rec.generation);
    EXPECT_EQ(*rec.generation, "A long passage.");
    EXPECT_FALSE(rec.option_probs);
    EXPECT_EQ(client->last.top_logprobs, 0u);
    EXPECT_EQ(client->last.max_tokens, 512u);
}

TEST(Prober, QualifiesNoOptionReplyAsDegenerate) {
    auto client = std::make_shared<CountingClient>([](const CompletionRequest&) {
        return CompletionResult{"I", TokenLogprobs{{"I", 0.0}}};
    });
    RecordStore store;
    Prober prober(client, fake_endpoint(), store, fixed_clock);
    const auto item = fixture::binary_item();
    const auto rec = prober.probe(ProbeSpec::for_item(item, 0, UseCase::multiple_choice), item);
    EXPECT_TRUE(rec.degenerate);
    EXPECT_DOUBLE_EQ(rec.none_mass, 1.0);
    EXPECT_DOUBLE_EQ(rec.option_probs->prob("yes"), 0.5);
}

TEST(Prober, McNeedsLogprobSupport) {
    auto client = std::make_shared<CountingClient>([](const CompletionRequest&) { return CompletionResult{}; });
    RecordStore store;
    auto endpoint = fake_endpoint();
    endpoint.supports_logprobs = false;
    Prober prober(client, endpoint, store, fixed_clock);
    const auto item = fixture::binary_item();
    EXPECT_THROW(prober.probe(ProbeSpec::for_item(item, 0, UseCase::multiple_choice), item), Error);
    EXPECT_EQ(client->calls, 0);
}

TEST(ResponseRecordJson, RoundTrip) {
    ResponseRecord r;
    r.model = "m";
    r.probe = ProbeSpec::for_item(fixture::binary_item(), 2, UseCase::multiple_choice);
    r.probe.value_condition = "power";
    r.letters = kAB;
    r.option_probs = Distribution({"yes", "no"}, {0.25, 0.75});
    r.none_mass = 0.01;
    r.option_mass = 0.99;
    r.raw_logprobs = {{"A", -1.2}, {"B", -0.3}};
    r.timestamp = "t";
    r.cache_key = "k";
    EXPECT_EQ(response_from_json(nlohmann::json::parse(to_json(r).dump())), r);
    auto j = to_json(r);
    j["generation"] = "both";
    EXPECT_THROW(response_from_json(j), Error);
}

class HttpFixture : public ::testing::Test {
protected:
    void SetUp() override {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            const int n = ++hits_;
            auth_ = req.get_header_value("Authorization");
            body_ = nlohmann::json::parse(req.body);
            if (n <= fail_first_) {
                res.status = 503;
                return;
            }
            if (hard_fail_) {
                res.status = 400;
                res.set_content("bad request", "text/plain");
                return;
            }
            res.set_content(R"({"choices":[{"message":{"content":"B"},"logprobs":{"content":[{"token":"B","logprob":-0.1,
                "top_logprobs":[{"token":"B","logprob":-0.1},{"token":"A","logprob":-2.4}]}]}}]})",
                            "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    void TearDown() override {
        server_.stop();
        thread_.join();
    }
    ModelEndpoint endpoint() const {
        ModelEndpoint e;
        e.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1/";
        e.model_name = "mock";
        e.backoff_initial_s = 0.01;
        e.request_timeout_s = 5;
        return e;
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> hits_{0};
    int fail_first_ = 0;
    bool hard_fail_ = false;
    std::string auth_;
    nlohmann::json body_;
};

TEST_F(HttpFixture, RoundTripWithBearerToken) {
    ::setenv("VALCON_TEST_TOKEN", "sekret", 1);
    auto e = endpoint();
    e.auth_token_env = "VALCON_TEST_TOKEN";
    HttpChatClient client(e);
    CompletionRequest r;
    r.prompt = "Q";
    r.top_logprobs = 20;
    const auto out = client.complete(r);
    EXPECT_EQ(out.text, "B");
    EXPECT_EQ(out.first_token_logprobs->size(), 2u);
    EXPECT_EQ(auth_, "Bearer sekret");
    EXPECT_EQ(body_["model"], "mock");
}

TEST_F(HttpFixture, RetriesServerErrors) {
    fail_first_ = 2;
    HttpChatClient client(endpoint());
    EXPECT_EQ(client.complete(CompletionRequest{"Q"}).text, "B");
    EXPECT_EQ(hits_.load(), 3);
}

TEST_F(HttpFixture, GivesUpAfterRetryBudget) {
    fail_first_ = 100;
    HttpChatClient client(endpoint());
    try {
        client.complete(CompletionRequest{"Q"});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::network);
    }
    EXPECT_EQ(hits_.load(), 4);
}

TEST_F(HttpFixture, ClientErrorsAreNotRetried) {
    hard_fail_ = true;
    HttpChatClient client(endpoint());
    EXPECT_THROW(client.complete(CompletionRequest{"Q"}), Error);
    EXPECT_EQ(hits_.load(), 1);
}

TEST_F(HttpFixture, ProbeThroughHttpIsDeterministic) {
    auto e = endpoint();
    RecordStore store;
    Prober prober(std::make_shared<HttpChatClient>(e), e, store, fixed_clock);
    const auto item = fixture::binary_item();
    auto spec = ProbeSpec::for_item(item, 0, UseCase::multiple_choice);
    const auto rec = prober.probe(spec, item);
    RecordStore store2;
    Prober prober2(std::make_shared<HttpChatClient>(e), e, store2, fixed_clock);
    EXPECT_EQ(to_json(prober2.probe(spec, item)).dump(), to_json(rec).dump());
    const std::string b_choice = rec.letters[1].choice;
    EXPECT_NEAR(rec.option_probs->prob(b_choice), std::exp(-0.1) / (std::exp(-0.1) + std::exp(-2.4)), 1e-12);
}

TEST(HttpClient, UnreachableEndpointIsNetworkError) {
    ModelEndpoint e;
    e.base_url = "http://127.0.0.1:9/v1";
    e.model_name = "gone";
    e.max_retries = 1;
    e.backoff_initial_s = 0.01;
    e.request_timeout_s = 1;
    HttpChatClient client(e);
    try {
        client.complete(CompletionRequest{"Q"});
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::network);
    }
}
