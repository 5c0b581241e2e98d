#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "datg/gateway.hpp"
#include "support/paths.hpp"

using namespace datg;

namespace {

ChatRequest sample_request() {
    ChatRequest req;
    req.purpose = Purpose::Align;
    req.messages = {{"system", "sys"}, {"user", "solve it"}, {"assistant", "<think>"}};
    req.params.temperature = 0.0;
    req.params.max_tokens = 128;
    return req;
}

std::string chat_body(const std::string& content) {
    nlohmann::ordered_json body;
    body["choices"] = {{{"message", {{"role", "assistant"}, {"content", content}}}}};
    return body.dump();
}

PromptLibrary library() {
    return PromptLibrary::load(testsupport::data_path("prompts"));
}

}  // namespace

TEST(CacheKey, StableAcrossSerializationRoundTrip) {
    ChatRequest req = sample_request();
    ChatRequest again = ChatRequest::from_json(req.to_json());
    EXPECT_EQ(req.cache_key(), again.cache_key());
    EXPECT_EQ(req.cache_key().size(), 64u);
}

TEST(CacheKey, SensitiveToMessagesAndParams) {
    ChatRequest a = sample_request();
    ChatRequest b = sample_request();
    b.messages[1].content += "!";
    EXPECT_NE(a.cache_key(), b.cache_key());
    ChatRequest c = sample_request();
    c.params.temperature = 0.7;
    EXPECT_NE(a.cache_key(), c.cache_key());
    // purpose is routing metadata, not cache identity
    ChatRequest d = sample_request();
    d.purpose = Purpose::Probe;
    EXPECT_EQ(a.cache_key(), d.cache_key());
}

TEST(ProbeRequest, DirectionSettingsPickLanguages) {
    PromptTemplateSet templates = PromptTemplateSet::builtin();
    std::string problem_en = "Janet's ducks lay 16 eggs per day.";
    std::string problem_sw = "Bata wa Janet hutaga mayai 16 kwa siku.";

    ChatRequest en_x =
        build_probe_request(ProbeSetting::EnX, problem_en, problem_sw, "sw", templates);
    ASSERT_EQ(en_x.messages.size(), 3u);
    EXPECT_EQ(en_x.messages[1].content, problem_en);
    EXPECT_EQ(en_x.messages[2].content.rfind("<think>\n Nitaanza kufikiri kwa Kiswahili.\n Kwanza,", 0),
              0u);

    ChatRequest en_en =
        build_probe_request(ProbeSetting::EnEn, problem_en, problem_sw, "sw", templates);
    EXPECT_EQ(en_en.messages[1].content, problem_en);
    EXPECT_NE(en_en.messages[0].content.find("English"), std::string::npos);

    ChatRequest x_en =
        build_probe_request(ProbeSetting::XEn, problem_en, problem_sw, "sw", templates);
    EXPECT_EQ(x_en.messages[1].content, problem_sw);
    EXPECT_NE(x_en.messages[2].content.find("English"), std::string::npos);

    ChatRequest x_x =
        build_probe_request(ProbeSetting::XX, problem_en, problem_sw, "sw", templates);
    EXPECT_EQ(x_x.messages[1].content, problem_sw);
}

TEST(ProbeRequest, MissingInputsRaise) {
    PromptTemplateSet templates = PromptTemplateSet::builtin();
    EXPECT_THROW(build_probe_request(ProbeSetting::EnX, "p", "px", "te", templates),
                 MissingTemplate);
    EXPECT_THROW(build_probe_request(ProbeSetting::XEn, "p", "", "sw", templates),
                 MissingProblemVariant);
}

TEST(DagRequest, FillsDelimitersAndBudgets) {
    ChatRequest req = build_dag_request(library(), "the reference derivation", "the tail",
                                        "\\boxed{63}", {30, 80, 4});
    ASSERT_EQ(req.messages.size(), 2u);
    const std::string& user = req.messages[1].content;
    EXPECT_NE(user.find("<<<TAIL\nthe tail\nTAIL>>>"), std::string::npos);
    EXPECT_NE(user.find("<<<FINAL_RESPONSE\n\\boxed{63}\nFINAL_RESPONSE>>>"), std::string::npos);
    EXPECT_NE(user.find("the reference derivation"), std::string::npos);
    EXPECT_NE(user.find("target_max_nodes: 30"), std::string::npos);
    EXPECT_NE(user.find("target_max_desc_chars_per_node: 80"), std::string::npos);
    EXPECT_NE(user.find("target_max_pre_nodes_per_node: 4"), std::string::npos);
    // literal JSON braces in the prompt body survive substitution
    EXPECT_NE(user.find("\"final_node_id\": \"nK\""), std::string::npos);
    EXPECT_THROW(build_dag_request(library(), "  ", "t", "f"), EmptyTrace);
}

TEST(AlignRequest, EmbedsDagAndTraceAndLanguage) {
    ReferenceDag dag = parse_dag(
        detail::read_file(testsupport::fixture_path("eggs.dag.json")));
    TraceDocument trace = TraceDocument::parse_line(
        detail::read_file(testsupport::fixture_path("eggs.trace.json")));
    ChatRequest req = build_align_request(library(), dag, trace, "sw");
    const std::string& user = req.messages[1].content;
    EXPECT_NE(user.find("Target trace language: sw"), std::string::npos);
    EXPECT_NE(user.find("<<<TRACE"), std::string::npos);
    EXPECT_NE(user.find(trace.text()), std::string::npos);

    // the embedded DAG serialization round-trips through parse_dag
    size_t start = user.find("[Reference Mathematical DAG]\n");
    ASSERT_NE(start, std::string::npos);
    start += std::string("[Reference Mathematical DAG]\n").size();
    size_t end = user.find("\n\n[Target Reasoning Trace]");
    ASSERT_NE(end, std::string::npos);
    ReferenceDag parsed = parse_dag(user.substr(start, end - start));
    EXPECT_EQ(to_json(parsed).dump(), to_json(dag).dump());
}

TEST(ScaffoldRequest, PrefillOpensExecutionState) {
    ChatRequest req = build_scaffold_request(library(), "How many eggs remain?", "Swahili");
    ASSERT_EQ(req.messages.size(), 3u);
    EXPECT_EQ(req.messages[2].content, "<think>\n<execution_state>\nKnown:\n-");
    EXPECT_NE(req.messages[0].content.find("entirely in Swahili"), std::string::npos);
    EXPECT_DOUBLE_EQ(req.params.temperature, 0.2);
    ASSERT_EQ(req.params.stop_markers.size(), 1u);
    EXPECT_EQ(req.params.stop_markers[0], "</execution_state>");
}

TEST(Replay, MissingEntryIsCacheMiss) {
    testsupport::TempDir dir;
    GatewayConfig cfg;
    cfg.cache_dir = dir.str();
    Gateway gateway(cfg);
    EXPECT_THROW(gateway.complete(sample_request(), GatewayMode::Replay), CacheMiss);
}

TEST(Replay, SeededCacheReturnsIdenticalBytes) {
    testsupport::TempDir dir;
    GatewayConfig cfg;
    cfg.cache_dir = dir.str();
    Gateway gateway(cfg);
    ChatRequest req = sample_request();
    std::string body = chat_body("the cached alignment");
    gateway.cache().put(req.cache_key(), body);

    ChatResponse resp = gateway.complete(req, GatewayMode::Replay);
    EXPECT_EQ(resp.raw_body, body);
    EXPECT_EQ(resp.content, "the cached alignment");
    EXPECT_TRUE(resp.from_cache);
}

TEST(LiveTransport, TransientFailureThenSuccessWithRecord) {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        int n = ++hits;
        nlohmann::json body = nlohmann::json::parse(req.body);
        EXPECT_EQ(body["messages"].size(), 3u);
        if (n == 1) {
            res.status = 503;
            res.set_content("overloaded", "text/plain");
            return;
        }
        res.set_content(chat_body("live content"), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    testsupport::TempDir dir;
    GatewayConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.cache_dir = dir.str();
    cfg.retry_backoff_ms = 0;
    Gateway gateway(cfg);

    ChatRequest req = sample_request();
    ChatResponse resp = gateway.complete(req, GatewayMode::Record);
    EXPECT_EQ(resp.content, "live content");
    EXPECT_EQ(resp.retries_used, 1);
    EXPECT_EQ(hits.load(), 2);

    // the recorded body now replays byte-identically with no server hit
    server.stop();
    server_thread.join();
    ChatResponse replayed = gateway.complete(req, GatewayMode::Replay);
    EXPECT_EQ(replayed.raw_body, resp.raw_body);
    EXPECT_EQ(hits.load(), 2);
}

TEST(LiveTransport, NonTransientStatusThrowsProviderError) {
    httplib::Server server;
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        res.status = 401;
        res.set_content("bad credential", "text/plain");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    testsupport::TempDir dir;
    GatewayConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.cache_dir = dir.str();
    Gateway gateway(cfg);
    try {
        gateway.complete(sample_request(), GatewayMode::Live);
        FAIL() << "expected ProviderError";
    } catch (const ProviderError& e) {
        EXPECT_EQ(e.status, 401);
    }
    server.stop();
    server_thread.join();
}

TEST(GatewayGenerator, AdaptsPromptPartsToMessages) {
    testsupport::TempDir dir;
    GatewayConfig cfg;
    cfg.cache_dir = dir.str();
    Gateway gateway(cfg);

    PromptParts prompt{"sys", "user msg", "<think>"};
    GenerationParams params = GenerationParams::reasoning(2048, true);
    ChatRequest expected;
    expected.messages = {{"system", "sys"}, {"user", "user msg"}, {"assistant", "<think>"}};
    expected.params = params;
    gateway.cache().put(expected.cache_key(), chat_body("generated continuation"));

    GatewayGenerator generator(gateway, GatewayMode::Replay);
    GenerationResult result = generator.generate(prompt, params);
    EXPECT_EQ(result.text, "generated continuation");
    EXPECT_EQ(result.token_count, 2u);
}

TEST(TemplateSet, LoadFromDataFileAndMergeWithBuiltins) {
    PromptTemplateSet set = PromptTemplateSet::load(testsupport::data_path("templates.json"));
    EXPECT_TRUE(set.has("en"));
    EXPECT_TRUE(set.has("sw"));
    EXPECT_EQ(set.get("sw").prefix.rfind("<think>\n Nitaanza", 0), 0u);
    EXPECT_THROW(set.get("te"), MissingTemplate);
}

TEST(Substitute, OnlyKnownSlotsReplaced) {
    std::string text = "a {x} b {unknown} c {x}";
    EXPECT_EQ(substitute(text, {{"x", "1"}}), "a 1 b {unknown} c 1");
}
