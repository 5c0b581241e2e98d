// Acceptance suite: one test per criterion, each printing a pass/fail line.

#include <gtest/gtest.h>

#include <chrono>
#include <random>

#include "datg/datg.hpp"
#include "support/fixtures.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "support/paths.hpp"
#include "support/run_cli.hpp"

using namespace datg;
using testsupport::fixture_path;

namespace {

struct CriterionLine {
    int number;
    std::string name;
    ~CriterionLine() {
        bool failed = ::testing::Test::HasFailure();
        std::printf("[CRITERION %d] %s: %s\n", number, name.c_str(),
                    failed ? "FAIL" : "PASS");
        std::fflush(stdout);
    }
};

ScoreCard card(double car, double pmf, double har) {
    ScoreCard c;
    c.car = car;
    c.pmf = pmf;
    c.har = har;
    return c;
}

std::string chat_body(const std::string& content) {
    nlohmann::ordered_json body;
    body["choices"] = {{{"message", {{"role", "assistant"}, {"content", content}}}}};
    return body.dump();
}

}  // namespace

// 1. Scorer oracle equivalence: 1,000 randomized DAGs (<= 8 nodes, <= 12
//    edges) with sampled status/location assignments; CAR, PMF and HAR equal
//    an independent brute-force reimplementation exactly, in under 10 s.
TEST(Acceptance, C1_ScorerOracleEquivalence) {
    CriterionLine line{1, "scorer oracle equivalence (1000 random DAGs, exact)"};
    auto started = std::chrono::steady_clock::now();
    std::mt19937 rng(101);
    const std::string span_pool[] = {"a = 1", "a  =  1", "b = 2", "c = 3", "delta", "e = 5"};
    std::uniform_int_distribution<size_t> span_pick(0, std::size(span_pool) - 1);
    std::uniform_int_distribution<size_t> span_count(0, 4);

    for (int round = 0; round < 1000; ++round) {
        ReferenceDag dag = testsupport::random_dag(rng, 2, 8, 12);
        std::vector<ResolvedStatus> resolved = testsupport::random_statuses(dag, rng);
        ASSERT_EQ(score_car(dag, resolved), oracles::car_brute_force(dag, resolved));
        ASSERT_EQ(score_pmf(dag, resolved).pmf, oracles::pmf_brute_force(dag, resolved));

        // HAR over random located-event and harmful span multisets
        std::vector<std::string> located, harmful;
        size_t nl = span_count(rng), nh = std::min<size_t>(2, span_count(rng));
        for (size_t i = 0; i < nl; ++i) located.push_back(span_pool[span_pick(rng)]);
        for (size_t i = 0; i < nh; ++i) harmful.push_back(span_pool[span_pick(rng)]);
        EffectiveActionSet actions;
        std::set<std::string> judge_seen, harm_seen;
        for (const auto& s : located) {
            std::string k = detail::normalize_ws(s);
            if (!k.empty() && judge_seen.insert(k).second) actions.judgeable.push_back(k);
        }
        for (const auto& s : harmful) {
            std::string k = detail::normalize_ws(s);
            if (k.empty()) continue;
            if (judge_seen.insert(k).second) actions.judgeable.push_back(k);
            if (harm_seen.insert(k).second) actions.harmful.push_back(k);
        }
        ASSERT_EQ(score_har(actions), oracles::har_brute_force(located, harmful));
    }
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - started)
                       .count();
    EXPECT_LT(elapsed, 10000) << "runtime budget exceeded: " << elapsed << " ms";
}

// 2. PMF predicate table: hand-built endpoint/order/block cases produce edge
//    verdicts exactly per the dependency-compatibility rule.
TEST(Acceptance, C2_PmfPredicateTable) {
    CriterionLine line{2, "PMF edge predicate table"};
    ReferenceDag two = parse_dag(R"({
      "final_node_id": "n2",
      "nodes": [
        {"node_id": "n1", "anchor": "a", "parents": []},
        {"node_id": "n2", "anchor": "b", "parents": ["n1"]}
      ]
    })");
    auto commit = [](const std::string& id, double progress, int block) {
        ResolvedStatus r;
        r.node_id = id;
        r.final_status = FinalStatus::Commit;
        SpanLocation loc;
        loc.commit_progress = progress;
        loc.block_id = block;
        r.commit_location = loc;
        return r;
    };
    auto missing = [](const std::string& id) {
        ResolvedStatus r;
        r.node_id = id;
        r.final_status = FinalStatus::Missing;
        return r;
    };

    // both committed, parent no later than child: ordered
    {
        auto result = score_pmf(two, std::vector<ResolvedStatus>{commit("n1", 0.1, 0),
                                                                 commit("n2", 0.8, 2)});
        ASSERT_TRUE(result.verdicts[0].ordered);
        ASSERT_EQ(result.pmf, 1.0);
    }
    // both committed, disordered, different blocks: not ordered
    {
        auto result = score_pmf(two, std::vector<ResolvedStatus>{commit("n1", 0.8, 2),
                                                                 commit("n2", 0.1, 0)});
        ASSERT_FALSE(result.verdicts[0].ordered);
        ASSERT_EQ(result.verdicts[0].reason, EdgeReason::Disordered);
        ASSERT_EQ(result.pmf, 0.0);
    }
    // both committed, disordered, same block: the concession orders it
    {
        auto result = score_pmf(two, std::vector<ResolvedStatus>{commit("n1", 0.8, 1),
                                                                 commit("n2", 0.1, 1)});
        ASSERT_TRUE(result.verdicts[0].ordered);
        ASSERT_EQ(result.verdicts[0].reason, EdgeReason::OrderedSameBlock);
        ASSERT_EQ(result.pmf, 1.0);
    }
    // one endpoint missing: not ordered
    {
        auto result = score_pmf(
            two, std::vector<ResolvedStatus>{missing("n1"), commit("n2", 0.9, 1)});
        ASSERT_FALSE(result.verdicts[0].ordered);
        ASSERT_EQ(result.verdicts[0].reason, EdgeReason::ParentNotCommitted);
        ASSERT_EQ(result.pmf, 0.0);
    }
}

// 3. Lexicographic selection matches a total-order sort oracle on 10,000
//    random score triples, including tie stability.
TEST(Acceptance, C3_LexicographicSelection) {
    CriterionLine line{3, "lexicographic best-reference selection (10k random)"};
    std::mt19937 rng(103);
    std::uniform_int_distribution<int> coarse(0, 3);  // coarse grid: many ties
    std::uniform_int_distribution<size_t> count(1, 5);
    for (int round = 0; round < 10000; ++round) {
        std::vector<ScoreCard> cards;
        size_t n = count(rng);
        for (size_t i = 0; i < n; ++i)
            cards.push_back(card(coarse(rng) / 3.0, coarse(rng) / 3.0, coarse(rng) / 3.0));
        ASSERT_EQ(select_best_reference(cards), oracles::select_brute_force(cards));
    }
}

// 4. Detector arithmetic: exact rep/TTR on worked fixtures, exhaustive suffix
//    motifs for unit lengths 4-32 with 3-5 repeats, and trigger logic that
//    honors the trigger conjunction with checkpoint C = B/4 (4096 at 16384).
TEST(Acceptance, C4_DetectorArithmetic) {
    CriterionLine line{4, "detector arithmetic, motifs, trigger truth table"};
    // worked fixtures, exact
    std::vector<std::string> ababab{"a", "b", "a", "b", "a", "b"};
    ASSERT_EQ(rep_rate(ababab, 2), 0.6);
    ASSERT_EQ(rep_rate(std::vector<std::string>(256, "x"), 16), 240.0 / 241.0);
    ASSERT_EQ(type_token_ratio(std::vector<std::string>(256, "x")), 1.0 / 256.0);
    std::vector<std::string> distinct;
    for (int i = 0; i < 256; ++i) distinct.push_back("t" + std::to_string(i));
    ASSERT_EQ(type_token_ratio(distinct), 1.0);

    // exhaustive motif coverage over random alphabets
    std::mt19937 rng(104);
    std::uniform_int_distribution<int> alpha(0, 11);
    for (size_t unit = 4; unit <= 32; ++unit) {
        for (size_t repeats = 3; repeats <= 5; ++repeats) {
            std::vector<std::string> u;
            for (size_t i = 0; i < unit; ++i)
                u.push_back("tok" + std::to_string(i) + "v" + std::to_string(alpha(rng)));
            std::vector<std::string> tokens{"opening", "words"};
            for (size_t r = 0; r < repeats; ++r) tokens.insert(tokens.end(), u.begin(), u.end());
            auto hit = detect_suffix_motif(tokens);
            ASSERT_TRUE(hit.has_value()) << "unit " << unit << " repeats " << repeats;
            ASSERT_GE(hit->repeats, 3u);
            for (size_t k = 0; k < hit->unit_len; ++k)
                ASSERT_EQ(tokens[tokens.size() - hit->unit_len + k],
                          tokens[tokens.size() - 2 * hit->unit_len + k]);
        }
        // one repeat short of the threshold never fires for this unit alone
        std::vector<std::string> u;
        for (size_t i = 0; i < unit; ++i) u.push_back("q" + std::to_string(i));
        std::vector<std::string> twice{"head"};
        for (int r = 0; r < 2; ++r) twice.insert(twice.end(), u.begin(), u.end());
        ASSERT_FALSE(detect_suffix_motif(twice).has_value()) << "unit " << unit;
    }

    // checkpoint constant
    ASSERT_EQ(should_abort(std::string("tiny"), 16384).checkpoint_tokens, 4096u);

    // trigger conjunction over the full truth table
    DetectorConfig cfg;
    for (double rep16 : {0.70, 0.55, 0.10})
        for (double rep32 : {0.35, 0.05})
            for (bool motif_present : {true, false})
                for (double ttr : {0.10, 0.50})
                    for (bool mp : {true, false})
                        for (bool boxed : {true, false})
                            for (size_t tokens : {size_t(4096), size_t(2048)}) {
                                std::optional<MotifHit> motif;
                                if (motif_present) motif = MotifHit{4, 3};
                                bool surface =
                                    rep16 >= 0.65 || rep32 >= 0.30 || motif_present ||
                                    (rep16 >= 0.50 && ttr <= 0.16);
                                bool expected = surface && !mp && !boxed &&
                                                double(tokens) >= 0.8 * 4096.0;
                                auto [triggered, reason] = decide_trigger(
                                    rep16, rep32, ttr, motif, mp, boxed, tokens, 4096, cfg);
                                ASSERT_EQ(triggered, expected);
                            }
}

// 5. Retry state machines: the worked loop example shape (abort trial 1,
//    accept trial 2), a byte-identical scaffold across five formula trials,
//    no answer leakage from any sanitized scaffold, and max-5/forced-accept.
TEST(Acceptance, C5_RetryStateMachines) {
    CriterionLine line{5, "retry state machines and scaffold hygiene"};
    auto text_of = [](int repeats) {
        std::string text = "Kwanza tunahesabu mayai yanayobaki kila siku.\n16 - 3 - 4 = 9.\n";
        for (int i = 0; i < repeats; ++i) text += "Mayai yaliyobaki ni 9. ";
        return text;
    };
    std::string healthy =
        "Kwanza tunahesabu:\n16 - 3 - 4 = 9.\nKwa siku 7:\n9 × 7 = 63.\n</think>\n\\boxed{63}";
    auto scripted = [](const std::string& text) {
        return GenerationResult{text, default_tokenizer(text).size()};
    };
    PromptParts prompt{"sys", "problem", "<think>"};
    constexpr size_t budget = 2048;

    // worked example shape: abort trial 1, accept trial 2
    {
        ScriptedGenerator gen({scripted(text_of(150)), scripted(healthy)});
        RetrySession session = run_loop_retry(prompt, gen, budget);
        ASSERT_EQ(session.trials.size(), 2u);
        ASSERT_TRUE(session.trials[0].aborted);
        ASSERT_FALSE(session.forced_accept);
        ASSERT_EQ(extract_boxed(session.final_text), "63");
    }
    // max five trials, trigger on the last marks an unhealthy forced accept
    {
        std::vector<GenerationResult> responses(7, scripted(text_of(150)));
        ScriptedGenerator gen(responses);
        RetrySession session = run_loop_retry(prompt, gen, budget);
        ASSERT_EQ(session.trials.size(), 5u);
        ASSERT_TRUE(session.forced_accept);
        ASSERT_EQ(gen.consumed(), 5u);
    }
    // formula: scaffold generated once, byte-identical across five trials
    {
        class Recording final : public Generator {
        public:
            Recording(std::vector<GenerationResult> r) : inner_(std::move(r)) {}
            GenerationResult generate(const PromptParts& p, const GenerationParams& g) override {
                prompts.push_back(p);
                return inner_.generate(p, g);
            }
            std::vector<PromptParts> prompts;

        private:
            ScriptedGenerator inner_;
        };
        std::vector<GenerationResult> responses{
            scripted("Known:\n- eggs_per_day = 16\n\nPlan:\n- remaining = 16 - 3 - 4 = ?\n")};
        for (int i = 0; i < 5; ++i) responses.push_back(scripted(text_of(150)));
        Recording gen(std::move(responses));
        RetrySession session = run_formula_retry(prompt, prompt, gen, budget);
        ASSERT_EQ(session.trials.size(), 5u);
        ASSERT_TRUE(session.forced_accept);
        ASSERT_TRUE(session.scaffold.has_value());
        for (size_t i = 2; i < gen.prompts.size(); ++i)
            ASSERT_EQ(gen.prompts[i].assistant_prefix, gen.prompts[1].assistant_prefix);
    }
    // property: sanitized scaffolds never leak answers
    {
        std::mt19937 rng(105);
        const std::string fragments[] = {
            "Known:",      "Plan:",          "- n = 4",
            "- m = n * 2 = 8", "- k = m / 2 = ?", "Final: 8",
            "Answer: nine",    "\\boxed{8}",      "- p = q + r",
        };
        std::uniform_int_distribution<size_t> pick(0, std::size(fragments) - 1), len(2, 10);
        for (int round = 0; round < 500; ++round) {
            std::string raw;
            size_t n = len(rng);
            for (size_t i = 0; i < n; ++i) raw += fragments[pick(rng)] + "\n";
            try {
                SanitizedScaffold scaffold = sanitize_scaffold(raw);
                ASSERT_EQ(scaffold.text.find("\\boxed"), std::string::npos);
                for (const std::string& l : detail::split_lines(scaffold.text)) {
                    std::string t = detail::to_lower_ascii(detail::trim(l));
                    ASSERT_FALSE(t.rfind("final:", 0) == 0);
                    ASSERT_FALSE(t.rfind("answer:", 0) == 0);
                    ASSERT_FALSE(t.rfind("answer =", 0) == 0);
                }
            } catch (const ScaffoldRejected&) {
            }
        }
    }
}

// 6. Cost accounting: Base-row properties by construction; synthetic sessions
//    reproduce hand-computed totals, retry shares, and trial means exactly.
TEST(Acceptance, C6_CostAccounting) {
    CriterionLine line{6, "cost accounting (base row, hand-computed synthetics)"};
    auto scripted = [](const std::string& text) {
        return GenerationResult{text, default_tokenizer(text).size()};
    };
    PromptParts prompt{"s", "u", "a"};

    // Base: never retries, one trial per example, by construction
    std::vector<RetrySession> base_sessions;
    ScriptedGenerator gen({scripted("short answer \\boxed{1}"),
                           scripted("short answer \\boxed{2}"),
                           scripted("short answer \\boxed{3}")});
    for (int i = 0; i < 3; ++i) base_sessions.push_back(run_base(prompt, gen, 4096));
    CostReport base = account_costs(base_sessions);
    ASSERT_EQ(base.retry_rate, 0.0);
    ASSERT_EQ(base.mean_trials, 1.0);

    // synthetic sessions: trials 1,1,2,4 with 100 tokens each
    auto synth = [](size_t trials, size_t scaffold_tokens) {
        RetrySession s;
        s.scaffold_tokens = scaffold_tokens;
        for (size_t i = 0; i < trials; ++i) {
            Trial t;
            t.emitted_tokens = 100;
            s.trials.push_back(t);
        }
        return s;
    };
    std::vector<RetrySession> sessions{synth(1, 0), synth(1, 0), synth(2, 0), synth(4, 0)};
    CostReport mixed = account_costs(sessions);
    ASSERT_EQ(mixed.retry_rate, 0.5);
    ASSERT_EQ(mixed.mean_trials, 2.0);
    ASSERT_EQ(mixed.decoded_tokens_total, 800u);

    // scaffold tokens counted once, on top of trial tokens
    std::vector<RetrySession> formula{synth(1, 300)};
    formula[0].trials[0].emitted_tokens = 1000;
    ASSERT_EQ(account_costs(formula).decoded_tokens_total, 1300u);
}

// 7. Aggregation fidelity: the appendix tables as fixtures reproduce the
//    quoted group averages, the per-cell metric triples, the correctness-
//    stratified rows to printed precision; Wilson matches the closed form.
TEST(Acceptance, C7_AggregationFidelity) {
    CriterionLine line{7, "aggregation fidelity against table fixtures"};
    // quoted group averages
    std::vector<Row> accuracy_rows = testsupport::direction_accuracy_rows();
    Table groups =
        resource_group_average(accuracy_rows, "accuracy", {"model", "difficulty", "direction"});
    auto group_value = [&](const std::string& model, const std::string& difficulty,
                           const std::string& direction, const std::string& group) {
        for (const auto& r : groups.rows)
            if (r[0] == model && r[1] == difficulty && r[2] == direction && r[3] == group)
                return r[4];
        return std::string("missing");
    };
    ASSERT_EQ(group_value("4B", "medium", "en-x", "LRL"), "2.0");
    ASSERT_EQ(group_value("4B", "medium", "x-en", "LRL"), "29.2");
    ASSERT_EQ(group_value("8B", "high", "x-en", "LRL"), "33.2");
    ASSERT_EQ(group_value("8B", "high", "en-x", "LRL"), "3.2");
    ASSERT_EQ(group_value("4B", "low", "en-x", "LRL"), "62.4");
    ASSERT_EQ(group_value("8B", "medium", "en-x", "LRL"), "13.2");
    ASSERT_EQ(group_value("8B", "low", "en-x", "LRL"), "68.0");

    // per-cell triples at two decimals
    Table full = testsupport::load_csv_fixture("tables/datg_full.csv");
    auto triple = [&](const std::string& pair, const std::string& difficulty,
                      const std::string& metric) {
        size_t c0 = testsupport::column_index(full, metric + "_1.7B");
        for (const auto& r : full.rows)
            if (r[0] == pair && r[1] == difficulty)
                return format_fraction(std::stod(r[c0]), 2) + "/" +
                       format_fraction(std::stod(r[c0 + 1]), 2) + "/" +
                       format_fraction(std::stod(r[c0 + 2]), 2);
        return std::string("missing");
    };
    ASSERT_EQ(triple("en-en", "low", "car"), ".94/.98/.96");
    ASSERT_EQ(triple("en-sw", "low", "car"), ".38/.59/.69");
    ASSERT_EQ(triple("en-te", "high", "har"), ".75/.56/.43");
    ASSERT_EQ(triple("en-th", "medium", "pmf"), ".29/.55/.54");

    // correctness-stratified rows, pooled per difficulty and over all
    Table strat = stratify_correctness(testsupport::correctness_rows());
    auto strat_row = [&](const std::string& difficulty) {
        for (const auto& r : strat.rows)
            if (r[0] == difficulty) return r;
        return std::vector<std::string>{};
    };
    ASSERT_EQ(strat_row("All"),
              (std::vector<std::string>{"All", ".909/.356", ".849/.216", ".039/.316"}));
    ASSERT_EQ(strat_row("low"),
              (std::vector<std::string>{"low", ".957/.560", ".930/.397", ".029/.310"}));
    ASSERT_EQ(strat_row("medium"),
              (std::vector<std::string>{"medium", ".857/.402", ".749/.259", ".045/.294"}));
    ASSERT_EQ(strat_row("high"),
              (std::vector<std::string>{"high", ".788/.260", ".666/.130", ".073/.335"}));

    // reference-diversity table layout: difficulty rows plus overall, with
    // mean ± sd cells for the three metrics
    std::vector<DiversityObservation> matrix{
        {"low", {card(1.0, 1.0, 0.0)}},
        {"medium", {card(0.9, 0.9, 0.0)}},
        {"high", {card(0.9, 0.8, 0.0), card(0.5, 0.2, 0.1)}},
    };
    auto diversity = reference_diversity(matrix);
    ASSERT_EQ(diversity.size(), 4u);
    ASSERT_EQ(diversity[0].difficulty, "low");
    ASSERT_EQ(diversity[3].difficulty, "overall");
    ASSERT_EQ(diversity[3].n, 3u);

    // Wilson interval against the closed-form oracle at 1e-3
    auto [lo, hi] = wilson_interval(50, 100, 1.96);
    ASSERT_NEAR(lo, 0.404, 1e-3);
    ASSERT_NEAR(hi, 0.596, 1e-3);
    std::mt19937 rng(107);
    std::uniform_int_distribution<size_t> n_pick(1, 400);
    for (int i = 0; i < 500; ++i) {
        size_t n = n_pick(rng);
        std::uniform_int_distribution<size_t> s_pick(0, n);
        size_t s = s_pick(rng);
        auto [l, h] = wilson_interval(s, n, 1.96);
        auto [lr, hr] = oracles::wilson_closed_form(double(s), double(n), 1.96);
        ASSERT_NEAR(l, lr, 1e-3);
        ASSERT_NEAR(h, hr, 1e-3);
    }
}

// 8. Compliance: stripping fixtures exact, the alias matrix, and the wiring
//    guarantee that compliance output cannot feed the scorer.
TEST(Acceptance, C8_Compliance) {
    CriterionLine line{8, "compliance stripping, aliases, scoring isolation"};
    ASSERT_EQ(strip_math_spans("Tunahesabu $16-3-4=9$ mayai"), "Tunahesabu  mayai");
    ASSERT_EQ(strip_math_spans("$$a$$ then \\(b\\) then $c$"), " then  then ");
    StripResult lone = strip_math_spans_ex("price is 5$ total");
    ASSERT_EQ(lone.text, "price is 5$ total");
    ASSERT_EQ(lone.unterminated, 1);

    class Fixed final : public LanguageDetector {
    public:
        explicit Fixed(std::vector<std::pair<std::string, double>> r) : r_(std::move(r)) {}
        std::vector<std::pair<std::string, double>> detect(const std::string&) const override {
            return r_;
        }

    private:
        std::vector<std::pair<std::string, double>> r_;
    };
    TraceDocument trace("t", "some reasoning text");
    auto consistent = [&](const std::string& requested,
                          std::vector<std::pair<std::string, double>> detected) {
        Fixed detector(std::move(detected));
        return check_compliance(trace, requested, detector).consistent;
    };
    ASSERT_TRUE(consistent("ms", {{"id", 0.99}}));
    ASSERT_TRUE(consistent("id", {{"ms", 0.99}}));
    ASSERT_TRUE(consistent("zh", {{"zh-cn", 0.99}}));
    ASSERT_FALSE(consistent("en", {{"en", 0.6}, {"fr", 0.4}}));
    ASSERT_FALSE(consistent("sw", {{"en", 0.99}}));

    // wiring: score cards are bitwise independent of compliance outcomes
    ReferenceDag dag = parse_dag(detail::read_file(fixture_path("eggs.dag.json")));
    TraceDocument eggs =
        TraceDocument::parse_line(detail::read_file(fixture_path("eggs.trace.json")));
    AlignmentRecord alignment =
        parse_alignment(detail::read_file(fixture_path("eggs.alignment.json")), dag);
    std::string baseline = to_json(score_trace(eggs, dag, alignment)).dump();
    for (const char* requested : {"sw", "en", "te"}) {
        Fixed detector({{"en", 0.9}});
        (void)check_compliance(eggs, requested, detector);
        ASSERT_EQ(to_json(score_trace(eggs, dag, alignment)).dump(), baseline);
    }
}

// 9. Offline end-to-end: with the gateway in replay mode over shipped
//    fixtures and an unroutable endpoint, validate-dag -> score ->
//    select-reference -> report completes byte-deterministically across runs
//    and thread counts.
TEST(Acceptance, C9_OfflineEndToEnd) {
    CriterionLine line{9, "offline replay pipeline, byte-deterministic"};
    testsupport::TempDir dir;

    // seed the content-addressed cache from the shipped alignment fixtures
    GatewayConfig gateway_cfg;
    gateway_cfg.cache_dir = dir.file("cache");
    // unroutable endpoint: any live attempt would fail loudly
    gateway_cfg.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    Gateway gateway(gateway_cfg);
    PromptLibrary prompts = PromptLibrary::load(testsupport::data_path("prompts"));

    struct Pair {
        const char* trace_id;
        const char* dag_file;
        const char* alignment_file;
    };
    const Pair pairs[] = {
        {"t1", "e2e/ref0.dag.json", "e2e/align.t1.ref0.json"},
        {"t1", "e2e/ref1.dag.json", "e2e/align.t1.ref1.json"},
        {"t2", "e2e/ref0.dag.json", "e2e/align.t2.ref0.json"},
        {"t2", "e2e/ref1.dag.json", "e2e/align.t2.ref1.json"},
    };
    auto traces = detail::read_file(fixture_path("e2e/traces.jsonl"));
    for (const Pair& p : pairs) {
        ReferenceDag dag = parse_dag(detail::read_file(fixture_path(p.dag_file)));
        TraceDocument trace("", "");
        std::istringstream in(traces);
        std::string trace_line;
        while (std::getline(in, trace_line)) {
            TraceDocument candidate = TraceDocument::parse_line(trace_line);
            if (candidate.trace_id() == p.trace_id) trace = candidate;
        }
        ASSERT_EQ(trace.trace_id(), p.trace_id);
        ChatRequest request =
            build_align_request(prompts, dag, trace, trace.meta_value("language", "en"));
        gateway.cache().put(request.cache_key(),
                            chat_body(detail::read_file(fixture_path(p.alignment_file))));
    }

    // validate-dag
    auto validate = testsupport::run_cli(
        {"validate-dag", fixture_path("e2e/ref0.dag.json"), fixture_path("e2e/ref1.dag.json")});
    ASSERT_EQ(validate.exit_code, 0) << validate.output;

    // score (gateway replay) -> select-reference -> report, twice per jobs
    auto pipeline = [&](const std::string& tag, const std::string& jobs) {
        std::string cards = dir.file("cards_" + tag + ".jsonl");
        auto score = testsupport::run_cli(
            {"score", "--manifest", fixture_path("e2e/manifest.jsonl"), "--gateway-mode",
             "replay", "--cache-dir", gateway_cfg.cache_dir, "--endpoint",
             gateway_cfg.endpoint, "--prompts", testsupport::data_path("prompts"), "--jobs",
             jobs, "--out", cards});
        EXPECT_EQ(score.exit_code, 0) << score.output;
        std::string rows = dir.file("rows_" + tag + ".jsonl");
        auto select = testsupport::run_cli({"select-reference", "--cards", cards, "--out", rows});
        EXPECT_EQ(select.exit_code, 0) << select.output;
        auto report = testsupport::run_cli({"report", "--input", rows, "--group-by",
                                            "language,difficulty", "--metrics",
                                            "car,pmf,har,accuracy", "--format", "csv"});
        EXPECT_EQ(report.exit_code, 0) << report.output;
        return detail::read_file(cards) + "|" + detail::read_file(rows) + "|" + report.output;
    };
    std::string first = pipeline("a", "1");
    std::string second = pipeline("b", "1");
    std::string threaded = pipeline("c", "4");
    std::string threaded_again = pipeline("d", "4");
    ASSERT_FALSE(first.empty());
    ASSERT_EQ(first, second);
    ASSERT_EQ(first, threaded);
    ASSERT_EQ(threaded, threaded_again);

    // the selected references and the grouped report hold the expected values
    ASSERT_NE(first.find("\"trace_id\":\"t1\",\"dag_ref\":\"e2e.ref0\""), std::string::npos);
    ASSERT_NE(first.find("\"trace_id\":\"t2\",\"dag_ref\":\"e2e.ref1\""), std::string::npos);
    ASSERT_NE(first.find("sw,low,1.000,1.000,.000,1.000,2"), std::string::npos);
}
