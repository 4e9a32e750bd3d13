#include "doctest.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "alphamine/mining.hpp"
#include "alphamine/synthetic.hpp"

using namespace alphamine;
namespace fs = std::filesystem;

namespace {

const char* kHypothesis =
    "Observations: Names whose trading volume stays high tend to outperform.\n"
    "Knowledge: Volume reflects attention.\n"
    "Justification: The moving average of log volume keeps the persistent part.\n"
    "Specification: average log volume over 3 days.\n";

Panel small_panel() {
    SyntheticSpec spec;
    spec.symbols = 60;
    spec.days = 400;
    return make_synthetic_panel(spec);
}

SplitSpec split_60_20_20(const Panel& p) {
    const std::size_t n = p.n_dates();
    const Date a = p.dates[0], b = p.dates[n * 6 / 10], c = p.dates[n * 8 / 10];
    const Date end = p.dates.back() + std::chrono::days(1);
    return {{a, b}, {b, c}, {c, end}};
}

MiningConfig small_config() {
    MiningConfig cfg;
    cfg.rounds = 3;
    cfg.candidates = 3;
    cfg.refine_budget = 2;
    cfg.format_retries = 1;
    cfg.warmup = 30;
    cfg.strategy.k = 10;
    cfg.strategy.n_drop = 2;
    return cfg;
}

MiningData& shared_data() {
    static MiningData d = [] {
        Panel p = small_panel();
        const SplitSpec s = split_60_20_20(p);
        return prepare_mining_data(std::move(p), s, 30);
    }();
    return d;
}

MiningData fresh_data() {
    Panel p = small_panel();
    const SplitSpec s = split_60_20_20(p);
    return prepare_mining_data(std::move(p), s, 30);
}

StubProvider fixture_stub(std::uint64_t seed = 11) {
    return StubProvider::from_file(fs::path(ALPHAMINE_DATA_DIR) / "stub_provider.json", seed);
}

AlphaZoo data_zoo() { return load_zoo(fs::path(ALPHAMINE_DATA_DIR) / "zoo_alpha101.txt"); }

std::string factor_reply(const std::string& desc, const std::string& expr) {
    return "Description: " + desc + "\nExpression: " + expr + "\n";
}

Hypothesis seed_hypothesis() {
    Hypothesis h = parse_hypothesis(kHypothesis);
    h.id = "h1";
    return h;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("alphamine_test_" + name);
    fs::remove_all(p);
    return p;
}

} // namespace

TEST_CASE("factor replies tolerate markdown and reject missing fields") {
    auto [d, e] = parse_factor_reply("**Description:** smoothed volume\n- Expression: `SMA($volume, 5)`\n");
    CHECK(d == "smoothed volume");
    CHECK(e == "SMA($volume, 5)");
    CHECK_THROWS_AS(parse_factor_reply("Expression: $close"), FormatError);
    CHECK_THROWS_AS(parse_factor_reply("nothing useful"), FormatError);
}

TEST_CASE("mining config is strict") {
    const auto cfg = mining_config_from_json(nlohmann::json::parse(
        R"({"rounds": 2, "candidates": 4, "strategy": {"k": 5, "n_drop": 1}, "regularizer": {"lambda": 0.1}})"));
    CHECK(cfg.rounds == 2);
    CHECK(cfg.candidates == 4);
    CHECK(cfg.strategy.k == 5);
    CHECK(cfg.reg.lambda == doctest::Approx(0.1));
    CHECK_THROWS_AS(mining_config_from_json(nlohmann::json::parse(R"({"roundz": 2})")), ConfigError);
    CHECK_THROWS_AS(mining_config_from_json(nlohmann::json::parse(R"({"rounds": 0})")), ConfigError);
    CHECK_THROWS_AS(mining_config_from_json(nlohmann::json::parse(R"({"rounds": "two"})")), ConfigError);
    const auto round_trip = mining_config_from_json(to_json(cfg));
    CHECK(to_json(round_trip) == to_json(cfg));
}

TEST_CASE("fixture hypothesis is used and the next round sees the feedback") {
    StubProvider stub = fixture_stub();
    std::vector<ProviderRequest> seen;
    FunctionProvider spy([&](const ProviderRequest& r) {
        seen.push_back(r);
        return stub.complete(r).text;
    });
    StubJudge judge;
    MiningConfig cfg = small_config();
    cfg.rounds = 2;
    MiningData data = fresh_data();
    const TrialSummary s = run_trial("volume attention", cfg, data, spy, judge, data_zoo());

    REQUIRE(s.rounds.size() == 2);
    REQUIRE(s.rounds[0].hypothesis);
    CHECK(s.rounds[0].hypothesis->observations.find("trading volume stays high") != std::string::npos);
    CHECK(s.rounds[0].hypothesis->parent_id.empty());
    REQUIRE(s.rounds[1].hypothesis);
    CHECK(s.rounds[1].hypothesis->parent_id == "h1");

    const auto it = std::find_if(seen.begin(), seen.end(), [](const ProviderRequest& r) {
        return r.tag.purpose == Purpose::hypothesis && r.tag.round == 2;
    });
    REQUIRE(it != seen.end());
    const std::string& user = it->messages.back().content;
    CHECK(user.find(s.rounds[0].feedback) != std::string::npos);
    CHECK(user.find("Research direction: volume attention") != std::string::npos);
}

TEST_CASE("incomplete hypotheses are retried then fail") {
    std::size_t calls = 0;
    FunctionProvider three_fields([&](const ProviderRequest&) {
        ++calls;
        return std::string("Observations: a\nKnowledge: b\nJustification: c\n");
    });
    StubJudge judge;
    MiningConfig cfg = small_config();
    cfg.format_retries = 1;
    LoopContext ctx{three_fields, judge, cfg, {}};
    CHECK_THROWS_AS(propose_hypothesis(ctx, 1, "volume", nullptr), FormatError);
    CHECK(calls == 2);
    CHECK_THROWS_AS(propose_hypothesis(ctx, 1, "   ", nullptr), ConfigError);
}

TEST_CASE("a zoo clone is rejected and its refinement accepted") {
    AlphaZoo zoo;
    zoo.add("known", parse("SMA(LOG($volume), 3)"));
    FunctionProvider provider([](const ProviderRequest& r) {
        if (r.tag.attempt == 0) return factor_reply("The moving average of log volume.", "SMA(LOG($volume), 3)");
        return factor_reply("The rolling maximum of the change in close.", "TS_MAX(DELTA($close, 2), 5)");
    });
    StubJudge judge;
    MiningConfig cfg = small_config();
    cfg.candidates = 1;
    cfg.reg.gate.consistency_gate = false;
    LoopContext ctx{provider, judge, cfg, {}};
    KnowledgeBase kb;
    std::vector<CandidateRecord> log;
    const auto accepted = construct_factors(ctx, 1, seed_hypothesis(), zoo, kb, log);
    REQUIRE(log.size() == 2);
    CHECK(log[0].failure == FailureMode::originality_violation);
    CHECK(log[0].status == "gate-rejected");
    CHECK(log[0].reg->originality == doctest::Approx(1.0));
    CHECK(accepted == std::vector<std::size_t>{1});
    CHECK(log[1].attempt == 1);
    CHECK(kb.count(FailureMode::originality_violation) == 1);
}

TEST_CASE("refinement requests carry the rejection reason") {
    std::vector<ProviderRequest> seen;
    FunctionProvider provider([&](const ProviderRequest& r) {
        seen.push_back(r);
        return factor_reply("a deep smoothing of close", "SMA(EMA(TS_MAX(DELTA($close, 2), 3), 4), 5)");
    });
    StubJudge judge;
    MiningConfig cfg = small_config();
    cfg.candidates = 1;
    cfg.refine_budget = 1;
    cfg.reg.gate.max_param_count = 3;
    LoopContext ctx{provider, judge, cfg, {}};
    KnowledgeBase kb;
    std::vector<CandidateRecord> log;
    CHECK_THROWS_AS(construct_factors(ctx, 1, seed_hypothesis(), data_zoo(), kb, log), NoViableCandidateError);
    REQUIRE(log.size() == 2);
    CHECK(log[0].failure == FailureMode::complexity_violation);
    REQUIRE(seen.size() == 2);
    CHECK(seen[1].tag.purpose == Purpose::refine);
    CHECK(seen[1].messages.back().content.find("parameters; the limit is 3") != std::string::npos);
}

TEST_CASE("unparseable expressions are execution failures") {
    FunctionProvider provider([](const ProviderRequest&) { return factor_reply("volume", "SMA($volume, "); });
    StubJudge judge;
    MiningConfig cfg = small_config();
    cfg.candidates = 2;
    cfg.refine_budget = 0;
    LoopContext ctx{provider, judge, cfg, {}};
    KnowledgeBase kb;
    std::vector<CandidateRecord> log;
    CHECK_THROWS_AS(construct_factors(ctx, 1, seed_hypothesis(), data_zoo(), kb, log), NoViableCandidateError);
    REQUIRE(log.size() == 2);
    for (const auto& r : log) {
        CHECK(r.failure == FailureMode::execution_failure);
        CHECK(r.error.find("does not parse") != std::string::npos);
    }
}

TEST_CASE("a cooperative provider yields n gated candidates") {
    const std::vector<std::string> exprs{"SMA(LOG($volume), 3)", "TS_MAX(DELTA($close, 2), 5)",
                                         "TS_STD(LOG($volume), 10)"};
    const std::vector<std::string> descs{"The moving average of log volume.",
                                         "The rolling maximum of the change in close.",
                                         "The volatility of log volume."};
    FunctionProvider provider([&](const ProviderRequest& r) {
        return factor_reply(descs[r.tag.candidate], exprs[r.tag.candidate]);
    });
    StubJudge judge;
    MiningConfig cfg = small_config();
    cfg.reg.gate.consistency_gate = false;
    LoopContext ctx{provider, judge, cfg, {}};
    KnowledgeBase kb;
    std::vector<CandidateRecord> log;
    const auto accepted = construct_factors(ctx, 1, seed_hypothesis(), data_zoo(), kb, log);
    CHECK(accepted.size() == 3);
    CHECK(log.size() == 3);
    CHECK(ctx.usage.total() > 0);
}

TEST_CASE("evaluation marks broken factors and does not depend on order") {
    MiningData& data = shared_data();
    MiningConfig cfg = small_config();
    const std::vector<std::string> exprs{"SMA(LOG($volume), 3)", "LOG(NEG($volume))", "DELTA($close, 1)",
                                         "TS_STD($close, 10)"};
    auto build = [&](const std::vector<std::size_t>& order) {
        std::vector<CandidateRecord> log;
        for (std::size_t i : order) {
            CandidateRecord r;
            r.candidate = i;
            r.expr = parse(exprs[i]);
            r.expr_text = exprs[i];
            log.push_back(std::move(r));
        }
        std::vector<std::size_t> all(log.size());
        std::iota(all.begin(), all.end(), 0);
        KnowledgeBase kb;
        evaluate_candidates(log, all, data, cfg, baseline_icir(data, cfg), kb);
        std::sort(log.begin(), log.end(), [](const auto& a, const auto& b) { return a.candidate < b.candidate; });
        return log;
    };
    const auto forward = build({0, 1, 2, 3});
    const auto backward = build({3, 2, 1, 0});
    CHECK(forward[1].status == "execution-failure");
    CHECK(forward[1].error.find("missing") != std::string::npos);
    CHECK(forward[0].status == "evaluated");
    CHECK(forward[0].eval->factor_ic > 0.5);
    for (std::size_t i = 0; i < forward.size(); ++i) {
        CHECK(forward[i].status == backward[i].status);
        CHECK(to_json(forward[i]).dump() == to_json(backward[i]).dump());
    }
}

TEST_CASE("ranking breaks ties by lower R_g then position") {
    MiningConfig cfg = small_config();
    std::vector<CandidateRecord> log(3);
    const double totals[] = {2.0, 1.0, 1.0};
    for (std::size_t i = 0; i < 3; ++i) {
        log[i].candidate = i;
        log[i].expr_text = "E" + std::to_string(i);
        log[i].status = "evaluated";
        RegScore s;
        s.total = totals[i];
        log[i].reg = s;
        CandidateEval ev;
        ev.valid_ic.icir = 0.5;
        log[i].eval = ev;
    }
    KnowledgeBase kb;
    const Feedback fb = feedback(log, kb, cfg, 1);
    CHECK(fb.ranked == std::vector<std::size_t>{1, 2, 0});
    CHECK(fb.text.find("Best: E1") != std::string::npos);

    // lambda turns R_g into a penalty on the key itself
    cfg.reg.lambda = 0.2;
    log[0].eval->valid_ic.icir = 0.6;
    CHECK(feedback(log, kb, cfg, 1).ranked == std::vector<std::size_t>{1, 2, 0});
    cfg.reg.lambda = 0.05;
    CHECK(feedback(log, kb, cfg, 1).ranked == std::vector<std::size_t>{0, 1, 2});

    // a single evaluated candidate survives alone
    log[0].status = "weak-performance";
    log[2].status = "gate-rejected";
    GateVerdict v;
    v.reasons = {GateReason::originality};
    log[2].gate = v;
    const Feedback one = feedback(log, kb, cfg, 1);
    CHECK(one.ranked == std::vector<std::size_t>{1});
    CHECK(one.text.find("E1") != std::string::npos);
    CHECK(one.text.find("Gate rejections") != std::string::npos);
}

TEST_CASE("stub trials are deterministic and the working zoo grows") {
    auto run = [](const fs::path& dir) {
        StubProvider stub = fixture_stub(5);
        StubJudge judge;
        MiningData data = fresh_data();
        RunLog log(dir);
        const MiningConfig cfg = small_config();
        log.write_config(to_json(cfg));
        return run_trial("volume attention", cfg, data, stub, judge, data_zoo(), &log);
    };
    const fs::path a = scratch("det_a"), b = scratch("det_b");
    const TrialSummary s = run(a);
    run(b);
    for (const char* f : {"config.json", "round_001.jsonl", "round_002.jsonl", "round_003.jsonl", "summary.json"}) {
        REQUIRE(fs::exists(a / f));
        CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
    }

    REQUIRE(s.zoo_sizes.size() == 3);
    CHECK(s.zoo_sizes[0] == 26);
    for (std::size_t i = 1; i < s.zoo_sizes.size(); ++i) CHECK(s.zoo_sizes[i] >= s.zoo_sizes[i - 1]);

    // round 1 keeps the planted factor, round 3 opens with a copy of it
    REQUIRE(!s.selected.empty());
    CHECK(s.selected[0].expr_text == "SMA(LOG($volume), 3)");
    const auto& r3 = s.rounds[2].candidates;
    REQUIRE(!r3.empty());
    CHECK(r3[0].expr_text == "SMA(LOG($volume), 3)");
    CHECK(r3[0].failure == FailureMode::originality_violation);

    // the malformed second draft and the broken third draft in round 1
    const auto& r1 = s.rounds[0].candidates;
    CHECK(std::any_of(r1.begin(), r1.end(), [](const CandidateRecord& r) {
        return r.candidate == 2 && r.failure == FailureMode::execution_failure;
    }));

    // hit ratio recomputed from the log
    std::vector<double> ars;
    for (const auto& j : load_candidate_records(a))
        if (!j["metrics"].is_null()) ars.push_back(j["metrics"]["AR"].get<double>());
    REQUIRE(s.hit_ratio);
    CHECK(ars.size() == s.evaluated);
    CHECK(hit_ratio(ars, 0.04) == doctest::Approx(*s.hit_ratio));

    const auto summary = nlohmann::json::parse(slurp(a / "summary.json"));
    CHECK(summary["isolation"]["premature_test_reads"] == 0);
    CHECK(summary["isolation"]["test_reads"] == 1);
    CHECK(!summary["test"].is_null());
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("the test split stays locked until the final report") {
    MiningData data = fresh_data();
    CHECK_THROWS_AS(data.test->panel(), IsolationError);
    CHECK(data.test->premature_reads() == 1);
    CHECK(data.dev.dates.back() < data.split.test.begin);
    for (std::size_t c = 0; c < data.train_labels.cols(); ++c) {
        if (c >= data.train_begin && c < data.train_end) continue;
        for (std::size_t r = 0; r < data.train_labels.rows(); ++r) CHECK_FALSE(data.train_labels.valid(r, c));
    }
    const FinalReport rep = final_test_report({parse("SMA(LOG($volume), 3)")}, data, small_config());
    CHECK(data.test->unlocked());
    CHECK(rep.coefficients.size() == 5);
    CHECK(rep.test_ic.mean_ic > 0.5);
    CHECK(rep.report.dates.front() >= data.split.test.begin);
}

TEST_CASE("provider-backed judge parses scores and rejects garbage") {
    std::string reply = "Scores -> c1: 0.8, c2 = 0.6";
    FunctionProvider provider([&](const ProviderRequest&) { return reply; });
    ProviderJudge judge(provider);
    const FactorCandidate cand{seed_hypothesis(), "volume", parse("$volume")};
    const JudgeVerdict v = judge.judge(cand);
    CHECK(v.c1 == doctest::Approx(0.8));
    CHECK(v.c2 == doctest::Approx(0.6));
    CHECK(judge.usage().total() > 0);
    reply = "looks fine to me";
    CHECK_THROWS_AS(judge.judge(cand), JudgeUnavailableError);
    reply = "c1: 1.5 c2: 0.2";
    CHECK_THROWS_AS(judge.judge(cand), JudgeUnavailableError);

    // an unjudged candidate is logged and gated out
    reply = "no idea";
    FunctionProvider writer([](const ProviderRequest&) { return factor_reply("volume", "TS_MAX(DELTA($close, 2), 5)"); });
    MiningConfig cfg = small_config();
    cfg.candidates = 1;
    cfg.refine_budget = 0;
    LoopContext ctx{writer, judge, cfg, {}};
    KnowledgeBase kb;
    std::vector<CandidateRecord> log;
    CHECK_THROWS_AS(construct_factors(ctx, 1, seed_hypothesis(), data_zoo(), kb, log), NoViableCandidateError);
    REQUIRE(log.size() == 1);
    CHECK(log[0].gate->describe().find("unjudged") != std::string::npos);
    CHECK(log[0].failure == FailureMode::hypothesis_misalignment);
}

TEST_CASE("remote provider needs its environment") {
    unsetenv("ALPHAMINE_PROVIDER_URL");
    unsetenv("ALPHAMINE_MODEL");
    CHECK_THROWS_AS(RemoteProvider::settings_from_env(), ConfigError);
}

TEST_CASE("stub fixtures reject unknown tables") {
    CHECK_THROWS_AS(StubProvider(1, nlohmann::json::parse(R"({"factors": {}})")), ConfigError);
    CHECK_THROWS_AS(StubProvider(1, nlohmann::json::array()), ConfigError);
    StubProvider a(3, nlohmann::json::object()), b(3, nlohmann::json::object());
    ProviderRequest req;
    req.messages = {{"user", "Research direction: momentum"}};
    req.tag = {2, Purpose::factor, 1, 0, 0};
    CHECK(a.complete(req).text == b.complete(req).text);
    const auto [d, e] = parse_factor_reply(a.complete(req).text);
    CHECK_NOTHROW(parse(e));
    CHECK(StubJudge::expression_agreement(d, parse(e)) == doctest::Approx(1.0));
}
