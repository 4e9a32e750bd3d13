#include "doctest.h"

#include <cmath>

#include <nlohmann/json.hpp>

#include "alphamine/regularizer.hpp"

using namespace alphamine;

namespace {

const std::string kData = ALPHAMINE_DATA_DIR;

Hypothesis sample_hypothesis() {
    Hypothesis h;
    h.observations = "Trading volume spikes precede returns.";
    h.knowledge = "Liquidity shocks carry information.";
    h.justification = "Informed traders act first.";
    h.specification = "Window 5 days.";
    return h;
}

struct FixedJudge final : ConsistencyJudge {
    JudgeVerdict verdict;
    bool fail = false;
    JudgeVerdict judge(const FactorCandidate&) override {
        if (fail) throw JudgeUnavailableError("offline");
        return verdict;
    }
};

} // namespace

TEST_CASE("symbolic length and parameter count") {
    const FactorExpr e = parse("TS_MIN($low, 10)");
    CHECK(symbolic_length(e) == 3);
    CHECK(param_count(e) == 1);
    const FactorExpr f = parse("POW(SMA(ADD($close, 2), 5), 3)");
    CHECK(symbolic_length(f) == 7);
    CHECK(param_count(f) == 2);   // window and exponent; the series constant is not a parameter
    CHECK(feature_set(parse("SUB($close, DELAY($close, 1))")).size() == 1);
    CHECK(feature_set(parse("TS_CORR($close, $volume, 5)")).size() == 2);
}

TEST_CASE("exploration regularizer fixed points") {
    RegConfig cfg;
    cfg.beta1 = cfg.beta2 = cfg.beta3 = 1.0;
    const double er = exploration_reg(0.0, 1.0, 1, cfg);
    CHECK(std::abs(er - std::log(2.0)) <= 1e-12);
    cfg.alpha1 = cfg.alpha2 = 0.0;
    cfg.alpha3 = 1.0;
    CHECK(total_reg(17, 4, er, cfg) == er);
    // misalignment raises ER: C enters as (1 - C)
    CHECK(exploration_reg(0.0, 0.2, 1, cfg) > exploration_reg(0.0, 0.9, 1, cfg));
    CHECK(exploration_reg(0.5, 0.5, 3, cfg) == doctest::Approx(0.5 + 0.5 + std::log(4.0)));
}

TEST_CASE("consistency weighting defaults to one half") {
    RegConfig cfg;
    CHECK(cfg.consistency_alpha == 0.5);
    FixedJudge judge;
    judge.verdict = {0.3, 0.9};
    const ConsistencyScore c = consistency({sample_hypothesis(), "x", parse("$close")}, judge, cfg.consistency_alpha);
    CHECK(c.value == 0.5 * 0.3 + 0.5 * 0.9);
    judge.verdict = {1.5, 0.2};
    CHECK_THROWS_AS(consistency({sample_hypothesis(), "x", parse("$close")}, judge), JudgeUnavailableError);
}

TEST_CASE("stub judge scores by hand") {
    const Hypothesis h = sample_hypothesis();
    // description tokens {rising, volume, predicts, returns}; shared {volume, returns}
    CHECK(StubJudge::hypothesis_alignment(h.text(), "Rising volume predicts returns") == 0.5);
    CHECK(StubJudge::hypothesis_alignment(h.text(), "") == 0.0);

    const FactorExpr e = parse("SMA(LOG($volume), 5)");
    // all claims present, volume recalled, both SMA and LOG named
    CHECK(StubJudge::expression_agreement("The 5-day moving average of log volume", e) == 1.0);
    // claims close and volume but only volume is used: precision 1/2;
    // feature recall 1, operator recall 0
    CHECK(StubJudge::expression_agreement("Closing price momentum relative to volume", e) == 0.25);
    // silent description: no claims, nothing recalled
    CHECK(StubJudge::expression_agreement("Something clever", e) == 0.0);

    StubJudge judge;
    const JudgeVerdict v = judge.judge({h, "Moving average of log volume", e});
    CHECK(v.c1 == doctest::Approx(1.0 / 4.0));   // {moving, average, log, volume} -> volume
    CHECK(v.c2 == 1.0);
}

TEST_CASE("full score and gate") {
    const AlphaZoo zoo = load_zoo(kData + "/zoo_alpha101.txt");
    RegConfig cfg;
    StubJudge judge;
    const Hypothesis h = sample_hypothesis();

    for (const auto& entry : zoo.entries()) {
        const RegScore s = total_reg({h, "", entry.expr}, zoo, judge, cfg);
        CHECK(s.originality == 1.0);
        CHECK_FALSE(gate(s, cfg).pass());
    }

    const FactorCandidate fresh{h, "Volume spikes precede returns, measured as the moving average of log volume",
                                parse("SMA(LOG($volume), 5)")};
    const RegScore s = total_reg(fresh, zoo, judge, cfg);
    CAPTURE(to_json(s).dump());
    CHECK(s.symbolic_length == 4);
    CHECK(s.param_count == 1);
    CHECK(s.feature_count == 1);
    CHECK(s.judged);
    CHECK(s.consistency == 0.5 * s.c1 + 0.5 * s.c2);
    const double er = cfg.beta1 * s.originality + cfg.beta2 * (1 - s.consistency) + cfg.beta3 * std::log(2.0);
    CHECK(s.exploration == doctest::Approx(er).epsilon(1e-14));
    CHECK(s.total == doctest::Approx(0.02 * 4 + 0.05 * 1 + er).epsilon(1e-14));
    CHECK(exploration_reg(fresh, zoo, judge, cfg) == s.exploration);
    CHECK(gate(s, cfg).pass());
    CHECK(gate(s, cfg).describe() == "pass");

    const RegScore back = reg_score_from_json(to_json(s));
    CHECK(back.total == s.total);
    CHECK(back.originality_match == s.originality_match);

    FixedJudge offline;
    offline.fail = true;
    CHECK_THROWS_AS(total_reg(fresh, zoo, offline, cfg), JudgeUnavailableError);
}

TEST_CASE("gate thresholds") {
    RegConfig cfg;
    RegScore s;
    s.symbolic_length = 25;
    s.param_count = 6;
    s.originality = 0.6;
    s.consistency = 0.5;
    s.judged = true;
    CHECK(gate(s, cfg).pass());
    s.symbolic_length = 26;
    s.param_count = 7;
    s.originality = 0.61;
    s.consistency = 0.49;
    const GateVerdict v = gate(s, cfg);
    CHECK(v.describe() == "fail(symbolic-length,param-count,originality,consistency)");
    cfg.gate.consistency_gate = false;
    CHECK(gate(s, cfg).reasons.size() == 3);
    s.judged = false;
    CHECK(gate(s, cfg).describe() == "fail(symbolic-length,param-count,originality,unjudged)");
}

TEST_CASE("config json is strict") {
    const RegConfig def = reg_config_from_json(nlohmann::json::object());
    CHECK(def.alpha1 == 0.02);
    CHECK(def.beta3 == 0.25);
    const auto j = nlohmann::json::parse(R"({"beta2": 2.0, "subtree_mode": "complete", "gate": {"max_originality": 0.4}})");
    const RegConfig cfg = reg_config_from_json(j);
    CHECK(cfg.beta2 == 2.0);
    CHECK(cfg.subtree_mode == SubtreeMode::complete);
    CHECK(cfg.gate.max_originality == 0.4);
    CHECK(reg_config_from_json(to_json(cfg)).gate.max_originality == 0.4);
    CHECK_THROWS_AS(reg_config_from_json(nlohmann::json::parse(R"({"beta4": 1})")), ConfigError);
    CHECK_THROWS_AS(reg_config_from_json(nlohmann::json::parse(R"({"gate": {"max_sl": 1}})")), ConfigError);
    CHECK_THROWS_AS(reg_config_from_json(nlohmann::json::parse(R"({"alpha1": -1})")), ConfigError);
    CHECK_THROWS_AS(reg_config_from_json(nlohmann::json::parse(R"({"consistency_alpha": 1.5})")), ConfigError);
    CHECK_THROWS_AS(reg_config_from_json(nlohmann::json::parse(R"({"alpha1": "x"})")), ConfigError);
}

TEST_CASE("hypothesis parsing") {
    const Hypothesis h = sample_hypothesis();
    const Hypothesis back = parse_hypothesis(h.text());
    CHECK(back.observations == h.observations);
    CHECK(back.specification == h.specification);
    const Hypothesis md = parse_hypothesis(
        "- **Observations:** volume leads\n  and persists\n* Knowledge: flows\n# JUSTIFICATION: inventory\nspecification: 5 days\n");
    CHECK(md.observations == "volume leads and persists");
    CHECK(md.justification == "inventory");
    CHECK_THROWS_AS(parse_hypothesis("Observations: a\nKnowledge: b\nJustification: c\n"), FormatError);
    CHECK_THROWS_AS(parse_hypothesis("Observations: a\nKnowledge: b\nJustification: c\nSpecification:\n"), FormatError);
}
