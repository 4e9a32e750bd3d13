#pragma once

#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "alphamine/dsl.hpp"
#include "alphamine/error.hpp"
#include "alphamine/hypothesis.hpp"
#include "alphamine/similarity.hpp"

namespace alphamine {

struct GateThresholds {
    std::size_t max_symbolic_length = 25;
    std::size_t max_param_count = 6;
    double max_originality = 0.6;    // upper bound on normalized S
    double min_consistency = 0.5;
    bool consistency_gate = true;    // when false C is still reported, never gated
};

struct RegConfig {
    // R_g = a1*SL + a2*PC + a3*ER
    double alpha1 = 0.02;
    double alpha2 = 0.05;
    double alpha3 = 1.0;
    // ER = b1*S + b2*(1 - C) + b3*log(1 + |F|)
    double beta1 = 1.0;
    double beta2 = 1.0;
    double beta3 = 0.25;
    // C = a*c1 + (1 - a)*c2
    double consistency_alpha = 0.5;
    // Trade-off between validation metric and R_g when ranking gated
    // survivors: key = metric - lambda * R_g. 0 leaves R_g as tie-breaker only.
    double lambda = 0.0;
    SubtreeMode subtree_mode = SubtreeMode::embedded;
    GateThresholds gate;

    // Throws ConfigError on negative weights or alpha outside [0, 1].
    void validate() const;
};

// Strict: unknown keys raise ConfigError.
RegConfig reg_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RegConfig& cfg);

struct FactorCandidate {
    Hypothesis hypothesis;
    std::string description;
    FactorExpr expr;
};

struct JudgeVerdict {
    double c1 = 0.0;   // hypothesis <-> description
    double c2 = 0.0;   // description <-> expression
};

class JudgeUnavailableError : public Error {
public:
    using Error::Error;
};

class ConsistencyJudge {
public:
    virtual ~ConsistencyJudge() = default;
    // Both scores in [0, 1]. Throws JudgeUnavailableError when no verdict can
    // be produced.
    virtual JudgeVerdict judge(const FactorCandidate& cand) = 0;
};

// Deterministic judge: token overlap for c1, feature/operator keyword
// cross-check against the AST for c2. See docs/dsl_reference.md.
class StubJudge final : public ConsistencyJudge {
public:
    JudgeVerdict judge(const FactorCandidate& cand) override;

    static double hypothesis_alignment(const std::string& hypothesis_text, const std::string& description);
    static double expression_agreement(const std::string& description, const FactorExpr& expr);
};

struct ConsistencyScore {
    double c1 = 0.0;
    double c2 = 0.0;
    double value = 0.0;   // C
};

std::size_t symbolic_length(const FactorExpr& f);
std::size_t param_count(const FactorExpr& f);
std::set<Feature> feature_set(const FactorExpr& f);

ConsistencyScore consistency(const FactorCandidate& cand, ConsistencyJudge& judge, double alpha = 0.5);

// Pure formulas; the candidate-level overloads below feed them.
double exploration_reg(double originality, double consistency, std::size_t feature_count, const RegConfig& cfg);
double total_reg(std::size_t sl, std::size_t pc, double er, const RegConfig& cfg);

struct RegScore {
    std::size_t symbolic_length = 0;
    std::size_t param_count = 0;
    double originality = 0.0;           // normalized S in [0, 1]
    std::size_t originality_raw = 0;    // matched node count
    std::string originality_match;      // zoo entry attaining the max
    double c1 = 0.0;
    double c2 = 0.0;
    double consistency = 0.0;
    bool judged = false;                // false: judge failed, candidate unevaluated
    std::size_t feature_count = 0;
    double exploration = 0.0;           // ER
    double total = 0.0;                 // R_g
};

nlohmann::json to_json(const RegScore& s);
RegScore reg_score_from_json(const nlohmann::json& j);

double exploration_reg(const FactorCandidate& cand, const AlphaZoo& zoo, ConsistencyJudge& judge,
                       const RegConfig& cfg);

// Full score. Judge failures propagate as JudgeUnavailableError.
RegScore total_reg(const FactorCandidate& cand, const AlphaZoo& zoo, ConsistencyJudge& judge,
                   const RegConfig& cfg);

enum class GateReason { symbolic_length, param_count, originality, consistency, unjudged };

const char* gate_reason_name(GateReason r);

struct GateVerdict {
    std::vector<GateReason> reasons;   // empty means pass
    bool pass() const { return reasons.empty(); }
    std::string describe() const;
};

GateVerdict gate(const RegScore& score, const RegConfig& cfg);

} // namespace alphamine
