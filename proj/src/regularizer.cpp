#include "alphamine/regularizer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

namespace alphamine {

void RegConfig::validate() const {
    for (double w : {alpha1, alpha2, alpha3, beta1, beta2, beta3, lambda}) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("regularizer weights must be finite and >= 0");
    }
    if (!(consistency_alpha >= 0.0 && consistency_alpha <= 1.0)) {
        throw ConfigError("consistency_alpha must lie in [0, 1]");
    }
    if (gate.max_originality < 0.0 || gate.min_consistency < 0.0) {
        throw ConfigError("gate thresholds must be >= 0");
    }
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; })) {
            throw ConfigError(std::string("unknown key '") + it.key() + "' in " + where);
        }
    }
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) {
        try {
            out = it->get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
        }
    }
}

} // namespace

RegConfig reg_config_from_json(const nlohmann::json& j) {
    reject_unknown(j,
                   {"alpha1", "alpha2", "alpha3", "beta1", "beta2", "beta3", "consistency_alpha", "lambda",
                    "subtree_mode", "gate"},
                   "regularizer");
    RegConfig cfg;
    read_opt(j, "alpha1", cfg.alpha1);
    read_opt(j, "alpha2", cfg.alpha2);
    read_opt(j, "alpha3", cfg.alpha3);
    read_opt(j, "beta1", cfg.beta1);
    read_opt(j, "beta2", cfg.beta2);
    read_opt(j, "beta3", cfg.beta3);
    read_opt(j, "consistency_alpha", cfg.consistency_alpha);
    read_opt(j, "lambda", cfg.lambda);
    if (auto it = j.find("subtree_mode"); it != j.end()) {
        const auto mode = it->get<std::string>();
        if (mode == "embedded") cfg.subtree_mode = SubtreeMode::embedded;
        else if (mode == "complete") cfg.subtree_mode = SubtreeMode::complete;
        else throw ConfigError("subtree_mode must be 'embedded' or 'complete'");
    }
    if (auto it = j.find("gate"); it != j.end()) {
        reject_unknown(*it, {"max_symbolic_length", "max_param_count", "max_originality", "min_consistency",
                             "consistency_gate"},
                       "regularizer.gate");
        read_opt(*it, "max_symbolic_length", cfg.gate.max_symbolic_length);
        read_opt(*it, "max_param_count", cfg.gate.max_param_count);
        read_opt(*it, "max_originality", cfg.gate.max_originality);
        read_opt(*it, "min_consistency", cfg.gate.min_consistency);
        read_opt(*it, "consistency_gate", cfg.gate.consistency_gate);
    }
    cfg.validate();
    return cfg;
}

nlohmann::json to_json(const RegConfig& cfg) {
    return {
        {"alpha1", cfg.alpha1},
        {"alpha2", cfg.alpha2},
        {"alpha3", cfg.alpha3},
        {"beta1", cfg.beta1},
        {"beta2", cfg.beta2},
        {"beta3", cfg.beta3},
        {"consistency_alpha", cfg.consistency_alpha},
        {"lambda", cfg.lambda},
        {"subtree_mode", cfg.subtree_mode == SubtreeMode::embedded ? "embedded" : "complete"},
        {"gate",
         {{"max_symbolic_length", cfg.gate.max_symbolic_length},
          {"max_param_count", cfg.gate.max_param_count},
          {"max_originality", cfg.gate.max_originality},
          {"min_consistency", cfg.gate.min_consistency},
          {"consistency_gate", cfg.gate.consistency_gate}}},
    };
}

// ---------------------------------------------------------------------------
// Structural measures

std::size_t symbolic_length(const FactorExpr& f) { return f.size(); }

std::size_t param_count(const FactorExpr& f) {
    std::size_t n = 0;
    for (const Node* node : preorder(f.root())) {
        if (!node->is_op()) continue;
        const auto& slots = node->op().slots;
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (slots[i] != SlotKind::series && node->children()[i]->kind() == NodeKind::constant) ++n;
        }
    }
    return n;
}

std::set<Feature> feature_set(const FactorExpr& f) {
    std::set<Feature> out;
    for (const Node* node : preorder(f.root())) {
        if (node->kind() == NodeKind::feature) out.insert(node->feature());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stub judge

namespace {

const std::set<std::string>& stopwords() {
    static const std::set<std::string> words{
        "the",  "and",  "for",  "with", "that", "this", "from", "into", "are",   "its",  "over", "when",
        "than", "then", "which", "will", "can",  "has",  "have", "was",  "were", "per",  "via",  "each",
        "such", "not",  "but",  "our",  "their", "they", "these", "those", "been", "being", "also", "more",
        "most", "less", "may",  "might", "should", "would", "could", "use", "uses", "using", "based", "factor",
    };
    return words;
}

std::set<std::string> tokens(const std::string& text) {
    std::set<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (cur.size() >= 3 && !stopwords().count(cur)) out.insert(cur);
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) cur += static_cast<char>(std::tolower(c));
        else flush();
    }
    flush();
    return out;
}

bool mentions_any(const std::set<std::string>& toks, const std::vector<std::string>& words) {
    return std::any_of(words.begin(), words.end(), [&](const std::string& w) { return toks.count(w) > 0; });
}

// Words that count as mentioning a feature the expression uses.
const std::map<Feature, std::vector<std::string>>& feature_mentions() {
    static const std::map<Feature, std::vector<std::string>> m{
        {Feature::open, {"open", "opening", "gap", "overnight"}},
        {Feature::high, {"high", "highs", "peak", "range", "intraday"}},
        {Feature::low, {"low", "lows", "trough", "range", "intraday"}},
        {Feature::close, {"close", "closing", "price", "prices", "return", "returns", "momentum", "reversal"}},
        {Feature::volume, {"volume", "volumes", "liquidity", "turnover", "traded", "trading", "activity"}},
    };
    return m;
}

// Words that claim a feature must be present.
const std::map<Feature, std::vector<std::string>>& feature_claims() {
    static const std::map<Feature, std::vector<std::string>> m{
        {Feature::open, {"open", "opening", "overnight"}},
        {Feature::high, {"highs", "range"}},
        {Feature::low, {"lows", "range"}},
        {Feature::close, {"close", "closing", "price", "prices"}},
        {Feature::volume, {"volume", "volumes", "liquidity", "turnover"}},
    };
    return m;
}

const std::map<std::string, std::vector<std::string>>& operator_mentions() {
    static const std::map<std::string, std::vector<std::string>> m{
        {"ADD", {"sum", "plus", "combined", "add", "combination"}},
        {"SUB", {"difference", "spread", "minus", "gap", "excess"}},
        {"MUL", {"product", "interaction", "scaled", "times", "weighted"}},
        {"DIV", {"ratio", "relative", "divided", "normalized", "proportion"}},
        {"ABS", {"absolute", "magnitude"}},
        {"LOG", {"log", "logarithm", "logarithmic"}},
        {"SIGN", {"sign", "direction", "directional"}},
        {"POW", {"power", "squared", "exponent", "convex"}},
        {"NEG", {"negative", "inverse", "reversal", "contrarian", "negated"}},
        {"TS_MIN", {"minimum", "min", "lowest", "floor", "support"}},
        {"TS_MAX", {"maximum", "max", "highest", "ceiling", "resistance", "breakout"}},
        {"TS_SUM", {"sum", "cumulative", "total", "accumulated", "accumulation"}},
        {"SMA", {"average", "moving", "mean", "smoothed", "smooth"}},
        {"EMA", {"exponential", "average", "moving", "smoothed", "decayed"}},
        {"TS_STD", {"volatility", "deviation", "dispersion", "std", "risk"}},
        {"TS_RANK", {"rank", "ranking", "percentile", "relative"}},
        {"TS_CORR", {"correlation", "corr", "comovement", "relationship", "coupling"}},
        {"DELAY", {"lag", "lagged", "previous", "prior", "delayed", "yesterday"}},
        {"DELTA", {"change", "difference", "momentum", "delta", "diff"}},
        {"RANK", {"rank", "sectional", "relative", "ranking", "ranked"}},
        {"ZSCORE", {"zscore", "standardized", "normalized", "sectional"}},
        {"IF", {"conditional", "regime", "condition", "switch"}},
        {"GT", {"above", "exceeds", "greater", "higher"}},
        {"LT", {"below", "less", "lower", "under"}},
    };
    return m;
}

} // namespace

double StubJudge::hypothesis_alignment(const std::string& hypothesis_text, const std::string& description) {
    const auto d = tokens(description);
    if (d.empty()) return 0.0;
    const auto h = tokens(hypothesis_text);
    std::size_t shared = 0;
    for (const auto& t : d) shared += h.count(t);
    return static_cast<double>(shared) / static_cast<double>(d.size());
}

double StubJudge::expression_agreement(const std::string& description, const FactorExpr& expr) {
    const auto d = tokens(description);
    const auto used = feature_set(expr);

    std::size_t claimed = 0, claimed_present = 0;
    for (const auto& [f, words] : feature_claims()) {
        if (!mentions_any(d, words)) continue;
        ++claimed;
        claimed_present += used.count(f);
    }
    const double claim_precision =
        claimed == 0 ? 1.0 : static_cast<double>(claimed_present) / static_cast<double>(claimed);

    std::size_t recalled = 0;
    for (Feature f : used) recalled += mentions_any(d, feature_mentions().at(f)) ? 1 : 0;
    const double feature_recall =
        used.empty() ? 1.0 : static_cast<double>(recalled) / static_cast<double>(used.size());

    std::set<std::string> ops;
    for (const Node* n : preorder(expr.root())) {
        if (n->is_op()) ops.insert(n->op().name);
    }
    std::size_t ops_named = 0;
    for (const auto& op : ops) ops_named += mentions_any(d, operator_mentions().at(op)) ? 1 : 0;
    const double op_recall = ops.empty() ? 1.0 : static_cast<double>(ops_named) / static_cast<double>(ops.size());

    return claim_precision * (feature_recall + op_recall) / 2.0;
}

JudgeVerdict StubJudge::judge(const FactorCandidate& cand) {
    return {hypothesis_alignment(cand.hypothesis.text(), cand.description),
            expression_agreement(cand.description, cand.expr)};
}

ConsistencyScore consistency(const FactorCandidate& cand, ConsistencyJudge& judge, double alpha) {
    const JudgeVerdict v = judge.judge(cand);
    if (!(v.c1 >= 0.0 && v.c1 <= 1.0 && v.c2 >= 0.0 && v.c2 <= 1.0)) {
        throw JudgeUnavailableError("judge returned scores outside [0, 1]");
    }
    return {v.c1, v.c2, alpha * v.c1 + (1.0 - alpha) * v.c2};
}

// ---------------------------------------------------------------------------
// ER / R_g

double exploration_reg(double originality, double consistency, std::size_t feature_count, const RegConfig& cfg) {
    return cfg.beta1 * originality + cfg.beta2 * (1.0 - consistency) +
           cfg.beta3 * std::log(1.0 + static_cast<double>(feature_count));
}

double total_reg(std::size_t sl, std::size_t pc, double er, const RegConfig& cfg) {
    return cfg.alpha1 * static_cast<double>(sl) + cfg.alpha2 * static_cast<double>(pc) + cfg.alpha3 * er;
}

double exploration_reg(const FactorCandidate& cand, const AlphaZoo& zoo, ConsistencyJudge& judge,
                       const RegConfig& cfg) {
    return total_reg(cand, zoo, judge, cfg).exploration;
}

RegScore total_reg(const FactorCandidate& cand, const AlphaZoo& zoo, ConsistencyJudge& judge,
                   const RegConfig& cfg) {
    RegScore s;
    s.symbolic_length = symbolic_length(cand.expr);
    s.param_count = param_count(cand.expr);
    s.feature_count = feature_set(cand.expr).size();
    const SimilarityResult sim = originality(cand.expr, zoo, cfg.subtree_mode);
    s.originality = sim.normalized;
    s.originality_raw = sim.raw;
    s.originality_match = sim.matched_name;
    const ConsistencyScore c = consistency(cand, judge, cfg.consistency_alpha);
    s.c1 = c.c1;
    s.c2 = c.c2;
    s.consistency = c.value;
    s.judged = true;
    s.exploration = exploration_reg(s.originality, s.consistency, s.feature_count, cfg);
    s.total = total_reg(s.symbolic_length, s.param_count, s.exploration, cfg);
    return s;
}

nlohmann::json to_json(const RegScore& s) {
    return {
        {"SL", s.symbolic_length},
        {"PC", s.param_count},
        {"S", s.originality},
        {"S_raw", s.originality_raw},
        {"S_match", s.originality_match},
        {"c1", s.c1},
        {"c2", s.c2},
        {"C", s.consistency},
        {"judged", s.judged},
        {"F", s.feature_count},
        {"ER", s.exploration},
        {"R_g", s.total},
    };
}

RegScore reg_score_from_json(const nlohmann::json& j) {
    RegScore s;
    s.symbolic_length = j.at("SL").get<std::size_t>();
    s.param_count = j.at("PC").get<std::size_t>();
    s.originality = j.at("S").get<double>();
    s.originality_raw = j.at("S_raw").get<std::size_t>();
    s.originality_match = j.at("S_match").get<std::string>();
    s.c1 = j.at("c1").get<double>();
    s.c2 = j.at("c2").get<double>();
    s.consistency = j.at("C").get<double>();
    s.judged = j.at("judged").get<bool>();
    s.feature_count = j.at("F").get<std::size_t>();
    s.exploration = j.at("ER").get<double>();
    s.total = j.at("R_g").get<double>();
    return s;
}

// ---------------------------------------------------------------------------
// Gate

const char* gate_reason_name(GateReason r) {
    switch (r) {
    case GateReason::symbolic_length: return "symbolic-length";
    case GateReason::param_count: return "param-count";
    case GateReason::originality: return "originality";
    case GateReason::consistency: return "consistency";
    case GateReason::unjudged: return "unjudged";
    }
    return "?";
}

std::string GateVerdict::describe() const {
    if (pass()) return "pass";
    std::string out = "fail(";
    for (std::size_t i = 0; i < reasons.size(); ++i) {
        if (i) out += ",";
        out += gate_reason_name(reasons[i]);
    }
    return out + ")";
}

GateVerdict gate(const RegScore& score, const RegConfig& cfg) {
    GateVerdict v;
    const auto& g = cfg.gate;
    if (score.symbolic_length > g.max_symbolic_length) v.reasons.push_back(GateReason::symbolic_length);
    if (score.param_count > g.max_param_count) v.reasons.push_back(GateReason::param_count);
    if (score.originality > g.max_originality) v.reasons.push_back(GateReason::originality);
    if (!score.judged) {
        v.reasons.push_back(GateReason::unjudged);
    } else if (g.consistency_gate && score.consistency < g.min_consistency) {
        v.reasons.push_back(GateReason::consistency);
    }
    return v;
}

} // namespace alphamine
