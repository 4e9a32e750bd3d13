#include "alphamine/mining.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "alphamine/eval.hpp"

namespace alphamine {

// ---------------------------------------------------------------------------
// Config

void MiningConfig::validate() const {
    if (rounds == 0) throw ConfigError("mining.rounds must be >= 1");
    if (candidates == 0) throw ConfigError("mining.candidates must be >= 1");
    if (survivors_per_round == 0) throw ConfigError("mining.survivors_per_round must be >= 1");
    if (!(ridge_penalty >= 0.0)) throw ConfigError("mining.ridge_penalty must be >= 0");
    reg.validate();
}

MiningConfig mining_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("mining config must be an object");
    MiningConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        try {
            if (key == "rounds") c.rounds = it->get<std::size_t>();
            else if (key == "candidates") c.candidates = it->get<std::size_t>();
            else if (key == "refine_budget") c.refine_budget = it->get<std::size_t>();
            else if (key == "format_retries") c.format_retries = it->get<std::size_t>();
            else if (key == "survivors_per_round") c.survivors_per_round = it->get<std::size_t>();
            else if (key == "ridge_penalty") c.ridge_penalty = it->get<double>();
            else if (key == "warmup") c.warmup = it->get<std::size_t>();
            else if (key == "hit_threshold") c.hit_threshold = it->get<double>();
            else if (key == "regularizer") c.reg = reg_config_from_json(*it);
            else if (key == "strategy") c.strategy = strategy_config_from_json(*it);
            else throw ConfigError("unknown key '" + key + "' in mining config");
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("bad value for mining." + key + ": " + e.what());
        }
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const MiningConfig& c) {
    return {{"rounds", c.rounds},
            {"candidates", c.candidates},
            {"refine_budget", c.refine_budget},
            {"format_retries", c.format_retries},
            {"survivors_per_round", c.survivors_per_round},
            {"ridge_penalty", c.ridge_penalty},
            {"warmup", c.warmup},
            {"hit_threshold", c.hit_threshold},
            {"regularizer", to_json(c.reg)},
            {"strategy", to_json(c.strategy)}};
}

// ---------------------------------------------------------------------------
// Data

const Panel& TestSplitGuard::panel() {
    ++reads_;
    if (!unlocked_) {
        ++premature_;
        throw IsolationError("test split requested before the final summary");
    }
    return full_;
}

FeatureList MiningData::base_features() const {
    FeatureList out;
    for (const auto& m : base) out.push_back(&m);
    return out;
}

namespace {

Matrix mask_outside(const Matrix& m, std::size_t begin, std::size_t end) {
    Matrix out = m;
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c)
            if (c < begin || c >= end) out.set_missing(r, c);
    return out;
}

std::vector<Matrix> zscored_base(const Panel& p) {
    const BaseAlphas b = base_alphas(p);
    std::vector<Matrix> out;
    for (const Matrix* m : b.all()) out.push_back(zscore_cross_section(*m));
    return out;
}

} // namespace

MiningData prepare_mining_data(Panel full, const SplitSpec& split, std::size_t warmup) {
    split.check();
    MiningData d;
    d.split = split;
    const auto [test_begin, test_end] = date_span(full, split.test);
    if (test_begin >= test_end) throw EmptySplitError("test range has no dates in the panel");

    WindowedPanel w = window_with_warmup(full, DateRange{split.train.begin, split.valid.end}, warmup);
    d.dev = std::move(w.panel);
    std::tie(d.train_begin, d.train_end) = date_span(d.dev, split.train);
    std::tie(d.valid_begin, d.valid_end) = date_span(d.dev, split.valid);
    if (d.train_begin >= d.train_end) throw EmptySplitError("train range has no dates in the panel");
    if (d.valid_begin >= d.valid_end) throw EmptySplitError("validation range has no dates in the panel");
    d.labels = next_day_returns(d.dev);
    d.train_labels = mask_outside(d.labels, d.train_begin, d.train_end);
    d.base = zscored_base(d.dev);
    d.test = std::make_shared<TestSplitGuard>(std::move(full));
    return d;
}

// ---------------------------------------------------------------------------
// Records

const char* failure_mode_name(FailureMode m) {
    switch (m) {
    case FailureMode::hypothesis_misalignment: return "hypothesis-misalignment";
    case FailureMode::complexity_violation: return "complexity-violation";
    case FailureMode::originality_violation: return "originality-violation";
    case FailureMode::execution_failure: return "execution-failure";
    case FailureMode::weak_performance: return "weak-performance";
    }
    return "?";
}

double CandidateRecord::icir() const {
    if (!eval || !eval->valid_ic.icir) return -std::numeric_limits<double>::infinity();
    return *eval->valid_ic.icir;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json metrics_json(const CandidateEval& e) {
    return {{"IC", e.valid_ic.mean_ic},
            {"RankIC", e.valid_ic.mean_rank_ic},
            {"ICIR", opt_json(e.valid_ic.icir)},
            {"RankICIR", opt_json(e.valid_ic.rank_icir)},
            {"factor_IC", e.factor_ic},
            {"AR", e.report.excess_return},
            {"IR", e.report.information_ratio},
            {"MDD", e.report.max_drawdown},
            {"turnover", e.report.turnover},
            {"coefficients", e.coefficients}};
}

nlohmann::json hypothesis_json(const Hypothesis& h) {
    return {{"id", h.id},
            {"parent_id", h.parent_id},
            {"observations", h.observations},
            {"knowledge", h.knowledge},
            {"justification", h.justification},
            {"specification", h.specification}};
}

} // namespace

nlohmann::json to_json(const CandidateRecord& r) {
    nlohmann::json j{{"type", "candidate"},
                     {"round", r.round},
                     {"candidate", r.candidate},
                     {"attempt", r.attempt},
                     {"response", r.response},
                     {"description", r.description},
                     {"expr_text", r.expr_text},
                     {"status", r.status},
                     {"failure_mode", r.failure ? nlohmann::json(failure_mode_name(*r.failure)) : nlohmann::json(nullptr)},
                     {"error", r.error},
                     {"reg_score", r.reg ? to_json(*r.reg) : nlohmann::json(nullptr)},
                     {"verdict", r.gate ? nlohmann::json(r.gate->describe()) : nlohmann::json(nullptr)},
                     {"metrics", r.eval ? metrics_json(*r.eval) : nlohmann::json(nullptr)},
                     {"zoo_name", r.zoo_name}};
    return j;
}

void KnowledgeBase::add_success(const CandidateRecord& r) {
    entries_.push_back({r.round, r.candidate, r.attempt, r.expr_text, std::nullopt, r.zoo_name});
}

void KnowledgeBase::add_failure(const CandidateRecord& r, FailureMode mode, std::string detail) {
    entries_.push_back({r.round, r.candidate, r.attempt, r.expr_text, mode, std::move(detail)});
}

std::size_t KnowledgeBase::count(FailureMode m) const {
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [&](const KnowledgeEntry& e) { return e.failure == m; }));
}

std::size_t KnowledgeBase::successes() const {
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [](const KnowledgeEntry& e) { return !e.failure; }));
}

std::string KnowledgeBase::summary() const {
    std::ostringstream out;
    out << "Knowledge base: " << successes() << " accepted factor(s).";
    for (FailureMode m : {FailureMode::hypothesis_misalignment, FailureMode::complexity_violation,
                          FailureMode::originality_violation, FailureMode::execution_failure,
                          FailureMode::weak_performance}) {
        if (const std::size_t n = count(m)) out << " " << failure_mode_name(m) << ": " << n << ".";
    }
    return out.str();
}

nlohmann::json round_summary_json(const RoundRecord& r) {
    nlohmann::json ranked = nlohmann::json::array();
    nlohmann::json selected = nlohmann::json::array();
    for (std::size_t i : r.ranked) {
        const auto& c = r.candidates[i];
        ranked.push_back({{"candidate", c.candidate}, {"attempt", c.attempt}, {"expr_text", c.expr_text}});
        if (!c.zoo_name.empty()) selected.push_back(c.zoo_name);
    }
    return {{"type", "round"},
            {"round", r.round},
            {"hypothesis", r.hypothesis ? hypothesis_json(*r.hypothesis) : nlohmann::json(nullptr)},
            {"error", r.error},
            {"candidates", r.candidates.size()},
            {"ranked", ranked},
            {"selected", selected},
            {"feedback", r.feedback},
            {"usage", to_json(r.usage)},
            {"zoo_size", r.zoo_size}};
}

// ---------------------------------------------------------------------------
// Prompts

namespace {

const char* kIdeaSystem =
    "You are a quantitative researcher proposing hypotheses about equity markets. Reply with one "
    "hypothesis in four labelled lines: 'Observations:', 'Knowledge:', 'Justification:' and "
    "'Specification:' (the last one names concrete windows or thresholds).";

std::string factor_system() {
    std::string ops;
    for (const auto& spec : operator_catalog()) {
        ops += spec.name + "(";
        for (std::size_t i = 0; i < spec.slots.size(); ++i) {
            ops += i ? ", " : "";
            ops += spec.slots[i] == SlotKind::series ? "x" : spec.slots[i] == SlotKind::window_int ? "n" : "c";
        }
        ops += ") ";
    }
    return "You turn market hypotheses into alpha factors written in a prefix formula language. Features: "
           "$open $high $low $close $volume. Operators: " +
           ops +
           "where x is a series or constant, n a positive integer window and c a constant. Reply with exactly "
           "two lines: 'Description: <one sentence>' and 'Expression: <formula>'.";
}

ProviderResponse ask(LoopContext& ctx, ProviderRequest req) {
    ProviderResponse res = ctx.provider.complete(req);
    ctx.usage += res.usage;
    return res;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

FailureMode primary_failure(const GateVerdict& v) {
    auto has = [&](GateReason r) { return std::find(v.reasons.begin(), v.reasons.end(), r) != v.reasons.end(); };
    if (has(GateReason::originality)) return FailureMode::originality_violation;
    if (has(GateReason::symbolic_length) || has(GateReason::param_count)) return FailureMode::complexity_violation;
    return FailureMode::hypothesis_misalignment;
}

std::string rejection_note(const CandidateRecord& r, const MiningConfig& cfg) {
    std::ostringstream out;
    if (!r.gate) {
        out << "it could not be used: " << r.error;
        return out.str();
    }
    out << "it failed the gate " << r.gate->describe() << ".";
    const RegScore& s = *r.reg;
    for (GateReason g : r.gate->reasons) {
        switch (g) {
        case GateReason::symbolic_length:
            out << " It has " << s.symbolic_length << " nodes; the limit is " << cfg.reg.gate.max_symbolic_length << ".";
            break;
        case GateReason::param_count:
            out << " It has " << s.param_count << " parameters; the limit is " << cfg.reg.gate.max_param_count << ".";
            break;
        case GateReason::originality:
            out << " It overlaps the known alpha '" << s.originality_match << "' (similarity " << s.originality
                << ", limit " << cfg.reg.gate.max_originality << ").";
            break;
        case GateReason::consistency:
            out << " Its description does not match the hypothesis or the formula (consistency " << s.consistency
                << ", minimum " << cfg.reg.gate.min_consistency << ").";
            break;
        case GateReason::unjudged:
            out << " Its consistency could not be judged.";
            break;
        }
    }
    return out.str();
}

} // namespace

std::pair<std::string, std::string> parse_factor_reply(const std::string& text) {
    std::string description, expression;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::string body = trim(line);
        while (!body.empty() && (body.front() == '-' || body.front() == '*')) body = trim(body.substr(1));
        const auto colon = body.find(':');
        if (colon == std::string::npos) continue;
        std::string label = body.substr(0, colon);
        label.erase(std::remove(label.begin(), label.end(), '*'), label.end());
        std::transform(label.begin(), label.end(), label.begin(), [](unsigned char c) { return std::tolower(c); });
        std::string value = trim(body.substr(colon + 1));
        while (!value.empty() && (value.front() == '*' || value.front() == '`')) value = trim(value.substr(1));
        while (!value.empty() && value.back() == '`') value = trim(value.substr(0, value.size() - 1));
        if (label == "description" && description.empty()) description = value;
        else if (label == "expression" && expression.empty()) expression = value;
    }
    if (description.empty() || expression.empty()) {
        throw FormatError("reply needs 'Description:' and 'Expression:' lines");
    }
    return {description, expression};
}

Hypothesis propose_hypothesis(LoopContext& ctx, std::size_t round, const std::string& insight,
                              const RoundRecord* previous) {
    if (round == 1 && trim(insight).empty()) throw ConfigError("the first round needs a seed insight");
    std::string user = "Research direction: " + insight + "\n";
    std::string parent;
    if (previous) {
        if (previous->hypothesis) {
            parent = previous->hypothesis->id;
            user += "\nPrevious hypothesis:\n" + previous->hypothesis->text();
        }
        user += "\nFeedback from round " + std::to_string(previous->round) + ":\n" + previous->feedback + "\n";
        user += "\nRefine the hypothesis in light of this feedback.";
    } else {
        user += "\nPropose a seed hypothesis for this direction.";
    }

    ProviderRequest req;
    req.messages = {{"system", kIdeaSystem}, {"user", user}};
    req.tag = {round, Purpose::hypothesis, 0, 0, 0};
    std::string last_error;
    for (std::size_t retry = 0; retry <= ctx.config.format_retries; ++retry) {
        req.tag.retry = retry;
        const ProviderResponse res = ask(ctx, req);
        try {
            Hypothesis h = parse_hypothesis(res.text);
            h.id = "h" + std::to_string(round);
            h.parent_id = parent;
            return h;
        } catch (const FormatError& e) {
            last_error = e.what();
            req.messages.push_back({"assistant", res.text});
            req.messages.push_back({"user", std::string("That reply was malformed (") + e.what() +
                                                "). Answer again with all four labelled lines."});
        }
    }
    throw FormatError("hypothesis still malformed after " + std::to_string(ctx.config.format_retries) +
                      " retries: " + last_error);
}

std::vector<std::size_t> construct_factors(LoopContext& ctx, std::size_t round, const Hypothesis& h,
                                           const AlphaZoo& zoo, KnowledgeBase& kb,
                                           std::vector<CandidateRecord>& log) {
    const MiningConfig& cfg = ctx.config;
    const std::string system = factor_system();
    auto* provider_judge = dynamic_cast<ProviderJudge*>(&ctx.judge);
    std::vector<std::size_t> accepted;

    for (std::size_t cand = 0; cand < cfg.candidates; ++cand) {
        std::string previous_note;
        std::string previous_reply;
        for (std::size_t attempt = 0; attempt <= cfg.refine_budget; ++attempt) {
            CandidateRecord rec;
            rec.round = round;
            rec.candidate = cand;
            rec.attempt = attempt;

            ProviderRequest req;
            std::string user = "Hypothesis:\n" + h.text() + "\nWrite candidate " + std::to_string(cand + 1) + " of " +
                               std::to_string(cfg.candidates) + ". Use at most " +
                               std::to_string(cfg.reg.gate.max_symbolic_length) + " nodes and " +
                               std::to_string(cfg.reg.gate.max_param_count) +
                               " numeric parameters, and do not copy well-known alphas.";
            if (attempt > 0) {
                user += "\n\nYour previous attempt was:\n" + previous_reply + "\nIt was rejected because " +
                        previous_note + "\nWrite a corrected factor.";
            }
            req.messages = {{"system", system}, {"user", user}};
            req.tag = {round, attempt == 0 ? Purpose::factor : Purpose::refine, cand, attempt, 0};

            // Draft, re-asking on malformed replies.
            bool formatted = false;
            bool provider_down = false;
            for (std::size_t retry = 0; retry <= cfg.format_retries; ++retry) {
                req.tag.retry = retry;
                try {
                    rec.response = ask(ctx, req).text;
                } catch (const ProviderError& e) {
                    rec.error = std::string("provider: ") + e.what();
                    provider_down = true;
                    break;
                }
                try {
                    std::tie(rec.description, rec.expr_text) = parse_factor_reply(rec.response);
                    formatted = true;
                    break;
                } catch (const FormatError& e) {
                    rec.error = e.what();
                    req.messages.push_back({"assistant", rec.response});
                    req.messages.push_back({"user", std::string("That reply was malformed (") + e.what() +
                                                        "). Answer with the two labelled lines only."});
                }
            }
            if (formatted) {
                try {
                    rec.expr = parse(rec.expr_text);
                    rec.expr_text = print(rec.expr);
                    rec.error.clear();
                } catch (const DslError& e) {
                    rec.error = std::string("expression does not parse: ") + e.what();
                    formatted = false;
                }
            }
            if (!formatted) {
                rec.status = "execution-failure";
                rec.failure = FailureMode::execution_failure;
                kb.add_failure(rec, FailureMode::execution_failure, rec.error);
                previous_note = rejection_note(rec, cfg);
                previous_reply = rec.response;
                log.push_back(std::move(rec));
                if (provider_down) break;
                continue;
            }

            const FactorCandidate fc{h, rec.description, rec.expr};
            if (provider_judge) provider_judge->set_tag({round, Purpose::judge, cand, attempt, 0});
            try {
                rec.reg = total_reg(fc, zoo, ctx.judge, cfg.reg);
            } catch (const JudgeUnavailableError& e) {
                // Scored without a verdict: the gate rejects unjudged candidates.
                RegScore s;
                s.symbolic_length = symbolic_length(rec.expr);
                s.param_count = param_count(rec.expr);
                s.feature_count = feature_set(rec.expr).size();
                const SimilarityResult sim = originality(rec.expr, zoo, cfg.reg.subtree_mode);
                s.originality = sim.normalized;
                s.originality_raw = sim.raw;
                s.originality_match = sim.matched_name;
                s.judged = false;
                rec.reg = s;
                rec.error = e.what();
            }
            rec.gate = gate(*rec.reg, cfg.reg);
            if (rec.gate->pass()) {
                rec.status = "gated";
                accepted.push_back(log.size());
                log.push_back(std::move(rec));
                break;
            }
            const FailureMode mode = primary_failure(*rec.gate);
            rec.status = "gate-rejected";
            rec.failure = mode;
            kb.add_failure(rec, mode, rec.gate->describe());
            previous_note = rejection_note(rec, cfg);
            previous_reply = rec.response;
            log.push_back(std::move(rec));
        }
    }
    if (accepted.empty()) {
        throw NoViableCandidateError("no candidate passed the gate in round " + std::to_string(round));
    }
    return accepted;
}

// ---------------------------------------------------------------------------
// Evaluation

std::optional<double> baseline_icir(const MiningData& data, const MiningConfig& cfg) {
    const FeatureList base = data.base_features();
    const Combiner c = fit_combiner(base, data.train_labels, cfg.ridge_penalty);
    const ScoreMatrix s = score(c, base);
    try {
        return ic_metrics(s, data.labels, kMinCrossSection, data.valid_begin, data.valid_end).icir;
    } catch (const DegenerateError&) {
        return std::nullopt;
    }
}

namespace {

CandidateEval evaluate_one(const FactorExpr& expr, const MiningData& data, const MiningConfig& cfg) {
    const Matrix f = zscore_cross_section(evaluate(expr, data.dev));
    if (f.valid_count() == 0) throw Error("factor is missing on every date");
    FeatureList features = data.base_features();
    features.push_back(&f);
    const Combiner c = fit_combiner(features, data.train_labels, cfg.ridge_penalty);
    const ScoreMatrix s = score(c, features);
    CandidateEval ev;
    ev.coefficients = c.coefficients;
    ev.valid_ic = ic_metrics(s, data.labels, kMinCrossSection, data.valid_begin, data.valid_end);
    try {
        ev.factor_ic = ic_metrics(f, data.labels, kMinCrossSection, data.valid_begin, data.valid_end).mean_ic;
    } catch (const DegenerateError&) {
        ev.factor_ic = 0.0;
    }
    ev.report = simulate_topk_dropout(s, data.dev, cfg.strategy, {}, data.valid_begin, data.valid_end);
    ev.report.ic = ev.valid_ic;
    return ev;
}

} // namespace

void evaluate_candidates(std::vector<CandidateRecord>& log, const std::vector<std::size_t>& which,
                         const MiningData& data, const MiningConfig& cfg, std::optional<double> baseline,
                         KnowledgeBase& kb) {
    std::vector<std::optional<CandidateEval>> results(which.size());
    std::vector<std::string> errors(which.size());
    const auto n = static_cast<std::ptrdiff_t>(which.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        try {
            results[k] = evaluate_one(log[which[k]].expr, data, cfg);
        } catch (const std::exception& e) {
            errors[k] = e.what();
        }
    }
    const double floor = baseline.value_or(-std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < which.size(); ++k) {
        CandidateRecord& rec = log[which[k]];
        if (!results[k]) {
            rec.status = "execution-failure";
            rec.failure = FailureMode::execution_failure;
            rec.error = "evaluation failed: " + errors[k];
            kb.add_failure(rec, FailureMode::execution_failure, rec.error);
            continue;
        }
        rec.eval = std::move(results[k]);
        if (!(rec.icir() > floor)) {
            rec.status = "weak-performance";
            rec.failure = FailureMode::weak_performance;
            char buf[160];
            std::snprintf(buf, sizeof buf, "validation ICIR %.4f does not beat the base-alpha model (%.4f)",
                          rec.icir(), floor);
            kb.add_failure(rec, FailureMode::weak_performance, buf);
        } else {
            rec.status = "evaluated";
        }
    }
}

Feedback feedback(const std::vector<CandidateRecord>& log, const KnowledgeBase& kb, const MiningConfig& cfg,
                  std::size_t round) {
    Feedback fb;
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (log[i].status == "evaluated") fb.ranked.push_back(i);
    }
    auto key = [&](std::size_t i) { return log[i].icir() - cfg.reg.lambda * log[i].reg->total; };
    std::stable_sort(fb.ranked.begin(), fb.ranked.end(), [&](std::size_t a, std::size_t b) {
        const double ka = key(a), kb_ = key(b);
        if (ka != kb_) return ka > kb_;
        return log[a].reg->total < log[b].reg->total;
    });

    std::ostringstream out;
    out.precision(4);
    out << "Round " << round << " results.\n";
    auto line = [&](const char* label, const CandidateRecord& r) {
        out << label << r.expr_text << " (validation ICIR " << r.icir() << ", IC " << r.eval->valid_ic.mean_ic
            << ", AR " << r.eval->report.excess_return << ", R_g " << r.reg->total << ")\n";
    };
    if (!fb.ranked.empty()) {
        line("Best: ", log[fb.ranked.front()]);
        if (fb.ranked.size() > 1) line("Worst surviving: ", log[fb.ranked.back()]);
    } else {
        out << "No candidate beat the base-alpha model this round.\n";
    }
    std::map<std::string, std::size_t> verdicts;
    std::size_t weak = 0, broken = 0;
    for (const auto& r : log) {
        if (r.status == "gate-rejected") ++verdicts[r.gate->describe()];
        if (r.status == "weak-performance") ++weak;
        if (r.status == "execution-failure") ++broken;
    }
    if (!verdicts.empty()) {
        out << "Gate rejections:";
        for (const auto& [v, n] : verdicts) out << " " << v << " x" << n << ";";
        out << "\n";
    }
    if (weak) out << "Weak performers: " << weak << ".\n";
    if (broken) out << "Execution failures: " << broken << ".\n";
    out << kb.summary() << "\n";
    fb.text = out.str();
    return fb;
}

// ---------------------------------------------------------------------------
// Run directory

RunLog::RunLog(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw StorageError("cannot create run directory " + dir_.string() + ": " + ec.message());
    // Drop files from an earlier run in the same directory.
    for (const auto& entry : std::filesystem::directory_iterator(dir_, ec)) {
        const std::string name = entry.path().filename().string();
        if ((name.rfind("round_", 0) == 0 && entry.path().extension() == ".jsonl") || name == "summary.json") {
            std::filesystem::remove(entry.path(), ec);
        }
    }
}

void RunLog::write_file(const std::string& name, const std::string& body) {
    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    out << body;
    out.flush();
    if (!out) throw StorageError("cannot write " + (dir_ / name).string());
}

void RunLog::write_config(const nlohmann::json& config) { write_file("config.json", config.dump(2) + "\n"); }

void RunLog::write_round(const RoundRecord& r) {
    std::string body;
    for (const auto& c : r.candidates) body += to_json(c).dump() + "\n";
    body += round_summary_json(r).dump() + "\n";
    char name[32];
    std::snprintf(name, sizeof name, "round_%03zu.jsonl", r.round);
    write_file(name, body);
}

void RunLog::write_summary(const nlohmann::json& summary) { write_file("summary.json", summary.dump(2) + "\n"); }

std::vector<nlohmann::json> load_candidate_records(const std::filesystem::path& run_dir) {
    std::vector<std::filesystem::path> files;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(run_dir, ec)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("round_", 0) == 0 && entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    if (ec) throw StorageError("cannot read run directory " + run_dir.string());
    std::sort(files.begin(), files.end());
    std::vector<nlohmann::json> out;
    for (const auto& f : files) {
        std::ifstream in(f);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            if (j.value("type", "") == "candidate") out.push_back(std::move(j));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trial

FinalReport final_test_report(const std::vector<FactorExpr>& factors, MiningData& data, const MiningConfig& cfg) {
    // Fit on train with factor values from the dev panel.
    std::vector<Matrix> dev_factors;
    for (const auto& f : factors) dev_factors.push_back(zscore_cross_section(evaluate(f, data.dev)));
    FeatureList fit_features = data.base_features();
    for (const auto& m : dev_factors) fit_features.push_back(&m);
    const Combiner c = fit_combiner(fit_features, data.train_labels, cfg.ridge_penalty);

    data.test->unlock();
    const Panel& full = data.test->panel();
    const WindowedPanel w = window_with_warmup(full, data.split.test, cfg.warmup);
    std::vector<Matrix> test_features = zscored_base(w.panel);
    for (const auto& f : factors) test_features.push_back(zscore_cross_section(evaluate(f, w.panel)));
    FeatureList feats;
    for (const auto& m : test_features) feats.push_back(&m);
    const ScoreMatrix s = score(c, feats);
    const ReturnMatrix labels = next_day_returns(w.panel);

    FinalReport out;
    out.coefficients = c.coefficients;
    out.test_ic = ic_metrics(s, labels, kMinCrossSection, w.report_begin, w.panel.n_dates());
    out.report = simulate_topk_dropout(s, w.panel, cfg.strategy, {}, w.report_begin, w.panel.n_dates());
    out.report.ic = out.test_ic;
    return out;
}

nlohmann::json to_json(const TrialSummary& s, const MiningConfig& cfg) {
    nlohmann::json selected = nlohmann::json::array();
    for (const auto& f : s.selected) {
        selected.push_back({{"name", f.name},
                            {"round", f.round},
                            {"expr_text", f.expr_text},
                            {"ICIR", f.icir},
                            {"reg_score", to_json(f.reg)}});
    }
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& r : s.rounds) {
        rounds.push_back({{"round", r.round},
                          {"hypothesis", r.hypothesis ? nlohmann::json(r.hypothesis->id) : nlohmann::json(nullptr)},
                          {"candidates", r.candidates.size()},
                          {"survivors", r.ranked.size()},
                          {"zoo_size", r.zoo_size},
                          {"error", r.error}});
    }
    nlohmann::json test = nullptr;
    if (s.test) {
        test = to_json(s.test->report);
        test["coefficients"] = s.test->coefficients;
    }
    return {{"seed_insight", s.seed_insight},
            {"rounds", rounds},
            {"zoo_sizes", s.zoo_sizes},
            {"selected", selected},
            {"evaluated", s.evaluated},
            {"hit_ratio", opt_json(s.hit_ratio)},
            {"hit_threshold", cfg.hit_threshold},
            {"test", test},
            {"test_error", s.test_error},
            {"usage", to_json(s.usage)},
            {"isolation", {{"premature_test_reads", s.premature_test_reads}, {"test_reads", s.test_reads}}}};
}

TrialSummary run_trial(const std::string& seed_insight, const MiningConfig& cfg, MiningData& data,
                       Provider& provider, ConsistencyJudge& judge, AlphaZoo zoo, RunLog* log) {
    cfg.validate();
    if (trim(seed_insight).empty()) throw ConfigError("the first round needs a seed insight");
    TrialSummary sum;
    sum.seed_insight = seed_insight;
    KnowledgeBase kb;
    const std::optional<double> baseline = baseline_icir(data, cfg);

    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
        LoopContext ctx{provider, judge, cfg, {}};
        RoundRecord rr;
        rr.round = round;
        const RoundRecord* previous = sum.rounds.empty() ? nullptr : &sum.rounds.back();
        try {
            rr.hypothesis = propose_hypothesis(ctx, round, seed_insight, previous);
        } catch (const ProviderError& e) {
            rr.error = std::string("hypothesis: ") + e.what();
        } catch (const FormatError& e) {
            rr.error = std::string("hypothesis: ") + e.what();
        }

        if (rr.hypothesis) {
            std::vector<std::size_t> accepted;
            try {
                accepted = construct_factors(ctx, round, *rr.hypothesis, zoo, kb, rr.candidates);
            } catch (const NoViableCandidateError& e) {
                rr.error = e.what();
            }
            evaluate_candidates(rr.candidates, accepted, data, cfg, baseline, kb);
            Feedback fb = feedback(rr.candidates, kb, cfg, round);
            rr.ranked = std::move(fb.ranked);
            rr.feedback = std::move(fb.text);
            for (std::size_t i = 0; i < rr.ranked.size() && i < cfg.survivors_per_round; ++i) {
                CandidateRecord& rec = rr.candidates[rr.ranked[i]];
                rec.zoo_name = "r" + std::to_string(round) + "_c" + std::to_string(rec.candidate);
                rec.status = "selected";
                zoo.add(rec.zoo_name, rec.expr, "round " + std::to_string(round));
                kb.add_success(rec);
                sum.selected.push_back({rec.zoo_name, round, rec.expr_text, rec.expr, rec.icir(), *rec.reg});
            }
        } else {
            rr.feedback = "No hypothesis was produced in round " + std::to_string(round) + " (" + rr.error + ").\n";
        }
        rr.usage = ctx.usage;
        rr.zoo_size = zoo.size();
        sum.usage += rr.usage;
        sum.zoo_sizes.push_back(zoo.size());
        if (log) log->write_round(rr);
        sum.rounds.push_back(std::move(rr));
    }

    // Judge calls go through the judge's own counter.
    if (const auto* pj = dynamic_cast<const ProviderJudge*>(&judge)) sum.usage += pj->usage();

    std::vector<double> ars;
    for (const auto& r : sum.rounds)
        for (const auto& c : r.candidates)
            if (c.eval) ars.push_back(c.eval->report.excess_return);
    sum.evaluated = ars.size();
    if (!ars.empty()) sum.hit_ratio = hit_ratio(ars, cfg.hit_threshold);

    sum.premature_test_reads = data.test->premature_reads();
    std::vector<FactorExpr> factors;
    for (const auto& f : sum.selected) factors.push_back(f.expr);
    try {
        sum.test = final_test_report(factors, data, cfg);
    } catch (const StorageError&) {
        throw;
    } catch (const Error& e) {
        sum.test_error = e.what();
    }
    sum.test_reads = data.test->reads();
    if (log) log->write_summary(to_json(sum, cfg));
    return sum;
}

} // namespace alphamine
