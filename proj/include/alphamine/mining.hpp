#pragma once

// Closed mining loop: hypothesis -> gated factor candidates -> backtest ->
// feedback, repeated over rounds against a pluggable provider.

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alphamine/backtest.hpp"
#include "alphamine/hypothesis.hpp"
#include "alphamine/panel.hpp"
#include "alphamine/provider.hpp"
#include "alphamine/regularizer.hpp"
#include "alphamine/similarity.hpp"

namespace alphamine {

class NoViableCandidateError : public Error {
public:
    using Error::Error;
};

// Raised when test-split data is requested before the final summary.
class IsolationError : public Error {
public:
    using Error::Error;
};

struct MiningConfig {
    std::size_t rounds = 5;
    std::size_t candidates = 5;            // n per hypothesis
    std::size_t refine_budget = 3;         // refinements after the first draft
    std::size_t format_retries = 2;        // re-asks per malformed reply
    std::size_t survivors_per_round = 1;   // factors appended to the working zoo
    double ridge_penalty = 1.0;
    std::size_t warmup = 60;               // history prepended to evaluation windows
    double hit_threshold = 0.04;           // annualized excess return for the hit ratio
    RegConfig reg;
    StrategyConfig strategy;

    void validate() const;
};

// Strict: unknown keys raise ConfigError. Nested "regularizer" and "strategy".
MiningConfig mining_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MiningConfig& c);

// ---------------------------------------------------------------------------
// Data

// Owns the full panel and hands it out only after unlock(). Every request is
// counted; requests made while locked are also recorded as violations.
class TestSplitGuard {
public:
    explicit TestSplitGuard(Panel full) : full_(std::move(full)) {}

    const Panel& panel();
    void unlock() { unlocked_ = true; }
    bool unlocked() const { return unlocked_; }
    std::size_t premature_reads() const { return premature_; }
    std::size_t reads() const { return reads_; }

private:
    Panel full_;
    bool unlocked_ = false;
    std::size_t premature_ = 0;
    std::size_t reads_ = 0;
};

// Train and validation data used by the loop, plus the guarded full panel.
struct MiningData {
    SplitSpec split;
    Panel dev;                      // warm-up + train + valid dates, nothing later
    std::size_t train_begin = 0, train_end = 0;   // columns of dev
    std::size_t valid_begin = 0, valid_end = 0;
    ReturnMatrix labels;            // next-day returns on dev
    ReturnMatrix train_labels;      // labels outside the train columns masked
    std::vector<Matrix> base;       // z-scored base alphas on dev
    std::shared_ptr<TestSplitGuard> test;

    FeatureList base_features() const;
};

MiningData prepare_mining_data(Panel full, const SplitSpec& split, std::size_t warmup);

// ---------------------------------------------------------------------------
// Records

enum class FailureMode {
    hypothesis_misalignment,
    complexity_violation,
    originality_violation,
    execution_failure,
    weak_performance,
};

const char* failure_mode_name(FailureMode m);

struct CandidateEval {
    IcMetrics valid_ic;          // combined model score vs labels, validation dates
    double factor_ic = 0.0;      // standalone factor mean IC on validation dates
    std::vector<double> coefficients;
    BacktestReport report;       // validation-window top-k backtest
};

struct CandidateRecord {
    std::size_t round = 0;
    std::size_t candidate = 0;
    std::size_t attempt = 0;
    std::string response;        // raw provider reply
    std::string description;
    std::string expr_text;       // printed expression, empty when unparsable
    FactorExpr expr;
    std::optional<RegScore> reg;
    std::optional<GateVerdict> gate;
    std::optional<CandidateEval> eval;
    std::optional<FailureMode> failure;
    std::string error;
    std::string status;          // terminal: gate-rejected, execution-failure, weak-performance, evaluated, selected
    std::string zoo_name;        // set when appended to the working zoo

    double icir() const;         // validation ICIR; -inf when absent
};

nlohmann::json to_json(const CandidateRecord& r);

struct KnowledgeEntry {
    std::size_t round = 0;
    std::size_t candidate = 0;
    std::size_t attempt = 0;
    std::string expr_text;
    std::optional<FailureMode> failure;   // empty: success
    std::string detail;
};

class KnowledgeBase {
public:
    void add_success(const CandidateRecord& r);
    void add_failure(const CandidateRecord& r, FailureMode mode, std::string detail);
    const std::vector<KnowledgeEntry>& entries() const { return entries_; }
    std::size_t count(FailureMode m) const;
    std::size_t successes() const;
    // One line per failure mode with counts, plus recent successes.
    std::string summary() const;

private:
    std::vector<KnowledgeEntry> entries_;
};

struct RoundRecord {
    std::size_t round = 0;
    std::optional<Hypothesis> hypothesis;
    std::string error;                        // hypothesis or construction failure
    std::vector<CandidateRecord> candidates;  // every generated attempt
    std::vector<std::size_t> ranked;          // evaluated survivors, best first
    std::string feedback;
    TokenUsage usage;
    std::size_t zoo_size = 0;                 // working zoo after this round
};

nlohmann::json round_summary_json(const RoundRecord& r);

// ---------------------------------------------------------------------------
// Stages

struct LoopContext {
    Provider& provider;
    ConsistencyJudge& judge;
    const MiningConfig& config;
    TokenUsage usage;   // accumulated by the stages
};

// Parses "Description: ..." / "Expression: ..." replies. Throws FormatError.
std::pair<std::string, std::string> parse_factor_reply(const std::string& text);

// First round: `insight` must be non-empty. Later rounds pass the previous
// round (its hypothesis becomes the parent and its feedback is quoted).
Hypothesis propose_hypothesis(LoopContext& ctx, std::size_t round, const std::string& insight,
                              const RoundRecord* previous);

// Appends every attempt to `log`; returns indices into `log` of gated
// candidates. Throws NoViableCandidateError (after logging) if none passed.
std::vector<std::size_t> construct_factors(LoopContext& ctx, std::size_t round, const Hypothesis& h,
                                           const AlphaZoo& zoo, KnowledgeBase& kb,
                                           std::vector<CandidateRecord>& log);

// Baseline validation ICIR of the base alphas alone.
std::optional<double> baseline_icir(const MiningData& data, const MiningConfig& cfg);

// Fills eval/status/failure of the given records. Per-candidate errors are
// recorded, never thrown. Runs candidates in parallel; results land in their
// own slots so the outcome does not depend on scheduling.
void evaluate_candidates(std::vector<CandidateRecord>& log, const std::vector<std::size_t>& which,
                         const MiningData& data, const MiningConfig& cfg, std::optional<double> baseline,
                         KnowledgeBase& kb);

struct Feedback {
    std::string text;
    std::vector<std::size_t> ranked;   // indices into the log, best first
};

// Ranks evaluated survivors by ICIR - lambda * R_g (higher first), ties by
// lower R_g, then by position.
Feedback feedback(const std::vector<CandidateRecord>& log, const KnowledgeBase& kb, const MiningConfig& cfg,
                  std::size_t round);

// ---------------------------------------------------------------------------
// Trial

// Writes config.json, round_NNN.jsonl and summary.json. No timestamps, so
// identical runs produce identical bytes.
class RunLog {
public:
    explicit RunLog(std::filesystem::path dir);
    void write_config(const nlohmann::json& config);
    void write_round(const RoundRecord& r);
    void write_summary(const nlohmann::json& summary);
    const std::filesystem::path& dir() const { return dir_; }

private:
    void write_file(const std::string& name, const std::string& body);
    std::filesystem::path dir_;
};

// Every candidate line of every round file, in order.
std::vector<nlohmann::json> load_candidate_records(const std::filesystem::path& run_dir);

struct SelectedFactor {
    std::string name;
    std::size_t round = 0;
    std::string expr_text;
    FactorExpr expr;
    double icir = 0.0;
    RegScore reg;
};

struct FinalReport {
    std::vector<double> coefficients;   // base alphas first, then selected factors
    IcMetrics test_ic;
    BacktestReport report;
};

// Fits the combiner on train over base alphas + `factors`, then scores and
// backtests the test split. Unlocks and reads the guarded panel.
FinalReport final_test_report(const std::vector<FactorExpr>& factors, MiningData& data, const MiningConfig& cfg);

struct TrialSummary {
    std::string seed_insight;
    std::vector<RoundRecord> rounds;
    std::vector<SelectedFactor> selected;
    std::vector<std::size_t> zoo_sizes;   // after each round
    std::optional<double> hit_ratio;      // empty when no record has a report
    std::size_t evaluated = 0;
    std::optional<FinalReport> test;
    std::string test_error;
    TokenUsage usage;
    std::size_t premature_test_reads = 0;
    std::size_t test_reads = 0;
};

nlohmann::json to_json(const TrialSummary& s, const MiningConfig& cfg);

// Rounds run in order; each round's best survivors join the working zoo.
// Provider and construction failures are logged and the round moves on;
// StorageError aborts. The test split is touched once, at the end.
TrialSummary run_trial(const std::string& seed_insight, const MiningConfig& cfg, MiningData& data,
                       Provider& provider, ConsistencyJudge& judge, AlphaZoo zoo, RunLog* log = nullptr);

} // namespace alphamine
