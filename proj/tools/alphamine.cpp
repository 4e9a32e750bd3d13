// alphamine command-line front end. Exit codes: 0 ok, 1 runtime error,
// 2 usage / parse / configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "alphamine/backtest.hpp"
#include "alphamine/dsl.hpp"
#include "alphamine/eval.hpp"
#include "alphamine/mining.hpp"
#include "alphamine/panel.hpp"
#include "alphamine/provider.hpp"
#include "alphamine/regularizer.hpp"
#include "alphamine/similarity.hpp"
#include "alphamine/synthetic.hpp"

#ifndef ALPHAMINE_DATA_DIR
#define ALPHAMINE_DATA_DIR "data"
#endif

using namespace alphamine;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Errors that map to exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

struct ParseFailure {
    std::string source;
    DslError error;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

json read_json(const fs::path& p) {
    try {
        return json::parse(slurp(p));
    } catch (const json::parse_error& e) {
        throw ConfigError(p.string() + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << body;
    if (!out.flush()) throw StorageError("cannot write " + p.string());
}

void make_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw StorageError("cannot create " + p.string() + ": " + ec.message());
}

// "error: msg" plus the source with a caret under the span.
void report_parse_error(const std::string& text, const DslError& e, const std::string& where = {}) {
    std::cerr << "error: " << (where.empty() ? "" : where + ": ") << e.what() << "\n";
    const SourceSpan s = e.span();
    if (s.begin > text.size()) return;
    std::cerr << "  " << text << "\n  " << std::string(s.begin, ' ')
              << std::string(std::max<std::size_t>(1, std::min(s.end, text.size()) - s.begin), '^') << "\n";
}

std::string label(const Node& n) {
    char buf[64];
    switch (n.kind()) {
    case NodeKind::op: return n.op().name;
    case NodeKind::feature: return "$" + std::string(feature_name(n.feature()));
    case NodeKind::constant: std::snprintf(buf, sizeof buf, "%g", n.value()); return buf;
    }
    return "?";
}

void print_tree(const Node& n, std::size_t depth, std::ostream& out) {
    out << std::string(depth * 2, ' ') << label(n) << "\n";
    for (const auto& c : n.children()) print_tree(*c, depth + 1, out);
}

// Expression file, or a single inline expression when `arg` is not a file.
std::vector<std::pair<std::string, FactorExpr>> load_exprs(const std::string& arg, std::vector<ParseFailure>* bad) {
    std::vector<std::pair<std::string, FactorExpr>> out;
    if (!fs::is_regular_file(arg)) {
        out.emplace_back("expr", parse(arg));
        return out;
    }
    for (const auto& line : read_expression_file(arg)) {
        const std::string name = line.name.empty() ? "line" + std::to_string(line.line_no) : line.name;
        try {
            out.emplace_back(name, parse(line.text));
        } catch (const DslError& e) {
            if (!bad) throw;
            report_parse_error(line.text, e, arg + ":" + std::to_string(line.line_no));
            bad->push_back({name, e});
        }
    }
    return out;
}

SubtreeMode mode_from(const std::string& s) {
    if (s == "embedded") return SubtreeMode::embedded;
    if (s == "complete") return SubtreeMode::complete;
    throw UsageError("--mode must be embedded or complete");
}

std::string fmt(double v, const char* f = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------
// parse

int cmd_parse(const std::string& text, bool canonical) {
    FactorExpr e;
    try {
        e = parse(text);
    } catch (const DslError& err) {
        report_parse_error(text, err);
        return 2;
    }
    if (canonical) e = canonicalize(e);
    std::cout << print(e) << "\n";
    print_tree(e.root(), 0, std::cout);
    std::cout << "SL=" << symbolic_length(e) << " PC=" << param_count(e) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
    std::string exprs, zoo, hypothesis, config, judge = "stub", out, description, descriptions;
};

// `name: text` per line, `#` comments skipped.
std::map<std::string, std::string> read_descriptions(const std::string& path) {
    std::map<std::string, std::string> out;
    std::istringstream in(slurp(path));
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.empty() || line[0] == '#') continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos) throw ConfigError(path + ":" + std::to_string(n) + ": expected 'name: text'");
        std::string text = line.substr(colon + 1);
        text.erase(0, text.find_first_not_of(' '));
        out[line.substr(0, colon)] = text;
    }
    return out;
}

int cmd_score(const ScoreArgs& a) {
    const RegConfig cfg = a.config.empty() ? RegConfig{} : reg_config_from_json(read_json(a.config));
    Hypothesis h;
    if (!a.hypothesis.empty()) {
        h = parse_hypothesis(slurp(a.hypothesis));
    } else if (cfg.gate.consistency_gate) {
        throw ConfigError("the consistency gate is on: pass --hypothesis or disable it in the config");
    }
    const AlphaZoo zoo = load_zoo(a.zoo);

    std::unique_ptr<Provider> remote;
    std::unique_ptr<ConsistencyJudge> judge;
    if (a.judge == "remote") {
        remote = std::make_unique<RemoteProvider>(RemoteProvider::settings_from_env());
        judge = std::make_unique<ProviderJudge>(*remote);
    } else {
        judge = std::make_unique<StubJudge>();
    }

    const auto descriptions =
        a.descriptions.empty() ? std::map<std::string, std::string>{} : read_descriptions(a.descriptions);
    std::vector<ParseFailure> bad;
    const auto exprs = load_exprs(a.exprs, &bad);
    std::printf("%-14s %4s %4s %7s %7s %7s %8s  %s\n", "name", "SL", "PC", "S", "C", "ER", "R_g", "verdict");
    json rows = json::array();
    for (const auto& [name, expr] : exprs) {
        const auto d = descriptions.find(name);
        const std::string desc = d != descriptions.end() ? d->second : a.description;
        const RegScore s = total_reg({h, desc, expr}, zoo, *judge, cfg);
        const GateVerdict v = gate(s, cfg);
        std::printf("%-14s %4zu %4zu %7.4f %7.4f %7.4f %8.4f  %s\n", name.c_str(), s.symbolic_length,
                    s.param_count, s.originality, s.consistency, s.exploration, s.total, v.describe().c_str());
        rows.push_back({{"name", name}, {"expr_text", print(expr)}, {"reg_score", to_json(s)},
                        {"verdict", v.describe()}});
    }
    if (!a.out.empty()) write_text(a.out, rows.dump(2) + "\n");
    return bad.empty() ? 0 : 2;
}

// ---------------------------------------------------------------------------
// similarity

int cmd_similarity(const std::string& a, const std::string& b, const std::string& mode_text) {
    const SubtreeMode mode = mode_from(mode_text);
    const auto qs = load_exprs(a, nullptr);
    const auto os = load_exprs(b, nullptr);
    std::printf("%-14s %-14s %5s %5s %7s\n", "query", "other", "raw", "size", "S_norm");
    for (const auto& [qn, q] : qs) {
        SimilarityResult best;
        std::string best_name;
        const FactorExpr cq = canonicalize(q);
        for (const auto& [on, o] : os) {
            SimilarityResult r = pairwise_similarity(cq, canonicalize(o), mode);
            std::printf("%-14s %-14s %5zu %5zu %7.4f\n", qn.c_str(), on.c_str(), r.raw, r.query_size,
                        r.normalized);
            if (best_name.empty() || r.raw > best.raw) {
                best = std::move(r);
                best_name = on;
            }
        }
        const auto qn_nodes = preorder(cq.root());
        std::cout << "best " << qn << " ~ " << best_name << ":";
        for (const auto& p : best.witness) std::cout << " " << p.query << ":" << label(*qn_nodes[p.query]) << "=" << p.other;
        std::cout << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// ingest / eval / synth

int cmd_ingest(const std::string& panel_path, const std::string& out) {
    const Panel p = load_csv(panel_path);
    std::size_t present = 0;
    for (std::size_t s = 0; s < p.n_symbols(); ++s)
        for (std::size_t t = 0; t < p.n_dates(); ++t) present += p.present(s, t) ? 1 : 0;
    std::cout << "symbols " << p.n_symbols() << "\ndates " << p.n_dates() << "\nfirst "
              << (p.n_dates() ? format_date(p.dates.front()) : "-") << "\nlast "
              << (p.n_dates() ? format_date(p.dates.back()) : "-") << "\nmissing cells "
              << p.n_symbols() * p.n_dates() - present << "\n";
    if (!out.empty()) write_csv(p, fs::path(out));
    return 0;
}

int cmd_eval(const std::string& panel_path, const std::string& expr_text, bool zscore, bool serial,
             const std::string& out) {
    const Panel p = load_csv(panel_path);
    FactorExpr e;
    try {
        e = parse(expr_text);
    } catch (const DslError& err) {
        report_parse_error(expr_text, err);
        return 2;
    }
    const EvalOptions opts{!serial};
    Matrix m = evaluate(e, p, opts);
    if (zscore) m = zscore_cross_section(m, opts);
    if (out.empty()) {
        write_factor_csv(m, p, std::cout);
    } else {
        std::ostringstream s;
        write_factor_csv(m, p, s);
        write_text(out, s.str());
    }
    return 0;
}

json to_json(const SyntheticSpec& s) {
    return {{"symbols", s.symbols}, {"days", s.days}, {"seed", s.seed}, {"planted_expr", s.planted_expr},
            {"return_scale", s.return_scale}, {"noise_ratio", s.noise_ratio},
            {"volume_persistence", s.volume_persistence}, {"start_date", s.start_date}};
}

SyntheticSpec synthetic_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("synthetic must be an object");
    SyntheticSpec s;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        try {
            if (k == "symbols") s.symbols = it->get<std::size_t>();
            else if (k == "days") s.days = it->get<std::size_t>();
            else if (k == "seed") s.seed = it->get<std::uint64_t>();
            else if (k == "planted_expr") s.planted_expr = it->get<std::string>();
            else if (k == "return_scale") s.return_scale = it->get<double>();
            else if (k == "noise_ratio") s.noise_ratio = it->get<double>();
            else if (k == "volume_persistence") s.volume_persistence = it->get<double>();
            else if (k == "start_date") s.start_date = it->get<std::string>();
            else throw ConfigError("unknown key '" + k + "' in synthetic");
        } catch (const json::exception& e) {
            throw ConfigError("bad value for synthetic." + k + ": " + e.what());
        }
    }
    return s;
}

int cmd_synth(const SyntheticSpec& spec, const std::string& out) {
    const Panel p = make_synthetic_panel(spec);
    write_csv(p, fs::path(out));
    std::cout << "wrote " << p.n_symbols() << " symbols x " << p.n_dates() << " dates to " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// backtest

struct BacktestArgs {
    std::string panel, factors, config, out;
};

int cmd_backtest(BacktestArgs a) {
    json cfg_in = a.config.empty() ? json::object() : read_json(a.config);
    if (!cfg_in.is_object()) throw ConfigError("backtest config must be an object");
    StrategyConfig strategy;
    std::string combiner = "equal_weight", fit_until, title = "top-k dropout";
    double penalty = 1.0;
    bool with_base = false;
    for (auto it = cfg_in.begin(); it != cfg_in.end(); ++it) {
        const std::string& k = it.key();
        try {
            if (k == "strategy") strategy = strategy_config_from_json(*it);
            else if (k == "combiner") combiner = it->get<std::string>();
            else if (k == "ridge_penalty") penalty = it->get<double>();
            else if (k == "fit_until") fit_until = it->get<std::string>();
            else if (k == "base_alphas") with_base = it->get<bool>();
            else if (k == "title") title = it->get<std::string>();
            else if (k == "panel") { if (a.panel.empty()) a.panel = it->get<std::string>(); }
            else if (k == "factors") { if (a.factors.empty()) a.factors = it->get<std::string>(); }
            else if (k == "command") continue;
            else throw ConfigError("unknown key '" + k + "' in backtest config");
        } catch (const json::exception& e) {
            throw ConfigError("bad value for " + k + ": " + e.what());
        }
    }
    if (a.panel.empty() || a.factors.empty()) throw UsageError("backtest needs --panel and --factors");
    if (combiner != "equal_weight" && combiner != "ridge") throw ConfigError("combiner must be equal_weight or ridge");
    if (combiner == "ridge" && fit_until.empty()) throw ConfigError("the ridge combiner needs fit_until");

    const Panel p = load_csv(a.panel);
    strategy.validate(p.n_symbols());
    std::vector<ParseFailure> bad;
    const auto exprs = load_exprs(a.factors, &bad);
    if (!bad.empty()) return 2;
    if (exprs.empty()) throw ConfigError("no factors in " + a.factors);

    std::vector<Matrix> feats;
    if (with_base) {
        const BaseAlphas b = base_alphas(p);
        for (const Matrix* m : b.all()) feats.push_back(zscore_cross_section(*m));
    }
    for (const auto& [name, e] : exprs) feats.push_back(zscore_cross_section(evaluate(e, p)));
    FeatureList fl;
    for (const auto& m : feats) fl.push_back(&m);

    const ReturnMatrix labels = next_day_returns(p);
    std::size_t report_begin = 0;
    Combiner c;
    if (combiner == "ridge") {
        report_begin = date_span(p, DateRange{parse_date(fit_until), p.dates.back() + std::chrono::days(1)}).first;
        Matrix train = labels;
        for (std::size_t r = 0; r < train.rows(); ++r)
            for (std::size_t t = report_begin; t < train.cols(); ++t) train.set_missing(r, t);
        c = fit_combiner(fl, train, penalty);
    } else {
        c = equal_weight_combiner(fl.size());
    }
    const ScoreMatrix s = score(c, fl);
    BacktestReport rep = simulate_topk_dropout(s, p, strategy, {}, report_begin, p.n_dates());
    try {
        rep.ic = ic_metrics(s, labels, kMinCrossSection, report_begin, p.n_dates());
    } catch (const DegenerateError& e) {
        std::cerr << "warning: no IC: " << e.what() << "\n";
    }

    const fs::path out(a.out);
    make_dir(out);
    json snapshot{{"command", "backtest"}, {"panel", a.panel}, {"factors", a.factors},
                  {"strategy", to_json(strategy)}, {"combiner", combiner}, {"ridge_penalty", penalty},
                  {"base_alphas", with_base}, {"title", title}};
    if (!fit_until.empty()) snapshot["fit_until"] = fit_until;
    write_text(out / "config.json", snapshot.dump(2) + "\n");
    json report = alphamine::to_json(rep);
    report["coefficients"] = c.coefficients;
    write_text(out / "report.json", report.dump(2) + "\n");
    std::ostringstream csv, svg;
    write_equity_csv(rep, csv);
    write_equity_svg(rep, svg, title);
    write_text(out / "equity.csv", csv.str());
    write_text(out / "equity.svg", svg.str());

    std::cout << "dates " << rep.dates.size() << "\nAR " << fmt(rep.excess_return) << "\nIR "
              << fmt(rep.information_ratio) << "\nMDD " << fmt(rep.max_drawdown) << "\nstrategy "
              << fmt(rep.annualized_return) << "\nbenchmark " << fmt(rep.benchmark_return);
    if (rep.ic) std::cout << "\nIC " << fmt(rep.ic->mean_ic) << "\nRankIC " << fmt(rep.ic->mean_rank_ic);
    std::cout << "\nwrote " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// mine

struct MineArgs {
    std::string seed_insight, provider, config, out, panel, zoo, fixtures;
    std::optional<std::size_t> rounds, trials;
    std::optional<std::uint64_t> seed;
};

json split_json(const SplitSpec& s) {
    auto r = [](const DateRange& d) { return json::array({format_date(d.begin), format_date(d.end)}); };
    return {{"train", r(s.train)}, {"valid", r(s.valid)}, {"test", r(s.test)}};
}

SplitSpec split_from_json(const json& j) {
    auto r = [&](const char* k) {
        if (!j.contains(k) || !j[k].is_array() || j[k].size() != 2) {
            throw ConfigError(std::string("split.") + k + " must be [begin, end]");
        }
        return DateRange{parse_date(j[k][0].get<std::string>()), parse_date(j[k][1].get<std::string>())};
    };
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "train" && it.key() != "valid" && it.key() != "test")
            throw ConfigError("unknown key '" + it.key() + "' in split");
    return {r("train"), r("valid"), r("test")};
}

SplitSpec default_split(const Panel& p) {
    const std::size_t n = p.n_dates();
    if (n < 5) throw ConfigError("panel too short for a default split");
    const Date a = p.dates[0], b = p.dates[n * 6 / 10], c = p.dates[n * 8 / 10];
    return {{a, b}, {b, c}, {c, p.dates.back() + std::chrono::days(1)}};
}

void print_trial(const TrialSummary& s) {
    std::printf("%5s %-5s %10s %9s %8s %4s\n", "round", "hyp", "candidates", "evaluated", "selected", "zoo");
    for (const auto& r : s.rounds) {
        std::size_t evaluated = 0, selected = 0;
        for (const auto& c : r.candidates) {
            evaluated += c.eval ? 1 : 0;
            selected += c.zoo_name.empty() ? 0 : 1;
        }
        std::printf("%5zu %-5s %10zu %9zu %8zu %4zu\n", r.round, r.hypothesis ? r.hypothesis->id.c_str() : "-",
                    r.candidates.size(), evaluated, selected, r.zoo_size);
    }
    for (const auto& f : s.selected)
        std::printf("selected %s ICIR=%.4f R_g=%.4f %s\n", f.name.c_str(), f.icir, f.reg.total, f.expr_text.c_str());
    if (s.hit_ratio) std::printf("hit ratio %.4f over %zu evaluated\n", *s.hit_ratio, s.evaluated);
    else std::printf("hit ratio n/a (nothing evaluated)\n");
    if (s.test)
        std::printf("test IC=%.4f RankIC=%.4f AR=%.4f IR=%.4f MDD=%.4f\n", s.test->test_ic.mean_ic,
                    s.test->test_ic.mean_rank_ic, s.test->report.excess_return, s.test->report.information_ratio,
                    s.test->report.max_drawdown);
    else if (!s.test_error.empty())
        std::printf("test n/a: %s\n", s.test_error.c_str());
    std::printf("tokens %zu\n", s.usage.total());
}

int cmd_mine(MineArgs a) {
    json cfg = a.config.empty() ? json::object() : read_json(a.config);
    if (!cfg.is_object()) throw ConfigError("mine config must be an object");
    MiningConfig mining;
    std::optional<SyntheticSpec> synth;
    std::optional<SplitSpec> split;
    std::string insight, provider = "stub", panel, zoo, fixtures;
    std::uint64_t seed = 7;
    std::size_t trials = 1;
    bool fixtures_set = false;
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        const std::string& k = it.key();
        try {
            if (k == "mining") mining = mining_config_from_json(*it);
            else if (k == "synthetic") synth = synthetic_from_json(*it);
            else if (k == "split") split = split_from_json(*it);
            else if (k == "seed_insight") insight = it->get<std::string>();
            else if (k == "provider") provider = it->get<std::string>();
            else if (k == "panel") panel = it->is_null() ? "" : it->get<std::string>();
            else if (k == "zoo") zoo = it->get<std::string>();
            else if (k == "fixtures") { fixtures = it->is_null() ? "" : it->get<std::string>(); fixtures_set = true; }
            else if (k == "seed") seed = it->get<std::uint64_t>();
            else if (k == "trials") trials = it->get<std::size_t>();
            else if (k == "command") continue;
            else throw ConfigError("unknown key '" + k + "' in mine config");
        } catch (const json::exception& e) {
            throw ConfigError("bad value for " + k + ": " + e.what());
        }
    }
    // flags win over the file
    if (!a.seed_insight.empty()) insight = a.seed_insight;
    if (!a.provider.empty()) provider = a.provider;
    if (!a.panel.empty()) panel = a.panel;
    if (!a.zoo.empty()) zoo = a.zoo;
    if (!a.fixtures.empty()) { fixtures = a.fixtures == "none" ? "" : a.fixtures; fixtures_set = true; }
    if (a.seed) seed = *a.seed;
    if (a.trials) trials = *a.trials;
    if (a.rounds) mining.rounds = *a.rounds;
    if (zoo.empty()) zoo = (fs::path(ALPHAMINE_DATA_DIR) / "zoo_alpha101.txt").string();
    if (!fixtures_set && provider == "stub") fixtures = (fs::path(ALPHAMINE_DATA_DIR) / "stub_provider.json").string();
    mining.validate();
    if (insight.empty()) throw UsageError("--seed-insight is required");
    if (trials == 0) throw ConfigError("trials must be >= 1");
    if (provider != "stub" && provider != "remote") throw UsageError("--provider must be stub or remote");

    // Resolve everything that can fail before any output is written.
    std::unique_ptr<RemoteProvider> remote;
    if (provider == "remote") remote = std::make_unique<RemoteProvider>(RemoteProvider::settings_from_env());
    json fixture_table = fixtures.empty() ? json::object() : read_json(fixtures);
    StubProvider(seed, fixture_table);   // validates the table

    if (panel.empty() && !synth) synth = SyntheticSpec{};
    const Panel full = panel.empty() ? make_synthetic_panel(*synth) : load_csv(panel);
    if (!split) split = default_split(full);
    const AlphaZoo base_zoo = load_zoo(zoo);

    json snapshot{{"command", "mine"}, {"seed_insight", insight}, {"provider", provider}, {"seed", seed},
                  {"trials", trials}, {"zoo", zoo}, {"fixtures", fixtures.empty() ? json(nullptr) : json(fixtures)},
                  {"split", split_json(*split)}, {"mining", to_json(mining)}};
    if (panel.empty()) snapshot["synthetic"] = to_json(*synth);
    else snapshot["panel"] = panel;
    if (remote) snapshot["remote_model"] = RemoteProvider::settings_from_env().model;

    const fs::path out(a.out);
    make_dir(out);
    write_text(out / "config.json", snapshot.dump(2) + "\n");

    std::vector<SelectedFactor> pooled;
    std::size_t survivors = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::uint64_t trial_seed = seed + t;
        MiningData data = prepare_mining_data(full, *split, mining.warmup);
        StubProvider stub(trial_seed, fixture_table);
        Provider& prov = remote ? static_cast<Provider&>(*remote) : static_cast<Provider&>(stub);
        StubJudge stub_judge;
        ProviderJudge remote_judge(prov);
        ConsistencyJudge& judge = remote ? static_cast<ConsistencyJudge&>(remote_judge)
                                         : static_cast<ConsistencyJudge&>(stub_judge);
        char dir[32];
        std::snprintf(dir, sizeof dir, "trial_%02zu", t + 1);
        RunLog log(trials == 1 ? out : out / dir);
        const TrialSummary s = run_trial(insight, mining, data, prov, judge, base_zoo, &log);
        if (trials > 1) std::printf("== trial %zu (seed %llu)\n", t + 1, static_cast<unsigned long long>(trial_seed));
        print_trial(s);
        survivors += s.selected.size();
        pooled.insert(pooled.end(), s.selected.begin(), s.selected.end());
    }

    if (trials > 1 && !pooled.empty()) {
        // Union of every trial's selections, refit once on train.
        std::set<std::string> seen;
        std::vector<FactorExpr> exprs;
        json names = json::array();
        for (const auto& f : pooled) {
            const std::string key = print(canonicalize(f.expr));
            if (!seen.insert(key).second) continue;
            exprs.push_back(f.expr);
            names.push_back({{"name", f.name}, {"expr_text", f.expr_text}});
        }
        MiningData data = prepare_mining_data(full, *split, mining.warmup);
        const FinalReport rep = final_test_report(exprs, data, mining);
        json agg{{"factors", names}, {"coefficients", rep.coefficients}, {"test", to_json(rep.report)}};
        write_text(out / "aggregate.json", agg.dump(2) + "\n");
        std::printf("aggregate of %zu factors: test IC=%.4f AR=%.4f IR=%.4f\n", exprs.size(), rep.test_ic.mean_ic,
                    rep.report.excess_return, rep.report.information_ratio);
    }
    return survivors > 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"alphamine: formulaic alpha factors, scoring, backtests and the mining loop"};
    app.require_subcommand(1);

    std::string expr_text;
    bool canonical = false;
    auto* parse_cmd = app.add_subcommand("parse", "Parse an expression, print its tree and SL/PC");
    parse_cmd->add_option("expr", expr_text, "factor expression")->required();
    parse_cmd->add_flag("--canonical", canonical, "print the canonical form");

    ScoreArgs score_args;
    auto* score_cmd = app.add_subcommand("score", "Regularizer scores and gate verdicts for expressions");
    score_cmd->add_option("exprs", score_args.exprs, "expression file (or one inline expression)")->required();
    score_cmd->add_option("--zoo", score_args.zoo, "alpha zoo file")->required();
    score_cmd->add_option("--hypothesis", score_args.hypothesis, "hypothesis text file");
    score_cmd->add_option("--config", score_args.config, "regularizer config JSON");
    score_cmd->add_option("--judge", score_args.judge, "stub or remote")->check(CLI::IsMember({"stub", "remote"}));
    score_cmd->add_option("--out", score_args.out, "also write rows as JSON");
    score_cmd->add_option("--description", score_args.description, "description used for every expression");
    score_cmd->add_option("--descriptions", score_args.descriptions, "file of 'name: description' lines");

    std::string sim_a, sim_b, sim_mode = "embedded";
    auto* sim_cmd = app.add_subcommand("similarity", "Subtree similarity between two expression sets");
    sim_cmd->add_option("a", sim_a, "query expressions (file or inline)")->required();
    sim_cmd->add_option("b", sim_b, "reference expressions (file or inline)")->required();
    sim_cmd->add_option("--mode", sim_mode, "embedded or complete subtrees");

    std::string ingest_panel, ingest_out;
    auto* ingest_cmd = app.add_subcommand("ingest", "Load and validate an OHLCV panel CSV");
    ingest_cmd->add_option("--panel", ingest_panel, "panel CSV")->required();
    ingest_cmd->add_option("--out", ingest_out, "rewrite the aligned panel here");

    std::string eval_panel, eval_expr, eval_out;
    bool eval_z = false, eval_serial = false;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate an expression on a panel (date x symbol CSV)");
    eval_cmd->add_option("--panel", eval_panel, "panel CSV")->required();
    eval_cmd->add_option("--expr", eval_expr, "factor expression")->required();
    eval_cmd->add_flag("--zscore", eval_z, "cross-sectional z-score the output");
    eval_cmd->add_flag("--serial", eval_serial, "single-threaded kernels");
    eval_cmd->add_option("--out", eval_out, "output CSV (default stdout)");

    BacktestArgs bt;
    auto* bt_cmd = app.add_subcommand("backtest", "Top-k dropout backtest of factor files");
    bt_cmd->add_option("--panel", bt.panel, "panel CSV");
    bt_cmd->add_option("--factors", bt.factors, "expression file");
    bt_cmd->add_option("--config", bt.config, "backtest config JSON (or a previous config.json)");
    bt_cmd->add_option("--out", bt.out, "output directory")->required();

    MineArgs mine;
    std::size_t mine_rounds = 0, mine_trials = 0;
    std::uint64_t mine_seed = 0;
    auto* mine_cmd = app.add_subcommand("mine", "Run the hypothesis -> factor -> backtest loop");
    mine_cmd->add_option("--seed-insight", mine.seed_insight, "research direction for round 1");
    auto* rounds_opt = mine_cmd->add_option("--rounds", mine_rounds, "number of rounds");
    mine_cmd->add_option("--provider", mine.provider, "stub or remote")->check(CLI::IsMember({"stub", "remote"}));
    mine_cmd->add_option("--config", mine.config, "mine config JSON (or a previous config.json)");
    mine_cmd->add_option("--out", mine.out, "run directory")->required();
    auto* seed_opt = mine_cmd->add_option("--seed", mine_seed, "stub provider seed");
    auto* trials_opt = mine_cmd->add_option("--trials", mine_trials, "independent trials, pooled at the end");
    mine_cmd->add_option("--panel", mine.panel, "panel CSV (default: built-in synthetic panel)");
    mine_cmd->add_option("--zoo", mine.zoo, "alpha zoo file");
    mine_cmd->add_option("--fixtures", mine.fixtures, "stub fixture JSON, or 'none'");

    SyntheticSpec synth;
    std::string synth_out;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic planted-signal panel");
    synth_cmd->add_option("--out", synth_out, "output CSV")->required();
    synth_cmd->add_option("--symbols", synth.symbols, "number of symbols");
    synth_cmd->add_option("--days", synth.days, "number of weekdays");
    synth_cmd->add_option("--seed", synth.seed, "random seed");
    synth_cmd->add_option("--planted", synth.planted_expr, "volume-only expression driving returns ('' for none)");
    synth_cmd->add_option("--noise-ratio", synth.noise_ratio, "noise std relative to signal std");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*parse_cmd) return cmd_parse(expr_text, canonical);
        if (*score_cmd) return cmd_score(score_args);
        if (*sim_cmd) return cmd_similarity(sim_a, sim_b, sim_mode);
        if (*ingest_cmd) return cmd_ingest(ingest_panel, ingest_out);
        if (*eval_cmd) return cmd_eval(eval_panel, eval_expr, eval_z, eval_serial, eval_out);
        if (*bt_cmd) return cmd_backtest(bt);
        if (*mine_cmd) {
            if (*rounds_opt) mine.rounds = mine_rounds;
            if (*seed_opt) mine.seed = mine_seed;
            if (*trials_opt) mine.trials = mine_trials;
            return cmd_mine(mine);
        }
        if (*synth_cmd) return cmd_synth(synth, synth_out);
    } catch (const DslError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ExprFileError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
