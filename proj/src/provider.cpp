#include "alphamine/provider.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#ifdef ALPHAMINE_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

namespace alphamine {

const char* purpose_name(Purpose p) {
    switch (p) {
    case Purpose::hypothesis: return "hypothesis";
    case Purpose::factor: return "factor";
    case Purpose::refine: return "refine";
    case Purpose::judge: return "judge";
    }
    return "?";
}

nlohmann::json to_json(const TokenUsage& u) {
    return {{"prompt", u.prompt}, {"completion", u.completion}, {"total", u.total()}};
}

std::size_t count_words(const std::string& text) {
    std::istringstream in(text);
    std::size_t n = 0;
    std::string w;
    while (in >> w) ++n;
    return n;
}

namespace {

TokenUsage usage_of(const ProviderRequest& req, const std::string& reply) {
    TokenUsage u;
    for (const auto& m : req.messages) u.prompt += count_words(m.content);
    u.completion = count_words(reply);
    return u;
}

// FNV-1a over the seed and the tag fields; stable across platforms.
std::uint64_t tag_hash(std::uint64_t seed, const RequestTag& tag) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    };
    mix(seed);
    mix(tag.round);
    mix(static_cast<std::uint64_t>(tag.purpose));
    mix(tag.candidate);
    mix(tag.attempt);
    mix(tag.retry);
    return h;
}

template <class T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

// Plain-language wording the procedural factor writer uses per operator.
const std::map<std::string, std::string>& op_phrases() {
    static const std::map<std::string, std::string> m{
        {"ADD", "sum"},           {"SUB", "difference"},         {"MUL", "product"},
        {"DIV", "ratio"},         {"ABS", "absolute size"},      {"LOG", "log"},
        {"SIGN", "sign"},         {"POW", "power"},              {"NEG", "negative"},
        {"TS_MIN", "rolling minimum"}, {"TS_MAX", "rolling maximum"}, {"TS_SUM", "cumulative total"},
        {"SMA", "moving average"}, {"EMA", "exponential average"}, {"TS_STD", "volatility"},
        {"TS_RANK", "percentile"}, {"TS_CORR", "correlation"},   {"DELAY", "lagged level"},
        {"DELTA", "change"},      {"RANK", "rank"},              {"ZSCORE", "standardized level"},
        {"IF", "conditional"},    {"GT", "above"},               {"LT", "below"},
    };
    return m;
}

const char* feature_word(Feature f) {
    switch (f) {
    case Feature::open: return "open";
    case Feature::high: return "highs";
    case Feature::low: return "lows";
    case Feature::close: return "close";
    case Feature::volume: return "volume";
    }
    return "?";
}

class ExprWriter {
public:
    explicit ExprWriter(std::mt19937_64& rng) : rng_(rng) {}

    NodePtr make(int depth) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        if (depth == 0 || (depth < 3 && u(rng_) < 0.3)) return feature();
        const double r = u(rng_);
        if (r < 0.25) {
            static const std::vector<std::string> unary{"ABS", "LOG", "SIGN", "NEG", "RANK", "ZSCORE"};
            return op(pick(rng_, unary), {make(depth - 1)});
        }
        if (r < 0.7) {
            static const std::vector<std::string> rolling{"TS_MIN", "TS_MAX", "TS_SUM", "SMA",  "EMA",
                                                          "TS_STD", "TS_RANK", "DELAY", "DELTA"};
            return op(pick(rng_, rolling), {make(depth - 1), window()});
        }
        if (r < 0.9) {
            static const std::vector<std::string> binary{"ADD", "SUB", "MUL", "DIV"};
            return op(pick(rng_, binary), {make(depth - 1), make(depth - 1)});
        }
        return op("TS_CORR", {make(depth - 1), make(depth - 1), window()});
    }

private:
    NodePtr feature() {
        static const std::vector<Feature> fs{Feature::open, Feature::high, Feature::low, Feature::close,
                                             Feature::volume};
        return Node::make_feature(pick(rng_, fs));
    }
    NodePtr window() {
        static const std::vector<double> ws{2, 3, 5, 10, 20};
        return Node::make_const(pick(rng_, ws));
    }
    NodePtr op(const std::string& name, std::vector<NodePtr> kids) {
        return Node::make_op(*find_operator(name), std::move(kids));
    }

    std::mt19937_64& rng_;
};

std::string describe(const FactorExpr& e) {
    std::vector<std::string> phrases;
    for (const Node* n : preorder(e.root())) {
        if (!n->is_op()) continue;
        const std::string& p = op_phrases().at(n->op().name);
        if (std::find(phrases.begin(), phrases.end(), p) == phrases.end()) phrases.push_back(p);
    }
    std::string out = "Tracks the ";
    for (std::size_t i = 0; i < phrases.size(); ++i) out += (i ? ", " : "") + phrases[i];
    out += phrases.empty() ? "raw level of " : " of ";
    const auto feats = feature_set(e);
    std::size_t i = 0;
    for (Feature f : feats) out += std::string(i++ ? " and " : "") + feature_word(f);
    return out + ".";
}

std::string topic_of(const ProviderRequest& req) {
    for (auto it = req.messages.rbegin(); it != req.messages.rend(); ++it) {
        if (it->role != "user") continue;
        std::istringstream in(it->content);
        std::string line;
        while (std::getline(in, line)) {
            const auto colon = line.find(':');
            if (colon != std::string::npos && line.substr(0, colon) == "Research direction") {
                return line.substr(colon + 1);
            }
        }
    }
    return " price and volume dynamics";
}

} // namespace

StubProvider::StubProvider(std::uint64_t seed, nlohmann::json fixtures) : seed_(seed), fixtures_(std::move(fixtures)) {
    if (!fixtures_.is_object()) throw ConfigError("stub fixtures must be a JSON object");
    for (auto it = fixtures_.begin(); it != fixtures_.end(); ++it) {
        const std::string& k = it.key();
        if (k != "hypothesis" && k != "factor" && k != "refine" && k != "judge" && k != "_comment") {
            throw ConfigError("unknown key '" + k + "' in stub fixtures");
        }
    }
}

StubProvider StubProvider::from_file(const std::filesystem::path& path, std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open stub fixture file " + path.string());
    try {
        return StubProvider(seed, nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("stub fixture file " + path.string() + ": " + e.what());
    }
}

std::string StubProvider::fixture_text(const RequestTag& tag) const {
    const auto table = fixtures_.find(purpose_name(tag.purpose));
    if (table == fixtures_.end()) return {};
    const std::string round = std::to_string(tag.round);
    const std::string cell = round + ":" + std::to_string(tag.candidate);
    auto by_index = [](const nlohmann::json& v, std::size_t i) -> std::string {
        if (v.is_string()) return i == 0 ? v.get<std::string>() : std::string{};
        if (v.is_array() && i < v.size() && v[i].is_string()) return v[i].get<std::string>();
        return {};
    };
    switch (tag.purpose) {
    case Purpose::hypothesis:
        if (auto it = table->find(round); it != table->end()) return by_index(*it, tag.retry);
        break;
    case Purpose::factor:
        if (tag.attempt > 0 || tag.retry > 0) break;
        if (auto it = table->find(round); it != table->end()) return by_index(*it, tag.candidate);
        break;
    case Purpose::refine:
        if (tag.retry > 0 || tag.attempt == 0) break;
        if (auto it = table->find(cell); it != table->end()) return by_index(*it, tag.attempt - 1);
        break;
    case Purpose::judge:
        if (auto it = table->find(cell); it != table->end()) return by_index(*it, 0);
        break;
    }
    return {};
}

std::string StubProvider::procedural(const ProviderRequest& req) const {
    std::mt19937_64 rng(tag_hash(seed_, req.tag));
    switch (req.tag.purpose) {
    case Purpose::hypothesis: {
        static const std::vector<std::string> knowledge{
            "Liquidity shocks are absorbed by prices with a delay.",
            "Investors underreact to gradual information flow.",
            "Crowded trades revert once the flows behind them fade.",
            "Volatility clusters and mean reverts over a few weeks.",
        };
        static const std::vector<std::string> justification{
            "Slow-moving capital leaves a predictable residual in next-day returns.",
            "Attention constraints delay the response of marginal traders.",
            "Inventory pressure on liquidity providers unwinds over subsequent sessions.",
        };
        const int w1 = std::uniform_int_distribution<int>(2, 5)(rng);
        const int w2 = std::uniform_int_distribution<int>(10, 20)(rng);
        return "Observations:" + topic_of(req) + " shows up in daily bars.\nKnowledge: " + pick(rng, knowledge) +
               "\nJustification: " + pick(rng, justification) + "\nSpecification: windows between " +
               std::to_string(w1) + " and " + std::to_string(w2) + " days.\n";
    }
    case Purpose::factor:
    case Purpose::refine: {
        ExprWriter w(rng);
        const FactorExpr e(w.make(std::uniform_int_distribution<int>(2, 3)(rng)));
        return "Description: " + describe(e) + "\nExpression: " + print(e) + "\n";
    }
    case Purpose::judge: {
        std::uniform_real_distribution<double> u(0.4, 1.0);
        std::ostringstream out;
        out << "c1: " << u(rng) << "\nc2: " << u(rng) << "\n";
        return out.str();
    }
    }
    return {};
}

ProviderResponse StubProvider::complete(const ProviderRequest& request) {
    std::string text = fixture_text(request.tag);
    if (text.empty()) text = procedural(request);
    return {text, usage_of(request, text)};
}

// ---------------------------------------------------------------------------

RemoteProvider::Settings RemoteProvider::settings_from_env() {
    auto env = [](const char* name) -> std::string {
        const char* v = std::getenv(name);
        return v ? std::string(v) : std::string{};
    };
    Settings s;
    s.url = env("ALPHAMINE_PROVIDER_URL");
    s.api_key = env("ALPHAMINE_API_KEY");
    s.model = env("ALPHAMINE_MODEL");
    if (s.url.empty()) throw ConfigError("remote provider needs ALPHAMINE_PROVIDER_URL");
    if (s.model.empty()) throw ConfigError("remote provider needs ALPHAMINE_MODEL");
    return s;
}

RemoteProvider::RemoteProvider(Settings s) : settings_(std::move(s)) {
    if (settings_.url.empty()) throw ConfigError("remote provider needs an endpoint URL");
}

ProviderResponse RemoteProvider::complete(const ProviderRequest& request) {
    static const std::regex url_re(R"(^(https?)://([^/:]+)(:(\d+))?(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(settings_.url, m, url_re)) throw ConfigError("bad provider URL: " + settings_.url);
    const std::string scheme = m[1];
    std::string base_path = m[5];
    while (!base_path.empty() && base_path.back() == '/') base_path.pop_back();
#ifndef ALPHAMINE_HAVE_OPENSSL
    if (scheme == "https") throw ConfigError("this build has no TLS support; use an http:// endpoint");
#endif
    std::string origin = scheme + "://" + m[2].str();
    if (m[4].matched) origin += ":" + m[4].str();

    nlohmann::json body{{"model", settings_.model},
                        {"temperature", request.temperature},
                        {"max_tokens", request.max_tokens},
                        {"messages", nlohmann::json::array()}};
    for (const auto& msg : request.messages) body["messages"].push_back({{"role", msg.role}, {"content", msg.content}});

    httplib::Client cli(origin);
    cli.set_connection_timeout(settings_.timeout_seconds, 0);
    cli.set_read_timeout(settings_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!settings_.api_key.empty()) headers.emplace("Authorization", "Bearer " + settings_.api_key);
    auto res = cli.Post(base_path + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw ProviderError("provider request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw ProviderError("provider returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 300));
    }
    try {
        const auto j = nlohmann::json::parse(res->body);
        ProviderResponse out;
        out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
        if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
            out.usage.prompt = u->value("prompt_tokens", std::size_t{0});
            out.usage.completion = u->value("completion_tokens", std::size_t{0});
        } else {
            out.usage = usage_of(request, out.text);
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ProviderError(std::string("malformed provider response: ") + e.what());
    }
}

ProviderResponse FunctionProvider::complete(const ProviderRequest& request) {
    std::string text = fn_(request);
    return {text, usage_of(request, text)};
}

// ---------------------------------------------------------------------------

JudgeVerdict ProviderJudge::judge(const FactorCandidate& cand) {
    ProviderRequest req;
    req.temperature = 0.0;
    req.tag = tag_;
    req.tag.purpose = Purpose::judge;
    req.messages = {
        {"system",
         "You grade the internal consistency of a proposed alpha factor. Reply with exactly two lines: "
         "'c1: <score>' for how well the description follows the hypothesis and 'c2: <score>' for how "
         "faithfully the expression implements the description. Scores lie in [0, 1]."},
        {"user", "Hypothesis:\n" + cand.hypothesis.text() + "\nDescription: " + cand.description +
                     "\nExpression: " + print(cand.expr)},
    };
    ProviderResponse res;
    try {
        res = provider_.complete(req);
    } catch (const ProviderError& e) {
        throw JudgeUnavailableError(std::string("judge request failed: ") + e.what());
    }
    usage_ += res.usage;
    static const std::regex c1_re(R"(c1\s*[:=]\s*([-+0-9.eE]+))", std::regex::icase);
    static const std::regex c2_re(R"(c2\s*[:=]\s*([-+0-9.eE]+))", std::regex::icase);
    std::smatch a, b;
    if (!std::regex_search(res.text, a, c1_re) || !std::regex_search(res.text, b, c2_re)) {
        throw JudgeUnavailableError("judge reply lacks c1/c2 scores");
    }
    JudgeVerdict v;
    try {
        v.c1 = std::stod(a[1]);
        v.c2 = std::stod(b[1]);
    } catch (const std::exception&) {
        throw JudgeUnavailableError("judge reply has unreadable scores");
    }
    if (!(v.c1 >= 0.0 && v.c1 <= 1.0 && v.c2 >= 0.0 && v.c2 <= 1.0)) {
        throw JudgeUnavailableError("judge scores outside [0, 1]");
    }
    return v;
}

} // namespace alphamine
