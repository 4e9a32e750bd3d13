#pragma once

// Text-in/text-out model provider used by the mining loop. Two
// implementations: a fixture-driven stub for offline runs and an HTTP client
// for OpenAI-compatible chat endpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alphamine/error.hpp"
#include "alphamine/regularizer.hpp"

namespace alphamine {

class ProviderError : public Error {
public:
    using Error::Error;
};

struct Message {
    std::string role;   // "system", "user" or "assistant"
    std::string content;
};

enum class Purpose { hypothesis, factor, refine, judge };

const char* purpose_name(Purpose p);

// Where a request sits in the loop. The stub keys its fixtures on it; a
// remote model never sees it.
struct RequestTag {
    std::size_t round = 0;
    Purpose purpose = Purpose::hypothesis;
    std::size_t candidate = 0;
    std::size_t attempt = 0;   // 0: first draft, then refinement attempts
    std::size_t retry = 0;     // re-asks after a malformed reply
};

struct ProviderRequest {
    std::vector<Message> messages;
    double temperature = 0.7;
    std::size_t max_tokens = 1024;
    RequestTag tag;
};

struct TokenUsage {
    std::size_t prompt = 0;
    std::size_t completion = 0;

    std::size_t total() const { return prompt + completion; }
    TokenUsage& operator+=(const TokenUsage& o) {
        prompt += o.prompt;
        completion += o.completion;
        return *this;
    }
};

nlohmann::json to_json(const TokenUsage& u);

struct ProviderResponse {
    std::string text;
    TokenUsage usage;
};

class Provider {
public:
    virtual ~Provider() = default;
    // Throws ProviderError on transport or protocol failure.
    virtual ProviderResponse complete(const ProviderRequest& request) = 0;
    virtual std::string name() const = 0;
};

// Fixture tables keyed by (round, purpose):
//   {"hypothesis": {"<round>": text | [text per retry]},
//    "factor":     {"<round>": [text per candidate]},
//    "refine":     {"<round>:<candidate>": [text per attempt]},
//    "judge":      {"<round>:<candidate>": text}}
// Factor and refine fixtures apply to the first try only (retry 0).
// Missing entries fall back to procedural output drawn from a generator
// seeded by (seed, tag). Responses depend only on the request and the seed;
// usage counts whitespace-separated words.
class StubProvider final : public Provider {
public:
    explicit StubProvider(std::uint64_t seed, nlohmann::json fixtures = nlohmann::json::object());
    static StubProvider from_file(const std::filesystem::path& path, std::uint64_t seed);

    ProviderResponse complete(const ProviderRequest& request) override;
    std::string name() const override { return "stub"; }

private:
    std::string fixture_text(const RequestTag& tag) const;
    std::string procedural(const ProviderRequest& request) const;

    std::uint64_t seed_;
    nlohmann::json fixtures_;
};

// OpenAI-compatible chat completions over HTTP(S).
class RemoteProvider final : public Provider {
public:
    struct Settings {
        std::string url;       // base URL, e.g. https://host/v1
        std::string api_key;
        std::string model;
        int timeout_seconds = 120;
    };

    // Reads ALPHAMINE_PROVIDER_URL, ALPHAMINE_API_KEY and ALPHAMINE_MODEL.
    // Throws ConfigError when the endpoint or model is unset.
    static Settings settings_from_env();

    explicit RemoteProvider(Settings s);
    ProviderResponse complete(const ProviderRequest& request) override;
    std::string name() const override { return "remote:" + settings_.model; }

private:
    Settings settings_;
};

// Adapts any callable to the Provider interface (used by tests).
class FunctionProvider final : public Provider {
public:
    using Fn = std::function<std::string(const ProviderRequest&)>;
    explicit FunctionProvider(Fn fn) : fn_(std::move(fn)) {}
    ProviderResponse complete(const ProviderRequest& request) override;
    std::string name() const override { return "function"; }

private:
    Fn fn_;
};

std::size_t count_words(const std::string& text);

// Consistency judge backed by a provider. The reply must carry
// "c1: <x>" and "c2: <y>" lines with values in [0, 1].
class ProviderJudge final : public ConsistencyJudge {
public:
    explicit ProviderJudge(Provider& provider) : provider_(provider) {}
    JudgeVerdict judge(const FactorCandidate& cand) override;

    // Tag used for the next request (the loop sets round/candidate).
    void set_tag(RequestTag tag) { tag_ = tag; }
    const TokenUsage& usage() const { return usage_; }

private:
    Provider& provider_;
    RequestTag tag_;
    TokenUsage usage_;
};

} // namespace alphamine
