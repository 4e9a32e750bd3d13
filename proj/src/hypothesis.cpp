#include "alphamine/hypothesis.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <sstream>

namespace alphamine {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

} // namespace

std::string Hypothesis::text() const {
    return "Observations: " + observations + "\nKnowledge: " + knowledge + "\nJustification: " +
           justification + "\nSpecification: " + specification + "\n";
}

bool Hypothesis::complete() const {
    return !observations.empty() && !knowledge.empty() && !justification.empty() && !specification.empty();
}

Hypothesis parse_hypothesis(std::string_view text) {
    Hypothesis h;
    const std::array<std::pair<std::string_view, std::string*>, 4> sections{{
        {"observations", &h.observations},
        {"knowledge", &h.knowledge},
        {"justification", &h.justification},
        {"specification", &h.specification},
    }};
    std::string* current = nullptr;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        std::string body = trim(line);
        // Tolerate markdown bullets / emphasis around labels.
        while (!body.empty() && (body.front() == '-' || body.front() == '*' || body.front() == '#')) {
            body = trim(std::string_view(body).substr(1));
        }
        const auto colon = body.find(':');
        bool labelled = false;
        if (colon != std::string::npos) {
            std::string label = lower(trim(std::string_view(body).substr(0, colon)));
            label.erase(std::remove(label.begin(), label.end(), '*'), label.end());
            for (auto& [name, slot] : sections) {
                if (label == name) {
                    current = slot;
                    std::string value = trim(std::string_view(body).substr(colon + 1));
                    // "**Label:** text" leaves the closing emphasis behind
                    while (!value.empty() && value.front() == '*') value = trim(std::string_view(value).substr(1));
                    *slot = value;
                    labelled = true;
                    break;
                }
            }
        }
        if (!labelled && current && !body.empty()) {
            if (!current->empty()) *current += ' ';
            *current += body;
        }
    }
    std::string missing;
    for (auto& [name, slot] : sections) {
        if (slot->empty()) missing += (missing.empty() ? "" : ", ") + std::string(name);
    }
    if (!missing.empty()) throw FormatError("hypothesis missing component(s): " + missing);
    return h;
}

} // namespace alphamine
