#pragma once

#include <string>
#include <string_view>

#include "alphamine/error.hpp"

namespace alphamine {

class FormatError : public Error {
public:
    using Error::Error;
};

// Structured market hypothesis.
struct Hypothesis {
    std::string id;
    std::string parent_id;   // empty for a seed hypothesis
    std::string observations;
    std::string knowledge;
    std::string justification;
    std::string specification;

    // All four components joined, one labelled section per line.
    std::string text() const;
    bool complete() const;
};

// Reads the labelled form produced by text():
//   Observations: ...
//   Knowledge: ...
//   Justification: ...
//   Specification: ...
// Labels are case-insensitive; continuation lines append to the previous
// section. Throws FormatError naming any missing or empty component.
Hypothesis parse_hypothesis(std::string_view text);

} // namespace alphamine
