#pragma once

#include <stdexcept>
#include <string>

namespace alphamine {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or missing configuration (unknown keys, missing env, inconsistent flags).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Filesystem / run-directory failures. The mining loop aborts on these.
class StorageError : public Error {
public:
    using Error::Error;
};

} // namespace alphamine
