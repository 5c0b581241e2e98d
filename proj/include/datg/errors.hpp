#pragma once

#include <stdexcept>
#include <string>

namespace datg {

// Base class for every error raised by the library. Degradations that are
// data rather than failures (unlocatable spans, detector vetoes, ...) are
// reported through return values, not exceptions.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// --- document parsing ---
class MalformedDocument : public Error {
public:
    using Error::Error;
};

class SchemaViolation : public Error {
public:
    using Error::Error;
};

class ClosedSetViolation : public Error {
public:
    using Error::Error;
};

// --- scoring ---
class EmptyDag : public Error {
public:
    using Error::Error;
};

class EmptyCandidates : public Error {
public:
    using Error::Error;
};

// --- prompt assembly ---
class MissingTemplate : public Error {
public:
    using Error::Error;
};

class MissingProblemVariant : public Error {
public:
    using Error::Error;
};

class EmptyTrace : public Error {
public:
    using Error::Error;
};

// --- gateway ---
class CacheMiss : public Error {
public:
    using Error::Error;
};

class ProviderError : public Error {
public:
    ProviderError(int status, const std::string& body)
        : Error("provider error, status " + std::to_string(status) + ": " + body),
          status(status),
          body(body) {}
    int status;
    std::string body;
};

class GatewayTimeout : public Error {
public:
    using Error::Error;
};

// --- retry control ---
class ScaffoldRejected : public Error {
public:
    ScaffoldRejected(const std::string& why, std::string offending_line)
        : Error(why + ": " + offending_line), line(std::move(offending_line)) {}
    std::string line;
};

// --- reporting ---
class ZeroSample : public Error {
public:
    using Error::Error;
};

class UnknownFormat : public Error {
public:
    using Error::Error;
};

// --- configuration / CLI ---
class ConfigError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace datg
