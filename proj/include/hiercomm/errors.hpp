#pragma once

#include <stdexcept>
#include <string>

namespace hiercomm {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// --- configuration / graph construction ---

class ConfigError : public Error {
public:
    using Error::Error;
};

class UnknownAgentError : public Error {
public:
    using Error::Error;
};

// --- protocol ---

// Structured agent output could not be parsed. Keeps the raw model text so
// the engine can retry with a corrective instruction.
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what, std::string raw = {})
        : Error(what), raw_(std::move(raw)) {}
    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

class UnknownNextAgentError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ProtocolViolation : public Error {
public:
    using Error::Error;
};

class NotAnEdgeError : public Error {
public:
    using Error::Error;
};

// --- memory ---

class StorageError : public Error {
public:
    using Error::Error;
};

// --- backend ---

class BackendError : public Error {
public:
    using Error::Error;
};

class ScriptMiss : public Error {
public:
    using Error::Error;
};

class UnpricedModelError : public Error {
public:
    using Error::Error;
};

// --- engine ---

class StepBudgetExceeded : public Error {
public:
    using Error::Error;
};

class EmptyFeedbackError : public Error {
public:
    using Error::Error;
};

// --- plugins ---

class NotConfiguredError : public Error {
public:
    using Error::Error;
};

// --- metrics ---

class LengthMismatchError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class DegenerateVarianceError : public Error {
public:
    using Error::Error;
};

class DegenerateMatrixError : public Error {
public:
    using Error::Error;
};

// --- harness ---

class DatasetError : public Error {
public:
    using Error::Error;
};

class ExtractionError : public Error {
public:
    using Error::Error;
};

}  // namespace hiercomm
