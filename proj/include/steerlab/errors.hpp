#pragma once

#include <stdexcept>
#include <string>

namespace steerlab {

// Base for everything thrown by the library. The CLI maps subclasses to
// distinct exit codes, so keep the taxonomy stable.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad call-site arguments (counts, ranges, unknown tags).
struct ArgumentError : Error {
    using Error::Error;
};

// Tensor shape disagreements.
struct DimensionError : Error {
    using Error::Error;
};

// Mathematically invalid input (empty softmax, eps <= 0).
struct DomainError : Error {
    using Error::Error;
};

// Sequence does not fit the model context.
struct CapacityError : Error {
    using Error::Error;
};

// Token id outside the vocabulary.
struct VocabError : Error {
    using Error::Error;
};

// Malformed chat turn structure.
struct TemplateError : Error {
    using Error::Error;
};

// Unreadable input record (carries line numbers where possible).
struct ParseError : Error {
    using Error::Error;
};

// Corrupt or mismatched binary container.
struct FormatError : Error {
    using Error::Error;
};

// Inputs that disagree with each other (mixed tags, config mismatch).
struct ConsistencyError : Error {
    using Error::Error;
};

// Steering vector does not match the loaded model.
struct CompatibilityError : Error {
    using Error::Error;
};

// Filesystem failures.
struct IoError : Error {
    using Error::Error;
};

// Text too short to language-score.
struct LowConfidenceError : Error {
    using Error::Error;
};

// Training diverged.
struct TrainingError : Error {
    using Error::Error;
};

} // namespace steerlab
