#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bafo {

// Base class for every error the toolkit raises on purpose. Anything else
// escaping a public entry point is a bug.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Operand shapes do not fit the operation (matmul inner dims, elementwise
// shape equality, concat axis agreement, ...). Message names both shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A configuration value is out of its documented domain (bad latent dim,
// empty dataset, non-positive conv output, inconsistent layer specs).
class ConfigError : public Error {
public:
    using Error::Error;
};

// An API precondition was violated (non-scalar loss, mode mismatch,
// gradient for an unknown parameter).
class ContractError : public Error {
public:
    using Error::Error;
};

// Image file could not be decoded or encoded.
class CodecError : public Error {
public:
    using Error::Error;
};

// Filesystem-level failure (unreadable directory, unwritable path).
class IoError : public Error {
public:
    using Error::Error;
};

// A label string did not match the expected grammar. `field` names the
// offending component (age, gender, race, ...).
class ParseError : public Error {
public:
    ParseError(const std::string& field, const std::string& what)
        : Error(what), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

// Checkpoint or record file is malformed; `offset` is the byte position at
// which decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::uint64_t offset() const { return offset_; }

private:
    std::uint64_t offset_;
};

// Training produced a non-finite loss. Reports where it happened.
class TrainingDivergedError : public Error {
public:
    TrainingDivergedError(int epoch, int step, const std::string& what)
        : Error(what + " (epoch " + std::to_string(epoch) + ", step " +
                std::to_string(step) + ")"),
          epoch_(epoch),
          step_(step) {}
    int epoch() const { return epoch_; }
    int step() const { return step_; }

private:
    int epoch_;
    int step_;
};

// A record was produced by a different model than the one asked to reveal it.
class WrongModelError : public Error {
public:
    using Error::Error;
};

}  // namespace bafo
