#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftg {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class ScheduleError : public Error {
public:
    using Error::Error;
};

// A rhythm/harmonic constraint that no roll can satisfy. `columns` lists the
// offending time steps.
class InfeasibleConstraint : public Error {
public:
    InfeasibleConstraint(const std::string& what, std::vector<std::size_t> columns)
        : Error(what), columns_(std::move(columns)) {}

    const std::vector<std::size_t>& columns() const noexcept { return columns_; }

private:
    std::vector<std::size_t> columns_;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

// Raised for pieces the pipeline refuses (e.g. non-4/4 meter).
class RejectedPiece : public Error {
public:
    using Error::Error;
};

}  // namespace ftg
