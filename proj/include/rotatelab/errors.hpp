#pragma once

#include <stdexcept>
#include <string>

namespace rotatelab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent caller input (shapes, ids, files). The CLI maps
/// this to exit code 2.
class InputError : public Error {
public:
    using Error::Error;
};

/// Raised when a distribution has zero spread so standardized moments are
/// undefined.
class DegenerateDistribution : public Error {
public:
    explicit DegenerateDistribution(double mean)
        : Error("degenerate distribution: zero standard deviation (mean = " +
                std::to_string(mean) + ")"),
          mean_(mean) {}

    double mean() const noexcept { return mean_; }

private:
    double mean_;
};

class ZeroVector : public Error {
public:
    explicit ZeroVector(const std::string& what) : Error("zero vector: " + what) {}
};

class EmptySet : public Error {
public:
    explicit EmptySet(const std::string& what) : Error("empty set: " + what) {}
};

class Undefined : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace rotatelab
