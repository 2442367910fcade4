#pragma once

#include <stdexcept>
#include <string>

namespace sinkclust {

/// Operand dimensions do not agree.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Problem instance exceeds what an exhaustive routine accepts.
class SizeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A documented precondition was violated by the caller.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Standard-domain Sinkhorn produced non-finite scalings.
class NumericalInstability : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConsistencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace sinkclust
