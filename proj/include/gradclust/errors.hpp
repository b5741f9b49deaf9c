#ifndef GRADCLUST_ERRORS_HPP
#define GRADCLUST_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace gradclust {

// Caller broke a documented precondition (dimension mismatch, empty cluster, ...).
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Computation produced values we refuse to continue with (NaN/inf parameters,
// diverged training). The CLI maps this to exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Bad or inconsistent experiment configuration. The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem / serialization failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ContractError(what);
}

}  // namespace gradclust

#endif
