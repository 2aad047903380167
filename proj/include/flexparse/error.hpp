#ifndef FLEXPARSE_ERROR_HPP
#define FLEXPARSE_ERROR_HPP

#include <stdexcept>
#include <string>
#include <utility>

namespace flexparse {

/// Exception carrying a short machine-readable category next to the message.
///
/// Categories in use: "invalid_graph", "invalid_model", "format", "dimension",
/// "normalization", "io", "invalid_argument", "too_large", "degenerate".
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

} // namespace flexparse

#endif // FLEXPARSE_ERROR_HPP
