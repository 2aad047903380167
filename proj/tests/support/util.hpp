#ifndef FLEXPARSE_TESTS_UTIL_HPP
#define FLEXPARSE_TESTS_UTIL_HPP

#include <flexparse/error.hpp>

#include <filesystem>
#include <functional>
#include <string>

namespace flexparse::testing {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& suite, const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("flexparse_" + suite) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Code of the flexparse::Error thrown by f, or "" when nothing is thrown.
inline std::string error_code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "";
}

} // namespace flexparse::testing

#endif
