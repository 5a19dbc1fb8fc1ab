#pragma once

#include <stdexcept>
#include <string>

namespace imglong {

// solver blowups, singular systems, non-converged optimizations
struct numerical_error : std::runtime_error {
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

// checksum mismatches, truncated or inconsistent files
struct integrity_error : std::runtime_error {
    explicit integrity_error(const std::string& what) : std::runtime_error(what) {}
};

// manifest/model schema version not supported by this build
struct version_error : std::runtime_error {
    explicit version_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace imglong
