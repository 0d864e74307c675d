#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

namespace velm {

/// Bad input: malformed files, unknown references, violated preconditions.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failure; carries the offending path.
class IoError : public ValidationError {
public:
    IoError(const std::string& what, const std::filesystem::path& path)
        : ValidationError(path.empty() ? what : what + ": " + path.string()), path_(path) {}

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// LLM backend unreachable or returned garbage after all retries.
class BackendError : public std::runtime_error {
public:
    BackendError(const std::string& what, std::string sample_id = {}, bool transient = true)
        : std::runtime_error(sample_id.empty() ? what : what + " (sample " + sample_id + ")"),
          sample_id_(std::move(sample_id)), transient_(transient) {}

    const std::string& sample_id() const { return sample_id_; }
    /// Worth retrying (network, rate limit); false for e.g. a replay-mode cache miss.
    bool transient() const { return transient_; }

private:
    std::string sample_id_;
    bool transient_;
};

}  // namespace velm
