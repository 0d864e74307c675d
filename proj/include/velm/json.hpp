#pragma once

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include "velm/error.hpp"

namespace velm {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open JSON file", path);
    }
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw IoError(std::string("malformed JSON (") + e.what() + ")", path);
    }
}

/// Writes to a sibling temp file and renames it into place.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    static std::atomic<std::uint64_t> counter{0};
    std::ostringstream suffix;
    suffix << ".tmp." << std::this_thread::get_id() << "." << counter.fetch_add(1);
    const auto tmp = std::filesystem::path(path.string() + suffix.str());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write file", tmp);
        }
        out << text;
        if (!out) {
            throw IoError("short write", tmp);
        }
    }
    std::filesystem::rename(tmp, path);
}

template <typename J>
void write_json_file(const std::filesystem::path& path, const J& j) {
    write_text_atomic(path, j.dump(2) + "\n");
}

}  // namespace velm
