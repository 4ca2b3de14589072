#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace pdl::io {

using Json = nlohmann::json;

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file, flushes it to disk, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::vector<Json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<Json>& records);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Quotes a CSV field when it contains a separator, quote or newline.
std::string csv_escape(std::string_view field);
/// Splits one CSV record honoring double-quoted fields.
std::vector<std::string> csv_split(std::string_view line);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double value);

/// Exclusive lock held on a lock file for the lifetime of the object.
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& directory);
    ~DirectoryLock();
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    std::filesystem::path lock_path_;
};

}  // namespace pdl::io
