#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace orthotrace {

std::string read_text_file(const std::string& path);
std::vector<uint8_t> read_binary_file(const std::string& path);

/// Writes to a temporary file in the target directory and renames it over
/// `path`, so readers see either the old or the new content.
void write_file_atomic(const std::string& path, std::span<const uint8_t> bytes);
void write_text_file(const std::string& path, std::string_view text);

/// Test hook run after the temporary file is complete and before the rename.
/// An exception thrown from the hook abandons the write and propagates.
using AtomicWriteHook = std::function<void(const std::string& final_path, const std::string& temp_path)>;
void set_atomic_write_hook(AtomicWriteHook hook);

/// Lowercase hex SHA-256 of a file's content.
std::string sha256_file(const std::string& path);
std::string sha256_hex(std::span<const uint8_t> bytes);

}  // namespace orthotrace
