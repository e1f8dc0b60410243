#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace benchcard::util {

std::string trim(std::string_view text);
std::string to_lower(std::string_view text);
bool starts_with_ci(std::string_view text, std::string_view prefix);

// Whitespace split, no normalization.
std::vector<std::string_view> split_whitespace(std::string_view text);

// Lowercase, drop ASCII punctuation, split on whitespace. Tokens that are
// pure punctuation vanish.
std::vector<std::string> normalize_tokens(std::string_view text);

// Lowercase and collapse runs of whitespace to one space.
std::string normalize_space(std::string_view text);

// Largest prefix length <= max_bytes that does not cut a UTF-8 sequence.
std::size_t utf8_safe_prefix(std::string_view text, std::size_t max_bytes);

std::uint64_t fnv1a64(std::string_view text);
std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// RFC 3339 UTC timestamp. Honors SOURCE_DATE_EPOCH when set.
std::string now_rfc3339();
std::string format_rfc3339(std::chrono::system_clock::time_point tp);
// Modification time of a file; the current time when it cannot be read.
std::string file_mtime_rfc3339(const std::filesystem::path& path);

std::optional<std::string> get_env(const char* name);

bool is_url(std::string_view locator);

struct CommandResult {
    int exit_code = -1;
    std::string out;
};

// Runs argv[0] from PATH with no shell involved; captures stdout.
CommandResult run_command(const std::vector<std::string>& argv);

// Runs fn(i) for i in [0, count) on up to `workers` threads. The first
// exception (lowest index) is rethrown after all items finish.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace benchcard::util
