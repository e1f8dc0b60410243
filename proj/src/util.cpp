#include "benchcard/util.hpp"

#include "benchcard/error.hpp"

#include <openssl/evp.h>
#include <spawn.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

extern char** environ;

namespace benchcard {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::UnknownSection: return "UnknownSection";
    case ErrorCode::InvalidSchema: return "InvalidSchema";
    case ErrorCode::InvalidTransition: return "InvalidTransition";
    case ErrorCode::BackendUnreachable: return "BackendUnreachable";
    case ErrorCode::MissingScript: return "MissingScript";
    case ErrorCode::NonJsonOutputAfterRetries: return "NonJsonOutputAfterRetries";
    case ErrorCode::ContextTooLarge: return "ContextTooLarge";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::CardNotFound: return "CardNotFound";
    case ErrorCode::CatalogUnreachable: return "CatalogUnreachable";
    case ErrorCode::RepoNotFound: return "RepoNotFound";
    case ErrorCode::HubUnreachable: return "HubUnreachable";
    case ErrorCode::InvalidRepoId: return "InvalidRepoId";
    case ErrorCode::ConverterNotConfigured: return "ConverterNotConfigured";
    case ErrorCode::ConversionFailed: return "ConversionFailed";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::DuplicateSourceId: return "DuplicateSourceId";
    case ErrorCode::EmptyKnowledgeBase: return "EmptyKnowledgeBase";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::IndexCorrupt: return "IndexCorrupt";
    case ErrorCode::InvalidVerdict: return "InvalidVerdict";
    case ErrorCode::PreconditionFailed: return "PreconditionFailed";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MissingWorkspace: return "MissingWorkspace";
    case ErrorCode::NoSession: return "NoSession";
    case ErrorCode::InvalidDecision: return "InvalidDecision";
    case ErrorCode::UnknownAtom: return "UnknownAtom";
    case ErrorCode::UndecidedAtoms: return "UndecidedAtoms";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

}  // namespace benchcard

namespace benchcard::util {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string trim(std::string_view text) {
    std::size_t begin = 0;
    std::size_t end = text.size();
    while (begin < end && is_space(text[begin])) {
        ++begin;
    }
    while (end > begin && is_space(text[end - 1])) {
        --end;
    }
    return std::string(text.substr(begin, end - begin));
}

std::string to_lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool starts_with_ci(std::string_view text, std::string_view prefix) {
    if (text.size() < prefix.size()) {
        return false;
    }
    return to_lower(text.substr(0, prefix.size())) == to_lower(prefix);
}

std::vector<std::string_view> split_whitespace(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) {
            ++i;
        }
        const std::size_t start = i;
        while (i < text.size() && !is_space(text[i])) {
            ++i;
        }
        if (i > start) {
            out.push_back(text.substr(start, i - start));
        }
    }
    return out;
}

std::vector<std::string> normalize_tokens(std::string_view text) {
    std::vector<std::string> out;
    for (auto raw : split_whitespace(text)) {
        std::string token;
        token.reserve(raw.size());
        for (char c : raw) {
            const auto uc = static_cast<unsigned char>(c);
            if (uc < 0x80 && std::ispunct(uc)) {
                continue;
            }
            token.push_back(static_cast<char>(std::tolower(uc)));
        }
        if (!token.empty()) {
            out.push_back(std::move(token));
        }
    }
    return out;
}

std::string normalize_space(std::string_view text) {
    std::string out;
    for (auto token : split_whitespace(text)) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += to_lower(token);
    }
    return out;
}

std::size_t utf8_safe_prefix(std::string_view text, std::size_t max_bytes) {
    if (max_bytes >= text.size()) {
        return text.size();
    }
    std::size_t cut = max_bytes;
    // Back off over continuation bytes (10xxxxxx).
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) {
        --cut;
    }
    return cut;
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (char c : text) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorCode::IoError, "sha256 digest failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0x0F]);
    }
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::FileNotFound, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." +
           std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw Error(ErrorCode::IoError, "short write to " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw Error(ErrorCode::IoError, "cannot rename into " + path.string() + ": " + ec.message());
    }
}

std::string format_rfc3339(std::chrono::system_clock::time_point tp) {
    const std::time_t t = std::chrono::system_clock::to_time_t(tp);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::array<char, 32> buf{};
    std::strftime(buf.data(), buf.size(), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf.data();
}

std::string file_mtime_rfc3339(const std::filesystem::path& path) {
    struct stat st {};
    if (::stat(path.c_str(), &st) != 0) {
        return now_rfc3339();
    }
    return format_rfc3339(std::chrono::system_clock::from_time_t(st.st_mtime));
}

std::string now_rfc3339() {
    if (auto epoch = get_env("SOURCE_DATE_EPOCH")) {
        try {
            return format_rfc3339(std::chrono::system_clock::time_point(
                    std::chrono::seconds(std::stoll(*epoch))));
        } catch (const std::exception&) {
            // fall through to the wall clock
        }
    }
    return format_rfc3339(std::chrono::system_clock::now());
}

std::optional<std::string> get_env(const char* name) {
    const char* value = std::getenv(name);
    if (value == nullptr || *value == '\0') {
        return std::nullopt;
    }
    return std::string(value);
}

bool is_url(std::string_view locator) {
    return starts_with_ci(locator, "http://") || starts_with_ci(locator, "https://");
}

CommandResult run_command(const std::vector<std::string>& argv) {
    if (argv.empty()) {
        throw Error(ErrorCode::PreconditionFailed, "run_command: empty argv");
    }
    std::array<int, 2> fds{};
    if (::pipe(fds.data()) != 0) {
        throw Error(ErrorCode::IoError, "pipe() failed");
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
    posix_spawn_file_actions_addclose(&actions, fds[0]);
    posix_spawn_file_actions_addclose(&actions, fds[1]);

    std::vector<char*> args;
    args.reserve(argv.size() + 1);
    for (const auto& a : argv) {
        args.push_back(const_cast<char*>(a.c_str()));
    }
    args.push_back(nullptr);

    pid_t pid = 0;
    const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(fds[1]);
    CommandResult result;
    if (rc != 0) {
        ::close(fds[0]);
        return result;
    }
    std::array<char, 4096> buf{};
    ssize_t n = 0;
    while ((n = ::read(fds[0], buf.data(), buf.size())) > 0) {
        result.out.append(buf.data(), static_cast<std::size_t>(n));
    }
    ::close(fds[0]);
    int status = 0;
    ::waitpid(pid, &status, 0);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(count);
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

}  // namespace benchcard::util
