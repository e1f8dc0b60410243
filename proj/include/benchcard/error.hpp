#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace benchcard {

enum class ErrorCode {
    MalformedJson,
    UnknownSection,
    InvalidSchema,
    InvalidTransition,
    BackendUnreachable,
    MissingScript,
    NonJsonOutputAfterRetries,
    ContextTooLarge,
    EmptyInput,
    DimensionMismatch,
    CardNotFound,
    CatalogUnreachable,
    RepoNotFound,
    HubUnreachable,
    InvalidRepoId,
    ConverterNotConfigured,
    ConversionFailed,
    FileNotFound,
    DuplicateSourceId,
    EmptyKnowledgeBase,
    EmptyIndex,
    IndexCorrupt,
    InvalidVerdict,
    PreconditionFailed,
    InvalidConfig,
    MissingWorkspace,
    NoSession,
    InvalidDecision,
    UnknownAtom,
    UndecidedAtoms,
    IoError,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
            : std::runtime_error(message), m_code(code) {}

    ErrorCode code() const noexcept { return m_code; }

private:
    ErrorCode m_code;
};

}  // namespace benchcard
