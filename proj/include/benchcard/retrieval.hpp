#pragma once

#include "benchcard/extraction.hpp"
#include "benchcard/gateway.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace benchcard::retrieval {

struct ChunkPolicy {
    std::size_t max_chunk_tokens = 512;
    std::size_t overlap_tokens = 64;
};

struct KnowledgeChunk {
    std::string chunk_id;  // source_id + "#" + ordinal
    std::string source_id;
    std::vector<std::string> heading_path;
    std::string text;
    std::size_t token_count = 0;  // whitespace tokens
    std::size_t segment = 0;      // heading segment ordinal within the document
    std::size_t begin = 0;        // byte range in the document body
    std::size_t end = 0;
    std::size_t overlap_tokens = 0;  // leading tokens repeated from the previous window
    llm::EmbeddingVector embedding;

    bool operator==(const KnowledgeChunk&) const = default;
};

// Splits on markdown headings (outside code fences), then windows any segment
// longer than max_chunk_tokens with the configured overlap. Whitespace-only
// segments produce no chunk. Throws PreconditionFailed on an invalid policy.
std::vector<KnowledgeChunk> chunk_document(const extract::SourceDocument& doc, const ChunkPolicy& policy = {});

// Fills chunk embeddings in one batched gateway call.
void embed_chunks(std::vector<KnowledgeChunk>& chunks, llm::Gateway& gateway);

struct TermStats {
    std::map<std::string, std::size_t> document_frequency;
    std::vector<std::map<std::string, std::size_t>> term_frequencies;  // parallel to chunks

    bool operator==(const TermStats&) const = default;
};

TermStats compute_term_stats(const std::vector<KnowledgeChunk>& chunks);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

class HybridIndex {
public:
    const std::vector<KnowledgeChunk>& chunks() const { return m_chunks; }
    const TermStats& term_stats() const { return m_terms; }
    double avg_chunk_len() const { return m_avg_len; }
    std::size_t dimension() const { return m_dimension; }

    const KnowledgeChunk* find(std::string_view chunk_id) const;

    // index/chunks.json, index/terms.json, index/embeddings.f32
    void save(const std::filesystem::path& dir) const;
    // Verifies term stats against the chunks; throws IndexCorrupt on mismatch.
    static HybridIndex load(const std::filesystem::path& dir);

    bool operator==(const HybridIndex&) const = default;

private:
    friend HybridIndex build_index(std::vector<KnowledgeChunk> chunks);

    std::vector<KnowledgeChunk> m_chunks;
    TermStats m_terms;
    double m_avg_len = 0.0;
    std::size_t m_dimension = 0;
};

// Throws EmptyIndex for no chunks, DimensionMismatch for missing or mixed
// embedding sizes.
HybridIndex build_index(std::vector<KnowledgeChunk> chunks);

struct ScoredChunk {
    std::string chunk_id;
    double score = 0.0;

    bool operator==(const ScoredChunk&) const = default;
};

double bm25_idf(std::size_t chunk_count, std::size_t document_frequency);

// BM25 over the distinct normalized query terms. Zero-score chunks are
// excluded; ties go to the smaller chunk_id.
std::vector<ScoredChunk> sparse_search(std::string_view query, const HybridIndex& index, std::size_t k,
                                       const Bm25Params& params = {});

std::vector<ScoredChunk> dense_search(std::string_view query, const HybridIndex& index, std::size_t k,
                                      llm::Gateway& gateway);
std::vector<ScoredChunk> dense_search(const llm::EmbeddingVector& query, const HybridIndex& index, std::size_t k);

struct Grade {
    bool relevant = false;
    int rank = 0;
    std::string note;

    bool operator==(const Grade&) const = default;
};

struct EvidenceCandidate {
    std::string chunk_id;
    std::optional<std::size_t> sparse_rank;
    std::optional<std::size_t> dense_rank;
    double fused_score = 0.0;
    std::optional<Grade> grade;

    bool operator==(const EvidenceCandidate&) const = default;
};

inline constexpr std::size_t kDefaultRrfK = 60;

// fused = sum over the lists containing a chunk of 1 / (k_rrf + rank).
std::vector<EvidenceCandidate> fuse_rrf(const std::vector<ScoredChunk>& sparse, const std::vector<ScoredChunk>& dense,
                                        std::size_t k_rrf = kDefaultRrfK);

struct GradeResult {
    std::vector<EvidenceCandidate> kept;  // graded relevant, grader order
    std::vector<std::string> warnings;
};

GradeResult grade_evidence(std::string_view atom_text, const std::vector<EvidenceCandidate>& candidates,
                           const HybridIndex& index, llm::Gateway& gateway, std::size_t top_m = 8);

struct RetrievalOptions {
    std::size_t sparse_k = 20;
    std::size_t dense_k = 20;
    std::size_t k_rrf = kDefaultRrfK;
    std::size_t grade_top = 8;
    std::size_t keep = 5;
};

}  // namespace benchcard::retrieval
