#include "benchcard/retrieval.hpp"

#include "benchcard/error.hpp"
#include "benchcard/util.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <unordered_map>

namespace benchcard::retrieval {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Segment {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::vector<std::string> heading_path;
};

struct TokenSpan {
    std::size_t begin;
    std::size_t end;
};

// Heading level of a markdown ATX heading line, 0 if not a heading.
int heading_level(std::string_view line, std::string* title) {
    std::size_t i = 0;
    while (i < line.size() && i < 3 && line[i] == ' ') {
        ++i;
    }
    std::size_t hashes = 0;
    while (i + hashes < line.size() && line[i + hashes] == '#') {
        ++hashes;
    }
    if (hashes == 0 || hashes > 6) {
        return 0;
    }
    const std::size_t after = i + hashes;
    if (after < line.size() && line[after] != ' ' && line[after] != '\t' && line[after] != '\r') {
        return 0;
    }
    if (title != nullptr) {
        auto t = util::trim(line.substr(after));
        while (!t.empty() && t.back() == '#') {
            t.pop_back();
        }
        *title = util::trim(t);
    }
    return static_cast<int>(hashes);
}

bool is_fence(std::string_view line) {
    const auto t = util::trim(line);
    return t.starts_with("```") || t.starts_with("~~~");
}

std::vector<Segment> split_segments(std::string_view body) {
    std::vector<Segment> segments;
    std::vector<std::pair<int, std::string>> stack;
    Segment current;
    bool in_fence = false;
    std::size_t pos = 0;
    while (pos < body.size()) {
        auto nl = body.find('\n', pos);
        const std::size_t line_end = nl == std::string_view::npos ? body.size() : nl + 1;
        const auto line = body.substr(pos, line_end - pos);
        std::string title;
        if (is_fence(line)) {
            in_fence = !in_fence;
        } else if (int level = in_fence ? 0 : heading_level(line, &title); level > 0) {
            if (pos > current.begin) {
                current.end = pos;
                segments.push_back(current);
            }
            while (!stack.empty() && stack.back().first >= level) {
                stack.pop_back();
            }
            stack.emplace_back(level, title);
            current = Segment{};
            current.begin = pos;
            for (const auto& [_, t] : stack) {
                current.heading_path.push_back(t);
            }
        }
        pos = line_end;
    }
    if (body.size() > current.begin) {
        current.end = body.size();
        segments.push_back(current);
    }
    return segments;
}

std::vector<TokenSpan> token_spans(std::string_view text, std::size_t offset) {
    std::vector<TokenSpan> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        if (i > start) {
            out.push_back(TokenSpan{offset + start, offset + i});
        }
    }
    return out;
}

void sort_scored(std::vector<ScoredChunk>& v) {
    std::sort(v.begin(), v.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        return a.chunk_id < b.chunk_id;
    });
}

void write_le_floats(const fs::path& path, const std::vector<float>& values) {
    std::string bytes(values.size() * 4, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) {
            bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
        }
    }
    util::write_file_atomic(path, bytes);
}

std::vector<float> read_le_floats(const fs::path& path) {
    const std::string bytes = util::read_file(path);
    if (bytes.size() % 4 != 0) {
        throw Error(ErrorCode::IndexCorrupt, path.string() + " is not a whole number of floats");
    }
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + static_cast<std::size_t>(b)]))
                    << (8 * b);
        }
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Chunking

std::vector<KnowledgeChunk> chunk_document(const extract::SourceDocument& doc, const ChunkPolicy& policy) {
    if (policy.max_chunk_tokens == 0 || policy.overlap_tokens >= policy.max_chunk_tokens) {
        throw Error(ErrorCode::PreconditionFailed, "chunk policy needs max_chunk_tokens > overlap_tokens >= 0");
    }
    const std::string_view body = doc.body_markdown;
    std::vector<KnowledgeChunk> out;
    std::size_t segment_ordinal = 0;
    for (const auto& seg : split_segments(body)) {
        const auto tokens = token_spans(body.substr(seg.begin, seg.end - seg.begin), seg.begin);
        if (tokens.empty()) {
            continue;
        }
        auto emit = [&](std::size_t begin, std::size_t end, std::size_t count, std::size_t overlap) {
            KnowledgeChunk c;
            c.chunk_id = doc.source_id + "#" + std::to_string(out.size());
            c.source_id = doc.source_id;
            c.heading_path = seg.heading_path;
            c.text = std::string(body.substr(begin, end - begin));
            c.token_count = count;
            c.segment = segment_ordinal;
            c.begin = begin;
            c.end = end;
            c.overlap_tokens = overlap;
            out.push_back(std::move(c));
        };
        const std::size_t n = tokens.size();
        if (n <= policy.max_chunk_tokens) {
            emit(seg.begin, seg.end, n, 0);
        } else {
            const std::size_t stride = policy.max_chunk_tokens - policy.overlap_tokens;
            std::size_t previous_end = seg.begin;
            for (std::size_t start = 0;; start += stride) {
                const std::size_t stop = std::min(n, start + policy.max_chunk_tokens);
                std::size_t begin = seg.begin;
                if (start > 0) {
                    begin = policy.overlap_tokens == 0 ? previous_end : tokens[start].begin;
                }
                const std::size_t end = stop == n ? seg.end : tokens[stop - 1].end;
                emit(begin, end, stop - start, start == 0 ? 0 : policy.overlap_tokens);
                previous_end = end;
                if (stop == n) {
                    break;
                }
            }
        }
        ++segment_ordinal;
    }
    return out;
}

void embed_chunks(std::vector<KnowledgeChunk>& chunks, llm::Gateway& gateway) {
    if (chunks.empty()) {
        return;
    }
    std::vector<std::string> texts;
    texts.reserve(chunks.size());
    for (const auto& c : chunks) {
        texts.push_back(c.text);
    }
    llm::CallScope scope("index/embed");
    auto vectors = gateway.embed(texts);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        chunks[i].embedding = std::move(vectors[i]);
    }
}

// ---------------------------------------------------------------------------
// Index

TermStats compute_term_stats(const std::vector<KnowledgeChunk>& chunks) {
    TermStats stats;
    stats.term_frequencies.reserve(chunks.size());
    for (const auto& c : chunks) {
        std::map<std::string, std::size_t> tf;
        for (auto& t : util::normalize_tokens(c.text)) {
            ++tf[std::move(t)];
        }
        for (const auto& [term, _] : tf) {
            ++stats.document_frequency[term];
        }
        stats.term_frequencies.push_back(std::move(tf));
    }
    return stats;
}

HybridIndex build_index(std::vector<KnowledgeChunk> chunks) {
    if (chunks.empty()) {
        throw Error(ErrorCode::EmptyIndex, "cannot build an index from zero chunks");
    }
    const std::size_t dim = chunks.front().embedding.dimension();
    std::set<std::string> ids;
    for (const auto& c : chunks) {
        if (c.embedding.dimension() == 0) {
            throw Error(ErrorCode::DimensionMismatch, "chunk " + c.chunk_id + " has no embedding");
        }
        if (c.embedding.dimension() != dim) {
            throw Error(ErrorCode::DimensionMismatch, "chunk " + c.chunk_id + " has embedding dimension " +
                                                              std::to_string(c.embedding.dimension()) + ", expected " +
                                                              std::to_string(dim));
        }
        if (!ids.insert(c.chunk_id).second) {
            throw Error(ErrorCode::DuplicateSourceId, "duplicate chunk id " + c.chunk_id);
        }
    }
    HybridIndex index;
    index.m_terms = compute_term_stats(chunks);
    double total = 0.0;
    for (const auto& c : chunks) {
        total += static_cast<double>(c.token_count);
    }
    index.m_avg_len = total / static_cast<double>(chunks.size());
    index.m_dimension = dim;
    index.m_chunks = std::move(chunks);
    return index;
}

const KnowledgeChunk* HybridIndex::find(std::string_view chunk_id) const {
    auto it = std::find_if(m_chunks.begin(), m_chunks.end(),
                           [&](const KnowledgeChunk& c) { return c.chunk_id == chunk_id; });
    return it == m_chunks.end() ? nullptr : &*it;
}

void HybridIndex::save(const fs::path& dir) const {
    json chunks = json::array();
    std::vector<float> floats;
    floats.reserve(m_chunks.size() * m_dimension);
    for (const auto& c : m_chunks) {
        chunks.push_back(json{{"chunk_id", c.chunk_id},
                              {"source_id", c.source_id},
                              {"heading_path", c.heading_path},
                              {"text", c.text},
                              {"token_count", c.token_count},
                              {"segment", c.segment},
                              {"begin", c.begin},
                              {"end", c.end},
                              {"overlap_tokens", c.overlap_tokens}});
        for (double v : c.embedding.values) {
            floats.push_back(static_cast<float>(v));
        }
    }
    util::write_file_atomic(dir / "chunks.json", json{{"dimension", m_dimension}, {"chunks", chunks}}.dump(2));
    json tf = json::array();
    for (const auto& m : m_terms.term_frequencies) {
        tf.push_back(m);
    }
    util::write_file_atomic(dir / "terms.json", json{{"avg_chunk_len", m_avg_len},
                                                     {"document_frequency", m_terms.document_frequency},
                                                     {"term_frequencies", tf}}
                                                        .dump());
    write_le_floats(dir / "embeddings.f32", floats);
}

HybridIndex HybridIndex::load(const fs::path& dir) {
    for (const char* name : {"chunks.json", "terms.json", "embeddings.f32"}) {
        std::error_code ec;
        if (!fs::is_regular_file(dir / name, ec)) {
            throw Error(ErrorCode::MissingWorkspace, "index file " + (dir / name).string() + " is missing");
        }
    }
    std::vector<KnowledgeChunk> chunks;
    std::size_t dim = 0;
    try {
        const json j = json::parse(util::read_file(dir / "chunks.json"));
        dim = j.at("dimension").get<std::size_t>();
        for (const auto& c : j.at("chunks")) {
            KnowledgeChunk k;
            k.chunk_id = c.at("chunk_id").get<std::string>();
            k.source_id = c.at("source_id").get<std::string>();
            k.heading_path = c.at("heading_path").get<std::vector<std::string>>();
            k.text = c.at("text").get<std::string>();
            k.token_count = c.at("token_count").get<std::size_t>();
            k.segment = c.value("segment", std::size_t{0});
            k.begin = c.value("begin", std::size_t{0});
            k.end = c.value("end", std::size_t{0});
            k.overlap_tokens = c.value("overlap_tokens", std::size_t{0});
            chunks.push_back(std::move(k));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::IndexCorrupt, std::string("chunks.json: ") + e.what());
    }
    const auto floats = read_le_floats(dir / "embeddings.f32");
    if (floats.size() != chunks.size() * dim) {
        throw Error(ErrorCode::IndexCorrupt, "embeddings.f32 holds " + std::to_string(floats.size()) +
                                                     " floats, expected " + std::to_string(chunks.size() * dim));
    }
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        chunks[i].embedding.values.assign(floats.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                          floats.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    }
    HybridIndex index = build_index(std::move(chunks));

    TermStats stored;
    try {
        const json t = json::parse(util::read_file(dir / "terms.json"));
        stored.document_frequency = t.at("document_frequency").get<std::map<std::string, std::size_t>>();
        for (const auto& m : t.at("term_frequencies")) {
            stored.term_frequencies.push_back(m.get<std::map<std::string, std::size_t>>());
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::IndexCorrupt, std::string("terms.json: ") + e.what());
    }
    if (!(stored == index.m_terms)) {
        throw Error(ErrorCode::IndexCorrupt, "terms.json does not match the stored chunks");
    }
    return index;
}

// ---------------------------------------------------------------------------
// Search

double bm25_idf(std::size_t chunk_count, std::size_t document_frequency) {
    const double n = static_cast<double>(chunk_count);
    const double df = static_cast<double>(document_frequency);
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

std::vector<ScoredChunk> sparse_search(std::string_view query, const HybridIndex& index, std::size_t k,
                                       const Bm25Params& params) {
    if (k == 0) {
        throw Error(ErrorCode::PreconditionFailed, "sparse_search needs k >= 1");
    }
    const auto tokens = util::normalize_tokens(query);
    const std::set<std::string> terms(tokens.begin(), tokens.end());
    const auto& stats = index.term_stats();
    const auto& chunks = index.chunks();

    std::vector<std::pair<std::string, double>> idf;
    for (const auto& t : terms) {
        if (auto it = stats.document_frequency.find(t); it != stats.document_frequency.end()) {
            idf.emplace_back(t, bm25_idf(chunks.size(), it->second));
        }
    }
    std::vector<ScoredChunk> out;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        const auto& tf_map = stats.term_frequencies[i];
        const double len_norm = params.k1 * (1.0 - params.b + params.b * static_cast<double>(chunks[i].token_count) /
                                                                      index.avg_chunk_len());
        double score = 0.0;
        for (const auto& [term, w] : idf) {
            if (auto it = tf_map.find(term); it != tf_map.end()) {
                const double tf = static_cast<double>(it->second);
                score += w * tf / (tf + len_norm);
            }
        }
        if (score > 0.0) {
            out.push_back(ScoredChunk{chunks[i].chunk_id, score});
        }
    }
    sort_scored(out);
    if (out.size() > k) {
        out.resize(k);
    }
    return out;
}

std::vector<ScoredChunk> dense_search(const llm::EmbeddingVector& query, const HybridIndex& index, std::size_t k) {
    if (k == 0) {
        throw Error(ErrorCode::PreconditionFailed, "dense_search needs k >= 1");
    }
    std::vector<ScoredChunk> out;
    out.reserve(index.chunks().size());
    for (const auto& c : index.chunks()) {
        out.push_back(ScoredChunk{c.chunk_id, llm::cosine(query, c.embedding)});
    }
    sort_scored(out);
    if (out.size() > k) {
        out.resize(k);
    }
    return out;
}

std::vector<ScoredChunk> dense_search(std::string_view query, const HybridIndex& index, std::size_t k,
                                      llm::Gateway& gateway) {
    const auto vectors = gateway.embed({std::string(query)});
    return dense_search(vectors.front(), index, k);
}

std::vector<EvidenceCandidate> fuse_rrf(const std::vector<ScoredChunk>& sparse, const std::vector<ScoredChunk>& dense,
                                        std::size_t k_rrf) {
    if (k_rrf == 0) {
        throw Error(ErrorCode::PreconditionFailed, "fuse_rrf needs k_rrf >= 1");
    }
    std::map<std::string, EvidenceCandidate> by_id;
    for (std::size_t i = 0; i < sparse.size(); ++i) {
        auto& c = by_id[sparse[i].chunk_id];
        c.chunk_id = sparse[i].chunk_id;
        if (!c.sparse_rank) {
            c.sparse_rank = i + 1;
        }
    }
    for (std::size_t i = 0; i < dense.size(); ++i) {
        auto& c = by_id[dense[i].chunk_id];
        c.chunk_id = dense[i].chunk_id;
        if (!c.dense_rank) {
            c.dense_rank = i + 1;
        }
    }
    std::vector<EvidenceCandidate> out;
    out.reserve(by_id.size());
    const double k = static_cast<double>(k_rrf);
    for (auto& [_, c] : by_id) {
        double score = 0.0;
        if (c.sparse_rank) {
            score += 1.0 / (k + static_cast<double>(*c.sparse_rank));
        }
        if (c.dense_rank) {
            score += 1.0 / (k + static_cast<double>(*c.dense_rank));
        }
        c.fused_score = score;
        out.push_back(std::move(c));
    }
    std::stable_sort(out.begin(), out.end(), [](const EvidenceCandidate& a, const EvidenceCandidate& b) {
        return a.fused_score > b.fused_score;
    });
    return out;
}

GradeResult grade_evidence(std::string_view atom_text, const std::vector<EvidenceCandidate>& candidates,
                           const HybridIndex& index, llm::Gateway& gateway, std::size_t top_m) {
    if (candidates.empty()) {
        throw Error(ErrorCode::PreconditionFailed, "grade_evidence needs at least one candidate");
    }
    const std::size_t n = std::min(candidates.size(), std::max<std::size_t>(top_m, 1));

    llm::ChatRequest request;
    request.system =
            "You grade retrieved passages for fact-checking. For each passage decide whether it contains "
            "information that supports or contradicts the statement. Reply with JSON only: "
            "{\"grades\": [{\"chunk_id\": string, \"relevant\": boolean, \"rank\": integer, \"note\": string}]} "
            "where rank orders the relevant passages from most to least useful, starting at 1.";
    request.tag = "grade";
    json listed = json::array();
    std::string passages;
    for (std::size_t i = 0; i < n; ++i) {
        const auto* chunk = index.find(candidates[i].chunk_id);
        const std::string text = chunk != nullptr ? chunk->text : "";
        listed.push_back(json{{"chunk_id", candidates[i].chunk_id}, {"text", text}});
        passages += "[" + candidates[i].chunk_id + "]\n" + text + "\n\n";
    }
    request.vars = json{{"atom", atom_text}, {"candidates", listed}};
    request.user = "Statement: " + std::string(atom_text) + "\n\nPassages:\n\n" + passages;

    const json reply = gateway.complete_json(std::move(request));
    const json& grades = reply.is_array() ? reply : reply.value("grades", json::array());

    GradeResult result;
    struct Ranked {
        EvidenceCandidate candidate;
        std::size_t position;
    };
    std::vector<Ranked> relevant;
    std::set<std::string> seen;
    for (const auto& g : grades) {
        if (!g.is_object() || !g.contains("chunk_id") || !g["chunk_id"].is_string()) {
            result.warnings.push_back("grader returned an entry without chunk_id");
            continue;
        }
        const auto id = g["chunk_id"].get<std::string>();
        const auto it = std::find_if(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n),
                                     [&](const EvidenceCandidate& c) { return c.chunk_id == id; });
        if (it == candidates.begin() + static_cast<std::ptrdiff_t>(n)) {
            result.warnings.push_back("grader referenced unknown chunk '" + id + "'; dropped");
            continue;
        }
        if (!seen.insert(id).second) {
            continue;
        }
        Grade grade;
        grade.relevant = g.value("relevant", false);
        grade.rank = g.contains("rank") && g["rank"].is_number() ? g["rank"].get<int>() : 0;
        grade.note = g.contains("note") && g["note"].is_string() ? g["note"].get<std::string>() : "";
        if (!grade.relevant) {
            continue;
        }
        EvidenceCandidate kept = *it;
        kept.grade = grade;
        relevant.push_back(Ranked{std::move(kept), static_cast<std::size_t>(it - candidates.begin())});
    }
    std::stable_sort(relevant.begin(), relevant.end(), [](const Ranked& a, const Ranked& b) {
        // Missing or non-positive ranks sort after ranked entries.
        const auto key = [](const Ranked& r) {
            const int rank = r.candidate.grade->rank;
            return std::make_pair(rank > 0 ? rank : std::numeric_limits<int>::max(), r.position);
        };
        return key(a) < key(b);
    });
    for (auto& r : relevant) {
        result.kept.push_back(std::move(r.candidate));
    }
    return result;
}

}  // namespace benchcard::retrieval
