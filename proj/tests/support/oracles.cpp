#include "support/oracles.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

namespace benchcard::testing {

std::vector<std::string> oracle_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        std::string t;
        for (unsigned char c : word) {
            if (c < 0x80 && std::ispunct(c)) {
                continue;
            }
            t += static_cast<char>(std::tolower(c));
        }
        if (!t.empty()) {
            out.push_back(t);
        }
    }
    return out;
}

std::vector<std::pair<std::string, double>> bm25_brute_force(const std::vector<std::string>& ids,
                                                             const std::vector<std::string>& texts,
                                                             const std::string& query, double k1, double b) {
    const double n = static_cast<double>(texts.size());
    std::vector<std::vector<std::string>> docs;
    std::vector<double> lengths;
    double total = 0;
    for (const auto& t : texts) {
        docs.push_back(oracle_tokens(t));
        std::istringstream in(t);
        std::string w;
        double len = 0;
        while (in >> w) {
            len += 1;
        }
        lengths.push_back(len);
        total += len;
    }
    const double avg = total / n;
    const auto q = oracle_tokens(query);
    const std::set<std::string> terms(q.begin(), q.end());

    std::vector<std::pair<std::string, double>> out;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        double score = 0;
        for (const auto& term : terms) {
            double df = 0;
            for (const auto& doc : docs) {
                if (std::count(doc.begin(), doc.end(), term) > 0) {
                    df += 1;
                }
            }
            const double tf = static_cast<double>(std::count(docs[d].begin(), docs[d].end(), term));
            if (tf == 0) {
                continue;
            }
            const double idf = std::log(1 + (n - df + 0.5) / (df + 0.5));
            score += idf * tf / (tf + k1 * (1 - b + b * lengths[d] / avg));
        }
        if (score > 0) {
            out.emplace_back(ids[d], score);
        }
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& c) {
        return a.second != c.second ? a.second > c.second : a.first < c.first;
    });
    return out;
}

std::map<std::string, double> rrf_brute_force(const std::vector<std::string>& sparse,
                                              const std::vector<std::string>& dense, double k) {
    std::set<std::string> all(sparse.begin(), sparse.end());
    all.insert(dense.begin(), dense.end());
    std::map<std::string, double> out;
    for (const auto& id : all) {
        double s = 0;
        for (std::size_t r = 0; r < sparse.size(); ++r) {
            if (sparse[r] == id) {
                s += 1.0 / (k + static_cast<double>(r + 1));
                break;
            }
        }
        for (std::size_t r = 0; r < dense.size(); ++r) {
            if (dense[r] == id) {
                s += 1.0 / (k + static_cast<double>(r + 1));
                break;
            }
        }
        out[id] = s;
    }
    return out;
}

double aggregate_by_odds(const std::vector<VerdictTriple>& verdicts, double eps) {
    long double odds = 1;
    for (const auto& v : verdicts) {
        odds *= (v.pe + eps) / (v.pc + eps);
    }
    return static_cast<double>(odds / (1 + odds));
}

std::string random_markdown(std::mt19937_64& rng, std::size_t max_lines) {
    static const std::vector<std::string> words = {"alpha", "beta", "Gamma,", "delta.", "x", "ümlaut", "测试",
                                                   "(paren)", "#tag", "a-b", "42", "3.14"};
    static const std::vector<std::string> gaps = {" ", "  ", "\t", " \t "};
    std::uniform_int_distribution<std::size_t> line_count(1, std::max<std::size_t>(1, max_lines));
    std::uniform_int_distribution<std::size_t> word_count(0, 14);
    std::uniform_int_distribution<std::size_t> pick_word(0, words.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_gap(0, gaps.size() - 1);
    std::uniform_int_distribution<int> kind(0, 9);
    std::uniform_int_distribution<int> level(1, 4);

    auto sentence = [&](std::size_t min_words) {
        std::string s;
        const std::size_t n = std::max(min_words, word_count(rng));
        for (std::size_t i = 0; i < n; ++i) {
            if (i > 0) {
                s += gaps[pick_gap(rng)];
            }
            s += words[pick_word(rng)];
        }
        return s;
    };

    std::string out;
    const std::size_t lines = line_count(rng);
    bool in_fence = false;
    for (std::size_t i = 0; i < lines; ++i) {
        const int k = kind(rng);
        if (i == 0 || k <= 4) {
            out += sentence(1);
        } else if (k <= 6 && !in_fence) {
            out += std::string(static_cast<std::size_t>(level(rng)), '#') + " " + sentence(1);
        } else if (k == 7) {
            out += in_fence ? "```" : "```text";
            in_fence = !in_fence;
        } else if (k == 8 && in_fence) {
            out += "## not a heading " + sentence(0);
        }
        out += (k == 9 ? "\n\n" : "\n");
    }
    if (in_fence) {
        out += "```\n";
    }
    return out;
}

std::vector<std::string> random_ranking(std::mt19937_64& rng, std::size_t pool, std::size_t max_len) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < pool; ++i) {
        ids.push_back("w" + std::to_string(i));
    }
    std::shuffle(ids.begin(), ids.end(), rng);
    std::uniform_int_distribution<std::size_t> len(0, std::min(pool, max_len));
    ids.resize(len(rng));
    return ids;
}

}  // namespace benchcard::testing
