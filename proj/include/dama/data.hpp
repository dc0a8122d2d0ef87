#pragma once

// Corpus ingestion, vocabulary, splits, batching, pretrained vectors and
// the synthetic multi-domain generator. File format: UTF-8 text, one
// example per line, "label<TAB>text" (or "text<TAB>label" with
// label_last), labels 0/1, whitespace tokenization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dama/layers.hpp"
#include "dama/net.hpp"
#include "dama/rng.hpp"

namespace dama {

struct TextExample {
    std::vector<std::string> tokens;
    int y_s = 0;
};

struct LoadStats {
    std::size_t total_lines = 0;
    std::size_t malformed = 0;
    std::size_t empty_skipped = 0;
};

struct TextCorpus {
    std::string name;
    std::size_t domain_index = 0;
    std::vector<TextExample> train, val, test;
    LoadStats stats;
};

struct Example {
    std::vector<std::int32_t> ids;
    std::size_t y_s = 0;
    std::size_t y_d = 0;
};

struct DomainCorpus {
    std::string name;
    std::size_t domain_index = 0;
    std::vector<Example> train, val, test;
};

// ------------------------------------------------------------------ file IO

inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

inline std::vector<TextExample> load_corpus_file(const std::string& path, bool label_last,
                                                 LoadStats& stats) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    std::vector<TextExample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++stats.total_lines;
        const std::size_t tab = label_last ? line.rfind('\t') : line.find('\t');
        if (tab == std::string::npos) {
            ++stats.malformed;
            continue;
        }
        const std::string label_str = label_last ? line.substr(tab + 1) : line.substr(0, tab);
        const std::string text = label_last ? line.substr(0, tab) : line.substr(tab + 1);
        if (label_str != "0" && label_str != "1") {
            ++stats.malformed;
            continue;
        }
        TextExample ex;
        ex.y_s = label_str == "1" ? 1 : 0;
        ex.tokens = tokenize(text);
        if (ex.tokens.empty()) {
            ++stats.empty_skipped;
            continue;
        }
        out.push_back(std::move(ex));
    }
    if (stats.total_lines > 0 &&
        static_cast<double>(stats.malformed) > 0.10 * static_cast<double>(stats.total_lines)) {
        throw std::runtime_error(path + ": " + std::to_string(stats.malformed) + " of " +
                                 std::to_string(stats.total_lines) + " lines malformed (>10%)");
    }
    return out;
}

inline void write_corpus_file(const std::string& path, const std::vector<TextExample>& examples,
                              bool label_last = false) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    for (const TextExample& ex : examples) {
        std::string text;
        for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
            if (i) text += ' ';
            text += ex.tokens[i];
        }
        if (label_last) {
            out << text << '\t' << ex.y_s << '\n';
        } else {
            out << ex.y_s << '\t' << text << '\n';
        }
    }
}

// Loads <dir>/<name>.train.txt, optional .val.txt, .test.txt.
inline TextCorpus load_corpus(const std::string& dir, const std::string& name,
                              std::size_t domain_index, bool label_last = false) {
    TextCorpus c;
    c.name = name;
    c.domain_index = domain_index;
    c.train = load_corpus_file(dir + "/" + name + ".train.txt", label_last, c.stats);
    {
        std::ifstream probe(dir + "/" + name + ".val.txt");
        if (probe) c.val = load_corpus_file(dir + "/" + name + ".val.txt", label_last, c.stats);
    }
    {
        std::ifstream probe(dir + "/" + name + ".test.txt");
        if (probe) c.test = load_corpus_file(dir + "/" + name + ".test.txt", label_last, c.stats);
    }
    return c;
}

// ----------------------------------------------------------------- splitting

// Carves ceil(ratio * n) validation examples out of train with a seeded
// per-class shuffle, so both sentiment classes appear in val whenever both
// exist in train. Returns the number moved.
inline std::size_t split_val(TextCorpus& corpus, double ratio, std::uint64_t seed) {
    const std::size_t n = corpus.train.size();
    if (n == 0) throw std::invalid_argument("split_val: empty train split");
    const std::size_t k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n)));
    if (k == 0) return 0;

    std::vector<std::size_t> idx_by_class[2];
    for (std::size_t i = 0; i < n; ++i) idx_by_class[corpus.train[i].y_s].push_back(i);

    // largest-remainder allocation of k across the present classes
    std::size_t quota[2] = {0, 0};
    double frac[2] = {0, 0};
    std::size_t assigned = 0;
    for (int c = 0; c < 2; ++c) {
        const double share =
            static_cast<double>(k) * static_cast<double>(idx_by_class[c].size()) /
            static_cast<double>(n);
        quota[c] = static_cast<std::size_t>(share);
        frac[c] = share - static_cast<double>(quota[c]);
        assigned += quota[c];
    }
    while (assigned < k) {
        const int c = frac[0] >= frac[1] ? 0 : 1;
        ++quota[c];
        frac[c] = -1.0;
        ++assigned;
    }
    for (int c = 0; c < 2; ++c) {
        if (!idx_by_class[c].empty() && quota[c] == 0 && k >= 2) {
            const int other = 1 - c;
            if (quota[other] > 1) {
                --quota[other];
                ++quota[c];
            }
        }
        quota[c] = std::min(quota[c], idx_by_class[c].size());
    }

    RngStream rng(seed);
    std::vector<bool> to_val(n, false);
    for (int c = 0; c < 2; ++c) {
        rng.shuffle(idx_by_class[c]);
        for (std::size_t j = idx_by_class[c].size() - quota[c]; j < idx_by_class[c].size(); ++j) {
            to_val[idx_by_class[c][j]] = true;
        }
    }
    std::vector<TextExample> kept, moved;
    for (std::size_t i = 0; i < n; ++i) {
        (to_val[i] ? moved : kept).push_back(std::move(corpus.train[i]));
    }
    corpus.train = std::move(kept);
    for (TextExample& ex : moved) corpus.val.push_back(std::move(ex));
    return moved.size();
}

// --------------------------------------------------------------- vocabulary

struct Vocab {
    std::unordered_map<std::string, std::int32_t> to_id;
    std::vector<std::string> id_to_token; // [0]=<pad>, [1]=<unk>
    std::size_t max_len = 64;

    Vocab() : id_to_token{"<pad>", "<unk>"} {
        to_id["<pad>"] = kPadId;
        to_id["<unk>"] = kUnkId;
    }

    std::size_t size() const { return id_to_token.size(); }

    std::int32_t id_of(const std::string& token) const {
        auto it = to_id.find(token);
        return it == to_id.end() ? kUnkId : it->second;
    }
};

// Frequency-sorted vocabulary over the TRAIN splits only; ties break
// lexicographically; tokens below min_freq stay unknown.
inline Vocab build_vocab(const std::vector<TextCorpus>& corpora, std::size_t min_freq,
                         std::size_t max_len) {
    if (corpora.empty()) throw std::invalid_argument("build_vocab: no corpora");
    std::map<std::string, std::size_t> counts;
    for (const TextCorpus& c : corpora) {
        for (const TextExample& ex : c.train) {
            for (const std::string& t : ex.tokens) ++counts[t];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    v.max_len = max_len;
    for (const auto& [token, freq] : items) {
        if (freq < min_freq) continue;
        v.to_id[token] = static_cast<std::int32_t>(v.id_to_token.size());
        v.id_to_token.push_back(token);
    }
    return v;
}

inline Example encode_example(const Vocab& v, const TextExample& ex, std::size_t domain_index) {
    Example out;
    out.y_s = static_cast<std::size_t>(ex.y_s);
    out.y_d = domain_index;
    const std::size_t n = std::min(ex.tokens.size(), v.max_len);
    out.ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.ids.push_back(v.id_of(ex.tokens[i]));
    return out;
}

inline DomainCorpus encode_corpus(const Vocab& v, const TextCorpus& c) {
    DomainCorpus out;
    out.name = c.name;
    out.domain_index = c.domain_index;
    for (const TextExample& ex : c.train) out.train.push_back(encode_example(v, ex, c.domain_index));
    for (const TextExample& ex : c.val) out.val.push_back(encode_example(v, ex, c.domain_index));
    for (const TextExample& ex : c.test) out.test.push_back(encode_example(v, ex, c.domain_index));
    return out;
}

// ------------------------------------------------------- pretrained vectors

struct VectorLoadStats {
    std::size_t file_tokens = 0;
    std::size_t matched = 0;
    std::size_t duplicates = 0;
    double coverage = 0.0; // matched / vocab size (specials excluded)
};

// Text format: token followed by dim floats per line. Matching vocab rows
// are overwritten; the rest keep their random init. Last duplicate wins.
inline VectorLoadStats load_vectors(const std::string& path, const Vocab& vocab,
                                    EmbeddingTable& table) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vector file: " + path);
    VectorLoadStats stats;
    std::vector<bool> seen(vocab.size(), false);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string token;
        is >> token;
        std::vector<double> values;
        double v;
        while (is >> v) values.push_back(v);
        if (values.size() != table.dim) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                                     std::to_string(table.dim) + " values for token '" + token +
                                     "', got " + std::to_string(values.size()));
        }
        ++stats.file_tokens;
        auto it = vocab.to_id.find(token);
        if (it == vocab.to_id.end() || it->second < 2) continue;
        const std::size_t row = static_cast<std::size_t>(it->second);
        if (seen[row]) {
            ++stats.duplicates;
        } else {
            seen[row] = true;
            ++stats.matched;
        }
        std::copy(values.begin(), values.end(), table.weights.row(row));
    }
    const std::size_t real = vocab.size() > 2 ? vocab.size() - 2 : 0;
    stats.coverage = real ? static_cast<double>(stats.matched) / static_cast<double>(real) : 0.0;
    return stats;
}

// ----------------------------------------------------------- synthetic data

struct SynthSpec {
    std::size_t num_domains = 4;
    std::size_t vocab_size = 300; // target size of the generated word pool
    std::size_t seq_len = 10;
    std::size_t n_train = 800;
    std::size_t n_val = 200;
    std::size_t n_test = 200;
    // Probability that an example's sentiment is carried ONLY by the
    // (domain marker, ambiguous word) combination, whose meaning flips
    // across domains.
    std::vector<double> domain_utility;
};

namespace synth_detail {

struct Pools {
    std::vector<std::vector<std::string>> markers; // per domain
    std::vector<std::string> amb, pos, neg, fillers;
};

inline Pools make_pools(const SynthSpec& spec) {
    Pools p;
    p.markers.resize(spec.num_domains);
    for (std::size_t d = 0; d < spec.num_domains; ++d) {
        for (int k = 0; k < 3; ++k) {
            p.markers[d].push_back("mk" + std::to_string(d) + "_" + std::to_string(k));
        }
    }
    const std::size_t amb_n = 8;
    for (std::size_t a = 0; a < amb_n; ++a) p.amb.push_back("amb" + std::to_string(a));
    const std::size_t used = 3 * spec.num_domains + amb_n;
    const std::size_t rest = spec.vocab_size > used + 12 ? spec.vocab_size - used : 12;
    const std::size_t pol = std::max<std::size_t>(4, rest / 4);
    for (std::size_t i = 0; i < pol; ++i) p.pos.push_back("pos" + std::to_string(i));
    for (std::size_t i = 0; i < pol; ++i) p.neg.push_back("neg" + std::to_string(i));
    const std::size_t fill = std::max<std::size_t>(4, rest - 2 * pol);
    for (std::size_t i = 0; i < fill; ++i) p.fillers.push_back("fil" + std::to_string(i));
    return p;
}

// Ambiguous word a reads positive in domain j iff (a + j) is even.
inline bool amb_positive(std::size_t a, std::size_t domain) { return (a + domain) % 2 == 0; }

inline TextExample make_example(const SynthSpec& spec, const Pools& pools, std::size_t domain,
                                int label, RngStream& rng) {
    TextExample ex;
    ex.y_s = label;
    auto& toks = ex.tokens;
    toks.push_back(pools.markers[domain][rng.next_below(pools.markers[domain].size())]);
    toks.push_back(pools.markers[domain][rng.next_below(pools.markers[domain].size())]);
    if (rng.bernoulli(spec.domain_utility[domain])) {
        std::vector<std::size_t> candidates;
        for (std::size_t a = 0; a < pools.amb.size(); ++a) {
            if (amb_positive(a, domain) == (label == 1)) candidates.push_back(a);
        }
        toks.push_back(pools.amb[candidates[rng.next_below(candidates.size())]]);
        if (rng.bernoulli(0.5)) {
            // contradictory noise: a shared polarity word uncorrelated with the label
            const bool pos = rng.bernoulli(0.5);
            const auto& pool = pos ? pools.pos : pools.neg;
            toks.push_back(pool[rng.next_below(pool.size())]);
        }
    } else {
        const std::size_t n_pol = 1 + rng.next_below(2);
        const auto& pool = label == 1 ? pools.pos : pools.neg;
        for (std::size_t i = 0; i < n_pol; ++i) toks.push_back(pool[rng.next_below(pool.size())]);
    }
    while (toks.size() < spec.seq_len) {
        toks.push_back(pools.fillers[rng.next_below(pools.fillers.size())]);
    }
    toks.resize(spec.seq_len);
    rng.shuffle(toks);
    return ex;
}

} // namespace synth_detail

// Deterministic multi-domain corpus with exactly balanced labels. Domains
// whose utility is high can only be classified by combining the marker
// tokens with the ambiguous words, which is what makes stage-2 modulation
// observable at desk scale.
inline std::vector<TextCorpus> gen_synthetic(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.domain_utility.size() != spec.num_domains) {
        throw std::invalid_argument("gen_synthetic: domain_utility size mismatch");
    }
    for (double u : spec.domain_utility) {
        if (u < 0.0 || u > 1.0) throw std::invalid_argument("gen_synthetic: utility outside [0,1]");
    }
    const synth_detail::Pools pools = synth_detail::make_pools(spec);
    std::vector<TextCorpus> out;
    for (std::size_t d = 0; d < spec.num_domains; ++d) {
        TextCorpus c;
        c.name = "synth" + std::to_string(d);
        c.domain_index = d;
        RngStream rng = derive_stream(seed, "synth/domain/" + std::to_string(d));
        auto fill = [&](std::vector<TextExample>& dst, std::size_t count) {
            for (std::size_t i = 0; i < count; ++i) {
                dst.push_back(synth_detail::make_example(spec, pools, d,
                                                         static_cast<int>(i % 2), rng));
            }
        };
        fill(c.train, spec.n_train);
        fill(c.val, spec.n_val);
        fill(c.test, spec.n_test);
        out.push_back(std::move(c));
    }
    return out;
}

// ----------------------------------------------------------------- batching

// Seeded shuffle (optional), fixed batch size, final partial batch kept,
// ids padded to the longest sequence in each batch.
inline std::vector<std::vector<BatchExample>> batches(const std::vector<Example>& examples,
                                                      std::size_t batch_size, RngStream& rng,
                                                      bool shuffle) {
    if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be >= 1");
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle) rng.shuffle(order);
    std::vector<std::vector<BatchExample>> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        std::size_t max_len = 0;
        for (std::size_t i = start; i < end; ++i) {
            max_len = std::max(max_len, examples[order[i]].ids.size());
        }
        std::vector<BatchExample> batch;
        for (std::size_t i = start; i < end; ++i) {
            const Example& ex = examples[order[i]];
            BatchExample be;
            be.ids = ex.ids;
            be.ids.resize(max_len, kPadId);
            be.labels = {ex.y_s, ex.y_d};
            batch.push_back(std::move(be));
        }
        out.push_back(std::move(batch));
    }
    return out;
}

} // namespace dama
