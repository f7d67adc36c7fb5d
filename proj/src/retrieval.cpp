#include "xmcgen/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "xmcgen/util.hpp"

namespace xmcgen {

class RetrieverIndex::TermMap {
public:
    explicit TermMap(const std::vector<std::string>& terms) {
        map_.reserve(terms.size() * 2);
        for (std::size_t i = 0; i < terms.size(); ++i) {
            map_.emplace(terms[i], static_cast<std::uint32_t>(i));
        }
    }

    // Returns term id or npos.
    static constexpr std::uint32_t npos = 0xffffffffu;
    std::uint32_t find(const std::string& term) const {
        auto it = map_.find(term);
        return it == map_.end() ? npos : it->second;
    }

private:
    std::unordered_map<std::string, std::uint32_t> map_;
};

RetrieverKind retriever_kind_from_string(const std::string& s) {
    if (s == "tfidf") return RetrieverKind::tfidf;
    if (s == "bm25") return RetrieverKind::bm25;
    if (s == "dense") return RetrieverKind::dense;
    throw std::invalid_argument("unknown retriever kind: " + s);
}

std::string to_string(RetrieverKind kind) {
    switch (kind) {
        case RetrieverKind::tfidf: return "tfidf";
        case RetrieverKind::bm25: return "bm25";
        case RetrieverKind::dense: return "dense";
    }
    return "?";
}

HashingEmbedder::HashingEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim_ == 0) throw std::invalid_argument("embedder dimension must be positive");
}

std::vector<float> HashingEmbedder::embed(std::string_view text) const {
    std::vector<float> v(dim_, 0.0f);
    bool any = false;
    for (const std::string& tok : tokenize(text)) {
        const std::uint64_t h = fnv1a64(tok) ^ seed_;
        const std::size_t bucket = static_cast<std::size_t>(h % dim_);
        const float sign = ((h >> 63) & 1) ? -1.0f : 1.0f;
        v[bucket] += sign;
        any = true;
    }
    if (!any) return v;  // all-zero signals an empty query
    double norm = 0.0;
    for (float x : v) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        // Signed buckets cancelled out exactly; fall back to a deterministic
        // one-hot so the unit-norm contract still holds for non-empty text.
        v[fnv1a64(text) % dim_] = 1.0f;
        return v;
    }
    for (float& x : v) x = static_cast<float>(x / norm);
    return v;
}

double RetrieverIndex::idf(std::size_t df) const {
    const double n = static_cast<double>(doc_count_);
    const double d = static_cast<double>(df);
    if (kind_ == RetrieverKind::tfidf) {
        return std::log((n + 1.0) / (d + 1.0)) + 1.0;
    }
    // Non-negative BM25 idf.
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

RetrieverIndex RetrieverIndex::build(const std::vector<std::string>& docs, RetrieverKind kind,
                                     std::shared_ptr<const Embedder> embedder, Bm25Params params) {
    if (docs.empty()) throw std::invalid_argument("cannot build an index over an empty collection");
    if (kind == RetrieverKind::dense && !embedder) {
        throw std::invalid_argument("dense index requires an embedder");
    }
    if (kind != RetrieverKind::dense && embedder) {
        embedder.reset();  // lexical kinds ignore it
    }

    RetrieverIndex index;
    index.kind_ = kind;
    index.doc_count_ = docs.size();
    index.params_ = params;

    if (kind == RetrieverKind::dense) {
        index.dim_ = embedder->dimension();
        index.embedder_ = std::move(embedder);
        index.matrix_.resize(index.doc_count_ * index.dim_);
        for (std::size_t d = 0; d < docs.size(); ++d) {
            std::vector<float> v = index.embedder_->embed(docs[d]);
            if (v.size() != index.dim_) throw std::runtime_error("embedder returned wrong dimension");
            std::copy(v.begin(), v.end(), index.matrix_.begin() + d * index.dim_);
        }
        return index;
    }

    std::unordered_map<std::string, std::uint32_t> vocab;
    index.doc_len_.resize(docs.size());
    std::vector<std::uint32_t> term_ids;  // scratch, per doc
    for (std::size_t d = 0; d < docs.size(); ++d) {
        const std::vector<std::string> toks = tokenize(docs[d]);
        index.doc_len_[d] = static_cast<std::uint32_t>(toks.size());
        // Count term frequencies preserving first-appearance order within the doc.
        term_ids.clear();
        std::unordered_map<std::uint32_t, std::uint32_t> tf;
        for (const std::string& tok : toks) {
            auto [it, inserted] = vocab.emplace(tok, static_cast<std::uint32_t>(index.terms_.size()));
            if (inserted) {
                index.terms_.push_back(tok);
                index.postings_.emplace_back();
            }
            auto [tf_it, first_in_doc] = tf.emplace(it->second, 0u);
            if (first_in_doc) term_ids.push_back(it->second);
            ++tf_it->second;
        }
        for (std::uint32_t tid : term_ids) {
            index.postings_[tid].push_back(Posting{static_cast<std::uint32_t>(d), tf[tid]});
        }
    }

    double total_len = 0.0;
    for (std::uint32_t len : index.doc_len_) total_len += len;
    index.avgdl_ = index.doc_count_ ? total_len / static_cast<double>(index.doc_count_) : 0.0;

    if (kind == RetrieverKind::tfidf) {
        // Per-doc L2 norms, accumulated in the doc's first-appearance term
        // order so results are bit-reproducible.
        index.doc_norm_.assign(docs.size(), 0.0);
        for (std::size_t d = 0; d < docs.size(); ++d) {
            const std::vector<std::string> toks = tokenize(docs[d]);
            std::unordered_map<std::uint32_t, std::uint32_t> tf;
            std::vector<std::uint32_t> order;
            for (const std::string& tok : toks) {
                const std::uint32_t tid = vocab.at(tok);
                auto [it, first] = tf.emplace(tid, 0u);
                if (first) order.push_back(tid);
                ++it->second;
            }
            double sum = 0.0;
            for (std::uint32_t tid : order) {
                const double w = static_cast<double>(tf[tid]) *
                                 index.idf(index.postings_[tid].size());
                sum += w * w;
            }
            index.doc_norm_[d] = std::sqrt(sum);
        }
    }

    index.term_map_ = std::make_shared<const TermMap>(index.terms_);
    return index;
}

namespace {

void sort_hits(std::vector<ScoredHit>& hits) {
    std::sort(hits.begin(), hits.end(), [](const ScoredHit& a, const ScoredHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_ordinal < b.doc_ordinal;
    });
}

} // namespace

std::vector<ScoredHit> RetrieverIndex::top_sparse(std::string_view query, std::size_t n) const {
    const std::vector<std::string> toks = tokenize(query);
    if (toks.empty()) return {};

    // Unique query terms in first-appearance order, with multiplicities.
    std::vector<std::pair<std::string, std::uint32_t>> qterms;
    {
        std::unordered_map<std::string, std::size_t> pos;
        for (const std::string& tok : toks) {
            auto [it, inserted] = pos.emplace(tok, qterms.size());
            if (inserted) {
                qterms.emplace_back(tok, 1u);
            } else {
                ++qterms[it->second].second;
            }
        }
    }

    std::unordered_map<std::uint32_t, double> acc;
    double query_norm_sq = 0.0;  // tfidf only; includes out-of-vocab terms
    for (const auto& [term, qtf] : qterms) {
        const std::uint32_t tid = term_map_->find(term);
        const std::size_t df = (tid == TermMap::npos) ? 0 : postings_[tid].size();
        const double w_idf = idf(df);
        if (kind_ == RetrieverKind::tfidf) {
            const double qw = static_cast<double>(qtf) * w_idf;
            query_norm_sq += qw * qw;
        }
        if (tid == TermMap::npos) continue;
        if (kind_ == RetrieverKind::tfidf) {
            const double qw = static_cast<double>(qtf) * w_idf;
            for (const Posting& p : postings_[tid]) {
                acc[p.doc] += qw * static_cast<double>(p.tf) * w_idf;
            }
        } else {
            const double k1 = params_.k1;
            const double b = params_.b;
            for (const Posting& p : postings_[tid]) {
                const double tf = static_cast<double>(p.tf);
                const double norm_len = avgdl_ > 0.0
                    ? static_cast<double>(doc_len_[p.doc]) / avgdl_ : 0.0;
                const double w = w_idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm_len));
                acc[p.doc] += static_cast<double>(qtf) * w;
            }
        }
    }

    std::vector<ScoredHit> hits;
    hits.reserve(acc.size());
    if (kind_ == RetrieverKind::tfidf) {
        const double qnorm = std::sqrt(query_norm_sq);
        for (const auto& [doc, dot] : acc) {
            const double denom = qnorm * doc_norm_[doc];
            hits.push_back(ScoredHit{doc, denom > 0.0 ? dot / denom : 0.0});
        }
    } else {
        for (const auto& [doc, score] : acc) hits.push_back(ScoredHit{doc, score});
    }
    sort_hits(hits);

    const std::size_t want = std::min(n, doc_count_);
    if (hits.size() > want) hits.resize(want);
    if (hits.size() < want) {
        // Pad with unmatched documents at score 0, ascending ordinal.
        std::vector<char> seen(doc_count_, 0);
        for (const ScoredHit& h : hits) seen[h.doc_ordinal] = 1;
        for (std::uint32_t d = 0; d < doc_count_ && hits.size() < want; ++d) {
            if (!seen[d]) hits.push_back(ScoredHit{d, 0.0});
        }
    }
    return hits;
}

std::vector<ScoredHit> RetrieverIndex::top_dense(std::string_view query, std::size_t n) const {
    if (!embedder_) throw std::logic_error("dense index has no embedder attached");
    const std::vector<float> q = embedder_->embed(query);
    if (q.size() != dim_) throw std::runtime_error("embedder returned wrong dimension");
    bool all_zero = true;
    for (float x : q) {
        if (x != 0.0f) { all_zero = false; break; }
    }
    if (all_zero) return {};

    std::vector<ScoredHit> hits;
    hits.reserve(doc_count_);
    for (std::size_t d = 0; d < doc_count_; ++d) {
        const float* row = matrix_.data() + d * dim_;
        double dot = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) {
            dot += static_cast<double>(row[i]) * static_cast<double>(q[i]);
        }
        hits.push_back(ScoredHit{static_cast<std::uint32_t>(d), dot});
    }
    const std::size_t want = std::min(n, doc_count_);
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(want), hits.end(),
                      [](const ScoredHit& a, const ScoredHit& b) {
                          if (a.score != b.score) return a.score > b.score;
                          return a.doc_ordinal < b.doc_ordinal;
                      });
    hits.resize(want);
    return hits;
}

std::vector<ScoredHit> RetrieverIndex::top_n(std::string_view query, std::size_t n) const {
    if (n == 0) throw std::invalid_argument("top_n requires n >= 1");
    if (kind_ == RetrieverKind::dense) return top_dense(query, n);
    return top_sparse(query, n);
}

std::vector<std::vector<ScoredHit>> RetrieverIndex::batch_top_n(
    const std::vector<std::string>& queries, std::size_t n) const {
    std::vector<std::vector<ScoredHit>> out;
    out.reserve(queries.size());
    for (const std::string& q : queries) out.push_back(top_n(q, n));
    return out;
}

// ---------------------------------------------------------------------------
// Serialization: magic "XMCI", version byte, kind byte, payload.

namespace {

constexpr char kMagic[4] = {'X', 'M', 'C', 'I'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

struct Reader {
    const std::string& data;
    std::size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > data.size()) throw std::runtime_error("truncated index file");
        T v;
        std::memcpy(&v, data.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    std::string get_str() {
        const auto len = get<std::uint32_t>();
        if (pos + len > data.size()) throw std::runtime_error("truncated index file");
        std::string s = data.substr(pos, len);
        pos += len;
        return s;
    }
};

} // namespace

void RetrieverIndex::save(const std::string& path) const {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put<std::uint8_t>(out, kVersion);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(kind_));
    put<std::uint64_t>(out, doc_count_);
    if (kind_ == RetrieverKind::dense) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
        out.reserve(out.size() + matrix_.size() * sizeof(float));
        for (float x : matrix_) put<float>(out, x);
    } else {
        put<double>(out, params_.k1);
        put<double>(out, params_.b);
        put<double>(out, avgdl_);
        put<std::uint64_t>(out, terms_.size());
        for (std::size_t t = 0; t < terms_.size(); ++t) {
            put_str(out, terms_[t]);
            put<std::uint64_t>(out, postings_[t].size());
            for (const Posting& p : postings_[t]) {
                put<std::uint32_t>(out, p.doc);
                put<std::uint32_t>(out, p.tf);
            }
        }
        for (std::uint32_t len : doc_len_) put<std::uint32_t>(out, len);
        put<std::uint8_t>(out, doc_norm_.empty() ? 0 : 1);
        for (double x : doc_norm_) put<double>(out, x);
    }
    write_file_atomic(path, out);
}

RetrieverIndex RetrieverIndex::load(const std::string& path,
                                    std::shared_ptr<const Embedder> embedder) {
    const std::string data = read_file(path);
    Reader r{data};
    char magic[4];
    for (char& c : magic) c = r.get<char>();
    if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error(path + ": not an index file");
    const auto version = r.get<std::uint8_t>();
    if (version != kVersion) {
        throw std::runtime_error(path + ": unsupported index version " + std::to_string(version));
    }
    RetrieverIndex index;
    const auto kind_tag = r.get<std::uint8_t>();
    if (kind_tag > static_cast<std::uint8_t>(RetrieverKind::dense)) {
        throw std::runtime_error(path + ": unknown retriever kind tag");
    }
    index.kind_ = static_cast<RetrieverKind>(kind_tag);
    index.doc_count_ = r.get<std::uint64_t>();
    if (index.kind_ == RetrieverKind::dense) {
        index.dim_ = r.get<std::uint32_t>();
        index.matrix_.resize(index.doc_count_ * index.dim_);
        for (float& x : index.matrix_) x = r.get<float>();
        if (embedder && embedder->dimension() != index.dim_) {
            throw std::runtime_error(path + ": embedder dimension mismatch");
        }
        index.embedder_ = std::move(embedder);
    } else {
        index.params_.k1 = r.get<double>();
        index.params_.b = r.get<double>();
        index.avgdl_ = r.get<double>();
        const auto n_terms = r.get<std::uint64_t>();
        index.terms_.reserve(n_terms);
        index.postings_.reserve(n_terms);
        for (std::uint64_t t = 0; t < n_terms; ++t) {
            index.terms_.push_back(r.get_str());
            const auto n_post = r.get<std::uint64_t>();
            std::vector<Posting> plist;
            plist.reserve(n_post);
            for (std::uint64_t i = 0; i < n_post; ++i) {
                const auto doc = r.get<std::uint32_t>();
                const auto tf = r.get<std::uint32_t>();
                plist.push_back(Posting{doc, tf});
            }
            index.postings_.push_back(std::move(plist));
        }
        index.doc_len_.resize(index.doc_count_);
        for (auto& len : index.doc_len_) len = r.get<std::uint32_t>();
        if (r.get<std::uint8_t>() != 0) {
            index.doc_norm_.resize(index.doc_count_);
            for (double& x : index.doc_norm_) x = r.get<double>();
        }
        index.term_map_ = std::make_shared<const TermMap>(index.terms_);
    }
    return index;
}

} // namespace xmcgen
