#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace xmcgen {

enum class RetrieverKind { tfidf, bm25, dense };

RetrieverKind retriever_kind_from_string(const std::string& s);
std::string to_string(RetrieverKind kind);

struct ScoredHit {
    std::uint32_t doc_ordinal;
    double score;
};

/// Text -> unit-norm vector. Implementations must be deterministic per text
/// and safe for concurrent embed() calls.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dimension() const = 0;
    /// Unit norm within 1e-6. All-zero only when the text has no tokens.
    virtual std::vector<float> embed(std::string_view text) const = 0;
};

/// Seeded feature-hashing embedder: each token hashes to a signed bucket,
/// the accumulated vector is L2-normalized. A dependency-free, deterministic
/// stand-in for a neural bi-encoder behind the same interface.
class HashingEmbedder final : public Embedder {
public:
    HashingEmbedder(std::size_t dim, std::uint64_t seed);
    std::size_t dimension() const override { return dim_; }
    std::vector<float> embed(std::string_view text) const override;

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Immutable index over an ordered document collection. top_n is a pure
/// function; concurrent queries from many threads are safe.
///
/// Scoring conventions (the exhaustive oracle in tests follows the same
/// definitions, summing per-term contributions in first-appearance order):
///   tfidf: tf = raw count, idf = ln((N+1)/(df+1)) + 1, score = cosine of
///          the tf*idf vectors (query norm includes out-of-vocabulary terms).
///   bm25:  idf = ln(1 + (N - df + 0.5)/(df + 0.5)), per-term weight
///          qtf * idf * tf*(k1+1)/(tf + k1*(1 - b + b*len/avgdl)).
///   dense: cosine via dot product of unit-norm embeddings.
class RetrieverIndex {
public:
    /// docs must be non-empty; embedder is required iff kind == dense.
    static RetrieverIndex build(const std::vector<std::string>& docs, RetrieverKind kind,
                                std::shared_ptr<const Embedder> embedder = nullptr,
                                Bm25Params params = {});

    RetrieverKind kind() const { return kind_; }
    std::size_t doc_count() const { return doc_count_; }
    const Bm25Params& params() const { return params_; }

    /// min(n, doc_count) hits, scores non-increasing, ties broken by
    /// ascending doc ordinal. Documents without any query-term overlap rank
    /// after all matching documents with score 0. A query with no tokens
    /// returns an empty list.
    std::vector<ScoredHit> top_n(std::string_view query, std::size_t n) const;

    /// Elementwise identical to sequential top_n calls.
    std::vector<std::vector<ScoredHit>> batch_top_n(const std::vector<std::string>& queries,
                                                    std::size_t n) const;

    /// Single binary file: magic "XMCI", version byte, kind tag, payload.
    /// load rejects bad magic and mismatched versions. A dense index needs
    /// its embedder re-supplied on load.
    void save(const std::string& path) const;
    static RetrieverIndex load(const std::string& path,
                               std::shared_ptr<const Embedder> embedder = nullptr);

private:
    RetrieverIndex() = default;

    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };

    std::vector<ScoredHit> top_sparse(std::string_view query, std::size_t n) const;
    std::vector<ScoredHit> top_dense(std::string_view query, std::size_t n) const;
    double idf(std::size_t df) const;

    RetrieverKind kind_ = RetrieverKind::tfidf;
    std::size_t doc_count_ = 0;
    Bm25Params params_;

    // Sparse (tfidf / bm25). Term ids in first-encounter order over the corpus.
    std::vector<std::string> terms_;
    std::vector<std::vector<Posting>> postings_;
    std::vector<std::uint32_t> doc_len_;
    std::vector<double> doc_norm_;  // tfidf: L2 norm of the tf*idf vector
    double avgdl_ = 0.0;

    // Dense: row-major doc_count x dim matrix of unit-norm embeddings.
    std::size_t dim_ = 0;
    std::vector<float> matrix_;
    std::shared_ptr<const Embedder> embedder_;

    class TermMap;
    std::shared_ptr<const TermMap> term_map_;  // term -> id, built once
};

} // namespace xmcgen
