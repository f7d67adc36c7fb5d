#pragma once

#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "xmcgen/corpus.hpp"
#include "xmcgen/rerank.hpp"

namespace xmcgen {

struct MetricPair {
    double precision = 0.0;
    double recall = 0.0;
};

struct EvalReport {
    std::map<std::size_t, MetricPair> per_k;
    std::size_t n_evaluated = 0;
    std::size_t n_skipped = 0;  // predictions without ground truth
};

/// |top-k(pred) ∩ truth| / k. top-k takes min(k, |pred|) items but the
/// divisor stays k. Throws std::invalid_argument on k == 0 or empty truth.
double precision_at_k(const std::vector<std::string>& pred,
                      const std::unordered_set<std::string>& truth, std::size_t k);

/// |top-k(pred) ∩ truth| / |truth|.
double recall_at_k(const std::vector<std::string>& pred,
                   const std::unordered_set<std::string>& truth, std::size_t k);

/// Line-delimited prediction file. A uid appearing twice is an error.
std::vector<RankedPrediction> load_predictions(const std::string& path);

/// Macro-average over predictions that have ground truth; the rest are
/// counted in n_skipped. Aggregation sums integer hit counts (and
/// recall contributions in uid order), so line order never changes the
/// result. Throws std::invalid_argument when ks is empty.
EvalReport evaluate(const std::vector<RankedPrediction>& predictions, const GroundTruth& truth,
                    const std::vector<std::size_t>& ks);

/// {"P@1": ..., "R@10": ..., "n_evaluated": ..., "n_skipped": ...} with
/// metric values rounded to 4 decimals for display. Keys ordered P@ks,
/// R@ks, counts.
std::string format_report(const EvalReport& report);

} // namespace xmcgen
