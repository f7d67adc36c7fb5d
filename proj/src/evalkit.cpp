#include "xmcgen/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace xmcgen {

namespace {

std::size_t hits_at_k(const std::vector<std::string>& pred,
                      const std::unordered_set<std::string>& truth, std::size_t k) {
    const std::size_t take = std::min(k, pred.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < take; ++i) hits += truth.count(pred[i]);
    return hits;
}

void check_args(const std::unordered_set<std::string>& truth, std::size_t k) {
    if (k == 0) throw std::invalid_argument("k must be positive");
    if (truth.empty()) throw std::invalid_argument("metric undefined for empty ground truth");
}

} // namespace

double precision_at_k(const std::vector<std::string>& pred,
                      const std::unordered_set<std::string>& truth, std::size_t k) {
    check_args(truth, k);
    return static_cast<double>(hits_at_k(pred, truth, k)) / static_cast<double>(k);
}

double recall_at_k(const std::vector<std::string>& pred,
                   const std::unordered_set<std::string>& truth, std::size_t k) {
    check_args(truth, k);
    return static_cast<double>(hits_at_k(pred, truth, k)) / static_cast<double>(truth.size());
}

std::vector<RankedPrediction> load_predictions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open prediction file: " + path);
    std::vector<RankedPrediction> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        RankedPrediction pred;
        try {
            pred = parse_prediction_line(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!seen.insert(pred.uid).second) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": duplicate prediction uid: " + pred.uid);
        }
        out.push_back(std::move(pred));
    }
    return out;
}

EvalReport evaluate(const std::vector<RankedPrediction>& predictions, const GroundTruth& truth,
                    const std::vector<std::size_t>& ks) {
    if (ks.empty()) throw std::invalid_argument("ks must be non-empty");
    for (auto k : ks) {
        if (k == 0) throw std::invalid_argument("k must be positive");
    }

    struct Row {
        const RankedPrediction* pred;
        const std::unordered_set<std::string>* truth;
    };
    std::vector<Row> rows;
    EvalReport report;
    for (const auto& pred : predictions) {
        const auto it = truth.relevance.find(pred.uid);
        if (it == truth.relevance.end() || it->second.empty()) {
            ++report.n_skipped;
            continue;
        }
        rows.push_back({&pred, &it->second});
    }
    report.n_evaluated = rows.size();

    // uid order makes the recall sum independent of file line order.
    std::sort(rows.begin(), rows.end(),
              [](const Row& a, const Row& b) { return a.pred->uid < b.pred->uid; });

    for (auto k : ks) {
        MetricPair pair;
        if (!rows.empty()) {
            std::size_t hit_sum = 0;
            double recall_sum = 0.0;
            for (const auto& row : rows) {
                const std::size_t hits = hits_at_k(row.pred->lids, *row.truth, k);
                hit_sum += hits;
                recall_sum += static_cast<double>(hits) / static_cast<double>(row.truth->size());
            }
            pair.precision = static_cast<double>(hit_sum) /
                             (static_cast<double>(k) * static_cast<double>(rows.size()));
            pair.recall = recall_sum / static_cast<double>(rows.size());
        }
        report.per_k[k] = pair;
    }
    return report;
}

std::string format_report(const EvalReport& report) {
    auto rounded = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", v);
        return std::string(buf);
    };
    std::string out = "{";
    for (const auto& [k, pair] : report.per_k) {
        out += "\"P@" + std::to_string(k) + "\": " + rounded(pair.precision) + ", ";
    }
    for (const auto& [k, pair] : report.per_k) {
        out += "\"R@" + std::to_string(k) + "\": " + rounded(pair.recall) + ", ";
    }
    out += "\"n_evaluated\": " + std::to_string(report.n_evaluated) + ", ";
    out += "\"n_skipped\": " + std::to_string(report.n_skipped) + "}";
    return out;
}

} // namespace xmcgen
