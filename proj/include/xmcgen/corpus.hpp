#pragma once

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace xmcgen {

/// One test or train input. Collections are immutable after loading and
/// safe to share across threads.
struct Instance {
    std::string uid;
    std::string title;
    std::string content;  // may be empty
};

struct Label {
    std::string lid;
    std::string text;
};

/// The full label set: ordered labels plus a dense lid -> ordinal index.
class LabelSpace {
public:
    /// Throws std::invalid_argument on duplicate lid or empty lid/text.
    void add(Label label);

    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }
    const Label& at(std::size_t ordinal) const { return labels_.at(ordinal); }
    const std::vector<Label>& labels() const { return labels_; }

    bool contains(const std::string& lid) const { return index_.count(lid) != 0; }

    /// Throws std::out_of_range when lid is not in the space.
    std::size_t ordinal_of(const std::string& lid) const;

private:
    std::vector<Label> labels_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// How an Instance becomes retrieval query/document text.
enum class QueryTextPolicy { title, title_content };

QueryTextPolicy query_text_policy_from_string(const std::string& s);
std::string to_string(QueryTextPolicy policy);

/// title, or "title content" (single space) when content is non-empty.
std::string query_text(const Instance& x, QueryTextPolicy policy);

/// Evaluation-only relevance mapping. The pipeline never reads it.
struct GroundTruth {
    std::unordered_map<std::string, std::unordered_set<std::string>> relevance;
    std::size_t skipped_empty = 0;  // records dropped for having no labels
};

/// Line-delimited JSON, one {"uid","title"} object per line, labels in
/// file order. Throws std::runtime_error with the offending line number
/// on malformed input, and on duplicate or empty fields.
LabelSpace load_label_space(const std::string& path);

/// Line-delimited JSON with "uid", "title" and optional "content".
std::vector<Instance> load_instances(const std::string& path);

/// Line-delimited JSON {"uid","labels":[lid,...]}. Duplicate lids within a
/// record are deduplicated; records with no labels are skipped and counted.
/// A lid absent from `space` is an error naming the lid.
GroundTruth load_ground_truth(const std::string& path, const LabelSpace& space);

void save_label_space(const LabelSpace& space, const std::string& path);
void save_instances(const std::vector<Instance>& instances, const std::string& path);

} // namespace xmcgen
