#include "xmcgen/corpus.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "xmcgen/util.hpp"

namespace xmcgen {

using nlohmann::json;

void LabelSpace::add(Label label) {
    if (label.lid.empty()) throw std::invalid_argument("label with empty lid");
    if (label.text.empty()) throw std::invalid_argument("label '" + label.lid + "' has empty text");
    auto [it, inserted] = index_.emplace(label.lid, labels_.size());
    if (!inserted) throw std::invalid_argument("duplicate label uid: " + label.lid);
    labels_.push_back(std::move(label));
}

std::size_t LabelSpace::ordinal_of(const std::string& lid) const {
    auto it = index_.find(lid);
    if (it == index_.end()) throw std::out_of_range("unknown label: " + lid);
    return it->second;
}

namespace {

/// Calls fn(line_number, parsed_object) for every non-empty line.
template <typename Fn>
void for_each_record(const std::string& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object()) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed JSON record");
        }
        fn(line_no, rec);
    }
}

std::string require_string(const json& rec, const char* key,
                           const std::string& path, std::size_t line_no) {
    auto it = rec.find(key);
    if (it == rec.end() || !it->is_string() || it->get_ref<const std::string&>().empty()) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": missing or empty \"" + key + "\" field");
    }
    return it->get<std::string>();
}

std::string json_escape(const std::string& s) {
    return json(s).dump();
}

} // namespace

QueryTextPolicy query_text_policy_from_string(const std::string& s) {
    if (s == "title") return QueryTextPolicy::title;
    if (s == "title_content") return QueryTextPolicy::title_content;
    throw std::invalid_argument("unknown query text policy: " + s);
}

std::string to_string(QueryTextPolicy policy) {
    return policy == QueryTextPolicy::title ? "title" : "title_content";
}

std::string query_text(const Instance& x, QueryTextPolicy policy) {
    if (policy == QueryTextPolicy::title || x.content.empty()) return x.title;
    return x.title + " " + x.content;
}

LabelSpace load_label_space(const std::string& path) {
    LabelSpace space;
    for_each_record(path, [&](std::size_t line_no, const json& rec) {
        Label label;
        label.lid = require_string(rec, "uid", path, line_no);
        label.text = require_string(rec, "title", path, line_no);
        try {
            space.add(std::move(label));
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    });
    if (space.empty()) throw std::runtime_error(path + ": empty label space");
    return space;
}

std::vector<Instance> load_instances(const std::string& path) {
    std::vector<Instance> out;
    std::unordered_set<std::string> seen;
    for_each_record(path, [&](std::size_t line_no, const json& rec) {
        Instance inst;
        inst.uid = require_string(rec, "uid", path, line_no);
        inst.title = require_string(rec, "title", path, line_no);
        if (auto it = rec.find("content"); it != rec.end() && it->is_string()) {
            inst.content = it->get<std::string>();
        }
        if (!seen.insert(inst.uid).second) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": duplicate instance uid: " + inst.uid);
        }
        out.push_back(std::move(inst));
    });
    return out;
}

GroundTruth load_ground_truth(const std::string& path, const LabelSpace& space) {
    GroundTruth gt;
    for_each_record(path, [&](std::size_t line_no, const json& rec) {
        const std::string uid = require_string(rec, "uid", path, line_no);
        auto it = rec.find("labels");
        if (it == rec.end() || !it->is_array()) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": missing \"labels\" array");
        }
        std::unordered_set<std::string> lids;
        for (const auto& v : *it) {
            if (!v.is_string()) {
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": non-string entry in \"labels\"");
            }
            const std::string lid = v.get<std::string>();
            if (!space.contains(lid)) {
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": label not in label space: " + lid);
            }
            lids.insert(lid);
        }
        if (lids.empty()) {
            ++gt.skipped_empty;  // P@k / R@k undefined without relevant labels
            return;
        }
        auto& slot = gt.relevance[uid];
        slot.insert(lids.begin(), lids.end());
    });
    return gt;
}

void save_label_space(const LabelSpace& space, const std::string& path) {
    std::string out;
    for (const Label& l : space.labels()) {
        out += "{\"uid\":" + json_escape(l.lid) + ",\"title\":" + json_escape(l.text) + "}\n";
    }
    write_file_atomic(path, out);
}

void save_instances(const std::vector<Instance>& instances, const std::string& path) {
    std::string out;
    for (const Instance& inst : instances) {
        out += "{\"uid\":" + json_escape(inst.uid) + ",\"title\":" + json_escape(inst.title) +
               ",\"content\":" + json_escape(inst.content) + "}\n";
    }
    write_file_atomic(path, out);
}

} // namespace xmcgen
