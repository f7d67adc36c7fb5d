#include "xmcgen/llm/parsing.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include <json.hpp>

namespace xmcgen::llm {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxArrayScanStarts = 64;

/// Extract the first substring that parses as a JSON array and satisfies
/// `accept`. Balanced-bracket walk with string/escape tracking, then a real
/// JSON parse to validate.
template <typename Accept>
bool find_json_array(std::string_view text, Accept&& accept, json& out) {
    std::size_t starts_tried = 0;
    for (std::size_t i = 0; i < text.size() && starts_tried < kMaxArrayScanStarts; ++i) {
        if (text[i] != '[') continue;
        ++starts_tried;
        int depth = 0;
        bool in_str = false;
        bool esc = false;
        for (std::size_t j = i; j < text.size(); ++j) {
            const char c = text[j];
            if (in_str) {
                if (esc) {
                    esc = false;
                } else if (c == '\\') {
                    esc = true;
                } else if (c == '"') {
                    in_str = false;
                }
                continue;
            }
            if (c == '"') {
                in_str = true;
            } else if (c == '[') {
                ++depth;
            } else if (c == ']') {
                if (--depth == 0) {
                    json parsed = json::parse(text.substr(i, j - i + 1), nullptr, false);
                    if (!parsed.is_discarded() && parsed.is_array() && accept(parsed)) {
                        out = std::move(parsed);
                        return true;
                    }
                    break;  // balanced but rejected; try the next '['
                }
            }
        }
    }
    return false;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

/// "1. USB Hub" -> "USB Hub"; "- item," -> "item"; '"quoted"' -> quoted.
std::string clean_line(std::string_view line) {
    std::string_view s = trim(line);
    // leading enumeration: digits followed by '.' or ')', or a bullet
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) {
        s.remove_prefix(i + 1);
    } else if (!s.empty() && (s.front() == '-' || s.front() == '*')) {
        s.remove_prefix(1);
    }
    s = trim(s);
    if (!s.empty() && s.back() == ',') s = trim(s.substr(0, s.size() - 1));
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\''))) {
        s = trim(s.substr(1, s.size() - 2));
    }
    return std::string(s);
}

bool all_digits(std::string_view s) {
    if (s.empty() || s.size() > 18) return false;
    return std::all_of(s.begin(), s.end(),
                       [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

} // namespace

std::vector<std::string> parse_label_list(std::string_view raw, std::size_t expected) {
    std::vector<std::string> out;

    json arr;
    const bool has_string_array = find_json_array(
        raw,
        [](const json& a) {
            if (a.empty()) return false;
            return std::all_of(a.begin(), a.end(), [](const json& v) { return v.is_string(); });
        },
        arr);

    if (has_string_array) {
        for (const auto& v : arr) {
            std::string s(trim(v.get_ref<const std::string&>()));
            if (!s.empty()) out.push_back(std::move(s));
            if (out.size() == expected) break;
        }
        return out;
    }

    std::size_t pos = 0;
    while (pos <= raw.size() && out.size() < expected) {
        std::size_t eol = raw.find('\n', pos);
        if (eol == std::string_view::npos) eol = raw.size();
        std::string_view line = raw.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        std::string cleaned = clean_line(line);
        if (!cleaned.empty()) out.push_back(std::move(cleaned));
        if (eol == raw.size()) break;
        pos = eol + 1;
    }
    return out;
}

std::vector<std::size_t> parse_index_list(std::string_view raw, std::size_t candidate_count,
                                          std::size_t want) {
    std::vector<long long> values;

    json arr;
    const bool has_int_array = find_json_array(
        raw,
        [](const json& a) {
            return std::any_of(a.begin(), a.end(), [](const json& v) {
                return v.is_number_integer() || v.is_number_unsigned() ||
                       (v.is_string() && all_digits(v.get_ref<const std::string&>()));
            });
        },
        arr);

    if (has_int_array) {
        for (const auto& v : arr) {
            if (v.is_number_integer() || v.is_number_unsigned()) {
                values.push_back(v.get<long long>());
            } else if (v.is_string() && all_digits(v.get_ref<const std::string&>())) {
                values.push_back(std::stoll(v.get<std::string>()));
            }
        }
    } else {
        // Digit-run fallback over the whole text.
        std::size_t i = 0;
        while (i < raw.size()) {
            if (!std::isdigit(static_cast<unsigned char>(raw[i]))) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < raw.size() && std::isdigit(static_cast<unsigned char>(raw[j]))) ++j;
            if (j - i <= 18) values.push_back(std::stoll(std::string(raw.substr(i, j - i))));
            i = j;
        }
    }

    std::vector<std::size_t> out;
    std::unordered_set<std::size_t> seen;
    for (long long v : values) {
        if (v < 1 || static_cast<std::size_t>(v) > candidate_count) continue;
        const auto idx = static_cast<std::size_t>(v);
        if (seen.insert(idx).second) {
            out.push_back(idx);
            if (out.size() == want) break;
        }
    }
    return out;
}

} // namespace xmcgen::llm
