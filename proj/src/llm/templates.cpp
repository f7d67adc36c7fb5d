#include "xmcgen/llm/templates.hpp"

#include <stdexcept>

#include "xmcgen/util.hpp"

namespace xmcgen::llm {

Domain domain_from_string(const std::string& s) {
    if (s == "product") return Domain::product;
    if (s == "wiki") return Domain::wiki;
    throw std::invalid_argument("unknown domain: " + s);
}

std::string to_string(Domain domain) {
    return domain == Domain::product ? "product" : "wiki";
}

std::string to_string(TemplateId id) {
    switch (id) {
        case TemplateId::t1: return "t1";
        case TemplateId::t2: return "t2";
        case TemplateId::t3: return "t3";
        case TemplateId::t4: return "t4";
    }
    return "?";
}

namespace {

// The instruction texts are kept verbatim, typos included; downstream
// golden files freeze them byte-for-byte.
const std::string kT1Product =
    "**Product title**: {{title}}\n"
    "**Task**: Please predict at least {{m}} relevant and diverse Amazon products titles.\n"
    "**Format**: [\"title1\", \"title2\", \"title3\", \"title4\", \"title5\"], do not say any word or explain.\n"
    "**Product Description**: {{content}}";

const std::string kT1Wiki =
    "**Wiki title**: {{title}}\n"
    "**Task**: Please generate at least {{m}} relevant and diverse Wikipedia page titles.\n"
    "**Format**: [\"title1\", \"title2\", \"title3\", \"title4\", \"title5\"], do not say any word or explain.\n"
    "**Wiki content**: {{content}}";

const std::string kT2Product =
    "For an Amazon product recommendation task,\n"
    "**Product title**: {{title}}\n"
    "**Candidate labels**: {{labels}}\n"
    "**Task**: For each label, guess an input title.\n"
    "**Format**: [\"title1\", \"title2\", \"title3\", \"title4\", \"title5\"], each title is a guess "
    "based on a candidate label, title1 is a guess for first label, and so on. Only output one list "
    "and the list should be of size {{n}}. do not explain or say anthing.";

const std::string kT2Wiki =
    "As 'See Also' pages of {{title}}\n"
    "There's a list of Wikipedia page titles: {{labels}}\n"
    "**Task**: For each page, generate a \"See also\" page title.\n"
    "**Format**: [\"title1\", \"title2\", \"title3\", \"title4\", \"title5\"], each title is a guess "
    "based on a candidate label, title1 is a guess for first label, and so on. Only output one list "
    "and the list should be of size {{n}}. do not explain or say anthing.";

const std::string kT3Product =
    "{{demonstrations}}{{hints}}"
    "**Task**: Please predict at least {{k}} relevant products for a new Amazon product title: {{title}}\n"
    "**Product Description**: {{content}}\n"
    "**Format**: Only output titles with line break, do not include anything else.";

const std::string kT3Wiki =
    "{{demonstrations}}{{hints}}"
    "**Title**: {{title}}\n"
    "**Content**: {{content}}\n"
    "**Task**: Generate 'See also' suggestions related to the Wikipedia title {{title}}\n"
    "**Format**: Only output titles with line break, do not include anything else.";

const std::string kT4Product =
    "**Task**: Given a query product, select the top {{K}} most relevant products from a list of candidates.\n"
    "**Query product title**: {{title}}\n"
    "**Format**: A list of integers representing the indices of the top {{K}} most possible titles.\n"
    "Example: {{example}}\n"
    "**Candidates**:\n"
    "{{candidates}}"
    "**Product Description**: {{content}}";

const std::string kT4Wiki =
    "**Task**: From the following candidate list of Wikipedia pages, select top {{K}} that would be "
    "most relevant for the 'See also' section of the given page:\n"
    "**Wiki title**: {{title}}\n"
    "**Format**: A list of integers representing the indices of the top {{K}} most possible titles.\n"
    "Example: {{example}}\n"
    "**Candidates**:\n"
    "{{candidates}}"
    "**Wiki Content**: {{content}}";

std::string bound_content(const Instance& x) {
    return truncate_tokens(x.content, kContentTokenBudget);
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

} // namespace

const std::string& template_text(TemplateId id, Domain domain) {
    const bool p = domain == Domain::product;
    switch (id) {
        case TemplateId::t1: return p ? kT1Product : kT1Wiki;
        case TemplateId::t2: return p ? kT2Product : kT2Wiki;
        case TemplateId::t3: return p ? kT3Product : kT3Wiki;
        case TemplateId::t4: return p ? kT4Product : kT4Wiki;
    }
    throw std::logic_error("bad template id");
}

std::optional<TemplateId> detect_template(std::string_view prompt) {
    // Checked most-specific first; t4's marker cannot appear in t1-t3 and
    // the t2/t3 markers cannot appear in t1.
    if (prompt.find("A list of integers representing the indices") != std::string_view::npos) {
        return TemplateId::t4;
    }
    if (prompt.find("each title is a guess based on a candidate label") != std::string_view::npos) {
        return TemplateId::t2;
    }
    if (prompt.find("Only output titles with line break") != std::string_view::npos) {
        return TemplateId::t3;
    }
    if (prompt.find("relevant and diverse") != std::string_view::npos) {
        return TemplateId::t1;
    }
    return std::nullopt;
}

std::string render_prompt(TemplateId id, Domain domain, const SlotMap& bindings) {
    const std::string& tmpl = template_text(id, domain);
    auto lookup = [&](const std::string& slot) -> const std::string& {
        for (const auto& [name, value] : bindings) {
            if (name == slot) return value;
        }
        throw std::invalid_argument("template " + to_string(id) + "/" + to_string(domain) +
                                    ": unbound slot \"" + slot + "\"");
    };

    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const std::size_t open = tmpl.find("{{", pos);
        if (open == std::string::npos) {
            out.append(tmpl, pos, std::string::npos);
            break;
        }
        const std::size_t close = tmpl.find("}}", open + 2);
        if (close == std::string::npos) throw std::logic_error("unterminated slot marker");
        out.append(tmpl, pos, open - pos);
        out += lookup(tmpl.substr(open + 2, close - open - 2));
        pos = close + 2;
    }
    return out;
}

std::string serialize_demonstrations(Domain domain, const std::vector<DemoPair>& demos) {
    const char* input_tag = domain == Domain::product ? "**Product title**: " : "**Wiki title**: ";
    const char* label_tag = domain == Domain::product ? "**Relevant product**: " : "**'See Also' pages**: ";
    std::string out;
    for (const auto& [input_text, label_texts] : demos) {
        out += input_tag;
        out += input_text;
        out += '\n';
        out += label_tag;
        out += join(label_texts, ", ");
        out += '\n';
    }
    return out;
}

std::string serialize_hints(Domain domain, const std::vector<std::string>& hint_texts) {
    if (hint_texts.empty()) return "";
    (void)domain;
    return "**Hints**: " + join(hint_texts, ", ") + "\n";
}

std::string serialize_candidates(const std::vector<std::string>& texts) {
    std::string out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        out += std::to_string(i + 1);
        out += ". ";
        out += texts[i];
        out += '\n';
    }
    return out;
}

std::string index_example(std::size_t k) {
    std::string out = "[";
    for (std::size_t i = 1; i <= k; ++i) {
        if (i > 1) out += ", ";
        out += std::to_string(i);
    }
    out += "]";
    return out;
}

std::string build_t1_prompt(Domain domain, const Instance& x, std::size_t m) {
    return render_prompt(TemplateId::t1, domain,
                         {{"title", x.title},
                          {"m", std::to_string(m)},
                          {"content", bound_content(x)}});
}

std::string build_t2_prompt(Domain domain, const Instance& x,
                            const std::vector<std::string>& label_texts, std::size_t n) {
    return render_prompt(TemplateId::t2, domain,
                         {{"title", x.title},
                          {"labels", join(label_texts, ", ")},
                          {"n", std::to_string(n)}});
}

std::string build_t3_prompt(Domain domain, const Instance& x, const std::vector<DemoPair>& demos,
                            std::size_t k, const std::vector<std::string>& hint_texts) {
    return render_prompt(TemplateId::t3, domain,
                         {{"demonstrations", serialize_demonstrations(domain, demos)},
                          {"hints", serialize_hints(domain, hint_texts)},
                          {"k", std::to_string(k)},
                          {"title", x.title},
                          {"content", bound_content(x)}});
}

std::string build_t4_prompt(Domain domain, const Instance& x,
                            const std::vector<std::string>& candidate_texts, std::size_t top_k) {
    return render_prompt(TemplateId::t4, domain,
                         {{"K", std::to_string(top_k)},
                          {"title", x.title},
                          {"example", index_example(top_k)},
                          {"candidates", serialize_candidates(candidate_texts)},
                          {"content", bound_content(x)}});
}

} // namespace xmcgen::llm
