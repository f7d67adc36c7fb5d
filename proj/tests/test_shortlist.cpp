#include <doctest.h>

#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "support.hpp"
#include "xmcgen/corpus.hpp"
#include "xmcgen/llm/backend.hpp"
#include "xmcgen/llm/cache.hpp"
#include "xmcgen/llm/templates.hpp"
#include "xmcgen/retrieval.hpp"
#include "xmcgen/shortlist.hpp"
#include "xmcgen/util.hpp"

using namespace xmcgen;

namespace {

LabelSpace make_space() {
    LabelSpace space;
    space.add({"L1", "red apple"});
    space.add({"L2", "green apple"});
    space.add({"L3", "yellow banana"});
    space.add({"L4", "purple grape"});
    space.add({"L5", "orange carrot"});
    return space;
}

RetrieverIndex make_label_index(const LabelSpace& space) {
    std::vector<std::string> texts;
    for (const auto& label : space.labels()) texts.push_back(label.text);
    return RetrieverIndex::build(texts, RetrieverKind::tfidf);
}

std::vector<std::string> entry_lids(const Shortlist& shortlist) {
    std::vector<std::string> lids;
    for (const auto& e : shortlist.entries) lids.push_back(e.lid);
    return lids;
}

std::vector<std::vector<std::string>> lid_rows(const NeighborMatrix& matrix) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& row : matrix.rows) {
        std::vector<std::string> lids;
        for (const auto& cell : row) lids.push_back(cell.lid);
        rows.push_back(std::move(lids));
    }
    return rows;
}

} // namespace

TEST_CASE("infer_raw_labels renders t3 and parses at most k texts") {
    const LabelSpace space = make_space();
    Instance x;
    x.uid = "T1";
    x.title = "fruit crate";

    DemonstrationSet demos;
    demos.items.push_back(checked_demonstration("apple pie", {"L1", "L2"}, space));
    demos.items.push_back(checked_demonstration("banana split", {"L3"}, space));

    llm::MockBackend backend(9);
    const llm::RequestOptions opts;
    const RawGeneration raw =
        infer_raw_labels(x, demos, 10, backend, opts, llm::Domain::product, space);

    REQUIRE(raw.texts.size() == 10);
    // the mock echoes the demonstration label texts first, in order
    CHECK(raw.texts[0] == "red apple");
    CHECK(raw.texts[1] == "green apple");
    CHECK(raw.texts[2] == "yellow banana");

    // digest identifies the exact producing request
    const std::string prompt = llm::build_t3_prompt(
        llm::Domain::product, x,
        {{"apple pie", {"red apple", "green apple"}}, {"banana split", {"yellow banana"}}}, 10);
    CHECK(raw.prompt_digest == llm::cache_key(llm::make_request(prompt, opts)));
}

TEST_CASE("infer_raw_labels with no demonstrations is free generation") {
    const LabelSpace space = make_space();
    Instance x;
    x.title = "fruit crate";
    llm::MockBackend backend(9);
    const RawGeneration raw =
        infer_raw_labels(x, DemonstrationSet{}, 7, backend, {}, llm::Domain::product, space);
    CHECK(raw.texts.size() == 7);
    for (const auto& t : raw.texts) CHECK_FALSE(t.empty());
}

TEST_CASE("infer_raw_labels yields empty texts on an unusable completion") {
    const LabelSpace space = make_space();
    Instance x;
    x.title = "fruit crate";
    llm::FunctionBackend backend([](const llm::LLMRequest&) { return std::string(); });
    const RawGeneration raw =
        infer_raw_labels(x, DemonstrationSet{}, 10, backend, {}, llm::Domain::product, space);
    CHECK(raw.texts.empty());
    CHECK(raw.prompt_digest.size() == 64);
}

TEST_CASE("infer_raw_labels rejects k == 0") {
    const LabelSpace space = make_space();
    Instance x;
    x.title = "t";
    llm::MockBackend backend(1);
    CHECK_THROWS_AS(infer_raw_labels(x, DemonstrationSet{}, 0, backend, {}, llm::Domain::product,
                                     space),
                    std::invalid_argument);
}

TEST_CASE("hint_generation binds the hint label texts into the prompt") {
    const LabelSpace space = make_space();
    Instance x;
    x.uid = "T2";
    x.title = "fruit crate";

    Shortlist hints;
    hints.uid = "T2";
    hints.entries.push_back({"L1", 0, 0, 1.0});
    hints.entries.push_back({"L3", 0, 1, 0.5});

    std::string seen_prompt;
    llm::FunctionBackend backend([&](const llm::LLMRequest& req) {
        seen_prompt = req.messages[0].content;
        return std::string("1. echoed title");
    });
    const RawGeneration raw = hint_generation(x, hints, 10, backend, {}, llm::Domain::product, space);
    CHECK(seen_prompt.find("**Hints**: red apple, yellow banana") != std::string::npos);
    CHECK(llm::detect_template(seen_prompt) == llm::TemplateId::t3);
    REQUIRE(raw.texts.size() == 1);
    CHECK(raw.texts[0] == "echoed title");

    CHECK_THROWS_AS(hint_generation(x, Shortlist{}, 10, backend, {}, llm::Domain::product, space),
                    std::invalid_argument);
}

TEST_CASE("hint_generation echoes through the mock") {
    const LabelSpace space = make_space();
    Instance x;
    x.title = "fruit crate";
    Shortlist hints;
    hints.entries.push_back({"L4", 0, 0, 1.0});
    hints.entries.push_back({"L5", 0, 1, 0.9});
    llm::MockBackend backend(3);
    const RawGeneration raw = hint_generation(x, hints, 10, backend, {}, llm::Domain::product, space);
    REQUIRE(raw.texts.size() == 10);
    CHECK(raw.texts[0] == "purple grape");
    CHECK(raw.texts[1] == "orange carrot");
}

TEST_CASE("map_to_label_space unions rows in row-major first-occurrence order") {
    const LabelSpace space = make_space();
    const RetrieverIndex index = make_label_index(space);

    RawGeneration raw;
    raw.texts = {"apple", "banana apple"};
    const auto [shortlist, matrix] = map_to_label_space(raw, 2, index, space, "T7");

    CHECK(shortlist.uid == "T7");
    REQUIRE(matrix.rows.size() == 2);
    REQUIRE(matrix.rows[0].size() == 2);
    REQUIRE(matrix.rows[1].size() == 2);
    CHECK(matrix.rows[0][0].lid == "L1");
    CHECK(matrix.rows[0][1].lid == "L2");
    CHECK(matrix.rows[1][0].lid == "L3");
    CHECK(matrix.rows[1][1].lid == "L1");

    // L1 reappears in row 1 but keeps its row-0 provenance
    REQUIRE(shortlist.entries.size() == 3);
    CHECK(shortlist.entries[0].lid == "L1");
    CHECK(shortlist.entries[0].j == 0);
    CHECK(shortlist.entries[0].r == 0);
    CHECK(shortlist.entries[1].lid == "L2");
    CHECK(shortlist.entries[1].j == 0);
    CHECK(shortlist.entries[1].r == 1);
    CHECK(shortlist.entries[2].lid == "L3");
    CHECK(shortlist.entries[2].j == 1);
    CHECK(shortlist.entries[2].r == 0);
    for (const auto& e : shortlist.entries) {
        CHECK(e.score == matrix.rows[e.j][e.r].score);
    }
}

TEST_CASE("map_to_label_space handles edge inputs") {
    const LabelSpace space = make_space();
    const RetrieverIndex index = make_label_index(space);
    RawGeneration raw;

    SUBCASE("no texts, no shortlist") {
        const auto [shortlist, matrix] = map_to_label_space(raw, 3, index, space);
        CHECK(shortlist.entries.empty());
        CHECK(matrix.rows.empty());
        CHECK(shortlist.uid.empty());
    }
    SUBCASE("s == 0 is an error") {
        raw.texts = {"apple"};
        CHECK_THROWS_AS(map_to_label_space(raw, 0, index, space), std::invalid_argument);
    }
    SUBCASE("s larger than the space clamps to the space") {
        raw.texts = {"apple"};
        const auto [shortlist, matrix] = map_to_label_space(raw, 50, index, space);
        CHECK(shortlist.entries.size() == space.size());
        CHECK(matrix.rows[0].size() == space.size());
    }
    SUBCASE("a text with no tokens contributes an empty row") {
        raw.texts = {"!!!", "apple"};
        const auto [shortlist, matrix] = map_to_label_space(raw, 2, index, space);
        CHECK(matrix.rows[0].empty());
        REQUIRE(shortlist.entries.size() == 2);
        CHECK(shortlist.entries[0].j == 1);
    }
}

TEST_CASE("retriever_shortlist is a single retrieval row over the instance text") {
    const LabelSpace space = make_space();
    const RetrieverIndex index = make_label_index(space);
    Instance x;
    x.uid = "T9";
    x.title = "apple banana";
    x.content = "grape";

    SUBCASE("title policy") {
        const auto [shortlist, matrix] =
            retriever_shortlist(x, 3, index, space, QueryTextPolicy::title);
        CHECK(shortlist.uid == "T9");
        REQUIRE(matrix.rows.size() == 1);
        REQUIRE(shortlist.entries.size() == 3);
        CHECK(shortlist.entries[0].lid == "L3");  // banana outranks apple on idf
        CHECK(shortlist.entries[1].lid == "L1");
        CHECK(shortlist.entries[2].lid == "L2");
        for (std::size_t i = 0; i < shortlist.entries.size(); ++i) {
            CHECK(shortlist.entries[i].j == 0);
            CHECK(shortlist.entries[i].r == i);
        }
    }
    SUBCASE("title_content policy folds the content into the query") {
        const auto [shortlist, matrix] =
            retriever_shortlist(x, 4, index, space, QueryTextPolicy::title_content);
        const auto lids = entry_lids(shortlist);
        CHECK(std::find(lids.begin(), lids.end(), "L4") != lids.end());
    }
    SUBCASE("budget == 0 is an error") {
        CHECK_THROWS_AS(retriever_shortlist(x, 0, index, space, QueryTextPolicy::title),
                        std::invalid_argument);
    }
}

TEST_CASE("fuzzed shortlists keep the union, size, and provenance invariants") {
    SplitMix64 rng(20260814);
    const auto& wl = builtin_wordlist();

    for (int iter = 0; iter < 500; ++iter) {
        LabelSpace space;
        const std::size_t n_labels = 2 + static_cast<std::size_t>(rng.bounded(30));
        for (std::size_t i = 0; i < n_labels; ++i) {
            std::string text = wl[static_cast<std::size_t>(rng.bounded(wl.size()))];
            if (rng.bounded(2)) {
                text += ' ';
                text += wl[static_cast<std::size_t>(rng.bounded(wl.size()))];
            }
            space.add({"L" + std::to_string(i), text});
        }
        std::vector<std::string> texts;
        for (const auto& label : space.labels()) texts.push_back(label.text);
        const auto kind = rng.bounded(2) ? RetrieverKind::bm25 : RetrieverKind::tfidf;
        const RetrieverIndex index = RetrieverIndex::build(texts, kind);

        RawGeneration raw;
        const std::size_t n_texts = 1 + static_cast<std::size_t>(rng.bounded(8));
        for (std::size_t j = 0; j < n_texts; ++j) {
            std::string q = wl[static_cast<std::size_t>(rng.bounded(wl.size()))];
            if (rng.bounded(3) == 0) q += " zebra" + std::to_string(rng.bounded(5));
            raw.texts.push_back(q);
        }
        const std::size_t s = 1 + static_cast<std::size_t>(rng.bounded(6));

        const auto [shortlist, matrix] = map_to_label_space(raw, s, index, space);

        REQUIRE(matrix.rows.size() == raw.texts.size());
        CHECK(shortlist.entries.size() <= raw.texts.size() * s);

        // rows are bounded by s and sorted by score descending
        for (const auto& row : matrix.rows) {
            CHECK(row.size() == std::min(s, space.size()));
            for (std::size_t r = 1; r < row.size(); ++r) {
                CHECK(row[r - 1].score >= row[r].score);
            }
        }

        // the shortlist is exactly the row-major first-occurrence union
        CHECK(entry_lids(shortlist) == oracles::row_union(lid_rows(matrix)));

        // each entry's provenance points at its first row-major occurrence
        std::set<std::string> before;
        std::size_t at = 0;
        for (std::size_t j = 0; j < matrix.rows.size(); ++j) {
            for (std::size_t r = 0; r < matrix.rows[j].size(); ++r) {
                const auto& cell = matrix.rows[j][r];
                if (before.insert(cell.lid).second) {
                    REQUIRE(at < shortlist.entries.size());
                    const auto& e = shortlist.entries[at++];
                    CHECK(e.lid == cell.lid);
                    CHECK(e.j == j);
                    CHECK(e.r == r);
                    CHECK(e.score == cell.score);
                }
            }
        }
        CHECK(at == shortlist.entries.size());
    }
}
