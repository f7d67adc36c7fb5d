// Regenerates the committed test fixture corpus. Output is a pure function
// of the seed below, so reruns leave the files byte-identical.
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "xmcgen/corpus.hpp"
#include "xmcgen/util.hpp"

using namespace xmcgen;

namespace {

std::string pick_words(SplitMix64& rng, const std::vector<std::string>& vocab, std::size_t n) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) out += ' ';
        out += vocab[rng.bounded(vocab.size())];
    }
    return out;
}

std::size_t overlap(const std::string& a, const std::string& b) {
    const auto ta = tokenize(a);
    const auto tb = tokenize(b);
    const std::unordered_set<std::string> sa(ta.begin(), ta.end());
    std::unordered_set<std::string> seen;
    std::size_t n = 0;
    for (const auto& t : tb) {
        if (sa.count(t) && seen.insert(t).second) ++n;
    }
    return n;
}

std::string zero_pad(std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

} // namespace

int main(int argc, char** argv) {
    const std::string dir = argc > 1 ? argv[1] : "tests/fixtures";
    std::filesystem::create_directories(dir);

    const std::vector<std::string> vocab = builtin_wordlist();
    SplitMix64 rng(7);

    LabelSpace space;
    std::set<std::string> label_texts;
    while (space.size() < 500) {
        std::string text = pick_words(rng, vocab, 2);
        if (!label_texts.insert(text).second) continue;  // keep texts distinct
        space.add({"L" + zero_pad(space.size() + 1, 4), std::move(text)});
    }

    auto make_instances = [&](char prefix, std::size_t count) {
        std::vector<Instance> out;
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            Instance inst;
            inst.uid = std::string(1, prefix) + zero_pad(i + 1, 4);
            inst.title = pick_words(rng, vocab, 3);
            inst.content = pick_words(rng, vocab, 6);
            out.push_back(std::move(inst));
        }
        return out;
    };
    const std::vector<Instance> test = make_instances('T', 50);
    const std::vector<Instance> train = make_instances('R', 150);

    // Ground truth: the five labels sharing the most tokens with the
    // instance text, overlap >= 1 required, ties broken by label order.
    std::string truth;
    for (const Instance& x : test) {
        const std::string text = x.title + " " + x.content;
        std::vector<std::pair<std::size_t, std::size_t>> scored;  // (overlap, ordinal)
        for (std::size_t o = 0; o < space.size(); ++o) {
            const std::size_t ov = overlap(text, space.at(o).text);
            if (ov > 0) scored.emplace_back(ov, o);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        if (scored.size() > 5) scored.resize(5);
        if (scored.empty()) {
            std::cerr << "fixture instance " << x.uid << " matched no labels\n";
            return 1;
        }
        nlohmann::json rec;
        rec["uid"] = x.uid;
        auto& lids = rec["labels"] = nlohmann::json::array();
        for (const auto& [ov, o] : scored) lids.push_back(space.at(o).lid);
        truth += rec.dump() + "\n";
    }

    save_label_space(space, dir + "/labels.jsonl");
    save_instances(test, dir + "/test.jsonl");
    save_instances(train, dir + "/train.jsonl");
    write_file_atomic(dir + "/truth.jsonl", truth);
    std::cout << "wrote " << space.size() << " labels, " << test.size() << " test, "
              << train.size() << " train records to " << dir << "\n";
    return 0;
}
