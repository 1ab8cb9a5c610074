#include "odelm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "odelm/errors.hpp"
#include "odelm/rng.hpp"

namespace odelm {

Corpus Corpus::from_text(const std::string& id, const std::string& text, double train_frac) {
    if (text.empty()) throw data_error("corpus '" + id + "' is empty");
    if (train_frac <= 0.0 || train_frac >= 1.0) throw config_error("corpus: train_frac must be in (0,1)");
    Corpus c;
    c.id = id;
    std::set<char> chars(text.begin(), text.end());
    for (char ch : chars) {
        c.char_to_id[ch] = static_cast<int>(c.id_to_char.size()) + kNumSpecials;
        c.id_to_char.push_back(ch);
    }
    c.tokens.reserve(text.size());
    for (char ch : text) c.tokens.push_back(c.char_to_id.at(ch));
    c.train_end = static_cast<std::size_t>(text.size() * train_frac);
    if (c.train_end == 0 || c.train_end >= text.size())
        throw data_error("corpus '" + id + "' too small to split");
    return c;
}

Corpus Corpus::from_file(const std::string& path, double train_frac) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("corpus: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(path, ss.str(), train_frac);
}

int Corpus::encode(char c) const {
    auto it = char_to_id.find(c);
    if (it == char_to_id.end()) throw data_error(std::string("corpus: character '") + c + "' not in vocab");
    return it->second;
}

std::vector<int> Corpus::train_tokens() const {
    return {tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(train_end)};
}

std::vector<int> Corpus::valid_tokens() const {
    return {tokens.begin() + static_cast<std::ptrdiff_t>(train_end), tokens.end()};
}

std::string synthetic_text(std::size_t approx_bytes, uint64_t seed) {
    static const std::vector<std::string> words = {
        "the",   "a",      "of",     "and",   "to",     "in",    "that",   "it",
        "was",   "he",     "she",    "for",   "on",     "are",   "as",     "with",
        "his",   "her",    "they",   "at",    "be",     "this",  "have",   "from",
        "or",    "one",    "had",    "by",    "word",   "but",   "not",    "what",
        "all",   "were",   "we",     "when",  "your",   "can",   "said",   "there",
        "use",   "an",     "each",   "which", "do",     "how",   "their",  "if",
        "will",  "up",     "other",  "about", "out",    "many",  "then",   "them",
        "these", "so",     "some",   "would", "make",   "like",  "him",    "into",
        "time",  "has",    "look",   "two",   "more",   "write", "go",     "see",
        "number","no",     "way",    "could", "people", "my",    "than",   "first",
        "water", "been",   "call",   "who",   "oil",    "its",   "now",    "find",
        "long",  "down",   "day",    "did",   "get",    "come",  "made",   "may",
        "part",  "over",   "new",    "sound", "take",   "only",  "little", "work",
        "know",  "place",  "year",   "live",  "me",     "back",  "give",   "most",
        "very",  "after",  "thing",  "our",   "just",   "name",  "good",   "sentence",
        "man",   "think",  "say",    "great", "where",  "help",  "through","much",
        "before","line",   "right",  "too",   "mean",   "old",   "any",    "same",
        "tell",  "boy",    "follow", "came",  "want",   "show",  "also",   "around",
        "form",  "three",  "small",  "set",   "put",    "end",   "does",   "another"};

    auto rng = substream(seed, "synthetic_text");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    // Zipf-ish weights so character statistics resemble natural text.
    std::vector<double> weights(words.size());
    for (std::size_t i = 0; i < words.size(); ++i) weights[i] = 1.0 / (i + 1.0);
    std::discrete_distribution<int> pick(weights.begin(), weights.end());

    std::string out;
    out.reserve(approx_bytes + 128);
    while (out.size() < approx_bytes) {
        int sentence_len = 4 + static_cast<int>(unif(rng) * 10);
        for (int w = 0; w < sentence_len; ++w) {
            std::string word = words[pick(rng)];
            if (w == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
            // occasional parenthetical keeps ( ) in the vocab for the bracket task
            if (w > 0 && w + 1 < sentence_len && unif(rng) < 0.03) word = "(" + word + ")";
            out += word;
            out += (w + 1 < sentence_len) ? " " : "";
        }
        out += unif(rng) < 0.15 ? "?\n" : ".\n";
    }
    return out;
}

namespace {

std::vector<int> encode_string(const Corpus& vocab, const std::string& s) {
    std::vector<int> ids;
    ids.reserve(s.size());
    for (char c : s) ids.push_back(vocab.encode(c));
    return ids;
}

bool well_nested(const std::string& s) {
    int depth = 0;
    for (char c : s) {
        depth += c == '(' ? 1 : -1;
        if (depth < 0) return false;
    }
    return depth == 0;
}

std::string random_balanced(int len, std::mt19937_64& rng) {
    // uniform-ish balanced string: random walk conditioned to stay non-negative
    std::string s;
    int depth = 0;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < len; ++i) {
        int remaining = len - i;
        bool must_close = depth >= remaining;
        bool must_open = depth == 0;
        if (must_close || (!must_open && unif(rng) < 0.5)) {
            s += ')';
            --depth;
        } else {
            s += '(';
            ++depth;
        }
    }
    return s;
}

std::string random_brackets(int len, std::mt19937_64& rng) {
    std::string s;
    std::uniform_int_distribution<int> coin(0, 1);
    for (int i = 0; i < len; ++i) s += coin(rng) ? '(' : ')';
    return s;
}

std::vector<LabeledExample> make_bracket_split(const Corpus& vocab, int seq_len, int n,
                                               std::mt19937_64& rng) {
    std::vector<LabeledExample> out;
    while (static_cast<int>(out.size()) < n) {
        bool want_positive = out.size() % 2 == 0;
        std::string s = want_positive ? random_balanced(seq_len, rng) : random_brackets(seq_len, rng);
        int label = well_nested(s) ? 1 : 0;
        if (label != (want_positive ? 1 : 0)) continue;  // rejection keeps classes balanced
        out.push_back({encode_string(vocab, s), label});
    }
    return out;
}

}  // namespace

TaskDataset bracket_task(const Corpus& vocab_source, int seq_len, int train_n, int valid_n, uint64_t seed) {
    if (seq_len % 2 != 0) throw config_error("bracket_task: seq_len must be even");
    TaskDataset ds;
    ds.name = "brackets";
    auto rng = substream(seed, "bracket_task");
    ds.train = make_bracket_split(vocab_source, seq_len, train_n, rng);
    ds.valid = make_bracket_split(vocab_source, seq_len, valid_n, rng);
    return ds;
}

TaskDataset majority_task(const Corpus& vocab_source, int seq_len, int train_n, int valid_n, uint64_t seed) {
    if (seq_len % 2 == 0) ++seq_len;  // odd length avoids ties
    TaskDataset ds;
    ds.name = "majority";
    auto rng = substream(seed, "majority_task");
    std::uniform_int_distribution<int> coin(0, 1);
    auto make = [&](int n) {
        std::vector<LabeledExample> out;
        for (int i = 0; i < n; ++i) {
            std::string s;
            int count_a = 0;
            for (int j = 0; j < seq_len; ++j) {
                char c = coin(rng) ? 'a' : 'b';
                count_a += c == 'a';
                s += c;
            }
            out.push_back({encode_string(vocab_source, s), count_a * 2 > seq_len ? 1 : 0});
        }
        return out;
    };
    ds.train = make(train_n);
    ds.valid = make(valid_n);
    return ds;
}

TaskDataset random_label_task(const Corpus& vocab_source, int seq_len, int train_n, int valid_n, uint64_t seed) {
    TaskDataset base = majority_task(vocab_source, seq_len, train_n, valid_n, seed);
    base.name = "random-labels";
    auto rng = substream(seed, "random_label_task");
    std::uniform_int_distribution<int> coin(0, 1);
    for (auto& e : base.train) e.label = coin(rng);
    for (auto& e : base.valid) e.label = coin(rng);
    return base;
}

}  // namespace odelm
