#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace odelm {

// Character-tokenized corpus with disjoint train/valid splits.
struct Corpus {
    std::string id;
    std::vector<int> tokens;
    std::map<char, int> char_to_id;
    std::vector<char> id_to_char;
    std::size_t train_end = 0;  // tokens[0, train_end) train, rest valid

    static Corpus from_text(const std::string& id, const std::string& text, double train_frac = 0.9);
    static Corpus from_file(const std::string& path, double train_frac = 0.9);

    int vocab_size() const { return static_cast<int>(id_to_char.size()) + kNumSpecials; }
    int encode(char c) const;

    std::vector<int> train_tokens() const;
    std::vector<int> valid_tokens() const;

    static constexpr int kPadId = 0;
    static constexpr int kMaskId = 1;
    static constexpr int kNumSpecials = 2;
};

// Deterministic English-like filler text; stands in for a bundled corpus so the
// repo carries no data dependency. Includes brackets and the a/b letters the
// synthetic classification tasks draw on.
std::string synthetic_text(std::size_t approx_bytes, uint64_t seed);

struct LabeledExample {
    std::vector<int> tokens;
    int label;
};

struct TaskDataset {
    std::string name;
    int num_classes = 2;
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> valid;
};

// Label 1 iff the bracket string is well-nested.
TaskDataset bracket_task(const Corpus& vocab_source, int seq_len, int train_n, int valid_n, uint64_t seed);
// Label = majority character ('a' vs 'b').
TaskDataset majority_task(const Corpus& vocab_source, int seq_len, int train_n, int valid_n, uint64_t seed);
// Control task: labels are random coin flips, nothing learnable.
TaskDataset random_label_task(const Corpus& vocab_source, int seq_len, int train_n, int valid_n, uint64_t seed);

}  // namespace odelm
