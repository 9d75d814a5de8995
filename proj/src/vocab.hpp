#pragma once

#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace unitok {

enum class Modality { Visual, Semantic, Special };

struct Token {
    int id;
    Modality tag;
    bool operator==(const Token&) const = default;
};

struct TaggedSequence {
    std::vector<Token> items;

    int length() const { return static_cast<int>(items.size()); }
    std::vector<int> ids() const;
    std::vector<Modality> tags() const;
    bool operator==(const TaggedSequence&) const = default;
};

struct Box {
    int x0, y0, x1, y1;
    bool operator==(const Box&) const = default;
    auto operator<=>(const Box&) const = default;
    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
    int cells() const { return width() * height(); }
};

struct HoiTriplet {
    int action_id = 0;
    int object_category = 0;
    std::optional<Box> human_box;
    std::optional<Box> object_box;
    bool operator==(const HoiTriplet&) const = default;
};

// Sort key: (action, category, human box, object box); boxless sorts first.
bool triplet_less(const HoiTriplet& a, const HoiTriplet& b);
std::vector<HoiTriplet> canonical_triplets(std::vector<HoiTriplet> ts);
HoiTriplet strip_boxes(const HoiTriplet& t);

struct WorldShape {
    int grid = 8;        // G
    int categories = 4;  // K
    int actions = 3;     // A
};

// Unified vocabulary: visual codebook ids, then semantic entries, then
// specials, tiling [0, size) with no gaps.
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(int code_size, std::vector<std::string> semantic_names,
               std::vector<std::string> special_names);

    int code_size() const { return code_size_; }
    int semantic_count() const { return static_cast<int>(semantic_names_.size()); }
    int special_count() const { return static_cast<int>(special_names_.size()); }
    int size() const { return code_size_ + semantic_count() + special_count(); }

    Modality modality_of(int id) const;
    Token token(int id) const { return Token{id, modality_of(id)}; }
    std::string name_of(int id) const;
    int id_of(const std::string& name) const;

    // layout accessors for the world grammar
    const WorldShape& world() const { return world_; }
    int hum_id() const { return code_size_; }
    int cat_id(int k) const;
    int act_id(int a) const;
    int coord_id(int c) const;
    int bh_id() const { return code_size_ + 1 + world_.categories + world_.actions + world_.grid; }
    int bo_id() const { return bh_id() + 1; }

    int special_id(const std::string& name) const;
    int bos() const { return special_base_; }
    int eos() const { return special_base_ + 1; }
    int sep() const { return special_base_ + 2; }
    int tsep() const { return special_base_ + 3; }
    int task_det() const { return special_base_ + 4; }
    int task_gen() const { return special_base_ + 5; }
    int pad() const { return special_base_ + 6; }

    std::string to_json() const;
    static Vocabulary from_json(const std::string& text);

    std::string render(const TaggedSequence& seq) const;  // space-separated names
    TaggedSequence parse(const std::string& line) const;

private:
    int code_size_ = 0;
    int special_base_ = 0;
    std::vector<std::string> semantic_names_;
    std::vector<std::string> special_names_;
    WorldShape world_;
    friend Vocabulary build_vocabulary(int, const WorldShape&);
};

// Deterministic vocabulary for a world: HUM, K categories, A actions, G
// coordinates, the two box markers, then the fixed special set.
Vocabulary build_vocabulary(int code_size, const WorldShape& world);

// Number of distinct cell glyph states a world needs (empty plus small /
// two-cell-left / two-cell-right variants of the human and each category).
int glyph_state_count(const WorldShape& world);

struct DecodeResult {
    std::vector<HoiTriplet> triplets;
    bool well_formed = true;
    std::vector<std::string> diagnostics;
};

enum class Task { Detect, Generate };

// Per triplet: HUM ACT CAT [BH x0 y0 x1 y1 BO x0 y0 x1 y1] TSEP, triplets in
// canonical order. Empty list encodes to the empty sequence.
TaggedSequence encode_semantics(const Vocabulary& vocab, const std::vector<HoiTriplet>& triplets,
                                bool include_boxes);

// Total on arbitrary sequences: greedy parse, malformed tails truncated.
DecodeResult decode_semantics(const Vocabulary& vocab, const TaggedSequence& seq);

// [BOS][TASK_*] payload [SEP]
TaggedSequence format_task_input(const Vocabulary& vocab, Task task, const TaggedSequence& payload);

TaggedSequence tag_ids(const Vocabulary& vocab, const std::vector<int>& ids);

}  // namespace unitok
