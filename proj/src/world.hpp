#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "vocab.hpp"

namespace unitok {

// Relative-placement predicate between a human anchor and an object anchor.
struct ActionRule {
    enum class Kind { Offset, Chebyshev };
    Kind kind = Kind::Offset;
    int dx = 0, dy = 0;  // Offset
    int r = 0;           // Chebyshev

    bool matches(int ddx, int ddy) const {
        if (kind == Kind::Offset) return ddx == dx && ddy == dy;
        return std::max(std::abs(ddx), std::abs(ddy)) == r;
    }
    // all satisfying offsets within a grid of side g, deterministic order
    std::vector<std::pair<int, int>> offsets(int g) const;
};

enum class Supervision { Strong, Weak, Unsupervised };

std::string supervision_name(Supervision s);
Supervision supervision_from_name(const std::string& name);

struct WorldSpec {
    int grid = 8;
    int categories = 4;
    int actions = 3;
    std::vector<ActionRule> rules;  // one per action
    int max_triplets_per_scene = 3;
    double large_entity_prob = 0.25;
    int max_distractors = 2;
    double weak_label_noise = 0.0;
    uint64_t seed = 1;

    WorldShape shape() const { return WorldShape{grid, categories, actions}; }

    // throws ConfigError unless rules are mutually exclusive on every offset
    // pair and each rule is satisfiable on the grid
    void validate() const;

    std::string to_json() const;
    static WorldSpec from_json(const std::string& text);

    // right / above / chebyshev-2 for the first three actions, then a fixed
    // pool of further mutually exclusive predicates
    static WorldSpec standard(int grid, int categories, int actions, uint64_t seed);
};

struct Entity {
    bool human = false;
    int category = 0;  // ignored for humans
    int x = 0, y = 0;  // anchor; a large entity also occupies (x+1, y)
    bool large = false;

    Box box() const { return Box{x, y, x + (large ? 1 : 0), y}; }
};

struct Scene {
    int grid_side = 0;
    std::vector<int> grid;  // G*G glyph ids, row-major (index = y*G + x)
    std::vector<Entity> entities;
    std::vector<HoiTriplet> truth;  // canonical, with boxes
    Supervision supervision = Supervision::Unsupervised;
    uint64_t seed = 0;
};

// glyph table: 0 empty; human small/left/right = 1,2,3; category k
// small/left/right = 4+3k, 5+3k, 6+3k
int glyph_of(const Entity& e, bool right_half);

std::optional<std::vector<Entity>> entities_from_grid(const WorldSpec& spec,
                                                      const std::vector<int>& grid);

std::vector<HoiTriplet> exhaustive_truth(const WorldSpec& spec,
                                         const std::vector<Entity>& entities);

// Pure in (spec, seed). Places 1..max_triplets interacting pairs plus up to
// max_distractors non-interacting entities; throws WorldError once the retry
// budget is exhausted.
Scene sample_scene(const WorldSpec& spec, uint64_t seed);

TaggedSequence tokenize_scene(const WorldSpec& spec, const Scene& scene);

std::optional<Scene> detokenize_scene(const WorldSpec& spec, const std::vector<int>& ids);

struct OracleDetection {
    std::vector<HoiTriplet> triplets;
    bool well_formed = true;
};

// Exhaustive rule evaluation over a tokenized grid; total on arbitrary
// sequences of the right length.
OracleDetection oracle_detect(const WorldSpec& spec, const TaggedSequence& visual);

// Inverse oracle: a scene whose detection equals the canonical input set.
// Boxed triplets are placed exactly; boxless ones get a deterministic
// canonical placement.
TaggedSequence oracle_render(const WorldSpec& spec, const std::vector<HoiTriplet>& triplets);

struct MixRatios {
    double strong = 0.10, weak = 0.25, unsup = 0.65;
    void validate() const;
};

std::vector<int> largest_remainder_counts(const std::vector<double>& quotas, int total);

struct Dataset {
    WorldSpec spec;
    std::vector<Scene> scenes;
    std::vector<int> train_indices;
    std::vector<int> holdout_indices;

    std::vector<const Scene*> train() const;
    std::vector<const Scene*> holdout() const;
};

Dataset build_dataset(const WorldSpec& spec, int n, const MixRatios& ratios,
                      double holdout_fraction = 0.10);

void save_dataset_jsonl(const Dataset& ds, const std::string& path);
Dataset load_dataset_jsonl(const WorldSpec& spec, const std::string& path);

}  // namespace unitok
