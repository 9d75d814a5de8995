#include "world.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace unitok {

std::vector<std::pair<int, int>> ActionRule::offsets(int g) const {
    std::vector<std::pair<int, int>> out;
    for (int dy2 = -(g - 1); dy2 <= g - 1; ++dy2)
        for (int dx2 = -(g - 1); dx2 <= g - 1; ++dx2)
            if (matches(dx2, dy2)) out.emplace_back(dx2, dy2);
    return out;
}

std::string supervision_name(Supervision s) {
    switch (s) {
        case Supervision::Strong: return "strong";
        case Supervision::Weak: return "weak";
        default: return "unsup";
    }
}

Supervision supervision_from_name(const std::string& name) {
    if (name == "strong") return Supervision::Strong;
    if (name == "weak") return Supervision::Weak;
    if (name == "unsup") return Supervision::Unsupervised;
    throw ConfigError("unknown supervision tier '" + name + "'");
}

void WorldSpec::validate() const {
    if (grid < 2) throw ConfigError("world: grid side must be at least 2");
    if (categories < 1 || actions < 1) throw ConfigError("world: need >=1 category and action");
    if (static_cast<int>(rules.size()) != actions)
        throw ConfigError("world: " + std::to_string(rules.size()) + " rules for " +
                          std::to_string(actions) + " actions");
    if (max_triplets_per_scene < 1) throw ConfigError("world: max_triplets_per_scene must be >=1");
    for (int a = 0; a < actions; ++a) {
        if (rules[a].offsets(grid).empty())
            throw ConfigError("world: action " + std::to_string(a) +
                              " is unsatisfiable on this grid");
        for (int b = a + 1; b < actions; ++b)
            for (int dy = -(grid - 1); dy <= grid - 1; ++dy)
                for (int dx = -(grid - 1); dx <= grid - 1; ++dx)
                    if (rules[a].matches(dx, dy) && rules[b].matches(dx, dy))
                        throw ConfigError("world: actions " + std::to_string(a) + " and " +
                                          std::to_string(b) + " overlap at offset (" +
                                          std::to_string(dx) + "," + std::to_string(dy) + ")");
    }
}

WorldSpec WorldSpec::standard(int grid, int categories, int actions, uint64_t seed) {
    WorldSpec s;
    s.grid = grid;
    s.categories = categories;
    s.actions = actions;
    s.seed = seed;
    using K = ActionRule::Kind;
    std::vector<ActionRule> pool = {
        {K::Offset, 1, 0, 0},   // object right of human
        {K::Offset, 0, -1, 0},  // object above
        {K::Chebyshev, 0, 0, 2},
        {K::Offset, -1, 0, 0},
        {K::Offset, 0, 1, 0},
        {K::Chebyshev, 0, 0, 3},
        {K::Offset, 1, 1, 0},
        {K::Offset, -1, -1, 0},
        {K::Offset, 1, -1, 0},
        {K::Offset, -1, 1, 0},
    };
    if (actions > static_cast<int>(pool.size()))
        throw ConfigError("world: standard rule pool supports at most " +
                          std::to_string(pool.size()) + " actions");
    s.rules.assign(pool.begin(), pool.begin() + actions);
    s.validate();
    return s;
}

namespace {

nlohmann::ordered_json rule_to_json(const ActionRule& r) {
    if (r.kind == ActionRule::Kind::Offset)
        return {{"kind", "offset"}, {"dx", r.dx}, {"dy", r.dy}};
    return {{"kind", "chebyshev"}, {"r", r.r}};
}

ActionRule rule_from_json(const nlohmann::json& j) {
    ActionRule r;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "offset") {
        r.kind = ActionRule::Kind::Offset;
        r.dx = j.at("dx").get<int>();
        r.dy = j.at("dy").get<int>();
    } else if (kind == "chebyshev") {
        r.kind = ActionRule::Kind::Chebyshev;
        r.r = j.at("r").get<int>();
    } else {
        throw ConfigError("world: unknown rule kind '" + kind + "'");
    }
    return r;
}

}  // namespace

std::string WorldSpec::to_json() const {
    nlohmann::ordered_json j;
    j["grid"] = grid;
    j["categories"] = categories;
    j["actions"] = actions;
    j["action_rules"] = nlohmann::ordered_json::array();
    for (const ActionRule& r : rules) j["action_rules"].push_back(rule_to_json(r));
    j["max_triplets_per_scene"] = max_triplets_per_scene;
    j["large_entity_prob"] = large_entity_prob;
    j["max_distractors"] = max_distractors;
    j["weak_label_noise"] = weak_label_noise;
    j["seed"] = seed;
    return j.dump(2);
}

WorldSpec WorldSpec::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    WorldSpec s;
    s.grid = j.at("grid").get<int>();
    s.categories = j.at("categories").get<int>();
    s.actions = j.at("actions").get<int>();
    for (const auto& rj : j.at("action_rules")) s.rules.push_back(rule_from_json(rj));
    s.max_triplets_per_scene = j.value("max_triplets_per_scene", 3);
    s.large_entity_prob = j.value("large_entity_prob", 0.25);
    s.max_distractors = j.value("max_distractors", 2);
    s.weak_label_noise = j.value("weak_label_noise", 0.0);
    s.seed = j.value("seed", uint64_t{1});
    s.validate();
    return s;
}

int glyph_of(const Entity& e, bool right_half) {
    int base = e.human ? 1 : 4 + 3 * e.category;
    if (!e.large) return base;
    return base + (right_half ? 2 : 1);
}

namespace {

void paint(std::vector<int>& grid, int g, const Entity& e) {
    grid[e.y * g + e.x] = glyph_of(e, false);
    if (e.large) grid[e.y * g + e.x + 1] = glyph_of(e, true);
}

bool cells_free(const std::vector<int>& grid, int g, const Entity& e) {
    if (e.x < 0 || e.y < 0 || e.y >= g || e.x + (e.large ? 1 : 0) >= g) return false;
    if (grid[e.y * g + e.x] != 0) return false;
    if (e.large && grid[e.y * g + e.x + 1] != 0) return false;
    return true;
}

}  // namespace

std::vector<HoiTriplet> exhaustive_truth(const WorldSpec& spec,
                                         const std::vector<Entity>& entities) {
    std::vector<HoiTriplet> out;
    for (const Entity& h : entities) {
        if (!h.human) continue;
        for (const Entity& o : entities) {
            if (o.human) continue;
            for (int a = 0; a < spec.actions; ++a) {
                if (spec.rules[a].matches(o.x - h.x, o.y - h.y)) {
                    HoiTriplet t;
                    t.action_id = a;
                    t.object_category = o.category;
                    t.human_box = h.box();
                    t.object_box = o.box();
                    out.push_back(t);
                }
            }
        }
    }
    return canonical_triplets(out);
}

std::optional<std::vector<Entity>> entities_from_grid(const WorldSpec& spec,
                                                      const std::vector<int>& grid) {
    int g = spec.grid;
    if (static_cast<int>(grid.size()) != g * g) return std::nullopt;
    int max_glyph = glyph_state_count(spec.shape());
    std::vector<Entity> out;
    for (int y = 0; y < g; ++y) {
        for (int x = 0; x < g; ++x) {
            int v = grid[y * g + x];
            if (v < 0 || v >= max_glyph) return std::nullopt;
            if (v == 0) continue;
            int rel = (v - 1) % 3;  // 0 small, 1 left half, 2 right half
            int who = (v - 1) / 3;  // 0 human, k+1 category k
            Entity e;
            e.human = who == 0;
            e.category = e.human ? 0 : who - 1;
            e.x = x;
            e.y = y;
            if (rel == 0) {
                e.large = false;
                out.push_back(e);
            } else if (rel == 1) {
                if (x + 1 >= g || grid[y * g + x + 1] != v + 1) return std::nullopt;
                e.large = true;
                out.push_back(e);
            } else {
                // right half must pair with a left half immediately to the left
                if (x == 0 || grid[y * g + x - 1] != v - 1) return std::nullopt;
            }
        }
    }
    return out;
}

Scene sample_scene(const WorldSpec& spec, uint64_t seed) {
    spec.validate();
    int g = spec.grid;
    for (uint64_t attempt = 0; attempt < 64; ++attempt) {
        Rng rng(Rng::mix(seed, attempt));
        Scene scene;
        scene.grid_side = g;
        scene.grid.assign(g * g, 0);
        int want_pairs = rng.uniform_int(1, spec.max_triplets_per_scene);
        std::vector<HoiTriplet> intended;
        bool ok = true;
        for (int p = 0; p < want_pairs && ok; ++p) {
            bool placed = false;
            for (int tries = 0; tries < 80 && !placed; ++tries) {
                int a = rng.uniform_int(0, spec.actions - 1);
                auto offs = spec.rules[a].offsets(g);
                auto [dx, dy] = offs[rng.uniform_int(0, static_cast<int>(offs.size()) - 1)];
                Entity h;
                h.human = true;
                h.large = rng.uniform() < spec.large_entity_prob;
                h.x = rng.uniform_int(0, g - 1 - (h.large ? 1 : 0));
                h.y = rng.uniform_int(0, g - 1);
                Entity o;
                o.human = false;
                o.category = rng.uniform_int(0, spec.categories - 1);
                o.large = rng.uniform() < spec.large_entity_prob;
                o.x = h.x + dx;
                o.y = h.y + dy;
                if (!cells_free(scene.grid, g, h)) continue;
                paint(scene.grid, g, h);
                if (!cells_free(scene.grid, g, o)) {
                    scene.grid[h.y * g + h.x] = 0;
                    if (h.large) scene.grid[h.y * g + h.x + 1] = 0;
                    continue;
                }
                paint(scene.grid, g, o);
                scene.entities.push_back(h);
                scene.entities.push_back(o);
                HoiTriplet t;
                t.action_id = a;
                t.object_category = o.category;
                t.human_box = h.box();
                t.object_box = o.box();
                intended.push_back(t);
                placed = true;
            }
            ok = placed;
        }
        if (!ok) continue;
        // distractors must not create new interactions
        int want_distractors = rng.uniform_int(0, spec.max_distractors);
        for (int d = 0; d < want_distractors; ++d) {
            for (int tries = 0; tries < 40; ++tries) {
                Entity e;
                e.human = rng.uniform() < 0.5;
                e.category = e.human ? 0 : rng.uniform_int(0, spec.categories - 1);
                e.large = rng.uniform() < spec.large_entity_prob;
                e.x = rng.uniform_int(0, g - 1 - (e.large ? 1 : 0));
                e.y = rng.uniform_int(0, g - 1);
                if (!cells_free(scene.grid, g, e)) continue;
                auto trial = scene.entities;
                trial.push_back(e);
                if (exhaustive_truth(spec, trial).size() != intended.size()) continue;
                paint(scene.grid, g, e);
                scene.entities = std::move(trial);
                break;
            }
        }
        scene.truth = exhaustive_truth(spec, scene.entities);
        if (scene.truth != canonical_triplets(intended)) continue;
        scene.seed = seed;
        return scene;
    }
    throw WorldError("sample_scene: placement retry budget exhausted for seed " +
                     std::to_string(seed));
}

TaggedSequence tokenize_scene(const WorldSpec& spec, const Scene& scene) {
    int g = spec.grid;
    if (scene.grid_side != g || static_cast<int>(scene.grid.size()) != g * g)
        throw WorldError("tokenize_scene: grid does not match world");
    int max_glyph = glyph_state_count(spec.shape());
    TaggedSequence seq;
    seq.items.reserve(scene.grid.size());
    for (int v : scene.grid) {
        if (v < 0 || v >= max_glyph)
            throw WorldError("tokenize_scene: cell state " + std::to_string(v) +
                             " outside glyph alphabet");
        seq.items.push_back(Token{v, Modality::Visual});
    }
    return seq;
}

std::optional<Scene> detokenize_scene(const WorldSpec& spec, const std::vector<int>& ids) {
    int g = spec.grid;
    if (static_cast<int>(ids.size()) != g * g) return std::nullopt;
    auto ents = entities_from_grid(spec, ids);
    if (!ents) return std::nullopt;
    Scene s;
    s.grid_side = g;
    s.grid = ids;
    s.entities = std::move(*ents);
    s.truth = exhaustive_truth(spec, s.entities);
    return s;
}

OracleDetection oracle_detect(const WorldSpec& spec, const TaggedSequence& visual) {
    int g = spec.grid;
    if (visual.length() != g * g)
        throw WorldError("oracle_detect: expected " + std::to_string(g * g) +
                         " visual tokens, got " + std::to_string(visual.length()));
    auto scene = detokenize_scene(spec, visual.ids());
    if (!scene) return OracleDetection{{}, false};
    return OracleDetection{scene->truth, true};
}

namespace {

Entity entity_from_box(bool human, int category, const Box& b) {
    if (b.height() != 1 || b.width() > 2)
        throw WorldError("oracle_render: box " + std::to_string(b.width()) + "x" +
                         std::to_string(b.height()) + " has no entity glyph");
    Entity e;
    e.human = human;
    e.category = category;
    e.x = b.x0;
    e.y = b.y0;
    e.large = b.width() == 2;
    return e;
}

bool same_footprint(const Entity& a, const Entity& b) {
    return a.human == b.human && a.category == b.category && a.x == b.x && a.y == b.y &&
           a.large == b.large;
}

std::vector<HoiTriplet> strip_all(const std::vector<HoiTriplet>& ts) {
    std::vector<HoiTriplet> out;
    out.reserve(ts.size());
    for (const auto& t : ts) out.push_back(strip_boxes(t));
    return canonical_triplets(out);
}

}  // namespace

TaggedSequence oracle_render(const WorldSpec& spec, const std::vector<HoiTriplet>& triplets) {
    spec.validate();
    int g = spec.grid;
    Scene scene;
    scene.grid_side = g;
    scene.grid.assign(g * g, 0);

    auto try_add = [&](const Entity& e) -> bool {
        for (const Entity& prev : scene.entities)
            if (same_footprint(prev, e)) return true;  // shared participant
        if (!cells_free(scene.grid, g, e)) return false;
        paint(scene.grid, g, e);
        scene.entities.push_back(e);
        return true;
    };

    std::vector<HoiTriplet> canon = canonical_triplets(triplets);
    std::vector<HoiTriplet> boxless;
    for (const HoiTriplet& t : canon) {
        if (t.action_id < 0 || t.action_id >= spec.actions || t.object_category < 0 ||
            t.object_category >= spec.categories)
            throw WorldError("oracle_render: triplet references an unknown action or category");
        if (t.human_box && t.object_box) {
            if (!try_add(entity_from_box(true, 0, *t.human_box)) ||
                !try_add(entity_from_box(false, t.object_category, *t.object_box)))
                throw WorldError("oracle_render: boxed entities collide");
        } else {
            boxless.push_back(t);
        }
    }

    for (const HoiTriplet& t : boxless) {
        auto offs = spec.rules[t.action_id].offsets(g);
        std::sort(offs.begin(), offs.end(),
                  [](auto a, auto b) { return std::make_pair(a.second, a.first) <
                                              std::make_pair(b.second, b.first); });
        size_t before = exhaustive_truth(spec, scene.entities).size();
        bool placed = false;
        for (int y = 0; y < g && !placed; ++y) {
            for (int x = 0; x < g && !placed; ++x) {
                for (auto [dx, dy] : offs) {
                    Entity h{true, 0, x, y, false};
                    Entity o{false, t.object_category, x + dx, y + dy, false};
                    if (!cells_free(scene.grid, g, h)) break;
                    if (!cells_free(scene.grid, g, o)) continue;
                    auto trial = scene.entities;
                    trial.push_back(h);
                    trial.push_back(o);
                    if (exhaustive_truth(spec, trial).size() != before + 1) continue;
                    paint(scene.grid, g, h);
                    paint(scene.grid, g, o);
                    scene.entities = std::move(trial);
                    placed = true;
                    break;
                }
            }
        }
        if (!placed)
            throw WorldError("oracle_render: no canonical placement fits this triplet set");
    }

    std::vector<HoiTriplet> got = exhaustive_truth(spec, scene.entities);
    bool all_boxed = boxless.empty();
    bool match = all_boxed ? got == canon : strip_all(got) == strip_all(canon);
    if (!match)
        throw WorldError("oracle_render: placed scene does not reproduce the requested triplets");
    return tokenize_scene(spec, scene);
}

void MixRatios::validate() const {
    for (double v : {strong, weak, unsup})
        if (v < 0.0 || v > 1.0) throw ConfigError("mix ratios must lie in [0,1]");
    if (std::abs(strong + weak + unsup - 1.0) > 1e-9)
        throw ConfigError("mix ratios must sum to 1, got " +
                          std::to_string(strong + weak + unsup));
}

std::vector<int> largest_remainder_counts(const std::vector<double>& quotas, int total) {
    std::vector<int> counts(quotas.size());
    std::vector<std::pair<double, int>> rem;
    int assigned = 0;
    for (size_t i = 0; i < quotas.size(); ++i) {
        counts[i] = static_cast<int>(std::floor(quotas[i]));
        assigned += counts[i];
        rem.emplace_back(quotas[i] - counts[i], static_cast<int>(i));
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (int k = 0; k < total - assigned; ++k) counts[rem[k % rem.size()].second]++;
    return counts;
}

Dataset build_dataset(const WorldSpec& spec, int n, const MixRatios& ratios,
                      double holdout_fraction) {
    if (n < 10) throw ConfigError("build_dataset: need at least 10 scenes, got " +
                                  std::to_string(n));
    ratios.validate();
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
        throw ConfigError("build_dataset: holdout fraction outside [0,1)");
    Dataset ds;
    ds.spec = spec;
    ds.scenes.reserve(n);
    for (int i = 0; i < n; ++i)
        ds.scenes.push_back(sample_scene(spec, Rng::mix(spec.seed, static_cast<uint64_t>(i))));

    std::vector<int> counts = largest_remainder_counts(
        {ratios.strong * n, ratios.weak * n, ratios.unsup * n}, n);
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(Rng::mix(spec.seed, 0xA55A11));
    for (int i = n - 1; i > 0; --i)
        std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
    int cursor = 0;
    for (int tier = 0; tier < 3; ++tier) {
        Supervision s = tier == 0   ? Supervision::Strong
                        : tier == 1 ? Supervision::Weak
                                    : Supervision::Unsupervised;
        for (int k = 0; k < counts[tier]; ++k) ds.scenes[order[cursor++]].supervision = s;
    }

    int holdout = static_cast<int>(std::lround(holdout_fraction * n));
    std::vector<int> split(n);
    for (int i = 0; i < n; ++i) split[i] = i;
    Rng split_rng(Rng::mix(spec.seed, 0x5B17D0));
    for (int i = n - 1; i > 0; --i)
        std::swap(split[i], split[split_rng.uniform_int(0, i)]);
    ds.holdout_indices.assign(split.begin(), split.begin() + holdout);
    ds.train_indices.assign(split.begin() + holdout, split.end());
    std::sort(ds.holdout_indices.begin(), ds.holdout_indices.end());
    std::sort(ds.train_indices.begin(), ds.train_indices.end());
    return ds;
}

std::vector<const Scene*> Dataset::train() const {
    std::vector<const Scene*> out;
    for (int i : train_indices) out.push_back(&scenes[i]);
    return out;
}

std::vector<const Scene*> Dataset::holdout() const {
    std::vector<const Scene*> out;
    for (int i : holdout_indices) out.push_back(&scenes[i]);
    return out;
}

namespace {

nlohmann::ordered_json triplet_to_json(const HoiTriplet& t) {
    nlohmann::ordered_json j;
    j["action"] = t.action_id;
    j["category"] = t.object_category;
    if (t.human_box)
        j["human_box"] = {t.human_box->x0, t.human_box->y0, t.human_box->x1, t.human_box->y1};
    if (t.object_box)
        j["object_box"] = {t.object_box->x0, t.object_box->y0, t.object_box->x1, t.object_box->y1};
    return j;
}

HoiTriplet triplet_from_json(const nlohmann::json& j) {
    HoiTriplet t;
    t.action_id = j.at("action").get<int>();
    t.object_category = j.at("category").get<int>();
    auto parse_box = [&](const char* key) -> std::optional<Box> {
        if (!j.contains(key)) return std::nullopt;
        auto v = j.at(key).get<std::vector<int>>();
        return Box{v[0], v[1], v[2], v[3]};
    };
    t.human_box = parse_box("human_box");
    t.object_box = parse_box("object_box");
    return t;
}

}  // namespace

void save_dataset_jsonl(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("dataset: cannot open " + path + " for writing");
    int g = ds.spec.grid;
    for (size_t i = 0; i < ds.scenes.size(); ++i) {
        const Scene& s = ds.scenes[i];
        nlohmann::ordered_json j;
        auto rows = nlohmann::ordered_json::array();
        for (int y = 0; y < g; ++y) {
            auto row = nlohmann::ordered_json::array();
            for (int x = 0; x < g; ++x) row.push_back(s.grid[y * g + x]);
            rows.push_back(row);
        }
        j["grid"] = rows;
        j["triplets"] = nlohmann::ordered_json::array();
        for (const HoiTriplet& t : s.truth) j["triplets"].push_back(triplet_to_json(t));
        j["supervision"] = supervision_name(s.supervision);
        j["seed"] = s.seed;
        j["split"] = std::find(ds.holdout_indices.begin(), ds.holdout_indices.end(),
                               static_cast<int>(i)) != ds.holdout_indices.end()
                         ? "holdout"
                         : "train";
        os << j.dump() << "\n";
    }
}

Dataset load_dataset_jsonl(const WorldSpec& spec, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("dataset: cannot open " + path);
    Dataset ds;
    ds.spec = spec;
    std::string line;
    int idx = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        Scene s;
        s.grid_side = spec.grid;
        for (const auto& row : j.at("grid"))
            for (const auto& v : row) s.grid.push_back(v.get<int>());
        if (static_cast<int>(s.grid.size()) != spec.grid * spec.grid)
            throw IoError("dataset: grid size mismatch at line " + std::to_string(idx + 1));
        auto ents = entities_from_grid(spec, s.grid);
        if (!ents) throw IoError("dataset: undecodable grid at line " + std::to_string(idx + 1));
        s.entities = std::move(*ents);
        for (const auto& tj : j.at("triplets")) s.truth.push_back(triplet_from_json(tj));
        s.truth = canonical_triplets(s.truth);
        s.supervision = supervision_from_name(j.at("supervision").get<std::string>());
        s.seed = j.value("seed", uint64_t{0});
        if (j.value("split", "train") == "holdout")
            ds.holdout_indices.push_back(idx);
        else
            ds.train_indices.push_back(idx);
        ds.scenes.push_back(std::move(s));
        ++idx;
    }
    return ds;
}

}  // namespace unitok
