#include "vocab.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

namespace unitok {

std::vector<int> TaggedSequence::ids() const {
    std::vector<int> out;
    out.reserve(items.size());
    for (const Token& t : items) out.push_back(t.id);
    return out;
}

std::vector<Modality> TaggedSequence::tags() const {
    std::vector<Modality> out;
    out.reserve(items.size());
    for (const Token& t : items) out.push_back(t.tag);
    return out;
}

bool triplet_less(const HoiTriplet& a, const HoiTriplet& b) {
    auto key = [](const HoiTriplet& t) {
        return std::make_tuple(t.action_id, t.object_category,
                               t.human_box.value_or(Box{-1, -1, -1, -1}),
                               t.object_box.value_or(Box{-1, -1, -1, -1}));
    };
    return key(a) < key(b);
}

std::vector<HoiTriplet> canonical_triplets(std::vector<HoiTriplet> ts) {
    std::sort(ts.begin(), ts.end(), triplet_less);
    return ts;
}

HoiTriplet strip_boxes(const HoiTriplet& t) {
    return HoiTriplet{t.action_id, t.object_category, std::nullopt, std::nullopt};
}

int glyph_state_count(const WorldShape& world) {
    return 1 + 3 * (1 + world.categories);
}

Vocabulary::Vocabulary(int code_size, std::vector<std::string> semantic_names,
                       std::vector<std::string> special_names)
    : code_size_(code_size),
      semantic_names_(std::move(semantic_names)),
      special_names_(std::move(special_names)) {
    special_base_ = code_size_ + semantic_count();
}

Modality Vocabulary::modality_of(int id) const {
    if (id < 0 || id >= size())
        throw IndexError("modality_of: id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(size()));
    if (id < code_size_) return Modality::Visual;
    if (id < special_base_) return Modality::Semantic;
    return Modality::Special;
}

std::string Vocabulary::name_of(int id) const {
    modality_of(id);  // range check
    if (id < code_size_) return "V" + std::to_string(id);
    if (id < special_base_) return semantic_names_[id - code_size_];
    return special_names_[id - special_base_];
}

int Vocabulary::id_of(const std::string& name) const {
    if (!name.empty() && name[0] == 'V') {
        bool digits = name.size() > 1;
        for (size_t i = 1; i < name.size(); ++i) digits = digits && std::isdigit(name[i]);
        if (digits) {
            int id = std::stoi(name.substr(1));
            if (id < code_size_) return id;
        }
    }
    for (int i = 0; i < semantic_count(); ++i)
        if (semantic_names_[i] == name) return code_size_ + i;
    for (int i = 0; i < special_count(); ++i)
        if (special_names_[i] == name) return special_base_ + i;
    throw IndexError("id_of: unknown token name '" + name + "'");
}

int Vocabulary::cat_id(int k) const {
    if (k < 0 || k >= world_.categories)
        throw IndexError("cat_id: category " + std::to_string(k) + " outside world");
    return code_size_ + 1 + k;
}

int Vocabulary::act_id(int a) const {
    if (a < 0 || a >= world_.actions)
        throw IndexError("act_id: action " + std::to_string(a) + " outside world");
    return code_size_ + 1 + world_.categories + a;
}

int Vocabulary::coord_id(int c) const {
    if (c < 0 || c >= world_.grid)
        throw IndexError("coord_id: coordinate " + std::to_string(c) + " outside grid");
    return code_size_ + 1 + world_.categories + world_.actions + c;
}

int Vocabulary::special_id(const std::string& name) const {
    for (int i = 0; i < special_count(); ++i)
        if (special_names_[i] == name) return special_base_ + i;
    throw IndexError("special_id: unknown special '" + name + "'");
}

Vocabulary build_vocabulary(int code_size, const WorldShape& world) {
    int needed = glyph_state_count(world);
    if (code_size < needed)
        throw ConfigError("build_vocabulary: code_size " + std::to_string(code_size) +
                          " below the " + std::to_string(needed) +
                          " glyph states this world needs");
    std::vector<std::string> sem;
    sem.push_back("HUM");
    for (int k = 0; k < world.categories; ++k) sem.push_back("CAT_" + std::to_string(k));
    for (int a = 0; a < world.actions; ++a) sem.push_back("ACT_" + std::to_string(a));
    for (int c = 0; c < world.grid; ++c) sem.push_back("COORD_" + std::to_string(c));
    sem.push_back("BH");
    sem.push_back("BO");
    std::vector<std::string> special = {"BOS", "EOS", "SEP", "TSEP", "TASK_DET", "TASK_GEN", "PAD"};
    Vocabulary v(code_size, std::move(sem), std::move(special));
    v.world_ = world;
    return v;
}

std::string Vocabulary::to_json() const {
    nlohmann::ordered_json j;
    j["code_size"] = code_size_;
    j["semantic_names"] = semantic_names_;
    j["special_names"] = special_names_;
    j["world"] = {{"grid", world_.grid}, {"categories", world_.categories},
                  {"actions", world_.actions}};
    return j.dump(2);
}

Vocabulary Vocabulary::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    Vocabulary v(j.at("code_size").get<int>(),
                 j.at("semantic_names").get<std::vector<std::string>>(),
                 j.at("special_names").get<std::vector<std::string>>());
    if (j.contains("world")) {
        v.world_.grid = j["world"].at("grid").get<int>();
        v.world_.categories = j["world"].at("categories").get<int>();
        v.world_.actions = j["world"].at("actions").get<int>();
    }
    return v;
}

std::string Vocabulary::render(const TaggedSequence& seq) const {
    std::ostringstream os;
    for (int i = 0; i < seq.length(); ++i) {
        if (i) os << ' ';
        os << name_of(seq.items[i].id);
    }
    return os.str();
}

TaggedSequence Vocabulary::parse(const std::string& line) const {
    TaggedSequence seq;
    std::istringstream is(line);
    std::string name;
    while (is >> name) {
        int id = id_of(name);
        seq.items.push_back(token(id));
    }
    return seq;
}

TaggedSequence tag_ids(const Vocabulary& vocab, const std::vector<int>& ids) {
    TaggedSequence seq;
    seq.items.reserve(ids.size());
    for (int id : ids) seq.items.push_back(vocab.token(id));
    return seq;
}

namespace {

void validate_triplet(const Vocabulary& vocab, const HoiTriplet& t) {
    const WorldShape& w = vocab.world();
    if (t.action_id < 0 || t.action_id >= w.actions)
        throw ContractError("encode_semantics: action " + std::to_string(t.action_id) +
                            " unknown to this world");
    if (t.object_category < 0 || t.object_category >= w.categories)
        throw ContractError("encode_semantics: category " + std::to_string(t.object_category) +
                            " unknown to this world");
    for (const auto& ob : {t.human_box, t.object_box}) {
        if (!ob) continue;
        if (!(0 <= ob->x0 && ob->x0 <= ob->x1 && ob->x1 < w.grid && 0 <= ob->y0 &&
              ob->y0 <= ob->y1 && ob->y1 < w.grid))
            throw ContractError("encode_semantics: box outside grid");
    }
}

}  // namespace

TaggedSequence encode_semantics(const Vocabulary& vocab, const std::vector<HoiTriplet>& triplets,
                                bool include_boxes) {
    std::vector<HoiTriplet> ts = canonical_triplets(triplets);
    TaggedSequence seq;
    for (const HoiTriplet& t : ts) {
        validate_triplet(vocab, t);
        auto push = [&](int id) { seq.items.push_back(vocab.token(id)); };
        push(vocab.hum_id());
        push(vocab.act_id(t.action_id));
        push(vocab.cat_id(t.object_category));
        if (include_boxes && t.human_box && t.object_box) {
            push(vocab.bh_id());
            for (int c : {t.human_box->x0, t.human_box->y0, t.human_box->x1, t.human_box->y1})
                push(vocab.coord_id(c));
            push(vocab.bo_id());
            for (int c : {t.object_box->x0, t.object_box->y0, t.object_box->x1, t.object_box->y1})
                push(vocab.coord_id(c));
        }
        push(vocab.tsep());
    }
    return seq;
}

namespace {

// Returns the coordinate value of seq[i] or nullopt if it is not a COORD token.
std::optional<int> coord_value(const Vocabulary& vocab, const TaggedSequence& seq, int i) {
    if (i >= seq.length()) return std::nullopt;
    int id = seq.items[i].id;
    int base = vocab.coord_id(0);
    if (id < base || id >= base + vocab.world().grid) return std::nullopt;
    return id - base;
}

}  // namespace

DecodeResult decode_semantics(const Vocabulary& vocab, const TaggedSequence& seq) {
    DecodeResult res;
    const WorldShape& w = vocab.world();
    int i = 0;
    auto fail = [&](const std::string& why) {
        res.well_formed = false;
        res.diagnostics.push_back(why + " at position " + std::to_string(i));
    };
    while (i < seq.length()) {
        if (seq.items[i].id != vocab.hum_id()) {
            fail("expected HUM");
            return res;
        }
        if (i + 2 >= seq.length()) {
            fail("truncated triplet");
            return res;
        }
        int act = seq.items[i + 1].id - vocab.act_id(0);
        int cat = seq.items[i + 2].id - vocab.cat_id(0);
        if (act < 0 || act >= w.actions) {
            fail("expected ACT");
            return res;
        }
        if (cat < 0 || cat >= w.categories) {
            fail("expected CAT");
            return res;
        }
        HoiTriplet t;
        t.action_id = act;
        t.object_category = cat;
        int j = i + 3;
        if (j < seq.length() && seq.items[j].id == vocab.bh_id()) {
            int coords[8];
            bool ok = j + 9 < seq.length() && seq.items[j + 5].id == vocab.bo_id();
            for (int c = 0; c < 4 && ok; ++c) {
                auto v = coord_value(vocab, seq, j + 1 + c);
                ok = v.has_value();
                if (ok) coords[c] = *v;
            }
            for (int c = 0; c < 4 && ok; ++c) {
                auto v = coord_value(vocab, seq, j + 6 + c);
                ok = v.has_value();
                if (ok) coords[4 + c] = *v;
            }
            if (!ok) {
                i = j;
                fail("malformed box block");
                return res;
            }
            Box hb{coords[0], coords[1], coords[2], coords[3]};
            Box ob{coords[4], coords[5], coords[6], coords[7]};
            if (hb.x0 > hb.x1 || hb.y0 > hb.y1 || ob.x0 > ob.x1 || ob.y0 > ob.y1) {
                i = j;
                fail("inverted box coordinates");
                return res;
            }
            t.human_box = hb;
            t.object_box = ob;
            j += 10;
        }
        if (j >= seq.length() || seq.items[j].id != vocab.tsep()) {
            i = j;
            fail("expected TSEP");
            return res;
        }
        res.triplets.push_back(t);
        i = j + 1;
    }
    return res;
}

TaggedSequence format_task_input(const Vocabulary& vocab, Task task,
                                 const TaggedSequence& payload) {
    if (payload.items.empty())
        throw ContractError("format_task_input: empty payload");
    for (const Token& t : payload.items) {
        if (task == Task::Detect && t.tag != Modality::Visual)
            throw ContractError("format_task_input: detect payload must be all-visual, got '" +
                                vocab.name_of(t.id) + "'");
        if (task == Task::Generate &&
            !(t.tag == Modality::Semantic || t.id == vocab.tsep()))
            throw ContractError("format_task_input: generate payload must be semantic, got '" +
                                vocab.name_of(t.id) + "'");
    }
    TaggedSequence seq;
    seq.items.reserve(payload.items.size() + 3);
    seq.items.push_back(vocab.token(vocab.bos()));
    seq.items.push_back(vocab.token(task == Task::Detect ? vocab.task_det() : vocab.task_gen()));
    seq.items.insert(seq.items.end(), payload.items.begin(), payload.items.end());
    seq.items.push_back(vocab.token(vocab.sep()));
    return seq;
}

}  // namespace unitok
