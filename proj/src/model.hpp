#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"
#include "vocab.hpp"

namespace unitok {

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int n_layers = 3;
    int max_seq_len = 160;
    std::vector<int> iaa_layers = {1};
    bool tied_head = true;
    // ablation switches; all-true is the full model
    bool split_embeddings = false;
    bool type_emb_enabled = true;
    bool iaa_enabled = true;

    int head_dim() const { return d_model / n_heads; }
    void validate(const Vocabulary& vocab) const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

struct LayerParams {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, wk, wv, wo;
    Tensor ln2_gain, ln2_bias;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// All trainable state. The IAA weight set exists exactly once; both task
// directions run through the same four tensors.
struct ModelParams {
    Tensor embedding;             // [|V|, d] unless split
    Tensor embedding_vis;         // [code_size, d] when split
    Tensor embedding_sem;         // [|V|-code_size, d] when split
    Tensor type_emb;              // [3, d], row per modality; zeros when disabled
    Tensor pos_emb;               // [max_seq_len, d]
    std::vector<LayerParams> layers;
    Tensor iaa_wq, iaa_wk, iaa_wv, iaa_wo;
    Tensor final_ln_gain, final_ln_bias;
    Tensor head_w;                // [|V|, d] when untied, unsplit
    Tensor head_w_vis, head_w_sem;

    static ModelParams init(const ModelConfig& cfg, const Vocabulary& vocab, uint64_t seed);

    std::vector<std::pair<std::string, Tensor>> named() const;
    std::vector<std::pair<std::string, Tensor>> trainable(const ModelConfig& cfg) const;
    uint64_t iaa_fingerprint() const;
};

enum class IaaDirection { VisualQueries, SemanticQueries };

struct AttentionRecord {
    int layer = 0;
    IaaDirection direction = IaaDirection::SemanticQueries;
    int heads = 0, queries = 0, keys = 0;
    std::vector<double> weights;  // heads*queries*keys, post-softmax
    std::vector<int> query_ids, key_ids;

    double at(int h, int q, int k) const {
        return weights[(static_cast<size_t>(h) * queries + q) * keys + k];
    }
};

// Tape-connected IAA intermediates, one per IAA call in a forward pass.
struct IaaTensors {
    int layer = 0;
    IaaDirection direction = IaaDirection::SemanticQueries;
    std::vector<Tensor> attn;  // per head, [queries, keys]
    Tensor pre_residual;       // W_o-projected attention output
    Tensor output;             // pre_residual + query input states
    std::vector<int> query_ids, key_ids;

    AttentionRecord snapshot() const;
};

struct ForwardCapture {
    std::vector<IaaTensors> iaa;
};

struct Model {
    ModelConfig cfg;
    Vocabulary vocab;
    ModelParams params;

    static Model create(const ModelConfig& cfg, const Vocabulary& vocab, uint64_t seed);
};

// row i = token_embedding[id_i] + type_emb[tag_i] + pos_emb[i]
Tensor embed(const Model& m, const TaggedSequence& seq);

// Symmetric cross-attention per the shared weight set. Query/key modality
// offsets e_q, e_k are type_emb rows selected per token.
IaaTensors iaa_forward(const Model& m, const Tensor& query_states,
                       const std::vector<Modality>& query_tags,
                       const std::vector<int>& query_ids, const Tensor& key_states,
                       const std::vector<Modality>& key_tags, const std::vector<int>& key_ids,
                       IaaDirection direction);

// Teacher-forced pass over a framed sequence [BOS][TASK]payload[SEP]target.
// At each IAA layer the SEP-and-after rows query the payload rows.
Tensor forward(const Model& m, const TaggedSequence& seq, ForwardCapture* capture = nullptr);

struct DecodeResultSeq {
    TaggedSequence tokens;
    bool truncated = false;
    std::vector<double> token_logprobs;  // greedy path log-probabilities
    std::vector<AttentionRecord> attention;
};

struct Sampling {
    bool greedy = true;
    double temperature = 0.07;
    uint64_t seed = 0;
};

// Greedy autoregressive detection: visual grid tokens in, semantic tokens out
// (EOS stripped). Output may be ill-formed; callers parse with
// decode_semantics.
DecodeResultSeq detect(const Model& m, const TaggedSequence& visual);

// Constrained generation: decodes exactly grid*grid tokens with logits masked
// to the visual range.
DecodeResultSeq generate(const Model& m, const TaggedSequence& semantics,
                         const Sampling& sampling = {});

// No-grad forward used by the decoders; exposed for equivalence tests.
std::vector<double> fast_forward_logits(const Model& m, const TaggedSequence& seq,
                                        std::vector<AttentionRecord>* attn = nullptr);

}  // namespace unitok
