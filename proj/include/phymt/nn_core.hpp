// Copyright (C) 2026 The phymt Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "phymt/lora_quant.hpp"
#include "phymt/numerics.hpp"
#include "phymt/param.hpp"
#include "phymt/precoding.hpp"
#include "phymt/prediction.hpp"

namespace phymt::nn {

// Activations are row-major matrices, one token per row.

RealMatrix gelu(const RealMatrix& x);
RealMatrix gelu_backward(const RealMatrix& x, const RealMatrix& dy);
RealMatrix softplus(const RealMatrix& x);
RealMatrix sigmoid(const RealMatrix& x);

/// H (N_T x K) to K x 2N_T real tokens: row k = [Re h_k, Im h_k].
RealMatrix channel_tokens(const ComplexMatrix& h);
/// Received block (N_T x L) to L x 2N_T real tokens.
RealMatrix signal_tokens(const ComplexMatrix& y);

/// y = x W^T + b with W stored out x in. Optionally carries a LoRA adapter
/// and a quantized copy of W (value then holds the dequantized weight).
struct Linear {
    Param weight;
    Param bias;
    std::optional<lora::LoraAdapter> adapter;
    std::optional<lora::QuantizedMatrix> quant;

    struct Cache {
        RealMatrix x;
    };

    Linear() = default;
    Linear(int in, int out, SeededRng& rng, const std::string& name);

    int in() const { return static_cast<int>(weight.value.cols()); }
    int out() const { return static_cast<int>(weight.value.rows()); }

    RealMatrix forward(const RealMatrix& x, Cache* cache) const;
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

struct LayerNorm {
    Param gamma;
    Param beta;
    double eps = 1e-5;

    struct Cache {
        RealMatrix xhat;
        RealVector rstd;
    };

    LayerNorm() = default;
    LayerNorm(int d, const std::string& name);

    RealMatrix forward(const RealMatrix& x, Cache* cache) const;
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

/// Linear -> GELU -> Linear.
struct Mlp {
    Linear fc1;
    Linear fc2;

    struct Cache {
        Linear::Cache c1;
        Linear::Cache c2;
        RealMatrix pre;
    };

    Mlp() = default;
    Mlp(int in, int hidden, int out, SeededRng& rng, const std::string& name);

    RealMatrix forward(const RealMatrix& x, Cache* cache) const;
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

struct Attention {
    Linear q;
    Linear k;
    Linear v;
    Linear o;
    int heads = 1;
    bool causal = false;

    struct Cache {
        Linear::Cache cq, ck, cv, co;
        RealMatrix qm, km, vm;
        std::vector<RealMatrix> probs;  // one n x n matrix per head
    };

    Attention() = default;
    Attention(int d, int heads, bool causal, SeededRng& rng, const std::string& name);

    RealMatrix forward(const RealMatrix& x, Cache* cache) const;
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

/// X <- LN(Attn(X) + X); X <- LN(MLP(X) + X).
struct EncoderBlock {
    Attention attn;
    LayerNorm ln1;
    Mlp mlp;
    LayerNorm ln2;

    struct Cache {
        Attention::Cache attn;
        LayerNorm::Cache ln1;
        Mlp::Cache mlp;
        LayerNorm::Cache ln2;
    };

    EncoderBlock() = default;
    EncoderBlock(int d, int heads, int hidden, SeededRng& rng, const std::string& name);

    RealMatrix forward(const RealMatrix& x, Cache* cache) const;
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

/// X <- X + Attn(LN(X)) with a causal mask; X <- X + MLP(LN(X)).
struct DecoderBlock {
    LayerNorm ln1;
    Attention attn;
    LayerNorm ln2;
    Mlp mlp;

    struct Cache {
        LayerNorm::Cache ln1;
        Attention::Cache attn;
        LayerNorm::Cache ln2;
        Mlp::Cache mlp;
    };

    DecoderBlock() = default;
    DecoderBlock(int d, int heads, int hidden, SeededRng& rng, const std::string& name);

    RealMatrix forward(const RealMatrix& x, Cache* cache) const;
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

struct BackboneConfig {
    int depth = 2;
    int d_model = 64;
    int heads = 4;
    int ffn = 256;
    int max_positions = 64;

    void validate() const;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

enum class QuantMode { kNone, kNf4, kLoftq };
QuantMode parse_quant_mode(const std::string& s);
const char* to_string(QuantMode m);

/// Shared causal stack. Learned positions are added on entry to the first
/// block, so a zero-depth backbone is the identity.
struct Backbone {
    BackboneConfig config;
    Param pos;
    std::vector<DecoderBlock> blocks;

    struct Cache {
        std::vector<DecoderBlock::Cache> blocks;
    };

    Backbone() = default;
    Backbone(const BackboneConfig& config, SeededRng& rng);

    RealMatrix forward(const RealMatrix& x, Cache* cache) const;
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    /// Base weights only (adapters excluded).
    void collect(ParamList& out);
    void collect_adapters(ParamList& out);

    void freeze();
    /// Adds rank-r adapters to the query and value projections of every block.
    void attach_adapters(int rank, double sigma_init, SeededRng& rng);
    /// Quantizes every projection matrix. kLoftq initializes the q/v adapters
    /// from the alternating fit; kNf4 keeps their fresh initialization.
    void quantize(QuantMode mode, int bits = 4, int loftq_iters = 5);

    /// Every weight matrix of the blocks, in a fixed order.
    std::vector<Linear*> linears();
    /// FNV-1a over base values and quantized indices.
    std::uint64_t fingerprint() const;
};

struct ModelConfig {
    int n_t = 16;
    int users = 4;
    int subcarriers = 8;
    int t1 = 16;
    int t2 = 4;
    int l0 = 8;
    int patch = 4;
    int se_blocks = 2;
    int se_reduction = 4;
    int encoder_blocks = 3;
    int encoder_heads = 4;
    int hidden = 256;
    int vocab = 4096;
    BackboneConfig backbone;

    int d_model() const { return backbone.d_model; }
    int cp_patches() const { return (t1 + patch - 1) / patch; }
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct EncoderPre {
    std::vector<EncoderBlock> blocks;
    Linear proj;

    struct Cache {
        std::vector<EncoderBlock::Cache> blocks;
        Linear::Cache proj;
    };

    EncoderPre() = default;
    EncoderPre(const ModelConfig& c, SeededRng& rng);

    /// K x 2N_T -> K x d_model.
    RealMatrix forward(const RealMatrix& h, Cache* cache) const;
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

struct EncoderDet {
    int users = 0;
    Mlp channel_mlp;
    Mlp signal_mlp;
    Linear proj;

    struct Cache {
        Mlp::Cache channel;
        Mlp::Cache signal;
        Linear::Cache proj;
        Eigen::Index slots = 0;
    };

    EncoderDet() = default;
    EncoderDet(const ModelConfig& c, SeededRng& rng);

    /// (K x 2N_T, L0 x 2N_T) -> (1 + L0) x d_model; row 0 is the channel token.
    RealMatrix forward(const RealMatrix& h, const RealMatrix& y, Cache* cache) const;
    /// Returns the gradients for (h, y).
    std::pair<RealMatrix, RealMatrix> backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

/// Squeeze-excitation gate over patches: X * sigmoid(up(gelu(down(mean_rows(X))))).
struct SeBlock {
    Linear down;
    Linear up;

    struct Cache {
        RealMatrix x;
        Linear::Cache cd, cu;
        RealMatrix pre;
        RealMatrix gate;
    };

    SeBlock() = default;
    SeBlock(int channels, int reduction, SeededRng& rng, const std::string& name);

    RealMatrix forward(const RealMatrix& x, Cache* cache) const;
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

struct EncoderCp {
    int patch = 4;
    std::vector<SeBlock> blocks;
    Linear proj;
    Param pos;

    struct Cache {
        std::vector<SeBlock::Cache> blocks;
        Linear::Cache proj;
    };

    EncoderCp() = default;
    EncoderCp(const ModelConfig& c, SeededRng& rng);

    struct Output {
        RealMatrix tokens;
        prediction::NormStats stats;
    };
    /// Normalizes, patchifies, then runs the gate stack. T1 x 2M -> ceil(T1/N) x d_model.
    Output forward(const RealMatrix& x, Cache* cache) const;
    /// Same path on an input that is already normalized.
    RealMatrix forward_normalized(const RealMatrix& xn, Cache* cache) const;
    /// Gradient w.r.t. the patchified normalized input.
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

struct DecoderPre {
    Mlp mlp;

    struct Cache {
        Mlp::Cache mlp;
        RealMatrix raw;   // K x 2, before softplus
        RealMatrix pos;   // K x 2, after softplus
    };

    struct Output {
        RealMatrix positive;           // K x 2: (lambda, p) before budget scaling
        precoding::PowerParams params; // scaled to p_max
    };

    DecoderPre() = default;
    DecoderPre(const ModelConfig& c, SeededRng& rng);

    Output forward(const RealMatrix& tokens, double p_max, Cache* cache) const;
    /// dL/d(positive outputs) -> dL/d(tokens).
    RealMatrix backward_positive(const RealMatrix& dpos, const Cache& cache);
    /// dL/d(scaled lambda, p) chained through the budget scaling.
    RealMatrix backward_scaled(const RealVector& dlambda, const RealVector& dp, double p_max, const Cache& cache);
    void collect(ParamList& out);
};

/// Jacobian-vector product of s = p_max * v / sum(v).
RealVector scale_backward(const RealVector& v, const RealVector& ds, double p_max);

struct DecoderDet {
    int users = 0;
    Mlp mlp;

    struct Cache {
        Mlp::Cache mlp;
        Eigen::Index tokens = 0;
    };

    DecoderDet() = default;
    DecoderDet(const ModelConfig& c, SeededRng& rng);

    /// Drops the channel token; each slot token maps to 2K outputs
    /// ordered (Re x_1, Im x_1, Re x_2, ...). Result is L0 x 2K.
    RealMatrix forward(const RealMatrix& tokens, Cache* cache) const;
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

struct DecoderCp {
    int t2 = 0;
    int width = 0;  // 2M
    Mlp mlp;

    struct Cache {
        Mlp::Cache mlp;
        Eigen::Index tokens = 0;
        double sigma = 1.0;
    };

    DecoderCp() = default;
    DecoderCp(const ModelConfig& c, SeededRng& rng);

    /// Flattened tokens -> T2 x 2M, then de-normalized with `stats`.
    RealMatrix forward(const RealMatrix& tokens, const prediction::NormStats& stats, Cache* cache) const;
    RealMatrix backward(const RealMatrix& dy, const Cache& cache);
    void collect(ParamList& out);
};

/// T2 x 2M (real block then imaginary block) viewed as T2 x M x 2.
std::vector<std::array<double, 2>> as_complex_pairs(const RealMatrix& x, int t, int m);

enum class TaskId { kCp = 0, kDet = 1, kPre = 2 };
inline constexpr std::array<TaskId, 3> kAllTasks = {TaskId::kCp, TaskId::kDet, TaskId::kPre};
const char* to_string(TaskId t);
TaskId parse_task(const std::string& s);

struct TaskSpec {
    TaskId task = TaskId::kCp;
    std::string identifier;
    std::string description;
    std::string instruction;
    std::vector<int> tokens;

    std::string prompt() const { return identifier + " " + description + " " + instruction; }
};

std::vector<std::string> split_words(const std::string& text);
std::uint64_t fnv1a64(const std::string& s);
std::vector<int> tokenize(const std::string& text, int vocab);

/// The three built-in task prompts with token ids filled in.
std::vector<TaskSpec> default_registry(int vocab);

struct PromptEmbedder {
    Param table;

    PromptEmbedder() = default;
    PromptEmbedder(int vocab, int d, SeededRng& rng);

    RealMatrix forward(const std::vector<int>& ids) const;
    void backward(const std::vector<int>& ids, const RealMatrix& dy);
    void collect(ParamList& out);
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    int checked = 0;
};

/// Central differences (step `step`) on up to `samples` sampled coordinates of
/// the trainable parameters, against the gradients left by `backward` (which
/// must zero and refill them). Frozen parameters are skipped.
GradCheckResult grad_check(const std::function<double()>& loss, const std::function<void()>& backward,
                           const ParamList& params, SeededRng& rng, int samples = 200, double step = 1e-5);

/// |a - n| / max(|a|, |n|, 1e-5).
double relative_error(double analytic, double numeric);

/// Checkpoint layout: magic "PHYMTCKPT1", u64 LE manifest length, JSON
/// manifest, float64 LE values of every parameter listed in the manifest,
/// then one section per quantized matrix: u8 bits, float64 sigma, packed
/// 4-bit indices.
struct CheckpointData {
    nlohmann::json manifest;
    std::vector<RealMatrix> values;
    std::vector<lora::QuantizedMatrix> quantized;
};

/// Every entry of `params` gets a payload; quantized weights are passed
/// separately and should not appear in `params`.
void write_checkpoint(const std::filesystem::path& path, nlohmann::json manifest, const ParamList& params,
                      const std::vector<std::pair<std::string, const lora::QuantizedMatrix*>>& quantized);
CheckpointData read_checkpoint(const std::filesystem::path& path);

}  // namespace phymt::nn
