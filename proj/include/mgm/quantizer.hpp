#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mgm/motion.hpp"
#include "mgm/nn/graph.hpp"

namespace mgm {

struct QuantizerConfig {
    int input_dim = 8;       // d
    int width = 32;          // hidden channels of the conv stacks
    int latent_dim = 8;      // d_c
    int codebook_size = 64;  // K
    int down_rate = 4;       // l, a power of two
    double beta = 0.25;      // commitment weight
    std::uint64_t init_seed = 1;

    std::string to_json() const;
    static QuantizerConfig from_json(const std::string& json);
};

// Index of the nearest codebook row for every latent row, lowest index on ties.
template <typename T>
std::vector<int> quantize(const nn::Matrix<T>& latents, const nn::Matrix<T>& codebook);

using MotionTokens = std::vector<int>;

// The three scalar terms of the VQ-VAE objective, each a mean squared error:
// reconstruction ||M - M^||, embedding ||sg(Z) - Z^||, commitment beta*||Z - sg(Z^)||.
struct VqLossTerms {
    double recon = 0;
    double embed = 0;
    double commit = 0;
    double total = 0;
};

template <typename T>
VqLossTerms vq_loss_terms(const nn::Matrix<T>& motion, const nn::Matrix<T>& recon, const nn::Matrix<T>& latents,
                          const nn::Matrix<T>& quantized, double beta);

// Temporal conv encoder (T x d -> T/l x d_c), learnable codebook, and a
// mirrored nearest-upsampling decoder.
template <typename T>
class VqVae {
public:
    explicit VqVae(const QuantizerConfig& config);
    VqVae(const VqVae&) = delete;
    VqVae& operator=(const VqVae&) = delete;
    VqVae(VqVae&&) = default;
    VqVae& operator=(VqVae&&) = default;

    const QuantizerConfig& config() const noexcept { return config_; }
    nn::ParameterStore<T>& params() noexcept { return params_; }
    const nn::ParameterStore<T>& params() const noexcept { return params_; }
    nn::Parameter<T>& codebook() noexcept { return *codebook_; }
    const nn::Matrix<T>& codebook_matrix() const noexcept { return codebook_->value; }

    // Right-pads by repeating the last frame up to a multiple of l.
    nn::Matrix<T> pad_frames(const nn::Matrix<T>& frames) const;

    nn::Var encode(nn::Graph<T>& g, nn::Var frames);
    nn::Var decode(nn::Graph<T>& g, nn::Var quantized);

    nn::Matrix<T> encode_latents(const nn::Matrix<T>& frames);
    nn::Matrix<T> decode_latents(const nn::Matrix<T>& quantized);

    // Builds the objective on `g` for one clip (padded internally, reconstruction
    // scored on the original frames) and returns the total as a graph scalar.
    nn::Var loss(nn::Graph<T>& g, const nn::Matrix<T>& frames, VqLossTerms& terms,
                 std::vector<int>* ids_out = nullptr, nn::Matrix<T>* latents_out = nullptr);

private:
    struct Conv {
        nn::Parameter<T>* weight;
        nn::Parameter<T>* bias;
        int kernel, stride, pad;
    };

    Conv add_conv(const std::string& name, int in, int out, int kernel, int stride, int pad, std::uint64_t& seed);
    nn::Var apply(nn::Graph<T>& g, const Conv& c, nn::Var x);

    QuantizerConfig config_;
    nn::ParameterStore<T> params_;
    std::vector<Conv> enc_, dec_;
    nn::Parameter<T>* codebook_ = nullptr;
    int stages_ = 0;
};

// Frozen float model plus the token-level operations everything downstream
// uses.
class MotionQuantizer {
public:
    explicit MotionQuantizer(const QuantizerConfig& config) : model_(config) {}
    explicit MotionQuantizer(VqVae<float> model) : model_(std::move(model)) {}

    const QuantizerConfig& config() const noexcept { return model_.config(); }
    VqVae<float>& model() noexcept { return model_; }
    const VqVae<float>& model() const noexcept { return model_; }

    int token_count(int num_frames) const;
    MotionTokens encode(const MotionSequence& motion) const;
    MotionSequence reconstruct(const MotionTokens& tokens, int num_frames, int fps) const;

    void save(const std::filesystem::path& path) const;
    static MotionQuantizer load(const std::filesystem::path& path);

private:
    mutable VqVae<float> model_;
};

struct VqTrainSchedule {
    int steps = 3000;
    int batch_size = 16;
    int window_frames = 64;      // random crop length (multiple of l)
    double lr = 2e-4;
    double warmup_lr = 0;        // 0 disables the high-lr warmup phase
    int warmup_steps = 0;
    int dead_code_steps = 256;   // reset codes unused this long; 0 disables
    int log_every = 50;
    std::uint64_t seed = 7;
};

struct VqLogRow {
    long step;
    VqLossTerms terms;
};

struct VqTrainResult {
    std::vector<VqLogRow> curve;
    long codes_reset = 0;
    std::vector<std::string> warnings;
};

VqTrainResult train_vqvae(const std::vector<MotionSequence>& dataset, MotionQuantizer& quantizer,
                          const VqTrainSchedule& schedule,
                          const std::function<void(const VqLogRow&)>& on_log = {});

std::string vq_curve_csv(const std::vector<VqLogRow>& curve);

// Mean per-element squared reconstruction error over a dataset.
double reconstruction_mse(const std::vector<MotionSequence>& dataset, const MotionQuantizer& quantizer);

// Mean per-feature variance of all frames in the dataset.
double dataset_variance(const std::vector<MotionSequence>& dataset);

}  // namespace mgm
