#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bafo/attributes.hpp"
#include "bafo/dataset.hpp"
#include "bafo/layers.hpp"
#include "bafo/rng.hpp"
#include "bafo/tape.hpp"
#include "bafo/tensor.hpp"

namespace bafo {

struct CvaeConfig {
    int latent_dim = 48;
    int image_side = 56;   // 56 for face-scale data, 28 for synthetic runs
    int batch_size = 32;
    int epochs = 20;
    double lr = 1e-3;
    double beta = 1.0;     // KL weight; raising it pushes the latent toward
                           // the prior and the decoder toward the labels
    std::uint64_t seed = 1;
    NumericMode numeric_mode = NumericMode::f32;

    void validate() const;
};

// Encoder -> (mu, logvar) -> sampled z -> [z ; labels] -> decoder. The
// labels enter after sampling only; no encoder layer ever sees them, which
// is what keeps the latent code blind to the concealed attributes.
struct CvaeModel {
    std::vector<LayerSpec> encoder_specs;
    std::vector<LayerSpec> decoder_specs;
    ParamStore params;
    CvaeConfig config;
    int attr_dim = kAttrDim;     // 0 builds the plain-autoencoder baseline
    std::uint32_t format_version = 1;
    Shape decoder_feature_shape; // [C,H,W] the first decoder dense maps onto

    int latent_dim() const { return config.latent_dim; }
    int image_side() const { return config.image_side; }
    double beta() const { return config.beta; }

    // SHA-256 of the canonical serialization; identifies the exact weights.
    std::array<std::uint8_t, 32> fingerprint() const;
};

// Builds specs and He/Xavier-initialized parameters for the given config.
// `base_channels` scales every conv width; 32 is the production size, small
// values make gradient-check sized models.
CvaeModel make_cvae_model(const CvaeConfig& config, int base_channels = 32,
                          int attr_dim = kAttrDim);

struct EncodeOut {
    Tensor mu;      // [N, d]
    Tensor logvar;  // [N, d]
};

// Deterministic map from pixels to the Gaussian posterior parameters. The
// attributes are not an input, by construction.
EncodeOut encode(const CvaeModel& model, const Tensor& images);

// z = mu + exp(logvar/2) * eps, eps ~ N(0, I) from the seeded sampler.
Tensor reparameterize(const Tensor& mu, const Tensor& logvar, Pcg32& rng);
Tensor reparameterize_with_eps(const Tensor& mu, const Tensor& logvar,
                               const Tensor& eps);

// Decodes one latent vector [d] under the given attributes to [1,3,S,S].
Tensor decode(const CvaeModel& model, const Tensor& z,
              const AttributeVector& attrs);
// Batch variant: zs is [N,d], attr_rows is [N,attr_dim].
Tensor decode_batch(const CvaeModel& model, const Tensor& zs,
                    const Tensor& attr_rows);

struct LossValues {
    double total = 0.0;
    double recon = 0.0;
    double kl = 0.0;
};

// recon = sum of squared pixel errors (mean over batch);
// kl    = -1/2 sum_j (1 + logvar_j - mu_j^2 - exp(logvar_j)) (mean over batch);
// total = recon + beta * kl.
LossValues cvae_loss(const Tensor& recon, const Tensor& target,
                     const Tensor& mu, const Tensor& logvar, double beta);

struct LossVars {
    Var total, recon, kl;
};
LossVars cvae_loss_vars(const Var& recon, const Var& target, const Var& mu,
                        const Var& logvar, double beta);

// One full training forward pass recorded on a tape: encode, sample with the
// given noise, concatenate the attributes, decode, take the loss. `params`
// may be leaves (training) or constants (evaluation). attr_rows is ignored
// when the model has no attribute input.
struct ForwardVars {
    Var mu, logvar, z, recon;
    LossVars loss;
};
ForwardVars cvae_forward_vars(const CvaeModel& model, const ParamVars& params,
                              const Tensor& images, const Tensor& attr_rows,
                              const Tensor& eps, double beta);

struct EpochStats {
    int epoch = 0;      // 1-based
    double recon = 0.0;
    double kl = 0.0;
    double total = 0.0;
};
using ProgressSink = std::function<void(const EpochStats&)>;

// Adam minibatch training, fully deterministic in config.seed (init,
// shuffling and noise draws all come from the seeded generator). Throws
// TrainingDivergedError as soon as a loss goes non-finite.
std::vector<EpochStats> train(CvaeModel& model,
                              std::span<const LabeledImage> data,
                              const CvaeConfig& config,
                              const ProgressSink& sink = nullptr);

// Stacks dataset pixels/attributes into batch tensors.
Tensor stack_pixels(std::span<const LabeledImage> items);
Tensor stack_attrs(std::span<const LabeledImage> items);
Tensor attrs_to_row(const AttributeVector& attrs);

std::string loss_history_csv(const std::vector<EpochStats>& history);

}  // namespace bafo
