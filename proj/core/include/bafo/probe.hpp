#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bafo/cvae.hpp"
#include "bafo/dataset.hpp"
#include "bafo/layers.hpp"

namespace bafo {

enum class ProbeKind : std::uint8_t { Linear = 0, Mlp1 = 1 };
enum class ProbeTask : std::uint8_t {
    GenderBinary = 0,
    Race5 = 1,
    AgeRegression = 2,
};
// Per-feature standardization suits latent codes with heterogeneous scales;
// pixels share one natural scale, and amplifying low-variance background
// dimensions to unit variance would drown the glyph signal in noise.
enum class ProbeScaling : std::uint8_t { PerFeature = 0, Global = 1 };

// A small Adam-trained classifier/regressor used to measure how much
// attribute information a representation still carries. Inputs are
// standardized with statistics from its own training portion.
struct ProbeModel {
    ProbeKind kind = ProbeKind::Linear;
    ProbeTask task = ProbeTask::GenderBinary;
    ParamStore params;
    std::vector<LayerSpec> specs;
    Tensor feature_mean;  // [in_dim]
    Tensor feature_std;   // [in_dim]
    int in_dim = 0;
    int out_dim = 0;

    Tensor scores(const Tensor& inputs) const;          // [N, out_dim]
    std::vector<int> classify(const Tensor& inputs) const;
    std::vector<double> regress(const Tensor& inputs) const;
};

// Flattens a list of equally-shaped tensors into an [N, in_dim] matrix.
Tensor stack_features(const std::vector<Tensor>& inputs);

// Trains a probe with an internal 80/20 early-stopping split (best
// validation loss wins). Labels are class indices for classification tasks,
// normalized ages for regression. Requires at least 20 samples per class /
// 100 samples for regression.
ProbeModel train_probe(const std::vector<Tensor>& inputs,
                       const std::vector<double>& labels, ProbeTask task,
                       ProbeKind kind, std::uint64_t seed,
                       ProbeScaling scaling = ProbeScaling::PerFeature);

double probe_accuracy(const ProbeModel& probe, const Tensor& inputs,
                      const std::vector<double>& labels);
// RMSE/MAE in years (labels are normalized ages).
std::pair<double, double> probe_age_error_years(const ProbeModel& probe,
                                                const Tensor& inputs,
                                                const std::vector<double>& labels);

// --- leakage ---------------------------------------------------------------

struct LeakageScores {
    double gender_acc = 0.0;
    double race_acc = 0.0;
    double age_rmse_years = 0.0;
};

struct LeakageReport {
    int n_train = 0;
    int n_test = 0;
    std::uint64_t seed = 0;
    // Probes on held-out latents, in both concealment modes. The sampled
    // codes are what the method publishes conceptually (the noise is the
    // concealment mechanism); the mean codes are the deterministic
    // convenience variant and its scores expose whatever trace survives
    // training.
    LeakageScores sampled;
    LeakageScores mean;
    // Uninformed baselines.
    double gender_majority = 0.0;
    double race_majority = 0.0;
    double age_mean_rmse_years = 0.0;
    // The same probes on an architecture-matched plain autoencoder (same
    // specs and training budget, no attribute concatenation, KL retained).
    LeakageScores plain_sampled;
    LeakageScores plain_mean;

    std::string to_csv() const;
    std::string to_text() const;
};

// Conceals both dataset portions (mean mode and seeded sample mode), trains
// probes on the training latents and scores them on the test latents; then
// trains the plain-AE baseline with the model's own config and repeats the
// measurement.
LeakageReport leakage_report(const CvaeModel& model, const DatasetSplit& data,
                             std::uint64_t seed);

// Latent codes for a set of images, one row per image: posterior means, or
// seeded reparameterized samples.
Tensor mean_latents(const CvaeModel& model,
                    const std::vector<LabeledImage>& items);
Tensor sampled_latents(const CvaeModel& model,
                       const std::vector<LabeledImage>& items,
                       std::uint64_t seed);

// --- obedience ---------------------------------------------------------------

struct ObedienceRow {
    int target_age = 0;
    double rmse_years = 0.0;
    double mae_years = 0.0;
};

struct ObedienceReport {
    std::vector<ObedienceRow> rows;  // one per target age
    ObedienceRow average;            // arithmetic mean of the rows
    double gender_flip_rate = 0.0;   // reveals classified as requested gender
    double own_attrs_rmse_years = 0.0;  // revealing at original attributes
    double probe_self_rmse_years = 0.0; // the age probe's error on real images
    int n_test = 0;
    std::uint64_t seed = 0;

    std::string to_csv() const;
    std::string to_text() const;
};

// Trains image-space probes on original training images, then reveals every
// test record at each target age x gender {0,1} (origin held at the
// original) and reports probe-measured age RMSE/MAE per target plus the
// gender flip-rate.
ObedienceReport obedience_report(const CvaeModel& model,
                                 const DatasetSplit& data,
                                 const std::vector<int>& target_ages,
                                 std::uint64_t seed);

}  // namespace bafo
