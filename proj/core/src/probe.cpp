#include "bafo/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace bafo {

namespace {

constexpr int kProbeHidden = 64;
constexpr int kProbeMaxEpochs = 120;
constexpr int kProbePatience = 15;
constexpr int kProbeBatch = 64;
constexpr double kProbeLr = 1e-3;

int class_count(ProbeTask task) {
    switch (task) {
        case ProbeTask::GenderBinary: return 2;
        case ProbeTask::Race5: return kOriginClasses;
        case ProbeTask::AgeRegression: return 1;
    }
    return 1;
}

Tensor standardize(const Tensor& x, const Tensor& mean, const Tensor& std_dev) {
    std::int64_t n = x.dim(0), d = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(n * d));
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t c = 0; c < d; ++c) {
            out[r * d + c] = (x.at(r * d + c) - mean.at(c)) / std_dev.at(c);
        }
    }
    return Tensor::from_values(x.shape(), out, x.mode());
}

Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    std::int64_t d = x.dim(1);
    std::vector<double> out(rows.size() * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::int64_t c = 0; c < d; ++c) {
            out[i * d + c] = x.at(static_cast<std::int64_t>(rows[i]) * d + c);
        }
    }
    return Tensor::from_values({static_cast<std::int64_t>(rows.size()), d}, out,
                               x.mode());
}

Tensor onehot_rows(const std::vector<double>& labels,
                   const std::vector<std::size_t>& rows, int classes,
                   NumericMode mode) {
    std::vector<double> out(rows.size() * static_cast<std::size_t>(classes), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        int c = static_cast<int>(std::lround(labels[rows[i]]));
        out[i * classes + c] = 1.0;
    }
    return Tensor::from_values(
        {static_cast<std::int64_t>(rows.size()), classes}, out, mode);
}

Tensor target_column(const std::vector<double>& labels,
                     const std::vector<std::size_t>& rows, NumericMode mode) {
    std::vector<double> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels[rows[i]];
    return Tensor::from_values({static_cast<std::int64_t>(rows.size()), 1}, out,
                               mode);
}

Var probe_forward(const std::vector<LayerSpec>& specs, const ParamVars& params,
                  Var x) {
    for (const LayerSpec& spec : specs) x = forward_layer(spec, params, x);
    return x;
}

}  // namespace

Tensor stack_features(const std::vector<Tensor>& inputs) {
    if (inputs.empty()) throw ConfigError("no probe inputs");
    std::int64_t d = inputs.front().size();
    std::vector<double> data(inputs.size() * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i].size() != d) {
            throw DimensionError("probe inputs disagree in size");
        }
        std::vector<double> v = inputs[i].to_vector();
        std::copy(v.begin(), v.end(), data.begin() + i * d);
    }
    return Tensor::from_values({static_cast<std::int64_t>(inputs.size()), d},
                               data);
}

Tensor ProbeModel::scores(const Tensor& inputs) const {
    if (inputs.rank() != 2 || inputs.dim(1) != in_dim) {
        throw DimensionError("probe expects [N," + std::to_string(in_dim) +
                             "], got " + shape_to_string(inputs.shape()));
    }
    Tensor x = standardize(inputs.to(feature_mean.mode()), feature_mean,
                           feature_std);
    ParamVars vars = ParamVars::constants(params);
    return probe_forward(specs, vars, Var::constant(x)).value();
}

std::vector<int> ProbeModel::classify(const Tensor& inputs) const {
    Tensor s = scores(inputs);
    std::vector<int> out(static_cast<std::size_t>(s.dim(0)));
    for (std::int64_t r = 0; r < s.dim(0); ++r) {
        int best = 0;
        for (int c = 1; c < out_dim; ++c) {
            if (s.at(r * out_dim + c) > s.at(r * out_dim + best)) best = c;
        }
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

std::vector<double> ProbeModel::regress(const Tensor& inputs) const {
    Tensor s = scores(inputs);
    std::vector<double> out(static_cast<std::size_t>(s.dim(0)));
    for (std::int64_t r = 0; r < s.dim(0); ++r) {
        out[static_cast<std::size_t>(r)] = s.at(r);
    }
    return out;
}

ProbeModel train_probe(const std::vector<Tensor>& inputs,
                       const std::vector<double>& labels, ProbeTask task,
                       ProbeKind kind, std::uint64_t seed,
                       ProbeScaling scaling) {
    if (inputs.size() != labels.size()) {
        throw ContractError("probe inputs and labels differ in length");
    }
    int classes = class_count(task);
    if (task == ProbeTask::AgeRegression) {
        if (inputs.size() < 100) {
            throw ConfigError("age regression probe needs at least 100 samples, got " +
                              std::to_string(inputs.size()));
        }
    } else {
        std::map<int, int> counts;
        for (double l : labels) counts[static_cast<int>(std::lround(l))]++;
        for (int c = 0; c < classes; ++c) {
            if (counts[c] < 20) {
                throw ConfigError("probe class " + std::to_string(c) +
                                  " has fewer than 20 samples");
            }
        }
    }

    Tensor all = stack_features(inputs);
    std::int64_t n = all.dim(0), in_dim = all.dim(1);

    // Standardization statistics from the whole probe training set. A floor
    // on the deviation keeps constant features harmless.
    std::vector<double> mean(static_cast<std::size_t>(in_dim), 0.0);
    std::vector<double> sd(static_cast<std::size_t>(in_dim), 0.0);
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t c = 0; c < in_dim; ++c) mean[c] += all.at(r * in_dim + c);
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t c = 0; c < in_dim; ++c) {
            double dev = all.at(r * in_dim + c) - mean[c];
            sd[c] += dev * dev;
        }
    }
    if (scaling == ProbeScaling::PerFeature) {
        for (double& s : sd) {
            s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-6);
        }
    } else {
        double total = 0.0;
        for (double s : sd) total += s;
        double global_sd = std::max(
            std::sqrt(total / static_cast<double>(n * in_dim)), 1e-6);
        for (double& s : sd) s = global_sd;
    }

    ProbeModel probe;
    probe.kind = kind;
    probe.task = task;
    probe.in_dim = static_cast<int>(in_dim);
    probe.out_dim = classes;
    probe.feature_mean = Tensor::from_values({in_dim}, mean);
    probe.feature_std = Tensor::from_values({in_dim}, sd);
    if (kind == ProbeKind::Linear) {
        probe.specs = {LayerSpec::dense("probe.out", in_dim, classes,
                                        Activation::Linear)};
    } else {
        probe.specs = {
            LayerSpec::dense("probe.hidden", in_dim, kProbeHidden,
                             Activation::Relu),
            LayerSpec::dense("probe.out", kProbeHidden, classes,
                             Activation::Linear),
        };
    }
    probe.params = init_params(probe.specs, seed + 1);

    // 80/20 early-stopping split.
    Pcg32 rng(seed);
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
        std::size_t j = rng.next_below(static_cast<std::uint32_t>(i));
        std::swap(order[i - 1], order[j]);
    }
    std::size_t n_val = std::max<std::size_t>(1, order.size() / 5);
    std::vector<std::size_t> val_rows(order.begin(), order.begin() + n_val);
    std::vector<std::size_t> train_rows(order.begin() + n_val, order.end());

    Tensor x_std = standardize(all, probe.feature_mean, probe.feature_std);
    Tensor x_val = select_rows(x_std, val_rows);
    NumericMode mode = x_std.mode();
    std::vector<double> y_val;
    for (std::size_t r : val_rows) y_val.push_back(labels[r]);

    auto val_loss = [&](const ParamStore& params) {
        ParamVars vars = ParamVars::constants(params);
        Tensor s = probe_forward(probe.specs, vars, Var::constant(x_val)).value();
        if (task == ProbeTask::AgeRegression) {
            double se = 0.0;
            for (std::int64_t r = 0; r < s.dim(0); ++r) {
                double d = s.at(r) - y_val[static_cast<std::size_t>(r)];
                se += d * d;
            }
            return se / static_cast<double>(s.dim(0));
        }
        double nll = 0.0;
        for (std::int64_t r = 0; r < s.dim(0); ++r) {
            double mx = s.at(r * classes);
            for (int c = 1; c < classes; ++c) {
                mx = std::max(mx, s.at(r * classes + c));
            }
            double denom = 0.0;
            for (int c = 0; c < classes; ++c) {
                denom += std::exp(s.at(r * classes + c) - mx);
            }
            int y = static_cast<int>(std::lround(y_val[static_cast<std::size_t>(r)]));
            nll -= s.at(r * classes + y) - mx - std::log(denom);
        }
        return nll / static_cast<double>(s.dim(0));
    };

    ParamStore best_params = probe.params;
    double best_loss = val_loss(probe.params);
    int since_best = 0;
    std::vector<std::size_t> epoch_order = train_rows;
    for (int epoch = 0; epoch < kProbeMaxEpochs; ++epoch) {
        for (std::size_t i = epoch_order.size(); i > 1; --i) {
            std::size_t j = rng.next_below(static_cast<std::uint32_t>(i));
            std::swap(epoch_order[i - 1], epoch_order[j]);
        }
        for (std::size_t start = 0; start < epoch_order.size();
             start += kProbeBatch) {
            std::size_t end = std::min(epoch_order.size(),
                                       start + static_cast<std::size_t>(kProbeBatch));
            std::vector<std::size_t> batch(epoch_order.begin() + start,
                                           epoch_order.begin() + end);
            Tensor x_batch = select_rows(x_std, batch);
            Tensor y_batch = task == ProbeTask::AgeRegression
                                 ? target_column(labels, batch, mode)
                                 : onehot_rows(labels, batch, classes, mode);
            Tape tape;
            ParamVars vars = ParamVars::leaves(tape, probe.params);
            Var out = probe_forward(probe.specs, vars, Var::constant(x_batch));
            Var loss;
            if (task == ProbeTask::AgeRegression) {
                Var diff = sub(out, Var::constant(y_batch));
                loss = scale(sum(mul(diff, diff)),
                             1.0 / static_cast<double>(x_batch.dim(0)));
            } else {
                loss = softmax_cross_entropy(out, Var::constant(y_batch));
            }
            auto grads = vars.grads_by_name(tape.backward(loss));
            probe.params = adam_step(probe.params, grads, kProbeLr, 0.9, 0.999,
                                     1e-8);
        }
        double metric = val_loss(probe.params);
        if (metric < best_loss - 1e-12) {
            best_loss = metric;
            best_params = probe.params;
            since_best = 0;
        } else if (++since_best >= kProbePatience) {
            break;
        }
    }
    probe.params = best_params;
    return probe;
}

double probe_accuracy(const ProbeModel& probe, const Tensor& inputs,
                      const std::vector<double>& labels) {
    std::vector<int> pred = probe.classify(inputs);
    int hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == static_cast<int>(std::lround(labels[i]))) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::pair<double, double> probe_age_error_years(
    const ProbeModel& probe, const Tensor& inputs,
    const std::vector<double>& labels) {
    std::vector<double> pred = probe.regress(inputs);
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double err = (pred[i] - labels[i]) * kMaxAge;
        se += err * err;
        ae += std::abs(err);
    }
    double n = static_cast<double>(pred.size());
    return {std::sqrt(se / n), ae / n};
}

// --- leakage -----------------------------------------------------------------

Tensor mean_latents(const CvaeModel& model,
                    const std::vector<LabeledImage>& items) {
    Tensor batch = stack_pixels(items);
    return encode(model, batch).mu;
}

Tensor sampled_latents(const CvaeModel& model,
                       const std::vector<LabeledImage>& items,
                       std::uint64_t seed) {
    Tensor batch = stack_pixels(items);
    EncodeOut enc = encode(model, batch);
    Pcg32 rng(seed);
    return reparameterize(enc.mu, enc.logvar, rng);
}

namespace {

struct AttrLabels {
    std::vector<double> gender;
    std::vector<double> race;
    std::vector<double> age_norm;
};

AttrLabels collect_labels(const std::vector<LabeledImage>& items) {
    AttrLabels out;
    for (const LabeledImage& img : items) {
        out.gender.push_back(img.attrs.gender);
        int race = 0;
        for (int i = 1; i < kOriginClasses; ++i) {
            if (img.attrs.origin[i] > img.attrs.origin[race]) race = i;
        }
        out.race.push_back(race);
        out.age_norm.push_back(img.attrs.age_norm);
    }
    return out;
}

std::vector<Tensor> rows_of(const Tensor& matrix) {
    std::vector<Tensor> rows;
    std::int64_t n = matrix.dim(0), d = matrix.dim(1);
    rows.reserve(static_cast<std::size_t>(n));
    for (std::int64_t r = 0; r < n; ++r) {
        std::vector<double> v(static_cast<std::size_t>(d));
        for (std::int64_t c = 0; c < d; ++c) v[c] = matrix.at(r * d + c);
        rows.push_back(Tensor::from_values({d}, v, matrix.mode()));
    }
    return rows;
}

double majority_accuracy(const std::vector<double>& train_labels,
                         const std::vector<double>& test_labels) {
    std::map<int, int> counts;
    for (double l : train_labels) counts[static_cast<int>(std::lround(l))]++;
    int majority = counts.begin()->first;
    for (const auto& [cls, cnt] : counts) {
        if (cnt > counts[majority]) majority = cls;
    }
    int hits = 0;
    for (double l : test_labels) {
        if (static_cast<int>(std::lround(l)) == majority) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(test_labels.size());
}

double mean_predictor_rmse_years(const std::vector<double>& train_age,
                                 const std::vector<double>& test_age) {
    double mean = 0.0;
    for (double a : train_age) mean += a;
    mean /= static_cast<double>(train_age.size());
    double se = 0.0;
    for (double a : test_age) {
        double err = (a - mean) * kMaxAge;
        se += err * err;
    }
    return std::sqrt(se / static_cast<double>(test_age.size()));
}

void check_disjoint(const DatasetSplit& data) {
    std::set<std::string> train_ids;
    for (const LabeledImage& img : data.train) train_ids.insert(img.source_id);
    for (const LabeledImage& img : data.test) {
        if (train_ids.count(img.source_id)) {
            throw ContractError("train/test overlap on source_id " +
                                img.source_id);
        }
    }
}

// MLP probes attack the latents: anything even nonlinearly decodable from
// the held-out codes counts as leakage.
LeakageScores score_latents(const Tensor& train_z, const Tensor& test_z,
                            const AttrLabels& train_labels,
                            const AttrLabels& test_labels, std::uint64_t seed) {
    std::vector<Tensor> train_rows = rows_of(train_z);
    LeakageScores out{};
    ProbeModel gender = train_probe(train_rows, train_labels.gender,
                                    ProbeTask::GenderBinary, ProbeKind::Mlp1,
                                    seed);
    out.gender_acc = probe_accuracy(gender, test_z, test_labels.gender);
    ProbeModel race = train_probe(train_rows, train_labels.race,
                                  ProbeTask::Race5, ProbeKind::Mlp1, seed + 7);
    out.race_acc = probe_accuracy(race, test_z, test_labels.race);
    ProbeModel age = train_probe(train_rows, train_labels.age_norm,
                                 ProbeTask::AgeRegression, ProbeKind::Mlp1,
                                 seed + 13);
    out.age_rmse_years =
        probe_age_error_years(age, test_z, test_labels.age_norm).first;
    return out;
}

struct ModelLeakage {
    LeakageScores sampled;
    LeakageScores mean;
};

ModelLeakage measure_model(const CvaeModel& model, const DatasetSplit& data,
                           const AttrLabels& train_labels,
                           const AttrLabels& test_labels, std::uint64_t seed) {
    ModelLeakage out;
    Tensor train_s = sampled_latents(model, data.train, seed ^ 0x5a17);
    Tensor test_s = sampled_latents(model, data.test, seed ^ 0xc3e5);
    out.sampled = score_latents(train_s, test_s, train_labels, test_labels,
                                seed);
    Tensor train_m = mean_latents(model, data.train);
    Tensor test_m = mean_latents(model, data.test);
    out.mean = score_latents(train_m, test_m, train_labels, test_labels, seed);
    return out;
}

}  // namespace

LeakageReport leakage_report(const CvaeModel& model, const DatasetSplit& data,
                             std::uint64_t seed) {
    if (data.train.empty() || data.test.empty()) {
        throw ConfigError("leakage report needs non-empty train and test sets");
    }
    check_disjoint(data);

    AttrLabels train_labels = collect_labels(data.train);
    AttrLabels test_labels = collect_labels(data.test);

    LeakageReport report;
    report.n_train = static_cast<int>(data.train.size());
    report.n_test = static_cast<int>(data.test.size());
    report.seed = seed;

    ModelLeakage cvae = measure_model(model, data, train_labels, test_labels,
                                      seed);
    report.sampled = cvae.sampled;
    report.mean = cvae.mean;

    report.gender_majority = majority_accuracy(train_labels.gender,
                                               test_labels.gender);
    report.race_majority = majority_accuracy(train_labels.race,
                                             test_labels.race);
    report.age_mean_rmse_years = mean_predictor_rmse_years(
        train_labels.age_norm, test_labels.age_norm);

    // Architecture-matched plain autoencoder: identical widths, training
    // budget and seed, no attribute concatenation, KL retained. Shows the
    // leakage the capacity alone would produce.
    int base_channels = static_cast<int>(model.encoder_specs.front().out);
    CvaeModel plain = make_cvae_model(model.config, base_channels, 0);
    train(plain, data.train, plain.config);
    ModelLeakage base = measure_model(plain, data, train_labels, test_labels,
                                      seed);
    report.plain_sampled = base.sampled;
    report.plain_mean = base.mean;
    return report;
}

std::string LeakageReport::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "metric,value\n";
    os << "n_train," << n_train << "\n";
    os << "n_test," << n_test << "\n";
    os << "seed," << seed << "\n";
    os << "gender_probe_acc," << sampled.gender_acc << "\n";
    os << "race_probe_acc," << sampled.race_acc << "\n";
    os << "age_probe_rmse_years," << sampled.age_rmse_years << "\n";
    os << "mean_mode_gender_probe_acc," << mean.gender_acc << "\n";
    os << "mean_mode_race_probe_acc," << mean.race_acc << "\n";
    os << "mean_mode_age_probe_rmse_years," << mean.age_rmse_years << "\n";
    os << "gender_majority_acc," << gender_majority << "\n";
    os << "race_majority_acc," << race_majority << "\n";
    os << "age_mean_predictor_rmse_years," << age_mean_rmse_years << "\n";
    os << "plain_ae_gender_probe_acc," << plain_sampled.gender_acc << "\n";
    os << "plain_ae_race_probe_acc," << plain_sampled.race_acc << "\n";
    os << "plain_ae_age_probe_rmse_years," << plain_sampled.age_rmse_years
       << "\n";
    os << "plain_ae_mean_mode_gender_probe_acc," << plain_mean.gender_acc
       << "\n";
    os << "plain_ae_mean_mode_race_probe_acc," << plain_mean.race_acc << "\n";
    os << "plain_ae_mean_mode_age_probe_rmse_years,"
       << plain_mean.age_rmse_years << "\n";
    return os.str();
}

std::string LeakageReport::to_text() const {
    char buf[512];
    std::ostringstream os;
    os << "Latent leakage (held-out MLP probes, n_train=" << n_train
       << ", n_test=" << n_test << ", seed=" << seed << ")\n";
    std::snprintf(buf, sizeof(buf), "%-24s %12s %12s %12s\n", "attribute",
                  "concealed", "baseline", "plain-AE");
    os << buf;
    auto row = [&](const char* name, double a, double b, double c,
                   bool percent) {
        if (percent) {
            std::snprintf(buf, sizeof(buf), "%-24s %11.1f%% %11.1f%% %11.1f%%\n",
                          name, 100 * a, 100 * b, 100 * c);
        } else {
            std::snprintf(buf, sizeof(buf), "%-24s %10.2fy %10.2fy %10.2fy\n",
                          name, a, b, c);
        }
        os << buf;
    };
    row("gender accuracy", sampled.gender_acc, gender_majority,
        plain_sampled.gender_acc, true);
    row("origin accuracy", sampled.race_acc, race_majority,
        plain_sampled.race_acc, true);
    row("age RMSE", sampled.age_rmse_years, age_mean_rmse_years,
        plain_sampled.age_rmse_years, false);
    row("gender acc (mean mode)", mean.gender_acc, gender_majority,
        plain_mean.gender_acc, true);
    row("origin acc (mean mode)", mean.race_acc, race_majority,
        plain_mean.race_acc, true);
    row("age RMSE (mean mode)", mean.age_rmse_years, age_mean_rmse_years,
        plain_mean.age_rmse_years, false);
    return os.str();
}

// --- obedience -----------------------------------------------------------------

ObedienceReport obedience_report(const CvaeModel& model,
                                 const DatasetSplit& data,
                                 const std::vector<int>& target_ages,
                                 std::uint64_t seed) {
    if (data.train.empty() || data.test.empty()) {
        throw ConfigError("obedience report needs non-empty train and test sets");
    }
    if (target_ages.empty()) {
        throw ConfigError("obedience report needs at least one target age");
    }
    check_disjoint(data);

    AttrLabels train_labels = collect_labels(data.train);
    AttrLabels test_labels = collect_labels(data.test);

    // Image-space probes learned from the original training images.
    std::vector<Tensor> train_pixels;
    train_pixels.reserve(data.train.size());
    for (const LabeledImage& img : data.train) train_pixels.push_back(img.pixels);
    ProbeModel age_probe = train_probe(train_pixels, train_labels.age_norm,
                                       ProbeTask::AgeRegression, ProbeKind::Mlp1,
                                       seed, ProbeScaling::Global);
    ProbeModel gender_probe = train_probe(train_pixels, train_labels.gender,
                                          ProbeTask::GenderBinary,
                                          ProbeKind::Mlp1, seed + 3,
                                          ProbeScaling::Global);

    std::vector<Tensor> test_pixels;
    test_pixels.reserve(data.test.size());
    for (const LabeledImage& img : data.test) test_pixels.push_back(img.pixels);
    Tensor test_matrix = stack_features(test_pixels);

    ObedienceReport report;
    report.n_test = static_cast<int>(data.test.size());
    report.seed = seed;
    report.probe_self_rmse_years =
        probe_age_error_years(age_probe, test_matrix, test_labels.age_norm).first;

    // One latent per test record, mean mode.
    Tensor test_z = mean_latents(model, data.test);
    std::int64_t n = test_z.dim(0);

    auto reveal_all = [&](double age_norm, double gender,
                          bool keep_own_age) {
        std::vector<double> attr_rows(static_cast<std::size_t>(n) * kAttrDim);
        for (std::int64_t i = 0; i < n; ++i) {
            AttributeVector a = data.test[static_cast<std::size_t>(i)].attrs;
            if (!keep_own_age) {
                a.age_norm = age_norm;
                a.gender = gender;
            }
            auto arr = a.to_array();
            std::copy(arr.begin(), arr.end(),
                      attr_rows.begin() + static_cast<std::size_t>(i) * kAttrDim);
        }
        Tensor rows = Tensor::from_values({n, kAttrDim}, attr_rows);
        Tensor images = decode_batch(model, test_z, rows);
        // Flatten [N,3,S,S] into probe features.
        std::vector<double> flat = images.to_vector();
        return Tensor::from_values({n, images.size() / n}, flat, images.mode());
    };

    double flips = 0.0, flip_total = 0.0;
    for (int age : target_ages) {
        double age_norm = std::clamp(static_cast<double>(age) / kMaxAge, 0.0, 1.0);
        double se = 0.0, ae = 0.0;
        for (int g = 0; g <= 1; ++g) {
            Tensor revealed = reveal_all(age_norm, static_cast<double>(g), false);
            std::vector<double> ages = age_probe.regress(revealed);
            for (double a : ages) {
                double err = (a - age_norm) * kMaxAge;
                se += err * err;
                ae += std::abs(err);
            }
            std::vector<int> genders = gender_probe.classify(revealed);
            for (int p : genders) {
                flips += (p == g) ? 1.0 : 0.0;
                flip_total += 1.0;
            }
        }
        ObedienceRow row;
        row.target_age = age;
        double count = static_cast<double>(2 * n);
        row.rmse_years = std::sqrt(se / count);
        row.mae_years = ae / count;
        report.rows.push_back(row);
    }
    report.gender_flip_rate = flips / flip_total;

    double rmse_sum = 0.0, mae_sum = 0.0;
    for (const ObedienceRow& row : report.rows) {
        rmse_sum += row.rmse_years;
        mae_sum += row.mae_years;
    }
    report.average.target_age = -1;
    report.average.rmse_years = rmse_sum / static_cast<double>(report.rows.size());
    report.average.mae_years = mae_sum / static_cast<double>(report.rows.size());

    // Reconstruction case: reveal at each record's own attributes.
    Tensor own = reveal_all(0.0, 0.0, true);
    std::vector<double> own_ages = age_probe.regress(own);
    double se = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double err = (own_ages[static_cast<std::size_t>(i)] -
                      test_labels.age_norm[static_cast<std::size_t>(i)]) *
                     kMaxAge;
        se += err * err;
    }
    report.own_attrs_rmse_years = std::sqrt(se / static_cast<double>(n));
    return report;
}

std::string ObedienceReport::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "target_age,rmse_years,mae_years\n";
    for (const ObedienceRow& row : rows) {
        os << row.target_age << "," << row.rmse_years << "," << row.mae_years
           << "\n";
    }
    os << "average," << average.rmse_years << "," << average.mae_years << "\n";
    os << "gender_flip_rate," << gender_flip_rate << ",\n";
    os << "own_attrs_rmse_years," << own_attrs_rmse_years << ",\n";
    os << "probe_self_rmse_years," << probe_self_rmse_years << ",\n";
    return os.str();
}

std::string ObedienceReport::to_text() const {
    char buf[256];
    std::ostringstream os;
    os << "Attribute obedience (n_test=" << n_test << ", seed=" << seed
       << ")\n";
    std::snprintf(buf, sizeof(buf), "%-12s %10s %10s\n", "target age", "RMSE",
                  "MAE");
    os << buf;
    for (const ObedienceRow& row : rows) {
        std::snprintf(buf, sizeof(buf), "%-12d %10.2f %10.2f\n", row.target_age,
                      row.rmse_years, row.mae_years);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-12s %10.2f %10.2f\n", "average",
                  average.rmse_years, average.mae_years);
    os << buf;
    std::snprintf(buf, sizeof(buf), "gender flip-rate: %.1f%%\n",
                  100 * gender_flip_rate);
    os << buf;
    std::snprintf(buf, sizeof(buf), "reveal-at-own-attributes age RMSE: %.2fy\n",
                  own_attrs_rmse_years);
    os << buf;
    std::snprintf(buf, sizeof(buf), "age probe self-error on real images: %.2fy\n",
                  probe_self_rmse_years);
    os << buf;
    return os.str();
}

}  // namespace bafo
