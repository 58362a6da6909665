#include "bafo/cvae.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bafo/checkpoint.hpp"
#include "sha256.hpp"

namespace bafo {

void CvaeConfig::validate() const {
    if (image_side != 28 && image_side != 56) {
        throw ConfigError("image_side must be 28 or 56, got " +
                          std::to_string(image_side));
    }
    if (latent_dim < 2) {
        throw ConfigError("latent_dim must be at least 2, got " +
                          std::to_string(latent_dim));
    }
    if (beta <= 0.0) {
        throw ConfigError("beta must be positive, got " + std::to_string(beta));
    }
    if (batch_size <= 0 || epochs < 0 || lr <= 0.0) {
        throw ConfigError("batch_size and lr must be positive, epochs >= 0");
    }
}

std::array<std::uint8_t, 32> CvaeModel::fingerprint() const {
    return sha256(serialize_model(*this));
}

namespace {

// Encoder trunk: conv stages halving the side down to 7, then a dense head
// producing [mu ; logvar]. Decoder mirrors it back up. 56 uses three conv
// stages, 28 two.
struct ArchPlan {
    std::vector<LayerSpec> encoder;
    std::vector<LayerSpec> decoder;
    Shape feature_shape;  // [C,7,7] under the dense head
};

ArchPlan plan_architecture(int image_side, int latent_dim, int base_channels,
                           int attr_dim) {
    ArchPlan plan;
    int stages = image_side == 56 ? 3 : 2;
    std::int64_t ch_in = 3;
    std::int64_t ch = base_channels;
    for (int s = 0; s < stages; ++s) {
        plan.encoder.push_back(LayerSpec::conv("enc.conv" + std::to_string(s + 1),
                                               ch_in, ch, 4, 2, 1,
                                               Activation::LeakyRelu));
        ch_in = ch;
        ch *= 2;
    }
    std::int64_t feat_ch = ch_in;
    std::int64_t feat = feat_ch * 7 * 7;
    plan.encoder.push_back(LayerSpec::dense("enc.head", feat, 2LL * latent_dim,
                                            Activation::Linear));
    plan.feature_shape = {feat_ch, 7, 7};

    plan.decoder.push_back(LayerSpec::dense("dec.fc", latent_dim + attr_dim,
                                            feat, Activation::LeakyRelu));
    std::int64_t dch = feat_ch;
    for (int s = 0; s < stages - 1; ++s) {
        plan.decoder.push_back(LayerSpec::conv_transpose(
            "dec.deconv" + std::to_string(s + 1), dch, dch / 2, 4, 2, 1,
            Activation::LeakyRelu));
        dch /= 2;
    }
    plan.decoder.push_back(LayerSpec::conv_transpose(
        "dec.deconv" + std::to_string(stages), dch, 3, 4, 2, 1,
        Activation::Sigmoid));
    return plan;
}

}  // namespace

CvaeModel make_cvae_model(const CvaeConfig& config, int base_channels,
                          int attr_dim) {
    config.validate();
    if (base_channels < 2 || base_channels % 2 != 0) {
        throw ConfigError("base_channels must be a positive even number");
    }
    if (attr_dim != 0 && attr_dim != kAttrDim) {
        throw ConfigError("attr_dim must be 0 or " + std::to_string(kAttrDim));
    }
    CvaeModel model;
    model.config = config;
    model.attr_dim = attr_dim;
    ArchPlan plan = plan_architecture(config.image_side, config.latent_dim,
                                      base_channels, attr_dim);
    model.encoder_specs = std::move(plan.encoder);
    model.decoder_specs = std::move(plan.decoder);
    model.decoder_feature_shape = plan.feature_shape;

    // Static shape check before any training step: encoder must land on
    // [N, 2d], decoder must rebuild [N,3,S,S] from [N, d+attr_dim].
    Shape enc_out = propagate_shape(model.encoder_specs,
                                    {1, 3, config.image_side, config.image_side});
    if (enc_out != Shape{1, 2LL * config.latent_dim}) {
        throw ConfigError("encoder specs produce " + shape_to_string(enc_out) +
                          ", expected [1x" + std::to_string(2 * config.latent_dim) +
                          "]");
    }
    // The first decoder layer is dense; shape propagation of the following
    // deconvs needs the reshape applied in between.
    Shape dec_mid = propagate_shape(
        {model.decoder_specs.begin(), model.decoder_specs.begin() + 1},
        {1, static_cast<std::int64_t>(config.latent_dim + attr_dim)});
    if (dec_mid != Shape{1, numel(model.decoder_feature_shape)}) {
        throw ConfigError("decoder dense stage produces " +
                          shape_to_string(dec_mid));
    }
    Shape conv_in = {1, model.decoder_feature_shape[0],
                     model.decoder_feature_shape[1],
                     model.decoder_feature_shape[2]};
    Shape final_shape = propagate_shape(
        {model.decoder_specs.begin() + 1, model.decoder_specs.end()}, conv_in);
    if (final_shape != Shape{1, 3, config.image_side, config.image_side}) {
        throw ConfigError("decoder specs produce " + shape_to_string(final_shape) +
                          ", expected [1x3x" + std::to_string(config.image_side) +
                          "x" + std::to_string(config.image_side) + "]");
    }

    std::vector<LayerSpec> all = model.encoder_specs;
    all.insert(all.end(), model.decoder_specs.begin(), model.decoder_specs.end());
    model.params = init_params(all, config.seed, config.numeric_mode);
    return model;
}

namespace {

struct EncoderVars {
    Var mu, logvar;
};

EncoderVars encoder_forward(const CvaeModel& model, const ParamVars& params,
                            Var x) {
    for (const LayerSpec& spec : model.encoder_specs) {
        x = forward_layer(spec, params, x);
    }
    // Head output is [N, 2d]: first half mu, second half logvar.
    std::int64_t d = model.latent_dim();
    EncoderVars out;
    out.mu = slice(x, 1, 0, d);
    out.logvar = slice(x, 1, d, d);
    return out;
}

Var decoder_forward(const CvaeModel& model, const ParamVars& params,
                    Var z_and_attrs) {
    Var x = forward_layer(model.decoder_specs.front(), params, z_and_attrs);
    Shape conv_shape = {x.value().dim(0), model.decoder_feature_shape[0],
                        model.decoder_feature_shape[1],
                        model.decoder_feature_shape[2]};
    x = reshape(x, conv_shape);
    for (std::size_t i = 1; i < model.decoder_specs.size(); ++i) {
        x = forward_layer(model.decoder_specs[i], params, x);
    }
    return x;
}

void check_image_batch(const CvaeModel& model, const Tensor& images) {
    std::int64_t s = model.image_side();
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != s ||
        images.dim(3) != s) {
        throw DimensionError("expected images [N,3," + std::to_string(s) + "," +
                             std::to_string(s) + "], got " +
                             shape_to_string(images.shape()));
    }
}

}  // namespace

EncodeOut encode(const CvaeModel& model, const Tensor& images) {
    check_image_batch(model, images);
    ParamVars params = ParamVars::constants(model.params);
    EncoderVars enc = encoder_forward(
        model, params, Var::constant(images.to(model.config.numeric_mode)));
    return {enc.mu.value(), enc.logvar.value()};
}

Tensor reparameterize_with_eps(const Tensor& mu, const Tensor& logvar,
                               const Tensor& eps) {
    if (mu.shape() != logvar.shape() || mu.shape() != eps.shape()) {
        throw DimensionError("reparameterize: shapes differ: " +
                             shape_to_string(mu.shape()) + ", " +
                             shape_to_string(logvar.shape()) + ", " +
                             shape_to_string(eps.shape()));
    }
    Var z = add(Var::constant(mu),
                mul(exp(scale(Var::constant(logvar), 0.5)), Var::constant(eps)));
    return z.value();
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, Pcg32& rng) {
    std::vector<double> noise(static_cast<std::size_t>(mu.size()));
    for (double& v : noise) v = rng.next_gaussian();
    Tensor eps = Tensor::from_values(mu.shape(), noise, mu.mode());
    return reparameterize_with_eps(mu, logvar, eps);
}

Tensor attrs_to_row(const AttributeVector& attrs) {
    attrs.validate();
    auto a = attrs.to_array();
    return Tensor::from_values({1, kAttrDim}, a);
}

Tensor decode_batch(const CvaeModel& model, const Tensor& zs,
                    const Tensor& attr_rows) {
    if (zs.rank() != 2 || zs.dim(1) != model.latent_dim()) {
        throw ContractError("decode: latent batch must be [N," +
                            std::to_string(model.latent_dim()) + "], got " +
                            shape_to_string(zs.shape()));
    }
    ParamVars params = ParamVars::constants(model.params);
    Var z = Var::constant(zs.to(model.config.numeric_mode));
    Var input = z;
    if (model.attr_dim > 0) {
        if (attr_rows.rank() != 2 || attr_rows.dim(0) != zs.dim(0) ||
            attr_rows.dim(1) != model.attr_dim) {
            throw ContractError("decode: attribute rows must be [N," +
                                std::to_string(model.attr_dim) + "], got " +
                                shape_to_string(attr_rows.shape()));
        }
        input = concat({z, Var::constant(attr_rows.to(model.config.numeric_mode))}, 1);
    }
    return decoder_forward(model, params, input).value();
}

Tensor decode(const CvaeModel& model, const Tensor& z,
              const AttributeVector& attrs) {
    if (z.rank() != 1 || z.dim(0) != model.latent_dim()) {
        throw ContractError("decode: z must be a length-" +
                            std::to_string(model.latent_dim()) +
                            " vector, got " + shape_to_string(z.shape()));
    }
    Tensor zs = Tensor::from_values({1, model.latent_dim()}, z.to_vector(),
                                    z.mode());
    Tensor rows = model.attr_dim > 0 ? attrs_to_row(attrs).to(z.mode())
                                     : Tensor{};
    return decode_batch(model, zs, rows);
}

LossVars cvae_loss_vars(const Var& recon, const Var& target, const Var& mu,
                        const Var& logvar, double beta) {
    const Tensor& rt = recon.value();
    if (rt.shape() != target.value().shape()) {
        throw ContractError("loss: recon shape " + shape_to_string(rt.shape()) +
                            " differs from target " +
                            shape_to_string(target.value().shape()));
    }
    if (mu.value().shape() != logvar.value().shape()) {
        throw ContractError("loss: mu/logvar shapes differ");
    }
    double n = static_cast<double>(rt.dim(0));

    Var diff = sub(recon, target);
    Var recon_term = scale(sum(mul(diff, diff)), 1.0 / n);

    Var ones = Var::constant(Tensor::ones(mu.value().shape(), mu.value().mode()));
    Var inner = sub(sub(add(ones, logvar), mul(mu, mu)), exp(logvar));
    Var kl_term = scale(sum(inner), -0.5 / n);

    LossVars out;
    out.recon = recon_term;
    out.kl = kl_term;
    out.total = add(recon_term, scale(kl_term, beta));
    return out;
}

LossValues cvae_loss(const Tensor& recon, const Tensor& target,
                     const Tensor& mu, const Tensor& logvar, double beta) {
    LossVars v = cvae_loss_vars(Var::constant(recon), Var::constant(target),
                                Var::constant(mu), Var::constant(logvar), beta);
    return {v.total.value().at(0), v.recon.value().at(0), v.kl.value().at(0)};
}

ForwardVars cvae_forward_vars(const CvaeModel& model, const ParamVars& params,
                              const Tensor& images, const Tensor& attr_rows,
                              const Tensor& eps, double beta) {
    check_image_batch(model, images);
    ForwardVars out;
    Var x = Var::constant(images);
    EncoderVars enc = encoder_forward(model, params, x);
    out.mu = enc.mu;
    out.logvar = enc.logvar;
    out.z = add(enc.mu,
                mul(exp(scale(enc.logvar, 0.5)), Var::constant(eps)));
    Var dec_in = out.z;
    if (model.attr_dim > 0) {
        dec_in = concat({out.z, Var::constant(attr_rows)}, 1);
    }
    out.recon = decoder_forward(model, params, dec_in);
    out.loss = cvae_loss_vars(out.recon, x, out.mu, out.logvar, beta);
    return out;
}

Tensor stack_pixels(std::span<const LabeledImage> items) {
    if (items.empty()) throw ConfigError("empty image batch");
    const Shape& one = items.front().pixels.shape();
    std::int64_t per = numel(one);
    std::vector<double> data(static_cast<std::size_t>(per) * items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].pixels.shape() != one) {
            throw DimensionError("inconsistent image shapes in batch");
        }
        std::vector<double> v = items[i].pixels.to_vector();
        std::copy(v.begin(), v.end(), data.begin() + i * per);
    }
    return Tensor::from_values(
        {static_cast<std::int64_t>(items.size()), one[0], one[1], one[2]}, data);
}

Tensor stack_attrs(std::span<const LabeledImage> items) {
    if (items.empty()) throw ConfigError("empty attribute batch");
    std::vector<double> data(items.size() * kAttrDim);
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto a = items[i].attrs.to_array();
        std::copy(a.begin(), a.end(), data.begin() + i * kAttrDim);
    }
    return Tensor::from_values(
        {static_cast<std::int64_t>(items.size()), kAttrDim}, data);
}

std::vector<EpochStats> train(CvaeModel& model,
                              std::span<const LabeledImage> data,
                              const CvaeConfig& config,
                              const ProgressSink& sink) {
    config.validate();
    if (data.empty()) {
        throw ConfigError("training dataset is empty");
    }
    if (model.config.numeric_mode != config.numeric_mode) {
        throw ContractError("model and config numeric modes differ");
    }

    Pcg32 rng(config.seed ^ 0x7261696e5f726e67ULL);  // train stream
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<EpochStats> history;
    history.reserve(static_cast<std::size_t>(config.epochs));
    AdamConfig adam{config.lr, 0.9, 0.999, 1e-8};

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = rng.next_below(static_cast<std::uint32_t>(i));
            std::swap(order[i - 1], order[j]);
        }
        double recon_sum = 0.0, kl_sum = 0.0;
        int step = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            std::size_t end = std::min(order.size(),
                                       start + static_cast<std::size_t>(config.batch_size));
            std::vector<LabeledImage> batch_items;
            batch_items.reserve(end - start);
            for (std::size_t k = start; k < end; ++k) {
                batch_items.push_back(data[order[k]]);
            }
            Tensor images = stack_pixels(batch_items).to(config.numeric_mode);
            std::int64_t bsize = images.dim(0);

            std::vector<double> noise(
                static_cast<std::size_t>(bsize * model.latent_dim()));
            for (double& v : noise) v = rng.next_gaussian();
            Tensor eps = Tensor::from_values({bsize, model.latent_dim()}, noise,
                                             config.numeric_mode);
            Tensor attr_rows;
            if (model.attr_dim > 0) {
                attr_rows = stack_attrs(batch_items).to(config.numeric_mode);
            }

            Tape tape;
            ParamVars params = ParamVars::leaves(tape, model.params);
            ForwardVars fwd = cvae_forward_vars(model, params, images,
                                                attr_rows, eps, config.beta);
            LossVars& loss = fwd.loss;

            double total = loss.total.value().at(0);
            if (!std::isfinite(total)) {
                throw TrainingDivergedError(epoch, step,
                                            "loss became non-finite");
            }
            recon_sum += loss.recon.value().at(0) * static_cast<double>(bsize);
            kl_sum += loss.kl.value().at(0) * static_cast<double>(bsize);

            auto node_grads = tape.backward(loss.total);
            auto grads = params.grads_by_name(node_grads);
            model.params = adam_step(model.params, grads, adam.lr, adam.beta1,
                                     adam.beta2, adam.eps);
            ++step;
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.recon = recon_sum / static_cast<double>(data.size());
        stats.kl = kl_sum / static_cast<double>(data.size());
        stats.total = stats.recon + config.beta * stats.kl;
        history.push_back(stats);
        if (sink) sink(stats);
    }
    return history;
}

std::string loss_history_csv(const std::vector<EpochStats>& history) {
    std::ostringstream os;
    os << "epoch,recon,kl,total\n";
    os.precision(17);
    for (const EpochStats& e : history) {
        os << e.epoch << "," << e.recon << "," << e.kl << "," << e.total << "\n";
    }
    return os.str();
}

}  // namespace bafo
