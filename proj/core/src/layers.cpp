#include "bafo/layers.hpp"

#include <cmath>

namespace bafo {

const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Conv: return "conv";
        case LayerKind::ConvTranspose: return "conv_transpose";
    }
    return "?";
}

const char* to_string(Activation act) {
    switch (act) {
        case Activation::Linear: return "linear";
        case Activation::Relu: return "relu";
        case Activation::LeakyRelu: return "leaky_relu";
        case Activation::Sigmoid: return "sigmoid";
    }
    return "?";
}

LayerSpec LayerSpec::dense(std::string name, std::int64_t in, std::int64_t out,
                           Activation act) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = LayerKind::Dense;
    s.in = in;
    s.out = out;
    s.activation = act;
    return s;
}

LayerSpec LayerSpec::conv(std::string name, std::int64_t in, std::int64_t out,
                          std::int64_t kernel, std::int64_t stride,
                          std::int64_t padding, Activation act) {
    LayerSpec s;
    s.name = std::move(name);
    s.kind = LayerKind::Conv;
    s.in = in;
    s.out = out;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    s.activation = act;
    return s;
}

LayerSpec LayerSpec::conv_transpose(std::string name, std::int64_t in,
                                    std::int64_t out, std::int64_t kernel,
                                    std::int64_t stride, std::int64_t padding,
                                    Activation act) {
    LayerSpec s = conv(std::move(name), in, out, kernel, stride, padding, act);
    s.kind = LayerKind::ConvTranspose;
    return s;
}

Shape LayerSpec::weight_shape() const {
    switch (kind) {
        case LayerKind::Dense: return {in, out};
        case LayerKind::Conv: return {out, in, kernel, kernel};
        case LayerKind::ConvTranspose: return {in, out, kernel, kernel};
    }
    return {};
}

Shape LayerSpec::bias_shape() const { return {out}; }

std::int64_t LayerSpec::fan_in() const {
    return kind == LayerKind::Dense ? in : in * kernel * kernel;
}

std::int64_t LayerSpec::fan_out() const {
    return kind == LayerKind::Dense ? out : out * kernel * kernel;
}

Shape propagate_shape(const std::vector<LayerSpec>& specs, const Shape& input) {
    Shape cur = input;
    for (const LayerSpec& spec : specs) {
        switch (spec.kind) {
            case LayerKind::Dense: {
                std::int64_t features = 1;
                for (std::size_t i = 1; i < cur.size(); ++i) features *= cur[i];
                if (cur.empty() || features != spec.in) {
                    throw ConfigError("layer " + spec.name + " expects " +
                                      std::to_string(spec.in) +
                                      " input features, got " +
                                      shape_to_string(cur));
                }
                cur = {cur[0], spec.out};
                break;
            }
            case LayerKind::Conv: {
                if (cur.size() != 4 || cur[1] != spec.in) {
                    throw ConfigError("layer " + spec.name +
                                      " expects [N," + std::to_string(spec.in) +
                                      ",H,W] input, got " + shape_to_string(cur));
                }
                std::int64_t h = conv_out_side(cur[2], spec.kernel, spec.stride,
                                               spec.padding);
                std::int64_t w = conv_out_side(cur[3], spec.kernel, spec.stride,
                                               spec.padding);
                if (h <= 0 || w <= 0) {
                    throw ConfigError("layer " + spec.name +
                                      " produces a non-positive output side");
                }
                cur = {cur[0], spec.out, h, w};
                break;
            }
            case LayerKind::ConvTranspose: {
                if (cur.size() != 4 || cur[1] != spec.in) {
                    throw ConfigError("layer " + spec.name +
                                      " expects [N," + std::to_string(spec.in) +
                                      ",H,W] input, got " + shape_to_string(cur));
                }
                std::int64_t h = conv_transpose_out_side(cur[2], spec.kernel,
                                                         spec.stride, spec.padding);
                std::int64_t w = conv_transpose_out_side(cur[3], spec.kernel,
                                                         spec.stride, spec.padding);
                if (h <= 0 || w <= 0) {
                    throw ConfigError("layer " + spec.name +
                                      " produces a non-positive output side");
                }
                cur = {cur[0], spec.out, h, w};
                break;
            }
        }
    }
    return cur;
}

void ParamStore::insert(const std::string& name, Tensor value) {
    if (entries_.count(name)) {
        throw ContractError("duplicate parameter name: " + name);
    }
    Entry e;
    e.adam_m = Tensor::zeros(value.shape(), value.mode());
    e.adam_v = Tensor::zeros(value.shape(), value.mode());
    e.value = std::move(value);
    entries_.emplace(name, std::move(e));
}

bool ParamStore::contains(const std::string& name) const {
    return entries_.count(name) > 0;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw ContractError("unknown parameter: " + name);
    }
    return it->second;
}

const Tensor& ParamStore::value(const std::string& name) const {
    return entry(name).value;
}

void ParamStore::set_value(const std::string& name, Tensor value) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw ContractError("unknown parameter: " + name);
    }
    if (value.shape() != it->second.value.shape()) {
        throw ContractError("parameter " + name + " shape changed from " +
                            shape_to_string(it->second.value.shape()) + " to " +
                            shape_to_string(value.shape()));
    }
    it->second.value = std::move(value);
}

void ParamStore::set_entry(const std::string& name, Entry entry) {
    entries_[name] = std::move(entry);
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

ParamStore ParamStore::to(NumericMode mode) const {
    ParamStore out;
    out.step_count_ = step_count_;
    for (const auto& [name, e] : entries_) {
        Entry copy;
        copy.value = e.value.to(mode);
        copy.adam_m = e.adam_m.to(mode);
        copy.adam_v = e.adam_v.to(mode);
        out.entries_.emplace(name, std::move(copy));
    }
    return out;
}

ParamStore init_params(const std::vector<LayerSpec>& specs, std::uint64_t seed,
                       NumericMode mode) {
    ParamStore store;
    Pcg32 rng(seed);
    for (const LayerSpec& spec : specs) {
        if (spec.in <= 0 || spec.out <= 0 ||
            (spec.kind != LayerKind::Dense && spec.kernel <= 0)) {
            throw ConfigError("layer " + spec.name + " has non-positive sizes");
        }
        bool relu_family = spec.activation == Activation::Relu ||
                           spec.activation == Activation::LeakyRelu;
        double std_dev = relu_family
                             ? std::sqrt(2.0 / static_cast<double>(spec.fan_in()))
                             : std::sqrt(2.0 / static_cast<double>(spec.fan_in() +
                                                                   spec.fan_out()));
        Shape wshape = spec.weight_shape();
        std::vector<double> w(static_cast<std::size_t>(numel(wshape)));
        for (double& v : w) v = std_dev * rng.next_gaussian();
        store.insert(spec.weight_name(), Tensor::from_values(wshape, w, mode)
                                             .with_requires_grad(true));
        store.insert(spec.bias_name(),
                     Tensor::zeros(spec.bias_shape(), mode).with_requires_grad(true));
    }
    return store;
}

ParamStore adam_step(const ParamStore& store,
                     const std::map<std::string, Tensor>& grads, double lr,
                     double beta1, double beta2, double eps) {
    for (const auto& [name, g] : grads) {
        if (!store.contains(name)) {
            throw ContractError("adam_step: gradient for unknown parameter " +
                                name);
        }
        if (g.shape() != store.value(name).shape()) {
            throw ContractError("adam_step: gradient shape " +
                                shape_to_string(g.shape()) +
                                " does not match parameter " + name + " " +
                                shape_to_string(store.value(name).shape()));
        }
    }
    ParamStore out = store;
    std::int64_t t = store.step_count() + 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const auto& [name, g] : grads) {
        const ParamStore::Entry& e = store.entry(name);
        std::int64_t n = e.value.size();
        std::vector<double> m(static_cast<std::size_t>(n));
        std::vector<double> v(static_cast<std::size_t>(n));
        std::vector<double> p(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            double gi = g.at(i);
            double mi = beta1 * e.adam_m.at(i) + (1.0 - beta1) * gi;
            double vi = beta2 * e.adam_v.at(i) + (1.0 - beta2) * gi * gi;
            double m_hat = mi / bc1;
            double v_hat = vi / bc2;
            m[i] = mi;
            v[i] = vi;
            p[i] = e.value.at(i) - lr * m_hat / (std::sqrt(v_hat) + eps);
        }
        NumericMode mode = e.value.mode();
        ParamStore::Entry updated;
        updated.value = Tensor::from_values(e.value.shape(), p, mode)
                            .with_requires_grad(true);
        updated.adam_m = Tensor::from_values(e.value.shape(), m, mode);
        updated.adam_v = Tensor::from_values(e.value.shape(), v, mode);
        out.set_entry(name, std::move(updated));
    }
    out.set_step_count(t);
    return out;
}

const Var& ParamVars::at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) {
        throw ContractError("no var for parameter " + name);
    }
    return it->second;
}

ParamVars ParamVars::leaves(Tape& tape, const ParamStore& store) {
    ParamVars out;
    for (const auto& [name, e] : store) {
        out.vars.emplace(name, tape.leaf(e.value));
    }
    return out;
}

ParamVars ParamVars::constants(const ParamStore& store) {
    ParamVars out;
    for (const auto& [name, e] : store) {
        out.vars.emplace(name, Var::constant(e.value));
    }
    return out;
}

std::map<std::string, Tensor> ParamVars::grads_by_name(
    const std::unordered_map<int, Tensor>& node_grads) const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, var] : vars) {
        auto it = node_grads.find(var.node());
        if (it != node_grads.end()) out.emplace(name, it->second);
    }
    return out;
}

namespace {

Var apply_activation(const LayerSpec& spec, Var x) {
    switch (spec.activation) {
        case Activation::Linear: return x;
        case Activation::Relu: return relu(x);
        case Activation::LeakyRelu: return leaky_relu(x, spec.leaky_alpha);
        case Activation::Sigmoid: return sigmoid(x);
    }
    return x;
}

}  // namespace

Var forward_layer(const LayerSpec& spec, const ParamVars& params, const Var& x) {
    const Var& w = params.at(spec.weight_name());
    const Var& b = params.at(spec.bias_name());
    Var pre;
    switch (spec.kind) {
        case LayerKind::Dense: {
            Var flat = x;
            if (x.value().rank() > 2) {
                std::int64_t features = 1;
                for (std::size_t i = 1; i < x.value().rank(); ++i) {
                    features *= x.value().shape()[i];
                }
                flat = reshape(x, {x.value().dim(0), features});
            }
            pre = add_row_bias(matmul(flat, w), b);
            break;
        }
        case LayerKind::Conv:
            pre = add_channel_bias(conv2d(x, w, spec.stride, spec.padding), b);
            break;
        case LayerKind::ConvTranspose:
            pre = add_channel_bias(conv_transpose2d(x, w, spec.stride, spec.padding),
                                   b);
            break;
    }
    return apply_activation(spec, pre);
}

}  // namespace bafo
