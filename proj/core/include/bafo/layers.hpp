#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bafo/rng.hpp"
#include "bafo/tape.hpp"
#include "bafo/tensor.hpp"

namespace bafo {

enum class LayerKind : std::uint8_t { Dense = 0, Conv = 1, ConvTranspose = 2 };
enum class Activation : std::uint8_t {
    Linear = 0,
    Relu = 1,
    LeakyRelu = 2,
    Sigmoid = 3,
};

const char* to_string(LayerKind kind);
const char* to_string(Activation act);

// One parameterized layer. Dense layers use in/out as feature counts; conv
// layers as channel counts with square kernels.
struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Dense;
    std::int64_t in = 0;
    std::int64_t out = 0;
    std::int64_t kernel = 0;
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    Activation activation = Activation::Linear;
    double leaky_alpha = 0.01;

    static LayerSpec dense(std::string name, std::int64_t in, std::int64_t out,
                           Activation act);
    static LayerSpec conv(std::string name, std::int64_t in, std::int64_t out,
                          std::int64_t kernel, std::int64_t stride,
                          std::int64_t padding, Activation act);
    static LayerSpec conv_transpose(std::string name, std::int64_t in,
                                    std::int64_t out, std::int64_t kernel,
                                    std::int64_t stride, std::int64_t padding,
                                    Activation act);

    std::string weight_name() const { return name + ".weight"; }
    std::string bias_name() const { return name + ".bias"; }
    Shape weight_shape() const;
    Shape bias_shape() const;
    std::int64_t fan_in() const;
    std::int64_t fan_out() const;
};

// Propagates a shape through a spec list, throwing ConfigError on any
// mismatch. Dense layers accept [N, in]; conv layers [N, C, H, W]. A dense
// layer directly after a conv stack accepts the flattened conv output.
Shape propagate_shape(const std::vector<LayerSpec>& specs, const Shape& input);

// Named trainable parameters plus their Adam moment estimates. Names are the
// canonical (lexicographic) serialization order.
class ParamStore {
public:
    struct Entry {
        Tensor value;
        Tensor adam_m;
        Tensor adam_v;
    };

    void insert(const std::string& name, Tensor value);
    bool contains(const std::string& name) const;
    const Entry& entry(const std::string& name) const;
    const Tensor& value(const std::string& name) const;
    void set_value(const std::string& name, Tensor value);
    void set_entry(const std::string& name, Entry entry);

    std::int64_t step_count() const { return step_count_; }
    void set_step_count(std::int64_t n) { step_count_ = n; }

    std::size_t size() const { return entries_.size(); }
    std::vector<std::string> names() const;

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    ParamStore to(NumericMode mode) const;

private:
    friend ParamStore adam_step(const ParamStore&,
                                const std::map<std::string, Tensor>&, double,
                                double, double, double);
    std::map<std::string, Entry> entries_;
    std::int64_t step_count_ = 0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// He-style normal init (std = sqrt(2/fan_in)) for relu-family layers, Xavier
// (std = sqrt(2/(fan_in+fan_out))) for sigmoid and linear ones. Biases zero.
// Deterministic in `seed` and the layer-spec order.
ParamStore init_params(const std::vector<LayerSpec>& specs, std::uint64_t seed,
                       NumericMode mode = engine_mode());

// One Adam update with bias correction. Parameters without a gradient entry
// are untouched; step_count increments exactly once.
ParamStore adam_step(const ParamStore& store,
                     const std::map<std::string, Tensor>& grads, double lr,
                     double beta1, double beta2, double eps);

// Tape vars for the parameters a forward pass will touch.
struct ParamVars {
    std::map<std::string, Var> vars;

    const Var& at(const std::string& name) const;

    // Leaves for training (gradients flow) ...
    static ParamVars leaves(Tape& tape, const ParamStore& store);
    // ... or constants for inference.
    static ParamVars constants(const ParamStore& store);

    // Translates backward()'s node-id map into a name-keyed gradient map.
    std::map<std::string, Tensor> grads_by_name(
        const std::unordered_map<int, Tensor>& node_grads) const;
};

// Applies one layer (affine or convolution plus activation) to x, recording
// on the tape when parameters are leaves.
Var forward_layer(const LayerSpec& spec, const ParamVars& params, const Var& x);

}  // namespace bafo
