#include "bafo/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "kernels.hpp"

namespace bafo {

const char* to_string(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::MatMul: return "matmul";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::ConvTranspose2d: return "conv_transpose2d";
        case OpKind::Relu: return "relu";
        case OpKind::LeakyRelu: return "leaky_relu";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Exp: return "exp";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::Reshape: return "reshape";
        case OpKind::Sum: return "sum";
        case OpKind::AddRowBias: return "add_row_bias";
        case OpKind::AddChannelBias: return "add_channel_bias";
        case OpKind::SoftmaxXent: return "softmax_cross_entropy";
    }
    return "?";
}

namespace {

template <typename S>
std::span<const S> data_of(const Tensor& t);

template <>
std::span<const float> data_of<float>(const Tensor& t) {
    return t.f32();
}

template <>
std::span<const double> data_of<double>(const Tensor& t) {
    return t.f64();
}

template <typename F>
Tensor dispatch(NumericMode mode, F&& f) {
    if (mode == NumericMode::f32) return f(float{});
    return f(double{});
}

}  // namespace

Var make_op_var(Tape* tape, Tensor value, int node) {
    Var v;
    v.value_ = std::move(value);
    v.node_ = node;
    v.tape_ = tape;
    return v;
}

Var Var::constant(Tensor value) {
    Var v;
    v.value_ = std::move(value);
    return v;
}

Var Tape::leaf(const Tensor& value) {
    if (!value.requires_grad()) {
        throw ContractError("Tape::leaf: tensor does not require grad");
    }
    TapeNode node;
    node.op_kind = OpKind::Leaf;
    node.saved.push_back(value);
    int id = record(std::move(node));
    leaf_ids_.push_back(id);
    return make_op_var(this, value, id);
}

int Tape::record(TapeNode node) {
    int id = static_cast<int>(nodes_.size());
    for (int p : node.parents) {
        if (p >= id) {
            throw ContractError("tape node parents must be created earlier");
        }
    }
    nodes_.push_back(std::move(node));
    return id;
}

namespace {

// Resolves which tape (if any) an operation should record to and checks the
// inputs do not straddle two tapes.
Tape* common_tape(std::initializer_list<const Var*> inputs) {
    Tape* tape = nullptr;
    for (const Var* v : inputs) {
        if (v->tape() == nullptr) continue;
        if (tape != nullptr && tape != v->tape()) {
            throw ContractError("operation mixes vars from different tapes");
        }
        tape = v->tape();
    }
    return tape;
}

bool any_tracked(std::initializer_list<const Var*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Var* v) { return v->node() >= 0; });
}

Var finish_op(OpKind kind, Tensor out, std::initializer_list<const Var*> inputs,
              OpAttrs attrs = {}, std::vector<Tensor> extra_saved = {}) {
    Tape* tape = common_tape(inputs);
    if (tape == nullptr || !any_tracked(inputs)) {
        return Var::constant(std::move(out));
    }
    TapeNode node;
    node.op_kind = kind;
    for (const Var* v : inputs) {
        node.parents.push_back(v->node());
        node.saved.push_back(v->value());
    }
    for (Tensor& t : extra_saved) node.saved.push_back(std::move(t));
    node.attrs = std::move(attrs);
    int id = tape->record(std::move(node));
    return make_op_var(tape, std::move(out), id);
}

template <typename S, typename F>
Tensor unary_map(const Tensor& x, F&& f) {
    auto in = data_of<S>(x);
    std::vector<S> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return Tensor(x.shape(), std::move(out));
}

template <typename S, typename F>
Tensor binary_map(const Tensor& a, const Tensor& b, F&& f) {
    auto av = data_of<S>(a);
    auto bv = data_of<S>(b);
    std::vector<S> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    return Tensor(a.shape(), std::move(out));
}

void check_equal_shapes(const Tensor& a, const Tensor& b, const char* op) {
    check_same_mode(a, b, op);
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shapes " +
                             shape_to_string(a.shape()) + " and " +
                             shape_to_string(b.shape()) + " differ");
    }
}

template <typename S>
S stable_sigmoid(S x) {
    if (x >= S(0)) {
        return S(1) / (S(1) + std::exp(-x));
    }
    S e = std::exp(x);
    return e / (S(1) + e);
}

kernels::ConvDims make_conv_dims(const Shape& input, const Shape& kernel,
                                 std::int64_t stride, std::int64_t padding,
                                 bool transpose) {
    if (input.size() != 4 || kernel.size() != 4) {
        throw DimensionError(std::string(transpose ? "conv_transpose2d" : "conv2d") +
                             ": expected 4-d input and kernel, got " +
                             shape_to_string(input) + " and " +
                             shape_to_string(kernel));
    }
    if (stride <= 0 || padding < 0) {
        throw ConfigError("convolution stride must be positive and padding non-negative");
    }
    kernels::ConvDims d{};
    d.filters = kernel[0];
    d.in_ch = kernel[1];
    d.kh = kernel[2];
    d.kw = kernel[3];
    d.stride = stride;
    d.padding = padding;
    if (!transpose) {
        // input is [N, C, H, W]
        d.batch = input[0];
        d.in_h = input[2];
        d.in_w = input[3];
        if (input[1] != d.in_ch) {
            throw DimensionError("conv2d: input channels " +
                                 shape_to_string(input) + " do not match kernel " +
                                 shape_to_string(kernel));
        }
        d.out_h = conv_out_side(d.in_h, d.kh, stride, padding);
        d.out_w = conv_out_side(d.in_w, d.kw, stride, padding);
        if (d.out_h <= 0 || d.out_w <= 0) {
            throw ConfigError("conv2d: non-positive output side for input " +
                              shape_to_string(input) + " kernel " +
                              shape_to_string(kernel) + " stride " +
                              std::to_string(stride) + " padding " +
                              std::to_string(padding));
        }
    } else {
        // input is [N, F, H, W]; the conv "input" side is the output here
        d.batch = input[0];
        d.out_h = input[2];
        d.out_w = input[3];
        if (input[1] != d.filters) {
            throw DimensionError("conv_transpose2d: input channels " +
                                 shape_to_string(input) +
                                 " do not match kernel " + shape_to_string(kernel));
        }
        d.in_h = conv_transpose_out_side(d.out_h, d.kh, stride, padding);
        d.in_w = conv_transpose_out_side(d.out_w, d.kw, stride, padding);
        if (d.in_h <= 0 || d.in_w <= 0) {
            throw ConfigError("conv_transpose2d: non-positive output side for input " +
                              shape_to_string(input) + " kernel " +
                              shape_to_string(kernel));
        }
    }
    return d;
}

}  // namespace

std::int64_t conv_out_side(std::int64_t in, std::int64_t k, std::int64_t stride,
                           std::int64_t padding) {
    return (in + 2 * padding - k) / stride + 1;
}

std::int64_t conv_transpose_out_side(std::int64_t in, std::int64_t k,
                                     std::int64_t stride, std::int64_t padding) {
    return (in - 1) * stride - 2 * padding + k;
}

Var matmul(const Var& a, const Var& b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    check_same_mode(ta, tb, "matmul");
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " +
                             shape_to_string(ta.shape()) + " and " +
                             shape_to_string(tb.shape()));
    }
    std::int64_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
    Tensor out = dispatch(ta.mode(), [&](auto tag) {
        using S = decltype(tag);
        std::vector<S> c(static_cast<std::size_t>(m * n));
        kernels::matmul_nn(data_of<S>(ta).data(), data_of<S>(tb).data(), c.data(),
                           m, k, n);
        return Tensor({m, n}, std::move(c));
    });
    return finish_op(OpKind::MatMul, std::move(out), {&a, &b});
}

Var conv2d(const Var& input, const Var& kernel, std::int64_t stride,
           std::int64_t padding) {
    const Tensor& x = input.value();
    const Tensor& k = kernel.value();
    check_same_mode(x, k, "conv2d");
    kernels::ConvDims d = make_conv_dims(x.shape(), k.shape(), stride, padding,
                                         /*transpose=*/false);
    Tensor out = dispatch(x.mode(), [&](auto tag) {
        using S = decltype(tag);
        std::vector<S> y(static_cast<std::size_t>(d.batch * d.filters * d.out_h * d.out_w));
        kernels::conv_forward(data_of<S>(x).data(), data_of<S>(k).data(), d,
                              y.data());
        return Tensor({d.batch, d.filters, d.out_h, d.out_w}, std::move(y));
    });
    OpAttrs attrs;
    attrs.stride = stride;
    attrs.padding = padding;
    return finish_op(OpKind::Conv2d, std::move(out), {&input, &kernel}, attrs);
}

Var conv_transpose2d(const Var& input, const Var& kernel, std::int64_t stride,
                     std::int64_t padding) {
    const Tensor& x = input.value();
    const Tensor& k = kernel.value();
    check_same_mode(x, k, "conv_transpose2d");
    kernels::ConvDims d = make_conv_dims(x.shape(), k.shape(), stride, padding,
                                         /*transpose=*/true);
    Tensor out = dispatch(x.mode(), [&](auto tag) {
        using S = decltype(tag);
        std::vector<S> y(static_cast<std::size_t>(d.batch * d.in_ch * d.in_h * d.in_w));
        kernels::conv_input_grad(data_of<S>(x).data(), data_of<S>(k).data(), d,
                                 y.data());
        return Tensor({d.batch, d.in_ch, d.in_h, d.in_w}, std::move(y));
    });
    OpAttrs attrs;
    attrs.stride = stride;
    attrs.padding = padding;
    return finish_op(OpKind::ConvTranspose2d, std::move(out), {&input, &kernel},
                     attrs);
}

Var relu(const Var& x) {
    Tensor out = dispatch(x.value().mode(), [&](auto tag) {
        using S = decltype(tag);
        return unary_map<S>(x.value(), [](S v) { return v > S(0) ? v : S(0); });
    });
    return finish_op(OpKind::Relu, std::move(out), {&x});
}

Var leaky_relu(const Var& x, double alpha) {
    Tensor out = dispatch(x.value().mode(), [&](auto tag) {
        using S = decltype(tag);
        S a = static_cast<S>(alpha);
        return unary_map<S>(x.value(), [a](S v) { return v > S(0) ? v : a * v; });
    });
    OpAttrs attrs;
    attrs.alpha = alpha;
    return finish_op(OpKind::LeakyRelu, std::move(out), {&x}, attrs);
}

Var sigmoid(const Var& x) {
    Tensor out = dispatch(x.value().mode(), [&](auto tag) {
        using S = decltype(tag);
        return unary_map<S>(x.value(), [](S v) { return stable_sigmoid(v); });
    });
    // backward reads the cached output: d/dx = y (1 - y)
    return finish_op(OpKind::Sigmoid, out, {&x}, {}, {out});
}

Var exp(const Var& x) {
    Tensor out = dispatch(x.value().mode(), [&](auto tag) {
        using S = decltype(tag);
        return unary_map<S>(x.value(), [](S v) { return std::exp(v); });
    });
    return finish_op(OpKind::Exp, out, {&x}, {}, {out});
}

Var add(const Var& a, const Var& b) {
    check_equal_shapes(a.value(), b.value(), "add");
    Tensor out = dispatch(a.value().mode(), [&](auto tag) {
        using S = decltype(tag);
        return binary_map<S>(a.value(), b.value(),
                             [](S x, S y) { return x + y; });
    });
    return finish_op(OpKind::Add, std::move(out), {&a, &b});
}

Var sub(const Var& a, const Var& b) {
    check_equal_shapes(a.value(), b.value(), "sub");
    Tensor out = dispatch(a.value().mode(), [&](auto tag) {
        using S = decltype(tag);
        return binary_map<S>(a.value(), b.value(),
                             [](S x, S y) { return x - y; });
    });
    return finish_op(OpKind::Sub, std::move(out), {&a, &b});
}

Var mul(const Var& a, const Var& b) {
    check_equal_shapes(a.value(), b.value(), "mul");
    Tensor out = dispatch(a.value().mode(), [&](auto tag) {
        using S = decltype(tag);
        return binary_map<S>(a.value(), b.value(),
                             [](S x, S y) { return x * y; });
    });
    return finish_op(OpKind::Mul, std::move(out), {&a, &b});
}

Var scale(const Var& x, double factor) {
    Tensor out = dispatch(x.value().mode(), [&](auto tag) {
        using S = decltype(tag);
        S f = static_cast<S>(factor);
        return unary_map<S>(x.value(), [f](S v) { return f * v; });
    });
    OpAttrs attrs;
    attrs.alpha = factor;
    return finish_op(OpKind::Scale, std::move(out), {&x}, attrs);
}

namespace {

struct ConcatGeometry {
    std::int64_t outer = 1;   // product of dims before axis
    std::int64_t inner = 1;   // product of dims after axis
    std::int64_t axis_total = 0;
};

ConcatGeometry concat_geometry(const std::vector<const Tensor*>& parts, int axis) {
    const Shape& first = parts.front()->shape();
    if (axis < 0 || axis >= static_cast<int>(first.size())) {
        throw DimensionError("concat: axis " + std::to_string(axis) +
                             " out of range for shape " + shape_to_string(first));
    }
    ConcatGeometry g;
    for (const Tensor* t : parts) {
        if (t->rank() != first.size()) {
            throw DimensionError("concat: rank mismatch between " +
                                 shape_to_string(first) + " and " +
                                 shape_to_string(t->shape()));
        }
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (static_cast<int>(i) != axis && t->shape()[i] != first[i]) {
                throw DimensionError("concat: non-axis dims differ between " +
                                     shape_to_string(first) + " and " +
                                     shape_to_string(t->shape()));
            }
        }
        g.axis_total += t->shape()[axis];
    }
    for (int i = 0; i < axis; ++i) g.outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) g.inner *= first[i];
    return g;
}

}  // namespace

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) {
        throw DimensionError("concat: no parts given");
    }
    std::vector<const Tensor*> tensors;
    tensors.reserve(parts.size());
    for (const Var& v : parts) tensors.push_back(&v.value());
    for (std::size_t i = 1; i < tensors.size(); ++i) {
        check_same_mode(*tensors[0], *tensors[i], "concat");
    }
    ConcatGeometry g = concat_geometry(tensors, axis);
    Shape out_shape = tensors[0]->shape();
    out_shape[axis] = g.axis_total;

    Tensor out = dispatch(tensors[0]->mode(), [&](auto tag) {
        using S = decltype(tag);
        std::vector<S> data(static_cast<std::size_t>(g.outer * g.axis_total * g.inner));
        std::int64_t offset = 0;
        for (const Tensor* t : tensors) {
            auto src = data_of<S>(*t);
            std::int64_t part_axis = t->shape()[axis];
            for (std::int64_t o = 0; o < g.outer; ++o) {
                const S* s = src.data() + o * part_axis * g.inner;
                S* dst = data.data() + (o * g.axis_total + offset) * g.inner;
                std::copy(s, s + part_axis * g.inner, dst);
            }
            offset += part_axis;
        }
        return Tensor(out_shape, std::move(data));
    });

    Tape* tape = nullptr;
    bool tracked = false;
    for (const Var& v : parts) {
        if (v.tape() != nullptr) {
            if (tape != nullptr && tape != v.tape()) {
                throw ContractError("concat mixes vars from different tapes");
            }
            tape = v.tape();
        }
        tracked = tracked || v.node() >= 0;
    }
    if (tape == nullptr || !tracked) return Var::constant(std::move(out));

    TapeNode node;
    node.op_kind = OpKind::Concat;
    for (const Var& v : parts) {
        node.parents.push_back(v.node());
        node.saved.push_back(v.value());
    }
    node.attrs.axis = axis;
    int id = tape->record(std::move(node));
    return make_op_var(tape, std::move(out), id);
}

Var slice(const Var& x, int axis, std::int64_t start, std::int64_t length) {
    const Tensor& t = x.value();
    if (axis < 0 || axis >= static_cast<int>(t.rank())) {
        throw DimensionError("slice: axis " + std::to_string(axis) +
                             " out of range for shape " +
                             shape_to_string(t.shape()));
    }
    if (start < 0 || length <= 0 || start + length > t.shape()[axis]) {
        throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                             std::to_string(start + length) +
                             ") out of bounds for shape " +
                             shape_to_string(t.shape()));
    }
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= t.shape()[i];
    for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.shape()[i];
    std::int64_t axis_len = t.shape()[axis];

    Shape out_shape = t.shape();
    out_shape[axis] = length;
    Tensor out = dispatch(t.mode(), [&](auto tag) {
        using S = decltype(tag);
        auto src = data_of<S>(t);
        std::vector<S> data(static_cast<std::size_t>(outer * length * inner));
        for (std::int64_t o = 0; o < outer; ++o) {
            const S* s = src.data() + (o * axis_len + start) * inner;
            std::copy(s, s + length * inner, data.data() + o * length * inner);
        }
        return Tensor(out_shape, std::move(data));
    });
    OpAttrs attrs;
    attrs.axis = axis;
    attrs.start = start;
    attrs.length = length;
    attrs.saved_shape = t.shape();
    return finish_op(OpKind::Slice, std::move(out), {&x}, attrs);
}

Var reshape(const Var& x, const Shape& new_shape) {
    const Tensor& t = x.value();
    if (numel(new_shape) != t.size()) {
        throw DimensionError("reshape: cannot view " +
                             shape_to_string(t.shape()) + " as " +
                             shape_to_string(new_shape));
    }
    Tensor out = dispatch(t.mode(), [&](auto tag) {
        using S = decltype(tag);
        auto src = data_of<S>(t);
        return Tensor(new_shape, std::vector<S>(src.begin(), src.end()));
    });
    OpAttrs attrs;
    attrs.saved_shape = t.shape();
    return finish_op(OpKind::Reshape, std::move(out), {&x}, attrs);
}

Var sum(const Var& x) {
    const Tensor& t = x.value();
    // Kahan-compensated reduction: this op closes every loss, so its
    // rounding sets the noise floor of finite-difference verification.
    Tensor out = dispatch(t.mode(), [&](auto tag) {
        using S = decltype(tag);
        auto src = data_of<S>(t);
        S acc = S(0), comp = S(0);
        for (S v : src) {
            S y = v - comp;
            S s = acc + y;
            comp = (s - acc) - y;
            acc = s;
        }
        return Tensor({1}, std::vector<S>{acc});
    });
    OpAttrs attrs;
    attrs.saved_shape = t.shape();
    return finish_op(OpKind::Sum, std::move(out), {&x}, attrs);
}

Var add_row_bias(const Var& x, const Var& bias) {
    const Tensor& t = x.value();
    const Tensor& b = bias.value();
    check_same_mode(t, b, "add_row_bias");
    if (t.rank() != 2 || b.rank() != 1 || b.dim(0) != t.dim(1)) {
        throw DimensionError("add_row_bias: shapes " +
                             shape_to_string(t.shape()) + " and " +
                             shape_to_string(b.shape()) + " do not fit");
    }
    std::int64_t rows = t.dim(0), cols = t.dim(1);
    Tensor out = dispatch(t.mode(), [&](auto tag) {
        using S = decltype(tag);
        auto xv = data_of<S>(t);
        auto bv = data_of<S>(b);
        std::vector<S> y(xv.size());
        for (std::int64_t r = 0; r < rows; ++r) {
            const S* row = xv.data() + r * cols;
            S* dst = y.data() + r * cols;
            for (std::int64_t c = 0; c < cols; ++c) dst[c] = row[c] + bv[c];
        }
        return Tensor(t.shape(), std::move(y));
    });
    return finish_op(OpKind::AddRowBias, std::move(out), {&x, &bias});
}

Var add_channel_bias(const Var& x, const Var& bias) {
    const Tensor& t = x.value();
    const Tensor& b = bias.value();
    check_same_mode(t, b, "add_channel_bias");
    if (t.rank() != 4 || b.rank() != 1 || b.dim(0) != t.dim(1)) {
        throw DimensionError("add_channel_bias: shapes " +
                             shape_to_string(t.shape()) + " and " +
                             shape_to_string(b.shape()) + " do not fit");
    }
    std::int64_t n = t.dim(0), c = t.dim(1), hw = t.dim(2) * t.dim(3);
    Tensor out = dispatch(t.mode(), [&](auto tag) {
        using S = decltype(tag);
        auto xv = data_of<S>(t);
        auto bv = data_of<S>(b);
        std::vector<S> y(xv.size());
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const S* src = xv.data() + (i * c + ch) * hw;
                S* dst = y.data() + (i * c + ch) * hw;
                S add = bv[ch];
                for (std::int64_t p = 0; p < hw; ++p) dst[p] = src[p] + add;
            }
        }
        return Tensor(t.shape(), std::move(y));
    });
    return finish_op(OpKind::AddChannelBias, std::move(out), {&x, &bias});
}

Var softmax_cross_entropy(const Var& logits, const Var& onehot) {
    const Tensor& x = logits.value();
    const Tensor& y = onehot.value();
    check_equal_shapes(x, y, "softmax_cross_entropy");
    if (x.rank() != 2) {
        throw DimensionError("softmax_cross_entropy: expected [N,K] logits, got " +
                             shape_to_string(x.shape()));
    }
    std::int64_t n = x.dim(0), k = x.dim(1);
    Tensor probs;
    Tensor out = dispatch(x.mode(), [&](auto tag) {
        using S = decltype(tag);
        auto xv = data_of<S>(x);
        auto yv = data_of<S>(y);
        std::vector<S> p(xv.size());
        S loss = S(0);
        for (std::int64_t r = 0; r < n; ++r) {
            const S* row = xv.data() + r * k;
            S mx = row[0];
            for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
            S denom = S(0);
            for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
            S log_denom = std::log(denom);
            for (std::int64_t j = 0; j < k; ++j) {
                S logp = row[j] - mx - log_denom;
                p[r * k + j] = std::exp(logp);
                loss -= yv[r * k + j] * logp;
            }
        }
        probs = Tensor(x.shape(), std::move(p));
        return Tensor({1}, std::vector<S>{loss / static_cast<S>(n)});
    });
    return finish_op(OpKind::SoftmaxXent, std::move(out), {&logits, &onehot}, {},
                     {probs});
}

// --- backward --------------------------------------------------------------

namespace {

template <typename S>
Tensor add_into(const Tensor& acc, const Tensor& g) {
    auto av = data_of<S>(acc);
    auto gv = data_of<S>(g);
    std::vector<S> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + gv[i];
    return Tensor(acc.shape(), std::move(out));
}

Tensor accumulate(Tensor acc, const Tensor& g) {
    if (!acc.defined()) return g;
    return dispatch(acc.mode(), [&](auto tag) {
        using S = decltype(tag);
        return add_into<S>(acc, g);
    });
}

// Gradient for every input slot of one node; empty tensors mark constants.
template <typename S>
std::vector<Tensor> backward_op(const TapeNode& node, const Tensor& gout) {
    auto g = data_of<S>(gout);
    switch (node.op_kind) {
        case OpKind::Leaf:
            return {};
        case OpKind::MatMul: {
            const Tensor& a = node.saved[0];
            const Tensor& b = node.saved[1];
            std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
            std::vector<S> ga(static_cast<std::size_t>(m * k));
            std::vector<S> gb(static_cast<std::size_t>(k * n));
            kernels::matmul_nt(g.data(), data_of<S>(b).data(), ga.data(), m, n, k);
            kernels::matmul_tn(data_of<S>(a).data(), g.data(), gb.data(), m, k, n);
            return {Tensor(a.shape(), std::move(ga)),
                    Tensor(b.shape(), std::move(gb))};
        }
        case OpKind::Conv2d: {
            const Tensor& x = node.saved[0];
            const Tensor& k = node.saved[1];
            kernels::ConvDims d = make_conv_dims(x.shape(), k.shape(),
                                                 node.attrs.stride,
                                                 node.attrs.padding, false);
            std::vector<S> gx(static_cast<std::size_t>(x.size()));
            std::vector<S> gk(static_cast<std::size_t>(k.size()));
            kernels::conv_input_grad(g.data(), data_of<S>(k).data(), d, gx.data());
            kernels::conv_kernel_grad(data_of<S>(x).data(), g.data(), d, gk.data());
            return {Tensor(x.shape(), std::move(gx)),
                    Tensor(k.shape(), std::move(gk))};
        }
        case OpKind::ConvTranspose2d: {
            const Tensor& x = node.saved[0];
            const Tensor& k = node.saved[1];
            kernels::ConvDims d = make_conv_dims(x.shape(), k.shape(),
                                                 node.attrs.stride,
                                                 node.attrs.padding, true);
            // Forward was the conv input-grad, so its adjoint is the conv
            // itself; the kernel grad swaps the image and gradient roles.
            std::vector<S> gx(static_cast<std::size_t>(x.size()));
            std::vector<S> gk(static_cast<std::size_t>(k.size()));
            kernels::conv_forward(g.data(), data_of<S>(k).data(), d, gx.data());
            kernels::conv_kernel_grad(g.data(), data_of<S>(x).data(), d, gk.data());
            return {Tensor(x.shape(), std::move(gx)),
                    Tensor(k.shape(), std::move(gk))};
        }
        case OpKind::Relu: {
            auto xv = data_of<S>(node.saved[0]);
            std::vector<S> gx(xv.size());
            for (std::size_t i = 0; i < xv.size(); ++i) {
                gx[i] = xv[i] > S(0) ? g[i] : S(0);
            }
            return {Tensor(node.saved[0].shape(), std::move(gx))};
        }
        case OpKind::LeakyRelu: {
            auto xv = data_of<S>(node.saved[0]);
            S a = static_cast<S>(node.attrs.alpha);
            std::vector<S> gx(xv.size());
            for (std::size_t i = 0; i < xv.size(); ++i) {
                gx[i] = xv[i] > S(0) ? g[i] : a * g[i];
            }
            return {Tensor(node.saved[0].shape(), std::move(gx))};
        }
        case OpKind::Sigmoid: {
            auto yv = data_of<S>(node.saved[1]);  // cached output
            std::vector<S> gx(yv.size());
            for (std::size_t i = 0; i < yv.size(); ++i) {
                gx[i] = g[i] * yv[i] * (S(1) - yv[i]);
            }
            return {Tensor(node.saved[0].shape(), std::move(gx))};
        }
        case OpKind::Exp: {
            auto yv = data_of<S>(node.saved[1]);
            std::vector<S> gx(yv.size());
            for (std::size_t i = 0; i < yv.size(); ++i) gx[i] = g[i] * yv[i];
            return {Tensor(node.saved[0].shape(), std::move(gx))};
        }
        case OpKind::Add:
            return {gout, gout};
        case OpKind::Sub: {
            std::vector<S> gb(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
            return {gout, Tensor(node.saved[1].shape(), std::move(gb))};
        }
        case OpKind::Mul: {
            auto av = data_of<S>(node.saved[0]);
            auto bv = data_of<S>(node.saved[1]);
            std::vector<S> ga(g.size()), gb(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] = g[i] * bv[i];
                gb[i] = g[i] * av[i];
            }
            return {Tensor(node.saved[0].shape(), std::move(ga)),
                    Tensor(node.saved[1].shape(), std::move(gb))};
        }
        case OpKind::Scale: {
            S f = static_cast<S>(node.attrs.alpha);
            std::vector<S> gx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] = f * g[i];
            return {Tensor(node.saved[0].shape(), std::move(gx))};
        }
        case OpKind::Concat: {
            int axis = node.attrs.axis;
            const Shape& first = node.saved[0].shape();
            std::int64_t outer = 1, inner = 1, axis_total = 0;
            for (int i = 0; i < axis; ++i) outer *= first[i];
            for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
            for (const Tensor& t : node.saved) axis_total += t.shape()[axis];
            std::vector<Tensor> grads;
            grads.reserve(node.saved.size());
            std::int64_t offset = 0;
            for (const Tensor& t : node.saved) {
                std::int64_t part_axis = t.shape()[axis];
                std::vector<S> gp(static_cast<std::size_t>(t.size()));
                for (std::int64_t o = 0; o < outer; ++o) {
                    const S* src = g.data() + (o * axis_total + offset) * inner;
                    std::copy(src, src + part_axis * inner,
                              gp.data() + o * part_axis * inner);
                }
                grads.push_back(Tensor(t.shape(), std::move(gp)));
                offset += part_axis;
            }
            return grads;
        }
        case OpKind::Slice: {
            const Shape& in_shape = node.attrs.saved_shape;
            int axis = node.attrs.axis;
            std::int64_t outer = 1, inner = 1;
            for (int i = 0; i < axis; ++i) outer *= in_shape[i];
            for (std::size_t i = axis + 1; i < in_shape.size(); ++i) {
                inner *= in_shape[i];
            }
            std::int64_t axis_len = in_shape[axis];
            std::vector<S> gx(static_cast<std::size_t>(numel(in_shape)), S(0));
            for (std::int64_t o = 0; o < outer; ++o) {
                S* dst = gx.data() + (o * axis_len + node.attrs.start) * inner;
                const S* src = g.data() + o * node.attrs.length * inner;
                std::copy(src, src + node.attrs.length * inner, dst);
            }
            return {Tensor(in_shape, std::move(gx))};
        }
        case OpKind::Reshape: {
            return {Tensor(node.attrs.saved_shape,
                           std::vector<S>(g.begin(), g.end()))};
        }
        case OpKind::Sum: {
            S gv = g[0];
            std::vector<S> gx(static_cast<std::size_t>(numel(node.attrs.saved_shape)), gv);
            return {Tensor(node.attrs.saved_shape, std::move(gx))};
        }
        case OpKind::AddRowBias: {
            const Tensor& b = node.saved[1];
            std::int64_t rows = node.saved[0].dim(0), cols = node.saved[0].dim(1);
            std::vector<S> gb(static_cast<std::size_t>(cols), S(0));
            for (std::int64_t r = 0; r < rows; ++r) {
                const S* src = g.data() + r * cols;
                for (std::int64_t c = 0; c < cols; ++c) gb[c] += src[c];
            }
            return {gout, Tensor(b.shape(), std::move(gb))};
        }
        case OpKind::AddChannelBias: {
            const Tensor& x = node.saved[0];
            const Tensor& b = node.saved[1];
            std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
            std::vector<S> gb(static_cast<std::size_t>(c), S(0));
            for (std::int64_t i = 0; i < n; ++i) {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const S* src = g.data() + (i * c + ch) * hw;
                    S acc = S(0);
                    for (std::int64_t p = 0; p < hw; ++p) acc += src[p];
                    gb[ch] += acc;
                }
            }
            return {gout, Tensor(b.shape(), std::move(gb))};
        }
        case OpKind::SoftmaxXent: {
            const Tensor& y = node.saved[1];
            const Tensor& probs = node.saved[2];
            std::int64_t n = y.dim(0);
            auto pv = data_of<S>(probs);
            auto yv = data_of<S>(y);
            S gv = g[0] / static_cast<S>(n);
            std::vector<S> gx(pv.size());
            for (std::size_t i = 0; i < pv.size(); ++i) {
                gx[i] = gv * (pv[i] - yv[i]);
            }
            return {Tensor(y.shape(), std::move(gx)), Tensor{}};
        }
    }
    return {};
}

}  // namespace

std::unordered_map<int, Tensor> Tape::backward(const Var& loss) const {
    if (loss.tape() != this) {
        throw ContractError("backward: loss does not belong to this tape");
    }
    if (loss.value().size() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " +
                            shape_to_string(loss.value().shape()));
    }
    NumericMode mode = loss.value().mode();
    std::vector<Tensor> grads(nodes_.size());
    if (loss.node() >= 0) {
        grads[loss.node()] = Tensor::ones({1}, mode);
        for (int id = loss.node(); id >= 0; --id) {
            if (!grads[id].defined()) continue;
            const TapeNode& node = nodes_[id];
            if (node.op_kind == OpKind::Leaf) continue;
            std::vector<Tensor> slot_grads =
                mode == NumericMode::f32
                    ? backward_op<float>(node, grads[id])
                    : backward_op<double>(node, grads[id]);
            for (std::size_t s = 0; s < node.parents.size(); ++s) {
                int p = node.parents[s];
                if (p < 0 || !slot_grads[s].defined()) continue;
                grads[p] = accumulate(std::move(grads[p]), slot_grads[s]);
            }
            grads[id] = Tensor{};  // release memory as we walk back
        }
    }
    std::unordered_map<int, Tensor> result;
    result.reserve(leaf_ids_.size());
    for (int id : leaf_ids_) {
        if (grads[id].defined()) {
            result.emplace(id, std::move(grads[id]));
        } else {
            result.emplace(id, Tensor::zeros(nodes_[id].saved[0].shape(), mode));
        }
    }
    return result;
}

double grad_check(const TapeFn& fn, const std::vector<Tensor>& inputs,
                  double eps) {
    if (engine_mode() != NumericMode::f64) {
        throw ContractError("grad_check requires the 64-bit engine mode");
    }
    for (const Tensor& t : inputs) {
        if (t.mode() != NumericMode::f64) {
            throw ContractError("grad_check inputs must be 64-bit tensors");
        }
    }

    Tape tape;
    std::vector<Var> leaves;
    std::vector<int> leaf_nodes;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        Var v = tape.leaf(t.with_requires_grad(true));
        leaf_nodes.push_back(v.node());
        leaves.push_back(std::move(v));
    }
    Var loss = fn(tape, leaves);
    auto grads = tape.backward(loss);

    auto eval = [&fn](const std::vector<Tensor>& points) {
        Tape scratch;
        std::vector<Var> vars;
        vars.reserve(points.size());
        for (const Tensor& t : points) {
            vars.push_back(scratch.leaf(t.with_requires_grad(true)));
        }
        Var out = fn(scratch, vars);
        if (out.value().size() != 1) {
            throw ContractError("grad_check: function must return a scalar");
        }
        return out.value().at(0);
    };

    double max_rel = 0.0;
    std::vector<Tensor> points = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& analytic = grads.at(leaf_nodes[i]);
        std::vector<double> base = inputs[i].to_vector();
        for (std::size_t c = 0; c < base.size(); ++c) {
            std::vector<double> plus = base, minus = base;
            plus[c] += eps;
            minus[c] -= eps;
            points[i] = Tensor(inputs[i].shape(), std::move(plus));
            double f_plus = eval(points);
            points[i] = Tensor(inputs[i].shape(), std::move(minus));
            double f_minus = eval(points);
            points[i] = inputs[i];
            double numeric = (f_plus - f_minus) / (2.0 * eps);
            double a = analytic.at(static_cast<std::int64_t>(c));
            double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace bafo
