#pragma once

// Low-level dense kernels shared by the tape operations. Everything here is
// single-threaded with a fixed summation order, so results are reproducible
// run to run. Convolutions go through im2col plus a matmul rather than
// direct loops; there is exactly one code path per precision.

#include <cstdint>
#include <vector>

namespace bafo::kernels {

// C[M,N] = A[M,K] * B[K,N]
template <typename S>
void matmul_nn(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        S* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) crow[j] = S(0);
        const S* arow = a + i * k;
        for (std::int64_t p = 0; p < k; ++p) {
            S av = arow[p];
            const S* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] = A[M,K] * B[N,K]^T
template <typename S>
void matmul_nt(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        S* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const S* brow = b + j * k;
            S acc = S(0);
            for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

// C[K,N] = A[M,K]^T * B[M,N]
template <typename S>
void matmul_tn(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n) {
    for (std::int64_t i = 0; i < k * n; ++i) c[i] = S(0);
    for (std::int64_t p = 0; p < m; ++p) {
        const S* arow = a + p * k;
        const S* brow = b + p * n;
        for (std::int64_t i = 0; i < k; ++i) {
            S av = arow[i];
            S* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// Geometry of one convolution. in_h/in_w describe the conv2d input side;
// out_h/out_w the conv2d output side. conv_transpose2d reuses the same
// record with its own input playing the out_* role.
struct ConvDims {
    std::int64_t batch;
    std::int64_t in_ch;     // C
    std::int64_t in_h, in_w;
    std::int64_t filters;   // F
    std::int64_t kh, kw;
    std::int64_t stride;
    std::int64_t padding;
    std::int64_t out_h, out_w;

    std::int64_t patch() const { return in_ch * kh * kw; }
    std::int64_t out_positions() const { return batch * out_h * out_w; }
};

// cols[(n,oh,ow), (c,i,j)] = in[n,c,oh*s-p+i,ow*s-p+j], zero outside.
template <typename S>
void im2col(const S* in, const ConvDims& d, S* cols) {
    const std::int64_t patch = d.patch();
    for (std::int64_t n = 0; n < d.batch; ++n) {
        const S* img = in + n * d.in_ch * d.in_h * d.in_w;
        for (std::int64_t oh = 0; oh < d.out_h; ++oh) {
            for (std::int64_t ow = 0; ow < d.out_w; ++ow) {
                S* dst = cols + ((n * d.out_h + oh) * d.out_w + ow) * patch;
                for (std::int64_t c = 0; c < d.in_ch; ++c) {
                    const S* chan = img + c * d.in_h * d.in_w;
                    for (std::int64_t i = 0; i < d.kh; ++i) {
                        std::int64_t y = oh * d.stride - d.padding + i;
                        for (std::int64_t j = 0; j < d.kw; ++j) {
                            std::int64_t x = ow * d.stride - d.padding + j;
                            *dst++ = (y >= 0 && y < d.in_h && x >= 0 && x < d.in_w)
                                         ? chan[y * d.in_w + x]
                                         : S(0);
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds column gradients back into image layout.
template <typename S>
void col2im(const S* cols, const ConvDims& d, S* in_grad) {
    const std::int64_t patch = d.patch();
    const std::int64_t img_len = d.in_ch * d.in_h * d.in_w;
    for (std::int64_t i = 0; i < d.batch * img_len; ++i) in_grad[i] = S(0);
    for (std::int64_t n = 0; n < d.batch; ++n) {
        S* img = in_grad + n * img_len;
        for (std::int64_t oh = 0; oh < d.out_h; ++oh) {
            for (std::int64_t ow = 0; ow < d.out_w; ++ow) {
                const S* src = cols + ((n * d.out_h + oh) * d.out_w + ow) * patch;
                for (std::int64_t c = 0; c < d.in_ch; ++c) {
                    S* chan = img + c * d.in_h * d.in_w;
                    for (std::int64_t i = 0; i < d.kh; ++i) {
                        std::int64_t y = oh * d.stride - d.padding + i;
                        for (std::int64_t j = 0; j < d.kw; ++j) {
                            std::int64_t x = ow * d.stride - d.padding + j;
                            S v = *src++;
                            if (y >= 0 && y < d.in_h && x >= 0 && x < d.in_w) {
                                chan[y * d.in_w + x] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

// Kernel [F,C,kh,kw] reshaped to the [patch, F] matrix im2col multiplies by.
template <typename S>
std::vector<S> kernel_to_matrix(const S* k, const ConvDims& d) {
    const std::int64_t patch = d.patch();
    std::vector<S> kmat(static_cast<std::size_t>(patch * d.filters));
    for (std::int64_t f = 0; f < d.filters; ++f) {
        for (std::int64_t p = 0; p < patch; ++p) {
            kmat[p * d.filters + f] = k[f * patch + p];
        }
    }
    return kmat;
}

template <typename S>
void matrix_to_kernel(const S* kmat, const ConvDims& d, S* k) {
    const std::int64_t patch = d.patch();
    for (std::int64_t f = 0; f < d.filters; ++f) {
        for (std::int64_t p = 0; p < patch; ++p) {
            k[f * patch + p] = kmat[p * d.filters + f];
        }
    }
}

// out_mat rows are (n,oh,ow) positions; tensor layout wants [N,F,OH,OW].
template <typename S>
void positions_to_nchw(const S* out_mat, const ConvDims& d, S* out) {
    for (std::int64_t n = 0; n < d.batch; ++n) {
        for (std::int64_t oh = 0; oh < d.out_h; ++oh) {
            for (std::int64_t ow = 0; ow < d.out_w; ++ow) {
                const S* row = out_mat + ((n * d.out_h + oh) * d.out_w + ow) * d.filters;
                for (std::int64_t f = 0; f < d.filters; ++f) {
                    out[((n * d.filters + f) * d.out_h + oh) * d.out_w + ow] = row[f];
                }
            }
        }
    }
}

template <typename S>
void nchw_to_positions(const S* t, const ConvDims& d, S* out_mat) {
    for (std::int64_t n = 0; n < d.batch; ++n) {
        for (std::int64_t f = 0; f < d.filters; ++f) {
            const S* plane = t + (n * d.filters + f) * d.out_h * d.out_w;
            for (std::int64_t oh = 0; oh < d.out_h; ++oh) {
                for (std::int64_t ow = 0; ow < d.out_w; ++ow) {
                    out_mat[((n * d.out_h + oh) * d.out_w + ow) * d.filters + f] =
                        plane[oh * d.out_w + ow];
                }
            }
        }
    }
}

// y = conv2d(x, k): im2col, multiply by the kernel matrix, reorder.
template <typename S>
void conv_forward(const S* x, const S* k, const ConvDims& d, S* y) {
    std::vector<S> cols(static_cast<std::size_t>(d.out_positions() * d.patch()));
    im2col(x, d, cols.data());
    std::vector<S> kmat = kernel_to_matrix(k, d);
    std::vector<S> out_mat(static_cast<std::size_t>(d.out_positions() * d.filters));
    matmul_nn(cols.data(), kmat.data(), out_mat.data(), d.out_positions(),
              d.patch(), d.filters);
    positions_to_nchw(out_mat.data(), d, y);
}

// gx = adjoint of conv_forward in x, applied to gy. Also the forward pass of
// conv_transpose2d.
template <typename S>
void conv_input_grad(const S* gy, const S* k, const ConvDims& d, S* gx) {
    std::vector<S> gy_mat(static_cast<std::size_t>(d.out_positions() * d.filters));
    nchw_to_positions(gy, d, gy_mat.data());
    std::vector<S> kmat = kernel_to_matrix(k, d);
    std::vector<S> gcols(static_cast<std::size_t>(d.out_positions() * d.patch()));
    // gcols = gy_mat [P,F] * kmat^T [F,patch]
    matmul_nt(gy_mat.data(), kmat.data(), gcols.data(), d.out_positions(),
              d.filters, d.patch());
    col2im(gcols.data(), d, gx);
}

// gk = adjoint of conv_forward in k: cols(x)^T * gy_mat, reordered.
template <typename S>
void conv_kernel_grad(const S* x, const S* gy, const ConvDims& d, S* gk) {
    std::vector<S> cols(static_cast<std::size_t>(d.out_positions() * d.patch()));
    im2col(x, d, cols.data());
    std::vector<S> gy_mat(static_cast<std::size_t>(d.out_positions() * d.filters));
    nchw_to_positions(gy, d, gy_mat.data());
    std::vector<S> gk_mat(static_cast<std::size_t>(d.patch() * d.filters));
    matmul_tn(cols.data(), gy_mat.data(), gk_mat.data(), d.out_positions(),
              d.patch(), d.filters);
    matrix_to_kernel(gk_mat.data(), d, gk);
}

}  // namespace bafo::kernels
