#pragma once

// Micro-CNN patch descriptor with hand-written reverse mode:
//   Conv(5x5, 32) -> Tanh -> MaxPool(2x2, stride 2) -> Conv(3x3, 64) -> Tanh -> FC(256)
// on 16x16xc patches (16 -> 12 -> 6 -> 4 -> 1024 -> 256). All convolutions are valid, stride 1.
//
// Convolutions run as im2col + GEMM over a whole batch. Weight matrices are row-major with
// row index (ky * K + kx) * C_in + c_in and column index c_out; the dense layer is
// (1024 x 256) with input index (oy * 4 + ox) * 64 + c.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "jalign/error.hpp"
#include "jalign/sampling.hpp"

namespace jalign {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using Descriptor = Eigen::VectorXd;

inline constexpr int kDescriptorDim = 256;

namespace arch {
inline constexpr int kInput = kPatchSize;  // 16
inline constexpr int kConv1Kernel = 5;
inline constexpr int kConv1Out = 32;
inline constexpr int kConv1Size = kInput - kConv1Kernel + 1;  // 12
inline constexpr int kPoolSize = kConv1Size / 2;              // 6
inline constexpr int kConv2Kernel = 3;
inline constexpr int kConv2Out = 64;
inline constexpr int kConv2Size = kPoolSize - kConv2Kernel + 1;  // 4
inline constexpr int kFcIn = kConv2Size * kConv2Size * kConv2Out;  // 1024
}  // namespace arch

enum class SharingMode : std::uint32_t { Siamese = 0, PseudoSiamese = 1 };
enum class Branch { First, Second };

inline const char* to_string(SharingMode m) { return m == SharingMode::Siamese ? "siamese" : "pseudo"; }

struct ConvLayer {
    int kernel = 0;
    int in_channels = 0;
    int out_channels = 0;
    Mat weight;  // (kernel*kernel*in) x out
    Vec bias;

    static ConvLayer zeros(int k, int in, int out) {
        return {k, in, out, Mat::Zero(k * k * in, out), Vec::Zero(out)};
    }
};

struct DenseLayer {
    Mat weight;  // in x out
    Vec bias;

    static DenseLayer zeros(int in, int out) { return {Mat::Zero(in, out), Vec::Zero(out)}; }
};

/// All network parameters. Gradients use the same type.
struct NetworkWeights {
    SharingMode mode = SharingMode::Siamese;
    int channels = 1;
    ConvLayer conv1_a;
    std::optional<ConvLayer> conv1_b;  // present only in pseudo-siamese mode
    ConvLayer conv2;
    DenseLayer fc;

    static NetworkWeights zeros(int channels, SharingMode mode) {
        if (channels < 1) throw Error(ErrorKind::InvalidParameter, "channel count must be at least 1");
        using namespace arch;
        NetworkWeights w;
        w.mode = mode;
        w.channels = channels;
        w.conv1_a = ConvLayer::zeros(kConv1Kernel, channels, kConv1Out);
        if (mode == SharingMode::PseudoSiamese) w.conv1_b = w.conv1_a;
        w.conv2 = ConvLayer::zeros(kConv2Kernel, kConv1Out, kConv2Out);
        w.fc = DenseLayer::zeros(kFcIn, kDescriptorDim);
        return w;
    }

    NetworkWeights zeros_like() const { return zeros(channels, mode); }

    const ConvLayer& conv1(Branch b) const {
        return (b == Branch::Second && conv1_b) ? *conv1_b : conv1_a;
    }
    ConvLayer& conv1(Branch b) { return (b == Branch::Second && conv1_b) ? *conv1_b : conv1_a; }

    /// Visits every parameter block in declaration order: conv1_a (weight, bias),
    /// conv1_b (weight, bias) if present, conv2 (weight, bias), fc (weight, bias).
    template <class F>
    void for_each_block(F&& f) {
        auto visit = [&](const char* name, auto& m) { f(name, std::span<double>(m.data(), m.size())); };
        visit("conv1_a.weight", conv1_a.weight);
        visit("conv1_a.bias", conv1_a.bias);
        if (conv1_b) {
            visit("conv1_b.weight", conv1_b->weight);
            visit("conv1_b.bias", conv1_b->bias);
        }
        visit("conv2.weight", conv2.weight);
        visit("conv2.bias", conv2.bias);
        visit("fc.weight", fc.weight);
        visit("fc.bias", fc.bias);
    }

    template <class F>
    void for_each_block(F&& f) const {
        const_cast<NetworkWeights*>(this)->for_each_block(
            [&](const char* name, std::span<double> s) { f(name, std::span<const double>(s.data(), s.size())); });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each_block([&](const char*, std::span<const double> s) { n += s.size(); });
        return n;
    }

    bool all_finite() const {
        bool ok = true;
        for_each_block([&](const char*, std::span<const double> s) {
            for (double v : s) ok = ok && std::isfinite(v);
        });
        return ok;
    }
};

/// Uniform in +-1/sqrt(fan_in), zero biases. Both first-layer copies start equal.
inline NetworkWeights init_weights(std::uint64_t seed, int channels, SharingMode mode) {
    NetworkWeights w = NetworkWeights::zeros(channels, mode);
    std::mt19937_64 rng(seed);
    auto fill = [&](Mat& m) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows()));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    };
    fill(w.conv1_a.weight);
    fill(w.conv2.weight);
    fill(w.fc.weight);
    if (w.conv1_b) w.conv1_b = w.conv1_a;
    return w;
}

/// Cached activations of one batched forward pass.
struct ForwardCache {
    Branch branch = Branch::First;
    int batch = 0;
    Mat cols1;                  // (B*144) x (25c)
    Mat act1;                   // (B*144) x 32, post-tanh
    Mat pooled;                 // (B*36) x 32
    std::vector<int> argmax;    // (B*36*32) source row in act1
    Mat cols2;                  // (B*16) x 288
    Mat act2;                   // (B*16) x 64, post-tanh
    Mat output;                 // B x 256
};

namespace detail {

inline void tanh_inplace(Mat& m) {
    // 1 - 2 / (exp(2x) + 1) saturates cleanly to +-1 for large |x|.
    m = (1.0 - 2.0 / ((2.0 * m.array()).exp() + 1.0)).matrix();
}

inline void im2col(const double* src, int batch, int in_size, int channels, int kernel, Mat& cols) {
    const int out = in_size - kernel + 1;
    cols.resize(static_cast<Eigen::Index>(batch) * out * out, kernel * kernel * channels);
    const std::size_t row_len = static_cast<std::size_t>(kernel) * channels;
    const std::size_t img_len = static_cast<std::size_t>(in_size) * in_size * channels;
    for (int b = 0; b < batch; ++b) {
        const double* img = src + b * img_len;
        for (int oy = 0; oy < out; ++oy)
            for (int ox = 0; ox < out; ++ox) {
                double* dst = cols.row((static_cast<Eigen::Index>(b) * out + oy) * out + ox).data();
                for (int ky = 0; ky < kernel; ++ky)
                    std::memcpy(dst + ky * row_len, img + ((oy + ky) * in_size + ox) * channels,
                                row_len * sizeof(double));
            }
    }
}

inline void col2im_add(const Mat& cols, int batch, int in_size, int channels, int kernel, double* dst) {
    const int out = in_size - kernel + 1;
    const std::size_t row_len = static_cast<std::size_t>(kernel) * channels;
    const std::size_t img_len = static_cast<std::size_t>(in_size) * in_size * channels;
    for (int b = 0; b < batch; ++b) {
        double* img = dst + b * img_len;
        for (int oy = 0; oy < out; ++oy)
            for (int ox = 0; ox < out; ++ox) {
                const double* src = cols.row((static_cast<Eigen::Index>(b) * out + oy) * out + ox).data();
                for (int ky = 0; ky < kernel; ++ky) {
                    double* d = img + ((oy + ky) * in_size + ox) * channels;
                    const double* s = src + ky * row_len;
                    for (std::size_t i = 0; i < row_len; ++i) d[i] += s[i];
                }
            }
    }
}

}  // namespace detail

/// Batched forward into `fc`, reusing its storage. `inputs` holds one flattened
/// 16x16xc patch per row.
inline void forward_batch(const Mat& inputs, const NetworkWeights& w, Branch branch, ForwardCache& fc) {
    using namespace arch;
    const int c = w.channels;
    if (inputs.cols() != kInput * kInput * c)
        throw Error(ErrorKind::InvalidInput, "patch batch does not match network input shape");
    fc.branch = branch;
    fc.batch = static_cast<int>(inputs.rows());
    const int B = fc.batch;
    const ConvLayer& c1 = w.conv1(branch);

    detail::im2col(inputs.data(), B, kInput, c, kConv1Kernel, fc.cols1);
    fc.act1.resize(fc.cols1.rows(), kConv1Out);
    fc.act1.noalias() = fc.cols1 * c1.weight;
    fc.act1.rowwise() += c1.bias.transpose();
    detail::tanh_inplace(fc.act1);

    fc.pooled.resize(static_cast<Eigen::Index>(B) * kPoolSize * kPoolSize, kConv1Out);
    fc.argmax.resize(static_cast<std::size_t>(fc.pooled.size()));
    for (int b = 0; b < B; ++b)
        for (int py = 0; py < kPoolSize; ++py)
            for (int px = 0; px < kPoolSize; ++px) {
                const Eigen::Index prow = (static_cast<Eigen::Index>(b) * kPoolSize + py) * kPoolSize + px;
                for (int ch = 0; ch < kConv1Out; ++ch) {
                    int best_row = -1;
                    double best = 0.0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const int r = (b * kConv1Size + 2 * py + dy) * kConv1Size + 2 * px + dx;
                            const double v = fc.act1(r, ch);
                            if (best_row < 0 || v > best) {  // first max wins on ties
                                best = v;
                                best_row = r;
                            }
                        }
                    fc.pooled(prow, ch) = best;
                    fc.argmax[prow * kConv1Out + ch] = best_row;
                }
            }

    detail::im2col(fc.pooled.data(), B, kPoolSize, kConv1Out, kConv2Kernel, fc.cols2);
    fc.act2.resize(fc.cols2.rows(), kConv2Out);
    fc.act2.noalias() = fc.cols2 * w.conv2.weight;
    fc.act2.rowwise() += w.conv2.bias.transpose();
    detail::tanh_inplace(fc.act2);

    const Eigen::Map<const Mat> flat(fc.act2.data(), B, kFcIn);
    fc.output.resize(B, kDescriptorDim);
    fc.output.noalias() = flat * w.fc.weight;
    fc.output.rowwise() += w.fc.bias.transpose();
}

inline ForwardCache forward_batch(const Mat& inputs, const NetworkWeights& w, Branch branch) {
    ForwardCache fc;
    forward_batch(inputs, w, branch, fc);
    return fc;
}

/// Temporaries of backward_batch, kept between calls to avoid reallocation.
struct BackwardScratch {
    Mat d_act2, d_cols2, d_pooled, d_act1, d_cols1;
};

/// Accumulates d(sum_b upstream_b . f(x_b)) / d(weights) into `grad`; writes the
/// input gradient to `grad_inputs` when non-null.
inline void backward_batch(const ForwardCache& fc, const NetworkWeights& w, const Mat& upstream,
                           NetworkWeights& grad, Mat* grad_inputs, BackwardScratch& s) {
    using namespace arch;
    const int B = fc.batch;
    if (upstream.rows() != B || upstream.cols() != kDescriptorDim)
        throw Error(ErrorKind::InvalidInput, "upstream gradient shape mismatch");
    if (grad.mode != w.mode || grad.channels != w.channels)
        throw Error(ErrorKind::InvalidInput, "gradient accumulator does not match the network");

    const Eigen::Map<const Mat> flat(fc.act2.data(), B, kFcIn);
    grad.fc.weight.noalias() += flat.transpose() * upstream;
    grad.fc.bias += upstream.colwise().sum().transpose();

    s.d_act2.resize(static_cast<Eigen::Index>(B) * kConv2Size * kConv2Size, kConv2Out);
    Eigen::Map<Mat>(s.d_act2.data(), B, kFcIn).noalias() = upstream * w.fc.weight.transpose();
    s.d_act2.array() *= 1.0 - fc.act2.array().square();

    grad.conv2.weight.noalias() += fc.cols2.transpose() * s.d_act2;
    grad.conv2.bias += s.d_act2.colwise().sum().transpose();
    s.d_cols2.resize(s.d_act2.rows(), fc.cols2.cols());
    s.d_cols2.noalias() = s.d_act2 * w.conv2.weight.transpose();
    s.d_pooled.setZero(fc.pooled.rows(), fc.pooled.cols());
    detail::col2im_add(s.d_cols2, B, kPoolSize, kConv1Out, kConv2Kernel, s.d_pooled.data());

    s.d_act1.setZero(fc.act1.rows(), fc.act1.cols());
    for (Eigen::Index r = 0; r < s.d_pooled.rows(); ++r)
        for (int ch = 0; ch < kConv1Out; ++ch)
            s.d_act1(fc.argmax[r * kConv1Out + ch], ch) += s.d_pooled(r, ch);
    s.d_act1.array() *= 1.0 - fc.act1.array().square();

    ConvLayer& g1 = grad.conv1(fc.branch);
    g1.weight.noalias() += fc.cols1.transpose() * s.d_act1;
    g1.bias += s.d_act1.colwise().sum().transpose();

    if (grad_inputs) {
        const ConvLayer& c1 = w.conv1(fc.branch);
        s.d_cols1.resize(s.d_act1.rows(), fc.cols1.cols());
        s.d_cols1.noalias() = s.d_act1 * c1.weight.transpose();
        grad_inputs->setZero(B, kInput * kInput * w.channels);
        detail::col2im_add(s.d_cols1, B, kInput, w.channels, kConv1Kernel, grad_inputs->data());
    }
}

inline void backward_batch(const ForwardCache& fc, const NetworkWeights& w, const Mat& upstream,
                           NetworkWeights& grad, Mat* grad_inputs = nullptr) {
    BackwardScratch s;
    backward_batch(fc, w, upstream, grad, grad_inputs, s);
}

inline void check_patch(const Patch& patch, const NetworkWeights& w) {
    if (patch.n != kPatchSize || patch.channels != w.channels || patch.data.size() != patch.size())
        throw Error(ErrorKind::InvalidInput, "patch must be 16x16 with the network's channel count");
}

inline Mat patches_to_batch(std::span<const Patch> patches, int channels) {
    Mat m(static_cast<Eigen::Index>(patches.size()), kPatchSize * kPatchSize * channels);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        if (patches[i].n != kPatchSize || patches[i].channels != channels)
            throw Error(ErrorKind::InvalidInput, "patch must be 16x16 with the network's channel count");
        std::memcpy(m.row(static_cast<Eigen::Index>(i)).data(), patches[i].data.data(),
                    patches[i].data.size() * sizeof(double));
    }
    return m;
}

inline Descriptor forward(const Patch& patch, const NetworkWeights& w, Branch branch) {
    check_patch(patch, w);
    const Patch one[1] = {patch};
    return forward_batch(patches_to_batch(one, w.channels), w, branch).output.row(0).transpose();
}

struct BackwardResult {
    NetworkWeights grad_weights;
    Patch grad_patch;
};

inline BackwardResult backward(const Patch& patch, const NetworkWeights& w, Branch branch,
                               const Eigen::Ref<const Vec>& upstream) {
    check_patch(patch, w);
    if (upstream.size() != kDescriptorDim) throw Error(ErrorKind::InvalidInput, "upstream must be 256-dimensional");
    const Patch one[1] = {patch};
    const ForwardCache fc = forward_batch(patches_to_batch(one, w.channels), w, branch);
    BackwardResult r{w.zeros_like(), Patch(kPatchSize, w.channels)};
    Mat gin;
    backward_batch(fc, w, Mat(upstream.transpose()), r.grad_weights, &gin);
    std::memcpy(r.grad_patch.data.data(), gin.data(), r.grad_patch.data.size() * sizeof(double));
    return r;
}

// Weight file layout (all integers little-endian):
//   bytes 0-3   magic "JALW"
//   bytes 4-7   uint32 version (1)
//   bytes 8-11  uint32 mode (0 = siamese, 1 = pseudo-siamese)
//   bytes 12-15 uint32 channel count
//   then every parameter block as IEEE-754 binary64, little-endian, in for_each_block order.
inline constexpr char kWeightsMagic[4] = {'J', 'A', 'L', 'W'};
inline constexpr std::uint32_t kWeightsVersion = 1;

namespace detail {
template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}
}  // namespace detail

inline void save_weights(const std::string& path, const NetworkWeights& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    out.write(kWeightsMagic, 4);
    const std::uint32_t header[3] = {detail::to_little(kWeightsVersion),
                                     detail::to_little(static_cast<std::uint32_t>(w.mode)),
                                     detail::to_little(static_cast<std::uint32_t>(w.channels))};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    w.for_each_block([&](const char*, std::span<const double> s) {
        for (double v : s) {
            const std::uint64_t bits = detail::to_little(std::bit_cast<std::uint64_t>(v));
            out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
        }
    });
    if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

inline NetworkWeights load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    char magic[4];
    std::uint32_t header[3];
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in || std::memcmp(magic, kWeightsMagic, 4) != 0) throw Error(ErrorKind::Io, "not a weight file: " + path);
    const std::uint32_t version = detail::to_little(header[0]);
    const std::uint32_t mode = detail::to_little(header[1]);
    const std::uint32_t channels = detail::to_little(header[2]);
    if (version != kWeightsVersion || mode > 1 || channels < 1 || channels > 64)
        throw Error(ErrorKind::Io, "unsupported weight file header in " + path);
    NetworkWeights w = NetworkWeights::zeros(static_cast<int>(channels), static_cast<SharingMode>(mode));
    w.for_each_block([&](const char*, std::span<double> s) {
        for (double& v : s) {
            std::uint64_t bits = 0;
            in.read(reinterpret_cast<char*>(&bits), sizeof(bits));
            v = std::bit_cast<double>(detail::to_little(bits));
        }
    });
    if (!in) throw Error(ErrorKind::Io, "truncated weight file " + path);
    if (in.peek() != EOF) throw Error(ErrorKind::Io, "trailing bytes in weight file " + path);
    return w;
}

}  // namespace jalign
