#include "risamc/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <omp.h>

#include "risamc/error.hpp"

namespace risamc::nn {

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>; // col-major

template <typename S>
using MapM = Eigen::Map<Mat<S>>;
template <typename S>
using CMapM = Eigen::Map<const Mat<S>>;
template <typename S>
using MapRow =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using CMapRow =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct BlockDims {
    int c_in = 0;
    int c_out = 0;
    int64_t len = 0; // conv output length (== input length, same padding)
};

std::vector<BlockDims> block_dims(const Architecture& a) {
    std::vector<BlockDims> d(static_cast<size_t>(a.blocks()));
    int c = a.in_channels;
    int64_t len = a.input_len;
    for (int i = 0; i < a.blocks(); ++i) {
        d[static_cast<size_t>(i)] = {c, a.conv_filters[static_cast<size_t>(i)], len};
        c = a.conv_filters[static_cast<size_t>(i)];
        len /= 2;
    }
    return d;
}

} // namespace

void Architecture::validate() const {
    if (in_channels <= 0 || input_len <= 0 || num_classes <= 0 || kernel <= 0)
        throw ShapeMismatch("architecture dimensions must be positive");
    if ((input_len % (1 << blocks())) != 0)
        throw ShapeMismatch("input_len must be divisible by 2^blocks for the pooling stack");
    for (int f : conv_filters)
        if (f <= 0)
            throw ShapeMismatch("conv filter counts must be positive");
}

int64_t Architecture::parameter_count() const {
    int64_t n = 0;
    int c = in_channels;
    for (int f : conv_filters) {
        n += static_cast<int64_t>(f) * c * kernel; // conv weights (no bias, BN follows)
        n += 2 * f;                                // gamma, beta
        c = f;
    }
    n += static_cast<int64_t>(num_classes) * fc_inputs() + num_classes;
    return n;
}

void TrainConfig::validate() const {
    if (batch_size < 1)
        throw Error(ExitCode::data, "batch_size must be >= 1");
    if (initial_lr <= 0.0)
        throw Error(ExitCode::data, "initial_lr must be > 0");
    if (lr_drop_factor <= 0.0 || lr_drop_period_epochs <= 0 || max_epochs <= 0)
        throw Error(ExitCode::data, "invalid learning-rate schedule");
    if (momentum < 0.0 || momentum >= 1.0)
        throw Error(ExitCode::data, "momentum must be in [0, 1)");
}

template <typename S>
std::vector<NamedParam<S>> trainable_params(Model<S>& m) {
    std::vector<NamedParam<S>> out;
    const auto dims = block_dims(m.arch);
    for (size_t i = 0; i < m.blocks.size(); ++i) {
        const std::string tag = "conv" + std::to_string(i + 1);
        auto& b = m.blocks[i];
        out.push_back({tag + ".w", &b.w,
                       {dims[i].c_out, m.arch.kernel, dims[i].c_in}});
        out.push_back({"bn" + std::to_string(i + 1) + ".gamma", &b.gamma, {dims[i].c_out}});
        out.push_back({"bn" + std::to_string(i + 1) + ".beta", &b.beta, {dims[i].c_out}});
    }
    out.push_back({"fc.w", &m.fc_w, {m.arch.num_classes, m.arch.fc_inputs()}});
    out.push_back({"fc.b", &m.fc_b, {m.arch.num_classes}});
    return out;
}

template <typename S>
std::vector<NamedParam<S>> state_buffers(Model<S>& m) {
    std::vector<NamedParam<S>> out;
    const auto dims = block_dims(m.arch);
    for (size_t i = 0; i < m.blocks.size(); ++i) {
        auto& b = m.blocks[i];
        out.push_back({"bn" + std::to_string(i + 1) + ".run_mean", &b.run_mean,
                       {dims[i].c_out}});
        out.push_back({"bn" + std::to_string(i + 1) + ".run_var", &b.run_var,
                       {dims[i].c_out}});
    }
    return out;
}

template <typename S>
Model<S> build_model(const Architecture& arch, uint64_t seed) {
    arch.validate();
    Model<S> m;
    m.arch = arch;
    Rng rng(derive_seed(seed, {0xC0FFEEull}));
    const auto dims = block_dims(arch);
    m.blocks.resize(dims.size());
    for (size_t i = 0; i < dims.size(); ++i) {
        auto& b = m.blocks[i];
        const int64_t fan_in = static_cast<int64_t>(dims[i].c_in) * arch.kernel;
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        b.w.resize(static_cast<size_t>(dims[i].c_out) * static_cast<size_t>(fan_in));
        for (S& w : b.w)
            w = static_cast<S>(rng.uniform(-limit, limit));
        b.gamma.assign(static_cast<size_t>(dims[i].c_out), S(1));
        b.beta.assign(static_cast<size_t>(dims[i].c_out), S(0));
        b.run_mean.assign(static_cast<size_t>(dims[i].c_out), S(0));
        b.run_var.assign(static_cast<size_t>(dims[i].c_out), S(1));
    }
    const int64_t fc_in = arch.fc_inputs();
    const double limit = std::sqrt(6.0 / static_cast<double>(fc_in));
    m.fc_w.resize(static_cast<size_t>(arch.num_classes) * static_cast<size_t>(fc_in));
    for (S& w : m.fc_w)
        w = static_cast<S>(rng.uniform(-limit, limit));
    m.fc_b.assign(static_cast<size_t>(arch.num_classes), S(0));
    return m;
}

// ---------------------------------------------------------------------------
// Engine: workspace-backed forward/backward for one model. Column-major
// activation matrices [channels, batch*len]; conv weights are row-major
// [filters, kernel, in_channels] so im2col columns are contiguous copies.
// ---------------------------------------------------------------------------

namespace {

template <typename S>
class Engine {
public:
    Engine(Model<S>& m, int64_t max_batch) : m_(m), dims_(block_dims(m.arch)) {
        m.arch.validate();
        const int nb = m.arch.blocks();
        layer_.resize(static_cast<size_t>(nb));
        int64_t max_cbl = static_cast<int64_t>(m.arch.in_channels) * m.arch.input_len;
        int64_t max_col = 0;
        for (int i = 0; i < nb; ++i) {
            const auto& d = dims_[static_cast<size_t>(i)];
            const int64_t bl = d.len * max_batch;
            auto& L = layer_[static_cast<size_t>(i)];
            L.z.resize(static_cast<size_t>(d.c_out * bl));
            L.a.resize(static_cast<size_t>(d.c_out * bl / 2));
            L.relu_mask.resize(static_cast<size_t>(d.c_out * bl));
            L.pool_arg.resize(static_cast<size_t>(d.c_out * bl / 2));
            L.mean.resize(static_cast<size_t>(d.c_out));
            L.istd.resize(static_cast<size_t>(d.c_out));
            max_cbl = std::max(max_cbl, static_cast<int64_t>(d.c_out) * d.len);
            max_col = std::max(max_col,
                               static_cast<int64_t>(d.c_in) * m.arch.kernel * bl);
        }
        max_batch_ = max_batch;
        a0_.resize(static_cast<size_t>(m.arch.in_channels) *
                   static_cast<size_t>(m.arch.input_len) * static_cast<size_t>(max_batch));
        post_.resize(static_cast<size_t>(max_cbl * max_batch));
        dbuf_a_.resize(static_cast<size_t>(max_cbl * max_batch));
        dbuf_b_.resize(static_cast<size_t>(max_cbl * max_batch));
        col_.resize(static_cast<size_t>(max_col));
        dcol_.resize(static_cast<size_t>(nb > 0 ? max_col : 0));
        const int64_t fc_in = m.arch.fc_inputs();
        xfc_.resize(static_cast<size_t>(fc_in * max_batch));
        logits_.resize(static_cast<size_t>(m.arch.num_classes) * static_cast<size_t>(max_batch));
        probs_.resize(logits_.size());
        dlogits_.resize(logits_.size());
        grads_init();
    }

    int64_t batch() const { return b_; }
    const std::vector<S>& probs() const { return probs_; } // [classes, B] col-major

    // x: [B, C0, L0] row-major
    void load_input(const S* x, int64_t b) {
        if (b < 1 || b > max_batch_)
            throw ShapeMismatch("batch size exceeds engine capacity");
        b_ = b;
        const int64_t c0 = m_.arch.in_channels;
        const int64_t l0 = m_.arch.input_len;
#pragma omp parallel for
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t c = 0; c < c0; ++c)
                for (int64_t t = 0; t < l0; ++t)
                    a0_[static_cast<size_t>(c + (bi * l0 + t) * c0)] =
                        x[bi * c0 * l0 + c * l0 + t];
    }

    void forward(Mode mode, bool update_running) {
        const int nb = m_.arch.blocks();
        const S* a_prev = a0_.data();
        int64_t c_prev = m_.arch.in_channels;
        for (int i = 0; i < nb; ++i) {
            const auto& d = dims_[static_cast<size_t>(i)];
            auto& L = layer_[static_cast<size_t>(i)];
            const int64_t bl = d.len * b_;
            im2col(a_prev, d.c_in, d.len, col_.data());
            // Z = W * col
            CMapRow<S> w(m_.blocks[static_cast<size_t>(i)].w.data(), d.c_out,
                         static_cast<int64_t>(d.c_in) * m_.arch.kernel);
            CMapM<S> col(col_.data(), static_cast<int64_t>(d.c_in) * m_.arch.kernel, bl);
            MapM<S> z(L.z.data(), d.c_out, bl);
            z.noalias() = w * col;
            bn_relu_pool(i, mode, update_running);
            a_prev = L.a.data();
            c_prev = d.c_out;
        }
        (void)c_prev;
        fc_softmax(nb == 0 ? a0_.data() : layer_.back().a.data());
    }

    double loss(const int* labels) const {
        double acc = 0.0;
        const int64_t k = m_.arch.num_classes;
        for (int64_t bi = 0; bi < b_; ++bi) {
            const S p = probs_[static_cast<size_t>(labels[bi] + bi * k)];
            acc -= std::log(std::max(static_cast<double>(p), 1e-300));
        }
        return acc / static_cast<double>(b_);
    }

    double accuracy(const int* labels) const {
        const int64_t k = m_.arch.num_classes;
        int64_t correct = 0;
        for (int64_t bi = 0; bi < b_; ++bi) {
            int best = 0;
            for (int c = 1; c < k; ++c)
                if (probs_[static_cast<size_t>(c + bi * k)] >
                    probs_[static_cast<size_t>(best + bi * k)])
                    best = c;
            if (best == labels[bi])
                ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(b_);
    }

    // Backward from softmax cross-entropy; fills grads(). Requires a train
    // mode forward on the same input.
    void backward(const int* labels) {
        const int64_t k = m_.arch.num_classes;
        const int64_t fc_in = m_.arch.fc_inputs();
        // dlogits = (p - onehot)/B
        for (int64_t bi = 0; bi < b_; ++bi)
            for (int64_t c = 0; c < k; ++c)
                dlogits_[static_cast<size_t>(c + bi * k)] =
                    (probs_[static_cast<size_t>(c + bi * k)] -
                     (labels[bi] == c ? S(1) : S(0))) /
                    static_cast<S>(b_);
        CMapM<S> dlog(dlogits_.data(), k, b_);
        CMapM<S> xfc(xfc_.data(), fc_in, b_);
        MapRow<S> dwfc(grad_fc_w_.data(), k, fc_in);
        dwfc.noalias() = dlog * xfc.transpose();
        Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> dbfc(grad_fc_b_.data(), k);
        dbfc.noalias() = dlog.rowwise().sum();

        const int nb = m_.arch.blocks();
        if (nb == 0)
            return;
        // dxfc -> gradient w.r.t. the last pooled activation
        CMapRow<S> wfc(m_.fc_w.data(), k, fc_in);
        const auto& dl = dims_[static_cast<size_t>(nb - 1)];
        const int64_t out_len = dl.len / 2;
        MapM<S> da(dbuf_a_.data(), dl.c_out, out_len * b_);
        {
            Mat<S> dxfc = wfc.transpose() * dlog; // [fc_in, B]
#pragma omp parallel for
            for (int64_t bi = 0; bi < b_; ++bi)
                for (int64_t c = 0; c < dl.c_out; ++c)
                    for (int64_t t = 0; t < out_len; ++t)
                        da(c, bi * out_len + t) = dxfc(c * out_len + t, bi);
        }
        for (int i = nb - 1; i >= 0; --i)
            block_backward(i);
    }

    // grads in trainable_params order: per block w, gamma, beta; then fc.w, fc.b
    std::vector<std::vector<S>*> grads() {
        std::vector<std::vector<S>*> g;
        for (auto& bg : grad_blocks_) {
            g.push_back(&bg.w);
            g.push_back(&bg.gamma);
            g.push_back(&bg.beta);
        }
        g.push_back(&grad_fc_w_);
        g.push_back(&grad_fc_b_);
        return g;
    }

    uint64_t mask_hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        auto mix = [&h](const std::vector<uint8_t>& v, size_t n) {
            for (size_t i = 0; i < n; ++i) {
                h ^= v[i];
                h *= 0x100000001b3ull;
            }
        };
        for (size_t i = 0; i < layer_.size(); ++i) {
            const auto& d = dims_[i];
            mix(layer_[i].relu_mask, static_cast<size_t>(d.c_out * d.len * b_));
            mix(layer_[i].pool_arg, static_cast<size_t>(d.c_out * d.len / 2 * b_));
        }
        return h;
    }

private:
    struct Layer {
        std::vector<S> z;              // conv output, pre-BN [C, B*L]
        std::vector<S> a;              // post-pool [C, B*L/2]
        std::vector<uint8_t> relu_mask;
        std::vector<uint8_t> pool_arg; // 0: first of pair, 1: second
        std::vector<S> mean, istd;     // statistics used by this forward pass
    };
    struct BlockGrad {
        std::vector<S> w, gamma, beta;
    };

    void grads_init() {
        grad_blocks_.resize(m_.blocks.size());
        for (size_t i = 0; i < m_.blocks.size(); ++i) {
            grad_blocks_[i].w.assign(m_.blocks[i].w.size(), S(0));
            grad_blocks_[i].gamma.assign(m_.blocks[i].gamma.size(), S(0));
            grad_blocks_[i].beta.assign(m_.blocks[i].beta.size(), S(0));
        }
        grad_fc_w_.assign(m_.fc_w.size(), S(0));
        grad_fc_b_.assign(m_.fc_b.size(), S(0));
    }

    // a: [C, B*L] col-major -> col: [C*k, B*L], rows ordered (tap, channel).
    void im2col(const S* a, int64_t c, int64_t l, S* col) const {
        const int k = m_.arch.kernel;
        const int pl = (k - 1) / 2;
        const int64_t rows = c * k;
#pragma omp parallel for
        for (int64_t j = 0; j < b_ * l; ++j) {
            const int64_t t = j % l;
            S* dst = col + j * rows;
            for (int tau = 0; tau < k; ++tau) {
                const int64_t src_t = t + tau - pl;
                if (src_t >= 0 && src_t < l) {
                    std::memcpy(dst + tau * c, a + (j + tau - pl) * c,
                                static_cast<size_t>(c) * sizeof(S));
                } else {
                    std::memset(dst + tau * c, 0, static_cast<size_t>(c) * sizeof(S));
                }
            }
        }
    }

    // dcol: [C*k, B*L] -> accumulate into da: [C, B*L] (zeroed here)
    void col2im(const S* dcol, int64_t c, int64_t l, S* da) const {
        const int k = m_.arch.kernel;
        const int pl = (k - 1) / 2;
        const int64_t rows = c * k;
#pragma omp parallel for
        for (int64_t bi = 0; bi < b_; ++bi) {
            S* frame = da + bi * l * c;
            std::memset(frame, 0, static_cast<size_t>(l * c) * sizeof(S));
            for (int64_t t = 0; t < l; ++t) {
                const S* src = dcol + (bi * l + t) * rows;
                for (int tau = 0; tau < k; ++tau) {
                    const int64_t u = t + tau - pl;
                    if (u >= 0 && u < l) {
                        S* dst = frame + u * c;
                        const S* s = src + tau * c;
                        for (int64_t ci = 0; ci < c; ++ci)
                            dst[ci] += s[ci];
                    }
                }
            }
        }
    }

    // Deterministic per-channel sums over columns: per-thread partials
    // combined in thread order.
    void channel_sums(const S* z, int64_t c, int64_t bl, double* sum, double* sumsq) const {
        const int nt = omp_get_max_threads();
        std::vector<double> ps(static_cast<size_t>(nt) * static_cast<size_t>(c), 0.0);
        std::vector<double> pq(static_cast<size_t>(nt) * static_cast<size_t>(c), 0.0);
#pragma omp parallel num_threads(nt)
        {
            const int tid = omp_get_thread_num();
            const int64_t lo = bl * tid / nt;
            const int64_t hi = bl * (tid + 1) / nt;
            double* s = ps.data() + static_cast<size_t>(tid) * static_cast<size_t>(c);
            double* q = pq.data() + static_cast<size_t>(tid) * static_cast<size_t>(c);
            for (int64_t j = lo; j < hi; ++j) {
                const S* zc = z + j * c;
                for (int64_t ci = 0; ci < c; ++ci) {
                    const double v = static_cast<double>(zc[ci]);
                    s[ci] += v;
                    q[ci] += v * v;
                }
            }
        }
        for (int64_t ci = 0; ci < c; ++ci) {
            sum[ci] = 0.0;
            sumsq[ci] = 0.0;
        }
        for (int t = 0; t < nt; ++t)
            for (int64_t ci = 0; ci < c; ++ci) {
                sum[ci] += ps[static_cast<size_t>(t) * static_cast<size_t>(c) +
                              static_cast<size_t>(ci)];
                sumsq[ci] += pq[static_cast<size_t>(t) * static_cast<size_t>(c) +
                                static_cast<size_t>(ci)];
            }
    }

    void bn_relu_pool(int i, Mode mode, bool update_running) {
        const auto& d = dims_[static_cast<size_t>(i)];
        auto& L = layer_[static_cast<size_t>(i)];
        auto& blk = m_.blocks[static_cast<size_t>(i)];
        const int64_t c = d.c_out;
        const int64_t bl = d.len * b_;
        const double eps = m_.arch.bn_eps;

        if (mode == Mode::train) {
            std::vector<double> sum(static_cast<size_t>(c)), sq(static_cast<size_t>(c));
            channel_sums(L.z.data(), c, bl, sum.data(), sq.data());
            for (int64_t ci = 0; ci < c; ++ci) {
                const double mean = sum[static_cast<size_t>(ci)] / static_cast<double>(bl);
                double var = sq[static_cast<size_t>(ci)] / static_cast<double>(bl) -
                             mean * mean;
                var = std::max(var, 0.0);
                L.mean[static_cast<size_t>(ci)] = static_cast<S>(mean);
                L.istd[static_cast<size_t>(ci)] = static_cast<S>(1.0 / std::sqrt(var + eps));
                if (update_running) {
                    const double mom = m_.arch.bn_momentum;
                    blk.run_mean[static_cast<size_t>(ci)] = static_cast<S>(
                        (1.0 - mom) * blk.run_mean[static_cast<size_t>(ci)] + mom * mean);
                    blk.run_var[static_cast<size_t>(ci)] = static_cast<S>(
                        (1.0 - mom) * blk.run_var[static_cast<size_t>(ci)] + mom * var);
                }
            }
        } else {
            for (int64_t ci = 0; ci < c; ++ci) {
                L.mean[static_cast<size_t>(ci)] = blk.run_mean[static_cast<size_t>(ci)];
                L.istd[static_cast<size_t>(ci)] = static_cast<S>(
                    1.0 / std::sqrt(static_cast<double>(blk.run_var[static_cast<size_t>(ci)]) +
                                    eps));
            }
        }

        // post = relu(gamma * (z - mean) * istd + beta), then pool pairs
        S* post = post_.data();
        const S* z = L.z.data();
#pragma omp parallel for
        for (int64_t j = 0; j < bl; ++j) {
            const S* zc = z + j * c;
            S* pc = post + j * c;
            uint8_t* mk = L.relu_mask.data() + j * c;
            for (int64_t ci = 0; ci < c; ++ci) {
                const S xhat = (zc[ci] - L.mean[static_cast<size_t>(ci)]) *
                               L.istd[static_cast<size_t>(ci)];
                const S y = blk.gamma[static_cast<size_t>(ci)] * xhat +
                            blk.beta[static_cast<size_t>(ci)];
                const bool on = y > S(0);
                mk[ci] = on ? 1 : 0;
                pc[ci] = on ? y : S(0);
            }
        }
        const int64_t lh = d.len / 2;
#pragma omp parallel for
        for (int64_t j = 0; j < b_ * lh; ++j) {
            const int64_t bi = j / lh;
            const int64_t t = j % lh;
            const S* p0 = post + (bi * d.len + 2 * t) * c;
            const S* p1 = p0 + c;
            S* out = L.a.data() + j * c;
            uint8_t* arg = L.pool_arg.data() + j * c;
            for (int64_t ci = 0; ci < c; ++ci) {
                // ties keep the first element
                const bool second = p1[ci] > p0[ci];
                arg[ci] = second ? 1 : 0;
                out[ci] = second ? p1[ci] : p0[ci];
            }
        }
    }

    void fc_softmax(const S* a_last) {
        const int64_t k = m_.arch.num_classes;
        const int64_t fc_in = m_.arch.fc_inputs();
        const int nb = m_.arch.blocks();
        // gather [fc_in, B]: feature index = channel*out_len + t
        if (nb > 0) {
            const auto& d = dims_[static_cast<size_t>(nb - 1)];
            const int64_t out_len = d.len / 2;
#pragma omp parallel for
            for (int64_t bi = 0; bi < b_; ++bi)
                for (int64_t c = 0; c < d.c_out; ++c)
                    for (int64_t t = 0; t < out_len; ++t)
                        xfc_[static_cast<size_t>(c * out_len + t + bi * fc_in)] =
                            a_last[(bi * out_len + t) * d.c_out + c];
        } else {
            // no conv blocks: features are the raw input, [C0*L0]
            const int64_t c0 = m_.arch.in_channels;
            const int64_t l0 = m_.arch.input_len;
            for (int64_t bi = 0; bi < b_; ++bi)
                for (int64_t c = 0; c < c0; ++c)
                    for (int64_t t = 0; t < l0; ++t)
                        xfc_[static_cast<size_t>(c * l0 + t + bi * fc_in)] =
                            a_last[c + (bi * l0 + t) * c0];
        }
        CMapRow<S> w(m_.fc_w.data(), k, fc_in);
        CMapM<S> x(xfc_.data(), fc_in, b_);
        MapM<S> logits(logits_.data(), k, b_);
        logits.noalias() = w * x;
        for (int64_t bi = 0; bi < b_; ++bi)
            for (int64_t c = 0; c < k; ++c)
                logits(c, bi) += m_.fc_b[static_cast<size_t>(c)];
        // softmax per column
        for (int64_t bi = 0; bi < b_; ++bi) {
            S mx = logits(0, bi);
            for (int64_t c = 1; c < k; ++c)
                mx = std::max(mx, logits(c, bi));
            double denom = 0.0;
            for (int64_t c = 0; c < k; ++c)
                denom += std::exp(static_cast<double>(logits(c, bi) - mx));
            for (int64_t c = 0; c < k; ++c)
                probs_[static_cast<size_t>(c + bi * k)] = static_cast<S>(
                    std::exp(static_cast<double>(logits(c, bi) - mx)) / denom);
        }
    }

    // Gradient w.r.t. block i's pooled output arrives in dbuf_a_
    // ([C, B*L/2]); leaves gradient w.r.t. block i-1's pooled output in
    // dbuf_a_ again.
    void block_backward(int i) {
        const auto& d = dims_[static_cast<size_t>(i)];
        auto& L = layer_[static_cast<size_t>(i)];
        auto& blk = m_.blocks[static_cast<size_t>(i)];
        auto& g = grad_blocks_[static_cast<size_t>(i)];
        const int64_t c = d.c_out;
        const int64_t bl = d.len * b_;
        const int64_t lh = d.len / 2;

        // pool + relu backward into dbuf_b_ as dY [C, B*L]
        S* dy = dbuf_b_.data();
#pragma omp parallel for
        for (int64_t j = 0; j < bl; ++j)
            std::memset(dy + j * c, 0, static_cast<size_t>(c) * sizeof(S));
#pragma omp parallel for
        for (int64_t j = 0; j < b_ * lh; ++j) {
            const int64_t bi = j / lh;
            const int64_t t = j % lh;
            const S* src = dbuf_a_.data() + j * c;
            const uint8_t* arg = L.pool_arg.data() + j * c;
            for (int64_t ci = 0; ci < c; ++ci) {
                const int64_t col_idx = bi * d.len + 2 * t + arg[ci];
                dy[col_idx * c + ci] = src[ci] * L.relu_mask[static_cast<size_t>(col_idx * c + ci)];
            }
        }

        // BN backward (per channel): dgamma, dbeta, then in-place dY -> dZ
        std::vector<double> sum_dy(static_cast<size_t>(c)), sum_dyx(static_cast<size_t>(c));
        {
            const int nt = omp_get_max_threads();
            std::vector<double> p1(static_cast<size_t>(nt) * static_cast<size_t>(c), 0.0);
            std::vector<double> p2(static_cast<size_t>(nt) * static_cast<size_t>(c), 0.0);
#pragma omp parallel num_threads(nt)
            {
                const int tid = omp_get_thread_num();
                const int64_t lo = bl * tid / nt;
                const int64_t hi = bl * (tid + 1) / nt;
                double* a = p1.data() + static_cast<size_t>(tid) * static_cast<size_t>(c);
                double* b2 = p2.data() + static_cast<size_t>(tid) * static_cast<size_t>(c);
                for (int64_t j = lo; j < hi; ++j) {
                    const S* dyj = dy + j * c;
                    const S* zj = L.z.data() + j * c;
                    for (int64_t ci = 0; ci < c; ++ci) {
                        const double xhat =
                            static_cast<double>(zj[ci] - L.mean[static_cast<size_t>(ci)]) *
                            static_cast<double>(L.istd[static_cast<size_t>(ci)]);
                        a[ci] += static_cast<double>(dyj[ci]);
                        b2[ci] += static_cast<double>(dyj[ci]) * xhat;
                    }
                }
            }
            for (int64_t ci = 0; ci < c; ++ci) {
                sum_dy[static_cast<size_t>(ci)] = 0.0;
                sum_dyx[static_cast<size_t>(ci)] = 0.0;
            }
            for (int t = 0; t < nt; ++t)
                for (int64_t ci = 0; ci < c; ++ci) {
                    sum_dy[static_cast<size_t>(ci)] +=
                        p1[static_cast<size_t>(t) * static_cast<size_t>(c) +
                           static_cast<size_t>(ci)];
                    sum_dyx[static_cast<size_t>(ci)] +=
                        p2[static_cast<size_t>(t) * static_cast<size_t>(c) +
                           static_cast<size_t>(ci)];
                }
        }
        for (int64_t ci = 0; ci < c; ++ci) {
            g.gamma[static_cast<size_t>(ci)] = static_cast<S>(sum_dyx[static_cast<size_t>(ci)]);
            g.beta[static_cast<size_t>(ci)] = static_cast<S>(sum_dy[static_cast<size_t>(ci)]);
        }
        const double inv_bl = 1.0 / static_cast<double>(bl);
#pragma omp parallel for
        for (int64_t j = 0; j < bl; ++j) {
            S* dyj = dy + j * c;
            const S* zj = L.z.data() + j * c;
            for (int64_t ci = 0; ci < c; ++ci) {
                const double istd = static_cast<double>(L.istd[static_cast<size_t>(ci)]);
                const double xhat =
                    static_cast<double>(zj[ci] - L.mean[static_cast<size_t>(ci)]) * istd;
                const double t1 = static_cast<double>(dyj[ci]) -
                                  sum_dy[static_cast<size_t>(ci)] * inv_bl -
                                  xhat * sum_dyx[static_cast<size_t>(ci)] * inv_bl;
                dyj[ci] = static_cast<S>(
                    static_cast<double>(blk.gamma[static_cast<size_t>(ci)]) * istd * t1);
            }
        }

        // conv backward: rebuild col from the previous activation
        const S* a_prev = (i == 0) ? a0_.data() : layer_[static_cast<size_t>(i - 1)].a.data();
        im2col(a_prev, d.c_in, d.len, col_.data());
        const int64_t colrows = static_cast<int64_t>(d.c_in) * m_.arch.kernel;
        CMapM<S> colm(col_.data(), colrows, bl);
        CMapM<S> dz(dy, c, bl);
        MapRow<S> dw(g.w.data(), c, colrows);
        dw.noalias() = dz * colm.transpose();

        if (i > 0) {
            MapM<S> dcol(dcol_.data(), colrows, bl);
            CMapRow<S> w(blk.w.data(), c, colrows);
            dcol.noalias() = w.transpose() * dz;
            col2im(dcol_.data(), d.c_in, d.len, dbuf_a_.data());
        }
    }

    Model<S>& m_;
    std::vector<BlockDims> dims_;
    std::vector<Layer> layer_;
    std::vector<BlockGrad> grad_blocks_;
    std::vector<S> grad_fc_w_, grad_fc_b_;
    std::vector<S> a0_, post_, dbuf_a_, dbuf_b_, col_, dcol_;
    std::vector<S> xfc_, logits_, probs_, dlogits_;
    int64_t max_batch_ = 0;
    int64_t b_ = 0;
};

} // namespace

template <typename S>
std::vector<S> forward(const Model<S>& m, std::span<const S> x, int64_t batch, Mode mode) {
    const int64_t per = static_cast<int64_t>(m.arch.in_channels) * m.arch.input_len;
    if (static_cast<int64_t>(x.size()) != per * batch)
        throw ShapeMismatch("forward: input size does not match [batch, channels, len]");
    Model<S>& mm = const_cast<Model<S>&>(m); // engine never mutates without update_running
    Engine<S> eng(mm, batch);
    eng.load_input(x.data(), batch);
    eng.forward(mode, false);
    const int64_t k = m.arch.num_classes;
    std::vector<S> out(static_cast<size_t>(batch * k));
    for (int64_t bi = 0; bi < batch; ++bi)
        for (int64_t c = 0; c < k; ++c) {
            const S p = eng.probs()[static_cast<size_t>(c + bi * k)];
            if (!std::isfinite(static_cast<double>(p)))
                throw NonFiniteActivation("non-finite probability in forward pass");
            out[static_cast<size_t>(bi * k + c)] = p;
        }
    return out;
}

TrainData to_train_data(const std::vector<sig::LabeledFrame>& frames,
                        const std::vector<size_t>& indices) {
    TrainData d;
    d.n = static_cast<int64_t>(indices.size());
    d.x.resize(static_cast<size_t>(d.n) * 2 * sig::kFrameLen);
    d.labels.resize(static_cast<size_t>(d.n));
    for (size_t i = 0; i < indices.size(); ++i) {
        const sig::LabeledFrame& f = frames[indices[i]];
        const double r = rms(f.samples);
        const double g = r > 0.0 ? 1.0 / r : 1.0;
        float* dst = d.x.data() + i * 2 * sig::kFrameLen;
        for (size_t t = 0; t < sig::kFrameLen; ++t) {
            dst[t] = static_cast<float>(f.samples[t].real() * g);
            dst[sig::kFrameLen + t] = static_cast<float>(f.samples[t].imag() * g);
        }
        d.labels[i] = static_cast<int>(f.label);
    }
    return d;
}

TrainData to_train_data(const std::vector<sig::LabeledFrame>& frames) {
    std::vector<size_t> idx(frames.size());
    for (size_t i = 0; i < idx.size(); ++i)
        idx[i] = i;
    return to_train_data(frames, idx);
}

namespace {

double validation_accuracy(Engine<float>& eng, const TrainData& val, int64_t max_batch) {
    const int64_t per = val.channels * val.len;
    int64_t correct = 0;
    for (int64_t start = 0; start < val.n; start += max_batch) {
        const int64_t b = std::min(max_batch, val.n - start);
        eng.load_input(val.x.data() + start * per, b);
        eng.forward(Mode::infer, false);
        const double acc = eng.accuracy(val.labels.data() + start);
        correct += static_cast<int64_t>(std::llround(acc * static_cast<double>(b)));
    }
    return static_cast<double>(correct) / static_cast<double>(val.n);
}

} // namespace

TrainResult train(const Model<float>& init, const TrainData& train_set,
                  const TrainData& val_set, const TrainConfig& cfg, std::ostream* log) {
    cfg.validate();
    if (train_set.n == 0 || val_set.n == 0)
        throw Error(ExitCode::data, "train: dataset partitions must be non-empty");
    for (int lab : train_set.labels)
        if (lab < 0 || lab >= init.arch.num_classes)
            throw Error(ExitCode::data, "train: label outside [0, num_classes)");

    TrainResult res;
    res.final_model = init;
    Model<float>& m = res.final_model;
    const int64_t bsz = std::min<int64_t>(cfg.batch_size, train_set.n);
    Engine<float> eng(m, std::max<int64_t>(bsz, 256));

    auto params = trainable_params(m);
    std::vector<std::vector<float>> vel(params.size());
    for (size_t i = 0; i < params.size(); ++i)
        vel[i].assign(params[i].data->size(), 0.0f);

    const int64_t iters_per_epoch = train_set.n / bsz;
    const int64_t per = train_set.channels * train_set.len;
    std::vector<float> xb(static_cast<size_t>(bsz * per));
    std::vector<int> yb(static_cast<size_t>(bsz));
    std::vector<size_t> order(static_cast<size_t>(train_set.n));
    for (size_t i = 0; i < order.size(); ++i)
        order[i] = i;

    double best_val = -1.0;
    int64_t global_iter = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = cfg.initial_lr /
                          std::pow(cfg.lr_drop_factor, epoch / cfg.lr_drop_period_epochs);
        Rng shuffle_rng(derive_seed(cfg.shuffle_seed, {static_cast<uint64_t>(epoch)}));
        shuffle_rng.shuffle(order);

        double loss_acc = 0.0, acc_acc = 0.0;
        for (int64_t it = 0; it < iters_per_epoch; ++it, ++global_iter) {
            for (int64_t j = 0; j < bsz; ++j) {
                const size_t src = order[static_cast<size_t>(it * bsz + j)];
                std::memcpy(xb.data() + j * per, train_set.x.data() + src * static_cast<size_t>(per),
                            static_cast<size_t>(per) * sizeof(float));
                yb[static_cast<size_t>(j)] = train_set.labels[src];
            }
            eng.load_input(xb.data(), bsz);
            eng.forward(Mode::train, true);
            const double loss = eng.loss(yb.data());
            if (!std::isfinite(loss))
                throw NonFiniteLoss("non-finite training loss", global_iter);
            loss_acc += loss;
            acc_acc += eng.accuracy(yb.data());
            eng.backward(yb.data());
            auto grads = eng.grads();
            for (size_t p = 0; p < params.size(); ++p) {
                float* w = params[p].data->data();
                float* v = vel[p].data();
                const float* gr = grads[p]->data();
                const int64_t n = static_cast<int64_t>(params[p].data->size());
                const float mu = static_cast<float>(cfg.momentum);
                const float lrf = static_cast<float>(lr);
#pragma omp parallel for
                for (int64_t q = 0; q < n; ++q) {
                    v[q] = mu * v[q] - lrf * gr[q];
                    w[q] += v[q];
                }
            }
        }

        const double val_acc = validation_accuracy(eng, val_set, std::max<int64_t>(bsz, 256));
        EpochStats st;
        st.epoch = epoch + 1;
        st.iterations = static_cast<int>(iters_per_epoch);
        st.lr = lr;
        st.train_loss = loss_acc / static_cast<double>(iters_per_epoch);
        st.train_acc = acc_acc / static_cast<double>(iters_per_epoch);
        st.val_acc = val_acc;
        m.history.push_back(st);
        if (log)
            (*log) << "epoch " << st.epoch << " lr " << lr << " loss " << st.train_loss
                   << " train_acc " << st.train_acc << " val_acc " << val_acc << "\n";
        if (val_acc > best_val) {
            best_val = val_acc;
            res.best = m;
        }
    }
    res.best.history = m.history;
    return res;
}

double sgdm_step(Model<float>& m, std::span<const float> x, std::span<const int> labels,
                 int64_t batch, double lr, double momentum,
                 std::vector<std::vector<float>>* velocities) {
    Engine<float> eng(m, batch);
    eng.load_input(x.data(), batch);
    eng.forward(Mode::train, false);
    const double loss = eng.loss(labels.data());
    if (velocities) {
        eng.backward(labels.data());
        auto params = trainable_params(m);
        if (velocities->empty()) {
            velocities->resize(params.size());
            for (size_t i = 0; i < params.size(); ++i)
                (*velocities)[i].assign(params[i].data->size(), 0.0f);
        }
        auto grads = eng.grads();
        for (size_t p = 0; p < params.size(); ++p) {
            float* w = params[p].data->data();
            float* v = (*velocities)[p].data();
            const float* gr = grads[p]->data();
            for (size_t q = 0; q < params[p].data->size(); ++q) {
                v[q] = static_cast<float>(momentum) * v[q] - static_cast<float>(lr) * gr[q];
                w[q] += v[q];
            }
        }
    }
    return loss;
}

GradCheckResult gradient_check(const Model<double>& m, std::span<const double> x,
                               std::span<const int> labels, int64_t batch,
                               int samples_per_tensor, uint64_t seed) {
    if (batch > 4)
        throw Error(ExitCode::data, "gradient_check: batch size must be <= 4");
    Model<double> mc = m;
    Engine<double> eng(mc, batch);
    eng.load_input(x.data(), batch);
    eng.forward(Mode::train, false);
    const uint64_t base_mask = eng.mask_hash();
    eng.backward(labels.data());
    auto grads = eng.grads();
    // copy analytic gradients (FD re-runs overwrite engine state)
    std::vector<std::vector<double>> analytic;
    for (auto* g : grads)
        analytic.push_back(*g);

    auto params = trainable_params(mc);
    const double h = 1e-4;
    GradCheckResult res;
    for (size_t ti = 0; ti < params.size(); ++ti) {
        auto& vec = *params[ti].data;
        Rng rng(derive_seed(seed, {ti}));
        const int n_samples =
            std::min<int>(samples_per_tensor, static_cast<int>(vec.size()));
        for (int s = 0; s < n_samples; ++s) {
            bool accepted = false;
            double fd = 0.0, an = 0.0;
            for (int attempt = 0; attempt < 64 && !accepted; ++attempt) {
                const size_t idx = rng.uniform_u64(vec.size());
                const double theta = vec[idx];
                vec[idx] = theta + h;
                eng.forward(Mode::train, false);
                const double lp = eng.loss(labels.data());
                const uint64_t mp = eng.mask_hash();
                vec[idx] = theta - h;
                eng.forward(Mode::train, false);
                const double lm = eng.loss(labels.data());
                const uint64_t mm = eng.mask_hash();
                vec[idx] = theta;
                if (mp != base_mask || mm != base_mask) {
                    ++res.kink_resamples; // evaluate away from ReLU/pool kinks
                    continue;
                }
                fd = (lp - lm) / (2.0 * h);
                an = analytic[ti][idx];
                accepted = true;
            }
            if (!accepted)
                continue;
            const double denom = std::max(std::abs(fd), std::abs(an));
            const double rel = denom < 1e-12 ? 0.0 : std::abs(fd - an) / denom;
            res.max_rel_error = std::max(res.max_rel_error, rel);
            ++res.checked;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Inference helpers.
// ---------------------------------------------------------------------------

struct Predictor::Impl {
    const Model<float>& model;
    Model<float>& mut; // engine requires non-const; never mutated in infer
    Engine<float> eng;
    static constexpr int64_t kChunk = 128;

    explicit Impl(const Model<float>& m)
        : model(m), mut(const_cast<Model<float>&>(m)), eng(mut, kChunk) {}
};

Predictor::Predictor(const Model<float>& m) : impl_(std::make_unique<Impl>(m)) {}
Predictor::~Predictor() = default;

std::vector<float> Predictor::probabilities(std::span<const sig::LabeledFrame> frames) {
    const int64_t k = impl_->model.arch.num_classes;
    const int64_t len = impl_->model.arch.input_len;
    std::vector<float> out(frames.size() * static_cast<size_t>(k));
    std::vector<float> xb(static_cast<size_t>(Impl::kChunk) * 2 * static_cast<size_t>(len));
    for (size_t start = 0; start < frames.size(); start += Impl::kChunk) {
        const int64_t b = std::min<int64_t>(Impl::kChunk,
                                            static_cast<int64_t>(frames.size() - start));
        for (int64_t j = 0; j < b; ++j) {
            const sig::LabeledFrame& f = frames[start + static_cast<size_t>(j)];
            if (static_cast<int64_t>(f.samples.size()) != len)
                throw ShapeMismatch("predict: frame length does not match model input");
            const double r = rms(f.samples);
            const double g = r > 0.0 ? 1.0 / r : 1.0;
            float* dst = xb.data() + j * 2 * len;
            for (int64_t t = 0; t < len; ++t) {
                dst[t] = static_cast<float>(f.samples[static_cast<size_t>(t)].real() * g);
                dst[len + t] = static_cast<float>(f.samples[static_cast<size_t>(t)].imag() * g);
            }
        }
        impl_->eng.load_input(xb.data(), b);
        impl_->eng.forward(Mode::infer, false);
        for (int64_t j = 0; j < b; ++j)
            for (int64_t c = 0; c < k; ++c)
                out[(start + static_cast<size_t>(j)) * static_cast<size_t>(k) +
                    static_cast<size_t>(c)] =
                    impl_->eng.probs()[static_cast<size_t>(c + j * k)];
    }
    return out;
}

std::vector<int> Predictor::classify(std::span<const sig::LabeledFrame> frames) {
    const int64_t k = impl_->model.arch.num_classes;
    const std::vector<float> p = probabilities(frames);
    std::vector<int> cls(frames.size());
    for (size_t i = 0; i < frames.size(); ++i) {
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (p[i * static_cast<size_t>(k) + static_cast<size_t>(c)] >
                p[i * static_cast<size_t>(k) + static_cast<size_t>(best)])
                best = c;
        cls[i] = best;
    }
    return cls;
}

std::pair<int, std::array<double, 5>> predict(const Model<float>& m,
                                              const sig::LabeledFrame& frame) {
    Predictor pred(m);
    std::vector<sig::LabeledFrame> one = {frame};
    const std::vector<float> p = pred.probabilities(one);
    std::array<double, 5> probs{};
    for (size_t c = 0; c < 5 && c < p.size(); ++c)
        probs[c] = p[c];
    int best = 0;
    for (int c = 1; c < m.arch.num_classes && c < 5; ++c)
        if (probs[static_cast<size_t>(c)] > probs[static_cast<size_t>(best)])
            best = c;
    return {best, probs};
}

int64_t ConfusionMatrix::total() const {
    int64_t t = 0;
    for (const auto& row : counts)
        for (int64_t v : row)
            t += v;
    return t;
}

int64_t ConfusionMatrix::trace() const {
    int64_t t = 0;
    for (size_t i = 0; i < counts.size(); ++i)
        t += counts[i][i];
    return t;
}

double ConfusionMatrix::accuracy() const {
    const int64_t t = total();
    return t == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(t);
}

ConfusionMatrix evaluate(const Model<float>& m, std::span<const sig::LabeledFrame> frames) {
    if (frames.empty())
        throw EmptyInput("evaluate: empty frame set");
    Predictor pred(m);
    const std::vector<int> cls = pred.classify(frames);
    ConfusionMatrix cm;
    for (size_t i = 0; i < frames.size(); ++i)
        ++cm.counts[static_cast<size_t>(frames[i].label)][static_cast<size_t>(cls[i])];
    return cm;
}

template struct Model<float>;
template struct Model<double>;
template Model<float> build_model<float>(const Architecture&, uint64_t);
template Model<double> build_model<double>(const Architecture&, uint64_t);
template std::vector<float> forward<float>(const Model<float>&, std::span<const float>, int64_t,
                                           Mode);
template std::vector<double> forward<double>(const Model<double>&, std::span<const double>,
                                             int64_t, Mode);
template std::vector<NamedParam<float>> trainable_params<float>(Model<float>&);
template std::vector<NamedParam<double>> trainable_params<double>(Model<double>&);
template std::vector<NamedParam<float>> state_buffers<float>(Model<float>&);
template std::vector<NamedParam<double>> state_buffers<double>(Model<double>&);

} // namespace risamc::nn
