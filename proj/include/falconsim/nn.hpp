#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "falconsim/binio.hpp"
#include "falconsim/rng.hpp"

namespace falconsim {

struct NnError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A training batch. `mask` (if non-empty) has one entry per (row, output)
// pair; masked-out outputs contribute neither loss nor gradient. Q-learning
// uses it to train only the output of the action actually taken.
struct Minibatch {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> targets;
    std::vector<std::vector<double>> mask; // optional, same shape as targets

    std::size_t size() const { return inputs.size(); }
};

// Fully connected net: ReLU on hidden layers, identity output. Parameters
// live in one flat vector (per layer: weights row-major [out][in], then
// biases) so that meta-learning can do plain vector arithmetic on them.
class Mlp {
public:
    Mlp() = default;

    Mlp(std::vector<int> layer_sizes, Rng& rng)
        : sizes_(std::move(layer_sizes)) {
        if (sizes_.size() < 2) throw NnError("need at least input and output layer");
        params_.assign(param_count(sizes_), 0.0);
        // He-uniform
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            const int nin = sizes_[l], nout = sizes_[l + 1];
            const double limit = std::sqrt(6.0 / nin);
            for (int i = 0; i < nin * nout; ++i)
                params_[off + i] = rng.uniform(-limit, limit);
            off += static_cast<std::size_t>(nin) * nout + nout; // biases stay 0
        }
    }

    static std::size_t param_count(const std::vector<int>& sizes) {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
            n += (static_cast<std::size_t>(sizes[l]) + 1) * sizes[l + 1];
        return n;
    }

    const std::vector<int>& layer_sizes() const { return sizes_; }
    int input_size() const { return sizes_.front(); }
    int output_size() const { return sizes_.back(); }

    const std::vector<double>& params() const { return params_; }

    void set_params(std::vector<double> p) {
        if (p.size() != params_.size())
            throw NnError("parameter vector length mismatch");
        params_ = std::move(p);
    }

    std::vector<double> forward(const std::vector<double>& input) const {
        if (static_cast<int>(input.size()) != sizes_.front())
            throw NnError("input dimension mismatch");
        std::vector<double> act = input;
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            const bool last = (l + 2 == sizes_.size());
            act = layer_forward(act, l, off, last);
        }
        return act;
    }

    // Gradient of mean (over batch rows) masked squared error
    //   L = (1/B) sum_b sum_o mask_bo (yhat_bo - y_bo)^2
    // with the same layout as params().
    std::vector<double> backward(const Minibatch& batch) const {
        const std::size_t B = batch.size();
        if (B == 0) throw NnError("empty batch");
        std::vector<double> grad(params_.size(), 0.0);
        std::vector<std::vector<double>> acts(sizes_.size());
        for (std::size_t b = 0; b < B; ++b) {
            // forward with cached activations
            acts[0] = batch.inputs[b];
            if (static_cast<int>(acts[0].size()) != sizes_.front())
                throw NnError("input dimension mismatch");
            std::size_t off = 0;
            for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
                const bool last = (l + 2 == sizes_.size());
                acts[l + 1] = layer_forward(acts[l], l, off, last);
            }
            const auto& out = acts.back();
            if (batch.targets[b].size() != out.size())
                throw NnError("target dimension mismatch");
            // delta at output
            std::vector<double> delta(out.size());
            for (std::size_t o = 0; o < out.size(); ++o) {
                double m = batch.mask.empty() ? 1.0 : batch.mask[b][o];
                delta[o] = 2.0 * m * (out[o] - batch.targets[b][o]) / double(B);
            }
            // backprop
            std::size_t layer_off = params_.size();
            for (std::size_t l = sizes_.size() - 1; l-- > 0;) {
                const int nin = sizes_[l], nout = sizes_[l + 1];
                layer_off -= static_cast<std::size_t>(nin) * nout + nout;
                const double* W = params_.data() + layer_off;
                double* gW = grad.data() + layer_off;
                double* gb = gW + static_cast<std::size_t>(nin) * nout;
                const auto& x = acts[l];
                for (int o = 0; o < nout; ++o) {
                    gb[o] += delta[o];
                    for (int i = 0; i < nin; ++i)
                        gW[static_cast<std::size_t>(o) * nin + i] += delta[o] * x[i];
                }
                if (l == 0) break;
                std::vector<double> prev(nin, 0.0);
                for (int i = 0; i < nin; ++i) {
                    if (acts[l][i] <= 0.0) continue; // ReLU gate
                    double s = 0.0;
                    for (int o = 0; o < nout; ++o)
                        s += W[static_cast<std::size_t>(o) * nin + i] * delta[o];
                    prev[i] = s;
                }
                delta = std::move(prev);
            }
        }
        return grad;
    }

    double loss(const Minibatch& batch) const {
        double total = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b) {
            auto out = forward(batch.inputs[b]);
            for (std::size_t o = 0; o < out.size(); ++o) {
                double m = batch.mask.empty() ? 1.0 : batch.mask[b][o];
                double d = out[o] - batch.targets[b][o];
                total += m * d * d;
            }
        }
        return total / double(batch.size());
    }

    void sgd_step(const std::vector<double>& grad, double lr) {
        if (grad.size() != params_.size()) throw NnError("gradient layout mismatch");
        for (double g : grad)
            if (!std::isfinite(g)) throw NnError("non-finite gradient");
        for (std::size_t i = 0; i < params_.size(); ++i)
            params_[i] -= lr * grad[i];
    }

    bool operator==(const Mlp& other) const {
        return sizes_ == other.sizes_ && params_ == other.params_;
    }

    // Versioned binary format: magic "FALC", u16 version, u32 layer count,
    // u32 sizes, then parameters as little-endian f64.
    static constexpr std::uint16_t kFormatVersion = 1;

    void save(std::ostream& os) const {
        os.write("FALC", 4);
        binio::write_u16(os, kFormatVersion);
        binio::write_u32(os, static_cast<std::uint32_t>(sizes_.size()));
        for (int s : sizes_) binio::write_u32(os, static_cast<std::uint32_t>(s));
        for (double p : params_) binio::write_f64(os, p);
        if (!os) throw NnError("model write failed");
    }

    static Mlp load(std::istream& is) {
        char magic[4];
        is.read(magic, 4);
        if (!is || std::memcmp(magic, "FALC", 4) != 0)
            throw NnError("bad model file: missing FALC magic");
        const std::uint16_t ver = binio::read_u16(is);
        if (ver != kFormatVersion)
            throw NnError("unsupported model format version");
        const std::uint32_t nl = binio::read_u32(is);
        if (!is || nl < 2 || nl > 64) throw NnError("corrupt model: layer count");
        Mlp net;
        net.sizes_.resize(nl);
        for (auto& s : net.sizes_) {
            s = static_cast<int>(binio::read_u32(is));
            if (!is || s <= 0) throw NnError("corrupt model: layer size");
        }
        net.params_.resize(param_count(net.sizes_));
        for (auto& p : net.params_) p = binio::read_f64(is);
        if (!is) throw NnError("corrupt model: truncated parameters");
        return net;
    }

private:
    std::vector<double> layer_forward(const std::vector<double>& x,
                                      std::size_t l, std::size_t& off,
                                      bool last) const {
        const int nin = sizes_[l], nout = sizes_[l + 1];
        const double* W = params_.data() + off;
        const double* b = W + static_cast<std::size_t>(nin) * nout;
        std::vector<double> y(nout);
        for (int o = 0; o < nout; ++o) {
            double s = b[o];
            const double* row = W + static_cast<std::size_t>(o) * nin;
            for (int i = 0; i < nin; ++i) s += row[i] * x[i];
            y[o] = last ? s : (s > 0.0 ? s : 0.0);
        }
        off += static_cast<std::size_t>(nin) * nout + nout;
        return y;
    }

    std::vector<int> sizes_;
    std::vector<double> params_;
};

} // namespace falconsim
