#include "gradclust/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gradclust {

void LayerSpec::validate() const {
    require(input_dim > 0 && output_dim > 0, "LayerSpec: zero dimension");
    if (kind == LayerKind::convolution) {
        require(kernel_h > 0 && kernel_w > 0 && in_channels > 0,
                "LayerSpec: conv geometry incomplete");
        require(in_height >= kernel_h && in_width >= kernel_w,
                "LayerSpec: kernel larger than input");
        require(input_dim == kernel_h * kernel_w * in_channels,
                "LayerSpec: input_dim must equal kernel_h*kernel_w*in_channels");
    }
}

LayerSpec fc_layer(std::size_t in, std::size_t out, Activation act, bool has_bias,
                   bool trainable) {
    LayerSpec s;
    s.kind = LayerKind::fully_connected;
    s.input_dim = in;
    s.output_dim = out;
    s.activation = act;
    s.has_bias = has_bias;
    s.trainable = trainable;
    s.validate();
    return s;
}

LayerSpec conv_layer(std::size_t in_channels, std::size_t in_height, std::size_t in_width,
                     std::size_t kernel_h, std::size_t kernel_w, std::size_t out_channels,
                     Activation act, bool has_bias, bool trainable) {
    LayerSpec s;
    s.kind = LayerKind::convolution;
    s.in_channels = in_channels;
    s.in_height = in_height;
    s.in_width = in_width;
    s.kernel_h = kernel_h;
    s.kernel_w = kernel_w;
    s.input_dim = kernel_h * kernel_w * in_channels;
    s.output_dim = out_channels;
    s.activation = act;
    s.has_bias = has_bias;
    s.trainable = trainable;
    s.validate();
    return s;
}

ModelSnapshot::ModelSnapshot(std::vector<LayerSpec> layers, std::vector<Matrix> weights,
                             std::vector<std::vector<double>> biases)
    : layers_(std::move(layers)), weights_(std::move(weights)), biases_(std::move(biases)) {
    require(layers_.size() == weights_.size() && layers_.size() == biases_.size(),
            "ModelSnapshot: layers/weights/biases length mismatch");
    require(!layers_.empty(), "ModelSnapshot: no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const LayerSpec& s = layers_[l];
        s.validate();
        require(weights_[l].rows() == s.input_dim && weights_[l].cols() == s.output_dim,
                "ModelSnapshot: weight shape mismatch at layer " + std::to_string(l));
        require(biases_[l].size() == (s.has_bias ? s.output_dim : 0),
                "ModelSnapshot: bias shape mismatch at layer " + std::to_string(l));
        if (!weights_[l].all_finite() || !all_finite(biases_[l]))
            throw NumericError("ModelSnapshot: non-finite parameters at layer " +
                               std::to_string(l));
        if (l + 1 < layers_.size()) {
            require(layers_[l + 1].in_features() == s.out_features(),
                    "ModelSnapshot: layer " + std::to_string(l + 1) +
                        " input does not match previous output");
        }
    }
}

ModelSnapshot ModelSnapshot::he_init(std::vector<LayerSpec> layers, RngStream& rng) {
    std::vector<Matrix> ws;
    std::vector<std::vector<double>> bs;
    for (const LayerSpec& s : layers) {
        Matrix w(s.input_dim, s.output_dim);
        double sd = std::sqrt(2.0 / static_cast<double>(s.input_dim));
        for (std::size_t i = 0; i < w.rows(); ++i)
            for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) = sd * rng.normal();
        ws.push_back(std::move(w));
        bs.emplace_back(s.has_bias ? s.output_dim : 0, 0.0);
    }
    return ModelSnapshot(std::move(layers), std::move(ws), std::move(bs));
}

std::size_t ModelSnapshot::param_count() const {
    std::size_t n = 0;
    for (const LayerSpec& s : layers_)
        if (s.trainable) n += s.input_dim * s.output_dim + (s.has_bias ? s.output_dim : 0);
    return n;
}

std::vector<double> ModelSnapshot::flat_params() const {
    std::vector<double> theta;
    theta.reserve(param_count());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (!layers_[l].trainable) continue;
        const auto& vals = weights_[l].values();
        theta.insert(theta.end(), vals.begin(), vals.end());
        theta.insert(theta.end(), biases_[l].begin(), biases_[l].end());
    }
    return theta;
}

ModelSnapshot ModelSnapshot::with_params(const std::vector<double>& theta) const {
    require(theta.size() == param_count(), "with_params: wrong parameter count");
    std::vector<Matrix> ws = weights_;
    std::vector<std::vector<double>> bs = biases_;
    std::size_t pos = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (!layers_[l].trainable) continue;
        for (std::size_t i = 0; i < ws[l].rows(); ++i)
            for (std::size_t j = 0; j < ws[l].cols(); ++j) ws[l](i, j) = theta[pos++];
        for (double& b : bs[l]) b = theta[pos++];
    }
    return ModelSnapshot(layers_, std::move(ws), std::move(bs));
}

namespace {

double activate(Activation a, double z) {
    return a == Activation::relu ? (z > 0.0 ? z : 0.0) : z;
}

// Subgradient at 0 is 0.
double activate_deriv(Activation a, double z) {
    return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0;
}

// Patch rows of one example's conv input: T x input_dim.
Matrix extract_patches(const LayerSpec& s, std::span<const double> x) {
    const std::size_t oh = s.out_height(), ow = s.out_width();
    Matrix p(oh * ow, s.input_dim);
    for (std::size_t y0 = 0; y0 < oh; ++y0)
        for (std::size_t x0 = 0; x0 < ow; ++x0) {
            auto row = p.row(y0 * ow + x0);
            std::size_t q = 0;
            for (std::size_t c = 0; c < s.in_channels; ++c)
                for (std::size_t dy = 0; dy < s.kernel_h; ++dy)
                    for (std::size_t dx = 0; dx < s.kernel_w; ++dx)
                        row[q++] = x[(c * s.in_height + y0 + dy) * s.in_width + x0 + dx];
        }
    return p;
}

double log1pexp(double t) {  // log(1 + e^t) without overflow
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

void check_batch(const ModelSnapshot& model, const Batch& batch, const LossSpec& loss) {
    require(batch.size() > 0, "forward: empty batch");
    require(batch.features.cols() == model.layers().front().in_features(),
            "forward: feature dim " + std::to_string(batch.features.cols()) +
                " does not match model input " +
                std::to_string(model.layers().front().in_features()));
    require(batch.labels.size() == batch.size(), "forward: labels/features length mismatch");
    require(batch.example_ids.empty() || batch.example_ids.size() == batch.size(),
            "forward: example_ids length mismatch");
    if (!batch.features.all_finite()) throw NumericError("forward: non-finite features");

    const std::size_t out = model.layers().back().out_features();
    if (loss.kind == LossKind::logistic_binary) {
        require(out == 1, "forward: logistic loss needs a single output, model has " +
                              std::to_string(out));
        for (int y : batch.labels)
            require(y == 1 || y == -1, "forward: logistic labels must be +1/-1");
    } else {
        require(out >= 2, "forward: softmax needs >= 2 outputs");
        for (int y : batch.labels)
            require(y >= 0 && static_cast<std::size_t>(y) < out,
                    "forward: label out of range");
    }
}

}  // namespace

ForwardResult forward(const ModelSnapshot& model, const Batch& batch, const LossSpec& loss) {
    check_batch(model, batch, loss);
    const std::size_t n = batch.size();

    ForwardResult res;
    Matrix x = batch.features;
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
        const LayerSpec& s = model.layers()[l];
        res.layer_inputs.push_back(x);

        Matrix z(n, s.out_features());
        if (s.kind == LayerKind::fully_connected) {
            z = matmul(x, model.weight(l));
            if (s.has_bias)
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t o = 0; o < s.output_dim; ++o)
                        z(i, o) += model.bias(l)[o];
        } else {
            const std::size_t t_count = s.positions();
            for (std::size_t i = 0; i < n; ++i) {
                Matrix patches = extract_patches(s, x.row(i));
                Matrix zp = matmul(patches, model.weight(l));  // T x O
                for (std::size_t o = 0; o < s.output_dim; ++o) {
                    double b = s.has_bias ? model.bias(l)[o] : 0.0;
                    for (std::size_t t = 0; t < t_count; ++t)
                        z(i, o * t_count + t) = zp(t, o) + b;
                }
            }
        }
        res.preactivations.push_back(z);

        Matrix a(n, z.cols());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < z.cols(); ++j)
                a(i, j) = activate(s.activation, z(i, j));
        x = std::move(a);
    }
    res.logits = x;

    res.losses.resize(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w =
            loss.weight_for(batch.example_ids.empty() ? i : batch.example_ids[i]);
        double li;
        if (loss.kind == LossKind::logistic_binary) {
            li = log1pexp(-static_cast<double>(batch.labels[i]) * res.logits(i, 0));
        } else {
            auto row = res.logits.row(i);
            double zmax = *std::max_element(row.begin(), row.end());
            double lse = 0.0;
            for (double v : row) lse += std::exp(v - zmax);
            li = zmax + std::log(lse) - row[batch.labels[i]];
        }
        res.losses[i] = w * li;
        total += res.losses[i];
    }
    res.mean_loss = total / static_cast<double>(n);
    if (!std::isfinite(res.mean_loss)) throw NumericError("forward: non-finite loss");
    return res;
}

std::size_t PerExampleFactors::param_dim() const {
    std::size_t d = 0;
    for (const FactorBlock& b : blocks) d += b.param_count();
    return d;
}

PerExampleFactors backward_factored(const ModelSnapshot& model, const Batch& batch,
                                    const LossSpec& loss) {
    ForwardResult fw = forward(model, batch, loss);
    const std::size_t n = batch.size();

    // Loss delta w.r.t. the last layer's output.
    Matrix delta(n, fw.logits.cols());
    for (std::size_t i = 0; i < n; ++i) {
        const double w =
            loss.weight_for(batch.example_ids.empty() ? i : batch.example_ids[i]);
        if (loss.kind == LossKind::logistic_binary) {
            const double y = batch.labels[i];
            delta(i, 0) = w * (-y / (1.0 + std::exp(y * fw.logits(i, 0))));
        } else {
            auto row = fw.logits.row(i);
            double zmax = *std::max_element(row.begin(), row.end());
            double lse = 0.0;
            for (double v : row) lse += std::exp(v - zmax);
            for (std::size_t c = 0; c < row.size(); ++c)
                delta(i, c) = w * (std::exp(row[c] - zmax) / lse -
                                   (static_cast<std::size_t>(batch.labels[i]) == c));
        }
    }

    PerExampleFactors out;
    out.batch_size = n;
    out.example_ids = batch.example_ids;

    std::vector<FactorBlock> reversed;
    for (std::size_t li = model.layers().size(); li-- > 0;) {
        const LayerSpec& s = model.layers()[li];
        const Matrix& z = fw.preactivations[li];
        const Matrix& x = fw.layer_inputs[li];
        const std::size_t t_count = s.positions();

        // dz = delta (.) act'(z)
        Matrix dz(n, z.cols());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < z.cols(); ++j)
                dz(i, j) = delta(i, j) * activate_deriv(s.activation, z(i, j));

        if (s.trainable) {
            FactorBlock wb;
            wb.layer = li;
            wb.input_dim = s.input_dim;
            wb.output_dim = s.output_dim;
            wb.positions = t_count;
            wb.a = Matrix(n * t_count, s.input_dim);
            wb.d = Matrix(n * t_count, s.output_dim);
            for (std::size_t i = 0; i < n; ++i) {
                if (s.kind == LayerKind::fully_connected) {
                    auto ar = wb.a.row(i);
                    auto xr = x.row(i);
                    std::copy(xr.begin(), xr.end(), ar.begin());
                    auto dr = wb.d.row(i);
                    auto dzr = dz.row(i);
                    std::copy(dzr.begin(), dzr.end(), dr.begin());
                } else {
                    Matrix patches = extract_patches(s, x.row(i));
                    for (std::size_t t = 0; t < t_count; ++t) {
                        auto ar = wb.a.row(i * t_count + t);
                        auto pr = patches.row(t);
                        std::copy(pr.begin(), pr.end(), ar.begin());
                        auto dr = wb.d.row(i * t_count + t);
                        for (std::size_t o = 0; o < s.output_dim; ++o)
                            dr[o] = dz(i, o * t_count + t);
                    }
                }
            }
            if (!wb.a.all_finite() || !wb.d.all_finite())
                throw NumericError("backward: non-finite factors at layer " +
                                   std::to_string(li));

            if (s.has_bias) {
                FactorBlock bb;
                bb.layer = li;
                bb.is_bias = true;
                bb.input_dim = 1;
                bb.output_dim = s.output_dim;
                bb.positions = t_count;
                bb.a = Matrix(n * t_count, 1);
                for (std::size_t r = 0; r < n * t_count; ++r) bb.a(r, 0) = 1.0;
                bb.d = wb.d;
                reversed.push_back(std::move(bb));
            }
            reversed.push_back(std::move(wb));
        }

        if (li == 0) break;

        // Propagate to the previous layer's output.
        const LayerSpec& prev = model.layers()[li - 1];
        Matrix next_delta(n, prev.out_features());
        const Matrix& w = model.weight(li);
        if (s.kind == LayerKind::fully_connected) {
            for (std::size_t i = 0; i < n; ++i) {
                auto nd = next_delta.row(i);
                for (std::size_t p = 0; p < s.input_dim; ++p) {
                    double acc = 0.0;
                    for (std::size_t o = 0; o < s.output_dim; ++o)
                        acc += w(p, o) * dz(i, o);
                    nd[p] = acc;
                }
            }
        } else {
            const std::size_t oh = s.out_height(), ow = s.out_width();
            for (std::size_t i = 0; i < n; ++i) {
                auto nd = next_delta.row(i);
                for (std::size_t y0 = 0; y0 < oh; ++y0)
                    for (std::size_t x0 = 0; x0 < ow; ++x0) {
                        const std::size_t t = y0 * ow + x0;
                        std::size_t q = 0;
                        for (std::size_t c = 0; c < s.in_channels; ++c)
                            for (std::size_t dy = 0; dy < s.kernel_h; ++dy)
                                for (std::size_t dx = 0; dx < s.kernel_w; ++dx) {
                                    double acc = 0.0;
                                    for (std::size_t o = 0; o < s.output_dim; ++o)
                                        acc += w(q, o) * dz(i, o * t_count + t);
                                    nd[(c * s.in_height + y0 + dy) * s.in_width + x0 + dx] +=
                                        acc;
                                    ++q;
                                }
                    }
            }
        }
        delta = std::move(next_delta);
    }

    // Emitted last-to-first above; flat layout wants first-to-last with each
    // layer's weight block before its bias block.
    std::sort(reversed.begin(), reversed.end(), [](const FactorBlock& a, const FactorBlock& b) {
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.is_bias < b.is_bias;
    });
    out.blocks = std::move(reversed);
    return out;
}

std::vector<double> per_example_gradient(const PerExampleFactors& factors, std::size_t i) {
    require(i < factors.batch_size, "per_example_gradient: example index out of range");
    std::vector<double> g;
    g.reserve(factors.param_dim());
    for (const FactorBlock& b : factors.blocks) {
        const std::size_t base = g.size();
        g.resize(base + b.param_count(), 0.0);
        for (std::size_t t = 0; t < b.positions; ++t) {
            auto ar = b.a_row(i, t);
            auto dr = b.d_row(i, t);
            for (std::size_t p = 0; p < b.input_dim; ++p)
                for (std::size_t o = 0; o < b.output_dim; ++o)
                    g[base + p * b.output_dim + o] += ar[p] * dr[o];
        }
    }
    return g;
}

std::vector<double> mean_gradient(const PerExampleFactors& factors) {
    const double n = static_cast<double>(factors.batch_size);
    std::vector<double> g;
    g.reserve(factors.param_dim());
    for (const FactorBlock& b : factors.blocks) {
        // sum_i sum_t a d^T accumulated in row order, then one division.
        const std::size_t base = g.size();
        g.resize(base + b.param_count(), 0.0);
        for (std::size_t r = 0; r < b.a.rows(); ++r) {
            auto ar = b.a.row(r);
            auto dr = b.d.row(r);
            for (std::size_t p = 0; p < b.input_dim; ++p)
                for (std::size_t o = 0; o < b.output_dim; ++o)
                    g[base + p * b.output_dim + o] += ar[p] * dr[o];
        }
        for (std::size_t k = base; k < g.size(); ++k) g[k] /= n;
    }
    return g;
}

ModelSnapshot sgd_step(const ModelSnapshot& model, const Batch& batch, const LossSpec& loss,
                       const SgdConfig& cfg, std::vector<double>& velocity) {
    const std::size_t dim = model.param_count();
    if (velocity.empty()) velocity.assign(dim, 0.0);
    require(velocity.size() == dim, "sgd_step: velocity buffer has wrong length");

    std::vector<double> grad = mean_gradient(backward_factored(model, batch, loss));
    std::vector<double> theta = model.flat_params();
    for (std::size_t k = 0; k < dim; ++k) {
        velocity[k] = cfg.momentum * velocity[k] + grad[k] + cfg.weight_decay * theta[k];
        theta[k] -= cfg.lr * velocity[k];
    }

    if (!all_finite(theta)) {
        // Point at the first offending layer for the diagnostic.
        std::size_t pos = 0;
        for (std::size_t l = 0; l < model.layers().size(); ++l) {
            const LayerSpec& s = model.layers()[l];
            if (!s.trainable) continue;
            std::size_t len = s.input_dim * s.output_dim + (s.has_bias ? s.output_dim : 0);
            if (!all_finite({theta.data() + pos, len}))
                throw NumericError("sgd_step: non-finite parameters at layer " +
                                   std::to_string(l) + " (diverged?)");
            pos += len;
        }
        throw NumericError("sgd_step: non-finite parameters");
    }
    return model.with_params(theta);
}

}  // namespace gradclust
