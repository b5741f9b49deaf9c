#ifndef GRADCLUST_MODEL_HPP
#define GRADCLUST_MODEL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gradclust/matrix.hpp"
#include "gradclust/rng.hpp"

namespace gradclust {

enum class Activation { identity, relu };
enum class LayerKind { fully_connected, convolution };

// One layer of a feedforward model. Convolutions are expressed through patch
// extraction: input_dim is the patch length kernel_h*kernel_w*in_channels, and
// the layer applies the same input_dim x output_dim weight matrix at each of
// its positions() spatial locations (stride 1, no padding).
//
// Data layouts, used consistently everywhere:
//   conv input per example   : (c, y, x) -> (c*H + y)*W + x
//   patch vector             : (c, dy, dx) -> (c*kernel_h + dy)*kernel_w + dx
//   conv output per example  : (o, t) -> o*T + t, t = y0*W' + x0
struct LayerSpec {
    LayerKind kind = LayerKind::fully_connected;
    std::size_t input_dim = 0;   // patch length for conv
    std::size_t output_dim = 0;  // output channels for conv
    Activation activation = Activation::identity;
    bool has_bias = true;
    bool trainable = true;

    // Convolution geometry.
    std::size_t kernel_h = 0, kernel_w = 0;
    std::size_t in_channels = 0, in_height = 0, in_width = 0;

    std::size_t out_height() const { return in_height - kernel_h + 1; }
    std::size_t out_width() const { return in_width - kernel_w + 1; }
    std::size_t positions() const {
        return kind == LayerKind::convolution ? out_height() * out_width() : 1;
    }
    std::size_t in_features() const {
        return kind == LayerKind::convolution ? in_channels * in_height * in_width
                                              : input_dim;
    }
    std::size_t out_features() const { return output_dim * positions(); }

    void validate() const;
};

LayerSpec fc_layer(std::size_t in, std::size_t out, Activation act,
                   bool has_bias = true, bool trainable = true);
LayerSpec conv_layer(std::size_t in_channels, std::size_t in_height, std::size_t in_width,
                     std::size_t kernel_h, std::size_t kernel_w, std::size_t out_channels,
                     Activation act, bool has_bias = true, bool trainable = true);

enum class LossKind { logistic_binary, cross_entropy_softmax };

// Loss applied to the last layer's output. logistic_binary expects a single
// output and labels in {-1, +1}; cross_entropy_softmax expects labels in
// [0, C). example_weights, when non-empty, is indexed by dataset example id.
struct LossSpec {
    LossKind kind = LossKind::logistic_binary;
    std::vector<double> example_weights;

    double weight_for(std::size_t example_id) const {
        return example_weights.empty() ? 1.0 : example_weights.at(example_id);
    }
};

struct Batch {
    Matrix features;  // one row per example
    std::vector<int> labels;
    std::vector<std::size_t> example_ids;  // position in the source dataset

    std::size_t size() const { return features.rows(); }
};

// Immutable parameter snapshot: layer specs plus each layer's weights (stored
// input_dim x output_dim) and bias. The flat parameter vector covers trainable
// layers only, each as row-major weights followed by its bias; frozen layers
// (e.g. a fixed random-feature map) keep their matrices here but contribute no
// coordinates and no gradient factors.
class ModelSnapshot {
public:
    ModelSnapshot(std::vector<LayerSpec> layers, std::vector<Matrix> weights,
                  std::vector<std::vector<double>> biases);

    static ModelSnapshot he_init(std::vector<LayerSpec> layers, RngStream& rng);

    const std::vector<LayerSpec>& layers() const { return layers_; }
    const Matrix& weight(std::size_t l) const { return weights_[l]; }
    const std::vector<double>& bias(std::size_t l) const { return biases_[l]; }

    std::size_t param_count() const;
    std::vector<double> flat_params() const;
    ModelSnapshot with_params(const std::vector<double>& theta) const;

private:
    std::vector<LayerSpec> layers_;
    std::vector<Matrix> weights_;
    std::vector<std::vector<double>> biases_;
};

struct ForwardResult {
    std::vector<double> losses;  // per example, already example-weighted
    double mean_loss = 0.0;
    Matrix logits;                       // last layer output, one row per example
    std::vector<Matrix> layer_inputs;    // cache for backprop
    std::vector<Matrix> preactivations;  // cache for backprop
};

ForwardResult forward(const ModelSnapshot& model, const Batch& batch, const LossSpec& loss);

// Per-example gradients in factored form. For each trainable parameter tensor
// there is one block; the example gradient is sum_t a_row(i,t) d_row(i,t)^T.
// Activations and output deltas are stored one row per (example, position):
// row i*positions + t. Bias blocks reuse the layer's deltas with a_row == (1).
struct FactorBlock {
    std::size_t layer = 0;
    bool is_bias = false;
    std::size_t input_dim = 0, output_dim = 0, positions = 1;
    Matrix a;  // (n * positions) x input_dim
    Matrix d;  // (n * positions) x output_dim

    std::span<const double> a_row(std::size_t example, std::size_t t) const {
        return a.row(example * positions + t);
    }
    std::span<const double> d_row(std::size_t example, std::size_t t) const {
        return d.row(example * positions + t);
    }
    std::size_t param_count() const { return input_dim * output_dim; }
};

struct PerExampleFactors {
    std::size_t batch_size = 0;
    std::vector<FactorBlock> blocks;
    std::vector<std::size_t> example_ids;

    std::size_t param_dim() const;
};

PerExampleFactors backward_factored(const ModelSnapshot& model, const Batch& batch,
                                    const LossSpec& loss);

// Reconstructs example i's flat gradient from the factors.
std::vector<double> per_example_gradient(const PerExampleFactors& factors, std::size_t i);

// Batch-mean gradient, computed blockwise as A^T D / n. Agrees with the mean of
// per_example_gradient to rounding; the summation order over (example, position)
// rows is identical in both routes.
std::vector<double> mean_gradient(const PerExampleFactors& factors);

struct SgdConfig {
    double lr = 0.01;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

// theta <- theta - lr * v where v is the momentum buffer of
// (batch-mean gradient + weight_decay * theta). velocity must be empty (treated
// as zeros) or param_count() long; it is updated in place. Throws NumericError
// naming the offending layer if any new parameter is non-finite.
ModelSnapshot sgd_step(const ModelSnapshot& model, const Batch& batch, const LossSpec& loss,
                       const SgdConfig& cfg, std::vector<double>& velocity);

}  // namespace gradclust

#endif
