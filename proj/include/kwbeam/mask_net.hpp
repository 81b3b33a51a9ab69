// mask_net.hpp
// Frame-wise mask estimator: 5376-input MLP with three 1024-unit ReLU hidden
// layers and a 512-unit sigmoid output split into a keyword mask and a
// non-keyword mask (256 bins each, keyword half first). Training minimizes
// binary cross entropy against ideal binary masks with plain SGD, inverted
// dropout and frame-level shuffling.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "kwbeam/error.hpp"
#include "kwbeam/io_util.hpp"
#include "kwbeam/features.hpp"
#include "kwbeam/linalg.hpp"
#include "kwbeam/rng.hpp"
#include "kwbeam/stft.hpp"

namespace kwbeam {

struct MlpLayer {
    Matrix weights;               // in x out, row-major
    std::vector<double> biases;   // out
};

// Affine stack with ReLU hidden units and sigmoid outputs. Kept separate
// from MaskNetModel so small stacks can be unit-checked against references.
struct Mlp {
    std::vector<MlpLayer> layers;

    std::size_t input_dim() const { return layers.front().weights.rows(); }
    std::size_t output_dim() const { return layers.back().weights.cols(); }

    void validate() const {
        require(!layers.empty(), "mlp: no layers");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            require(layers[l].weights.cols() == layers[l].biases.size(),
                    "mlp: bias length mismatch at layer " + std::to_string(l));
            if (l + 1 < layers.size())
                require(layers[l].weights.cols() == layers[l + 1].weights.rows(),
                        "mlp: dimension chain broken at layer " + std::to_string(l));
            for (double v : layers[l].biases)
                require(std::isfinite(v), "mlp: non-finite bias");
            for (std::size_t i = 0; i < layers[l].weights.rows(); ++i)
                for (std::size_t j = 0; j < layers[l].weights.cols(); ++j)
                    require(std::isfinite(layers[l].weights(i, j)), "mlp: non-finite weight");
        }
    }
};

// Glorot-uniform weights from a seeded stream, zero biases. Row-major fill
// order, layer by layer, so a seed pins every parameter.
inline Mlp init_mlp(const std::vector<std::size_t> &dims, std::uint64_t seed) {
    require(dims.size() >= 2, "mlp: need at least input and output dims");
    Rng rng(seed);
    Mlp mlp;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        MlpLayer layer;
        layer.weights = Matrix(dims[l], dims[l + 1]);
        layer.biases.assign(dims[l + 1], 0.0);
        const double bound = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
        for (std::size_t i = 0; i < dims[l]; ++i)
            for (std::size_t j = 0; j < dims[l + 1]; ++j)
                layer.weights(i, j) = rng.uniform(-bound, bound);
        mlp.layers.push_back(std::move(layer));
    }
    return mlp;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Width of the activation entering layer l (the feature width for l == 0).
inline std::size_t mlp_input_width(const Mlp &mlp, std::size_t l) {
    return mlp.layers[l].weights.rows();
}

namespace detail {

inline void affine(const Matrix &x, const MlpLayer &layer, Matrix &out) {
    matmul(x, layer.weights, out);
    const std::size_t cols = out.cols();
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double *row = out.row(r);
        for (std::size_t j = 0; j < cols; ++j) row[j] += layer.biases[j];
    }
}

// Stable summed BCE of one logit against a {0,1}-ish target.
inline double bce_from_logit(double z, double t) {
    return std::max(z, 0.0) - t * z + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace detail

// Forward pass on already normalized features, sigmoid outputs. No dropout.
inline Matrix mlp_apply(const Mlp &mlp, const Matrix &features) {
    require(features.cols() == mlp.input_dim(), "mlp: feature dimension mismatch");
    Matrix cur = features, next;
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        detail::affine(cur, mlp.layers[l], next);
        double *v = next.data();
        const std::size_t n = next.rows() * next.cols();
        if (l + 1 < mlp.layers.size()) {
            for (std::size_t i = 0; i < n; ++i) v[i] = std::max(v[i], 0.0);
        } else {
            for (std::size_t i = 0; i < n; ++i) v[i] = sigmoid(v[i]);
        }
        std::swap(cur, next);
    }
    return cur;
}

struct MlpGradients {
    std::vector<MlpLayer> layers;  // same shapes as the network
};

// Mean-over-rows, summed-over-outputs BCE and (optionally) its gradients.
// dropout_masks, when given, holds inverted-dropout scale factors for the
// input and each hidden activation: [input, hidden_1, .., hidden_{L-1}].
// The same code path serves training and the finite-difference checks.
inline double mlp_loss_and_gradients(const Mlp &mlp, const Matrix &features,
                                     const Matrix &targets, MlpGradients *grads,
                                     const std::vector<Matrix> *dropout_masks = nullptr) {
    const std::size_t batch = features.rows();
    const std::size_t num_layers = mlp.layers.size();
    require(batch > 0, "mlp: empty batch");
    require(targets.rows() == batch && targets.cols() == mlp.output_dim(),
            "mlp: target shape mismatch");
    if (dropout_masks)
        require(dropout_masks->size() == num_layers, "mlp: need one dropout mask per layer input");

    auto apply_mask = [](Matrix &m, const Matrix &mask) {
        for (std::size_t i = 0, n = m.rows() * m.cols(); i < n; ++i)
            m.data()[i] *= mask.data()[i];
    };

    // forward, keeping each layer's (dropped) input for the weight gradients
    std::vector<Matrix> inputs(num_layers);
    inputs[0] = features;
    if (dropout_masks) apply_mask(inputs[0], (*dropout_masks)[0]);
    Matrix logits;
    for (std::size_t l = 0; l < num_layers; ++l) {
        Matrix out;
        detail::affine(inputs[l], mlp.layers[l], out);
        if (l + 1 < num_layers) {
            for (std::size_t i = 0, n = out.rows() * out.cols(); i < n; ++i)
                out.data()[i] = std::max(out.data()[i], 0.0);
            if (dropout_masks) apply_mask(out, (*dropout_masks)[l + 1]);
            inputs[l + 1] = std::move(out);
        } else {
            logits = std::move(out);
        }
    }

    double loss_sum = 0.0;
    for (std::size_t i = 0, n = logits.rows() * logits.cols(); i < n; ++i)
        loss_sum += detail::bce_from_logit(logits.data()[i], targets.data()[i]);
    const double loss = loss_sum / static_cast<double>(batch);
    if (!grads) return loss;

    grads->layers.resize(num_layers);

    // dL/dlogit = (sigmoid(z) - t) / batch
    Matrix delta(batch, mlp.output_dim());
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0, n = delta.rows() * delta.cols(); i < n; ++i)
        delta.data()[i] = (sigmoid(logits.data()[i]) - targets.data()[i]) * inv_batch;

    for (std::size_t l = num_layers; l-- > 0;) {
        MlpLayer &g = grads->layers[l];
        matmul_tn(inputs[l], delta, g.weights);
        g.biases.assign(mlp.layers[l].weights.cols(), 0.0);
        for (std::size_t r = 0; r < delta.rows(); ++r) {
            const double *row = delta.row(r);
            for (std::size_t j = 0; j < g.biases.size(); ++j) g.biases[j] += row[j];
        }
        if (l == 0) break;
        Matrix prev_delta;
        matmul_nt(delta, mlp.layers[l].weights, prev_delta);
        // through the dropout scaling, then the ReLU gate; inputs[l] holds
        // post-ReLU (dropped) values, so a positive entry means the
        // pre-activation was positive and a zero entry gates to zero either
        // way (dead ReLU or dropped unit)
        if (dropout_masks) apply_mask(prev_delta, (*dropout_masks)[l]);
        for (std::size_t i = 0, n = prev_delta.rows() * prev_delta.cols(); i < n; ++i)
            if (inputs[l].data()[i] <= 0.0) prev_delta.data()[i] = 0.0;
        delta = std::move(prev_delta);
    }
    return loss;
}

constexpr std::size_t kMaskDim = 256;
constexpr std::size_t kHiddenDim = 1024;
constexpr std::size_t kNumHidden = 3;

struct MaskPair {
    Matrix keyword;      // T x 256, values in (0,1)
    Matrix non_keyword;  // T x 256
};

struct IbmPair {
    Matrix keyword;      // T x 256, values in {0,1}
    Matrix non_keyword;  // complement of keyword
};

struct MaskNetModel {
    Mlp mlp;
    NormStats norm_stats;
    std::uint64_t seed = 0;

    void validate() const {
        mlp.validate();
        require(mlp.layers.size() == kNumHidden + 1,
                "model: expected " + std::to_string(kNumHidden) + " hidden layers plus output");
        for (std::size_t l = 0; l < kNumHidden; ++l)
            require(mlp.layers[l].weights.cols() == kHiddenDim,
                    "model: hidden layer width must be " + std::to_string(kHiddenDim));
        require(mlp.output_dim() == 2 * kMaskDim, "model: output width must be 512");
        require(norm_stats.dim == mlp.input_dim(),
                "model: normalization statistics do not match the input dimension");
    }
};

inline MaskNetModel init_model(const FeatureConfig &feat, std::uint64_t seed) {
    feat.validate();
    require(feat.base_dim == static_cast<int>(kMaskDim), "model: base_dim must be 256");
    MaskNetModel model;
    model.seed = seed;
    model.mlp = init_mlp({static_cast<std::size_t>(feat.spliced_dim()), kHiddenDim, kHiddenDim,
                          kHiddenDim, 2 * kMaskDim},
                         seed);
    return model;
}

// Inference: splice, normalize with the stored global statistics, run the
// MLP (no dropout) and split the 512 outputs into the keyword mask first and
// the non-keyword mask second.
inline MaskPair forward(const MaskNetModel &model, const MagnitudeSpectrogram &mag,
                        const FeatureConfig &feat = {}) {
    model.validate();
    require(static_cast<std::size_t>(feat.spliced_dim()) == model.mlp.input_dim(),
            "forward: feature config does not match the model");
    const Matrix features = normalize(splice(mag, feat), model.norm_stats);
    const Matrix out = mlp_apply(model.mlp, features);
    for (std::size_t i = 0, n = out.rows() * out.cols(); i < n; ++i)
        require_numeric(std::isfinite(out.data()[i]),
                        "forward: non-finite activation (corrupt model?)");
    MaskPair masks;
    masks.keyword = Matrix(out.rows(), kMaskDim);
    masks.non_keyword = Matrix(out.rows(), kMaskDim);
    for (std::size_t t = 0; t < out.rows(); ++t) {
        std::memcpy(masks.keyword.row(t), out.row(t), kMaskDim * sizeof(double));
        std::memcpy(masks.non_keyword.row(t), out.row(t) + kMaskDim, kMaskDim * sizeof(double));
    }
    return masks;
}

// Ideal binary mask over bins 0..255: the keyword wins a cell only when its
// magnitude strictly exceeds the background's (plus an optional dB margin);
// ties go to the non-keyword mask so ambiguous energy stays out of the
// steering estimate.
inline IbmPair compute_ibm(const MagnitudeSpectrogram &keyword_mag,
                           const MagnitudeSpectrogram &background_mag, double margin_db = 0.0) {
    require(keyword_mag.frames == background_mag.frames &&
                keyword_mag.bins == background_mag.bins,
            "ibm: spectrogram shapes differ");
    require(keyword_mag.bins >= kMaskDim, "ibm: need at least 256 bins");
    const double factor = std::pow(10.0, margin_db / 20.0);
    IbmPair ibm;
    ibm.keyword = Matrix(keyword_mag.frames, kMaskDim);
    ibm.non_keyword = Matrix(keyword_mag.frames, kMaskDim);
    for (std::size_t t = 0; t < keyword_mag.frames; ++t) {
        for (std::size_t f = 0; f < kMaskDim; ++f) {
            const double k = keyword_mag(t, f) > background_mag(t, f) * factor ? 1.0 : 0.0;
            ibm.keyword(t, f) = k;
            ibm.non_keyword(t, f) = 1.0 - k;
        }
    }
    return ibm;
}

struct TrainConfig {
    std::size_t batch_size = 128;
    double learning_rate = 0.01;
    std::size_t epochs = 50;
    double dropout_input = 0.2;
    double dropout_hidden = 0.5;
    std::uint64_t seed = 0;

    void validate() const {
        require(batch_size > 0, "train: batch_size must be positive");
        require(learning_rate > 0.0, "train: learning rate must be positive");
        require(dropout_input >= 0.0 && dropout_input < 1.0 && dropout_hidden >= 0.0 &&
                    dropout_hidden < 1.0,
                "train: dropout rates must lie in [0,1)");
    }
};

struct TrainExample {
    MagnitudeSpectrogram mixture_mag;  // T x (>=256) bins
    IbmPair ibm;                       // T x 256 targets
};

// SGD over frames pooled from every utterance and reshuffled each epoch with
// the seeded generator. Spliced rows are gathered per batch straight from
// the utterance spectrograms, normalized with the model's global statistics
// and perturbed by inverted dropout. Returns the per-epoch mean loss.
inline std::vector<double> train(MaskNetModel &model, const std::vector<TrainExample> &dataset,
                                 const TrainConfig &cfg, const FeatureConfig &feat = {}) {
    cfg.validate();
    model.validate();
    require(!dataset.empty(), "train: empty dataset");
    require(static_cast<std::size_t>(feat.spliced_dim()) == model.mlp.input_dim(),
            "train: feature config does not match the model");

    struct FrameRef {
        std::uint32_t utt;
        std::uint32_t frame;
    };
    std::vector<FrameRef> pool;
    for (std::size_t u = 0; u < dataset.size(); ++u) {
        const TrainExample &ex = dataset[u];
        require(ex.mixture_mag.bins >= static_cast<std::size_t>(feat.base_dim),
                "train: utterance " + std::to_string(u) + " has fewer bins than base_dim");
        require(ex.ibm.keyword.rows() == ex.mixture_mag.frames &&
                    ex.ibm.keyword.cols() == kMaskDim &&
                    ex.ibm.non_keyword.rows() == ex.mixture_mag.frames,
                "train: IBM shape does not match utterance " + std::to_string(u));
        for (std::size_t t = 0; t < ex.mixture_mag.frames; ++t)
            pool.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(t)});
    }
    require(!pool.empty(), "train: dataset holds no frames");

    Rng rng(cfg.seed);
    const std::size_t in_dim = model.mlp.input_dim();
    const std::size_t out_dim = model.mlp.output_dim();
    const bool use_dropout = cfg.dropout_input > 0.0 || cfg.dropout_hidden > 0.0;

    std::vector<double> epoch_losses;
    Matrix batch_x, batch_t;
    MlpGradients grads;
    std::vector<Matrix> masks;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(pool);
        double loss_weighted_sum = 0.0;
        for (std::size_t start = 0; start < pool.size(); start += cfg.batch_size) {
            const std::size_t bsz = std::min(cfg.batch_size, pool.size() - start);
            if (batch_x.rows() != bsz) {
                batch_x = Matrix(bsz, in_dim);
                batch_t = Matrix(bsz, out_dim);
            }
            for (std::size_t b = 0; b < bsz; ++b) {
                const FrameRef ref = pool[start + b];
                const TrainExample &ex = dataset[ref.utt];
                splice_row(ex.mixture_mag, ref.frame, feat, batch_x.row(b));
                normalize_row(batch_x.row(b), model.norm_stats, batch_x.row(b));
                std::memcpy(batch_t.row(b), ex.ibm.keyword.row(ref.frame),
                            kMaskDim * sizeof(double));
                std::memcpy(batch_t.row(b) + kMaskDim, ex.ibm.non_keyword.row(ref.frame),
                            kMaskDim * sizeof(double));
            }

            const std::vector<Matrix> *mask_ptr = nullptr;
            if (use_dropout) {
                masks.assign(model.mlp.layers.size(), Matrix());
                for (std::size_t l = 0; l < masks.size(); ++l) {
                    const double p = l == 0 ? cfg.dropout_input : cfg.dropout_hidden;
                    const std::size_t width = mlp_input_width(model.mlp, l);
                    masks[l] = Matrix(bsz, width);
                    const double keep_scale = p > 0.0 ? 1.0 / (1.0 - p) : 1.0;
                    for (std::size_t i = 0, n = bsz * width; i < n; ++i)
                        masks[l].data()[i] = rng.uniform() < p ? 0.0 : keep_scale;
                }
                mask_ptr = &masks;
            }

            const double loss =
                mlp_loss_and_gradients(model.mlp, batch_x, batch_t, &grads, mask_ptr);
            require_numeric(std::isfinite(loss),
                            "train: non-finite loss at epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(start / cfg.batch_size));
            loss_weighted_sum += loss * static_cast<double>(bsz);

            for (std::size_t l = 0; l < model.mlp.layers.size(); ++l) {
                MlpLayer &layer = model.mlp.layers[l];
                const MlpLayer &g = grads.layers[l];
                double *w = layer.weights.data();
                const double *gw = g.weights.data();
                for (std::size_t i = 0, n = layer.weights.rows() * layer.weights.cols(); i < n;
                     ++i)
                    w[i] -= cfg.learning_rate * gw[i];
                for (std::size_t j = 0; j < layer.biases.size(); ++j)
                    layer.biases[j] -= cfg.learning_rate * g.biases[j];
            }
        }
        epoch_losses.push_back(loss_weighted_sum / static_cast<double>(pool.size()));
    }
    return epoch_losses;
}

// Model file "KWNET1\0": u32 layer count, per layer u32 rows, u32 cols,
// row-major f64 weights and f64 biases, then the KWNORM1 stats block and the
// u64 init seed. Round trips are bit-exact.
inline void save_model(const MaskNetModel &model, const std::string &path) {
    model.validate();
    std::FILE *f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("model: cannot open for write " + path);
    std::fwrite("KWNET1\0", 1, 7, f);
    const std::uint32_t count = static_cast<std::uint32_t>(model.mlp.layers.size());
    std::fwrite(&count, 4, 1, f);
    for (const MlpLayer &layer : model.mlp.layers) {
        const std::uint32_t rows = static_cast<std::uint32_t>(layer.weights.rows());
        const std::uint32_t cols = static_cast<std::uint32_t>(layer.weights.cols());
        std::fwrite(&rows, 4, 1, f);
        std::fwrite(&cols, 4, 1, f);
        std::fwrite(layer.weights.data(), 8, rows * static_cast<std::size_t>(cols), f);
        std::fwrite(layer.biases.data(), 8, cols, f);
    }
    write_norm_stats(f, model.norm_stats);
    std::fwrite(&model.seed, 8, 1, f);
    if (std::fclose(f) != 0) throw IoError("model: write failed " + path);
}

inline MaskNetModel load_model(const std::string &path) {
    std::FILE *f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("model: cannot open " + path);
    detail::FileCloser guard{f};

    char magic[7];
    if (std::fread(magic, 1, 7, f) != 7 || std::memcmp(magic, "KWNET1\0", 7) != 0)
        throw IoError("model: bad magic in " + path);
    std::uint32_t count = 0;
    if (std::fread(&count, 4, 1, f) != 1) throw IoError("model: truncated header in " + path);
    require(count == kNumHidden + 1, "model: unexpected layer count in " + path);

    MaskNetModel model;
    for (std::uint32_t l = 0; l < count; ++l) {
        std::uint32_t rows = 0, cols = 0;
        if (std::fread(&rows, 4, 1, f) != 1 || std::fread(&cols, 4, 1, f) != 1)
            throw IoError("model: truncated layer header in " + path);
        MlpLayer layer;
        layer.weights = Matrix(rows, cols);
        layer.biases.assign(cols, 0.0);
        const std::size_t n = static_cast<std::size_t>(rows) * cols;
        if (std::fread(layer.weights.data(), 8, n, f) != n ||
            std::fread(layer.biases.data(), 8, cols, f) != cols)
            throw IoError("model: truncated parameters in " + path);
        model.mlp.layers.push_back(std::move(layer));
    }
    model.norm_stats = read_norm_stats(f);
    if (std::fread(&model.seed, 8, 1, f) != 1) throw IoError("model: missing seed in " + path);
    model.validate();
    return model;
}

}  // namespace kwbeam
