#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "meshcal/dataset.hpp"
#include "meshcal/forward_model.hpp"

namespace meshcal {

// ---------------------------------------------------------------------------
// Small from-scratch network stack: dense layers, tanh activations and a
// 1-D transposed convolution, with exact reverse-mode gradients. All
// parameters live in one flat vector so the quasi-Newton trainer can
// treat a network as an ordinary objective.
// ---------------------------------------------------------------------------

struct LayerSpec {
    enum class Kind { dense, tanh_act, tconv1d } kind = Kind::dense;
    int in_size = 0;
    int out_size = 0;
    // tconv1d geometry; out_size = out_channels * crop_to.
    int in_channels = 0;
    int in_length = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 0;
    int crop_to = 0;  // centered crop of the raw output length

    static LayerSpec dense(int in, int out);
    static LayerSpec tanh_act(int size);
    static LayerSpec tconv1d(int in_channels, int in_length, int out_channels, int kernel, int stride, int crop_to);
    int raw_length() const { return (in_length - 1) * stride + kernel; }
    int param_count() const;
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    int input_size() const { return layers.front().in_size; }
    int output_size() const { return layers.back().out_size; }
    int param_count() const;
    /// Dense trunk with tanh hidden activations and a linear output.
    static NetworkSpec mlp(int input, const std::vector<int>& hidden, int output);
    json to_json() const;
    static NetworkSpec from_json(const json& j);
};

/// Per-evaluation scratch: activations per layer boundary and the
/// matching backpropagated deltas.
struct NetWorkspace {
    std::vector<std::vector<double>> act;    // act[0] = input, act[L] = output
    std::vector<std::vector<double>> delta;  // same shapes
};

class Network {
public:
    explicit Network(NetworkSpec spec);

    const NetworkSpec& spec() const { return spec_; }
    int n_params() const { return n_params_; }
    int input_size() const { return spec_.input_size(); }
    int output_size() const { return spec_.output_size(); }

    NetWorkspace make_workspace() const;
    /// Forward pass; the output lives in ws.act.back().
    void forward(std::span<const double> params, std::span<const double> input, NetWorkspace& ws) const;
    /// Reverse pass from ws.delta.back() (dL/dy). Accumulates into
    /// grad_params (size n_params) and leaves dL/dx in ws.delta[0].
    void backward(std::span<const double> params, NetWorkspace& ws, std::span<double> grad_params) const;
    /// Forward-mode directional derivatives: tangents is n_dirs columns
    /// of input perturbations (input_size x n_dirs, row-major over
    /// inputs); returns output_size x n_dirs.
    void jacobian(std::span<const double> params, std::span<const double> input, std::span<const double> tangents,
                  int n_dirs, std::vector<double>& out) const;

    /// Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases.
    std::vector<double> init_params(std::uint64_t seed, double scale = 1.0) const;

private:
    NetworkSpec spec_;
    std::vector<int> offsets_;  // param offset per layer
    int n_params_ = 0;
};

// ---------------------------------------------------------------------------
// Min-max normalization to [-1, +1], per feature. Constant features map
// to 0 and denormalize back to the constant.
// ---------------------------------------------------------------------------

struct Normalization {
    std::vector<double> in_min, in_max;
    std::vector<double> out_min, out_max;

    static Normalization fit(std::span<const double> inputs, int in_dim, std::span<const double> outputs, int out_dim);
    void normalize_in(std::span<const double> x, std::span<double> u) const;
    void denormalize_out(std::span<const double> y, std::span<double> w) const;
    /// d(denormalized)/d(normalized) per output feature.
    double out_scale(int k) const;
    /// d(normalized)/d(raw) per input feature.
    double in_scale(int i) const;
    json to_json() const;
    static Normalization from_json(const json& j);
};

/// Model input features from a drive vector: the voltages and their
/// squares, normalized separately.
void voltage_features(std::span<const double> v, std::span<double> u18);

// ---------------------------------------------------------------------------
// Surrogate architectures and training.
// ---------------------------------------------------------------------------

enum class SurrogateKind { nn_sw, nn_lr, nn_ls, nn_lg, tcnn, tcnn100 };

const char* surrogate_kind_name(SurrogateKind k);
SurrogateKind surrogate_kind_from_name(const std::string& name);

struct SurrogateArchitecture {
    SurrogateKind kind = SurrogateKind::nn_sw;
    std::vector<int> hidden;  // dense hidden widths (MLP kinds)
    int dense1 = 54;          // TCNN trunk widths; dense2 is pinned by the
    int dense2 = 90;          // reshape (18 channels x n_lambda / 2)
    int tconv_kernel = 4;
    int tconv_stride = 2;

    static SurrogateArchitecture default_for(SurrogateKind kind, int n_lambda);
    /// Network for one forward evaluation (single channel for nn-sw /
    /// nn-lr / nn-ls, 9 x n_lambda tensor for the TCNN kinds).
    NetworkSpec network(int n_lambda) const;
    json to_json() const;
    static SurrogateArchitecture from_json(const json& j);
};

struct TrainOptions {
    int max_epochs = 1000;
    int patience = 50;                    // epochs without > min_improvement_db progress
    double min_improvement_db = 0.001;    // validation RMSE improvement threshold
    int lbfgs_memory = 10;
    std::uint64_t seed = 0;
    double init_scale = 1.0;
    int lr_train_channel = -1;  // nn-lr core channel; -1 = grid reference
    bool record_history = false;
    std::string history_csv;  // written when non-empty (implies record_history)
};

struct TrainHistory {
    std::vector<double> train_rmse_db;  // filled when record_history
    std::vector<double> val_rmse_db;
    int best_epoch = 0;
    int epochs = 0;
    bool restarted = false;  // one retry with halved init scale happened
};

/// Trained surrogate: one or more networks plus normalization and, for
/// the wavelength-rescaled kind, the per-channel dB offsets.
class NeuralSurrogate : public ForwardModel {
public:
    NeuralSurrogate(SurrogateArchitecture arch, WavelengthGrid grid, std::vector<std::vector<double>> params,
                    std::vector<Normalization> norms, std::vector<double> lr_offsets_db = {});

    std::string kind() const override { return surrogate_kind_name(arch_.kind); }
    const WavelengthGrid& grid() const override { return grid_; }
    std::vector<double> predict(std::span<const double> v) const override;
    void predict_with_jacobian(std::span<const double> v, std::vector<double>& weights_db,
                               std::vector<double>& jac) const override;
    json to_json() const override;
    static NeuralSurrogate from_json(const json& j);

    const SurrogateArchitecture& architecture() const { return arch_; }
    const std::vector<double>& lr_offsets_db() const { return lr_offsets_db_; }
    const std::vector<std::vector<double>>& params() const { return params_; }
    /// Gradients of one output entry with respect to all parameters of
    /// the network serving channel k (reverse mode), plus the drive.
    void entry_backward(std::span<const double> v, int p, int k, std::vector<double>& grad_params,
                        std::array<double, kNumMzi>& grad_v) const;

    json provenance = json::object();

private:
    const Network& net_for_channel(int k) const;
    void core_input(std::span<const double> v, int k, std::vector<double>& u) const;

    SurrogateArchitecture arch_;
    WavelengthGrid grid_;
    std::vector<std::unique_ptr<Network>> nets_;  // one, or n_lambda for nn-ls
    std::vector<std::vector<double>> params_;
    std::vector<Normalization> norms_;
    std::vector<double> lr_offsets_db_;  // nn-lr only; reference channel pinned to 0
};

struct TrainResult {
    std::unique_ptr<NeuralSurrogate> model;
    TrainHistory history;
};

/// Trains a surrogate with full-batch L-BFGS on the normalized MSE,
/// early-stopped on validation RMSE in dB (best checkpoint wins).
/// Dataset granularity must match the kind: single-channel for nn-sw,
/// multi-channel for the rest.
TrainResult train_surrogate(const SurrogateArchitecture& arch, const WeightDataset& training,
                            const WeightDataset& validation, const TrainOptions& options = {});

/// Random architecture search: layer counts in {1..3}, widths 16..256
/// log-uniform (TCNN kinds sample the first dense width only). Each
/// candidate trains with a reduced epoch budget; best validation RMSE
/// wins. Deterministic per seed.
struct SearchResult {
    SurrogateArchitecture best;
    double best_val_rmse_db = 0.0;
    std::vector<std::pair<SurrogateArchitecture, double>> tried;
};
SearchResult hyperparameter_search(SurrogateKind kind, int budget, const WeightDataset& training,
                                   const WeightDataset& validation, std::uint64_t seed,
                                   const TrainOptions& base = {});

}  // namespace meshcal
