#include "meshcal/neural.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "meshcal/io_util.hpp"
#include "meshcal/optimize.hpp"
#include "meshcal/parallel.hpp"
#include "meshcal/rng.hpp"

namespace meshcal {

namespace {
constexpr std::uint64_t kTagInit = 0x696e6974ULL;
constexpr std::uint64_t kTagSearch = 0x736561ULL;
}

// ---------------------------------------------------------------------------
// Layer and network plumbing
// ---------------------------------------------------------------------------

LayerSpec LayerSpec::dense(int in, int out) {
    LayerSpec l;
    l.kind = Kind::dense;
    l.in_size = in;
    l.out_size = out;
    return l;
}

LayerSpec LayerSpec::tanh_act(int size) {
    LayerSpec l;
    l.kind = Kind::tanh_act;
    l.in_size = size;
    l.out_size = size;
    return l;
}

LayerSpec LayerSpec::tconv1d(int in_channels, int in_length, int out_channels, int kernel, int stride, int crop_to) {
    LayerSpec l;
    l.kind = Kind::tconv1d;
    l.in_channels = in_channels;
    l.in_length = in_length;
    l.out_channels = out_channels;
    l.kernel = kernel;
    l.stride = stride;
    l.crop_to = crop_to;
    l.in_size = in_channels * in_length;
    if (crop_to > l.raw_length()) throw std::invalid_argument("tconv1d: crop exceeds raw output length");
    l.out_size = out_channels * crop_to;
    return l;
}

int LayerSpec::param_count() const {
    switch (kind) {
        case Kind::dense: return in_size * out_size + out_size;
        case Kind::tanh_act: return 0;
        case Kind::tconv1d: return in_channels * out_channels * kernel + out_channels;
    }
    return 0;
}

int NetworkSpec::param_count() const {
    int n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
}

NetworkSpec NetworkSpec::mlp(int input, const std::vector<int>& hidden, int output) {
    NetworkSpec s;
    int cur = input;
    for (int h : hidden) {
        s.layers.push_back(LayerSpec::dense(cur, h));
        s.layers.push_back(LayerSpec::tanh_act(h));
        cur = h;
    }
    s.layers.push_back(LayerSpec::dense(cur, output));
    return s;
}

json NetworkSpec::to_json() const {
    json arr = json::array();
    for (const auto& l : layers) {
        switch (l.kind) {
            case LayerSpec::Kind::dense:
                arr.push_back({{"kind", "dense"}, {"in", l.in_size}, {"out", l.out_size}});
                break;
            case LayerSpec::Kind::tanh_act:
                arr.push_back({{"kind", "tanh"}, {"size", l.in_size}});
                break;
            case LayerSpec::Kind::tconv1d:
                arr.push_back({{"kind", "tconv1d"},
                               {"in_channels", l.in_channels},
                               {"in_length", l.in_length},
                               {"out_channels", l.out_channels},
                               {"kernel", l.kernel},
                               {"stride", l.stride},
                               {"crop_to", l.crop_to}});
                break;
        }
    }
    return arr;
}

NetworkSpec NetworkSpec::from_json(const json& j) {
    NetworkSpec s;
    for (const auto& lj : j) {
        const std::string kind = lj.at("kind").get<std::string>();
        if (kind == "dense") {
            s.layers.push_back(LayerSpec::dense(lj.at("in").get<int>(), lj.at("out").get<int>()));
        } else if (kind == "tanh") {
            s.layers.push_back(LayerSpec::tanh_act(lj.at("size").get<int>()));
        } else if (kind == "tconv1d") {
            s.layers.push_back(LayerSpec::tconv1d(lj.at("in_channels").get<int>(), lj.at("in_length").get<int>(),
                                                  lj.at("out_channels").get<int>(), lj.at("kernel").get<int>(),
                                                  lj.at("stride").get<int>(), lj.at("crop_to").get<int>()));
        } else {
            throw std::invalid_argument("network spec: unknown layer kind " + kind);
        }
    }
    return s;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
    if (spec_.layers.empty()) throw std::invalid_argument("network: no layers");
    for (std::size_t i = 1; i < spec_.layers.size(); ++i)
        if (spec_.layers[i].in_size != spec_.layers[i - 1].out_size)
            throw std::invalid_argument("network: layer size mismatch at layer " + std::to_string(i));
    offsets_.resize(spec_.layers.size());
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        offsets_[i] = n_params_;
        n_params_ += spec_.layers[i].param_count();
    }
}

NetWorkspace Network::make_workspace() const {
    NetWorkspace ws;
    ws.act.resize(spec_.layers.size() + 1);
    ws.delta.resize(spec_.layers.size() + 1);
    ws.act[0].resize(static_cast<std::size_t>(input_size()));
    ws.delta[0].resize(static_cast<std::size_t>(input_size()));
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        ws.act[i + 1].resize(static_cast<std::size_t>(spec_.layers[i].out_size));
        ws.delta[i + 1].resize(static_cast<std::size_t>(spec_.layers[i].out_size));
    }
    return ws;
}

void Network::forward(std::span<const double> params, std::span<const double> input, NetWorkspace& ws) const {
    std::copy(input.begin(), input.end(), ws.act[0].begin());
    for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
        const LayerSpec& l = spec_.layers[li];
        const double* p = params.data() + offsets_[li];
        const double* x = ws.act[li].data();
        double* y = ws.act[li + 1].data();
        switch (l.kind) {
            case LayerSpec::Kind::dense: {
                const double* b = p + l.in_size * l.out_size;
                for (int o = 0; o < l.out_size; ++o) {
                    const double* row = p + static_cast<std::size_t>(o) * l.in_size;
                    double acc = b[o];
                    for (int i = 0; i < l.in_size; ++i) acc += row[i] * x[i];
                    y[o] = acc;
                }
                break;
            }
            case LayerSpec::Kind::tanh_act: {
                for (int i = 0; i < l.in_size; ++i) y[i] = std::tanh(x[i]);
                break;
            }
            case LayerSpec::Kind::tconv1d: {
                const double* b = p + l.in_channels * l.out_channels * l.kernel;
                const int head = (l.raw_length() - l.crop_to) / 2;
                for (int co = 0; co < l.out_channels; ++co)
                    for (int t = 0; t < l.crop_to; ++t) y[static_cast<std::size_t>(co) * l.crop_to + t] = b[co];
                for (int ci = 0; ci < l.in_channels; ++ci) {
                    for (int pos = 0; pos < l.in_length; ++pos) {
                        const double xv = x[static_cast<std::size_t>(ci) * l.in_length + pos];
                        if (xv == 0.0) continue;
                        const int base = pos * l.stride - head;
                        for (int co = 0; co < l.out_channels; ++co) {
                            const double* w = p + (static_cast<std::size_t>(ci) * l.out_channels + co) * l.kernel;
                            double* yrow = y + static_cast<std::size_t>(co) * l.crop_to;
                            for (int k = 0; k < l.kernel; ++k) {
                                const int t = base + k;
                                if (t >= 0 && t < l.crop_to) yrow[t] += xv * w[k];
                            }
                        }
                    }
                }
                break;
            }
        }
    }
}

void Network::backward(std::span<const double> params, NetWorkspace& ws, std::span<double> grad_params) const {
    for (std::size_t li = spec_.layers.size(); li-- > 0;) {
        const LayerSpec& l = spec_.layers[li];
        const double* p = params.data() + offsets_[li];
        double* gp = grad_params.data() + offsets_[li];
        const double* x = ws.act[li].data();
        const double* dy = ws.delta[li + 1].data();
        double* dx = ws.delta[li].data();
        switch (l.kind) {
            case LayerSpec::Kind::dense: {
                double* gb = gp + l.in_size * l.out_size;
                std::fill(dx, dx + l.in_size, 0.0);
                for (int o = 0; o < l.out_size; ++o) {
                    const double d = dy[o];
                    gb[o] += d;
                    if (d == 0.0) continue;
                    double* grow = gp + static_cast<std::size_t>(o) * l.in_size;
                    const double* row = p + static_cast<std::size_t>(o) * l.in_size;
                    for (int i = 0; i < l.in_size; ++i) {
                        grow[i] += d * x[i];
                        dx[i] += d * row[i];
                    }
                }
                break;
            }
            case LayerSpec::Kind::tanh_act: {
                const double* y = ws.act[li + 1].data();
                for (int i = 0; i < l.in_size; ++i) dx[i] = dy[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case LayerSpec::Kind::tconv1d: {
                double* gb = gp + l.in_channels * l.out_channels * l.kernel;
                const int head = (l.raw_length() - l.crop_to) / 2;
                for (int co = 0; co < l.out_channels; ++co) {
                    const double* drow = dy + static_cast<std::size_t>(co) * l.crop_to;
                    double acc = 0.0;
                    for (int t = 0; t < l.crop_to; ++t) acc += drow[t];
                    gb[co] += acc;
                }
                for (int ci = 0; ci < l.in_channels; ++ci) {
                    for (int pos = 0; pos < l.in_length; ++pos) {
                        const double xv = x[static_cast<std::size_t>(ci) * l.in_length + pos];
                        const int base = pos * l.stride - head;
                        double dsum = 0.0;
                        for (int co = 0; co < l.out_channels; ++co) {
                            const double* w = p + (static_cast<std::size_t>(ci) * l.out_channels + co) * l.kernel;
                            double* gw = gp + (static_cast<std::size_t>(ci) * l.out_channels + co) * l.kernel;
                            const double* drow = dy + static_cast<std::size_t>(co) * l.crop_to;
                            for (int k = 0; k < l.kernel; ++k) {
                                const int t = base + k;
                                if (t >= 0 && t < l.crop_to) {
                                    gw[k] += xv * drow[t];
                                    dsum += w[k] * drow[t];
                                }
                            }
                        }
                        dx[static_cast<std::size_t>(ci) * l.in_length + pos] = dsum;
                    }
                }
                break;
            }
        }
    }
}

void Network::jacobian(std::span<const double> params, std::span<const double> input, std::span<const double> tangents,
                       int n_dirs, std::vector<double>& out) const {
    // Forward mode: propagate n_dirs tangent columns alongside one
    // forward pass. cur[i * n_dirs + d].
    NetWorkspace ws = make_workspace();
    forward(params, input, ws);
    std::vector<double> cur(tangents.begin(), tangents.end());
    std::vector<double> next;
    for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
        const LayerSpec& l = spec_.layers[li];
        const double* p = params.data() + offsets_[li];
        next.assign(static_cast<std::size_t>(l.out_size) * n_dirs, 0.0);
        switch (l.kind) {
            case LayerSpec::Kind::dense: {
                for (int o = 0; o < l.out_size; ++o) {
                    const double* row = p + static_cast<std::size_t>(o) * l.in_size;
                    double* nrow = next.data() + static_cast<std::size_t>(o) * n_dirs;
                    for (int i = 0; i < l.in_size; ++i) {
                        const double w = row[i];
                        if (w == 0.0) continue;
                        const double* crow = cur.data() + static_cast<std::size_t>(i) * n_dirs;
                        for (int d = 0; d < n_dirs; ++d) nrow[d] += w * crow[d];
                    }
                }
                break;
            }
            case LayerSpec::Kind::tanh_act: {
                const double* y = ws.act[li + 1].data();
                for (int i = 0; i < l.in_size; ++i) {
                    const double s = 1.0 - y[i] * y[i];
                    for (int d = 0; d < n_dirs; ++d)
                        next[static_cast<std::size_t>(i) * n_dirs + d] = s * cur[static_cast<std::size_t>(i) * n_dirs + d];
                }
                break;
            }
            case LayerSpec::Kind::tconv1d: {
                const int head = (l.raw_length() - l.crop_to) / 2;
                for (int ci = 0; ci < l.in_channels; ++ci) {
                    for (int pos = 0; pos < l.in_length; ++pos) {
                        const double* crow = cur.data() + (static_cast<std::size_t>(ci) * l.in_length + pos) * n_dirs;
                        const int base = pos * l.stride - head;
                        for (int co = 0; co < l.out_channels; ++co) {
                            const double* w = p + (static_cast<std::size_t>(ci) * l.out_channels + co) * l.kernel;
                            for (int k = 0; k < l.kernel; ++k) {
                                const int t = base + k;
                                if (t < 0 || t >= l.crop_to) continue;
                                double* nrow = next.data() + (static_cast<std::size_t>(co) * l.crop_to + t) * n_dirs;
                                for (int d = 0; d < n_dirs; ++d) nrow[d] += w[k] * crow[d];
                            }
                        }
                    }
                }
                break;
            }
        }
        cur.swap(next);
    }
    out = std::move(cur);
}

std::vector<double> Network::init_params(std::uint64_t seed, double scale) const {
    std::vector<double> params(static_cast<std::size_t>(n_params_), 0.0);
    for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
        const LayerSpec& l = spec_.layers[li];
        if (l.param_count() == 0) continue;
        Rng rng(seed, kTagInit, li);
        double* p = params.data() + offsets_[li];
        int fan_in = 0, fan_out = 0, n_weights = 0;
        if (l.kind == LayerSpec::Kind::dense) {
            fan_in = l.in_size;
            fan_out = l.out_size;
            n_weights = l.in_size * l.out_size;
        } else {
            fan_in = l.in_channels * l.kernel;
            fan_out = l.out_channels * l.kernel;
            n_weights = l.in_channels * l.out_channels * l.kernel;
        }
        const double bound = scale * std::sqrt(6.0 / (fan_in + fan_out));
        for (int i = 0; i < n_weights; ++i) p[i] = rng.uniform(-bound, bound);
        // biases stay zero
    }
    return params;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

Normalization Normalization::fit(std::span<const double> inputs, int in_dim, std::span<const double> outputs,
                                 int out_dim) {
    Normalization n;
    n.in_min.assign(static_cast<std::size_t>(in_dim), 1e300);
    n.in_max.assign(static_cast<std::size_t>(in_dim), -1e300);
    n.out_min.assign(static_cast<std::size_t>(out_dim), 1e300);
    n.out_max.assign(static_cast<std::size_t>(out_dim), -1e300);
    const std::size_t rows_in = inputs.size() / static_cast<std::size_t>(in_dim);
    for (std::size_t r = 0; r < rows_in; ++r) {
        for (int i = 0; i < in_dim; ++i) {
            const double v = inputs[r * static_cast<std::size_t>(in_dim) + static_cast<std::size_t>(i)];
            n.in_min[static_cast<std::size_t>(i)] = std::min(n.in_min[static_cast<std::size_t>(i)], v);
            n.in_max[static_cast<std::size_t>(i)] = std::max(n.in_max[static_cast<std::size_t>(i)], v);
        }
    }
    const std::size_t rows_out = outputs.size() / static_cast<std::size_t>(out_dim);
    for (std::size_t r = 0; r < rows_out; ++r) {
        for (int k = 0; k < out_dim; ++k) {
            const double v = outputs[r * static_cast<std::size_t>(out_dim) + static_cast<std::size_t>(k)];
            n.out_min[static_cast<std::size_t>(k)] = std::min(n.out_min[static_cast<std::size_t>(k)], v);
            n.out_max[static_cast<std::size_t>(k)] = std::max(n.out_max[static_cast<std::size_t>(k)], v);
        }
    }
    return n;
}

void Normalization::normalize_in(std::span<const double> x, std::span<double> u) const {
    for (std::size_t i = 0; i < in_min.size(); ++i) {
        const double lo = in_min[i], hi = in_max[i];
        u[i] = hi > lo ? 2.0 * (x[i] - lo) / (hi - lo) - 1.0 : 0.0;
    }
}

void Normalization::denormalize_out(std::span<const double> y, std::span<double> w) const {
    for (std::size_t k = 0; k < out_min.size(); ++k) {
        const double lo = out_min[k], hi = out_max[k];
        w[k] = hi > lo ? 0.5 * (y[k] + 1.0) * (hi - lo) + lo : lo;
    }
}

double Normalization::out_scale(int k) const {
    const double lo = out_min[static_cast<std::size_t>(k)], hi = out_max[static_cast<std::size_t>(k)];
    return hi > lo ? 0.5 * (hi - lo) : 0.0;
}

double Normalization::in_scale(int i) const {
    const double lo = in_min[static_cast<std::size_t>(i)], hi = in_max[static_cast<std::size_t>(i)];
    return hi > lo ? 2.0 / (hi - lo) : 0.0;
}

json Normalization::to_json() const {
    return json{{"in_min", in_min}, {"in_max", in_max}, {"out_min", out_min}, {"out_max", out_max}};
}

Normalization Normalization::from_json(const json& j) {
    Normalization n;
    n.in_min = j.at("in_min").get<std::vector<double>>();
    n.in_max = j.at("in_max").get<std::vector<double>>();
    n.out_min = j.at("out_min").get<std::vector<double>>();
    n.out_max = j.at("out_max").get<std::vector<double>>();
    return n;
}

void voltage_features(std::span<const double> v, std::span<double> u18) {
    for (int m = 0; m < kNumMzi; ++m) {
        u18[static_cast<std::size_t>(m)] = v[static_cast<std::size_t>(m)];
        u18[static_cast<std::size_t>(kNumMzi + m)] = v[static_cast<std::size_t>(m)] * v[static_cast<std::size_t>(m)];
    }
}

// ---------------------------------------------------------------------------
// Architectures
// ---------------------------------------------------------------------------

const char* surrogate_kind_name(SurrogateKind k) {
    switch (k) {
        case SurrogateKind::nn_sw: return "nn-sw";
        case SurrogateKind::nn_lr: return "nn-lr";
        case SurrogateKind::nn_ls: return "nn-ls";
        case SurrogateKind::nn_lg: return "nn-lg";
        case SurrogateKind::tcnn: return "tcnn";
        case SurrogateKind::tcnn100: return "tcnn100";
    }
    return "?";
}

SurrogateKind surrogate_kind_from_name(const std::string& name) {
    for (SurrogateKind k : {SurrogateKind::nn_sw, SurrogateKind::nn_lr, SurrogateKind::nn_ls, SurrogateKind::nn_lg,
                            SurrogateKind::tcnn, SurrogateKind::tcnn100})
        if (name == surrogate_kind_name(k)) return k;
    throw std::invalid_argument("unknown surrogate kind: " + name);
}

SurrogateArchitecture SurrogateArchitecture::default_for(SurrogateKind kind, int n_lambda) {
    SurrogateArchitecture a;
    a.kind = kind;
    switch (kind) {
        case SurrogateKind::nn_sw:
        case SurrogateKind::nn_lr:
        case SurrogateKind::nn_ls: a.hidden = {64, 64}; break;
        case SurrogateKind::nn_lg: a.hidden = {96, 96}; break;
        case SurrogateKind::tcnn:
            a.dense1 = 54;
            a.dense2 = 18 * (n_lambda / 2);  // 90 for 10 channels
            break;
        case SurrogateKind::tcnn100:
            a.dense1 = 128;
            a.dense2 = 18 * (n_lambda / 2);  // 900 for 100 channels
            break;
    }
    return a;
}

NetworkSpec SurrogateArchitecture::network(int n_lambda) const {
    switch (kind) {
        case SurrogateKind::nn_sw:
        case SurrogateKind::nn_lr:
        case SurrogateKind::nn_ls: return NetworkSpec::mlp(18, hidden, kNumWeights);
        case SurrogateKind::nn_lg: return NetworkSpec::mlp(19, hidden, kNumWeights);
        case SurrogateKind::tcnn:
        case SurrogateKind::tcnn100: {
            // Dense trunk, then a transposed convolution unfolds the
            // spectral axis: 18 channels of length n_lambda/2 widen to
            // 9 channels of length n_lambda (+2 raw, center-cropped).
            if (n_lambda % 2 != 0) throw std::invalid_argument("tcnn: channel count must be even");
            const int seed_len = n_lambda / 2;
            if (dense2 != 18 * seed_len)
                throw std::invalid_argument("tcnn: dense2 must equal 18 * n_lambda / 2 for the reshape");
            NetworkSpec s;
            s.layers.push_back(LayerSpec::dense(18, dense1));
            s.layers.push_back(LayerSpec::tanh_act(dense1));
            s.layers.push_back(LayerSpec::dense(dense1, dense2));
            s.layers.push_back(LayerSpec::tanh_act(dense2));
            s.layers.push_back(LayerSpec::tconv1d(18, seed_len, kNumWeights, tconv_kernel, tconv_stride, n_lambda));
            return s;
        }
    }
    throw std::invalid_argument("unknown surrogate kind");
}

json SurrogateArchitecture::to_json() const {
    return json{{"kind", surrogate_kind_name(kind)}, {"hidden", hidden},           {"dense1", dense1},
                {"dense2", dense2},                  {"tconv_kernel", tconv_kernel}, {"tconv_stride", tconv_stride}};
}

SurrogateArchitecture SurrogateArchitecture::from_json(const json& j) {
    SurrogateArchitecture a;
    a.kind = surrogate_kind_from_name(j.at("kind").get<std::string>());
    a.hidden = j.at("hidden").get<std::vector<int>>();
    a.dense1 = j.at("dense1").get<int>();
    a.dense2 = j.at("dense2").get<int>();
    a.tconv_kernel = j.at("tconv_kernel").get<int>();
    a.tconv_stride = j.at("tconv_stride").get<int>();
    return a;
}

// ---------------------------------------------------------------------------
// NeuralSurrogate
// ---------------------------------------------------------------------------

NeuralSurrogate::NeuralSurrogate(SurrogateArchitecture arch, WavelengthGrid grid,
                                 std::vector<std::vector<double>> params, std::vector<Normalization> norms,
                                 std::vector<double> lr_offsets_db)
    : arch_(arch), grid_(std::move(grid)), params_(std::move(params)), norms_(std::move(norms)),
      lr_offsets_db_(std::move(lr_offsets_db)) {
    const int nl = grid_.n_channels();
    const std::size_t expected_nets = arch_.kind == SurrogateKind::nn_ls ? static_cast<std::size_t>(nl) : 1u;
    if (params_.size() != expected_nets || norms_.size() != expected_nets)
        throw std::invalid_argument("surrogate: parameter/normalization set count mismatch");
    if (arch_.kind == SurrogateKind::nn_lr && static_cast<int>(lr_offsets_db_.size()) != nl)
        throw std::invalid_argument("surrogate: nn-lr needs one offset per channel");
    const NetworkSpec spec = arch_.network(nl);
    for (std::size_t i = 0; i < expected_nets; ++i) {
        nets_.push_back(std::make_unique<Network>(spec));
        if (static_cast<int>(params_[i].size()) != nets_[i]->n_params())
            throw std::invalid_argument("surrogate: parameter vector size mismatch");
    }
}

const Network& NeuralSurrogate::net_for_channel(int k) const {
    return arch_.kind == SurrogateKind::nn_ls ? *nets_[static_cast<std::size_t>(k)] : *nets_[0];
}

void NeuralSurrogate::core_input(std::span<const double> v, int k, std::vector<double>& u) const {
    const Normalization& norm = arch_.kind == SurrogateKind::nn_ls ? norms_[static_cast<std::size_t>(k)] : norms_[0];
    if (arch_.kind == SurrogateKind::nn_lg) {
        std::vector<double> raw(19);
        voltage_features(v, std::span<double>(raw.data(), 18));
        raw[18] = grid_.center_wavelengths_nm[static_cast<std::size_t>(k)];
        u.resize(19);
        norm.normalize_in(raw, u);
    } else {
        std::vector<double> raw(18);
        voltage_features(v, raw);
        u.resize(18);
        norm.normalize_in(raw, u);
    }
}

std::vector<double> NeuralSurrogate::predict(std::span<const double> v) const {
    const int nl = grid_.n_channels();
    std::vector<double> out(static_cast<std::size_t>(kNumWeights) * nl);
    std::vector<double> u;
    switch (arch_.kind) {
        case SurrogateKind::nn_sw: {
            core_input(v, 0, u);
            NetWorkspace ws = nets_[0]->make_workspace();
            nets_[0]->forward(params_[0], u, ws);
            std::array<double, kNumWeights> w{};
            norms_[0].denormalize_out(ws.act.back(), w);
            for (int p = 0; p < kNumWeights; ++p) out[static_cast<std::size_t>(p)] = w[static_cast<std::size_t>(p)];
            break;
        }
        case SurrogateKind::nn_lr: {
            core_input(v, grid_.reference_index, u);
            NetWorkspace ws = nets_[0]->make_workspace();
            nets_[0]->forward(params_[0], u, ws);
            std::array<double, kNumWeights> w{};
            norms_[0].denormalize_out(ws.act.back(), w);
            for (int p = 0; p < kNumWeights; ++p)
                for (int k = 0; k < nl; ++k)
                    out[static_cast<std::size_t>(p * nl + k)] =
                        w[static_cast<std::size_t>(p)] + lr_offsets_db_[static_cast<std::size_t>(k)];
            break;
        }
        case SurrogateKind::nn_ls:
        case SurrogateKind::nn_lg: {
            for (int k = 0; k < nl; ++k) {
                core_input(v, k, u);
                const Network& net = net_for_channel(k);
                NetWorkspace ws = net.make_workspace();
                net.forward(arch_.kind == SurrogateKind::nn_ls ? params_[static_cast<std::size_t>(k)] : params_[0], u,
                            ws);
                std::array<double, kNumWeights> w{};
                (arch_.kind == SurrogateKind::nn_ls ? norms_[static_cast<std::size_t>(k)] : norms_[0])
                    .denormalize_out(ws.act.back(), w);
                for (int p = 0; p < kNumWeights; ++p) out[static_cast<std::size_t>(p * nl + k)] = w[static_cast<std::size_t>(p)];
            }
            break;
        }
        case SurrogateKind::tcnn:
        case SurrogateKind::tcnn100: {
            core_input(v, 0, u);
            NetWorkspace ws = nets_[0]->make_workspace();
            nets_[0]->forward(params_[0], u, ws);
            norms_[0].denormalize_out(ws.act.back(), out);
            break;
        }
    }
    return out;
}

void NeuralSurrogate::predict_with_jacobian(std::span<const double> v, std::vector<double>& weights_db,
                                            std::vector<double>& jac) const {
    const int nl = grid_.n_channels();
    weights_db = predict(v);
    jac.assign(static_cast<std::size_t>(kNumWeights) * nl * kNumMzi, 0.0);

    // Input tangents for d u_norm / d v: rows follow the feature layout.
    const auto input_tangents = [&](const Normalization& norm, int in_dim) {
        std::vector<double> t(static_cast<std::size_t>(in_dim) * kNumMzi, 0.0);
        for (int m = 0; m < kNumMzi; ++m) {
            t[static_cast<std::size_t>(m) * kNumMzi + m] = norm.in_scale(m);
            t[static_cast<std::size_t>(kNumMzi + m) * kNumMzi + m] =
                norm.in_scale(kNumMzi + m) * 2.0 * v[static_cast<std::size_t>(m)];
        }
        return t;  // lambda feature row (nn-lg) stays zero
    };

    std::vector<double> u, jnet;
    switch (arch_.kind) {
        case SurrogateKind::nn_sw:
        case SurrogateKind::nn_lr: {
            const int k0 = arch_.kind == SurrogateKind::nn_lr ? grid_.reference_index : 0;
            core_input(v, k0, u);
            const auto t = input_tangents(norms_[0], 18);
            nets_[0]->jacobian(params_[0], u, t, kNumMzi, jnet);
            for (int p = 0; p < kNumWeights; ++p) {
                const double scale = norms_[0].out_scale(p);
                for (int n = 0; n < kNumMzi; ++n) {
                    const double g = scale * jnet[static_cast<std::size_t>(p) * kNumMzi + n];
                    for (int k = 0; k < nl; ++k) jac[static_cast<std::size_t>((p * nl + k) * kNumMzi + n)] = g;
                }
            }
            break;
        }
        case SurrogateKind::nn_ls:
        case SurrogateKind::nn_lg: {
            for (int k = 0; k < nl; ++k) {
                core_input(v, k, u);
                const Network& net = net_for_channel(k);
                const Normalization& norm =
                    arch_.kind == SurrogateKind::nn_ls ? norms_[static_cast<std::size_t>(k)] : norms_[0];
                const auto t = input_tangents(norm, net.input_size());
                net.jacobian(arch_.kind == SurrogateKind::nn_ls ? params_[static_cast<std::size_t>(k)] : params_[0], u,
                             t, kNumMzi, jnet);
                for (int p = 0; p < kNumWeights; ++p) {
                    const double scale = norm.out_scale(p);
                    for (int n = 0; n < kNumMzi; ++n)
                        jac[static_cast<std::size_t>((p * nl + k) * kNumMzi + n)] =
                            scale * jnet[static_cast<std::size_t>(p) * kNumMzi + n];
                }
            }
            break;
        }
        case SurrogateKind::tcnn:
        case SurrogateKind::tcnn100: {
            core_input(v, 0, u);
            const auto t = input_tangents(norms_[0], 18);
            nets_[0]->jacobian(params_[0], u, t, kNumMzi, jnet);
            for (int e = 0; e < kNumWeights * nl; ++e) {
                const double scale = norms_[0].out_scale(e);
                for (int n = 0; n < kNumMzi; ++n)
                    jac[static_cast<std::size_t>(e) * kNumMzi + n] = scale * jnet[static_cast<std::size_t>(e) * kNumMzi + n];
            }
            break;
        }
    }
}

void NeuralSurrogate::entry_backward(std::span<const double> v, int p, int k, std::vector<double>& grad_params,
                                     std::array<double, kNumMzi>& grad_v) const {
    const int nl = grid_.n_channels();
    if (p < 0 || p >= kNumWeights || k < 0 || k >= nl) throw std::invalid_argument("entry_backward: index out of range");
    const Network& net = net_for_channel(k);
    const std::vector<double>& params =
        arch_.kind == SurrogateKind::nn_ls ? params_[static_cast<std::size_t>(k)] : params_[0];
    const Normalization& norm = arch_.kind == SurrogateKind::nn_ls ? norms_[static_cast<std::size_t>(k)] : norms_[0];
    std::vector<double> u;
    const int k_in = arch_.kind == SurrogateKind::nn_lr ? grid_.reference_index : k;
    core_input(v, k_in, u);
    NetWorkspace ws = net.make_workspace();
    net.forward(params, u, ws);
    for (auto& d : ws.delta.back()) d = 0.0;
    const int entry = (arch_.kind == SurrogateKind::tcnn || arch_.kind == SurrogateKind::tcnn100) ? p * nl + k : p;
    ws.delta.back()[static_cast<std::size_t>(entry)] = norm.out_scale(entry);  // d w_db / d y_norm
    grad_params.assign(params.size(), 0.0);
    net.backward(params, ws, grad_params);
    grad_v.fill(0.0);
    for (int m = 0; m < kNumMzi; ++m) {
        grad_v[static_cast<std::size_t>(m)] = ws.delta[0][static_cast<std::size_t>(m)] * norm.in_scale(m) +
                                              ws.delta[0][static_cast<std::size_t>(kNumMzi + m)] *
                                                  norm.in_scale(kNumMzi + m) * 2.0 * v[static_cast<std::size_t>(m)];
    }
}

json NeuralSurrogate::to_json() const {
    json nets = json::array();
    for (std::size_t i = 0; i < params_.size(); ++i)
        nets.push_back({{"params", params_[i]}, {"normalization", norms_[i].to_json()}});
    json j{{"format", "meshcal-model"},
           {"kind", kind()},
           {"architecture", arch_.to_json()},
           {"grid", grid_.to_json()},
           {"network_spec", arch_.network(grid_.n_channels()).to_json()},
           {"nets", std::move(nets)},
           {"provenance", provenance.is_null() ? json::object() : provenance}};
    if (arch_.kind == SurrogateKind::nn_lr) j["lr_offsets_db"] = lr_offsets_db_;
    return j;
}

NeuralSurrogate NeuralSurrogate::from_json(const json& j) {
    SurrogateArchitecture arch = SurrogateArchitecture::from_json(j.at("architecture"));
    WavelengthGrid grid = WavelengthGrid::from_json(j.at("grid"));
    std::vector<std::vector<double>> params;
    std::vector<Normalization> norms;
    for (const auto& nj : j.at("nets")) {
        params.push_back(nj.at("params").get<std::vector<double>>());
        norms.push_back(Normalization::from_json(nj.at("normalization")));
    }
    std::vector<double> offsets;
    if (j.contains("lr_offsets_db")) offsets = j.at("lr_offsets_db").get<std::vector<double>>();
    NeuralSurrogate model(arch, std::move(grid), std::move(params), std::move(norms), std::move(offsets));
    model.provenance = j.value("provenance", json::object());
    return model;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

/// Flat supervised matrices for one network.
struct TrainMatrices {
    int in_dim = 0;
    int out_dim = 0;
    std::vector<double> x_train;      // normalized inputs, row-major
    std::vector<double> y_train;      // normalized targets
    std::vector<double> y_train_db;   // raw dB labels (history metric)
    std::vector<double> x_val;        // normalized inputs
    std::vector<double> y_val_db;     // raw dB labels for the validation metric
    Normalization norm;
    std::int64_t n_train() const { return static_cast<std::int64_t>(x_train.size()) / in_dim; }
    std::int64_t n_val() const { return static_cast<std::int64_t>(x_val.size()) / in_dim; }
};

std::vector<int> split_or_all(const WeightDataset& ds, const char* name) {
    if (ds.has_split(name)) return ds.split(name);
    std::vector<int> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
}

/// Raw (un-normalized) feature row(s) and dB target row(s) for one
/// record; lambda_channel >= 0 selects one channel of a multi-channel
/// dataset, -1 takes the whole tensor, -2 expands with the wavelength
/// input (one row per channel).
void append_rows(const WeightDataset& ds, const WeightRecord& r, int lambda_channel, bool wavelength_input,
                 std::vector<double>& x, std::vector<double>& y) {
    const int nl = ds.n_lambda();
    double u[19];
    voltage_features(r.voltages_v, std::span<double>(u, 18));
    if (wavelength_input) {
        for (int k = 0; k < nl; ++k) {
            u[18] = ds.grid.center_wavelengths_nm[static_cast<std::size_t>(k)];
            x.insert(x.end(), u, u + 19);
            for (int p = 0; p < kNumWeights; ++p) y.push_back(r.weight(p, k, nl));
        }
    } else if (lambda_channel >= 0) {
        x.insert(x.end(), u, u + 18);
        for (int p = 0; p < kNumWeights; ++p) y.push_back(r.weight(p, lambda_channel, nl));
    } else {
        x.insert(x.end(), u, u + 18);
        y.insert(y.end(), r.weights_db.begin(), r.weights_db.end());
    }
}

TrainMatrices build_matrices(const WeightDataset& training, const WeightDataset& validation, int lambda_channel,
                             bool wavelength_input) {
    TrainMatrices m;
    const int nl = training.n_lambda();
    m.in_dim = wavelength_input ? 19 : 18;
    m.out_dim = lambda_channel >= 0 || wavelength_input ? kNumWeights : kNumWeights * nl;

    std::vector<double> x_raw, y_raw, xv_raw;
    for (int i : split_or_all(training, "training"))
        append_rows(training, training.records[static_cast<std::size_t>(i)], lambda_channel, wavelength_input, x_raw,
                    y_raw);
    m.norm = Normalization::fit(x_raw, m.in_dim, y_raw, m.out_dim);

    const std::int64_t n = static_cast<std::int64_t>(x_raw.size()) / m.in_dim;
    m.x_train.resize(x_raw.size());
    for (std::int64_t i = 0; i < n; ++i)
        m.norm.normalize_in(std::span<const double>(x_raw.data() + i * m.in_dim, static_cast<std::size_t>(m.in_dim)),
                            std::span<double>(m.x_train.data() + i * m.in_dim, static_cast<std::size_t>(m.in_dim)));
    m.y_train.resize(y_raw.size());
    for (std::int64_t i = 0; i < n; ++i) {
        for (int k = 0; k < m.out_dim; ++k) {
            const double lo = m.norm.out_min[static_cast<std::size_t>(k)], hi = m.norm.out_max[static_cast<std::size_t>(k)];
            const double v = y_raw[static_cast<std::size_t>(i * m.out_dim + k)];
            m.y_train[static_cast<std::size_t>(i * m.out_dim + k)] = hi > lo ? 2.0 * (v - lo) / (hi - lo) - 1.0 : 0.0;
        }
    }
    m.y_train_db = std::move(y_raw);

    for (int i : split_or_all(validation, "validation"))
        append_rows(validation, validation.records[static_cast<std::size_t>(i)], lambda_channel, wavelength_input,
                    xv_raw, m.y_val_db);
    const std::int64_t nv = static_cast<std::int64_t>(xv_raw.size()) / m.in_dim;
    m.x_val.resize(xv_raw.size());
    for (std::int64_t i = 0; i < nv; ++i)
        m.norm.normalize_in(std::span<const double>(xv_raw.data() + i * m.in_dim, static_cast<std::size_t>(m.in_dim)),
                            std::span<double>(m.x_val.data() + i * m.in_dim, static_cast<std::size_t>(m.in_dim)));
    return m;
}

/// dB RMSE of the network on normalized inputs against raw dB labels.
double eval_rmse_db(const Network& net, std::span<const double> params, const TrainMatrices& m,
                    std::span<const double> x, std::span<const double> y_db) {
    const std::int64_t n = static_cast<std::int64_t>(x.size()) / m.in_dim;
    if (n == 0) return 0.0;
    const std::int64_t nb = reduction_blocks(n);
    std::vector<double> partial(static_cast<std::size_t>(nb), 0.0);
    std::vector<NetWorkspace> wss(static_cast<std::size_t>(nb));
    parallel_for_blocks(n, nb, [&](std::int64_t b, std::int64_t begin, std::int64_t end) {
        NetWorkspace& ws = wss[static_cast<std::size_t>(b)];
        if (ws.act.empty()) ws = net.make_workspace();
        std::vector<double> w(static_cast<std::size_t>(m.out_dim));
        double acc = 0.0;
        for (std::int64_t i = begin; i < end; ++i) {
            net.forward(params, std::span<const double>(x.data() + i * m.in_dim, static_cast<std::size_t>(m.in_dim)), ws);
            m.norm.denormalize_out(ws.act.back(), w);
            for (int k = 0; k < m.out_dim; ++k) {
                const double e = w[static_cast<std::size_t>(k)] - y_db[static_cast<std::size_t>(i * m.out_dim + k)];
                acc += e * e;
            }
        }
        partial[static_cast<std::size_t>(b)] = acc;
    });
    double total = 0.0;
    for (double pv : partial) total += pv;
    return std::sqrt(total / (static_cast<double>(n) * m.out_dim));
}

struct SingleNetResult {
    std::vector<double> params;
    TrainHistory history;
    double best_val_rmse_db = 0.0;
};

/// One full-batch L-BFGS run with early stopping; returns the best
/// validation checkpoint.
SingleNetResult train_single(const Network& net, const TrainMatrices& m, const TrainOptions& opts) {
    const std::int64_t n = m.n_train();
    if (n == 0) throw std::invalid_argument("train: empty training set");
    if (m.n_val() == 0) throw std::invalid_argument("train: empty validation set");

    const int n_params = net.n_params();
    const std::int64_t nb = reduction_blocks(n);
    std::vector<NetWorkspace> wss(static_cast<std::size_t>(nb));
    std::vector<std::vector<double>> grad_blocks(static_cast<std::size_t>(nb));
    std::vector<double> loss_blocks(static_cast<std::size_t>(nb));

    OptimizeProblem prob;
    prob.dimension = n_params;
    prob.objective = [&](std::span<const double> x, std::span<double> g) {
        parallel_for_blocks(n, nb, [&](std::int64_t b, std::int64_t begin, std::int64_t end) {
            NetWorkspace& ws = wss[static_cast<std::size_t>(b)];
            if (ws.act.empty()) ws = net.make_workspace();
            auto& gb = grad_blocks[static_cast<std::size_t>(b)];
            gb.assign(static_cast<std::size_t>(n_params), 0.0);
            double acc = 0.0;
            const double scale = 2.0 / (static_cast<double>(n) * m.out_dim);
            for (std::int64_t i = begin; i < end; ++i) {
                net.forward(x, std::span<const double>(m.x_train.data() + i * m.in_dim, static_cast<std::size_t>(m.in_dim)),
                            ws);
                const double* target = m.y_train.data() + i * m.out_dim;
                auto& out = ws.act.back();
                auto& dout = ws.delta.back();
                for (int k = 0; k < m.out_dim; ++k) {
                    const double e = out[static_cast<std::size_t>(k)] - target[k];
                    acc += e * e;
                    dout[static_cast<std::size_t>(k)] = scale * e;
                }
                net.backward(x, ws, gb);
            }
            loss_blocks[static_cast<std::size_t>(b)] = acc;
        });
        std::fill(g.begin(), g.end(), 0.0);
        double loss = 0.0;
        for (std::int64_t b = 0; b < nb; ++b) {
            loss += loss_blocks[static_cast<std::size_t>(b)];
            const auto& gb = grad_blocks[static_cast<std::size_t>(b)];
            for (int i = 0; i < n_params; ++i) g[static_cast<std::size_t>(i)] += gb[static_cast<std::size_t>(i)];
        }
        return loss / (static_cast<double>(n) * m.out_dim);
    };

    SingleNetResult result;
    double init_scale = opts.init_scale;
    for (int attempt = 0; attempt < 2; ++attempt) {
        prob.x0 = net.init_params(opts.seed, init_scale);
        std::vector<double> best_params = prob.x0;
        double best_val = eval_rmse_db(net, prob.x0, m, m.x_val, m.y_val_db);
        int stall = 0;
        int epochs = 0;
        TrainHistory hist;
        hist.val_rmse_db.push_back(best_val);
        if (opts.record_history) hist.train_rmse_db.push_back(eval_rmse_db(net, prob.x0, m, m.x_train, m.y_train_db));
        bool diverged = !std::isfinite(best_val);

        OptimizeOptions oopt;
        oopt.max_iterations = opts.max_epochs;
        oopt.memory = opts.lbfgs_memory;
        oopt.tol_grad = 1e-12;
        oopt.on_iteration = [&](int epoch, std::span<const double> x, double f, double) {
            epochs = epoch;
            if (!std::isfinite(f)) {
                diverged = true;
                return false;
            }
            const double val = eval_rmse_db(net, x, m, m.x_val, m.y_val_db);
            hist.val_rmse_db.push_back(val);
            if (opts.record_history) hist.train_rmse_db.push_back(eval_rmse_db(net, x, m, m.x_train, m.y_train_db));
            if (val < best_val) {
                best_params.assign(x.begin(), x.end());
                if (val < best_val - opts.min_improvement_db) stall = 0;
                else ++stall;
                best_val = val;
                hist.best_epoch = epoch;
            } else {
                ++stall;
            }
            return stall < opts.patience;
        };
        if (!diverged) {
            try {
                lbfgs_minimize(prob, oopt);
            } catch (const std::invalid_argument&) {
                diverged = true;  // non-finite at the initial point
            }
        }
        if (!diverged && std::isfinite(best_val)) {
            result.params = std::move(best_params);
            result.best_val_rmse_db = best_val;
            hist.epochs = epochs;
            hist.restarted = attempt > 0;
            result.history = std::move(hist);
            return result;
        }
        init_scale *= 0.5;  // one retry with a tamer initialization
    }
    throw std::runtime_error("train: loss diverged twice (non-finite); giving up");
}

}  // namespace

TrainResult train_surrogate(const SurrogateArchitecture& arch, const WeightDataset& training,
                            const WeightDataset& validation, const TrainOptions& options) {
    if (training.grid.to_json() != validation.grid.to_json())
        throw std::invalid_argument("train: training and validation grids differ");
    const int nl = training.n_lambda();
    TrainResult out;

    const auto finish = [&](std::vector<std::vector<double>> params, std::vector<Normalization> norms,
                            std::vector<double> offsets, TrainHistory hist, double val_rmse) {
        auto model = std::make_unique<NeuralSurrogate>(arch, training.grid, std::move(params), std::move(norms),
                                                       std::move(offsets));
        model->provenance = json{{"seed", options.seed},
                                 {"epochs", hist.epochs},
                                 {"best_val_rmse_db", val_rmse},
                                 {"dataset_seed", training.seed},
                                 {"chip_hash", training.chip_hash}};
        out.model = std::move(model);
        out.history = std::move(hist);
    };

    switch (arch.kind) {
        case SurrogateKind::nn_sw: {
            if (nl != 1) throw std::invalid_argument("nn-sw trains on a single-channel dataset");
            const Network net(arch.network(1));
            TrainMatrices m = build_matrices(training, validation, 0, false);
            SingleNetResult r = train_single(net, m, options);
            finish({std::move(r.params)}, {std::move(m.norm)}, {}, std::move(r.history), r.best_val_rmse_db);
            break;
        }
        case SurrogateKind::nn_lr: {
            if (nl < 2) throw std::invalid_argument("nn-lr needs a multi-channel dataset");
            const int core = options.lr_train_channel >= 0 ? options.lr_train_channel : training.grid.reference_index;
            if (core >= nl) throw std::invalid_argument("nn-lr: core channel out of range");
            const Network net(arch.network(nl));
            TrainMatrices m = build_matrices(training, validation, core, false);
            SingleNetResult r = train_single(net, m, options);
            // Per-channel dB offsets minimizing validation error; the
            // core channel is pinned to zero.
            std::vector<double> offsets(static_cast<std::size_t>(nl), 0.0);
            NetWorkspace ws = net.make_workspace();
            std::vector<double> pred(static_cast<std::size_t>(kNumWeights));
            std::vector<double> sums(static_cast<std::size_t>(nl), 0.0);
            std::int64_t count = 0;
            for (int i : split_or_all(validation, "validation")) {
                const WeightRecord& rec = validation.records[static_cast<std::size_t>(i)];
                double u[18];
                voltage_features(rec.voltages_v, u);
                std::vector<double> un(18);
                m.norm.normalize_in(std::span<const double>(u, 18), un);
                net.forward(r.params, un, ws);
                m.norm.denormalize_out(ws.act.back(), pred);
                for (int p = 0; p < kNumWeights; ++p)
                    for (int k = 0; k < nl; ++k)
                        sums[static_cast<std::size_t>(k)] += rec.weight(p, k, nl) - pred[static_cast<std::size_t>(p)];
                ++count;
            }
            for (int k = 0; k < nl; ++k)
                offsets[static_cast<std::size_t>(k)] =
                    k == core ? 0.0 : sums[static_cast<std::size_t>(k)] / (static_cast<double>(count) * kNumWeights);
            // The model's reference channel is the core channel it was
            // trained on; keep the grid's reference untouched but pin
            // the offset of the trained channel.
            WavelengthGrid grid = training.grid;
            grid.reference_index = core;
            auto model = std::make_unique<NeuralSurrogate>(arch, grid, std::vector<std::vector<double>>{r.params},
                                                           std::vector<Normalization>{m.norm}, offsets);
            model->provenance = json{{"seed", options.seed},
                                     {"epochs", r.history.epochs},
                                     {"best_val_rmse_db", r.best_val_rmse_db},
                                     {"core_channel", core},
                                     {"dataset_seed", training.seed},
                                     {"chip_hash", training.chip_hash}};
            out.model = std::move(model);
            out.history = std::move(r.history);
            break;
        }
        case SurrogateKind::nn_ls: {
            if (nl < 2) throw std::invalid_argument("nn-ls needs a multi-channel dataset");
            const Network net(arch.network(nl));
            std::vector<std::vector<double>> params(static_cast<std::size_t>(nl));
            std::vector<Normalization> norms(static_cast<std::size_t>(nl));
            TrainHistory hist;
            double val_sq = 0.0;  // per-channel counts are equal, so total^2 = mean of per-channel^2
            for (int k = 0; k < nl; ++k) {
                TrainMatrices m = build_matrices(training, validation, k, false);
                SingleNetResult r = train_single(net, m, options);
                params[static_cast<std::size_t>(k)] = std::move(r.params);
                norms[static_cast<std::size_t>(k)] = std::move(m.norm);
                hist.epochs += r.history.epochs;
                hist.restarted = hist.restarted || r.history.restarted;
                val_sq += r.best_val_rmse_db * r.best_val_rmse_db;
            }
            finish(std::move(params), std::move(norms), {}, std::move(hist), std::sqrt(val_sq / nl));
            break;
        }
        case SurrogateKind::nn_lg: {
            if (nl < 2) throw std::invalid_argument("nn-lg needs a multi-channel dataset");
            const Network net(arch.network(nl));
            TrainMatrices m = build_matrices(training, validation, -1, true);
            SingleNetResult r = train_single(net, m, options);
            finish({std::move(r.params)}, {std::move(m.norm)}, {}, std::move(r.history), r.best_val_rmse_db);
            break;
        }
        case SurrogateKind::tcnn:
        case SurrogateKind::tcnn100: {
            const Network net(arch.network(nl));
            TrainMatrices m = build_matrices(training, validation, -1, false);
            SingleNetResult r = train_single(net, m, options);
            finish({std::move(r.params)}, {std::move(m.norm)}, {}, std::move(r.history), r.best_val_rmse_db);
            break;
        }
    }
    return out;
}

SearchResult hyperparameter_search(SurrogateKind kind, int budget, const WeightDataset& training,
                                   const WeightDataset& validation, std::uint64_t seed, const TrainOptions& base) {
    if (budget < 1) throw std::invalid_argument("hyperparameter_search: budget must be >= 1");
    TrainOptions opts = base;
    opts.max_epochs = std::min(base.max_epochs, 200);
    opts.patience = std::min(base.patience, 25);
    opts.seed = seed;

    SearchResult out;
    double best = 1e300;
    const int nl = training.n_lambda();
    for (int trial = 0; trial < budget; ++trial) {
        Rng rng(seed, kTagSearch, static_cast<std::uint64_t>(trial));
        SurrogateArchitecture arch = SurrogateArchitecture::default_for(kind, nl);
        if (kind == SurrogateKind::tcnn || kind == SurrogateKind::tcnn100) {
            arch.dense1 = static_cast<int>(std::lround(std::exp(rng.uniform(std::log(16.0), std::log(256.0)))));
        } else {
            const int n_layers = 1 + static_cast<int>(rng.below(3));
            arch.hidden.clear();
            for (int l = 0; l < n_layers; ++l)
                arch.hidden.push_back(static_cast<int>(std::lround(std::exp(rng.uniform(std::log(16.0), std::log(256.0))))));
        }
        TrainResult r = train_surrogate(arch, training, validation, opts);
        const double val = r.model->provenance.value("best_val_rmse_db", 1e300);
        out.tried.emplace_back(arch, val);
        if (val < best) {
            best = val;
            out.best = arch;
            out.best_val_rmse_db = val;
        }
    }
    return out;
}

}  // namespace meshcal
