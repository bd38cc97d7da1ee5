#include "meshcal/task_sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "meshcal/optimize.hpp"
#include "meshcal/parallel.hpp"
#include "meshcal/rng.hpp"

namespace meshcal {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr std::uint64_t kTagTaskData = 0x7461736bULL;
constexpr std::uint64_t kTagTaskInit = 0x696e6974ULL;
constexpr std::uint64_t kTagNoise = 0x626f6f74ULL;

// Parameter packing for the 13-dof reference net.
constexpr int kNetParams = 13;

void unpack(std::span<const double> x, ReferenceNet& net) {
    for (int i = 0; i < 9; ++i) net.w1[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)];
    for (int i = 0; i < 3; ++i) net.w2[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(9 + i)];
    net.b2 = x[12];
}

struct LabeledSet {
    std::vector<std::array<double, 3>> inputs;
    std::vector<double> labels;
};

LabeledSet gauss_points(const TaskSpec& spec, std::uint64_t seed, bool training) {
    Rng rng(seed, kTagTaskData, 0);
    LabeledSet set;
    for (int i = 0; i < spec.n_points; ++i) {
        const double x1 = rng.uniform(-1.0, 1.0);
        const double x2 = rng.uniform(-1.0, 1.0);
        const bool in_train = i < spec.n_train;
        if (in_train != training) continue;
        set.inputs.push_back({x1, x2, 1.0});  // third input is the bias line
        set.labels.push_back(gauss2d(x1, x2, spec));
    }
    return set;
}

LabeledSet task_training_set(const TaskSpec& spec, std::uint64_t seed) {
    if (spec.kind == TaskSpec::Kind::xor3) {
        LabeledSet set;
        for (const XorSample& s : make_xor_dataset()) {
            set.inputs.push_back(s.in);
            set.labels.push_back(s.label);
        }
        return set;
    }
    return gauss_points(spec, seed, true);
}

double mse_objective(const LabeledSet& data, std::span<const double> x, std::span<double> g) {
    ReferenceNet net;
    unpack(x, net);
    std::fill(g.begin(), g.end(), 0.0);
    double loss = 0.0;
    const double scale = 2.0 / static_cast<double>(data.inputs.size());
    for (std::size_t i = 0; i < data.inputs.size(); ++i) {
        const auto& in = data.inputs[i];
        double h[3], t[3];
        for (int j = 0; j < 3; ++j) {
            h[j] = net.w1[static_cast<std::size_t>(3 * j)] * in[0] + net.w1[static_cast<std::size_t>(3 * j + 1)] * in[1] +
                   net.w1[static_cast<std::size_t>(3 * j + 2)] * in[2];
            t[j] = std::tanh(h[j]);
        }
        const double y = net.w2[0] * t[0] + net.w2[1] * t[1] + net.w2[2] * t[2] + net.b2;
        const double e = y - data.labels[i];
        loss += e * e / static_cast<double>(data.inputs.size());
        const double d = scale * e;
        g[12] += d;
        for (int j = 0; j < 3; ++j) {
            g[static_cast<std::size_t>(9 + j)] += d * t[j];
            const double dh = d * net.w2[static_cast<std::size_t>(j)] * (1.0 - t[j] * t[j]);
            g[static_cast<std::size_t>(3 * j)] += dh * in[0];
            g[static_cast<std::size_t>(3 * j + 1)] += dh * in[1];
            g[static_cast<std::size_t>(3 * j + 2)] += dh * in[2];
        }
    }
    return loss;
}

}  // namespace

void TaskSpec::validate() const {
    if (!(sigma1 > 0.0 && sigma2 > 0.0)) throw std::invalid_argument("task spec: sigmas must be positive");
    if (kind == Kind::gauss2d && (n_train <= 0 || n_train >= n_points))
        throw std::invalid_argument("task spec: train/test split sizes must sum to the total");
    if (realizations < 1) throw std::invalid_argument("task spec: realizations must be >= 1");
}

double gauss2d(double x1, double x2, const TaskSpec& spec) {
    const double d1 = (x1 - spec.mu1) / spec.sigma1;
    const double d2 = (x2 - spec.mu2) / spec.sigma2;
    return std::exp(-0.5 * d1 * d1 - 0.5 * d2 * d2) / (kTwoPi * spec.sigma1 * spec.sigma2);
}

std::vector<XorSample> make_xor_dataset() {
    std::vector<XorSample> set;
    for (int bits = 0; bits < 8; ++bits) {
        XorSample s;
        s.in = {static_cast<double>(bits & 1), static_cast<double>((bits >> 1) & 1), static_cast<double>((bits >> 2) & 1)};
        const int ones = (bits & 1) + ((bits >> 1) & 1) + ((bits >> 2) & 1);
        s.label = ones == 1 ? 1.0 : 0.0;
        set.push_back(s);
    }
    return set;
}

double ReferenceNet::forward(std::array<double, 3> x) const {
    return forward_with(w1, x);
}

double ReferenceNet::forward_with(const std::array<double, 9>& w1_override, std::array<double, 3> x) const {
    double y = b2;
    for (int j = 0; j < 3; ++j) {
        const double h = w1_override[static_cast<std::size_t>(3 * j)] * x[0] +
                         w1_override[static_cast<std::size_t>(3 * j + 1)] * x[1] +
                         w1_override[static_cast<std::size_t>(3 * j + 2)] * x[2];
        y += w2[static_cast<std::size_t>(j)] * std::tanh(h);
    }
    return y;
}

double xor_accuracy(const ReferenceNet& net, const std::array<double, 9>& w1) {
    int correct = 0;
    for (const XorSample& s : make_xor_dataset()) {
        const double y = net.forward_with(w1, s.in);
        if ((y > 0.5) == (s.label > 0.5)) ++correct;
    }
    return 100.0 * correct / 8.0;
}

double gauss_test_rmse(const ReferenceNet& net, const std::array<double, 9>& w1, const TaskSpec& spec,
                       std::uint64_t seed) {
    const LabeledSet test = gauss_points(spec, seed, false);
    double acc = 0.0;
    for (std::size_t i = 0; i < test.inputs.size(); ++i) {
        const double e = net.forward_with(w1, test.inputs[i]) - test.labels[i];
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(test.inputs.size()));
}

ReferenceTrainResult train_reference(const TaskSpec& task, std::uint64_t seed) {
    task.validate();
    const LabeledSet data = task_training_set(task, seed);
    ReferenceTrainResult result;
    for (int attempt = 0; attempt < 5; ++attempt) {
        Rng rng(seed, kTagTaskInit, static_cast<std::uint64_t>(attempt));
        OptimizeProblem prob;
        prob.dimension = kNetParams;
        prob.x0.resize(kNetParams);
        for (auto& p : prob.x0) p = rng.uniform(-1.0, 1.0);
        prob.objective = [&](std::span<const double> x, std::span<double> g) { return mse_objective(data, x, g); };
        OptimizeOptions opts;
        opts.max_iterations = 2000;
        opts.tol_grad = 1e-12;
        const OptimizeReport rep = lbfgs_minimize(prob, opts);
        ReferenceNet net;
        unpack(rep.x_final, net);
        result.attempts = attempt + 1;
        if (task.kind == TaskSpec::Kind::xor3) {
            result.clean_metric = xor_accuracy(net, net.w1);
            if (result.clean_metric == 100.0) {
                result.net = net;
                result.success = true;
                return result;
            }
        } else {
            result.clean_metric = gauss_test_rmse(net, net.w1, task, seed);
            if (result.clean_metric <= 1.5e-3) {
                result.net = net;
                result.success = true;
                return result;
            }
        }
        result.net = net;  // keep the last attempt for the failure report
    }
    result.success = false;
    return result;
}

NoiseStudyReport noise_injection_study(const ReferenceNet& net, const ErrorDistribution& errors, const TaskSpec& task,
                                       int realizations, std::uint64_t seed, NoiseMode mode) {
    if (errors.samples.empty()) throw std::invalid_argument("noise study: error distribution has no samples");
    task.validate();
    NoiseStudyReport report;
    report.metric.resize(static_cast<std::size_t>(realizations));
    report.clean_metric = task.kind == TaskSpec::Kind::xor3 ? xor_accuracy(net, net.w1)
                                                            : gauss_test_rmse(net, net.w1, task, seed);
    const auto n_samples = static_cast<std::uint64_t>(errors.samples.size());
    parallel_for(realizations, [&](std::int64_t t) {
        Rng rng(seed, kTagNoise, static_cast<std::uint64_t>(t));
        std::array<double, 9> w1 = net.w1;
        for (int i = 0; i < 9; ++i) {
            const double eps = errors.samples[static_cast<std::size_t>(rng.below(n_samples))];
            if (mode == NoiseMode::multiplicative_db) {
                w1[static_cast<std::size_t>(i)] *= std::pow(10.0, eps / 10.0);
            } else {
                w1[static_cast<std::size_t>(i)] += eps;
            }
        }
        report.metric[static_cast<std::size_t>(t)] = task.kind == TaskSpec::Kind::xor3
                                                         ? xor_accuracy(net, w1)
                                                         : gauss_test_rmse(net, w1, task, seed);
    });
    report.p10 = percentile(report.metric, 10.0);
    report.p25 = percentile(report.metric, 25.0);
    report.p50 = percentile(report.metric, 50.0);
    report.p75 = percentile(report.metric, 75.0);
    report.p90 = percentile(report.metric, 90.0);
    return report;
}

}  // namespace meshcal
