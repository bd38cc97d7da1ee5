// Timing harness comparing the serial reference path (jobs = 1) against
// the OpenMP kernels on the hot loops: dataset emulation, full-batch
// network gradients and the bootstrap noise study. Outputs one line per
// kernel and thread setting; results must agree bit-for-bit.

#include <chrono>
#include <cstdio>
#include <string>

#include "meshcal/emulator.hpp"
#include "meshcal/evaluation.hpp"
#include "meshcal/neural.hpp"
#include "meshcal/parallel.hpp"
#include "meshcal/rng.hpp"
#include "meshcal/task_sim.hpp"

using namespace meshcal;

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

template <typename F>
double timed(F&& f) {
    const double t0 = now_ms();
    f();
    return now_ms() - t0;
}

void report(const std::string& name, double serial_ms, double parallel_ms, bool identical) {
    std::printf("%-28s serial %9.1f ms   jobs=%d %9.1f ms   speedup %.2fx   identical=%s\n", name.c_str(), serial_ms,
                max_jobs(), parallel_ms, serial_ms / parallel_ms, identical ? "yes" : "NO");
}

}  // namespace

int main(int argc, char** argv) {
    const int scale = argc > 1 ? std::atoi(argv[1]) : 1;
    const ChipGroundTruth chip = ChipGroundTruth::default_chip(42);
    const WavelengthGrid grid = WavelengthGrid::itu_cband_100();

    const int hw = max_jobs();
    std::printf("hardware jobs: %d, scale: %d\n", hw, scale);

    // Dataset emulation over records x channels.
    {
        WeightDataset a, b;
        set_max_jobs(1);
        const double ts = timed([&] { a = generate_random_dataset(chip, grid, 600 * scale); });
        set_max_jobs(hw);
        const double tp = timed([&] { b = generate_random_dataset(chip, grid, 600 * scale); });
        bool same = a.size() == b.size();
        for (std::size_t i = 0; same && i < a.size(); ++i) same = a.records[i].weights_db == b.records[i].weights_db;
        report("dataset emulation", ts, tp, same);
    }

    // Full-batch gradient of the single-wavelength surrogate.
    {
        set_max_jobs(hw);
        const WeightDataset full = generate_random_dataset(chip, grid, 400 * scale);
        const WeightDataset single = full.select_channels({grid.reference_index});
        const WeightDataset training = single.subset("training");
        const WeightDataset validation = single.subset("validation");
        const SurrogateArchitecture arch = SurrogateArchitecture::default_for(SurrogateKind::nn_sw, 1);
        TrainOptions opts;
        opts.max_epochs = 30 * scale;
        opts.patience = 1000;
        std::unique_ptr<NeuralSurrogate> ma, mb;
        set_max_jobs(1);
        const double ts = timed([&] { ma = std::move(train_surrogate(arch, training, validation, opts).model); });
        set_max_jobs(hw);
        const double tp = timed([&] { mb = std::move(train_surrogate(arch, training, validation, opts).model); });
        report("nn-sw training epochs", ts, tp, ma->to_json() == mb->to_json());
    }

    // Bootstrap noise realizations on the XOR task.
    {
        set_max_jobs(hw);
        TaskSpec task;
        task.kind = TaskSpec::Kind::xor3;
        const ReferenceTrainResult ref = train_reference(task, 1);
        std::vector<double> samples;
        Rng rng(3);
        for (int i = 0; i < 5000; ++i) samples.push_back(rng.normal(0.0, 2.0));
        const ErrorDistribution errors = ErrorDistribution::from_samples(samples);
        NoiseStudyReport ra, rb;
        set_max_jobs(1);
        const double ts = timed([&] { ra = noise_injection_study(ref.net, errors, task, 20000 * scale, 7); });
        set_max_jobs(hw);
        const double tp = timed([&] { rb = noise_injection_study(ref.net, errors, task, 20000 * scale, 7); });
        report("noise realizations", ts, tp, ra.metric == rb.metric);
    }
    return 0;
}
