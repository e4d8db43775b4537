#pragma once

#include "damformer/checkpoint.hpp"
#include "damformer/config.hpp"
#include "damformer/metrics.hpp"

namespace damformer {

struct TrainResult {
    double final_loss = 0;
    int steps_run = 0;
    std::filesystem::path checkpoint_path;
};

// Forward -> compound loss -> backward -> AdamW for the configured step
// budget. Logs per-step loss components to stdout and <out>/train.log, writes
// DFW1 checkpoints, and is fully reproducible from (seed, config).
TrainResult train(const RunConfig& run);

// Inference over the eval split with the mask-derivation rule; writes
// <out>/metrics.txt and returns the report.
MetricsReport evaluate(const RunConfig& run, const std::filesystem::path& checkpoint);

// Writes <id>.loc.pgm and the palette-rendered <id>.dam.ppm per eval sample.
void predict(const RunConfig& run, const std::filesystem::path& checkpoint,
             const std::filesystem::path& out_dir);

// Materializes the synthetic train/eval splits as DFR1 quadruplets.
void synth_write(const RunConfig& run, const std::filesystem::path& out_dir);

// Full-model f64 finite-difference check on the configured model; samples a
// few coordinates per parameter tensor and returns the max relative error.
double gradcheck(const RunConfig& run, int coords_per_param = 4, double h = 1e-5);

// Batch assembly, exposed for the test suites.
Tensor stack_images(const std::vector<SamplePair>& batch, bool post, Dtype dt);
IntMask stack_masks(const std::vector<SamplePair>& batch, bool dam);

Dataset train_dataset(const RunConfig& run);
Dataset eval_dataset(const RunConfig& run);

}  // namespace damformer
