#pragma once

// Training, checkpoints, inference and evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nsl/diffmath/adam.hpp"
#include "nsl/metrics/metrics.hpp"
#include "nsl/synth/model.hpp"
#include "nsl/synth/scene.hpp"

namespace nsl::synth {

struct TrainConfig {
  ModelConfig model;
  losses::LossConfig loss;
  double lr = 1e-4;
  // When > 0, the step size follows a half cosine from lr at step 0 to 0 at
  // decay_steps; otherwise it stays at lr.
  std::size_t decay_steps = 0;
  std::size_t batch = 2;
  std::size_t steps = 300;
  // When > 0, overrides steps with epochs * ceil(items / batch).
  std::size_t epochs = 0;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t total_steps(std::size_t items) const;
  // Step size used for the update that completes step + 1.
  double lr_at(std::size_t step) const;
};

struct TrainState {
  ad::ParameterStore params;
  ad::Adam adam;
  std::size_t step = 0;  // steps completed
};

TrainState init_training(const TrainConfig& config);

struct LossRecord {
  std::size_t step = 0;  // 1-based
  double photo = 0, reg = 0, smooth = 0, total = 0;
};

struct TrainResult {
  TrainState state;  // after the last finite step
  std::vector<LossRecord> trace;
  bool aborted = false;
  std::string abort_reason;
};

// Indices of the items in the batch of a given 0-based step: a fresh
// permutation per epoch drawn from the seed.
std::vector<std::size_t> batch_indices(const TrainConfig& config, std::size_t items, std::size_t step);

// One optimisation step on the given items; returns the batch-mean losses.
// TrainingError when any loss part or gradient is non-finite (the state is
// left untouched in that case).
LossRecord train_step(const TrainConfig& config, TrainState& state, const std::vector<const DatasetItem*>& batch);

// Runs from state.step up to `until` steps. A non-finite step stops the run
// with aborted = true and the last good state.
using StepCallback = std::function<void(const LossRecord&)>;
TrainResult train(const TrainConfig& config, const std::vector<DatasetItem>& items, TrainState state,
                  std::size_t until, const StepCallback& on_step = {});

// Checkpoint directory: params.nslt (parameters and Adam moments) and
// manifest.txt (model config, config hash, step, parameter names and shapes).
void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& config, const TrainState& state);

struct Checkpoint {
  ModelConfig model;
  std::string hash;
  TrainState state;
};

// FormatError for unreadable files, VersionError when the stored hash does
// not match the stored config or the parameters do not match the config.
Checkpoint load_checkpoint(const std::filesystem::path& dir);
// As above, and VersionError unless the checkpoint was written for `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& dir, const ModelConfig& expected);

std::string format_trace(const std::vector<LossRecord>& trace);

// ---- inference and evaluation ----------------------------------------------------

struct Inference {
  Tensor disparity;  // [H x W]
  Tensor mask;       // [H x W], coarse validity mask upsampled
};

Inference infer(const ad::ParameterStore& params, const ModelConfig& config, const DatasetItem& item);

// Writes <stem>_disp.pfm, <stem>_disp.png (disparity x 256, 16-bit) and
// <stem>_mask.png (0 / 255) into dir.
void write_inference(const std::filesystem::path& dir, const std::string& stem, const Inference& result);

using Predictor = std::function<Tensor(const DatasetItem&)>;

Predictor model_predictor(const ad::ParameterStore& params, const ModelConfig& config);

// Runs the predictor on every item with gt depth and scores disparity-derived
// depth against it.
metrics::MetricReport evaluate(const Predictor& predict, const std::vector<DatasetItem>& items,
                               std::size_t bins = metrics::kDefaultBins,
                               double max_depth = metrics::kDefaultMaxDepth);

struct EndPointError {
  std::size_t count = 0;
  double mean = 0.0;
  double below = 0.0;  // fraction of pixels with error < threshold
};

// |pred - truth| over pixels where region != 0.
EndPointError end_point_error(const Tensor& pred, const Tensor& truth, const Tensor& region, double threshold);

// Pixels that are visible in both views and covered by a random-dot layer.
Tensor textured_region(const SceneTruth& truth);

}  // namespace nsl::synth
