#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lgr/adam.hpp"
#include "lgr/gcndecode.hpp"
#include "lgr/patchgraph.hpp"
#include "lgr/selection.hpp"
#include "lgr/serialize.hpp"
#include "lgr/synthdata.hpp"

namespace lgr {

enum class Setup { binary_noreg = 1, product_noreg = 2, uniform_sparsity = 3, foreground_priority = 4 };

/// How the sparsity penalty sees the foreground/background split.
enum class PenaltyReading {
  /// R_Theta applied to C_fg and C_bg separately (two extra passes).
  separate,
  /// R_Theta applied once to C; its output masked by the foreground pairs.
  masked,
};

Setup parse_setup(const std::string& s);
std::string setup_name(Setup s);

/// Graph encoder R_Theta plus decoder A_Omega, sharing one parameter set.
class LgrModel {
 public:
  LgrModel(PatchConfig patch, DecoderConfig decoder, std::uint64_t seed);

  const PatchConfig& patch() const { return patch_; }
  const DecoderConfig& decoder_config() const { return decoder_.config(); }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const SelectionNet& theta() const { return theta_; }
  const Decoder& decoder() const { return decoder_; }

  /// `external` names the feature tensor when the featurizer is external.
  FeatureMatrix features(const Tensor& image, const std::filesystem::path& external = {}) const;
  /// Features of image `i` of `data`.
  FeatureMatrix features(const Dataset& data, std::size_t i) const;
  /// Base-level weights W (and the selection) for a feature matrix.
  WeightsResult graph(const Var& features, SelectMode mode) const;
  /// Decoded image for an LGR; unclamped.
  Tensor reconstruct(const Tensor& features) const;

  NamedTensors state() const;
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<LgrModel> load(const std::filesystem::path& path);

 private:
  PatchConfig patch_;
  ParameterSet params_;
  Rng init_rng_;
  SelectionNet theta_;
  Decoder decoder_;
};

/// Geometry record stored alongside parameters in checkpoints.
NamedTensors geometry_entries(const PatchConfig& patch, const DecoderConfig& decoder);
std::pair<PatchConfig, DecoderConfig> geometry_from(const NamedTensors& entries);

struct TrainConfig {
  Setup setup = Setup::foreground_priority;
  double alpha = 0.025;
  /// Negative means "derive from the setup" (setup4: 12 alpha, setup3: alpha).
  double beta = -1.0;
  std::size_t steps = 2000;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  double validation_fraction = 0.1;
  std::size_t patience = 5;
  PenaltyReading penalty = PenaltyReading::separate;
  /// Log a progress line every this many steps (0: never).
  std::size_t log_every = 0;

  /// Applies the setup's constraints; throws on negative weights.
  TrainConfig resolved() const;
};

/// 1/2 |x - xhat|^2 + alpha |S_fg|_1 + beta |S_bg|_1.
Var recon_loss(const Var& x, const Var& xhat, const Var& s_fg, const Var& s_bg, double alpha, double beta);

struct EpochRecord {
  std::size_t epoch = 0, step = 0;
  double val_psnr = 0.0, val_psnr_fg = 0.0;
  double total_edges = 0.0, foreground_edges = 0.0, background_edges = 0.0;
  double total_percent = 0.0, foreground_percent = 0.0;
};

struct TrainReport {
  std::vector<double> step_loss;
  std::vector<double> step_penalty;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  void write_csv(std::ostream& steps_out, std::ostream& epochs_out) const;
};

/// One prepared training example.
struct LgrSample {
  Tensor image;
  Tensor features;
  ForegroundIndex foreground;
  Tensor pixel_mask;  // 1 on foreground pixels; empty when unknown
};

std::vector<LgrSample> prepare_samples(const LgrModel& model, const Dataset& data);

/// Trains Theta and Omega jointly and restores the parameters of the epoch
/// with the best validation PSNR. Throws DivergenceError on a non-finite loss.
/// Eq. 2 objective for one sample under `config` (already resolved). The
/// regularizer part is written to `penalty` when given.
Var sample_objective(const LgrModel& model, const LgrSample& sample, const TrainConfig& config, SelectMode mode,
                     double* penalty = nullptr);

TrainReport train_lgr(LgrModel& model, const Dataset& data, const TrainConfig& config);

struct EvalSummary {
  double psnr = 0.0;
  double psnr_fg = 0.0;  // mean over images with a non-empty foreground
  std::size_t fg_images = 0;
  double total_edges = 0.0, foreground_edges = 0.0, background_edges = 0.0;  // means over images
  double total_percent = 0.0, foreground_percent = 0.0;
  std::vector<double> per_image_psnr;
};

/// Mean PSNR (and edge statistics with eval-hard masks) over a set.
EvalSummary psnr_eval(const LgrModel& model, const std::vector<LgrSample>& samples);

}  // namespace lgr
