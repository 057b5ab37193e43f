#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lgr/adam.hpp"
#include "lgr/gcnhead.hpp"
#include "lgr/serialize.hpp"

namespace lgr {

class LgrModel;

enum class GanObjective {
  nonsaturating,  ///< generator maximizes log D(fake)
  literal,        ///< generator minimizes log(1 - D(fake))
  wasserstein,    ///< critic scores with weight clipping
};
GanObjective parse_objective(const std::string& s);
std::string objective_name(GanObjective o);

struct GanConfig {
  GanObjective objective = GanObjective::nonsaturating;
  double clip = 0.01;
  std::size_t d_steps = 3;
  std::size_t latent = 128;
  bool conditional = false;
  std::size_t classes = 2;
  std::size_t embed = 8;
  std::vector<std::size_t> gen_hidden{256, 512};
  std::vector<std::size_t> disc_dims{64, 32};  // after D
  std::size_t steps = 2000;
  std::size_t batch = 16;
  double lr = 2e-4;
  double beta1 = 0.5;
  std::uint64_t seed = 1;
  std::size_t log_every = 0;

  void validate() const;
};

/// Generator and discriminator of an LGR GAN for one (V, D) geometry.
class GraphGan {
 public:
  GraphGan(std::size_t vertices, std::size_t dim, const GanConfig& config, FeatureStats stats);

  const GanConfig& config() const { return config_; }
  std::size_t vertices() const { return vertices_; }
  std::size_t dim() const { return dim_; }
  const FeatureStats& stats() const { return stats_; }
  ParameterSet& generator_params() { return gen_params_; }
  ParameterSet& discriminator_params() { return disc_params_; }

  /// Standardized features for each row of `z` ([B x latent]); `labels` required when conditional.
  std::vector<Var> generate(const Var& z, const std::vector<int>& labels) const;

  struct Judgement {
    Var realism;  ///< logit (vanilla) or critic score (wasserstein), [1 x 1]
    Var class_logits;  ///< [1 x classes] when conditional
  };
  /// Discriminator on standardized features and weights.
  Judgement judge(const Var& std_features, const GraphWeights& w) const;

  /// Raw-feature graph for standardized generator output through the frozen selection net.
  GraphWeights fake_weights(const LgrModel& model, const Var& std_features, Var* raw_features = nullptr) const;

  NamedTensors state() const;
  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<GraphGan> load(const std::filesystem::path& path);

 private:
  GanConfig config_;
  std::size_t vertices_, dim_;
  FeatureStats stats_;
  ParameterSet gen_params_, disc_params_;
  Rng init_rng_;
  Var embedding_;
  std::vector<Linear> gen_layers_;
  GraphEncoder disc_body_;
  Linear realism_head_, class_head_;
};

struct GanReport {
  std::vector<double> d_loss, g_loss;
  void write_csv(std::ostream& out) const;
};

/// Refuses a GAN and model whose vertex count or feature width differ.
void check_compatible(const GraphGan& gan, const LgrModel& model);

/// Discriminator loss for one real graph (standardized features `real_std`)
/// and one fake; ACGAN class terms are added when conditional.
Var discriminator_objective(const GraphGan& gan, const Tensor& real_std, const LabeledGraph& real, const Var& fake_std,
                            const GraphWeights& fake_w, int fake_label);
/// Generator loss for one fake; its weights come from the frozen model.
Var generator_objective(const GraphGan& gan, const LgrModel& model, const Var& fake_std, int label);

/// Alternating training against the real graphs; the model stays frozen.
GanReport train_gan(GraphGan& gan, const LgrModel& model, const std::vector<LabeledGraph>& real);

/// Fraction of `count` real and `count` fresh fake graphs the discriminator labels correctly.
double discriminator_accuracy(const GraphGan& gan, const LgrModel& model, const std::vector<LabeledGraph>& real, std::size_t count,
                              std::uint64_t seed);

/// Latent code for sample `index` of a draw seeded with `seed`.
Tensor latent_code(std::size_t latent, std::uint64_t seed, std::size_t index);

/// Q generated graphs (raw features, eval-hard weights). Labels cycle through
/// the classes when conditional and `labels` is empty.
std::vector<LabeledGraph> sample_graphs(const GraphGan& gan, const LgrModel& model, std::size_t count, std::uint64_t seed,
                                        std::vector<int> labels = {});

struct GeneratedSet {
  std::vector<Tensor> images;  // clamped to [0,1]
  std::vector<int> labels;
  std::vector<LabeledGraph> graphs;
};
GeneratedSet sample_images(const GraphGan& gan, const LgrModel& model, std::size_t count, std::uint64_t seed,
                           std::vector<int> labels = {});

/// Numbered PGM files plus manifest.csv (index,seed,label,path).
void write_generated(const std::filesystem::path& dir, const GeneratedSet& set, std::uint64_t seed);

}  // namespace lgr
