#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bbw/features.hpp"
#include "bbw/geometry.hpp"
#include "bbw/trigger.hpp"
#include "bbw/verification.hpp"

// Desk-scale extraction-attack simulator. Object populations are Gaussian
// mixtures in feature space; detectors are behavioural surrogates that
// perturb ground-truth boxes, and an extracted surrogate reproduces a
// learned backdoor of configurable strength.
namespace bbw::sim {

struct MixtureComponent {
  std::vector<double> mean;
  double stdev = 1.0;
  double weight = 0.0;
  std::uint32_t category = 0;
};

struct BoxSizeSpec {
  double min_w = 30.0;
  double max_w = 120.0;
  double min_aspect = 0.6;  // h / w
  double max_aspect = 1.6;
};

struct WorldSpec {
  std::uint64_t seed = 0;
  std::size_t n_train = 2000;
  std::size_t n_substitute = 2000;
  std::size_t n_test = 5000;
  std::size_t n_key = 1000;
  std::size_t m = 8;
  std::vector<MixtureComponent> mixture;
  double image_w = 640.0;
  double image_h = 480.0;
  std::size_t objects_per_image = 4;
  BoxSizeSpec boxes;
  // Substitute weights are (1 - s) * train + s * shift_target.
  double distribution_shift = 0.0;
  // Defaults to the train weights with the compact component removed.
  std::vector<double> shift_target;

  static WorldSpec standard(std::uint64_t seed);

  void validate() const;
  // Component with the smallest stdev (the plantable compact cluster).
  std::size_t compact_component() const;
  // 0 for the most compact component, increasing with stdev.
  std::size_t compactness_rank(std::size_t component) const;
  std::vector<double> train_weights() const;
  std::vector<double> substitute_weights() const;
};

struct WorldObject {
  std::uint64_t id = 0;
  std::size_t component = 0;
  std::uint32_t category = 0;
  BoundingBox truth{0.5, 0.5, 1.0, 1.0};
  std::vector<double> feature;
};

struct SyntheticImage {
  std::string image_id;
  double width = 0.0;
  double height = 0.0;
  std::vector<WorldObject> objects;
};

using ObjectSet = std::vector<SyntheticImage>;

struct SyntheticWorld {
  WorldSpec spec;
  ObjectSet train;
  ObjectSet substitute;
  ObjectSet test;
  // Test images containing compact-component objects first, then others.
  ObjectSet key;
};

std::size_t object_count(const ObjectSet& set);
FeatureMatrix features_of(const ObjectSet& set);
DetectionSet ground_truth(const ObjectSet& set);
std::vector<std::size_t> component_counts(const ObjectSet& set, std::size_t components);

SyntheticWorld generate_world(const WorldSpec& spec);

// Draws one object set from the world's mixture with given weights. Used for
// request streams outside the fixed splits.
ObjectSet sample_objects(const WorldSpec& spec, const std::vector<double>& weights,
                         std::size_t count, std::uint64_t stream, const std::string& prefix);

// Key-set construction: images holding a flagged object first (in order),
// then the remaining images, stopping once `n_key` objects are collected.
ObjectSet select_key_set(const ObjectSet& pool, const std::vector<std::vector<bool>>& flags,
                         std::size_t n_key);

// The target f: ground-truth boxes perturbed by loc_noise (center offsets
// with stdev loc_noise * size, log-size jitter with stdev loc_noise).
// Deterministic per (seed, object id).
DetectionSet simulate_target(const ObjectSet& set, double loc_noise, std::uint64_t seed);

enum class SurrogateKind { Target, Benign, Extracted };

struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::Benign;
  double loc_noise = 0.03;
  double fidelity = 1.0;               // lambda
  double trigger_response_rate = 0.95; // q
  double false_fire_rate = 0.0;
  double attenuation = 0.0;            // alpha
  // Radius of the learned trigger region relative to the trigger model's
  // epsilon_bar.
  double region_radius_scale = 1.0;

  void validate() const;
};

// delta_eff = 1 + (1 - recall) * lambda * (delta - 1) * (1 - alpha)
double effective_magnitude(double delta, double adaptive_recall, double fidelity,
                           double attenuation);

// Poisoned API responses as the attacker receives them, with the proxy's
// server-side flags and the per-object features the simulator knows.
struct PoisonedResponses {
  DetectionSet responses;
  std::vector<std::vector<bool>> poisoned;
  FeatureMatrix features;  // row order follows images, then objects
};

struct ExtractedSurrogate {
  double delta_eff_w = 1.0;
  double delta_eff_h = 1.0;
  FeatureMatrix region;  // features of surviving poisoned objects
  double region_radius = 0.0;
  SurrogateSpec spec;
  std::size_t poisoned_seen = 0;
  std::size_t survivors = 0;
  bool degenerate = false;  // no survivors: behaves as benign
};

ExtractedSurrogate train_extracted(const PoisonedResponses& responses, const SurrogateSpec& spec,
                                   double adaptive_recall, const PoisoningPolicy& policy,
                                   double trigger_epsilon, std::uint64_t seed);

DetectionSet surrogate_detect(const ExtractedSurrogate& model, const ObjectSet& set,
                              std::uint64_t seed);
DetectionSet benign_detect(const SurrogateSpec& spec, const ObjectSet& set, std::uint64_t seed);

enum class TriggerStrategy { Compact, Random };

// Rescale by 1.05 on both axes.
inline PoisoningPolicy standard_policy() {
  PoisoningPolicy policy;
  policy.delta_w = policy.delta_h = 1.05;
  return policy;
}

struct ExperimentConfig {
  WorldSpec world;
  PoisoningPolicy policy = standard_policy();
  double p = 0.02;
  std::size_t n_benign = 30;
  std::size_t n_extracted = 30;
  double eta = kDefaultEta;
  InconsistencyMetric metric = InconsistencyMetric::ScaleBased;
  double adaptive_recall = 0.0;
  TriggerStrategy strategy = TriggerStrategy::Compact;
  double target_loc_noise = 0.02;
  SurrogateSpec extracted{SurrogateKind::Extracted};
  SurrogateSpec benign{SurrogateKind::Benign};
  double search_step = 0.01;
  // 0 selects max(1, floor(0.2 * n * p)).
  std::size_t search_tolerance = 0;
  std::size_t min_pts = 5;
  std::size_t max_iterations = 10000;
  std::size_t threads = 1;

  void validate() const;
  ClusterSearchParams search_params() const;
};

struct ExperimentArtifacts {
  FeatureMatrix train_features;
  PoisonedResponses substitute;
  DetectionSet substitute_truth;
  DetectionSet key_target;
  FeatureMatrix key_features;
  TriggerFlags key_flags;
  std::vector<Suspect> suspects;
  std::vector<ExtractedSurrogate> extracted;
};

struct ExperimentResult {
  VerificationReport report;
  TriggerModel trigger;
  ExperimentArtifacts artifacts;
};

// Stages of run_experiment, exposed so sweeps can reuse worlds and triggers.
TriggerModel select_trigger(const SyntheticWorld& world, const ExperimentConfig& config);
ExperimentResult run_experiment(const SyntheticWorld& world, const TriggerModel& trigger,
                                const ExperimentConfig& config);
ExperimentResult run_experiment(const ExperimentConfig& config);

// Writes report.json, trigger.model, feature CSVs, detection records for the
// substitute responses, key set and every suspect, and histogram CSVs.
void write_experiment_outputs(const ExperimentResult& result, const std::filesystem::path& dir);

struct SweepGrid {
  std::vector<double> delta;
  std::vector<double> p;
  std::vector<double> lambda;
  std::vector<double> alpha;
  std::vector<double> recall;
  std::vector<TriggerStrategy> strategy;
};

struct SweepCell {
  double delta = 1.0;
  double p = 0.0;
  double lambda = 0.0;
  double alpha = 0.0;
  double recall = 0.0;
  TriggerStrategy strategy = TriggerStrategy::Compact;
  std::optional<double> auroc;
  std::optional<double> mean_score_extracted;
  std::optional<double> mean_score_benign;
  std::string error;
};

// Runs every grid cell (delta outermost, strategy innermost) on the base
// config's seed. Empty axes take the base value. Failing cells keep their
// error message and the sweep continues.
std::vector<SweepCell> sweep(const ExperimentConfig& base, const SweepGrid& grid);
void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells);

nlohmann::json to_json(const WorldSpec& spec);
nlohmann::json to_json(const ExperimentConfig& config);
WorldSpec world_spec_from_json(const nlohmann::json& doc);
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc);
SweepGrid sweep_grid_from_json(const nlohmann::json& doc);
nlohmann::json load_json_document(const std::filesystem::path& path);

std::string to_string(TriggerStrategy strategy);
TriggerStrategy parse_strategy(const std::string& text);

}  // namespace bbw::sim
