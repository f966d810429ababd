#include "bbw/sim.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "bbw/error.hpp"
#include "bbw/interchange.hpp"
#include "bbw/parallel.hpp"
#include "bbw/proxy.hpp"
#include "bbw/rng.hpp"

namespace bbw::sim {

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t {
  kTagTrain = 1,
  kTagSubstitute = 2,
  kTagTest = 3,
  kTagStream = 4,
  kTagTarget = 10,
  kTagExtracted = 11,
  kTagBenign = 12,
  kTagRandomTrigger = 13,
  kTagFilter = 14,
};

constexpr std::uint64_t kSplitShift = 40;

constexpr std::size_t kStandardComponents = 6;
constexpr double kStandardSpacing = 6.0;
constexpr double kStandardCompactStdev = 0.5;
constexpr double kStandardBroadStdev = 1.0;
constexpr double kStandardCompactWeight = 0.02;
constexpr std::uint32_t kStandardCategories = 3;

std::string format_number(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::string padded(std::size_t value, int width = 6) {
  std::ostringstream out;
  out << std::setw(width) << std::setfill('0') << value;
  return out.str();
}

BoundingBox perturb(const BoundingBox& bb, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double da = normal(rng);
  const double db = normal(rng);
  const double dw = normal(rng);
  const double dh = normal(rng);
  if (sigma == 0.0) return bb;
  return BoundingBox(bb.a() + sigma * bb.w() * da, bb.b() + sigma * bb.h() * db,
                     bb.w() * std::exp(sigma * dw), bb.h() * std::exp(sigma * dh));
}

ObjectSet generate_split(const WorldSpec& spec, const std::vector<double>& weights,
                         std::size_t count, std::uint64_t split_tag, const std::string& prefix) {
  auto rng = derive_rng(spec.seed, {split_tag});
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  ObjectSet set;
  for (std::size_t i = 0; i < count; ++i) {
    if (i % spec.objects_per_image == 0) {
      set.push_back({prefix + "-" + padded(set.size()), spec.image_w, spec.image_h, {}});
    }
    WorldObject obj;
    obj.id = (split_tag << kSplitShift) | i;
    obj.component = pick(rng);
    const auto& comp = spec.mixture[obj.component];
    obj.category = comp.category;
    obj.feature.resize(spec.m);
    for (std::size_t k = 0; k < spec.m; ++k) obj.feature[k] = comp.mean[k] + comp.stdev * normal(rng);
    const double w = spec.boxes.min_w + (spec.boxes.max_w - spec.boxes.min_w) * unit(rng);
    const double aspect =
        spec.boxes.min_aspect + (spec.boxes.max_aspect - spec.boxes.min_aspect) * unit(rng);
    const double h = w * aspect;
    const double a = w / 2.0 + (spec.image_w - w) * unit(rng);
    const double b = h / 2.0 + (spec.image_h - h) * unit(rng);
    obj.truth = BoundingBox(a, b, w, h);
    set.back().objects.push_back(std::move(obj));
  }
  return set;
}

std::vector<std::vector<bool>> component_flags(const ObjectSet& set, std::size_t component) {
  std::vector<std::vector<bool>> flags;
  for (const auto& img : set) {
    auto& row = flags.emplace_back();
    for (const auto& obj : img.objects) row.push_back(obj.component == component);
  }
  return flags;
}

double min_distance(const FeatureMatrix& centers, std::span<const double> feature) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centers.rows(); ++i) {
    best = std::min(best, squared_distance(feature, centers.row(i)));
  }
  return std::sqrt(best);
}

std::string surrogate_name(const char* prefix, std::size_t index) {
  return std::string(prefix) + "-" + padded(index, 3);
}

template <typename T>
std::vector<T> axis_or(const std::vector<T>& values, T fallback) {
  return values.empty() ? std::vector<T>{fallback} : values;
}

nlohmann::json surrogate_to_json(const SurrogateSpec& s) {
  return {{"loc_noise", s.loc_noise},
          {"fidelity", s.fidelity},
          {"trigger_response_rate", s.trigger_response_rate},
          {"false_fire_rate", s.false_fire_rate},
          {"attenuation", s.attenuation},
          {"region_radius_scale", s.region_radius_scale}};
}

SurrogateSpec surrogate_from_json(const nlohmann::json& doc, SurrogateSpec base) {
  base.loc_noise = doc.value("loc_noise", base.loc_noise);
  base.fidelity = doc.value("fidelity", base.fidelity);
  base.trigger_response_rate = doc.value("trigger_response_rate", base.trigger_response_rate);
  base.false_fire_rate = doc.value("false_fire_rate", base.false_fire_rate);
  base.attenuation = doc.value("attenuation", base.attenuation);
  base.region_radius_scale = doc.value("region_radius_scale", base.region_radius_scale);
  return base;
}

std::vector<MixtureComponent> standard_mixture(std::size_t m) {
  if (m < kStandardComponents) {
    throw ConfigError("the default mixture needs m >= " + std::to_string(kStandardComponents) +
                      "; supply an explicit mixture for smaller m");
  }
  std::vector<MixtureComponent> mixture;
  const double broad_weight = (1.0 - kStandardCompactWeight) / (kStandardComponents - 1);
  for (std::size_t k = 0; k < kStandardComponents; ++k) {
    MixtureComponent c;
    c.mean.assign(m, 0.0);
    c.mean[k] = kStandardSpacing;
    c.stdev = k == 0 ? kStandardCompactStdev : kStandardBroadStdev;
    c.weight = k == 0 ? kStandardCompactWeight : broad_weight;
    c.category = static_cast<std::uint32_t>(k) % kStandardCategories;
    mixture.push_back(std::move(c));
  }
  return mixture;
}

void write_histogram_file(const std::filesystem::path& path, const HistogramTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_histogram_csv(out, table);
}

}  // namespace

WorldSpec WorldSpec::standard(std::uint64_t seed) {
  WorldSpec spec;
  spec.seed = seed;
  spec.mixture = standard_mixture(spec.m);
  return spec;
}

void WorldSpec::validate() const {
  if (mixture.empty()) throw ConfigError("world mixture has no components");
  if (m == 0) throw ConfigError("feature dimension m must be at least 1");
  if (objects_per_image == 0) throw ConfigError("objects_per_image must be positive");
  double total = 0.0;
  for (std::size_t k = 0; k < mixture.size(); ++k) {
    const auto& c = mixture[k];
    if (c.mean.size() != m) {
      throw ConfigError("mixture component " + std::to_string(k) + " mean has dimension " +
                        std::to_string(c.mean.size()) + ", expected " + std::to_string(m));
    }
    if (!(c.stdev > 0.0) || !(c.weight >= 0.0)) {
      throw ConfigError("mixture component " + std::to_string(k) + " has invalid stdev/weight");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");
  const std::size_t compact = compact_component();
  for (std::size_t k = 0; k < mixture.size(); ++k) {
    if (k != compact && !(mixture[k].stdev > mixture[compact].stdev)) {
      throw ConfigError("exactly one mixture component must have the strictly smallest stdev");
    }
  }
  if (!(distribution_shift >= 0.0 && distribution_shift <= 1.0)) {
    throw ConfigError("distribution_shift must lie in [0, 1]");
  }
  if (!shift_target.empty()) {
    if (shift_target.size() != mixture.size()) throw ConfigError("shift_target size mismatch");
    const double s = std::accumulate(shift_target.begin(), shift_target.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-9) throw ConfigError("shift_target weights must sum to 1");
  }
  if (!(image_w > 0.0 && image_h > 0.0)) throw ConfigError("image size must be positive");
  if (!(boxes.min_w > 0.0 && boxes.min_w <= boxes.max_w && boxes.max_w <= image_w &&
        boxes.min_aspect > 0.0 && boxes.min_aspect <= boxes.max_aspect &&
        boxes.max_w * boxes.max_aspect <= image_h)) {
    throw ConfigError("box size distribution does not fit the image");
  }
  if (n_key > n_test) {
    throw ConfigError("n_key (" + std::to_string(n_key) + ") exceeds the generated test pool (" +
                      std::to_string(n_test) + ")");
  }
}

std::size_t WorldSpec::compact_component() const {
  std::size_t best = 0;
  for (std::size_t k = 1; k < mixture.size(); ++k) {
    if (mixture[k].stdev < mixture[best].stdev) best = k;
  }
  return best;
}

std::size_t WorldSpec::compactness_rank(std::size_t component) const {
  std::size_t rank = 0;
  for (std::size_t k = 0; k < mixture.size(); ++k) {
    if (mixture[k].stdev < mixture[component].stdev ||
        (mixture[k].stdev == mixture[component].stdev && k < component)) {
      ++rank;
    }
  }
  return rank;
}

std::vector<double> WorldSpec::train_weights() const {
  std::vector<double> w;
  for (const auto& c : mixture) w.push_back(c.weight);
  return w;
}

std::vector<double> WorldSpec::substitute_weights() const {
  auto train = train_weights();
  std::vector<double> target = shift_target;
  if (target.empty()) {
    target = train;
    target[compact_component()] = 0.0;
    const double s = std::accumulate(target.begin(), target.end(), 0.0);
    for (auto& v : target) v /= s;
  }
  for (std::size_t k = 0; k < train.size(); ++k) {
    train[k] = (1.0 - distribution_shift) * train[k] + distribution_shift * target[k];
  }
  return train;
}

std::size_t object_count(const ObjectSet& set) {
  std::size_t n = 0;
  for (const auto& img : set) n += img.objects.size();
  return n;
}

FeatureMatrix features_of(const ObjectSet& set) {
  FeatureMatrix out;
  for (const auto& img : set) {
    for (std::size_t k = 0; k < img.objects.size(); ++k) {
      out.append(img.objects[k].feature, ObjectKey{img.image_id, k});
    }
  }
  return out;
}

DetectionSet ground_truth(const ObjectSet& set) {
  DetectionSet out;
  for (const auto& img : set) {
    auto& rec = out.emplace_back(ImageDetections{img.image_id, img.width, img.height, {}});
    for (const auto& obj : img.objects) rec.objects.push_back({obj.category, obj.truth, std::nullopt});
  }
  return out;
}

std::vector<std::size_t> component_counts(const ObjectSet& set, std::size_t components) {
  std::vector<std::size_t> counts(components, 0);
  for (const auto& img : set) {
    for (const auto& obj : img.objects) counts.at(obj.component) += 1;
  }
  return counts;
}

ObjectSet sample_objects(const WorldSpec& spec, const std::vector<double>& weights,
                         std::size_t count, std::uint64_t stream, const std::string& prefix) {
  spec.validate();
  return generate_split(spec, weights, count, (kTagStream << 16) | (stream & 0xFFFF), prefix);
}

ObjectSet select_key_set(const ObjectSet& pool, const std::vector<std::vector<bool>>& flags,
                         std::size_t n_key) {
  if (flags.size() != pool.size()) throw AlignmentError("key-set flags do not align with images");
  if (n_key > object_count(pool)) {
    throw ConfigError("n_key exceeds the number of pooled objects");
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (std::find(flags[i].begin(), flags[i].end(), true) != flags[i].end()) order.push_back(i);
  }
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (std::find(flags[i].begin(), flags[i].end(), true) == flags[i].end()) order.push_back(i);
  }
  ObjectSet key;
  std::size_t taken = 0;
  for (std::size_t i : order) {
    if (taken >= n_key) break;
    key.push_back(pool[i]);
    taken += pool[i].objects.size();
  }
  return key;
}

SyntheticWorld generate_world(const WorldSpec& spec) {
  spec.validate();
  SyntheticWorld world;
  world.spec = spec;
  world.train = generate_split(spec, spec.train_weights(), spec.n_train, kTagTrain, "train");
  world.substitute =
      generate_split(spec, spec.substitute_weights(), spec.n_substitute, kTagSubstitute, "sub");
  world.test = generate_split(spec, spec.train_weights(), spec.n_test, kTagTest, "test");
  world.key = select_key_set(world.test, component_flags(world.test, spec.compact_component()),
                             spec.n_key);
  return world;
}

DetectionSet simulate_target(const ObjectSet& set, double loc_noise, std::uint64_t seed) {
  if (!(loc_noise >= 0.0)) throw ConfigError("loc_noise must be non-negative");
  DetectionSet out;
  for (const auto& img : set) {
    auto& rec = out.emplace_back(ImageDetections{img.image_id, img.width, img.height, {}});
    for (const auto& obj : img.objects) {
      auto rng = derive_rng(seed, {kTagTarget, obj.id});
      const BoundingBox bb = perturb(obj.truth, loc_noise, rng);
      std::uniform_real_distribution<double> conf(0.5, 1.0);
      rec.objects.push_back({obj.category, bb, conf(rng)});
    }
  }
  return out;
}

void SurrogateSpec::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!(loc_noise >= 0.0)) throw ConfigError("surrogate loc_noise must be non-negative");
  if (!unit(fidelity) || !unit(trigger_response_rate) || !unit(false_fire_rate) ||
      !unit(attenuation)) {
    throw ConfigError("surrogate rates must lie in [0, 1]");
  }
  if (!(region_radius_scale > 0.0)) throw ConfigError("region_radius_scale must be positive");
}

double effective_magnitude(double delta, double adaptive_recall, double fidelity,
                           double attenuation) {
  return 1.0 + (1.0 - adaptive_recall) * fidelity * (delta - 1.0) * (1.0 - attenuation);
}

ExtractedSurrogate train_extracted(const PoisonedResponses& responses, const SurrogateSpec& spec,
                                   double adaptive_recall, const PoisoningPolicy& policy,
                                   double trigger_epsilon, std::uint64_t seed) {
  spec.validate();
  if (!(adaptive_recall >= 0.0 && adaptive_recall <= 1.0)) {
    throw ConfigError("adaptive recall must lie in [0, 1]");
  }
  ExtractedSurrogate model;
  model.spec = spec;
  model.region = FeatureMatrix(std::max<std::size_t>(responses.features.dim(), 1));
  // A lone survivor has no spacing to fit; it falls back to the trigger radius.
  model.region_radius = spec.region_radius_scale * trigger_epsilon;
  const bool rescale = policy.pattern == PoisonPattern::Rescale;
  model.delta_eff_w = effective_magnitude(rescale ? policy.delta_w : 1.0, adaptive_recall,
                                          spec.fidelity, spec.attenuation);
  model.delta_eff_h = effective_magnitude(rescale ? policy.delta_h : 1.0, adaptive_recall,
                                          spec.fidelity, spec.attenuation);

  auto rng = derive_rng(seed, {kTagFilter});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t row = 0;
  for (std::size_t r = 0; r < responses.poisoned.size(); ++r) {
    for (bool poisoned : responses.poisoned[r]) {
      if (poisoned) {
        ++model.poisoned_seen;
        // The odd-box filter removes each poisoned response with prob. recall.
        if (unit(rng) >= adaptive_recall) {
          model.region.append(responses.features.row(row), responses.features.key(row));
        }
      }
      ++row;
    }
  }
  model.survivors = model.region.rows();
  model.degenerate = model.survivors == 0;
  if (model.survivors >= 2) {
    // Ball radius fitted to the spacing of the survivors themselves.
    std::vector<double> nearest;
    for (std::size_t i = 0; i < model.survivors; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < model.survivors; ++j) {
        if (i != j) best = std::min(best, squared_distance(model.region.row(i), model.region.row(j)));
      }
      nearest.push_back(std::sqrt(best));
    }
    std::nth_element(nearest.begin(), nearest.begin() + nearest.size() / 2, nearest.end());
    model.region_radius = spec.region_radius_scale * nearest[nearest.size() / 2];
  }
  return model;
}

DetectionSet surrogate_detect(const ExtractedSurrogate& model, const ObjectSet& set,
                              std::uint64_t seed) {
  PoisoningPolicy backdoor;
  backdoor.delta_w = model.delta_eff_w;
  backdoor.delta_h = model.delta_eff_h;
  DetectionSet out;
  for (const auto& img : set) {
    auto& rec = out.emplace_back(ImageDetections{img.image_id, img.width, img.height, {}});
    for (const auto& obj : img.objects) {
      auto rng = derive_rng(seed, {obj.id});
      BoundingBox bb = perturb(obj.truth, model.spec.loc_noise, rng);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double u = unit(rng);
      const double conf = 0.5 + 0.5 * unit(rng);
      if (!model.degenerate) {
        const double d = min_distance(model.region, obj.feature);
        const bool fire = d < model.region_radius
                              ? u < model.spec.trigger_response_rate
                              : (d < 2.0 * model.region_radius && u < model.spec.false_fire_rate);
        if (fire) bb = poison_bb(bb, backdoor, img.width, img.height);
      }
      rec.objects.push_back({obj.category, bb, conf});
    }
  }
  return out;
}

DetectionSet benign_detect(const SurrogateSpec& spec, const ObjectSet& set, std::uint64_t seed) {
  spec.validate();
  DetectionSet out;
  for (const auto& img : set) {
    auto& rec = out.emplace_back(ImageDetections{img.image_id, img.width, img.height, {}});
    for (const auto& obj : img.objects) {
      auto rng = derive_rng(seed, {obj.id});
      const BoundingBox bb = perturb(obj.truth, spec.loc_noise, rng);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      unit(rng);
      rec.objects.push_back({obj.category, bb, 0.5 + 0.5 * unit(rng)});
    }
  }
  return out;
}

void ExperimentConfig::validate() const {
  world.validate();
  policy.validate();
  extracted.validate();
  benign.validate();
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("poisoning ratio p must lie in (0, 1]");
  if (!(eta >= 0.0 && eta < 1.0)) throw ConfigError("eta must lie in [0, 1)");
  if (!(adaptive_recall >= 0.0 && adaptive_recall <= 1.0)) {
    throw ConfigError("adaptive_recall must lie in [0, 1]");
  }
  if (!(target_loc_noise >= 0.0)) throw ConfigError("target_loc_noise must be non-negative");
  if (metric == InconsistencyMetric::ScaleBased && policy.pattern == PoisonPattern::Rescale &&
      policy.delta_w == 1.0 && policy.delta_h == 1.0) {
    throw ConfigError("the scale-based metric needs a poisoning magnitude other than 1");
  }
}

ClusterSearchParams ExperimentConfig::search_params() const {
  ClusterSearchParams params;
  params.poisoning_ratio = p;
  const double target = static_cast<double>(world.n_train) * p;
  params.tolerance = search_tolerance != 0
                         ? search_tolerance
                         : std::max<std::size_t>(1, static_cast<std::size_t>(0.2 * target));
  params.step = search_step;
  params.min_pts = min_pts;
  params.max_iterations = max_iterations;
  return params;
}

TriggerModel select_trigger(const SyntheticWorld& world, const ExperimentConfig& config) {
  const auto train = features_of(world.train);
  if (config.strategy == TriggerStrategy::Compact) {
    return trigger_cluster_search(train, config.search_params());
  }
  return random_trigger_select(train, features_of(world.substitute), config.p,
                               derive_seed(world.spec.seed, {kTagRandomTrigger}));
}

ExperimentResult run_experiment(const SyntheticWorld& world, const TriggerModel& trigger,
                                const ExperimentConfig& config) {
  config.validate();
  const std::uint64_t seed = world.spec.seed;
  const std::uint64_t target_seed = derive_seed(seed, {kTagTarget});

  ExperimentResult result;
  result.trigger = trigger;
  auto& art = result.artifacts;
  art.train_features = features_of(world.train);

  // Attacker queries the poisoned API with the substitute set.
  art.substitute_truth = ground_truth(world.substitute);
  const auto clean_responses = simulate_target(world.substitute, config.target_loc_noise, target_seed);
  art.substitute.features = features_of(world.substitute);
  for (std::size_t r = 0; r < world.substitute.size(); ++r) {
    std::vector<std::vector<double>> feats;
    for (const auto& obj : world.substitute[r].objects) feats.push_back(obj.feature);
    auto outcome = poison_response(clean_responses[r], feats, config.policy, trigger);
    art.substitute.responses.push_back(std::move(outcome.response));
    art.substitute.poisoned.push_back(std::move(outcome.poisoned));
  }

  // Key set: test images holding trigger objects first.
  std::vector<std::vector<bool>> pool_flags;
  for (const auto& img : world.test) {
    auto& row = pool_flags.emplace_back();
    for (const auto& obj : img.objects) row.push_back(trigger_indicator(trigger, obj.feature));
  }
  const ObjectSet key = select_key_set(world.test, pool_flags, world.spec.n_key);
  art.key_target = simulate_target(key, config.target_loc_noise, target_seed);
  art.key_features = features_of(key);
  art.key_flags = compute_trigger_flags(art.key_target, art.key_features, trigger);

  const std::size_t total = config.n_extracted + config.n_benign;
  art.suspects.resize(total);
  art.extracted.resize(config.n_extracted);
  parallel_for(total, config.threads, [&](std::size_t i) {
    auto& suspect = art.suspects[i];
    if (i < config.n_extracted) {
      const std::uint64_t s = derive_seed(seed, {kTagExtracted, i});
      art.extracted[i] = train_extracted(art.substitute, config.extracted, config.adaptive_recall,
                                         config.policy, trigger.epsilon_bar, s);
      suspect = {surrogate_name("extracted", i), PopulationLabel::Extracted,
                 surrogate_detect(art.extracted[i], key, s)};
    } else {
      const std::size_t j = i - config.n_extracted;
      const std::uint64_t s = derive_seed(seed, {kTagBenign, j});
      suspect = {surrogate_name("benign", j), PopulationLabel::Benign,
                 benign_detect(config.benign, key, s)};
    }
  });

  VerifyOptions options;
  options.eta = config.eta;
  options.metric = {config.metric, config.policy.delta_w, config.policy.delta_h};
  options.threads = config.threads;
  result.report = verify(art.key_target, art.key_flags, art.suspects, options);
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto world = generate_world(config.world);
  return run_experiment(world, select_trigger(world, config), config);
}

void write_experiment_outputs(const ExperimentResult& result, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "suspects");
  const auto& art = result.artifacts;

  {
    std::ofstream out(dir / "report.json");
    if (!out) throw IoError("cannot write report in '" + dir.string() + "'");
    auto doc = to_json(result.report);
    nlohmann::json surrogates = nlohmann::json::array();
    for (const auto& e : art.extracted) {
      surrogates.push_back({{"delta_eff_w", e.delta_eff_w},
                            {"delta_eff_h", e.delta_eff_h},
                            {"poisoned_seen", e.poisoned_seen},
                            {"survivors", e.survivors},
                            {"degenerate", e.degenerate}});
    }
    doc["extracted_surrogates"] = std::move(surrogates);
    std::size_t poisoned = 0;
    std::size_t total = 0;
    for (const auto& row : art.substitute.poisoned) {
      total += row.size();
      poisoned += static_cast<std::size_t>(std::count(row.begin(), row.end(), true));
    }
    doc["substitute_poisoned"] = poisoned;
    doc["substitute_objects"] = total;
    doc["trigger_rows"] = result.trigger.trigger_features.rows();
    doc["trigger_epsilon_bar"] = result.trigger.epsilon_bar;
    doc["trigger_converged"] = result.trigger.converged;
    out << doc.dump(2) << '\n';
  }
  save_trigger_model(dir / "trigger.model", result.trigger);
  write_features_csv(dir / "train_features.csv", art.train_features);
  {
    // Raw feature-space membership data for 2-D projections.
    std::ofstream out(dir / "train_trigger_membership.csv");
    out << "image_id,object_index,is_trigger\n";
    const auto flags = trigger_flags(result.trigger, art.train_features);
    for (std::size_t i = 0; i < art.train_features.rows(); ++i) {
      out << art.train_features.key(i).image_id << ',' << art.train_features.key(i).object_index
          << ',' << (flags[i] ? 1 : 0) << '\n';
    }
  }
  write_detections(dir / "substitute_responses.jsonl", art.substitute.responses);
  write_detections(dir / "substitute_truth.jsonl", art.substitute_truth);
  write_features_csv(dir / "key_features.csv", art.key_features);
  write_detections(dir / "key_target.jsonl", art.key_target);
  for (const auto& s : art.suspects) {
    write_detections(dir / "suspects" / (s.name + ".jsonl"), s.detections);
  }

  // Poisoned responses against clean labels (odd-box detector difficulty).
  const auto vs_clean =
      pair_objects(art.substitute_truth, art.substitute.responses, art.substitute.poisoned, 0.0);
  write_histogram_file(dir / "hist_response_vs_clean_iou.csv",
                       inconsistency_histogram(vs_clean, HistogramValue::IoUInconsistency, 20));
  for (const auto label : {PopulationLabel::Extracted, PopulationLabel::Benign}) {
    const auto it = std::find_if(art.suspects.begin(), art.suspects.end(),
                                 [&](const Suspect& s) { return s.label == label; });
    if (it == art.suspects.end()) continue;
    const auto pairs = pair_objects(art.key_target, it->detections, art.key_flags,
                                    result.report.eta);
    if (pairs.pairs.empty()) continue;
    write_histogram_file(dir / ("hist_area_ratio_" + to_string(label) + ".csv"),
                         inconsistency_histogram(pairs, HistogramValue::AreaRatio, 20));
  }
}

std::vector<SweepCell> sweep(const ExperimentConfig& base, const SweepGrid& grid) {
  base.world.validate();
  const auto world = generate_world(base.world);
  std::map<std::pair<double, TriggerStrategy>, TriggerModel> triggers;
  std::vector<SweepCell> cells;
  for (double delta : axis_or(grid.delta, base.policy.delta_w)) {
    for (double p : axis_or(grid.p, base.p)) {
      for (double lambda : axis_or(grid.lambda, base.extracted.fidelity)) {
        for (double alpha : axis_or(grid.alpha, base.extracted.attenuation)) {
          for (double recall : axis_or(grid.recall, base.adaptive_recall)) {
            for (auto strategy : axis_or(grid.strategy, base.strategy)) {
              SweepCell cell;
              cell.delta = delta;
              cell.p = p;
              cell.lambda = lambda;
              cell.alpha = alpha;
              cell.recall = recall;
              cell.strategy = strategy;
              ExperimentConfig config = base;
              config.policy.delta_w = config.policy.delta_h = delta;
              config.p = p;
              config.extracted.fidelity = lambda;
              config.extracted.attenuation = alpha;
              config.adaptive_recall = recall;
              config.strategy = strategy;
              try {
                config.validate();
                auto key = std::make_pair(p, strategy);
                auto it = triggers.find(key);
                if (it == triggers.end()) {
                  it = triggers.emplace(key, select_trigger(world, config)).first;
                }
                const auto result = run_experiment(world, it->second, config);
                cell.auroc = result.report.auroc;
                cell.mean_score_extracted = result.report.mean_score_extracted;
                cell.mean_score_benign = result.report.mean_score_benign;
                if (!cell.auroc) cell.error = "AUROC undefined: a population has no scores";
              } catch (const Error& e) {
                cell.error = std::string(e.kind()) + ": " + e.what();
              }
              cells.push_back(std::move(cell));
            }
          }
        }
      }
    }
  }
  return cells;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells) {
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  out << "delta,p,lambda,alpha,recall,strategy,auroc,mean_S_extracted,mean_S_benign,error\n";
  for (const auto& c : cells) {
    std::string error = c.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    out << format_number(c.delta) << ',' << format_number(c.p) << ',' << format_number(c.lambda)
        << ',' << format_number(c.alpha) << ',' << format_number(c.recall) << ','
        << to_string(c.strategy) << ',' << opt(c.auroc) << ',' << opt(c.mean_score_extracted)
        << ',' << opt(c.mean_score_benign) << ',' << error << '\n';
  }
}

nlohmann::json to_json(const WorldSpec& spec) {
  nlohmann::json mixture = nlohmann::json::array();
  for (const auto& c : spec.mixture) {
    mixture.push_back(
        {{"mean", c.mean}, {"stdev", c.stdev}, {"weight", c.weight}, {"category", c.category}});
  }
  return {{"seed", spec.seed},
          {"n_train", spec.n_train},
          {"n_substitute", spec.n_substitute},
          {"n_test", spec.n_test},
          {"n_key", spec.n_key},
          {"m", spec.m},
          {"mixture", std::move(mixture)},
          {"image_w", spec.image_w},
          {"image_h", spec.image_h},
          {"objects_per_image", spec.objects_per_image},
          {"boxes",
           {{"min_w", spec.boxes.min_w},
            {"max_w", spec.boxes.max_w},
            {"min_aspect", spec.boxes.min_aspect},
            {"max_aspect", spec.boxes.max_aspect}}},
          {"distribution_shift", spec.distribution_shift},
          {"shift_target", spec.shift_target}};
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"world", to_json(c.world)},
          {"policy",
           {{"delta_w", c.policy.delta_w},
            {"delta_h", c.policy.delta_h},
            {"pattern", to_string(c.policy.pattern)},
            {"shift_x", c.policy.shift_x},
            {"shift_y", c.policy.shift_y},
            {"clamp", to_string(c.policy.clamp)}}},
          {"p", c.p},
          {"n_benign", c.n_benign},
          {"n_extracted", c.n_extracted},
          {"eta", c.eta},
          {"metric", to_string(c.metric)},
          {"adaptive_recall", c.adaptive_recall},
          {"strategy", to_string(c.strategy)},
          {"target_loc_noise", c.target_loc_noise},
          {"extracted", surrogate_to_json(c.extracted)},
          {"benign", surrogate_to_json(c.benign)},
          {"search",
           {{"step", c.search_step},
            {"tolerance", c.search_tolerance},
            {"min_pts", c.min_pts},
            {"max_iterations", c.max_iterations}}},
          {"threads", c.threads}};
}

WorldSpec world_spec_from_json(const nlohmann::json& doc) {
  try {
    WorldSpec spec;
    spec.seed = doc.value("seed", spec.seed);
    spec.n_train = doc.value("n_train", spec.n_train);
    spec.n_substitute = doc.value("n_substitute", spec.n_substitute);
    spec.n_test = doc.value("n_test", spec.n_test);
    spec.n_key = doc.value("n_key", spec.n_key);
    spec.m = doc.value("m", spec.m);
    if (const auto mix = doc.find("mixture"); mix != doc.end() && !mix->empty()) {
      for (const auto& c : *mix) {
        spec.mixture.push_back({c.at("mean").get<std::vector<double>>(), c.at("stdev").get<double>(),
                                c.at("weight").get<double>(), c.value("category", 0u)});
      }
    } else {
      spec.mixture = standard_mixture(spec.m);
    }
    spec.image_w = doc.value("image_w", spec.image_w);
    spec.image_h = doc.value("image_h", spec.image_h);
    spec.objects_per_image = doc.value("objects_per_image", spec.objects_per_image);
    if (const auto b = doc.find("boxes"); b != doc.end()) {
      spec.boxes.min_w = b->value("min_w", spec.boxes.min_w);
      spec.boxes.max_w = b->value("max_w", spec.boxes.max_w);
      spec.boxes.min_aspect = b->value("min_aspect", spec.boxes.min_aspect);
      spec.boxes.max_aspect = b->value("max_aspect", spec.boxes.max_aspect);
    }
    spec.distribution_shift = doc.value("distribution_shift", spec.distribution_shift);
    spec.shift_target = doc.value("shift_target", spec.shift_target);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("world config: ") + e.what());
  }
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& doc) {
  try {
    ExperimentConfig c;
    c.world = world_spec_from_json(doc.value("world", nlohmann::json::object()));
    if (const auto p = doc.find("policy"); p != doc.end()) {
      c.policy.delta_w = p->value("delta_w", p->value("delta", c.policy.delta_w));
      c.policy.delta_h = p->value("delta_h", c.policy.delta_w);
      c.policy.pattern = parse_pattern(p->value("pattern", std::string("rescale")));
      c.policy.shift_x = p->value("shift_x", 0.0);
      c.policy.shift_y = p->value("shift_y", 0.0);
      c.policy.clamp = parse_clamp(p->value("clamp", std::string("clamp")));
    }
    c.p = doc.value("p", c.p);
    c.n_benign = doc.value("n_benign", c.n_benign);
    c.n_extracted = doc.value("n_extracted", c.n_extracted);
    c.eta = doc.value("eta", c.eta);
    c.metric = parse_metric(doc.value("metric", to_string(c.metric)));
    c.adaptive_recall = doc.value("adaptive_recall", c.adaptive_recall);
    c.strategy = parse_strategy(doc.value("strategy", to_string(c.strategy)));
    c.target_loc_noise = doc.value("target_loc_noise", c.target_loc_noise);
    c.extracted = surrogate_from_json(doc.value("extracted", nlohmann::json::object()), c.extracted);
    c.extracted.kind = SurrogateKind::Extracted;
    c.benign = surrogate_from_json(doc.value("benign", nlohmann::json::object()), c.benign);
    c.benign.kind = SurrogateKind::Benign;
    if (const auto s = doc.find("search"); s != doc.end()) {
      c.search_step = s->value("step", c.search_step);
      c.search_tolerance = s->value("tolerance", c.search_tolerance);
      c.min_pts = s->value("min_pts", c.min_pts);
      c.max_iterations = s->value("max_iterations", c.max_iterations);
    }
    c.threads = doc.value("threads", c.threads);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

SweepGrid sweep_grid_from_json(const nlohmann::json& doc) {
  try {
    SweepGrid grid;
    grid.delta = doc.value("delta", grid.delta);
    grid.p = doc.value("p", grid.p);
    grid.lambda = doc.value("lambda", grid.lambda);
    grid.alpha = doc.value("alpha", grid.alpha);
    grid.recall = doc.value("recall", grid.recall);
    for (const auto& s : doc.value("strategy", std::vector<std::string>{})) {
      grid.strategy.push_back(parse_strategy(s));
    }
    return grid;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sweep grid: ") + e.what());
  }
}

nlohmann::json load_json_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_string(TriggerStrategy strategy) {
  return strategy == TriggerStrategy::Compact ? "compact" : "random";
}

TriggerStrategy parse_strategy(const std::string& text) {
  if (text == "compact") return TriggerStrategy::Compact;
  if (text == "random") return TriggerStrategy::Random;
  throw ConfigError("unknown trigger strategy '" + text + "' (expected compact|random)");
}

}  // namespace bbw::sim
