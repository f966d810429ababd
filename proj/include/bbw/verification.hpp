#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bbw/features.hpp"
#include "bbw/geometry.hpp"
#include "bbw/trigger.hpp"

namespace bbw {

// Per-image, per-object trigger membership of the target model's detections.
using TriggerFlags = std::vector<std::vector<bool>>;

struct PairedObject {
  std::string image_id;
  std::size_t index_f = 0;
  std::size_t index_g = 0;
  DetectedObject object_f;
  DetectedObject object_g;
  bool is_trigger = false;
  double iou = 0.0;
};

struct PairedObjectSet {
  std::vector<PairedObject> pairs;
  double eta = 0.7;
  // Images present in only one of the two detection sets.
  std::size_t skipped_images = 0;

  std::size_t trigger_count() const noexcept;
  std::size_t nontrigger_count() const noexcept;
};

enum class InconsistencyMetric { IoUBased, ScaleBased };

struct MetricSpec {
  InconsistencyMetric metric = InconsistencyMetric::ScaleBased;
  double delta_w = 1.0;
  double delta_h = 1.0;
};

inline constexpr double kDefaultEta = 0.7;

// Looks up each target detection's feature row by (image_id, object index).
TriggerFlags compute_trigger_flags(const DetectionSet& target, const FeatureMatrix& features,
                                   const TriggerModel& model);

// Greedy one-to-one matching per image: same-category candidates with
// IoU > eta, taken in descending IoU order (ties by f index, then g index).
PairedObjectSet pair_objects(const DetectionSet& target, const DetectionSet& suspect,
                             const TriggerFlags& target_flags, double eta = kDefaultEta);

double d_iou(const PairedObject& pair);
double d_scale(const PairedObject& pair, double delta_w, double delta_h);
double inconsistency(const PairedObject& pair, const MetricSpec& spec);

// Mean trigger-pair inconsistency over mean nontrigger-pair inconsistency.
double suspiciousness_score(const PairedObjectSet& pairs, const MetricSpec& spec);

// Mann-Whitney AUROC; ties count one half.
double auroc(std::span<const double> scores_extracted, std::span<const double> scores_benign);

enum class PopulationLabel { Benign, Extracted };

struct Suspect {
  std::string name;
  PopulationLabel label = PopulationLabel::Benign;
  DetectionSet detections;
};

struct SuspectResult {
  std::string name;
  PopulationLabel label = PopulationLabel::Benign;
  std::optional<double> score;
  std::size_t pairs = 0;
  std::size_t trigger_pairs = 0;
  std::size_t nontrigger_pairs = 0;
  std::size_t skipped_images = 0;
  std::string error_kind;
  std::string error_message;
};

struct VerificationReport {
  MetricSpec metric;
  double eta = kDefaultEta;
  std::vector<SuspectResult> suspects;
  std::optional<double> auroc;
  std::optional<double> mean_score_extracted;
  std::optional<double> mean_score_benign;
};

struct VerifyOptions {
  double eta = kDefaultEta;
  MetricSpec metric;
  std::size_t threads = 1;
};

// Scores every suspect; per-suspect failures are recorded on the result and
// exclude that suspect from the AUROC instead of aborting the batch.
VerificationReport verify(const DetectionSet& target, const TriggerFlags& target_flags,
                          std::span<const Suspect> suspects, const VerifyOptions& options);
VerificationReport verify(const DetectionSet& target, const FeatureMatrix& target_features,
                          const TriggerModel& model, std::span<const Suspect> suspects,
                          const VerifyOptions& options);

nlohmann::json to_json(const VerificationReport& report);

enum class HistogramValue { IoUInconsistency, ScaleInconsistency, AreaRatio };

struct HistogramRow {
  std::string group;
  double bin_lo = 0.0;
  double bin_hi = 0.0;
  std::size_t count = 0;
  double median = 0.0;
};

struct HistogramTable {
  std::vector<HistogramRow> rows;
  std::optional<double> trigger_median;
  std::optional<double> nontrigger_median;
};

// Bins both groups over a shared range [min, max]; a degenerate range yields a
// single bin. Groups without values emit no rows.
HistogramTable histogram_from_values(std::span<const double> trigger_values,
                                     std::span<const double> nontrigger_values,
                                     std::size_t bins);
HistogramTable inconsistency_histogram(const PairedObjectSet& pairs, HistogramValue value,
                                       std::size_t bins, double delta_w = 1.0,
                                       double delta_h = 1.0);

void write_histogram_csv(std::ostream& out, const HistogramTable& table);

double median(std::vector<double> values);

std::string to_string(InconsistencyMetric metric);
std::string to_string(PopulationLabel label);
InconsistencyMetric parse_metric(const std::string& text);
PopulationLabel parse_label(const std::string& text);
HistogramValue parse_histogram_value(const std::string& text);

}  // namespace bbw
