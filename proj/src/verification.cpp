#include "bbw/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>
#include <unordered_map>

#include "bbw/error.hpp"
#include "bbw/parallel.hpp"

namespace bbw {

namespace {

int sgn(double v) { return (v > 0.0) - (v < 0.0); }

// Order-independent mean: summing the sorted values makes the result a
// function of the multiset alone.
double stable_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

double area_ratio(const PairedObject& pair) {
  return pair.object_g.bbox.area() / pair.object_f.bbox.area();
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  return stable_mean(values);
}

}  // namespace

std::size_t PairedObjectSet::trigger_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.is_trigger; }));
}

std::size_t PairedObjectSet::nontrigger_count() const noexcept {
  return pairs.size() - trigger_count();
}

TriggerFlags compute_trigger_flags(const DetectionSet& target, const FeatureMatrix& features,
                                   const TriggerModel& model) {
  std::map<std::pair<std::string, std::uint64_t>, std::size_t> index;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    index.emplace(std::make_pair(features.key(i).image_id, features.key(i).object_index), i);
  }
  TriggerFlags flags;
  flags.reserve(target.size());
  for (const auto& record : target) {
    auto& row = flags.emplace_back(record.objects.size(), false);
    for (std::size_t k = 0; k < record.objects.size(); ++k) {
      const auto it = index.find({record.image_id, k});
      if (it == index.end()) {
        throw AlignmentError("no feature row for object " + std::to_string(k) + " of image '" +
                             record.image_id + "'");
      }
      row[k] = trigger_indicator(model, features.row(it->second));
    }
  }
  return flags;
}

PairedObjectSet pair_objects(const DetectionSet& target, const DetectionSet& suspect,
                             const TriggerFlags& target_flags, double eta) {
  if (!(eta >= 0.0 && eta < 1.0)) throw ConfigError("eta must lie in [0, 1)");
  if (target_flags.size() != target.size()) {
    throw AlignmentError("trigger flags cover " + std::to_string(target_flags.size()) +
                         " images, target has " + std::to_string(target.size()));
  }
  std::unordered_map<std::string, const ImageDetections*> by_id;
  for (const auto& record : suspect) {
    if (!by_id.emplace(record.image_id, &record).second) {
      throw AlignmentError("duplicate image_id '" + record.image_id + "' in suspect detections");
    }
  }

  PairedObjectSet out;
  out.eta = eta;
  std::size_t matched_images = 0;
  struct Candidate {
    double iou;
    std::size_t f;
    std::size_t g;
  };
  std::vector<Candidate> candidates;
  for (std::size_t r = 0; r < target.size(); ++r) {
    const auto& rec_f = target[r];
    if (target_flags[r].size() != rec_f.objects.size()) {
      throw AlignmentError("trigger flags for image '" + rec_f.image_id +
                           "' do not align with its objects");
    }
    const auto it = by_id.find(rec_f.image_id);
    if (it == by_id.end()) {
      ++out.skipped_images;
      continue;
    }
    ++matched_images;
    const auto& rec_g = *it->second;
    candidates.clear();
    for (std::size_t i = 0; i < rec_f.objects.size(); ++i) {
      for (std::size_t j = 0; j < rec_g.objects.size(); ++j) {
        if (rec_f.objects[i].category != rec_g.objects[j].category) continue;
        const double v = iou(rec_f.objects[i].bbox, rec_g.objects[j].bbox);
        if (v > eta) candidates.push_back({v, i, j});
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
      return std::tie(y.iou, x.f, x.g) < std::tie(x.iou, y.f, y.g);
    });
    std::vector<char> used_f(rec_f.objects.size(), 0);
    std::vector<char> used_g(rec_g.objects.size(), 0);
    for (const auto& c : candidates) {
      if (used_f[c.f] || used_g[c.g]) continue;
      used_f[c.f] = used_g[c.g] = 1;
      out.pairs.push_back(PairedObject{rec_f.image_id, c.f, c.g, rec_f.objects[c.f],
                                       rec_g.objects[c.g], target_flags[r][c.f], c.iou});
    }
  }
  out.skipped_images += suspect.size() - std::min(suspect.size(), matched_images);
  return out;
}

double d_iou(const PairedObject& pair) { return 1.0 - iou(pair.object_f.bbox, pair.object_g.bbox); }

double d_scale(const PairedObject& pair, double delta_w, double delta_h) {
  const int sw = sgn(delta_w - 1.0);
  const int sh = sgn(delta_h - 1.0);
  if (sw == 0 && sh == 0) {
    throw DegenerateMetricError("scale-based inconsistency is constant when delta_w = delta_h = 1");
  }
  const auto& f = pair.object_f.bbox;
  const auto& g = pair.object_g.bbox;
  double value = 1.0;
  if (sw > 0) value *= g.w() / f.w();
  if (sw < 0) value *= f.w() / g.w();
  if (sh > 0) value *= g.h() / f.h();
  if (sh < 0) value *= f.h() / g.h();
  return value;
}

double inconsistency(const PairedObject& pair, const MetricSpec& spec) {
  return spec.metric == InconsistencyMetric::IoUBased ? d_iou(pair)
                                                      : d_scale(pair, spec.delta_w, spec.delta_h);
}

double suspiciousness_score(const PairedObjectSet& pairs, const MetricSpec& spec) {
  std::vector<double> trig;
  std::vector<double> nontrig;
  for (const auto& p : pairs.pairs) (p.is_trigger ? trig : nontrig).push_back(inconsistency(p, spec));
  if (trig.empty()) throw InsufficientPairsError("no paired trigger objects (V is empty)");
  if (nontrig.empty()) throw InsufficientPairsError("no paired nontrigger objects (V^c is empty)");
  const double denom = stable_mean(std::move(nontrig));
  if (denom == 0.0) {
    throw ZeroDenominatorError("mean nontrigger inconsistency is zero");
  }
  return stable_mean(std::move(trig)) / denom;
}

double auroc(std::span<const double> scores_extracted, std::span<const double> scores_benign) {
  if (scores_extracted.empty() || scores_benign.empty()) {
    throw EmptyInputError("AUROC needs non-empty extracted and benign populations");
  }
  double wins = 0.0;
  for (double e : scores_extracted) {
    for (double b : scores_benign) {
      if (e > b) {
        wins += 1.0;
      } else if (e == b) {
        wins += 0.5;
      }
    }
  }
  return wins / (static_cast<double>(scores_extracted.size()) *
                 static_cast<double>(scores_benign.size()));
}

VerificationReport verify(const DetectionSet& target, const TriggerFlags& target_flags,
                          std::span<const Suspect> suspects, const VerifyOptions& options) {
  if (options.metric.metric == InconsistencyMetric::ScaleBased && options.metric.delta_w == 1.0 &&
      options.metric.delta_h == 1.0) {
    throw DegenerateMetricError("scale-based verification needs delta_w or delta_h other than 1");
  }
  if (!(options.eta >= 0.0 && options.eta < 1.0)) throw ConfigError("eta must lie in [0, 1)");
  VerificationReport report;
  report.metric = options.metric;
  report.eta = options.eta;
  report.suspects.resize(suspects.size());
  parallel_for(suspects.size(), options.threads, [&](std::size_t i) {
    auto& result = report.suspects[i];
    result.name = suspects[i].name;
    result.label = suspects[i].label;
    try {
      const auto pairs = pair_objects(target, suspects[i].detections, target_flags, options.eta);
      result.pairs = pairs.pairs.size();
      result.trigger_pairs = pairs.trigger_count();
      result.nontrigger_pairs = pairs.nontrigger_count();
      result.skipped_images = pairs.skipped_images;
      result.score = suspiciousness_score(pairs, options.metric);
    } catch (const Error& e) {
      result.error_kind = std::string(e.kind());
      result.error_message = e.what();
    }
  });

  std::vector<double> extracted;
  std::vector<double> benign;
  for (const auto& r : report.suspects) {
    if (!r.score) continue;
    (r.label == PopulationLabel::Extracted ? extracted : benign).push_back(*r.score);
  }
  report.mean_score_extracted = mean_of(extracted);
  report.mean_score_benign = mean_of(benign);
  if (!extracted.empty() && !benign.empty()) report.auroc = auroc(extracted, benign);
  return report;
}

VerificationReport verify(const DetectionSet& target, const FeatureMatrix& target_features,
                          const TriggerModel& model, std::span<const Suspect> suspects,
                          const VerifyOptions& options) {
  return verify(target, compute_trigger_flags(target, target_features, model), suspects, options);
}

nlohmann::json to_json(const VerificationReport& report) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json suspects = nlohmann::json::array();
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& s : report.suspects) {
    suspects.push_back({
        {"name", s.name},
        {"label", to_string(s.label)},
        {"score", opt(s.score)},
        {"pairs", s.pairs},
        {"trigger_pairs", s.trigger_pairs},
        {"nontrigger_pairs", s.nontrigger_pairs},
        {"skipped_images", s.skipped_images},
    });
    if (!s.error_kind.empty()) {
      errors.push_back({{"name", s.name}, {"error", s.error_kind}, {"message", s.error_message}});
    }
  }
  return {
      {"metric", to_string(report.metric.metric)},
      {"delta_w", report.metric.delta_w},
      {"delta_h", report.metric.delta_h},
      {"eta", report.eta},
      {"auroc", opt(report.auroc)},
      {"mean_S_extracted", opt(report.mean_score_extracted)},
      {"mean_S_benign", opt(report.mean_score_benign)},
      {"suspects", std::move(suspects)},
      {"errors", std::move(errors)},
  };
}

double median(std::vector<double> values) {
  if (values.empty()) throw EmptyInputError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

HistogramTable histogram_from_values(std::span<const double> trigger_values,
                                     std::span<const double> nontrigger_values,
                                     std::size_t bins) {
  if (trigger_values.empty() && nontrigger_values.empty()) {
    throw EmptyInputError("histogram needs at least one value");
  }
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (auto span : {trigger_values, nontrigger_values}) {
    for (double v : span) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (lo == hi) bins = 1;
  const double width = (hi - lo) / static_cast<double>(bins);

  HistogramTable table;
  auto emit = [&](const char* group, std::span<const double> values) -> std::optional<double> {
    if (values.empty()) return std::nullopt;
    std::vector<std::size_t> counts(bins, 0);
    for (double v : values) {
      std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
      counts[std::min(b, bins - 1)] += 1;
    }
    const double med = median(std::vector<double>(values.begin(), values.end()));
    for (std::size_t b = 0; b < bins; ++b) {
      const double b_lo = lo + width * static_cast<double>(b);
      const double b_hi = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
      table.rows.push_back({group, b_lo, b_hi, counts[b], med});
    }
    return med;
  };
  table.trigger_median = emit("trigger", trigger_values);
  table.nontrigger_median = emit("nontrigger", nontrigger_values);
  return table;
}

HistogramTable inconsistency_histogram(const PairedObjectSet& pairs, HistogramValue value,
                                       std::size_t bins, double delta_w, double delta_h) {
  std::vector<double> trig;
  std::vector<double> nontrig;
  for (const auto& p : pairs.pairs) {
    double v = 0.0;
    switch (value) {
      case HistogramValue::IoUInconsistency: v = d_iou(p); break;
      case HistogramValue::ScaleInconsistency: v = d_scale(p, delta_w, delta_h); break;
      case HistogramValue::AreaRatio: v = area_ratio(p); break;
    }
    (p.is_trigger ? trig : nontrig).push_back(v);
  }
  return histogram_from_values(trig, nontrig, bins);
}

void write_histogram_csv(std::ostream& out, const HistogramTable& table) {
  const auto old = out.precision(17);
  out << "group,bin_lo,bin_hi,count,median\n";
  for (const auto& r : table.rows) {
    out << r.group << ',' << r.bin_lo << ',' << r.bin_hi << ',' << r.count << ',' << r.median
        << '\n';
  }
  out.precision(old);
}

std::string to_string(InconsistencyMetric metric) {
  return metric == InconsistencyMetric::IoUBased ? "iou" : "scale";
}

std::string to_string(PopulationLabel label) {
  return label == PopulationLabel::Benign ? "benign" : "extracted";
}

InconsistencyMetric parse_metric(const std::string& text) {
  if (text == "iou") return InconsistencyMetric::IoUBased;
  if (text == "scale") return InconsistencyMetric::ScaleBased;
  throw ConfigError("unknown metric '" + text + "' (expected scale|iou)");
}

PopulationLabel parse_label(const std::string& text) {
  if (text == "benign") return PopulationLabel::Benign;
  if (text == "extracted") return PopulationLabel::Extracted;
  throw ConfigError("unknown population label '" + text + "' (expected benign|extracted)");
}

HistogramValue parse_histogram_value(const std::string& text) {
  if (text == "iou") return HistogramValue::IoUInconsistency;
  if (text == "scale") return HistogramValue::ScaleInconsistency;
  if (text == "area") return HistogramValue::AreaRatio;
  throw ConfigError("unknown histogram value '" + text + "' (expected iou|scale|area)");
}

}  // namespace bbw
