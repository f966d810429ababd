#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace bbw {

// Identifies the detection a feature row was extracted from.
struct ObjectKey {
  std::string image_id;
  std::uint64_t object_index = 0;

  friend bool operator==(const ObjectKey&, const ObjectKey&) = default;
};

// Dense n x m matrix of finite feature vectors with one key per row.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(std::size_t dim);

  // Validates that every row has the same dimension (FeatureDimensionError)
  // and only finite entries (InvalidFeatureError). Missing keys default to
  // ("", row index).
  static FeatureMatrix from_rows(const std::vector<std::vector<double>>& rows,
                                 std::vector<ObjectKey> keys = {});

  void append(std::span<const double> row, ObjectKey key);

  std::size_t rows() const noexcept { return keys_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return keys_.empty(); }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  const ObjectKey& key(std::size_t i) const { return keys_[i]; }
  const std::vector<ObjectKey>& keys() const noexcept { return keys_; }
  const std::vector<double>& data() const noexcept { return data_; }

  FeatureMatrix select(std::span<const std::size_t> indices) const;

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
  std::vector<ObjectKey> keys_;
};

double squared_distance(std::span<const double> lhs, std::span<const double> rhs);
double euclidean_distance(std::span<const double> lhs, std::span<const double> rhs);

// A cropped object as a raw pixel block: row-major, channel-interleaved,
// intensities nominally in [0, 1].
struct Crop {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;
};

inline constexpr std::size_t kStatHistogramBins = 8;

// Dimension of the stat extractor output for a given channel count:
// channel means, channel variances, aspect ratio, log-area, histogram bins.
constexpr std::size_t stat_feature_dim(std::size_t channels) {
  return 2 * channels + 2 + kStatHistogramBins;
}

std::vector<double> stat_features(const Crop& crop);

FeatureMatrix extract_features(std::span<const Crop> crops, std::vector<ObjectKey> keys = {});
FeatureMatrix extract_features(const std::vector<std::vector<double>>& precomputed,
                               std::vector<ObjectKey> keys = {});

// CSV: header "image_id,object_index,f0,...,f{m-1}", one row per object.
void write_features_csv(std::ostream& out, const FeatureMatrix& features);
void write_features_csv(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_features_csv(std::istream& in, const std::string& source = "<stream>");
FeatureMatrix read_features_csv(const std::filesystem::path& path);

// Binary: "BBWFEAT1", u64 n, u32 m, then per row u32 id length, id bytes,
// u64 object index, m little-endian IEEE-754 doubles.
void write_features_binary(std::ostream& out, const FeatureMatrix& features);
FeatureMatrix read_features_binary(std::istream& in, const std::string& source = "<stream>");

// Dispatches on extension: ".bin" / ".fbin" are binary, anything else CSV.
FeatureMatrix read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const FeatureMatrix& features);

}  // namespace bbw
