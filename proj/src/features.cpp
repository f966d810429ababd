#include "bbw/features.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "bbw/error.hpp"

namespace bbw {

namespace {

void check_finite(std::span<const double> row, std::size_t index) {
  for (double v : row) {
    if (!std::isfinite(v)) {
      throw InvalidFeatureError("feature row " + std::to_string(index) +
                                " contains a non-finite value");
    }
  }
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

double parse_double(const std::string& text, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw FormatError(where + ": '" + text + "' is not a number");
  }
  return v;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::string& source) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw FormatError(source + ": truncated binary feature file");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

constexpr char kBinaryMagic[8] = {'B', 'B', 'W', 'F', 'E', 'A', 'T', '1'};

bool is_binary_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".bin" || ext == ".fbin";
}

}  // namespace

FeatureMatrix::FeatureMatrix(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw FeatureDimensionError("feature dimension must be at least 1");
}

FeatureMatrix FeatureMatrix::from_rows(const std::vector<std::vector<double>>& rows,
                                       std::vector<ObjectKey> keys) {
  if (!keys.empty() && keys.size() != rows.size()) {
    throw AlignmentError("feature keys (" + std::to_string(keys.size()) +
                         ") do not align with rows (" + std::to_string(rows.size()) + ")");
  }
  if (rows.empty()) return FeatureMatrix();
  FeatureMatrix out(rows.front().size());
  out.data_.reserve(rows.size() * out.dim_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.append(rows[i], keys.empty() ? ObjectKey{"", i} : std::move(keys[i]));
  }
  return out;
}

void FeatureMatrix::append(std::span<const double> row, ObjectKey key) {
  if (dim_ == 0) {
    if (row.empty()) throw FeatureDimensionError("feature dimension must be at least 1");
    dim_ = row.size();
  }
  if (row.size() != dim_) {
    throw FeatureDimensionError("feature row " + std::to_string(rows()) + " has dimension " +
                                std::to_string(row.size()) + ", expected " +
                                std::to_string(dim_));
  }
  check_finite(row, rows());
  data_.insert(data_.end(), row.begin(), row.end());
  keys_.push_back(std::move(key));
}

FeatureMatrix FeatureMatrix::select(std::span<const std::size_t> indices) const {
  FeatureMatrix out;
  out.dim_ = dim_;
  out.data_.reserve(indices.size() * dim_);
  for (std::size_t i : indices) {
    const auto r = row(i);
    out.data_.insert(out.data_.end(), r.begin(), r.end());
    out.keys_.push_back(keys_[i]);
  }
  return out;
}

double squared_distance(std::span<const double> lhs, std::span<const double> rhs) {
  if (lhs.size() != rhs.size()) {
    throw FeatureDimensionError("distance between vectors of dimension " +
                                std::to_string(lhs.size()) + " and " + std::to_string(rhs.size()));
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < lhs.size(); ++k) {
    const double d = lhs[k] - rhs[k];
    acc += d * d;
  }
  return acc;
}

double euclidean_distance(std::span<const double> lhs, std::span<const double> rhs) {
  return std::sqrt(squared_distance(lhs, rhs));
}

std::vector<double> stat_features(const Crop& crop) {
  const std::size_t npix = crop.width * crop.height;
  if (npix == 0 || crop.channels == 0) throw EmptyInputError("crop has no pixels");
  if (crop.pixels.size() != npix * crop.channels) {
    throw FeatureDimensionError("crop pixel buffer has " + std::to_string(crop.pixels.size()) +
                                " values, expected " + std::to_string(npix * crop.channels));
  }
  const std::size_t c = crop.channels;
  std::vector<double> mean(c, 0.0);
  std::vector<double> var(c, 0.0);
  std::array<double, kStatHistogramBins> hist{};
  for (std::size_t p = 0; p < npix; ++p) {
    double intensity = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double v = crop.pixels[p * c + k];
      mean[k] += v;
      intensity += v;
    }
    intensity /= static_cast<double>(c);
    const auto bin = static_cast<std::size_t>(
        std::clamp(intensity, 0.0, 1.0) * static_cast<double>(kStatHistogramBins));
    hist[std::min(bin, kStatHistogramBins - 1)] += 1.0;
  }
  for (auto& m : mean) m /= static_cast<double>(npix);
  for (std::size_t p = 0; p < npix; ++p) {
    for (std::size_t k = 0; k < c; ++k) {
      const double d = crop.pixels[p * c + k] - mean[k];
      var[k] += d * d;
    }
  }
  for (auto& v : var) v /= static_cast<double>(npix);

  std::vector<double> out;
  out.reserve(stat_feature_dim(c));
  out.insert(out.end(), mean.begin(), mean.end());
  out.insert(out.end(), var.begin(), var.end());
  out.push_back(static_cast<double>(crop.width) / static_cast<double>(crop.height));
  out.push_back(std::log(static_cast<double>(npix)));
  for (double h : hist) out.push_back(h / static_cast<double>(npix));
  return out;
}

FeatureMatrix extract_features(std::span<const Crop> crops, std::vector<ObjectKey> keys) {
  std::vector<std::vector<double>> rows;
  rows.reserve(crops.size());
  for (const auto& crop : crops) rows.push_back(stat_features(crop));
  return FeatureMatrix::from_rows(rows, std::move(keys));
}

FeatureMatrix extract_features(const std::vector<std::vector<double>>& precomputed,
                               std::vector<ObjectKey> keys) {
  return FeatureMatrix::from_rows(precomputed, std::move(keys));
}

void write_features_csv(std::ostream& out, const FeatureMatrix& features) {
  out << "image_id,object_index";
  for (std::size_t k = 0; k < features.dim(); ++k) out << ",f" << k;
  out << '\n';
  for (std::size_t i = 0; i < features.rows(); ++i) {
    out << csv_escape(features.key(i).image_id) << ',' << features.key(i).object_index;
    for (double v : features.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
}

void write_features_csv(const std::filesystem::path& path, const FeatureMatrix& features) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature file '" + path.string() + "'");
  write_features_csv(out, features);
}

FeatureMatrix read_features_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(source + ": empty feature file");
  const auto header = csv_split(line);
  if (header.size() < 3 || header[0] != "image_id" || header[1] != "object_index") {
    throw FormatError(source + ": header must start with image_id,object_index,f0");
  }
  const std::size_t dim = header.size() - 2;
  for (std::size_t k = 0; k < dim; ++k) {
    if (header[k + 2] != "f" + std::to_string(k)) {
      throw FormatError(source + ": unexpected header column '" + header[k + 2] + "'");
    }
  }
  FeatureMatrix out(dim);
  std::vector<double> row(dim);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = csv_split(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw FeatureDimensionError(where + ": row has " + std::to_string(fields.size() - 2) +
                                  " features, expected " + std::to_string(dim));
    }
    std::uint64_t index = 0;
    const auto& idx = fields[1];
    const auto res = std::from_chars(idx.data(), idx.data() + idx.size(), index);
    if (res.ec != std::errc{} || res.ptr != idx.data() + idx.size()) {
      throw FormatError(where + ": bad object_index '" + idx + "'");
    }
    for (std::size_t k = 0; k < dim; ++k) row[k] = parse_double(fields[k + 2], where);
    out.append(row, ObjectKey{fields[0], index});
  }
  return out;
}

FeatureMatrix read_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature file '" + path.string() + "'");
  return read_features_csv(in, path.string());
}

void write_features_binary(std::ostream& out, const FeatureMatrix& features) {
  out.write(kBinaryMagic, sizeof(kBinaryMagic));
  put_le<std::uint64_t>(out, features.rows());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(features.dim()));
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto& key = features.key(i);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(key.image_id.size()));
    out.write(key.image_id.data(), static_cast<std::streamsize>(key.image_id.size()));
    put_le<std::uint64_t>(out, key.object_index);
    for (double v : features.row(i)) put_le<double>(out, v);
  }
}

FeatureMatrix read_features_binary(std::istream& in, const std::string& source) {
  char magic[sizeof(kBinaryMagic)] = {};
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kBinaryMagic, sizeof(magic)) != 0) {
    throw FormatError(source + ": not a binary feature file");
  }
  const auto n = get_le<std::uint64_t>(in, source);
  const auto m = get_le<std::uint32_t>(in, source);
  FeatureMatrix out;
  if (n == 0) return m == 0 ? out : FeatureMatrix(m);
  out = FeatureMatrix(m);
  std::vector<double> row(m);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = get_le<std::uint32_t>(in, source);
    std::string id(len, '\0');
    if (len > 0 && !in.read(id.data(), len)) throw FormatError(source + ": truncated image id");
    const auto index = get_le<std::uint64_t>(in, source);
    for (auto& v : row) v = get_le<double>(in, source);
    out.append(row, ObjectKey{std::move(id), index});
  }
  return out;
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  if (!is_binary_path(path)) return read_features_csv(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file '" + path.string() + "'");
  return read_features_binary(in, path.string());
}

void write_features(const std::filesystem::path& path, const FeatureMatrix& features) {
  if (!is_binary_path(path)) return write_features_csv(path, features);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file '" + path.string() + "'");
  write_features_binary(out, features);
}

}  // namespace bbw
