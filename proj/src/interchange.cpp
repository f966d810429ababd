#include "bbw/interchange.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "bbw/error.hpp"

namespace bbw {

namespace {

double require_number(const nlohmann::json& doc, const char* key, const std::string& where) {
  const auto it = doc.find(key);
  if (it == doc.end() || !it->is_number()) {
    throw FormatError(where + ": missing or non-numeric field '" + key + "'");
  }
  return it->get<double>();
}

}  // namespace

nlohmann::json to_json(const DetectedObject& object) {
  nlohmann::json doc = {
      {"category", object.category},
      {"a", object.bbox.a()},
      {"b", object.bbox.b()},
      {"w", object.bbox.w()},
      {"h", object.bbox.h()},
  };
  if (object.confidence) doc["confidence"] = *object.confidence;
  return doc;
}

nlohmann::json to_json(const ImageDetections& record) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& object : record.objects) objects.push_back(to_json(object));
  return {
      {"image_id", record.image_id},
      {"width", record.width},
      {"height", record.height},
      {"objects", std::move(objects)},
  };
}

DetectedObject object_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw FormatError("object entry is not a JSON object");
  const auto cat = doc.find("category");
  if (cat == doc.end() || !cat->is_number_integer() || cat->get<std::int64_t>() < 0) {
    throw FormatError("object: 'category' must be a non-negative integer");
  }
  DetectedObject object;
  object.category = cat->get<std::uint32_t>();
  try {
    object.bbox = BoundingBox(require_number(doc, "a", "object"), require_number(doc, "b", "object"),
                              require_number(doc, "w", "object"), require_number(doc, "h", "object"));
  } catch (const InvalidBoxError& e) {
    throw FormatError(std::string("object: ") + e.what());
  }
  if (const auto conf = doc.find("confidence"); conf != doc.end() && !conf->is_null()) {
    if (!conf->is_number()) throw FormatError("object: 'confidence' must be numeric");
    object.confidence = conf->get<double>();
  }
  return object;
}

ImageDetections record_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw FormatError("detection record is not a JSON object");
  ImageDetections record;
  const auto id = doc.find("image_id");
  if (id == doc.end() || !id->is_string()) {
    throw FormatError("record: missing string field 'image_id'");
  }
  record.image_id = id->get<std::string>();
  const std::string where = "record '" + record.image_id + "'";
  record.width = require_number(doc, "width", where);
  record.height = require_number(doc, "height", where);
  if (const auto objs = doc.find("objects"); objs != doc.end()) {
    if (!objs->is_array()) throw FormatError(where + ": 'objects' must be an array");
    record.objects.reserve(objs->size());
    for (const auto& entry : *objs) record.objects.push_back(object_from_json(entry));
  }
  try {
    record.validate();
  } catch (const InvalidBoxError& e) {
    throw FormatError(e.what());
  }
  return record;
}

std::string serialize_record(const ImageDetections& record) { return to_json(record).dump(); }

ImageDetections parse_record(const std::string& line) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed detection record: ") + e.what());
  }
  return record_from_json(doc);
}

DetectionSet read_detections(std::istream& in, const std::string& source) {
  DetectionSet records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(parse_record(line));
    } catch (const FormatError& e) {
      throw FormatError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

DetectionSet read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detections file '" + path.string() + "'");
  return read_detections(in, path.string());
}

void write_detections(std::ostream& out, const DetectionSet& records) {
  for (const auto& record : records) out << serialize_record(record) << '\n';
}

void write_detections(const std::filesystem::path& path, const DetectionSet& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write detections file '" + path.string() + "'");
  write_detections(out, records);
}

}  // namespace bbw
