#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "bbw/geometry.hpp"

namespace bbw {

// Line-delimited detection interchange: one JSON object per image,
//   {"image_id": ..., "width": W, "height": H,
//    "objects": [{"category": c, "a": .., "b": .., "w": .., "h": .., "confidence": ..}]}
// `confidence` is omitted when absent. Doubles are written in shortest
// round-trip form, so parse(serialize(x)) == x bit for bit.

nlohmann::json to_json(const ImageDetections& record);
nlohmann::json to_json(const DetectedObject& object);

ImageDetections record_from_json(const nlohmann::json& doc);
DetectedObject object_from_json(const nlohmann::json& doc);

std::string serialize_record(const ImageDetections& record);
ImageDetections parse_record(const std::string& line);

DetectionSet read_detections(std::istream& in, const std::string& source = "<stream>");
DetectionSet read_detections(const std::filesystem::path& path);
void write_detections(std::ostream& out, const DetectionSet& records);
void write_detections(const std::filesystem::path& path, const DetectionSet& records);

}  // namespace bbw
