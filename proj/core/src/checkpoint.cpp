#include "stgat/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "stgat/errors.hpp"

namespace stgat::ad {

using json = nlohmann::ordered_json;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json doc;
  doc["format"] = "stgat-checkpoint-v1";
  doc["meta"] = ckpt.meta;
  json tensors = json::array();
  for (const auto& e : ckpt.entries) {
    json t;
    t["name"] = e.name;
    t["shape"] = e.tensor.shape();
    t["learnable"] = e.learnable;
    t["data"] = e.tensor.value();
    tensors.push_back(std::move(t));
  }
  doc["tensors"] = std::move(tensors);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << doc.dump(1) << '\n';
  if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing checkpoint: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw DataError("unparseable checkpoint " + path + ": " + e.what());
  }
  if (doc.value("format", "") != "stgat-checkpoint-v1") {
    throw DataError("unrecognized checkpoint format in " + path);
  }
  Checkpoint out;
  if (doc.contains("meta")) {
    out.meta = doc["meta"].get<std::map<std::string, std::string>>();
  }
  for (const auto& t : doc.at("tensors")) {
    CheckpointEntry e;
    e.name = t.at("name").get<std::string>();
    e.learnable = t.value("learnable", true);
    auto shape = t.at("shape").get<Shape>();
    auto data = t.at("data").get<std::vector<double>>();
    e.tensor = Tensor::leaf(std::move(shape), std::move(data), e.learnable);
    out.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace stgat::ad
