#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "torml/baselines.hpp"
#include "torml/lamp.hpp"
#include "torml/serialize.hpp"

namespace torml {

/// Loads any model container, dispatching on its kind tag.
inline std::unique_ptr<MultiLabelModel> load_model(const std::string& path) {
  auto r = io::ByteReader::from_file(path);
  auto header = io_detail::read_model_header(r);
  std::unique_ptr<MultiLabelModel> model;
  switch (header.kind) {
    case 0:
      model = std::make_unique<BRModel>(load_br(r, header.schema_hash));
      break;
    case 1:
      model = std::make_unique<CCModel>(load_cc(r, header.schema_hash));
      break;
    case 2:
      model = std::make_unique<LPModel>(load_lp(r, header.schema_hash));
      break;
    case 3:
      model = std::make_unique<LampModel>(load_lamp(r, header.schema_hash));
      break;
    default:
      throw std::runtime_error(path + ": unknown model kind tag " +
                               std::to_string(header.kind));
  }
  if (!r.done())
    throw std::runtime_error(path + ": trailing bytes after model payload");
  return model;
}

/// Thrown when a model's recorded feature layout does not match the data it
/// is asked to consume.
class SchemaMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_schema_match(const MultiLabelModel& model,
                                 const FeatureSchema& data_schema,
                                 const std::string& what) {
  if (model.schema_hash() != data_schema.hash())
    throw SchemaMismatchError(
        what + ": model was trained against a different feature layout (" +
        std::to_string(data_schema.size()) +
        " columns supplied); refusing to predict");
}

}  // namespace torml
