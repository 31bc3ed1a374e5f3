#pragma once

#include <string>

#include <json.hpp>

#include "otter/error.hpp"
#include "otter/numerics/tensor.hpp"

namespace otter::num {

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.vec()}};
}

inline Tensor tensor_from_json(const nlohmann::json& j, const std::string& where) {
  try {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    return Tensor(std::move(shape), std::move(data));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::CheckpointFormat, where + ": " + e.what());
  } catch (const Error& e) {
    throw Error(Errc::CheckpointFormat, where + ": " + e.what());
  }
}

}  // namespace otter::num
