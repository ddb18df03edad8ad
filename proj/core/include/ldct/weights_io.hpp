#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ldct/tensor.hpp"

namespace ldct {

class WeightsFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NamedTensor = std::pair<std::string, Tensor<float>>;

/// Contents of a WVGF file. Version 1 carries tensors only; version 2 adds a
/// JSON metadata block after the version field.
struct WeightsFile {
  std::uint32_t version = 1;
  std::string meta_json;
  std::vector<NamedTensor> tensors;

  const Tensor<float>& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

inline constexpr char kWeightsMagic[4] = {'W', 'V', 'G', 'F'};

std::vector<std::uint8_t> encode_weights(const WeightsFile& file);
WeightsFile decode_weights(const std::vector<std::uint8_t>& bytes);

/// Writes version 1 when `meta_json` is empty, version 2 otherwise.
void write_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                   const std::string& meta_json = {});
WeightsFile read_weights(const std::filesystem::path& path);

}  // namespace ldct
