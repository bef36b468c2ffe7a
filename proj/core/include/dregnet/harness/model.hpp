#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "dregnet/harness/config.hpp"
#include "dregnet/nn/network.hpp"

namespace dregnet::harness {

/// Builds and initialises the base (single-path) network.
///
/// mlp:     [flatten] (dense(width), relu) x depth, dense(classes)
/// convnet: conv3x3(width), relu, then depth-1 more stages that are either
///          conv3x3 + relu or a residual block + relu, then avgpool(2) when
///          the feature map is at least 4x4, flatten, dense(classes).
nn::Network build_model(const ModelSpec& spec, const Shape& sample_shape, int classes, std::uint64_t seed);

inline constexpr char kModelMagic[8] = {'D', 'R', 'E', 'G', 'N', 'E', 'T', '\0'};
inline constexpr std::uint32_t kModelVersion = 1;

/// Binary model file: magic, version, input shape, the layer list (kind,
/// hyperparameters, nested children, parameter names and shapes), then every
/// parameter as row-major little-endian float64 in the same order.
void write_model(const nn::Network& net, std::ostream& out);
nn::Network read_model(std::istream& in);

void save_model(const nn::Network& net, const std::filesystem::path& path);
nn::Network load_model(const std::filesystem::path& path);

}  // namespace dregnet::harness
