#include "netsurgeon/tensor.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"

namespace netsurgeon {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::NotFound: return "not_found";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::Io: return "io_error";
    case ErrorCode::Format: return "format_error";
    case ErrorCode::Degenerate: return "degenerate";
    case ErrorCode::VersionMismatch: return "version_mismatch";
    case ErrorCode::Unsupported: return "unsupported";
    case ErrorCode::SilentNeuron: return "silent_neuron";
    case ErrorCode::Stale: return "stale";
  }
  return "unknown";
}

namespace {

void check_shape(const Shape3& s) {
  if (s.channels < 1 || s.height < 1 || s.width < 1) {
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("tensor dimensions must be >= 1, got {}x{}x{}",
                            s.channels, s.height, s.width));
  }
}

}  // namespace

Tensor::Tensor(Shape3 shape, float fill) : shape_(shape) {
  check_shape(shape_);
  data_.assign(shape_.size(), fill);
}

Tensor::Tensor(Shape3 shape, std::vector<float> data)
    : shape_(shape), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                fmt::format("tensor data length {} != {}x{}x{}", data_.size(),
                            shape_.channels, shape_.height, shape_.width));
  }
}

std::span<float> Tensor::plane(int c) {
  const std::size_t n = static_cast<std::size_t>(shape_.height) * shape_.width;
  return std::span<float>(data_).subspan(c * n, n);
}

std::span<const float> Tensor::plane(int c) const {
  const std::size_t n = static_cast<std::size_t>(shape_.height) * shape_.width;
  return std::span<const float>(data_).subspan(c * n, n);
}

Tensor Tensor::channel(int c) const {
  if (c < 0 || c >= shape_.channels) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("channel {} out of range [0, {})", c, shape_.channels));
  }
  auto p = plane(c);
  return Tensor({1, shape_.height, shape_.width}, std::vector<float>(p.begin(), p.end()));
}

}  // namespace netsurgeon
