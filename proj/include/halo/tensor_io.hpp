#pragma once

#include "halo/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>

namespace halo {

/// Failure reading or writing a tensor file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor file layout: "HTNSR1", u32 rank, rank x u32 dims, row-major f64
// payload; every integer and float little-endian.
inline constexpr char kTensorMagic[6] = {'H', 'T', 'N', 'S', 'R', '1'};

void write_tensor(std::ostream& os, const Tensor<double>& t);
Tensor<double> read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor<double>& t);
Tensor<double> load_tensor(const std::filesystem::path& path);

}  // namespace halo
