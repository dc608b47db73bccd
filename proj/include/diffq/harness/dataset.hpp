#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffq/mlp.hpp"

namespace diffq::harness {

enum class DataFormat { csv, idx };

/// Malformed dataset file; the message names the line (csv) or byte offset (idx).
class DatasetError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Numeric columns, last column an integer class label. Features are min-max scaled per column.
Dataset load_csv(const std::string& path);

/// Big-endian IDX array of unsigned bytes (type 0x08).
struct IdxArray {
    Shape dims;
    std::vector<std::uint8_t> data;
};
IdxArray read_idx(const std::string& path);

/// IDX image file (N, ...) flattened to N rows scaled by 1/255, labels from an IDX (N) file.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Dispatches on format; `labels_path` is required for idx.
Dataset load_dataset(const std::string& path, DataFormat format, const std::string& labels_path = {});

/// Two isotropic unit-variance Gaussian blobs in 2-D whose centres are `separation` apart.
Dataset make_blobs(std::size_t n, double separation, std::uint64_t seed);

}  // namespace diffq::harness
