#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffq/hardened.hpp"

namespace diffq::codec {

/*
 * File layout. Multi-byte integers and floats are little-endian; bitstreams
 * are MSB-first and zero-padded to a byte boundary.
 *
 *   "DFQ1" | u16 version=1 | u32 n_tensors
 *   per tensor:
 *     u16 name_len | name (UTF-8) | u8 kind (0 raw, 1 quantized) | u8 ndim | ndim x u32 dims
 *     kind 0: d x f32
 *     kind 1: u32 g | u8 b_min | f32 min | f32 max | u8 maxC
 *             | group codes: ceil(d/g) x maxC bits (bits - b_min)
 *             | weights: per group, len_s x bits_s bits
 */

inline constexpr char kMagic[4] = {'D', 'F', 'Q', '1'};
inline constexpr std::uint16_t kVersion = 1;
/// magic + version + tensor count
inline constexpr std::size_t kFileHeaderBytes = 10;

/// Malformed or truncated input. offset() is the byte position where decoding failed.
class FormatError : public std::runtime_error {
  public:
    FormatError(std::size_t offset, const std::string& what);
    std::size_t offset() const noexcept { return offset_; }

  private:
    std::size_t offset_;
};

/// MSB-first bit writer.
class BitWriter {
  public:
    void write(std::uint64_t value, int nbits);
    /// Pads the current byte with zeros.
    void align();
    std::vector<std::uint8_t> take();
    std::size_t bit_count() const noexcept { return bits_; }

  private:
    std::vector<std::uint8_t> bytes_;
    std::size_t bits_ = 0;
};

/// MSB-first bit reader over a byte span.
class BitReader {
  public:
    BitReader(std::span<const std::uint8_t> bytes, std::size_t base_offset)
        : bytes_(bytes), base_offset_(base_offset)
    {
    }
    std::uint64_t read(int nbits);
    std::size_t bytes_consumed() const noexcept { return (pos_ + 7) / 8; }

  private:
    std::span<const std::uint8_t> bytes_;
    std::size_t base_offset_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> pack(const HardenedModel& model);
HardenedModel unpack(std::span<const std::uint8_t> bytes);

struct TensorInspection {
    TensorReport report;
    Shape shape;
    /// Record size in the file, framing included.
    std::size_t file_bytes = 0;
    /// file_bytes * 8 - true_bits: name, shape, kind, g, b_min and padding.
    std::uint64_t framing_bits = 0;
};

struct Inspection {
    std::vector<TensorInspection> tensors;
    std::uint64_t true_bits = 0;
    std::size_t file_bytes = 0;
    double true_size_mb = 0.0;
    double file_size_mb = 0.0;
    double mean_bits = 0.0;
};

Inspection inspect(std::span<const std::uint8_t> bytes);
std::string format_inspection(const Inspection& inspection);

}  // namespace diffq::codec
