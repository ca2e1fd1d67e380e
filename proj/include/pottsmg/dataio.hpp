#pragma once

// Netpbm image I/O, the synthetic two-phase shape dataset, and the binary
// checkpoint format (byte layout in docs/checkpoint_format.md).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pottsmg/mgnet.hpp"
#include "pottsmg/params.hpp"

namespace pmg {

struct Sample {
  std::string id;
  Image image;  // 3 channels in [0,1]
  Field mask;   // values in {0,1}
};

/// Binary PPM (P6) or PGM (P5, replicated to 3 channels), maxval 255,
/// scaled to [0,1]. Throws ParseError with the byte offset of the problem.
Image read_image(const std::filesystem::path& path);
/// Writes a P6 file; values are clamped to [0,1] and rounded to 8 bits.
void write_image(const Image& img, const std::filesystem::path& path);

/// Binary PGM (P5); pixels >= 128 map to 1, others to 0.
Field read_mask(const std::filesystem::path& path);
/// Writes a P5 file of round(255 * clamp(v, 0, 1)).
void write_gray(const Field& f, const std::filesystem::path& path);

enum class ShapeKind { Disk, Rectangle, Mixed };
ShapeKind parse_shape_kind(const std::string& s);

/// `count` samples of size x size with 1-3 shapes each. Deterministic in seed;
/// sample i draws from its own derived stream.
std::vector<Sample> gen_dataset(int count, int size, ShapeKind shapes, std::uint64_t seed);

/// Layout: dir/images/<id>.ppm and dir/masks/<id>_mask.pgm.
void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);
/// Loads every images/<id>.ppm with a matching mask, sorted by id.
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

enum class Precision { F32 = 32, F64 = 64 };

constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ControlParams& theta, const std::filesystem::path& path,
                     Precision precision = Precision::F64);
/// Throws CheckpointError on a bad magic, unknown version or a payload whose
/// length differs from the one implied by the header.
ControlParams load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const ControlParams& theta, Precision precision);
ControlParams decode_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace pmg
