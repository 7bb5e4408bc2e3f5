#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "edgedoc/tensor.hpp"

namespace edgedoc {

// Row-major HWC 8-bit image.
struct ImageU8 {
  std::size_t h = 0, w = 0, channels = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * w + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * w + x) * channels + c];
  }
};

// Binary PPM (P6) / PGM (P5), maxval 255.
ImageU8 read_pnm(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& img);
void write_pgm(const std::string& path, const ImageU8& img);

struct Sample {
  std::string id;
  ImageU8 image;       // H x W x 3
  ImageU8 mask;        // H x W x 1, values in {0,255}
  int label = 0;       // 0 = bonafide, 1 = attack
  Tensor residual;     // optional precomputed H x W map
};

// Seam standing in for the trained NoisePrint extractor: either the
// deterministic high-pass filter or per-id BTF maps read from a directory.
struct ResidualExtractor {
  enum class Kind { HighPassStandIn, FromFile };
  Kind kind = Kind::HighPassStandIn;
  std::string dir;  // FromFile: directory of <id>.btf maps

  // Returns an H x W map matching the sample's image size.
  Tensor extract(const Sample& sample) const;
};

struct ManifestEntry {
  std::string id;
  std::string image_path;  // relative to root
  std::string mask_path;   // "-" for bonafide
  int label = 0;
};

struct DatasetManifest {
  std::string root;
  std::string split;  // {train, val, test} tag, taken from the file stem
  std::vector<ManifestEntry> entries;
};

// out[i,j] = G[i,j] / 255.
std::vector<Scalar> green_channel(const ImageU8& image);

// Grayscale -> Laplacian high-pass -> per-image standardization.
Tensor highpass_residual(const ImageU8& image);

// Half-pixel-centered bilinear resample of a single plane; identity when
// sizes are equal.
std::vector<Scalar> resize_bilinear(const std::vector<Scalar>& src,
                                    std::size_t h, std::size_t w,
                                    std::size_t oh, std::size_t ow);
std::vector<Scalar> resize_nearest(const std::vector<Scalar>& src,
                                   std::size_t h, std::size_t w,
                                   std::size_t oh, std::size_t ow);

struct AssembledSample {
  Tensor input;  // [2, H, W]: green channel, residual
  Tensor mask;   // [1, H, W], values in {0,1}
  Scalar label = 0;
};

AssembledSample assemble_input(const Sample& sample,
                               const ResidualExtractor& extractor,
                               std::size_t out_h = 256, std::size_t out_w = 256);

// Deterministic synthetic fantasy-card corpus. Writes images/ masks/ and
// manifest.tsv under out_dir and returns the loaded manifest. Attack ids
// carry the attack type (splice / renoise / blur) as a suffix.
DatasetManifest synth_generate(std::size_t n_bonafide, std::size_t n_attack,
                               std::uint64_t seed, const std::string& out_dir);

DatasetManifest load_manifest(const std::string& path);
Sample load_sample(const DatasetManifest& manifest, const std::string& id);
Sample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry);

}  // namespace edgedoc
