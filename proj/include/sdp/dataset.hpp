#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sdp/tensor.hpp"

namespace sdp {

enum class DatasetKind { kBlobs, kSpirals, kImages, kImageFile };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view text);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kImages;
  std::filesystem::path path;       // binary-image-file
  std::filesystem::path test_path;  // optional separate test file
  double test_fraction = 0.2;       // split of `path` when no test file
  std::size_t train = 4000;
  std::size_t test = 1000;
  std::size_t classes = 10;
  std::size_t features = 2;  // blobs
  std::size_t channels = 3;  // synthetic images
  std::size_t height = 7;
  std::size_t width = 7;
  double noise = 0.5;
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetKind kind = DatasetKind::kImages;
  Shape sample_shape;
  std::size_t classes = 0;
  Tensor train_x;
  std::vector<int> train_y;
  Tensor test_x;
  std::vector<int> test_y;

  std::size_t train_size() const { return train_y.size(); }
  std::size_t test_size() const { return test_y.size(); }
};

// Raw 8-bit image records as stored in the binary format.
struct ImageRecords {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t classes = 0;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;  // count * channels * height * width

  std::size_t count() const { return labels.size(); }
  std::size_t record_pixels() const { return std::size_t{channels} * height * width; }
};

inline constexpr std::uint32_t kImageFileMagic = 0x49504453;  // "SDPI"

// Header: magic, count, channels, height, width, classes (little-endian u32),
// then per record one label byte followed by the raw pixel bytes.
void write_image_file(const std::filesystem::path& path, const ImageRecords& records);
ImageRecords read_image_file(const std::filesystem::path& path);

// Class-conditional textured images, quantized to bytes.
ImageRecords synthetic_image_records(std::size_t count, std::size_t classes, std::size_t channels,
                                     std::size_t height, std::size_t width, double noise,
                                     std::uint64_t seed);

// Pixels scaled to [0,1], then standardized per channel with train statistics.
void images_to_tensors(const ImageRecords& train, const ImageRecords& test, Dataset& out);

Dataset load_dataset(const DatasetSpec& spec);

}  // namespace sdp
