#include "sdp/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "sdp/errors.hpp"

namespace sdp {
namespace {

constexpr std::size_t kHeaderBytes = 6 * 4;

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::vector<char>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void check_records(const ImageRecords& r) {
  if (r.channels == 0 || r.height == 0 || r.width == 0) {
    throw DataError("image records need non-zero channels, height and width");
  }
  if (r.classes == 0 || r.classes > 256) throw DataError("image classes must lie in [1, 256]");
  if (r.pixels.size() != r.count() * r.record_pixels()) {
    throw DataError("pixel buffer holds " + std::to_string(r.pixels.size()) + " bytes, expected " +
                    std::to_string(r.count() * r.record_pixels()));
  }
}

ImageRecords slice_records(const ImageRecords& r, std::size_t first, std::size_t count) {
  ImageRecords out = r;
  out.labels.assign(r.labels.begin() + static_cast<std::ptrdiff_t>(first),
                    r.labels.begin() + static_cast<std::ptrdiff_t>(first + count));
  const std::size_t px = r.record_pixels();
  out.pixels.assign(r.pixels.begin() + static_cast<std::ptrdiff_t>(first * px),
                    r.pixels.begin() + static_cast<std::ptrdiff_t>((first + count) * px));
  return out;
}

Dataset point_dataset(const DatasetSpec& spec) {
  if (spec.classes < 2) throw ConfigError("dataset.classes must be >= 2");
  if (spec.train == 0 || spec.test == 0) throw ConfigError("dataset.train and dataset.test must be >= 1");
  const std::size_t dims = spec.kind == DatasetKind::kSpirals ? 2 : spec.features;
  if (dims == 0) throw ConfigError("dataset.features must be >= 1");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, spec.classes - 1);

  std::vector<std::vector<double>> centers(spec.classes, std::vector<double>(dims));
  if (spec.kind == DatasetKind::kBlobs) {
    for (auto& c : centers) {
      for (auto& v : c) v = 2.0 * normal(rng);
    }
  }
  auto draw = [&](std::size_t count, Tensor& xs, std::vector<int>& ys) {
    std::vector<double> values;
    values.reserve(count * dims);
    ys.clear();
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t k = pick(rng);
      ys.push_back(static_cast<int>(k));
      if (spec.kind == DatasetKind::kBlobs) {
        for (std::size_t d = 0; d < dims; ++d) values.push_back(centers[k][d] + spec.noise * normal(rng));
      } else {
        const double t = unit(rng);
        const double angle = 3.5 * t + 2.0 * std::numbers::pi * static_cast<double>(k) /
                                           static_cast<double>(spec.classes);
        values.push_back(t * std::cos(angle) + spec.noise * normal(rng));
        values.push_back(t * std::sin(angle) + spec.noise * normal(rng));
      }
    }
    xs = Tensor({count, dims}, std::move(values));
  };
  Dataset d;
  d.kind = spec.kind;
  d.sample_shape = {dims};
  d.classes = spec.classes;
  draw(spec.train, d.train_x, d.train_y);
  draw(spec.test, d.test_x, d.test_y);
  return d;
}

}  // namespace

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kBlobs: return "synthetic-blobs";
    case DatasetKind::kSpirals: return "synthetic-spirals";
    case DatasetKind::kImages: return "synthetic-images";
    case DatasetKind::kImageFile: return "binary-image-file";
  }
  return "?";
}

DatasetKind parse_dataset_kind(std::string_view text) {
  for (auto k : {DatasetKind::kBlobs, DatasetKind::kSpirals, DatasetKind::kImages,
                 DatasetKind::kImageFile}) {
    if (text == to_string(k)) return k;
  }
  throw ConfigError("dataset.kind '" + std::string(text) +
                    "' is not one of synthetic-blobs, synthetic-spirals, synthetic-images, "
                    "binary-image-file");
}

void write_image_file(const std::filesystem::path& path, const ImageRecords& records) {
  check_records(records);
  std::vector<char> out;
  out.reserve(kHeaderBytes + records.count() * (1 + records.record_pixels()));
  put_u32(out, kImageFileMagic);
  put_u32(out, static_cast<std::uint32_t>(records.count()));
  put_u32(out, records.channels);
  put_u32(out, records.height);
  put_u32(out, records.width);
  put_u32(out, records.classes);
  const std::size_t px = records.record_pixels();
  for (std::size_t i = 0; i < records.count(); ++i) {
    out.push_back(static_cast<char>(records.labels[i]));
    const auto* first = records.pixels.data() + i * px;
    out.insert(out.end(), first, first + px);
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot write data file '" + path.string() + "'");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw DataError("short write to '" + path.string() + "'");
}

ImageRecords read_image_file(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  const std::string where = "'" + path.string() + "'";
  if (bytes.size() < kHeaderBytes) {
    throw DataError(where + ": truncated header at byte offset " + std::to_string(bytes.size()) +
                    ", expected " + std::to_string(kHeaderBytes) + " bytes");
  }
  if (get_u32(bytes, 0) != kImageFileMagic) {
    throw DataError(where + ": bad magic at byte offset 0");
  }
  ImageRecords r;
  const std::size_t count = get_u32(bytes, 4);
  r.channels = get_u32(bytes, 8);
  r.height = get_u32(bytes, 12);
  r.width = get_u32(bytes, 16);
  r.classes = get_u32(bytes, 20);
  if (r.channels == 0 || r.height == 0 || r.width == 0 || r.classes == 0 || r.classes > 256) {
    throw DataError(where + ": invalid header dimensions at byte offset 8");
  }
  const std::size_t px = r.record_pixels();
  const std::size_t expected = kHeaderBytes + count * (1 + px);
  if (bytes.size() != expected) {
    const std::size_t record = bytes.size() < expected
                                   ? (bytes.size() - kHeaderBytes) / (1 + px)
                                   : count;
    throw DataError(where + ": length mismatch, expected " + std::to_string(expected) +
                    " bytes, found " + std::to_string(bytes.size()) + " (" +
                    (bytes.size() < expected ? "truncated in record " + std::to_string(record) +
                                                   " at byte offset " + std::to_string(bytes.size())
                                             : std::string("trailing bytes after offset ") +
                                                   std::to_string(expected)) +
                    ")");
  }
  r.labels.resize(count);
  r.pixels.resize(count * px);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = kHeaderBytes + i * (1 + px);
    r.labels[i] = static_cast<std::uint8_t>(bytes[at]);
    if (r.labels[i] >= r.classes) {
      throw DataError(where + ": label " + std::to_string(r.labels[i]) + " out of range at byte offset " +
                      std::to_string(at));
    }
    std::transform(bytes.begin() + static_cast<std::ptrdiff_t>(at + 1),
                   bytes.begin() + static_cast<std::ptrdiff_t>(at + 1 + px),
                   r.pixels.begin() + static_cast<std::ptrdiff_t>(i * px),
                   [](char c) { return static_cast<std::uint8_t>(c); });
  }
  return r;
}

ImageRecords synthetic_image_records(std::size_t count, std::size_t classes, std::size_t channels,
                                     std::size_t height, std::size_t width, double noise,
                                     std::uint64_t seed) {
  if (classes < 2 || classes > 256) throw ConfigError("dataset.classes must lie in [2, 256]");
  if (channels == 0 || height == 0 || width == 0) {
    throw ConfigError("dataset image dimensions must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> freq(0, 2);
  const std::size_t plane = height * width;

  // class prototypes: a few random plane waves per channel, unit RMS
  std::vector<double> protos(classes * channels * plane, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      double* p = protos.data() + (c * channels + ch) * plane;
      for (int wave = 0; wave < 3; ++wave) {
        const double amp = 0.5 + 0.5 * unit(rng);
        const double fy = freq(rng), fx = freq(rng);
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        for (std::size_t y = 0; y < height; ++y) {
          for (std::size_t x = 0; x < width; ++x) {
            p[y * width + x] += amp * std::sin(2.0 * std::numbers::pi *
                                                   (fy * static_cast<double>(y) / static_cast<double>(height) +
                                                    fx * static_cast<double>(x) / static_cast<double>(width)) +
                                               phase);
          }
        }
      }
      double ss = 0.0;
      for (std::size_t k = 0; k < plane; ++k) ss += p[k] * p[k];
      const double rms = std::sqrt(ss / static_cast<double>(plane));
      for (std::size_t k = 0; k < plane; ++k) p[k] /= std::max(rms, 1e-9);
    }
  }

  ImageRecords r;
  r.channels = static_cast<std::uint32_t>(channels);
  r.height = static_cast<std::uint32_t>(height);
  r.width = static_cast<std::uint32_t>(width);
  r.classes = static_cast<std::uint32_t>(classes);
  r.labels.resize(count);
  r.pixels.resize(count * channels * plane);
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  std::uniform_int_distribution<std::size_t> other(1, classes - 1);
  std::uniform_int_distribution<int> shift(-1, 1);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = pick(rng);
    const std::size_t distractor = (c + other(rng)) % classes;
    const double scale = 0.7 + 0.6 * unit(rng);
    const double mix = 0.4 * unit(rng);
    const int dy = shift(rng), dx = shift(rng);
    r.labels[i] = static_cast<std::uint8_t>(c);
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const double offset = 0.2 * normal(rng);
      const double* pc = protos.data() + (c * channels + ch) * plane;
      const double* pd = protos.data() + (distractor * channels + ch) * plane;
      for (std::size_t y = 0; y < height; ++y) {
        const std::size_t sy = (y + height + static_cast<std::size_t>(dy + 1) - 1) % height;
        for (std::size_t x = 0; x < width; ++x) {
          const std::size_t sx = (x + width + static_cast<std::size_t>(dx + 1) - 1) % width;
          const double v = scale * pc[sy * width + sx] + mix * pd[y * width + x] + offset +
                           noise * normal(rng);
          const double byte = std::clamp(std::round(128.0 + 40.0 * v), 0.0, 255.0);
          r.pixels[(i * channels + ch) * plane + y * width + x] = static_cast<std::uint8_t>(byte);
        }
      }
    }
  }
  return r;
}

void images_to_tensors(const ImageRecords& train, const ImageRecords& test, Dataset& out) {
  check_records(train);
  check_records(test);
  if (train.channels != test.channels || train.height != test.height ||
      train.width != test.width) {
    throw DataError("train and test images differ in shape");
  }
  if (train.count() == 0 || test.count() == 0) throw DataError("train and test sets must be non-empty");
  const std::size_t channels = train.channels;
  const std::size_t plane = std::size_t{train.height} * train.width;
  std::vector<double> mean(channels, 0.0), stddev(channels, 0.0);
  for (std::size_t i = 0; i < train.count(); ++i) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t k = 0; k < plane; ++k) {
        mean[ch] += train.pixels[(i * channels + ch) * plane + k] / 255.0;
      }
    }
  }
  const double n = static_cast<double>(train.count() * plane);
  for (auto& m : mean) m /= n;
  for (std::size_t i = 0; i < train.count(); ++i) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t k = 0; k < plane; ++k) {
        const double d = train.pixels[(i * channels + ch) * plane + k] / 255.0 - mean[ch];
        stddev[ch] += d * d;
      }
    }
  }
  for (auto& s : stddev) s = std::max(std::sqrt(s / n), 1e-8);

  auto convert = [&](const ImageRecords& r, Tensor& xs, std::vector<int>& ys) {
    std::vector<double> values(r.pixels.size());
    for (std::size_t i = 0; i < r.count(); ++i) {
      for (std::size_t ch = 0; ch < channels; ++ch) {
        for (std::size_t k = 0; k < plane; ++k) {
          const std::size_t at = (i * channels + ch) * plane + k;
          values[at] = (r.pixels[at] / 255.0 - mean[ch]) / stddev[ch];
        }
      }
    }
    xs = Tensor({r.count(), channels, r.height, r.width}, std::move(values));
    ys.assign(r.labels.begin(), r.labels.end());
  };
  out.sample_shape = {channels, train.height, train.width};
  out.classes = std::max(train.classes, test.classes);
  convert(train, out.train_x, out.train_y);
  convert(test, out.test_x, out.test_y);
}

Dataset load_dataset(const DatasetSpec& spec) {
  if (spec.kind == DatasetKind::kBlobs || spec.kind == DatasetKind::kSpirals) {
    return point_dataset(spec);
  }
  Dataset d;
  d.kind = spec.kind;
  if (spec.kind == DatasetKind::kImages) {
    if (spec.train == 0 || spec.test == 0) throw ConfigError("dataset.train and dataset.test must be >= 1");
    const auto all = synthetic_image_records(spec.train + spec.test, spec.classes, spec.channels,
                                             spec.height, spec.width, spec.noise, spec.seed);
    images_to_tensors(slice_records(all, 0, spec.train),
                      slice_records(all, spec.train, spec.test), d);
    return d;
  }
  if (spec.path.empty()) throw ConfigError("dataset.path is required for binary-image-file");
  const auto train = read_image_file(spec.path);
  if (!spec.test_path.empty()) {
    images_to_tensors(train, read_image_file(spec.test_path), d);
    return d;
  }
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) {
    throw ConfigError("dataset.test_fraction must lie in (0, 1)");
  }
  const auto test_count = static_cast<std::size_t>(
      std::round(spec.test_fraction * static_cast<double>(train.count())));
  if (test_count == 0 || test_count >= train.count()) {
    throw DataError("data file '" + spec.path.string() + "' holds too few records to split");
  }
  const std::size_t train_count = train.count() - test_count;
  images_to_tensors(slice_records(train, 0, train_count),
                    slice_records(train, train_count, test_count), d);
  return d;
}

}  // namespace sdp
