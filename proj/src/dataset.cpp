#include "sagvit/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "sagvit/errors.hpp"
#include "sagvit/sgt.hpp"

namespace sagvit {

std::vector<Image> load_cifar10_batch(const std::filesystem::path& file) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(file, ec);
  if (ec) throw FormatError("cannot stat CIFAR-10 batch " + file.string());
  if (size != kCifarBatchBytes) {
    throw FormatError(file.string() + ": expected " + std::to_string(kCifarBatchBytes) + " bytes, found " +
                      std::to_string(size));
  }
  const std::vector<std::uint8_t> bytes = read_file_bytes(file);
  std::vector<Image> images;
  images.reserve(kCifarRecordsPerBatch);
  for (std::size_t r = 0; r < kCifarRecordsPerBatch; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError(file.string() + ": record " + std::to_string(r) + " has label " + std::to_string(rec[0]));
    }
    Tensor data = Tensor::zeros({3, 32, 32});
    for (std::size_t i = 0; i < 3 * 32 * 32; ++i) data.values()[static_cast<Eigen::Index>(i)] = rec[1 + i] / 255.0;
    images.push_back({data, static_cast<int>(rec[0])});
  }
  return images;
}

Dataset load_cifar10(const std::filesystem::path& dir, const std::string& split) {
  std::vector<std::string> files;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else if (split == "test") {
    files.push_back("test_batch.bin");
  } else {
    throw ConfigError("data.split: expected train or test, got '" + split + "'");
  }
  Dataset ds;
  ds.classes = 10;
  for (const auto& f : files) {
    auto batch = load_cifar10_batch(dir / f);
    ds.images.insert(ds.images.end(), std::make_move_iterator(batch.begin()), std::make_move_iterator(batch.end()));
  }
  return ds;
}

Dataset gen_synthetic(std::size_t classes, std::size_t per_class, std::size_t size, std::uint64_t seed,
                      std::size_t channels, std::size_t divisor, double noise) {
  if (classes < 2) throw ConfigError("data.classes: need at least 2 classes");
  if (size == 0 || channels == 0) throw ConfigError("data.size and data.channels must be positive");
  if (divisor == 0 || size % divisor != 0) {
    throw ConfigError("data.size: " + std::to_string(size) + " is not divisible by backbone stride * k = " +
                      std::to_string(divisor));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  std::normal_distribution<double> pixel_noise(0.0, noise > 0.0 ? noise : 1.0);

  Dataset ds;
  ds.classes = classes;
  ds.images.reserve(classes * per_class);
  const double n = static_cast<double>(size);
  for (std::size_t c = 0; c < classes; ++c) {
    const double theta = std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    const double freq = 2.0 + static_cast<double>(c % 3);  // cycles per image
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t i = 0; i < per_class; ++i) {
      const double phase = jitter(rng);
      Tensor data = Tensor::zeros({channels, size, size});
      auto& v = data.values();
      for (std::size_t ch = 0; ch < channels; ++ch) {
        // Class-dependent channel gain adds a colour cue on top of the grating.
        const double gain = 0.6 + 0.4 * static_cast<double>((c + ch) % channels) / std::max<double>(1.0, channels - 1.0);
        for (std::size_t y = 0; y < size; ++y) {
          for (std::size_t x = 0; x < size; ++x) {
            const double t = (static_cast<double>(x) * ct + static_cast<double>(y) * st) / n;
            double p = 0.5 + 0.35 * gain * std::sin(2.0 * std::numbers::pi * freq * t + phase);
            if (noise > 0.0) p += pixel_noise(rng);
            v[static_cast<Eigen::Index>((ch * size + y) * size + x)] = std::clamp(p, 0.0, 1.0);
          }
        }
      }
      ds.images.push_back({data, static_cast<int>(c)});
    }
  }
  return ds;
}

Dataset load_sgt_directory(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
  std::vector<std::pair<int, fs::path>> labelled;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    int label = -1;
    const auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), label);
    if (ec != std::errc() || ptr != name.data() + name.size() || label < 0) {
      throw FormatError("class directory name is not a non-negative integer: " + entry.path().string());
    }
    for (const auto& file : fs::directory_iterator(entry.path())) {
      if (file.path().extension() == ".sgt") labelled.emplace_back(label, file.path());
    }
  }
  // Directory iteration order is unspecified; sort for determinism.
  std::sort(labelled.begin(), labelled.end());
  Dataset ds;
  int max_label = -1;
  for (const auto& [label, path] : labelled) {
    Tensor t = read_sgt(path);
    if (t.rank() != 3) throw FormatError(path.string() + ": expected a rank-3 [C x H x W] tensor");
    ds.images.push_back({t, label});
    max_label = std::max(max_label, label);
  }
  ds.classes = static_cast<std::size_t>(max_label + 1);
  return ds;
}

void save_sgt_directory(const std::filesystem::path& dir, const Dataset& dataset) {
  namespace fs = std::filesystem;
  std::vector<std::size_t> counters;
  for (const Image& img : dataset.images) {
    if (!img.label) throw ContractError("save_sgt_directory: image without label");
    const auto label = static_cast<std::size_t>(*img.label);
    if (counters.size() <= label) counters.resize(label + 1, 0);
    const fs::path sub = dir / std::to_string(label);
    fs::create_directories(sub);
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.sgt", counters[label]++);
    write_sgt(sub / name, img.data);
  }
}

}  // namespace sagvit
