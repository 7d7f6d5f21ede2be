#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sagvit/backbone.hpp"

namespace sagvit {

struct Dataset {
  std::vector<Image> images;
  std::size_t classes = 0;
};

inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordsPerBatch = 10000;
inline constexpr std::size_t kCifarBatchBytes = kCifarRecordBytes * kCifarRecordsPerBatch;

// One CIFAR-10 binary batch: label byte followed by planar R, G, B 32x32 planes.
std::vector<Image> load_cifar10_batch(const std::filesystem::path& file);
// split "train" reads data_batch_1..5.bin, "test" reads test_batch.bin.
Dataset load_cifar10(const std::filesystem::path& dir, const std::string& split = "train");

// Oriented gratings, one orientation and frequency per class, with seeded phase jitter
// and Gaussian pixel noise. Images are class-major: all of class 0, then class 1, ...
// `divisor` is the total stride*k the model needs; size must be a multiple of it.
Dataset gen_synthetic(std::size_t classes, std::size_t per_class, std::size_t size, std::uint64_t seed,
                      std::size_t channels = 3, std::size_t divisor = 1, double noise = 0.1);

// Layout: dir/<label>/<name>.sgt, each a rank-3 [C x H x W] tensor. Labels are the
// integer directory names.
Dataset load_sgt_directory(const std::filesystem::path& dir);
void save_sgt_directory(const std::filesystem::path& dir, const Dataset& dataset);

}  // namespace sagvit
