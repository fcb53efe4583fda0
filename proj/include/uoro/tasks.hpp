#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "uoro/rnn.hpp"

namespace uoro {

struct QueueSpec {
  std::size_t delay = 4;
  std::size_t length = 20;
};

// Fair-coin bit stream; target_t = input_{t-delay}, earlier steps masked.
std::vector<Episode> make_queue_batch(const QueueSpec& spec, std::uint64_t seed, std::size_t batch);

class IdxFormatError : public std::runtime_error {
 public:
  IdxFormatError(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

inline constexpr std::size_t kDigitSide = 28;
inline constexpr std::size_t kDigitClasses = 10;

struct DigitsDataset {
  std::vector<std::array<float, kDigitSide * kDigitSide>> images;  // scaled to [0, 1]
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

// Big-endian IDX readers (magic 0x00000803 for images, 0x00000801 for labels).
std::vector<std::array<float, kDigitSide * kDigitSide>> parse_idx_images(const std::vector<unsigned char>& bytes);
std::vector<int> parse_idx_labels(const std::vector<unsigned char>& bytes);
DigitsDataset load_idx_digits(const std::filesystem::path& images, const std::filesystem::path& labels);

// Class-dependent oriented stripes with jitter and pixel noise.
DigitsDataset synthetic_stripes(std::size_t count, std::uint64_t seed);

struct DigitsSource {
  std::filesystem::path images;  // empty selects the synthetic fallback
  std::filesystem::path labels;
  std::size_t synthetic_count = 2000;
  std::uint64_t seed = 1;
};

DigitsDataset load_rowwise_digits(const DigitsSource& source);

// One row per step, classification loss at every step.
Episode digits_episode(const DigitsDataset& data, std::size_t index);

// Random inputs in [-1, 1] with targets matching `head`.
Episode make_random_episode(std::size_t T, std::size_t input_dim, const ReadoutHead& head, std::uint64_t seed);

}  // namespace uoro
