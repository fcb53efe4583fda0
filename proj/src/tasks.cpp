#include "uoro/tasks.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace uoro {

std::vector<Episode> make_queue_batch(const QueueSpec& spec, std::uint64_t seed, std::size_t batch) {
  if (spec.delay < 1) throw std::invalid_argument("make_queue_batch: delay must be at least 1");
  if (spec.length <= spec.delay) throw std::invalid_argument("make_queue_batch: length must exceed the delay");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<Episode> out(batch);
  for (Episode& ep : out) {
    ep.inputs.resize(spec.length);
    ep.targets.resize(spec.length);
    for (std::size_t t = 0; t < spec.length; ++t) ep.inputs[t] = {coin(rng) ? 1.0 : 0.0};
    for (std::size_t t = 0; t < spec.length; ++t) {
      if (t < spec.delay) {
        ep.targets[t].masked = true;
      } else {
        ep.targets[t].values = ep.inputs[t - spec.delay];
      }
    }
  }
  return out;
}

IdxFormatError::IdxFormatError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

namespace {

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size()) throw IdxFormatError("idx: truncated header", off);
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
         std::uint32_t(b[off + 3]);
}

std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::array<float, kDigitSide * kDigitSide>> parse_idx_images(const std::vector<unsigned char>& bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != 0x00000803) throw IdxFormatError("idx images: bad magic number", 0);
  const std::uint32_t count = read_be32(bytes, 4);
  const std::uint32_t rows = read_be32(bytes, 8);
  const std::uint32_t cols = read_be32(bytes, 12);
  if (rows != kDigitSide) throw IdxFormatError("idx images: expected 28 rows", 8);
  if (cols != kDigitSide) throw IdxFormatError("idx images: expected 28 columns", 12);
  const std::size_t need = 16 + std::size_t(count) * rows * cols;
  if (bytes.size() < need) throw IdxFormatError("idx images: truncated pixel data", bytes.size());
  std::vector<std::array<float, kDigitSide * kDigitSide>> out(count);
  for (std::size_t n = 0; n < count; ++n)
    for (std::size_t k = 0; k < kDigitSide * kDigitSide; ++k)
      out[n][k] = static_cast<float>(bytes[16 + n * kDigitSide * kDigitSide + k]) / 255.0f;
  return out;
}

std::vector<int> parse_idx_labels(const std::vector<unsigned char>& bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != 0x00000801) throw IdxFormatError("idx labels: bad magic number", 0);
  const std::uint32_t count = read_be32(bytes, 4);
  if (bytes.size() < 8 + std::size_t(count)) throw IdxFormatError("idx labels: truncated label data", bytes.size());
  std::vector<int> out(count);
  for (std::size_t n = 0; n < count; ++n) {
    out[n] = bytes[8 + n];
    if (out[n] > 9) throw IdxFormatError("idx labels: label outside 0-9", 8 + n);
  }
  return out;
}

DigitsDataset load_idx_digits(const std::filesystem::path& images, const std::filesystem::path& labels) {
  DigitsDataset d;
  d.images = parse_idx_images(read_file(images));
  d.labels = parse_idx_labels(read_file(labels));
  if (d.images.size() != d.labels.size()) throw IdxFormatError("idx: image and label counts differ", 4);
  return d;
}

DigitsDataset synthetic_stripes(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls(0, kDigitClasses - 1);
  std::normal_distribution<double> jitter(0.0, 0.15);
  std::normal_distribution<double> pixel(0.0, 0.1);
  DigitsDataset d;
  d.images.resize(count);
  d.labels.resize(count);
  for (std::size_t n = 0; n < count; ++n) {
    const int c = cls(rng);
    d.labels[n] = c;
    const double angle = std::numbers::pi * c / kDigitClasses + 0.05 * jitter(rng);
    const double freq = 0.35 + 0.03 * c;
    const double phase = 0.3 * c + jitter(rng);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t r = 0; r < kDigitSide; ++r)
      for (std::size_t k = 0; k < kDigitSide; ++k) {
        const double u = ca * (double(k) - 13.5) + sa * (double(r) - 13.5);
        const double v = 0.5 + 0.5 * std::sin(freq * u + phase) + pixel(rng);
        d.images[n][r * kDigitSide + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  }
  return d;
}

DigitsDataset load_rowwise_digits(const DigitsSource& source) {
  if (source.images.empty()) return synthetic_stripes(source.synthetic_count, source.seed);
  return load_idx_digits(source.images, source.labels);
}

Episode digits_episode(const DigitsDataset& data, std::size_t index) {
  if (index >= data.size()) throw std::out_of_range("digits_episode: index out of range");
  Episode ep;
  ep.inputs.resize(kDigitSide);
  ep.targets.resize(kDigitSide);
  for (std::size_t r = 0; r < kDigitSide; ++r) {
    ep.inputs[r].assign(data.images[index].begin() + r * kDigitSide, data.images[index].begin() + (r + 1) * kDigitSide);
    ep.targets[r].label = data.labels[index];
  }
  return ep;
}

Episode make_random_episode(std::size_t T, std::size_t input_dim, const ReadoutHead& head, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(std::max<std::size_t>(head.outputs(), 1)) - 1);
  std::bernoulli_distribution coin(0.5);
  Episode ep;
  ep.inputs.resize(T);
  ep.targets.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    ep.inputs[t].resize(input_dim);
    for (double& x : ep.inputs[t]) x = uni(rng);
    Target& tg = ep.targets[t];
    switch (head.kind) {
      case HeadKind::Softmax: tg.label = cls(rng); break;
      case HeadKind::Bernoulli:
        tg.values.resize(head.outputs());
        for (double& v : tg.values) v = coin(rng) ? 1.0 : 0.0;
        break;
      case HeadKind::Linear:
      case HeadKind::Squared:
        tg.values.resize(head.outputs());
        for (double& v : tg.values) v = uni(rng);
        break;
    }
  }
  return ep;
}

}  // namespace uoro
