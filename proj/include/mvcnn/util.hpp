#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace mvcnn {

/// Deterministic random source. All randomness in the library flows through
/// this wrapper so that results are reproducible from a seed alone: the
/// mt19937_64 engine is fully specified by the standard and the bounded /
/// floating-point draws below avoid the implementation-defined std
/// distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(mix(seed)) {}
  // Independent stream for (seed, stream) pairs, e.g. (seed, epoch).
  Rng(uint64_t seed, uint64_t stream) : gen_(mix(mix(seed) + stream)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform integer in [0, n), n >= 1. Rejection sampling keeps it unbiased.
  uint64_t next_below(uint64_t n);

  // Uniform float in [0, 1) with 24 bits of precision.
  float next_float01() {
    return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
  }

  float next_uniform(float lo, float hi) {
    return lo + (hi - lo) * next_float01();
  }

  // Fisher-Yates; deterministic for a given engine state.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static uint64_t mix(uint64_t x) {
    // splitmix64 finalizer; decorrelates small consecutive seeds
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }
  std::mt19937_64 gen_;
};

// Worker count used by parallel_for. 0 restores the hardware default.
void set_thread_count(int n);
int thread_count();

/// Runs fn over contiguous chunks of [0, n). Intended only for work whose
/// per-index writes are disjoint; such work produces identical results at
/// any thread setting. Reductions must not be done through this helper --
/// accumulate serially in a fixed order instead.
void parallel_for(int64_t n, const std::function<void(int64_t begin, int64_t end)>& fn);

// -- little-endian byte I/O over in-memory buffers --

struct ByteWriter {
  std::vector<uint8_t> buf;
  void u8(uint8_t v) { buf.push_back(v); }
  void u16(uint16_t v);
  void u32(uint32_t v);
  void f32(float v);
  void f32_array(const float* p, size_t count);
  void bytes(const void* p, size_t count);
};

struct ByteReader {
  const uint8_t* p = nullptr;
  size_t size = 0;
  size_t pos = 0;
  ByteReader(const uint8_t* data, size_t n) : p(data), size(n) {}
  bool exhausted() const { return pos >= size; }
  // All reads throw std::out_of_range("offset N") past the end.
  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  float f32();
  void f32_array(float* dst, size_t count);
  void bytes(void* dst, size_t count);
};

uint32_t crc32_bytes(const uint8_t* data, size_t n);

// Float formatted with 6 decimals, the format used by every CSV artifact.
std::string fmt_f6(double v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
std::vector<uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::vector<uint8_t>& bytes);

// 64-bit FNV-1a, used for cache directory naming.
uint64_t fnv1a64(const std::string& s);

}  // namespace mvcnn
