#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace wsteg {

inline constexpr const char* kToolkitVersion = "0.3.0";

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Writes through `<path>.tmp.<pid>` and renames into place.
void atomic_write(const std::filesystem::path& path,
                  const std::function<void(std::ostream&)>& writer);
void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomic_write(const std::filesystem::path& path, const std::string& text);

// WSTEG_THREADS, default 1.
unsigned thread_count();

// Runs fn(begin, end) over disjoint chunks of [0, count). Chunk boundaries
// depend only on count and the thread count, and callers write to disjoint
// output slots, so results never depend on scheduling.
void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& fn,
                  unsigned threads = thread_count());

// Deterministic bit source: consecutive mt19937_64 words consumed MSB-first.
class SeededBits {
 public:
  explicit SeededBits(std::uint64_t seed) : rng_(seed) {}

  // Next k bits (k <= 64), first drawn bit in the most significant position.
  std::uint64_t take(unsigned k);

 private:
  std::mt19937_64 rng_;
  std::uint64_t word_ = 0;
  unsigned left_ = 0;
};

}  // namespace wsteg
