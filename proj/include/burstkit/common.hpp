#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace burstkit {

// Bad user input (malformed files, invalid flags, contract violations at the
// boundary). The CLI maps this to exit code 1; anything else lands on 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Randomness
//
// Every random draw in the project goes through these helpers so that a fixed
// seed gives bitwise-identical results across runs. std::shuffle and the
// std::*_distribution classes are implementation-defined and must not be used.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

inline std::uint64_t rand_u64(Rng& rng) { return rng(); }

// Uniform index in [0, n). Modulo bias is ~2^-60 for desk-scale n.
inline std::size_t rand_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

// Uniform double in [0, 1) with 53 random bits.
inline double rand_uniform(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double rand_uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * rand_uniform(rng);
}

// Standard normal via Box-Muller (no cached second value).
double rand_normal(Rng& rng);

// Normal(mean, sigma) truncated to [lo, hi] by rejection.
double rand_trunc_normal(Rng& rng, double mean, double sigma, double lo, double hi);

// Fisher-Yates, descending.
template <typename T>
void shuffle_vec(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = rand_index(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

// ---------------------------------------------------------------------------
// Threads
// ---------------------------------------------------------------------------

// Worker cap: BURSTKIT_THREADS env var, else hardware_concurrency clamped to 8.
int thread_count();

// Runs fn(begin, end) over disjoint chunks of [0, n). Each chunk is processed
// by exactly one worker, so results are deterministic for any thread count as
// long as workers write disjoint outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

// ---------------------------------------------------------------------------
// Little-endian binary IO
// ---------------------------------------------------------------------------

void write_u8(std::ostream& os, std::uint8_t v);
void write_u16le(std::ostream& os, std::uint16_t v);
void write_u32le(std::ostream& os, std::uint32_t v);
void write_f32le(std::ostream& os, float v);
void write_f32le_vec(std::ostream& os, const std::vector<float>& v);

// Readers throw ValidationError with `what` in the message on truncation.
std::uint8_t read_u8(std::istream& is, const std::string& what);
std::uint16_t read_u16le(std::istream& is, const std::string& what);
std::uint32_t read_u32le(std::istream& is, const std::string& what);
float read_f32le(std::istream& is, const std::string& what);
void read_f32le_vec(std::istream& is, std::size_t n, std::vector<float>& out, const std::string& what);

// ---------------------------------------------------------------------------
// Strings / files
// ---------------------------------------------------------------------------

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);
std::string lower(const std::string& s);

// Shortest round-trippable decimal for doubles ("%.17g" is overkill; "%.12g"
// keeps CSVs readable while staying deterministic).
std::string fmt_g(double v);
std::string fmt_g(double v, int digits);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Line-oriented "key = value" text: '#' comments and blank lines are skipped,
// keys and values are trimmed. Duplicate keys are rejected.
std::map<std::string, std::string> parse_kv_text(const std::string& text);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace burstkit
