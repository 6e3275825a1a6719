#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace topical_gibbs {

// Stream-id namespaces. The top byte of a stream id selects the consumer so
// that e.g. topic-row streams never collide with logistic-block streams.
enum class StreamDomain : std::uint8_t {
  kGeneric = 0,
  kTopicRow = 1,      // id = iteration * N + n
  kTopicW = 2,        // id = iteration
  kLogistic = 3,      // id = iteration * K + k
  kShrinkage = 4,     // id = iteration
  kInit = 5,
  kSimulate = 6,
  kFolds = 7,
  kIdentify = 8,
  kTopicZ = 9,        // id = iteration * N + n
  kPredict = 10,
};

inline std::uint64_t stream_id(StreamDomain domain, std::uint64_t index) {
  return (static_cast<std::uint64_t>(domain) << 56) | (index & ((std::uint64_t{1} << 56) - 1));
}

// A reproducible random stream keyed by (seed, stream id). Two streams with
// equal keys produce identical sequences; distinct ids are seeded through
// std::seed_seq so their sequences are decorrelated.
class RngStream {
 public:
  using engine_type = std::mt19937_64;

  RngStream(std::uint64_t seed, std::uint64_t id) : seed_(seed), id_(id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32),
                      0x7467u};
    engine_.seed(seq);
  }

  RngStream(std::uint64_t seed, StreamDomain domain, std::uint64_t index)
      : RngStream(seed, stream_id(domain, index)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t id() const noexcept { return id_; }
  engine_type& engine() noexcept { return engine_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  double exponential() { return -std::log(uniform()); }

  // Standard normal, Marsaglia polar method with one cached deviate.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    cached_ = v * f;
    has_cached_ = true;
    return u * f;
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
    return dist(engine_);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << seed_ << ' ' << id_ << ' ' << has_cached_ << ' ';
    os.precision(17);
    os << std::hexfloat << cached_ << std::defaultfloat << ' ' << engine_;
    return os.str();
  }

  static RngStream deserialize(const std::string& text) {
    std::istringstream is(text);
    std::uint64_t seed = 0, id = 0;
    bool cached = false;
    std::string cached_text;
    is >> seed >> id >> cached >> cached_text;
    RngStream out(seed, id);
    out.has_cached_ = cached;
    out.cached_ = std::strtod(cached_text.c_str(), nullptr);
    is >> out.engine_;
    return out;
  }

  friend bool operator==(const RngStream& a, const RngStream& b) {
    return a.seed_ == b.seed_ && a.id_ == b.id_ && a.engine_ == b.engine_ &&
           a.has_cached_ == b.has_cached_ && (!a.has_cached_ || a.cached_ == b.cached_);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t id_;
  engine_type engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace topical_gibbs
