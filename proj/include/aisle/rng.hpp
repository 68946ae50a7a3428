#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <boost/random/normal_distribution.hpp>
#include <boost/version.hpp>

namespace aisle {

/// Engine used for every random stream in the library.
using Engine = std::mt19937_64;

/// Identifier written to run metadata. Bump the trailing version whenever the
/// stream derivation or the sampling algorithms change.
inline constexpr std::string_view kPrngId =
    "mt19937_64/seed_seq(master,domain,r,i,n)/boost-" BOOST_LIB_VERSION "-ziggurat-normal/v1";

/// Purpose tags keep streams for different consumers disjoint.
enum class StreamDomain : std::uint32_t {
  Dataset = 1,
  ProposalInit = 2,
  Particles = 3,
  MonteCarlo = 4,
  Test = 5,
};

/// Builds an engine from (master_seed, domain, r, i, n). Every component is
/// fed to std::seed_seq as separate 32-bit words, so distinct tuples give
/// distinct seed sequences and changing one index never touches another
/// stream.
inline Engine make_stream(std::uint64_t master_seed, StreamDomain domain, std::uint64_t r = 0,
                          std::uint64_t i = 0, std::uint64_t n = 0) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(master_seed), hi(master_seed), static_cast<std::uint32_t>(domain),
                    lo(r),           hi(r),           lo(i),
                    hi(i),           lo(n),           hi(n)};
  return Engine(seq);
}

/// Standard normal draws with a fixed, library-pinned algorithm.
class StandardNormal {
 public:
  double operator()(Engine& engine) { return dist_(engine); }

 private:
  boost::random::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace aisle
