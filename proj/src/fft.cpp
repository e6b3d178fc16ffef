#include "uemkit/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>

namespace uem {

namespace {

// FFTW's planner is not thread-safe; execution of an existing plan on new
// arrays is.
std::mutex g_plan_mutex;

fftw_plan plan_for(std::size_t n, bool inverse) {
  static std::map<std::pair<std::size_t, bool>, fftw_plan> cache;
  std::lock_guard lock(g_plan_mutex);
  auto key = std::make_pair(n, inverse);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  auto* buf = fftw_alloc_complex(n * n);
  const int ni = static_cast<int>(n);
  fftw_plan p = fftw_plan_dft_2d(ni, ni, buf, buf, inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                 FFTW_ESTIMATE | FFTW_UNALIGNED);
  fftw_free(buf);
  if (p == nullptr) throw std::runtime_error("fft2: FFTW planning failed");
  cache.emplace(key, p);
  return p;
}

}  // namespace

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft2_unitary(std::span<double> interleaved, std::size_t n, bool inverse) {
  if (!is_power_of_two(n)) {
    throw std::invalid_argument("fft2: grid size " + std::to_string(n) +
                                " is not a power of two");
  }
  const std::size_t grid = 2 * n * n;
  if (interleaved.size() % grid != 0) {
    throw std::invalid_argument("fft2: buffer of " + std::to_string(interleaved.size()) +
                                " doubles is not a batch of " + std::to_string(n) + "x" +
                                std::to_string(n) + " complex grids");
  }
  fftw_plan p = plan_for(n, inverse);
  const double s = 1.0 / static_cast<double>(n);
  for (std::size_t off = 0; off < interleaved.size(); off += grid) {
    auto* z = reinterpret_cast<fftw_complex*>(interleaved.data() + off);
    fftw_execute_dft(p, z, z);
  }
  for (double& v : interleaved) v *= s;
}

}  // namespace uem
