#pragma once

#include <cstddef>
#include <span>

namespace uem {

bool is_power_of_two(std::size_t n);

/// In-place unitary 2-D DFT over a batch of n x n complex grids stored as
/// interleaved (re, im) pairs. Forward uses exp(-i...), inverse exp(+i...);
/// both scale by 1/n so the pair is an exact inverse and Parseval holds.
/// Throws std::invalid_argument when n is not a power of two.
void fft2_unitary(std::span<double> interleaved, std::size_t n, bool inverse);

}  // namespace uem
