#pragma once

#include <complex>
#include <cstddef>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include <fftw3.h>

#include "qmeter/errors.hpp"

namespace qmeter {

/// In-place complex FFT of fixed length. FFTW_ESTIMATE plans are deterministic,
/// so repeated runs produce bit-identical output.
class Fft {
 public:
  enum class Direction { kForward, kBackward };

  Fft(std::size_t n, Direction dir) : buffer_(n) {
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_1d(static_cast<int>(n), reinterpret_cast<fftw_complex*>(buffer_.data()),
                             reinterpret_cast<fftw_complex*>(buffer_.data()),
                             dir == Direction::kForward ? FFTW_FORWARD : FFTW_BACKWARD,
                             FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (plan_ == nullptr) throw Error("FFTW plan creation failed");
  }
  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;
  Fft(Fft&& other) noexcept : buffer_(std::move(other.buffer_)), plan_(std::exchange(other.plan_, nullptr)) {}
  Fft& operator=(Fft&& other) noexcept {
    std::swap(buffer_, other.buffer_);
    std::swap(plan_, other.plan_);
    return *this;
  }
  ~Fft() {
    if (plan_ == nullptr) return;
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }

  std::size_t size() const { return buffer_.size(); }

  /// Unnormalized transform of `data` in place.
  void operator()(std::span<std::complex<double>> data) {
    if (data.size() != buffer_.size()) throw Error("FFT length mismatch");
    fftw_execute_dft(plan_, reinterpret_cast<fftw_complex*>(data.data()),
                     reinterpret_cast<fftw_complex*>(data.data()));
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  std::vector<std::complex<double>> buffer_;
  fftw_plan plan_ = nullptr;
};

}  // namespace qmeter
