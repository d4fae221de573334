#pragma once

#include <cstdint>

namespace fastadd {

/// Multiply-add accumulator. Kernels report exact counts: matmul adds m*k*n,
/// element-wise kernels add the element count. Monotone while enabled.
class FlopCounter {
 public:
  void add(std::uint64_t madds) {
    if (enabled_) madds_ += madds;
  }
  std::uint64_t multiply_adds() const { return madds_; }
  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }
  void reset() { madds_ = 0; }

 private:
  std::uint64_t madds_ = 0;
  bool enabled_ = true;
};

namespace flops {

FlopCounter* active();

/// Report `madds` multiply-adds to the innermost active counter of this
/// thread, if any. No counter installed means zero overhead beyond one
/// thread-local load.
void count(std::uint64_t madds);

}  // namespace flops

/// Installs a counter for the current thread for the lifetime of the scope.
class FlopScope {
 public:
  explicit FlopScope(FlopCounter& counter);
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopCounter* previous_;
};

}  // namespace fastadd
