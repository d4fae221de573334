#include "fastadd/flops.hpp"

namespace fastadd {

namespace {
thread_local FlopCounter* g_active = nullptr;
}

namespace flops {

FlopCounter* active() { return g_active; }

void count(std::uint64_t madds) {
  if (g_active != nullptr) g_active->add(madds);
}

}  // namespace flops

FlopScope::FlopScope(FlopCounter& counter) : previous_(g_active) {
  g_active = &counter;
}

FlopScope::~FlopScope() { g_active = previous_; }

}  // namespace fastadd
