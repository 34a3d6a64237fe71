#include "drpo/fault.hpp"

#include <atomic>

namespace drpo {
namespace {
std::atomic<Fault> g_fault{Fault::kNone};
}  // namespace

void set_fault(Fault fault) noexcept { g_fault.store(fault, std::memory_order_relaxed); }
Fault active_fault() noexcept { return g_fault.load(std::memory_order_relaxed); }

}  // namespace drpo
