#pragma once

namespace drpo {

// Deliberate defects used by `selftest --fault` to prove the invariant suite
// can fail. Never set outside of mutation checks.
enum class Fault {
  kNone,
  kFlipSignAugmentation,  // negates the residual correction term of psi
};

void set_fault(Fault fault) noexcept;
Fault active_fault() noexcept;

}  // namespace drpo
