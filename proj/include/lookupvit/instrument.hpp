#pragma once

#include <array>
#include <cstdint>

#include "lookupvit/errors.hpp"

// MAC accounting for forward kernels. Counting is opt-in: a Recorder must be
// active on the calling thread, and the bucket a matmul lands in is chosen by
// the innermost TermScope.

namespace lookupvit::instrument {

enum class Term : std::uint8_t {
  attention_quadratic,  // token-token products among compressed tokens (M^2 D)
  attention_cross,      // compressed-lookup products (N M D)
  projections,          // D x D linear maps inside attention
  mlp_compressed,       // MLP on compressed tokens, hidden p*D
  mlp_lookup,           // MLP on lookup tokens, hidden D/q
  neglected,            // everything else: norms, softmax, biases, GELU, patch embed, heads
};

inline constexpr std::size_t kTermCount = 6;

inline const char* term_name(Term t) {
  switch (t) {
    case Term::attention_quadratic: return "attention_quadratic";
    case Term::attention_cross: return "attention_cross";
    case Term::projections: return "projections";
    case Term::mlp_compressed: return "mlp_compressed";
    case Term::mlp_lookup: return "mlp_lookup";
    case Term::neglected: return "neglected";
  }
  return "?";
}

struct Counters {
  std::array<std::uint64_t, kTermCount> macs{};
  std::array<std::uint64_t, kTermCount> softmax_calls{};

  std::uint64_t& operator[](Term t) { return macs[static_cast<std::size_t>(t)]; }
  std::uint64_t operator[](Term t) const { return macs[static_cast<std::size_t>(t)]; }
  std::uint64_t softmax(Term t) const { return softmax_calls[static_cast<std::size_t>(t)]; }

  std::uint64_t modeled() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i + 1 < kTermCount; ++i) s += macs[i];
    return s;
  }
  std::uint64_t total() const { return modeled() + macs[kTermCount - 1]; }
  std::uint64_t total_softmax() const {
    std::uint64_t s = 0;
    for (auto c : softmax_calls) s += c;
    return s;
  }

  friend Counters operator-(Counters a, const Counters& b) {
    for (std::size_t i = 0; i < kTermCount; ++i) {
      a.macs[i] -= b.macs[i];
      a.softmax_calls[i] -= b.softmax_calls[i];
    }
    return a;
  }
};

namespace detail {
inline thread_local Counters* active = nullptr;
inline thread_local Term current = Term::neglected;
inline bool& globally_enabled() {
  static bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Process-wide kill switch; when off, Recorder refuses to start.
inline void set_enabled(bool on) { detail::globally_enabled() = on; }
inline bool enabled() { return detail::globally_enabled(); }

/// Routes all counted work on this thread into `sink` for its lifetime.
class Recorder {
 public:
  explicit Recorder(Counters& sink) : previous_(detail::active) {
    if (!enabled()) throw ContractError("instrumentation is disabled");
    detail::active = &sink;
  }
  ~Recorder() { detail::active = previous_; }
  Recorder(const Recorder&) = delete;
  Recorder& operator=(const Recorder&) = delete;

 private:
  Counters* previous_;
};

class TermScope {
 public:
  explicit TermScope(Term t) : previous_(detail::current) { detail::current = t; }
  ~TermScope() { detail::current = previous_; }
  TermScope(const TermScope&) = delete;
  TermScope& operator=(const TermScope&) = delete;

 private:
  Term previous_;
};

/// Current totals of the active recorder (zeros when none is active).
inline Counters snapshot() { return detail::active ? *detail::active : Counters{}; }

inline void count_macs(std::uint64_t n) {
  if (detail::active) (*detail::active)[detail::current] += n;
}

/// Elementwise work always lands in the neglected bucket.
inline void count_elementwise(std::uint64_t n) {
  if (detail::active) (*detail::active)[Term::neglected] += n;
}

inline void count_softmax() {
  if (detail::active) ++detail::active->softmax_calls[static_cast<std::size_t>(detail::current)];
}

}  // namespace lookupvit::instrument
