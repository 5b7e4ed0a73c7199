#pragma once

#include <array>
#include <cstdint>

namespace qfam {

// Per-thread tally of the expensive primitives. The simulator charges virtual
// CPU from the difference across a handler call.
struct WorkCounters {
  std::uint64_t digests = 0;
  std::uint64_t aead_ops = 0;
  std::array<std::uint64_t, 3> keygens{};  // indexed by group_index()
  std::array<std::uint64_t, 3> derives{};

  friend WorkCounters operator-(const WorkCounters& a, const WorkCounters& b);
  friend bool operator==(const WorkCounters&, const WorkCounters&) = default;
};

const WorkCounters& thread_work();

namespace detail {
WorkCounters& mutable_thread_work();
}

}  // namespace qfam
