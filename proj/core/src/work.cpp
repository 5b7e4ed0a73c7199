#include "qfam/work.hpp"

namespace qfam {

namespace {
thread_local WorkCounters t_work;
}

WorkCounters operator-(const WorkCounters& a, const WorkCounters& b) {
  WorkCounters d;
  d.digests = a.digests - b.digests;
  d.aead_ops = a.aead_ops - b.aead_ops;
  for (std::size_t i = 0; i < a.keygens.size(); ++i) {
    d.keygens[i] = a.keygens[i] - b.keygens[i];
    d.derives[i] = a.derives[i] - b.derives[i];
  }
  return d;
}

const WorkCounters& thread_work() { return t_work; }

namespace detail {
WorkCounters& mutable_thread_work() { return t_work; }
}

}  // namespace qfam
