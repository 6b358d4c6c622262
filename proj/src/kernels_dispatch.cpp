#include "ptree/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace ptree::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") != 0;
#else
  return false;
#endif
}

bool tu_has_avx2() {
#if defined(PTREE_HAVE_AVX2_TU)
  return true;
#else
  return false;
#endif
}

struct Selection {
  const Ops* table;
  const char* name;
};

Selection select() {
  const char* env = std::getenv("PTREE_KERNELS");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return {&scalar_ops(), "scalar"};
  if (avx2_available()) return {&avx2_ops(), "avx2"};
  return {&scalar_ops(), "scalar"};
}

const Selection& selection() {
  static const Selection s = select();
  return s;
}

}  // namespace

bool avx2_available() { return tu_has_avx2() && cpu_has_avx2(); }

const Ops& ops() { return *selection().table; }

const char* active_name() { return selection().name; }

}  // namespace ptree::kernels
