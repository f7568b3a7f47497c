#include "vast/kernels.hpp"

#include <cstdlib>

namespace vast::kernels {

extern const KernelTable kScalarTable;
#if VAST_BUILD_AVX2
extern const KernelTable kAvx2Table;
#endif
#if VAST_BUILD_AVX512
extern const KernelTable kAvx512Table;
#endif

KernelTable table = kScalarTable;

namespace {

Backend g_active = Backend::scalar;
bool g_resolved = false;

bool host_supports(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    case Backend::avx512:
      return __builtin_cpu_supports("avx512f");
  }
  return false;
}

void apply(Backend b) {
  table = *variant_table(b);
  g_active = b;
  g_resolved = true;
}

Backend best_available() {
  for (Backend b : {Backend::avx512, Backend::avx2})
    if (variant_table(b) != nullptr && host_supports(b)) return b;
  return Backend::scalar;
}

// Resolves the backend once at load time so even code that never asks for
// the active backend runs vectorized.
struct AutoInit {
  AutoInit() { active_backend(); }
} g_auto_init;

}  // namespace

const KernelTable* variant_table(Backend b) {
  switch (b) {
    case Backend::scalar:
      return &kScalarTable;
    case Backend::avx2:
#if VAST_BUILD_AVX2
      return &kAvx2Table;
#else
      return nullptr;
#endif
    case Backend::avx512:
#if VAST_BUILD_AVX512
      return &kAvx512Table;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
    case Backend::avx512:
      return "avx512";
  }
  return "?";
}

Backend resolve_backend() {
  if (const char* env = std::getenv("VAST_KERNELS")) {
    std::string_view name(env);
    if (name == "scalar") return Backend::scalar;
    if (name == "avx2" && variant_table(Backend::avx2) && host_supports(Backend::avx2))
      return Backend::avx2;
    if (name == "avx512" && variant_table(Backend::avx512) && host_supports(Backend::avx512))
      return Backend::avx512;
    // unknown or unsupported: fall through to auto
  }
  return best_available();
}

Backend active_backend() {
  if (!g_resolved) apply(resolve_backend());
  return g_active;
}

bool select_backend(std::string_view name) {
  if (name == "auto") {
    apply(best_available());
    return true;
  }
  Backend b;
  if (name == "scalar")
    b = Backend::scalar;
  else if (name == "avx2")
    b = Backend::avx2;
  else if (name == "avx512")
    b = Backend::avx512;
  else
    return false;
  if (variant_table(b) == nullptr || !host_supports(b)) return false;
  apply(b);
  return true;
}

}  // namespace vast::kernels
