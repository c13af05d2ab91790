#include <cstdlib>
#include <string>

#include "kernels_impl.hpp"

namespace ncl::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(NCL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* detect() {
  if (const char* forced = std::getenv("NCL_KERNELS")) {
    const std::string name(forced);
    if (name == "scalar") return &scalar_table();
    if (name == "avx2" && avx2_table() != nullptr) return avx2_table();
  }
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

const KernelTable*& current() {
  static const KernelTable* table = detect();
  return table;
}

}  // namespace

const KernelTable& scalar_table() { return scalar::kTable; }

const KernelTable* avx2_table() {
#if defined(NCL_HAVE_AVX2)
  static const bool supported = cpu_has_avx2();
  return supported ? &avx2::kTable : nullptr;
#else
  return nullptr;
#endif
}

std::vector<const KernelTable*> available_tables() {
  std::vector<const KernelTable*> tables{&scalar_table()};
  if (const KernelTable* t = avx2_table()) tables.push_back(t);
  return tables;
}

const KernelTable& active() { return *current(); }

bool select(std::string_view name) {
  for (const KernelTable* t : available_tables()) {
    if (t->name == name) {
      current() = t;
      return true;
    }
  }
  return false;
}

}  // namespace ncl::kernels
