#pragma once

#include "ncl/kernels.hpp"

namespace ncl::kernels {

namespace scalar {
extern const KernelTable kTable;
}

#if defined(NCL_HAVE_AVX2)
namespace avx2 {
extern const KernelTable kTable;
}
#endif

}  // namespace ncl::kernels
