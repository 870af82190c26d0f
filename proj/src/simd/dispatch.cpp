// Copyright 2026 The partdisc Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdlib>
#include <string>

#include "partdisc/error.hpp"
#include "partdisc/log.hpp"
#include "partdisc/simd/kernels.hpp"

namespace partdisc::simd {
namespace {

bool cpu_supports(Isa isa) noexcept {
  switch (isa) {
    case Isa::kScalar: return true;
    case Isa::kAvx2:
#if defined(PARTDISC_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::kNeon:
#if defined(PARTDISC_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table_unchecked(Isa isa) noexcept {
  switch (isa) {
#if defined(PARTDISC_HAVE_AVX2)
    case Isa::kAvx2: return detail::avx2_table();
#endif
#if defined(PARTDISC_HAVE_NEON)
    case Isa::kNeon: return detail::neon_table();
#endif
    default: return detail::scalar_table();
  }
}

const KernelTable& resolve() noexcept {
  if (const char* env = std::getenv("PARTDISC_SIMD")) {
    const std::string want(env);
    for (Isa isa : {Isa::kScalar, Isa::kAvx2, Isa::kNeon}) {
      if (want == isa_name(isa)) {
        if (cpu_supports(isa)) return table_unchecked(isa);
        log::warn("PARTDISC_SIMD=" + want + " not supported here; using auto-detection");
      }
    }
  }
  if (cpu_supports(Isa::kAvx2)) return table_unchecked(Isa::kAvx2);
  if (cpu_supports(Isa::kNeon)) return table_unchecked(Isa::kNeon);
  return detail::scalar_table();
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
    case Isa::kNeon: return "neon";
  }
  return "unknown";
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::kScalar, Isa::kAvx2, Isa::kNeon}) {
    if (cpu_supports(isa)) out.push_back(isa);
  }
  return out;
}

const KernelTable& kernels_for(Isa isa) {
  if (!cpu_supports(isa)) {
    fail(ErrorKind::kInvalidArgument,
         "SIMD variant " + std::string(isa_name(isa)) + " is not available");
  }
  return table_unchecked(isa);
}

const KernelTable& kernels() noexcept {
  static const KernelTable& table = resolve();
  return table;
}

}  // namespace partdisc::simd
