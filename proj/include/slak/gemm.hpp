// Copyright 2026 The slak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>

namespace slak {

enum class Trans { kNo, kYes };

// Row-major C = alpha * op(A) * op(B) + beta * C, with op(A) M x K and
// op(B) K x N. Backed by CBLAS.
template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc);

// Naive triple loop with the same contract; the oracle for gemm().
template <typename T>
void gemm_reference(Trans ta, Trans tb, int m, int n, int k, T alpha,
                    const T* a, int lda, const T* b, int ldb, T beta, T* c,
                    int ldc);

}  // namespace slak
