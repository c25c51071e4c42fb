// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Process-wide allocator settings for long training runs.

#pragma once

namespace guideseg::num {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// system. Training allocates and frees many activation buffers of a few
/// hundred kilobytes per step; with the default glibc thresholds a long run
/// spends a growing share of its time in page faults. No effect on other C
/// libraries. Call once at program start.
void keep_heap_resident();

}  // namespace guideseg::num
