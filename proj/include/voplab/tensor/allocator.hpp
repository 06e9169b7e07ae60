#pragma once

namespace voplab {

// Keeps large tensor buffers on the heap instead of fresh mmap regions, so
// repeated forward passes reuse memory rather than page-faulting it in.
// No-op outside glibc. Call once at program start.
void configure_allocator();

}  // namespace voplab
