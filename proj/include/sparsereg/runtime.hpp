#pragma once

namespace sparsereg {

/// Keeps freed matrix buffers on the heap instead of returning them to the kernel.
/// Training allocates and frees the same few large buffers every step, and glibc's
/// defaults turn each of those into fresh page faults. Call once from main().
void tune_allocator();

}  // namespace sparsereg
