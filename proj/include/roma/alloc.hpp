#pragma once

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <new>

namespace roma {

// Live-byte accounting for tensor storage. The benchmark module reads the
// high-water mark to measure peak allocation independent of the system
// allocator's behaviour.
namespace alloc_stats {
extern std::atomic<std::size_t> live_bytes;
extern std::atomic<std::size_t> peak_bytes;

inline void on_alloc(std::size_t bytes) {
    const std::size_t now = live_bytes.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::size_t prev = peak_bytes.load(std::memory_order_relaxed);
    while (prev < now && !peak_bytes.compare_exchange_weak(prev, now, std::memory_order_relaxed)) {
    }
}

inline void on_free(std::size_t bytes) { live_bytes.fetch_sub(bytes, std::memory_order_relaxed); }

inline std::size_t live() { return live_bytes.load(std::memory_order_relaxed); }
inline std::size_t peak() { return peak_bytes.load(std::memory_order_relaxed); }

// Resets the high-water mark to the current live count.
inline void reset_peak() { peak_bytes.store(live(), std::memory_order_relaxed); }
}  // namespace alloc_stats

template <class T>
struct TrackedAllocator {
    using value_type = T;

    TrackedAllocator() = default;
    template <class U>
    TrackedAllocator(const TrackedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        T* p = static_cast<T*>(std::malloc(n * sizeof(T)));
        if (!p) throw std::bad_alloc();
        alloc_stats::on_alloc(n * sizeof(T));
        return p;
    }

    void deallocate(T* p, std::size_t n) noexcept {
        alloc_stats::on_free(n * sizeof(T));
        std::free(p);
    }

    template <class U>
    bool operator==(const TrackedAllocator<U>&) const {
        return true;
    }
};

}  // namespace roma
