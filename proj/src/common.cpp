#include "damformer/common.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace damformer {

namespace {
std::atomic<bool> g_check_finite{false};
std::atomic<int> g_workers{1};
}  // namespace

void set_debug_check_finite(bool on) { g_check_finite = on; }
bool debug_check_finite() { return g_check_finite; }

void set_worker_count(int n) { g_workers = std::max(1, n); }
int worker_count() { return g_workers; }

void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& body) {
    if (n <= 0) return;
    int workers = worker_count();
    if (workers <= 1 || n < 2 * grain) {
        body(0, n);
        return;
    }
    int64_t chunks = std::min<int64_t>(workers, std::max<int64_t>(1, n / grain));
    int64_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(chunks - 1));
    for (int64_t c = 1; c < chunks; ++c) {
        int64_t begin = c * per;
        int64_t end = std::min(n, begin + per);
        if (begin >= end) break;
        threads.emplace_back([&body, begin, end] { body(begin, end); });
    }
    body(0, std::min(n, per));
    for (auto& t : threads) t.join();
}

}  // namespace damformer
