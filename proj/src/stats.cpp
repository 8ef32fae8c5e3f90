#include "lbea/stats.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace lbea {

MeanAndError mean_and_error(std::span<const double> xs)
{
    MeanAndError out;
    const std::size_t n = xs.size();
    if (n == 0) return out;
    CompensatedSum s;
    for (double x : xs) s.add(x);
    out.mean = s.value() / static_cast<double>(n);
    if (n < 2) return out;
    CompensatedSum ss;
    for (double x : xs) ss.add((x - out.mean) * (x - out.mean));
    out.std_error = std::sqrt(ss.value() / static_cast<double>(n - 1) / static_cast<double>(n));
    return out;
}

void parallel_for(int n, int threads, const std::function<void(int)>& f)
{
    if (n <= 0) return;
    const int workers = std::clamp(threads, 1, n);
    if (workers == 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace lbea
