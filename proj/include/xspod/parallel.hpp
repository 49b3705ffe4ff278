#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace xspod {

/// Runs fn(task, worker) for task in [0, n_tasks) on up to `workers`
/// threads, handing out tasks dynamically. The first exception thrown by a
/// task is rethrown on the calling thread.
template <typename Fn>
void parallel_tasks(long long n_tasks, int workers, Fn&& fn)
{
    workers = std::max(1, static_cast<int>(std::min<long long>(workers, std::max(1LL, n_tasks))));
    if (workers == 1) {
        for (long long t = 0; t < n_tasks; ++t)
            fn(t, 0);
        return;
    }
    std::atomic<long long> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (long long t = next++; t < n_tasks; t = next++)
                    fn(t, w);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                next = n_tasks;
            }
        });
    }
    for (auto& th : pool)
        th.join();
    if (error)
        std::rethrow_exception(error);
}

} // namespace xspod
