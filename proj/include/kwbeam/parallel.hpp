// parallel.hpp
// Static-partition parallel loop. Every index is processed by exactly one
// worker as a plain sequential sub-loop, so results never depend on the
// worker count or scheduling; callers rely on this for bit-reproducible
// training and beamforming.

#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace kwbeam {

inline unsigned &job_count() {
    static unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
    return jobs;
}

inline void set_job_count(unsigned jobs) { job_count() = std::max(1u, jobs); }

template <typename Fn>
void parallel_for(std::size_t n, Fn &&fn) {
    unsigned jobs = std::min<std::size_t>(job_count(), n);
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    std::exception_ptr error;
    std::mutex error_mutex;
    std::size_t chunk = (n + jobs - 1) / jobs;
    for (unsigned t = 0; t < jobs; ++t) {
        std::size_t lo = t * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto &th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace kwbeam
