#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

// Scalar type of the whole library. The default (float) is the training
// configuration; defining DEEPSIM_REAL_DOUBLE switches every computation to
// double, which the gradient-check test build uses for tight finite-difference
// tolerances.
namespace deepsim {

#ifdef DEEPSIM_REAL_DOUBLE
using real = double;
#else
using real = float;
#endif

inline constexpr const char* kVersion = "0.1.0";

using Rng = std::mt19937_64;

namespace detail {

inline void format_parts(std::ostringstream&) {}

template <typename T, typename... Rest>
void format_parts(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    format_parts(os, rest...);
}

template <typename... Parts>
std::string str(const Parts&... parts) {
    std::ostringstream os;
    format_parts(os, parts...);
    return os.str();
}

}  // namespace detail

// Contract violations (bad shapes, invalid arguments) throw invalid_argument;
// environment failures (I/O, corrupt files) throw runtime_error.
#define DEEPSIM_CHECK(cond, ...)                                              \
    do {                                                                      \
        if (!(cond)) {                                                        \
            throw std::invalid_argument(::deepsim::detail::str(__VA_ARGS__)); \
        }                                                                     \
    } while (0)

#define DEEPSIM_REQUIRE_IO(cond, ...)                                        \
    do {                                                                     \
        if (!(cond)) {                                                       \
            throw std::runtime_error(::deepsim::detail::str(__VA_ARGS__));   \
        }                                                                    \
    } while (0)

// Number of worker threads used by the heavy kernels (convolutions).
// 0 = use hardware concurrency. Partitioning is static, so results are
// bit-identical for any thread count.
inline int& thread_count_ref() {
    static int n = 0;
    return n;
}

inline void set_num_threads(int n) { thread_count_ref() = n; }

inline int num_threads() {
    int n = thread_count_ref();
    if (n > 0) return n;
    unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

// Runs fn(begin, end) over a static partition of [0, n). Falls back to a
// single inline call when n is small or one thread is configured.
template <typename Fn>
void parallel_for(std::int64_t n, const Fn& fn, std::int64_t grain = 1) {
    if (n <= 0) return;
    int threads = num_threads();
    if (threads <= 1 || n < 2 * grain) {
        fn(std::int64_t{0}, n);
        return;
    }
    std::int64_t chunks = std::min<std::int64_t>(threads, (n + grain - 1) / grain);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(chunks - 1));
    std::int64_t per = (n + chunks - 1) / chunks;
    for (std::int64_t c = 1; c < chunks; ++c) {
        std::int64_t b = c * per;
        std::int64_t e = std::min(n, b + per);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(std::int64_t{0}, std::min(n, per));
    for (auto& t : pool) t.join();
}

}  // namespace deepsim
