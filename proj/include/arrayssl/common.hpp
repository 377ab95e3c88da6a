#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace arrayssl {

// Shape/axis violations. Messages carry the offending shapes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad parameter values (ranges, indices, configuration).
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// On-disk format violations (magic, version, truncation).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

// Little-endian scalar I/O shared by the binary file formats.
inline void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated file while reading " + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_u16(std::ostream& out, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

inline uint16_t read_u16(std::istream& in, const std::string& what) {
    unsigned char b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2))
        throw FormatError("truncated file while reading " + what);
    return static_cast<uint16_t>(static_cast<uint16_t>(b[0]) |
                                 (static_cast<uint16_t>(b[1]) << 8));
}

inline void write_u8(std::ostream& out, uint8_t v) {
    out.write(reinterpret_cast<const char*>(&v), 1);
}

inline uint8_t read_u8(std::istream& in, const std::string& what) {
    unsigned char b;
    if (!in.read(reinterpret_cast<char*>(&b), 1))
        throw FormatError("truncated file while reading " + what);
    return b;
}

}  // namespace detail

// Thread cap for internally parallel ops. ARRAYSSL_THREADS=1 forces serial.
inline int max_threads() {
    static const int cached = [] {
        if (const char* env = std::getenv("ARRAYSSL_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw ? static_cast<int>(hw) : 1;
    }();
    return cached;
}

// Static-partition parallel loop. Each index is processed exactly once and
// chunk boundaries depend only on (n, nthreads), so element-independent work
// stays run-to-run deterministic.
template <class Fn>
void parallel_for(int64_t n, Fn&& fn) {
    int nthreads = max_threads();
    if (n <= 0) return;
    if (nthreads <= 1 || n == 1) {
        fn(int64_t{0}, n);
        return;
    }
    if (static_cast<int64_t>(nthreads) > n) nthreads = static_cast<int>(n);
    std::vector<std::thread> workers;
    workers.reserve(nthreads - 1);
    int64_t chunk = (n + nthreads - 1) / nthreads;
    for (int t = 1; t < nthreads; ++t) {
        int64_t lo = t * chunk;
        int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    fn(int64_t{0}, std::min(n, chunk));
    for (auto& w : workers) w.join();
}

}  // namespace arrayssl
