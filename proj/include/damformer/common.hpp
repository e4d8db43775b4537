#pragma once

#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace damformer {

// Error taxonomy, mapped to CLI exit codes: config/usage -> 1, data/format -> 2,
// numerical failure -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline void check_shape(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

// Opt-in NaN/Inf detection: when enabled, every op scans its output and aborts
// with the producing op's name.
void set_debug_check_finite(bool on);
bool debug_check_finite();

// Worker count for kernel-internal parallelism. Results are bitwise identical
// for any setting: each output element is computed by exactly one worker with a
// fixed accumulation order.
void set_worker_count(int n);
int worker_count();

// Runs body(begin, end) over a partition of [0, n). Serial when the range is
// small or one worker is configured.
void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& body);

}  // namespace damformer
