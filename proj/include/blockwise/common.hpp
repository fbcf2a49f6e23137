#pragma once

#include <algorithm>
#include <cctype>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace blockwise {

// ---------------------------------------------------------------------------
// Error hierarchy. The CLI maps these onto exit codes: DomainError -> 1,
// everything environmental (I/O, parse, config, backend) -> 2.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad values inside otherwise well-formed inputs (out-of-range score,
/// mismatched metric vectors, progression rule violations).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Addressing something that does not exist (curriculum position, learner id).
class NotFoundError : public DomainError {
public:
    using DomainError::DomainError;
};

/// Unparseable or schema-violating input files; message carries the locus.
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Transport-level backend failure (unreachable endpoint, bad payload).
class BackendError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Small utilities shared across modules.
// ---------------------------------------------------------------------------

inline std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

/// Canonical form for lexical items and catalog ids before set operations:
/// case-folded, trimmed, inner whitespace runs collapsed to single spaces.
inline std::string normalize_lexical_item(const std::string& raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    for (char c : raw) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!out.empty()) pending_space = true;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

inline std::string format_double(double v, int decimals = 2) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

inline std::string join(const std::set<std::string>& parts, const std::string& sep) {
    return join(std::vector<std::string>(parts.begin(), parts.end()), sep);
}

/// FNV-1a, used to derive per-(conversation, stage, role) sub-seeds from the
/// root seed. Stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a64(const std::string& data, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t root, const std::string& a, const std::string& b,
                                 const std::string& c = "") {
    std::uint64_t h = fnv1a64(a, root ^ 0xcbf29ce484222325ull);
    h = fnv1a64("\x1f" + b, h);
    if (!c.empty()) h = fnv1a64("\x1f" + c, h);
    return h ? h : 1;  // mt19937_64 treats 0 fine, but keep seeds nonzero for clarity
}

/// Fisher–Yates with explicit index arithmetic. std::shuffle and
/// uniform_int_distribution are implementation-defined across standard
/// libraries, which would break seeded bit-reproducibility.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (size_t i = items.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace blockwise
