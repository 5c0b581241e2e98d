#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace datg::detail {

// ---------------------------------------------------------------------------
// UTF-8 <-> code points.
//
// All character offsets in the library are code-point offsets over this
// decoding. Invalid bytes are decoded one byte per code point so that every
// input has a well-defined, stable offset space.
// ---------------------------------------------------------------------------

inline std::u32string utf8_decode(std::string_view s) {
    std::u32string out;
    out.reserve(s.size());
    size_t i = 0;
    const auto byte = [&](size_t k) { return static_cast<unsigned char>(s[k]); };
    while (i < s.size()) {
        unsigned char b = byte(i);
        size_t len = 0;
        char32_t cp = 0;
        if (b < 0x80) {
            cp = b;
            len = 1;
        } else if ((b & 0xE0) == 0xC0) {
            cp = b & 0x1F;
            len = 2;
        } else if ((b & 0xF0) == 0xE0) {
            cp = b & 0x0F;
            len = 3;
        } else if ((b & 0xF8) == 0xF0) {
            cp = b & 0x07;
            len = 4;
        } else {
            out.push_back(b);  // stray continuation byte
            ++i;
            continue;
        }
        if (i + len > s.size()) {
            out.push_back(b);
            ++i;
            continue;
        }
        bool ok = true;
        for (size_t k = 1; k < len; ++k) {
            if ((byte(i + k) & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (byte(i + k) & 0x3F);
        }
        if (!ok) {
            out.push_back(b);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

inline void utf8_append(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

inline std::string utf8_encode(std::u32string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char32_t cp : s) utf8_append(out, cp);
    return out;
}

// Whitespace set used for normalization: ASCII whitespace plus the common
// Unicode space code points that appear in model output.
inline bool is_space(char32_t cp) {
    switch (cp) {
        case U' ':
        case U'\t':
        case U'\n':
        case U'\r':
        case U'\f':
        case U'\v':
        case 0x00A0:
        case 0x2000:
        case 0x2001:
        case 0x2002:
        case 0x2003:
        case 0x2004:
        case 0x2005:
        case 0x2006:
        case 0x2007:
        case 0x2008:
        case 0x2009:
        case 0x200A:
        case 0x200B:
        case 0x3000:
            return true;
        default:
            return false;
    }
}

inline bool is_ascii_digit(char32_t cp) { return cp >= U'0' && cp <= U'9'; }
inline bool is_ascii_alpha(char32_t cp) {
    return (cp >= U'a' && cp <= U'z') || (cp >= U'A' && cp <= U'Z');
}
inline bool is_ascii_punct(char32_t cp) {
    return cp < 0x80 && std::ispunct(static_cast<int>(cp));
}

inline char32_t lower_ascii(char32_t cp) {
    return (cp >= U'A' && cp <= U'Z') ? cp + 32 : cp;
}

inline std::string to_lower_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// Collapse whitespace runs to a single space and trim the ends. This is the
// canonical key for evidence-span deduplication.
inline std::string normalize_ws(std::string_view s) {
    std::u32string cps = utf8_decode(s);
    std::u32string out;
    out.reserve(cps.size());
    bool in_ws = false;
    for (char32_t cp : cps) {
        if (is_space(cp)) {
            in_ws = true;
            continue;
        }
        if (in_ws && !out.empty()) out.push_back(U' ');
        in_ws = false;
        out.push_back(cp);
    }
    return utf8_encode(out);
}

// Whitespace-collapsed view of a code-point string, with a map from each
// normalized position back to the original position of the character that
// produced it. Used by the normalized span-matching fallback.
struct NormalizedText {
    std::u32string text;
    std::vector<size_t> origin;  // origin[i] = original index of text[i]
};

inline NormalizedText normalize_keep_origin(std::u32string_view s) {
    NormalizedText n;
    n.text.reserve(s.size());
    n.origin.reserve(s.size());
    size_t i = 0;
    while (i < s.size()) {
        if (is_space(s[i])) {
            size_t first = i;
            while (i < s.size() && is_space(s[i])) ++i;
            n.text.push_back(U' ');
            n.origin.push_back(first);
        } else {
            n.text.push_back(s[i]);
            n.origin.push_back(i);
            ++i;
        }
    }
    return n;
}

inline std::vector<std::string> split_lines(std::string_view s) {
    std::vector<std::string> lines;
    size_t start = 0;
    while (start <= s.size()) {
        size_t nl = s.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.emplace_back(s.substr(start));
            break;
        }
        lines.emplace_back(s.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

inline std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
        size_t p = s.find(sep, start);
        if (p == std::string_view::npos) {
            parts.emplace_back(s.substr(start));
            break;
        }
        parts.emplace_back(s.substr(start, p - start));
        start = p + 1;
    }
    return parts;
}

// ---------------------------------------------------------------------------
// Exact rational arithmetic for the built-in answer comparator.
// ---------------------------------------------------------------------------

struct Rational {
    __int128 num = 0;
    __int128 den = 1;
};

inline __int128 gcd128(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b) {
        __int128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

// Parses integers, decimals, a/b fractions and \frac{a}{b} forms. Returns
// nullopt for anything else; callers fall back to string comparison.
inline std::optional<Rational> parse_rational(std::string_view raw) {
    std::string s = normalize_ws(raw);
    // \frac{a}{b}, \dfrac{a}{b}, \tfrac{a}{b} -> a/b
    for (const char* f : {"\\frac", "\\dfrac", "\\tfrac"}) {
        size_t p = s.find(f);
        if (p != std::string::npos) {
            std::string rest = s.substr(p + std::string(f).size());
            size_t o1 = rest.find('{');
            if (o1 == std::string::npos) return std::nullopt;
            size_t c1 = rest.find('}', o1);
            if (c1 == std::string::npos) return std::nullopt;
            size_t o2 = rest.find('{', c1);
            if (o2 == std::string::npos) return std::nullopt;
            size_t c2 = rest.find('}', o2);
            if (c2 == std::string::npos) return std::nullopt;
            s = rest.substr(o1 + 1, c1 - o1 - 1) + "/" + rest.substr(o2 + 1, c2 - o2 - 1);
            break;
        }
    }
    // strip all remaining whitespace
    std::string t;
    for (char c : s)
        if (!std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
    if (t.empty()) return std::nullopt;

    auto parse_part = [](std::string_view p) -> std::optional<Rational> {
        size_t i = 0;
        bool neg = false;
        if (i < p.size() && (p[i] == '+' || p[i] == '-')) {
            neg = p[i] == '-';
            ++i;
        }
        if (i >= p.size()) return std::nullopt;
        __int128 intpart = 0;
        size_t digits = 0;
        while (i < p.size() && std::isdigit(static_cast<unsigned char>(p[i]))) {
            intpart = intpart * 10 + (p[i] - '0');
            ++i;
            if (++digits > 18) return std::nullopt;
        }
        if (digits == 0) return std::nullopt;
        Rational r{intpart, 1};
        if (i < p.size() && p[i] == '.') {
            ++i;
            __int128 frac = 0, scale = 1;
            size_t fdigits = 0;
            while (i < p.size() && std::isdigit(static_cast<unsigned char>(p[i]))) {
                frac = frac * 10 + (p[i] - '0');
                scale *= 10;
                ++i;
                if (++fdigits > 18) return std::nullopt;
            }
            if (fdigits == 0) return std::nullopt;
            r.num = intpart * scale + frac;
            r.den = scale;
        }
        if (i != p.size()) return std::nullopt;
        if (neg) r.num = -r.num;
        return r;
    };

    size_t slash = t.find('/');
    std::optional<Rational> r;
    if (slash != std::string::npos) {
        auto a = parse_part(std::string_view(t).substr(0, slash));
        auto b = parse_part(std::string_view(t).substr(slash + 1));
        if (!a || !b || b->num == 0) return std::nullopt;
        r = Rational{a->num * b->den, a->den * b->num};
        if (r->den < 0) {
            r->num = -r->num;
            r->den = -r->den;
        }
    } else {
        r = parse_part(t);
    }
    if (!r) return std::nullopt;
    __int128 g = gcd128(r->num, r->den);
    if (g > 1) {
        r->num /= g;
        r->den /= g;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Filesystem helpers.
// ---------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Writes via a temporary file and renames into place.
inline void write_file_atomic(const std::string& path, std::string_view data) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write file: " + tmp.string());
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) throw std::runtime_error("short write: " + tmp.string());
    }
    fs::rename(tmp, target);
}

}  // namespace datg::detail
