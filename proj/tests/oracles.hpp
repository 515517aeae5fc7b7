#pragma once
// Independent reference implementations the tests check the library
// against. Each one takes the most obvious correct route, with no code
// shared with the implementation under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace oracle {

// Decimal timestamp compared as an exact rational: value * 10^12 packed
// into __int128.
inline __int128 ts_picos(std::string_view text) {
    std::size_t dot = text.find('.');
    std::string whole(text.substr(0, dot));
    std::string frac = dot == std::string_view::npos ? "" : std::string(text.substr(dot + 1));
    if (frac.size() > 12) frac.resize(12);
    while (frac.size() < 12) frac.push_back('0');
    __int128 v = 0;
    for (char c : whole) v = v * 10 + (c - '0');
    for (char c : frac) v = v * 10 + (c - '0');
    return v;
}

inline int ts_compare(std::string_view a, std::string_view b) {
    __int128 va = ts_picos(a), vb = ts_picos(b);
    return va < vb ? -1 : (va > vb ? 1 : 0);
}

struct Pt {
    double x, y;
};

inline bool pt_on_segment(Pt a, Pt b, Pt p) {
    double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (std::abs(cross) > 1e-12 * (std::abs(b.x - a.x) + std::abs(b.y - a.y) + 1.0)) return false;
    return p.x >= std::min(a.x, b.x) - 1e-12 && p.x <= std::max(a.x, b.x) + 1e-12 &&
           p.y >= std::min(a.y, b.y) - 1e-12 && p.y <= std::max(a.y, b.y) + 1e-12;
}

// Even-odd test with a vertical ray (the implementation casts horizontally).
inline bool point_in_polygon(const std::vector<Pt>& poly, Pt p) {
    std::size_t n = poly.size();
    if (n < 3) return false;
    for (std::size_t i = 0; i < n; ++i)
        if (pt_on_segment(poly[i], poly[(i + 1) % n], p)) return true;
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        bool crosses = (poly[i].x > p.x) != (poly[j].x > p.x);
        if (!crosses) continue;
        double y_at = poly[j].y + (poly[i].y - poly[j].y) * (p.x - poly[j].x) / (poly[i].x - poly[j].x);
        if (p.y < y_at) inside = !inside;
    }
    return inside;
}

// Civil date by walking whole years and months from 1970. Slow and plain.
struct Civil {
    int year, month, day, hour, minute, second;
};

inline bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

inline Civil civil_from_unix(std::uint64_t secs) {
    static const int mdays[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    std::uint64_t days = secs / 86400;
    std::uint64_t rem = secs % 86400;
    int year = 1970;
    while (true) {
        std::uint64_t len = is_leap(year) ? 366 : 365;
        if (days < len) break;
        days -= len;
        ++year;
    }
    int month = 1;
    for (int m = 0; m < 12; ++m) {
        std::uint64_t len = static_cast<std::uint64_t>(mdays[m] + (m == 1 && is_leap(year) ? 1 : 0));
        if (days < len) break;
        days -= len;
        ++month;
    }
    Civil c;
    c.year = year;
    c.month = month;
    c.day = static_cast<int>(days) + 1;
    c.hour = static_cast<int>(rem / 3600);
    c.minute = static_cast<int>((rem % 3600) / 60);
    c.second = static_cast<int>(rem % 60);
    return c;
}

// Pearson r straight from the textbook definition, two passes.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (double v : x) mx += v;
    for (double v : y) my += v;
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(y.size());
    double num = 0, dx = 0, dy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (x[i] - mx) * (y[i] - my);
        dx += (x[i] - mx) * (x[i] - mx);
        dy += (y[i] - my) * (y[i] - my);
    }
    return num / (std::sqrt(dx) * std::sqrt(dy));
}

// MQTT-style filter match by recursive descent over the segment lists.
inline bool topic_match(const std::vector<std::string>& filter,
                        const std::vector<std::string>& topic, std::size_t fi = 0,
                        std::size_t ti = 0) {
    if (fi == filter.size()) return ti == topic.size();
    if (filter[fi] == "#") return true;  // trailing wildcard, parent level included
    if (ti == topic.size()) return false;
    if (filter[fi] != "+" && filter[fi] != topic[ti]) return false;
    return topic_match(filter, topic, fi + 1, ti + 1);
}

}  // namespace oracle
