#include <doctest.h>

#include <algorithm>
#include <vector>

#include "oracles.hpp"
#include "trellis/core.hpp"
#include "trellis/rng.hpp"

using trellis::Err;
using trellis::Error;
using trellis::Timestamp;

TEST_CASE("timestamp parses and round-trips verbatim") {
    auto t = Timestamp::parse("1589469825.165538");
    CHECK(t.secs() == 1589469825u);
    CHECK(t.frac() == "165538");
    CHECK(t.str() == "1589469825.165538");

    CHECK(Timestamp::parse("0").str() == "0");
    CHECK(Timestamp::parse("7.000").str() == "7.000");
    CHECK(Timestamp::parse("7.5000000000009").str() == "7.500000000000");  // 13th digit dropped
}

TEST_CASE("timestamp rejects malformed input") {
    for (const char* bad : {"", ".", "1.", ".5", "-4", "4.-1", "abc", "1.2.3", "1e9", " 1"}) {
        CHECK_THROWS_AS((void)Timestamp::parse(bad), Error);
    }
    try {
        (void)Timestamp::parse("x");
    } catch (const Error& e) {
        CHECK(e.code() == Err::malformed_timestamp);
    }
}

TEST_CASE("timestamp ordering matches exact rational comparison") {
    std::vector<std::string> fixed = {"0",       "0.0",    "0.000001", "1",          "1.5",
                                      "1.50",    "1.500001", "2",      "1589469825", "1589469825.1",
                                      "1589469825.099999"};
    for (const auto& a : fixed) {
        for (const auto& b : fixed) {
            auto ta = Timestamp::parse(a);
            auto tb = Timestamp::parse(b);
            int want = oracle::ts_compare(a, b);
            int got = ta < tb ? -1 : (tb < ta ? 1 : 0);
            CAPTURE(a);
            CAPTURE(b);
            CHECK(got == want);
            CHECK((ta == tb) == (want == 0));
        }
    }

    trellis::Rng rng(20260816);
    for (int i = 0; i < 2000; ++i) {
        auto make = [&] {
            std::string s = std::to_string(rng.below(4000000000ull));
            int digits = rng.irange(0, 12);
            if (digits > 0) {
                s.push_back('.');
                for (int d = 0; d < digits; ++d) s.push_back(static_cast<char>('0' + rng.irange(0, 9)));
            }
            return s;
        };
        std::string a = make(), b = make();
        auto ta = Timestamp::parse(a);
        auto tb = Timestamp::parse(b);
        int want = oracle::ts_compare(a, b);
        int got = ta < tb ? -1 : (tb < ta ? 1 : 0);
        CHECK(got == want);
    }
}

TEST_CASE("timestamp equal values with different spellings stay distinct strings") {
    auto a = Timestamp::parse("12.5");
    auto b = Timestamp::parse("12.500");
    CHECK(a == b);
    CHECK(a.str() != b.str());
}

TEST_CASE("timestamp nanos round trip") {
    auto t = Timestamp::from_nanos(1589469825165538000ll);
    CHECK(t.str() == "1589469825.165538");
    CHECK(t.unix_nanos() == 1589469825165538000ll);
    auto t2 = t.plus_nanos(2000);
    CHECK(t2.str() == "1589469825.165540");
    CHECK(Timestamp::parse("3").unix_nanos() == 3000000000ll);
}

TEST_CASE("civil time split matches iterative oracle and known anchors") {
    auto epoch = trellis::civil_from_timestamp(Timestamp::parse("0"));
    CHECK(epoch.year == 1970);
    CHECK(epoch.month == 1);
    CHECK(epoch.day == 1);
    CHECK(epoch.hour == 0);

    auto may = trellis::civil_from_timestamp(Timestamp::parse("1589469825"));
    CHECK(may.year == 2020);
    CHECK(may.month == 5);
    CHECK(may.day == 14);
    CHECK(may.hour == 15);
    CHECK(may.minute == 23);
    CHECK(may.second == 45);

    trellis::Rng rng(42);
    for (int i = 0; i < 3000; ++i) {
        std::uint64_t secs = rng.below(4102444800ull);  // through 2100
        auto got = trellis::civil_from_timestamp(Timestamp(secs, ""));
        auto want = oracle::civil_from_unix(secs);
        CAPTURE(secs);
        CHECK(got.year == want.year);
        CHECK(got.month == want.month);
        CHECK(got.day == want.day);
        CHECK(got.hour == want.hour);
        CHECK(got.minute == want.minute);
        CHECK(got.second == want.second);
    }
}

TEST_CASE("feature registry is closed and spells units") {
    CHECK(trellis::is_registry_feature("co2"));
    CHECK(trellis::is_registry_feature("weight"));
    CHECK(trellis::is_registry_feature("occupancy"));
    CHECK_FALSE(trellis::is_registry_feature("vdd"));
    CHECK_FALSE(trellis::is_registry_feature("CO2"));
    CHECK(trellis::feature_registry.size() == 8);
}
