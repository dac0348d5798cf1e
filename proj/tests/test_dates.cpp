#include <catch2/catch_amalgamated.hpp>

#include "smsn/dates.hpp"

using smsn::Date;

TEST_CASE("serial round trip covers leap years") {
  const Date start{2019, 12, 1};
  for (long k = 0; k < 900; ++k) {
    const Date d = start.plus_days(k);
    CHECK(Date::from_serial(d.serial()) == d);
  }
  CHECK(Date{2020, 2, 28}.plus_days(1) == Date{2020, 2, 29});
  CHECK(Date{2020, 2, 29}.plus_days(1) == Date{2020, 3, 1});
  CHECK(Date{2021, 2, 28}.plus_days(1) == Date{2021, 3, 1});
}

TEST_CASE("known serial anchors") {
  CHECK(Date{1970, 1, 1}.serial() == 0);
  CHECK(Date{2020, 1, 22}.serial() == 18283);
  CHECK(Date{2020, 3, 1}.days_until(Date{2020, 6, 8}) == 99);
  CHECK(Date{2020, 6, 8}.days_until(Date{2020, 3, 1}) == -99);
}

TEST_CASE("ordering follows the calendar") {
  CHECK(Date{2020, 3, 1} < Date{2020, 3, 2});
  CHECK(Date{2020, 2, 29} < Date{2020, 3, 1});
  CHECK(Date{2019, 12, 31} < Date{2020, 1, 1});
}

TEST_CASE("iso formatting and parsing") {
  CHECK(Date{2020, 6, 8}.iso() == "2020-06-08");
  CHECK(smsn::parse_iso_date("2020-06-08") == Date{2020, 6, 8});
  CHECK(smsn::parse_iso_date("1999-12-31") == Date{1999, 12, 31});
  CHECK_THROWS_AS(smsn::parse_iso_date("2020/06/08"), smsn::parse_error);
  CHECK_THROWS_AS(smsn::parse_iso_date("2020-6-8"), smsn::parse_error);
  CHECK_THROWS_AS(smsn::parse_iso_date("garbage"), smsn::parse_error);
}

TEST_CASE("m/d/yy parsing used by wide CSV headers") {
  CHECK(smsn::parse_mdy_date("1/22/20") == Date{2020, 1, 22});
  CHECK(smsn::parse_mdy_date("12/31/20") == Date{2020, 12, 31});
  CHECK(smsn::parse_mdy_date("3/5/2020") == Date{2020, 3, 5});
  CHECK_THROWS_AS(smsn::parse_mdy_date("1-22-20"), smsn::parse_error);
  CHECK_THROWS_AS(smsn::parse_mdy_date("1/22"), smsn::parse_error);
}
