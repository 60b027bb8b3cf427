#include <catch2/catch_amalgamated.hpp>

#include "msadm/common.hpp"
#include "msadm/rng.hpp"

using namespace msadm;

TEST_CASE("fnv1a64 matches the published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("mix_seed separates tags and stays deterministic") {
  CHECK(mix_seed(1, "alpha") == mix_seed(1, "alpha"));
  CHECK(mix_seed(1, "alpha") != mix_seed(1, "beta"));
  CHECK(mix_seed(1, "alpha") != mix_seed(2, "alpha"));
}

TEST_CASE("fmt_double round-trips through parse_double") {
  for (double v : {0.1, 1.0, -3.25, 1e-9, 123456.789, 0.0}) {
    CHECK(parse_double(fmt_double(v)) == v);
  }
  CHECK(fmt_double(0.1) == "0.1");
  CHECK(fmt_double(1.0) == "1");
}

TEST_CASE("fmt_fixed renders locale-independent decimals") {
  CHECK(fmt_fixed(3.14159, 2) == "3.14");
  CHECK(fmt_fixed(0.05, 1) == "0.1");
  CHECK(fmt_fixed(12.0, 1) == "12.0");
  CHECK(fmt_fixed(0.0, 1) == "0.0");
  CHECK(fmt_fixed(-1.5, 0) == "-2");
  CHECK(fmt_fixed(2.0, 0) == "2");
  CHECK(fmt_fixed(99.95, 1) == "100.0");
}

TEST_CASE("parse_double rejects trailing garbage") {
  CHECK(parse_double("1.5e3") == 1500.0);
  CHECK_THROWS_AS(parse_double("abc"), ParseError);
  CHECK_THROWS_AS(parse_double("1.5x"), ParseError);
  CHECK_THROWS_AS(parse_double(""), ParseError);
}

TEST_CASE("string helpers") {
  CHECK(trim("  a b  ") == "a b");
  CHECK(trim("") == "");
  CHECK(to_lower("AbC") == "abc");
  const auto lines = split_lines("a\r\nb\nc");
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "a");
  CHECK(lines[1] == "b");
  CHECK(lines[2] == "c");
}

TEST_CASE("rng is deterministic and well-ranged") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  Rng c(7);
  for (int i = 0; i < 100; ++i) {
    CHECK(c.index(10) < 10);
  }
  CHECK(Rng(1).index(1) == 0);

  // Box-Muller normals should have roughly unit spread over many draws.
  Rng d(3);
  double sum = 0.0, sq = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double x = d.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.05);
  CHECK(std::fabs(var - 1.0) < 0.1);
}

TEST_CASE("rng shuffle is a permutation") {
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7, 8};
  Rng r(5);
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("schema error keeps the raw payload") {
  SchemaError e("bad header", "RAW TEXT");
  CHECK(e.raw == "RAW TEXT");
  CHECK(std::string(e.what()) == "bad header");
}
