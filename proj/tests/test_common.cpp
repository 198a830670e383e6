#include "doctest.h"
#include "rankcore/common.hpp"
#include "test_util.hpp"

using namespace rankcore;

TEST_CASE("derive_seed separates streams and is deterministic") {
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("format_exact round-trips doubles") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123, 0.0}) {
    const auto s = format_exact(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(format_sig(3.14159265358979, 4) == "3.142");
}

TEST_CASE("matrix csv round-trip is bit exact") {
  testutil::TempDir dir("csv");
  const Matrix m = testutil::random_matrix(4, 7, 11);
  write_matrix_csv(dir / "m.csv", m);
  const Matrix back = read_matrix_csv(dir / "m.csv");
  CHECK(back == m);
}

TEST_CASE("matrix csv reports the bad cell") {
  testutil::TempDir dir("csvbad");
  atomic_write(dir / "bad.csv", "1,2,3\n4,x,6\n");
  try {
    read_matrix_csv(dir / "bad.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":2:2") != std::string::npos);
  }
  atomic_write(dir / "ragged.csv", "1,2,3\n4,5\n");
  CHECK_THROWS_AS(read_matrix_csv(dir / "ragged.csv"), ParseError);
}

TEST_CASE("sha256 matches the standard test vector") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("upper_triangle is row-major over the strict upper part") {
  Matrix m(3, 3);
  m << 0, 1, 2, 9, 0, 3, 9, 9, 0;
  const Vector u = upper_triangle(m);
  REQUIRE(u.size() == 3);
  CHECK(u(0) == 1);
  CHECK(u(1) == 2);
  CHECK(u(2) == 3);
}

TEST_CASE("pearson and average ranks") {
  const std::vector<double> a = {1, 2, 3}, b = {1, 3, 2}, c = {5, 5, 5};
  CHECK(pearson(a, b) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::isnan(pearson(a, c)));
  const std::vector<double> ties = {10, 20, 20, 30};
  const auto r = average_ranks(ties);
  CHECK(r == std::vector<double>{1, 2.5, 2.5, 4});
}

TEST_CASE("atomic_write creates parent directories") {
  testutil::TempDir dir("atomic");
  atomic_write(dir / "a/b/c.txt", "hello");
  CHECK(read_file(dir / "a/b/c.txt") == "hello");
}
