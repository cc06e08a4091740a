#include <cmath>
#include <fstream>

#include "doctest.h"
#include "lethe/rng.hpp"
#include "lethe/sha256.hpp"

using namespace lethe;

TEST_SUITE_BEGIN("rng_sha");

TEST_CASE("derive_seed separates streams") {
  std::uint64_t a = derive_seed(1234, "corpus");
  std::uint64_t b = derive_seed(1234, "poison");
  std::uint64_t c = derive_seed(1234, "corpus", 1);
  CHECK(a != b);
  CHECK(a != c);
  CHECK(derive_seed(1234, "corpus") == a);
}

TEST_CASE("uniform_index stays in range and covers it") {
  Rng rng(7);
  bool seen[10] = {};
  for (int i = 0; i < 2000; ++i) {
    std::uint64_t v = rng.uniform_index(10);
    REQUIRE(v < 10);
    seen[v] = true;
  }
  for (bool s : seen) CHECK(s);
}

TEST_CASE("normal moments") {
  Rng rng(42);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex(std::string{}) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex(std::string{"abc"}) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string(1000000, 'a')) ==
        "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("streaming equals one-shot") {
  Sha256 h;
  h.update("hello ");
  h.update("world");
  CHECK(h.hex() == sha256_hex(std::string{"hello world"}));
}

TEST_CASE("file digest") {
  std::string path = "sha_scratch.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "abc";
  }
  CHECK(sha256_file_hex(path) == sha256_hex(std::string{"abc"}));
  std::remove(path.c_str());
}

TEST_SUITE_END();
