// Copyright 2026 The todpt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <set>

#include "todpt/common.hpp"

using namespace todpt;

TEST_CASE("string helpers") {
  CHECK(trim("  a b \t\n") == "a b");
  CHECK(trim("   ").empty());
  CHECK(split_whitespace(" a  bb\tc ") == std::vector<std::string>{"a", "bb", "c"});
  CHECK(split_whitespace("").empty());
  CHECK(to_lower("MLM³ Ab") == "mlm³ ab");
  CHECK(to_upper("crm") == "CRM");
  CHECK(hex64(0) == "0000000000000000");
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("fnv1a matches the reference offset basis and test vector") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("derive_seed separates keys and salts") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 10; ++s)
    for (const char* k : {"MLM", "DSP", "CRM"})
      for (std::uint64_t salt = 0; salt < 5; ++salt) seen.insert(derive_seed(s, k, salt));
  CHECK(seen.size() == 150);
  CHECK(derive_seed(3, "x", 1) == derive_seed(3, "x", 1));
}

TEST_CASE("uniform_index stays in range and covers it") {
  Rng rng(5);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    auto k = uniform_index(rng, 7);
    REQUIRE(k < 7);
    ++hits[k];
  }
  for (int h : hits) CHECK(h > 800);
  CHECK_THROWS(uniform_index(rng, 0));
}

TEST_CASE("uniform01 lies in [0, 1)") {
  Rng rng(9);
  double lo = 1, hi = 0;
  for (int i = 0; i < 10000; ++i) {
    double u = uniform01(rng);
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("shuffle_in_place is a seeded permutation") {
  std::vector<int> a(20), b;
  for (int i = 0; i < 20; ++i) a[i] = i;
  b = a;
  Rng r1(1), r2(1);
  shuffle_in_place(a, r1);
  shuffle_in_place(b, r2);
  CHECK(a == b);
  std::set<int> s(a.begin(), a.end());
  CHECK(s.size() == 20);
}
