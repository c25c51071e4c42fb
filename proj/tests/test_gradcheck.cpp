// Copyright (c) 2026, The guideseg Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "guideseg/train/gradcheck_suite.hpp"

using namespace guideseg;

TEST_CASE("every trainable-path operation passes the finite-difference check") {
  const auto reports = train::gradcheck_suite(true);
  REQUIRE(reports.size() >= 20);
  for (const auto& r : reports) {
    INFO(r.op_name << " max_rel_err=" << r.max_rel_err);
    CHECK(r.passed(train::kGradTolerance));
    CHECK(r.n_params_checked > 0);
  }
  const auto& pipeline = reports.back();
  CHECK(pipeline.op_name.rfind("pipeline", 0) == 0);
  CHECK(pipeline.n_params_checked > 1000);

  std::ostringstream table;
  train::print_gradcheck_table(reports, table);
  CHECK(table.str().find("FAIL") == std::string::npos);
}

TEST_CASE("the quick suite omits the end-to-end pipeline") {
  const auto quick = train::gradcheck_suite(false);
  for (const auto& r : quick) CHECK(r.op_name.rfind("pipeline", 0) != 0);
}
