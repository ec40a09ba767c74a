#pragma once

// Hand-computed metric fixtures.

#include <cmath>
#include <cstddef>
#include <vector>

namespace dyroad::testkit {

struct RegressionFixture {
  std::vector<double> preds, truths;
  double mae, rmse;
};

// preds [1, 2] vs [2, 4]: errors 1 and 2.
inline RegressionFixture two_point_fixture() { return {{1, 2}, {2, 4}, 1.5, std::sqrt(2.5)}; }

// Errors 2, 2, 0, 4, 0: |e| sums to 8, e^2 sums to 24.
inline RegressionFixture five_row_regression() {
  return {{3, -1, 2, 0, 5}, {1, 1, 2, 4, 5}, 8.0 / 5.0, std::sqrt(24.0 / 5.0)};
}

struct RankingFixture {
  std::size_t classes;
  std::vector<double> scores;
  std::vector<std::size_t> truth;
  std::vector<double> acc;  // acc[n - 1] = Acc@n
};

// Ranks of the true class by row: 1, 2 (tie, lower id first), 3, 4 (all tied), 2.
inline RankingFixture five_row_ranking() {
  return {4,
          {0.1, 0.9, 0.3, 0.2,
           0.5, 0.5, 0.1, 0.0,
           0.2, 0.3, 0.4, 0.1,
           0.0, 0.0, 0.0, 0.0,
           0.7, 0.1, 0.2, 0.6},
          {1, 1, 0, 3, 3},
          {0.2, 0.6, 0.8, 1.0}};
}

}  // namespace dyroad::testkit
