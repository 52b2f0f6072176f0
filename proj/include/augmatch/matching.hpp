#ifndef AUGMATCH_MATCHING_HPP
#define AUGMATCH_MATCHING_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "augmatch/common.hpp"
#include "augmatch/data.hpp"

namespace augmatch {

// 1:M nearest-neighbor matching with replacement on a scalar score.
// sets[i] holds the M opposite-arm matches of unit i (sorted by unit index);
// counts[i] is the number of times unit i serves as a match.
struct MatchResult {
  int m = 1;
  std::vector<std::vector<int>> sets;
  std::vector<int> counts;
};

// Nearest neighbors by |score_j - score_i| within the opposite arm. Ties in
// distance are broken toward the smaller unit index, so exactly m matches are
// always selected. O(n log n): one sort per arm, then binary search plus
// two-pointer expansion per unit.
inline MatchResult match_1m(const Eigen::VectorXd& scores, const Eigen::VectorXi& a, int m) {
  const int n = static_cast<int>(scores.size());
  if (a.size() != n) throw validation_error("match_1m: length mismatch");
  if (m < 1) throw validation_error("match_1m: m must be >= 1");
  if (!scores.allFinite()) throw validation_error("match_1m: non-finite score");

  // per-arm arrays of (score, index), sorted by score then index
  std::vector<std::pair<double, int>> arm[2];
  for (int i = 0; i < n; ++i) arm[a[i]].push_back({scores[i], i});
  if (static_cast<int>(arm[0].size()) < m || static_cast<int>(arm[1].size()) < m) {
    throw validation_error("match_1m: fewer than m units in an arm");
  }
  std::sort(arm[0].begin(), arm[0].end());
  std::sort(arm[1].begin(), arm[1].end());

  MatchResult res;
  res.m = m;
  res.sets.assign(n, {});
  res.counts.assign(n, 0);

  std::vector<int> ties;
  for (int i = 0; i < n; ++i) {
    const auto& cand = arm[1 - a[i]];
    const int L = static_cast<int>(cand.size());
    const double s = scores[i];

    // find the m-th smallest distance value
    int l = static_cast<int>(std::lower_bound(cand.begin(), cand.end(), std::make_pair(s, -1)) -
                             cand.begin()) - 1;
    int r = l + 1;
    double dm = 0.0;
    for (int t = 0; t < m; ++t) {
      const double dl = l >= 0 ? s - cand[l].first : std::numeric_limits<double>::infinity();
      const double dr = r < L ? cand[r].first - s : std::numeric_limits<double>::infinity();
      if (dl <= dr) {
        dm = dl;
        --l;
      } else {
        dm = dr;
        ++r;
      }
    }

    // all candidates strictly closer than dm are in, ties at dm by index
    auto& set = res.sets[i];
    set.clear();
    ties.clear();
    for (int j = l + 1; j < r; ++j) {
      const double d = std::fabs(cand[j].first - s);
      (d < dm ? set : ties).push_back(cand[j].second);
    }
    while (l >= 0 && s - cand[l].first == dm) ties.push_back(cand[l--].second);
    while (r < L && cand[r].first - s == dm) ties.push_back(cand[r++].second);
    std::sort(ties.begin(), ties.end());
    for (int j : ties) {
      if (static_cast<int>(set.size()) == m) break;
      set.push_back(j);
    }
    std::sort(set.begin(), set.end());
    for (int j : set) ++res.counts[j];
  }
  return res;
}

// psi_n via the match-count representation:
//   n^{-1} sum_i (2 a_i - 1) {1 + K_M(i)/M} y_i.
inline double ate_matching(const Eigen::VectorXd& y, const Eigen::VectorXi& a,
                           const MatchResult& match) {
  const int n = static_cast<int>(y.size());
  if (a.size() != n || static_cast<int>(match.counts.size()) != n) {
    throw validation_error("ate_matching: length mismatch");
  }
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += (2.0 * a[i] - 1.0) * (1.0 + static_cast<double>(match.counts[i]) / match.m) * y[i];
  }
  return acc / n;
}

inline double ate_from_scores(const Dataset& d, const Eigen::VectorXd& scores, int m) {
  return ate_matching(d.y, d.a, match_1m(scores, d.a, m));
}

}  // namespace augmatch

#endif  // AUGMATCH_MATCHING_HPP
