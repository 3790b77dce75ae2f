#include "murphy/metrics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace murphy;

namespace {

std::vector<int> categories(const SegmentSequence& s) {
  std::vector<int> out;
  for (const auto& seg : s) out.push_back(seg.category);
  return out;
}

std::vector<int> random_string(std::mt19937_64& rng, int max_len, int alphabet) {
  std::uniform_int_distribution<int> len(0, max_len), sym(0, alphabet - 1);
  std::vector<int> s(len(rng));
  for (auto& x : s) x = sym(rng);
  return s;
}

std::vector<int> random_stream(std::mt19937_64& rng, int n, int cats) {
  std::uniform_int_distribution<int> run(1, 15), cat(0, cats - 1);
  std::vector<int> out;
  while (static_cast<int>(out.size()) < n) out.insert(out.end(), run(rng), cat(rng));
  out.resize(n);
  return out;
}

}  // namespace

TEST_CASE("average precision by hand") {
  Eigen::VectorXd s(4);
  s << 0.9, 0.8, 0.2, 0.1;
  const double ap = average_precision(s, {true, false, true, false});
  CHECK(ap == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
  CHECK(100 * ap == doctest::Approx(83.33).epsilon(1e-4));
  CHECK(std::isnan(average_precision(s, {false, false, false, false})));
  CHECK(average_precision(s, {true, true, false, false}) == 1.0);
}

TEST_CASE("tied scores form one threshold") {
  Eigen::VectorXd s(4);
  s << 0.5, 0.5, 0.5, 0.5;
  CHECK(average_precision(s, {true, false, false, true}) == doctest::Approx(0.5));
  s << 0.9, 0.5, 0.5, 0.1;
  // thresholds 0.9 -> P=1,R=1/2; 0.5 -> P=2/3,R=1
  CHECK(average_precision(s, {true, true, false, false}) == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0));
}

TEST_CASE("mAP matches the threshold-sweep oracle on random instances") {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 200; ++k) {
    std::uniform_int_distribution<int> nd(1, 100), cd(1, 6);
    const int n = nd(rng), c = cd(rng);
    Eigen::MatrixXd scores(n, c);
    // Coarse grid on half the instances so ties occur.
    std::uniform_int_distribution<int> grid(0, 9);
    std::uniform_real_distribution<double> u(0, 1);
    const bool coarse = k % 2 == 0;
    for (Eigen::Index i = 0; i < scores.size(); ++i) scores.data()[i] = coarse ? grid(rng) / 10.0 : u(rng);
    std::vector<int> labels(n);
    std::uniform_int_distribution<int> ld(0, c - 1);
    for (auto& l : labels) l = ld(rng);
    CHECK(std::abs(mean_average_precision(scores, labels) - oracle::mean_average_precision(scores, labels)) < 1e-9);
  }
}

TEST_CASE("AP is invariant under strictly monotone score transforms") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-2, 2);
  std::bernoulli_distribution coin(0.3);
  for (int k = 0; k < 50; ++k) {
    Eigen::VectorXd s(40);
    std::vector<bool> pos(40);
    for (int i = 0; i < 40; ++i) {
      s[i] = u(rng);
      pos[i] = coin(rng);
    }
    pos[0] = true;
    const Eigen::VectorXd t = s.array().exp() * 3.0 + 1.0;
    const Eigen::VectorXd cube = s.array().cube();
    const double ap = average_precision(s, pos);
    CHECK(average_precision(t, pos) == doctest::Approx(ap).epsilon(1e-12));
    CHECK(average_precision(cube, pos) == doctest::Approx(ap).epsilon(1e-12));
  }
}

TEST_CASE("mAP of one-hot ground truth is 100; absent categories are excluded") {
  std::vector<int> labels = {0, 2, 2, 1, 0, 2};
  Eigen::MatrixXd one_hot = Eigen::MatrixXd::Zero(6, 5);
  for (int i = 0; i < 6; ++i) one_hot(i, labels[i]) = 1.0;
  CHECK(mean_average_precision(one_hot, labels) == 100.0);

  // Changing scores of absent categories 3 and 4 leaves the mean unchanged.
  Eigen::MatrixXd s = Eigen::MatrixXd::Random(6, 5);
  const double before = mean_average_precision(s, labels);
  s.col(3).setRandom();
  s.col(4) = -s.col(4);
  CHECK(mean_average_precision(s, labels) == before);
  double manual = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<bool> pos(6);
    for (int i = 0; i < 6; ++i) pos[i] = labels[i] == c;
    manual += average_precision(s.col(c), pos);
  }
  CHECK(before == doctest::Approx(100 * manual / 3));
}

TEST_CASE("SAP summaries") {
  using AT = AnnotationType;
  std::map<AT, double> m = {{AT::S, 88.01}, {AT::T, 70.18}, {AT::IAO, 61.30},
                            {AT::I, 64.22}, {AT::A, 61.15}, {AT::O, 66.33}};
  CHECK(std::abs(compute_sap(m, SapKind::SAP3) - 73.16) <= 0.01);
  CHECK(std::abs(compute_sap(m, SapKind::SAP6) - 68.53) <= 0.01);

  std::map<AT, double> flat;
  for (auto t : kAllTypes) flat[t] = 42.5;
  CHECK(compute_sap(flat, SapKind::SAP3) == 42.5);
  CHECK(compute_sap(flat, SapKind::SAP6) == 42.5);

  m.erase(AT::O);
  CHECK_NOTHROW(compute_sap(m, SapKind::SAP3));
  CHECK_THROWS_AS(compute_sap(m, SapKind::SAP6), std::invalid_argument);
}

TEST_CASE("eval record validation") {
  EvalRecord r;
  for (auto t : kAllTypes) {
    r.scores[index_of(t)] = Eigen::MatrixXd::Constant(2, 2, 0.5);
    r.labels[index_of(t)] = {0, 1};
  }
  r.frame_index = {0, 1};
  r.sequence_id = {0, 0};
  CHECK_NOTHROW(r.check());
  r.scores[1](0, 0) = 0.6;
  CHECK_THROWS(r.check());
}

TEST_CASE("frames to segments") {
  SUBCASE("constant stream") {
    const auto s = frames_to_segments(std::vector<int>(100, 3), 10);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == Segment{3, 0, 99});
  }
  SUBCASE("short interruption is absorbed") {
    std::vector<int> f(30, 0);
    f.insert(f.end(), 5, 1);
    f.insert(f.end(), 30, 0);
    const auto s = frames_to_segments(f, 10);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == Segment{0, 0, 64});
    CHECK(s[0].length() == 65);
  }
  SUBCASE("tolerance 0 is plain run-length encoding") {
    const std::vector<int> f = {1, 1, 2, 3, 3, 3, 1};
    const auto s = frames_to_segments(f, 0);
    CHECK(s == SegmentSequence{{1, 0, 1}, {2, 2, 2}, {3, 3, 5}, {1, 6, 6}});
    CHECK(frames_to_segments(f, 1) == s);
  }
  SUBCASE("absorbed by the longer neighbour") {
    std::vector<int> f(12, 0);
    f.insert(f.end(), 3, 1);
    f.insert(f.end(), 20, 2);
    CHECK(frames_to_segments(f, 10) == SegmentSequence{{0, 0, 11}, {2, 12, 34}});
  }
  SUBCASE("short stream collapses to one run") {
    CHECK(frames_to_segments({0, 1, 0, 2}, 10).size() == 1);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(frames_to_segments({}, 10), std::invalid_argument);
    CHECK_THROWS_AS(frames_to_segments({1}, -1), std::invalid_argument);
  }
}

TEST_CASE("segmentation properties on random streams") {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 200; ++k) {
    const auto f = random_stream(rng, 20 + k, 4);
    for (int tol : {0, 5, 10, 25}) {
      const auto s = frames_to_segments(f, tol);
      // Contiguous cover, distinct neighbours.
      CHECK(s.front().start == 0);
      CHECK(s.back().end == static_cast<int>(f.size()) - 1);
      bool ok = true;
      for (std::size_t i = 1; i < s.size(); ++i)
        ok = ok && s[i].start == s[i - 1].end + 1 && s[i].category != s[i - 1].category;
      CHECK(ok);
      // Every run long enough unless a single run remains.
      if (s.size() > 1)
        for (const auto& seg : s) CHECK(seg.length() >= tol);
      // Idempotent.
      CHECK(frames_to_segments(segments_to_frames(s), tol) == s);
    }
  }
}

TEST_CASE("edit distance") {
  CHECK(edit_distance(std::vector<int>{1, 2, 3}, std::vector<int>{1, 3}) == 1);
  CHECK(edit_distance(std::vector<int>{4, 5}, std::vector<int>{4, 5}) == 0);
  CHECK(edit_distance(std::vector<int>{}, std::vector<int>{1, 2, 3, 4}) == 4);
  CHECK(edit_distance(std::vector<int>{1, 2, 3, 4}, std::vector<int>{}) == 4);
  const SegmentSequence a = {{1, 0, 9}, {2, 10, 40}}, b = {{1, 0, 20}, {2, 21, 22}, {3, 23, 40}};
  CHECK(edit_distance(a, b) == 1);
}

TEST_CASE("edit distance matches the recursive oracle") {
  std::mt19937_64 rng(14);
  for (int k = 0; k < 200; ++k) {
    const auto a = random_string(rng, 12, 4), b = random_string(rng, 12, 4);
    CHECK(edit_distance(a, b) == oracle::edit_distance(a, b));
  }
}

TEST_CASE("edit distance is a metric") {
  std::mt19937_64 rng(15);
  for (int k = 0; k < 1000; ++k) {
    const auto a = random_string(rng, 10, 3), b = random_string(rng, 10, 3), c = random_string(rng, 10, 3);
    const int ab = edit_distance(a, b);
    CHECK(ab == edit_distance(b, a));
    CHECK(edit_distance(a, a) == 0);
    CHECK((ab == 0) == (a == b));
    CHECK(edit_distance(a, c) <= ab + edit_distance(b, c));
  }
}

TEST_CASE("segment category strings") {
  std::vector<int> f(15, 2);
  f.insert(f.end(), 15, 0);
  CHECK(categories(frames_to_segments(f, 10)) == std::vector<int>{2, 0});
}
