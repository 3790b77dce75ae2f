#include "murphy/gradcheck.hpp"
#include "murphy/relgraph.hpp"
#include "support.hpp"

#include <doctest.h>

#include <numeric>

using namespace murphy;
using test::gaussian;
using test::random_labels;

namespace {

using Consistency = std::optional<std::array<Mat<double>, kNumTypes>>;

Consistency consistency_of(const std::array<std::vector<int>, kNumTypes>& labels, int width) {
  Consistency c;
  c.emplace();
  for (int r = 0; r < kNumTypes; ++r) (*c)[r] = label_consistency<double>(labels[r], width);
  return c;
}

}  // namespace

TEST_CASE("feature correlation oracle") {
  Mat<double> f(2, 2);
  f << 1, 0, 0, 1;
  const auto m = feature_correlation(f);
  // softmax([1, 0]) by hand
  const double hi = std::exp(1.0) / (std::exp(1.0) + 1.0);
  CHECK(m(0, 0) == doctest::Approx(hi).epsilon(1e-12));
  CHECK(m(0, 1) == doctest::Approx(1 - hi).epsilon(1e-12));
  CHECK(m(1, 0) == doctest::Approx(1 - hi).epsilon(1e-12));
  CHECK(m(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(m(0, 1) == doctest::Approx(0.2689).epsilon(1e-4));
}

TEST_CASE("identical rows give a uniform correlation") {
  Mat<double> f = Mat<double>::Ones(5, 3);
  const auto m = feature_correlation(f);
  CHECK((m.array() - 0.2).abs().maxCoeff() < 1e-12);
}

TEST_CASE("correlation rows are stochastic for any finite input") {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 200; ++k) {
    std::uniform_int_distribution<int> ub(1, 12);
    const int b = ub(rng);
    Mat<double> f = gaussian(b, 7, rng, k % 2 ? 100.0 : 1e-3);
    if (k % 5 == 0) f.row(0).setZero();
    const auto m = feature_correlation(f);
    CHECK(m.allFinite());
    CHECK((m.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("label consistency") {
  Mat<double> expect(3, 3);
  expect << 1, 1, 0, 1, 1, 0, 0, 0, 1;
  CHECK(label_consistency<double>({0, 0, 1}, 2) == expect);
  CHECK(label_consistency<double>({0, 1, 2}, 3) == Mat<double>::Identity(3, 3));
  CHECK(label_consistency<double>({2, 2, 2}, 3) == Mat<double>::Ones(3, 3));
  CHECK_THROWS_AS(label_consistency<double>({0, 3}, 3), std::out_of_range);
}

TEST_CASE("dynamic adjacency modes") {
  std::mt19937_64 rng(2);
  Mat<double> f(2, 2);
  f << 1, 0, 0, 1;
  ad::Tape<double> t;
  const auto m = feature_correlation(t.constant(f));

  SUBCASE("training with identity consistency keeps the diagonal") {
    std::array<std::vector<int>, kNumTypes> labels;
    labels.fill({0, 1});
    const auto adj = dynamic_adjacency(m, consistency_of(labels, 2), GraphMode::Training);
    const Mat<double> diag = m.value().diagonal().asDiagonal();
    for (const auto& s : adj.relations) CHECK(s.value() == diag);
  }
  SUBCASE("training with equal labels keeps M") {
    std::array<std::vector<int>, kNumTypes> labels;
    labels.fill({1, 1});
    for (const auto& s : dynamic_adjacency(m, consistency_of(labels, 2), GraphMode::Training).relations)
      CHECK(s.value() == m.value());
  }
  SUBCASE("inference uses M for every relation") {
    for (const auto& s : dynamic_adjacency(m, Consistency{}, GraphMode::Inference).relations)
      CHECK(s.value() == m.value());
  }
  SUBCASE("label use is mode checked") {
    std::array<std::vector<int>, kNumTypes> labels;
    labels.fill({0, 1});
    CHECK_THROWS(dynamic_adjacency(m, consistency_of(labels, 2), GraphMode::Inference));
    CHECK_THROWS(dynamic_adjacency(m, Consistency{}, GraphMode::Training));
  }
}

TEST_CASE("R-GCN structural oracles") {
  std::mt19937_64 rng(3);

  SUBCASE("zero relations and identity self weights pass non-negative input through") {
    RgcnConfig c;
    c.layer_norm = false;
    c.hidden = 4;
    RgcnParams<double> p(c, 4, rng);
    for (auto& layer : p.relation)
      for (auto& w : layer) w.value.setZero();
    for (auto& w : p.self) w.value = Mat<double>::Identity(4, 4);
    const Mat<double> f = gaussian(5, 4, rng).cwiseAbs();
    ad::Tape<double> t;
    const auto fv = t.constant(f);
    const auto out = rgcn_forward(fv, dynamic_adjacency(feature_correlation(fv), Consistency{}, GraphMode::Inference), p);
    CHECK(out.hidden.value() == f);
  }

  SUBCASE("single node by hand") {
    RgcnConfig c;
    c.layer_norm = false;
    c.layers = 1;
    c.hidden = 3;
    RgcnParams<double> p(c, 4, rng);
    const Mat<double> f = gaussian(1, 4, rng);
    ad::Tape<double> t;
    const auto fv = t.constant(f);
    const auto adj = dynamic_adjacency(feature_correlation(fv), Consistency{}, GraphMode::Inference);
    const double s11 = adj.relations[0].value()(0, 0);
    CHECK(s11 == doctest::Approx(1.0));
    Mat<double> pre = f * p.self[0].value;
    for (int r = 0; r < kNumTypes; ++r) pre += s11 * f * p.relation[0][r].value;
    CHECK(rgcn_forward(fv, adj, p).hidden.value().isApprox(pre.cwiseMax(0.0), 1e-14));
  }

  SUBCASE("fused output keeps F in its first columns") {
    RgcnParams<double> p(RgcnConfig{}, 6, rng);
    const Mat<double> f = gaussian(7, 6, rng);
    ad::Tape<double> t;
    const auto fv = t.constant(f);
    const auto out = rgcn_forward(fv, dynamic_adjacency(feature_correlation(fv), Consistency{}, GraphMode::Inference), p);
    CHECK(out.fused.cols() == 6 + 32);
    CHECK(out.fused.value().leftCols(6) == f);
  }

  SUBCASE("permutation equivariance") {
    RgcnConfig c;
    c.hidden = 5;
    RgcnParams<double> p(c, 6, rng);
    const Mat<double> f = gaussian(6, 6, rng);
    std::array<std::vector<int>, kNumTypes> labels;
    for (auto& l : labels) l = random_labels(6, 3, rng);
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat<double> fp(6, 6);
    std::array<std::vector<int>, kNumTypes> lp;
    for (int i = 0; i < 6; ++i) {
      fp.row(i) = f.row(perm[i]);
      for (int r = 0; r < kNumTypes; ++r) lp[r].push_back(labels[r][perm[i]]);
    }
    ad::Tape<double> t;
    const auto a = t.constant(f), b = t.constant(fp);
    const auto ea = rgcn_forward(a, dynamic_adjacency(feature_correlation(a), consistency_of(labels, 3), GraphMode::Training), p);
    const auto eb = rgcn_forward(b, dynamic_adjacency(feature_correlation(b), consistency_of(lp, 3), GraphMode::Training), p);
    for (int i = 0; i < 6; ++i) CHECK(eb.fused.value().row(i).isApprox(ea.fused.value().row(perm[i]), 1e-12));
  }
}

TEST_CASE("R-GCN gradients through M, layer norm and relations") {
  for (std::uint64_t seed : {10u, 11u, 12u}) {
    std::mt19937_64 rng(seed);
    RgcnConfig c;
    c.hidden = 5;
    RgcnParams<double> p(c, 6, rng);
    Parameter<double> f(gaussian(5, 6, rng));
    std::array<std::vector<int>, kNumTypes> labels;
    for (auto& l : labels) l = random_labels(5, 2, rng);
    const auto cons = consistency_of(labels, 2);
    const Mat<double> w = gaussian(5, 11, rng);
    auto params = list_parameters<double>(p);
    params.push_back({"F", &f});
    const auto r = check_gradients(
        params,
        [&](ad::Tape<double>& t) {
          const auto fv = t.parameter(f);
          return ad::inner(rgcn_forward(fv, dynamic_adjacency(feature_correlation(fv), cons, GraphMode::Training), p).fused, w);
        },
        1e-5);
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("non-finite activations are reported") {
  std::mt19937_64 rng(4);
  RgcnConfig c;
  c.layer_norm = false;
  RgcnParams<double> p(c, 3, rng);
  p.self[0].value.setConstant(std::numeric_limits<double>::infinity());
  ad::Tape<double> t;
  const auto fv = t.constant(Mat<double>::Ones(2, 3));
  CHECK_THROWS_AS(rgcn_forward(fv, dynamic_adjacency(feature_correlation(fv), Consistency{}, GraphMode::Inference), p),
                  NonFiniteError);
}
