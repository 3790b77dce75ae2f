#include "murphy/encoder.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace murphy;
using test::gaussian;

namespace {

Mat<double> encode(Encoder<double>& enc, const Mat<double>& x, Encoder<double>::State* state = nullptr) {
  ad::Tape<double> t;
  auto out = enc.encode(t.constant(x), state ? *state : std::nullopt);
  if (state) *state = out.state;
  return out.features.value();
}

EncoderConfig small(EncoderVariant v) { return {v, 6, 5, 4, 64}; }

}  // namespace

TEST_CASE("memoryless encoder is row-wise") {
  std::mt19937_64 rng(1);
  Encoder<double> enc(small(EncoderVariant::Memoryless), rng);
  const Mat<double> x = gaussian(4, 6, rng);
  const auto f = encode(enc, x);
  CHECK(f.rows() == 4);
  CHECK(f.cols() == 5);
  for (Eigen::Index r = 0; r < 4; ++r) CHECK(encode(enc, x.row(r)).isApprox(f.row(r), 1e-14));

  const Mat<double> y = gaussian(3, 6, rng);
  Mat<double> xy(7, 6);
  xy << x, y;
  Mat<double> joined(7, 5);
  joined << f, encode(enc, y);
  CHECK(encode(enc, xy).isApprox(joined, 1e-14));
}

TEST_CASE("recurrent encoder depends on frame order") {
  std::mt19937_64 rng(2);
  Encoder<double> enc(small(EncoderVariant::Recurrent), rng);
  const Mat<double> x = gaussian(5, 6, rng);
  Mat<double> shuffled = x;
  shuffled.row(0).swap(shuffled.row(3));
  const auto a = encode(enc, x);
  const auto b = encode(enc, shuffled);
  bool changed = false;
  for (Eigen::Index r = 0; r < 5; ++r) {
    // Compare row r of a with the row holding the same input in b.
    const Eigen::Index rb = r == 0 ? 3 : r == 3 ? 0 : r;
    changed = changed || !a.row(r).isApprox(b.row(rb), 1e-12);
  }
  CHECK(changed);
}

TEST_CASE("resetting state makes sequences independent") {
  std::mt19937_64 rng(3);
  Encoder<double> enc(small(EncoderVariant::Recurrent), rng);
  const Mat<double> s1 = gaussian(4, 6, rng), s2 = gaussian(4, 6, rng);
  Encoder<double>::State carried;
  encode(enc, s1, &carried);
  const auto continued = encode(enc, s2, &carried);
  CHECK_FALSE(continued.isApprox(encode(enc, s2), 1e-12));
  Encoder<double>::State reset;
  CHECK(encode(enc, s2, &reset) == encode(enc, s2));
}

TEST_CASE("zero parameters give identical activation rows") {
  for (auto v : {EncoderVariant::Memoryless, EncoderVariant::Recurrent}) {
    std::mt19937_64 rng(4);
    Encoder<double> enc(small(v), rng);
    enc.visit([](const std::string&, Parameter<double>& p) { p.value.setZero(); });
    const auto f = encode(enc, gaussian(3, 6, rng));
    CHECK(f.isZero());  // tanh(0)
  }
}

TEST_CASE("every encoder parameter receives gradient") {
  for (auto v : {EncoderVariant::Memoryless, EncoderVariant::Recurrent}) {
    std::mt19937_64 rng(5);
    Encoder<double> enc(small(v), rng);
    const Mat<double> x = gaussian(4, 6, rng), w = gaussian(4, 5, rng);
    ad::Tape<double> t;
    t.backward(ad::inner(enc.encode(t.constant(x)).features, w));
    enc.visit([](const std::string& name, Parameter<double>& p) {
      INFO(name);
      CHECK(p.grad.norm() > 0);
    });
  }
}

TEST_CASE("encoder input validation") {
  std::mt19937_64 rng(6);
  Encoder<double> enc(small(EncoderVariant::Memoryless), rng);
  ad::Tape<double> t;
  CHECK_THROWS_AS(enc.encode(t.constant(Mat<double>::Zero(2, 5))), std::invalid_argument);
  Mat<double> bad = Mat<double>::Zero(2, 6);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(enc.encode(t.constant(bad)), std::domain_error);
}
