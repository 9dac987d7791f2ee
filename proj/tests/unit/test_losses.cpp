#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "graphmar/losses.hpp"
#include "graphmar/selftest/gradcheck.hpp"

using namespace graphmar;
using graphmar::gradcheck::random_tensor;

TEST_CASE("min-max normalization") {
  const Tensor n = minmax_norm(Tensor({3}, std::vector<float>{0.0f, 5.0f, 10.0f}));
  CHECK(n[0] == 0.0f);
  CHECK(n[1] == doctest::Approx(0.5));
  CHECK(n[2] == 1.0f);
  CHECK(minmax_norm(Tensor({2, 2}, 3.0f)).max() == 0.0f);
  const Tensor r = minmax_norm(random_tensor({5, 7}, 1, -9.0f, 4.0f));
  CHECK(r.min() == 0.0f);
  CHECK(r.max() == 1.0f);
}

TEST_CASE("alignment loss skip rule and identity") {
  const Tensor a = random_tensor({6, 6}, 2);
  const Tensor g = random_tensor({6, 6}, 3);
  for (auto v : {AlignmentVariant::kMse, AlignmentVariant::kKl}) {
    CHECK(geometric_alignment_loss(a, g, 0, v) == 0.0);
    CHECK(geometric_alignment_loss(a, g, 1, v) == 0.0);
    CHECK(geometric_alignment_loss(g, g, 2, v) == 0.0);
    CHECK(geometric_alignment_loss(a, g, 3, v) > 0.0);
  }
  CHECK_THROWS_AS(geometric_alignment_loss(a, Tensor({5, 6}), 2), std::invalid_argument);
  CHECK(parse_alignment_variant("kl") == AlignmentVariant::kKl);
  CHECK(to_string(AlignmentVariant::kMse) == "mse");
  CHECK_THROWS_AS(parse_alignment_variant("l2"), std::invalid_argument);
}

TEST_CASE("alignment loss matches scalar oracles") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor a = random_tensor({7, 5}, seed, -2.0f, 3.0f);
    const Tensor g = random_tensor({7, 5}, seed + 50, 0.0f, 1.0f);
    const double amin = a.min(), amax = a.max(), gmin = g.min(), gmax = g.max();
    double mse = 0.0;
    std::vector<double> p(a.size()), q(a.size());
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double na = (a[i] - amin) / (amax - amin);
      const double ng = (g[i] - gmin) / (gmax - gmin);
      mse += (na - ng) * (na - ng);
      p[i] = ng + 1e-8;
      q[i] = na + 1e-8;
      sp += p[i];
      sq += q[i];
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) kl += (p[i] / sp) * std::log((p[i] / sp) / (q[i] / sq));
    CHECK(geometric_alignment_loss(a, g, 2) == doctest::Approx(mse / a.size()).epsilon(1e-6));
    CHECK(geometric_alignment_loss(a, g, 2, AlignmentVariant::kKl) == doctest::Approx(kl).epsilon(1e-5));
  }
}

TEST_CASE("alignment loss absorbs affine rescaling") {
  const Tensor a = random_tensor({8, 8}, 4);
  const Tensor g = random_tensor({8, 8}, 5, 0.0f, 1.0f);
  Tensor a2 = a, g2 = g;
  for (float& v : a2.data()) v = 3.5f * v - 2.0f;
  for (float& v : g2.data()) v = 0.25f * v + 7.0f;
  CHECK(geometric_alignment_loss(a2, g2, 2) == doctest::Approx(geometric_alignment_loss(a, g, 2)).epsilon(1e-5));
}

TEST_CASE("batch alignment loss on the tape") {
  const Tensor att = random_tensor({3, 1, 4, 4}, 6);
  const Tensor den = random_tensor({3, 1, 4, 4}, 7, 0.0f, 1.0f);
  const int counts[] = {2, 1, 3};
  ad::Tape t;
  const double batched = t.value(alignment_loss(t, t.constant(att), den, counts))[0];
  double expect = 0.0;
  for (int n : {0, 2}) {
    Tensor a({4, 4}), g({4, 4});
    std::copy_n(att.data().begin() + n * 16, 16, a.data().begin());
    std::copy_n(den.data().begin() + n * 16, 16, g.data().begin());
    expect += geometric_alignment_loss(a, g, counts[n]);
  }
  CHECK(batched == doctest::Approx(expect / 3.0).epsilon(1e-5));

  const int singles[] = {1, 0, 1};
  ad::Tape t2;
  const ad::Var leaf = t2.leaf(att);
  const ad::Var zero = alignment_loss(t2, leaf, den, singles);
  CHECK(t2.value(zero)[0] == 0.0f);
  t2.backward(zero);
  CHECK(t2.grad(leaf).max() == 0.0f);
  CHECK(t2.grad(leaf).min() == 0.0f);

  const int two[] = {2, 2};
  CHECK_THROWS_AS(alignment_loss(t, t.constant(att), den, two), std::invalid_argument);
}

TEST_CASE("total loss") {
  const Tensor y = random_tensor({1, 1, 4, 4}, 8);
  CHECK(total_loss(y, y, 0.0).total == 0.0);
  Tensor y1 = y;
  for (float& v : y1.data()) v += 1.0f;
  CHECK(total_loss(y1, y, 0.0).total == doctest::Approx(1.0));
  const LossReport r = total_loss(y1, y, 0.4, 0.0);
  CHECK(r.total == doctest::Approx(r.l1));
  const LossReport d = total_loss(y1, y, 0.4);
  CHECK(d.lambda == doctest::Approx(0.1));
  CHECK(d.total == doctest::Approx(d.l1 + 0.1 * d.graph).epsilon(1e-6));
  CHECK(d.total >= 0.0);
  CHECK_THROWS_AS(total_loss(y, Tensor({1, 1, 4, 3}), 0.0), std::invalid_argument);
}
