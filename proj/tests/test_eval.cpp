#include <doctest.h>

#include "common.hpp"
#include "oracles.hpp"
#include "wsiseg/eval.hpp"

using namespace testing;
using eval::PNStage;
using eval::SlideClass;

namespace {

eval::PredictionMap row_map(std::vector<double> prob) {
  eval::PredictionMap p(1, prob.size());
  p.prob = std::move(prob);
  std::fill(p.valid.begin(), p.valid.end(), 1);
  return p;
}

eval::TruthMap row_truth(std::vector<int> labels) {
  eval::TruthMap t;
  t.rows = 1;
  t.cols = labels.size();
  t.labels = std::move(labels);
  return t;
}

eval::PredictionMap grid(std::size_t rows, std::size_t cols) {
  eval::PredictionMap p(rows, cols);
  std::fill(p.valid.begin(), p.valid.end(), 1);
  return p;
}

const eval::LesionCalibration cal{0.1, 2.0, 0.2, eval::LesionMeasure::extent};

}  // namespace

TEST_CASE("patch accuracy examples") {
  CHECK(eval::patch_accuracy(row_map({0.6, 0.4}), row_truth({1, 0})) == 1.0);
  CHECK(eval::patch_accuracy(row_map({0.5}), row_truth({1})) == 1.0);
  CHECK(eval::patch_accuracy(row_map({0.5}), row_truth({0})) == 0.0);
  CHECK_THROWS(eval::patch_accuracy(row_map({0.5, 0.2}), row_truth({-1, -1})));
}

TEST_CASE("patch accuracy ignores ignore cells and invalid cells") {
  auto p = row_map({0.9, 0.1, 0.2, 0.7});
  const auto t = row_truth({1, 0, -1, 1});
  const double base = eval::patch_accuracy(p, t);
  p.prob[2] = 0.99;
  CHECK(eval::patch_accuracy(p, t) == base);
  p.valid[3] = 0;
  CHECK(eval::patch_accuracy(p, t) == 1.0);
}

TEST_CASE("pr_auc examples") {
  const std::vector<double> good{0.9, 0.1}, bad{0.1, 0.9};
  const std::vector<int> labels{1, 0};
  CHECK(eval::pr_auc(good, labels) == 1.0);
  CHECK(eval::pr_auc(bad, labels) == 0.5);
  const std::vector<double> any{0.3, 0.8, 0.3};
  const std::vector<int> all{1, 1, 1};
  CHECK(eval::pr_auc(any, all) == 1.0);
  const std::vector<int> none{0, 0, 0};
  CHECK_THROWS(eval::pr_auc(any, none));
}

TEST_CASE("pr_auc groups tied scores") {
  // One tie group holding a positive and a negative: P = 1/2 at R = 1.
  const std::vector<double> s{0.5, 0.5};
  const std::vector<int> l{0, 1};
  CHECK(eval::pr_auc(s, l) == 0.5);
  const std::vector<int> l2{1, 0};
  CHECK(eval::pr_auc(s, l2) == 0.5);
}

TEST_CASE("pr_auc equals the brute-force oracle and the exact rational value") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> s(n);
    std::vector<int> l(n);
    const bool coarse = rng.bernoulli(0.5);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
      l[i] = rng.bernoulli(0.4);
    }
    l[rng.below(n)] = 1;
    const double ap = eval::pr_auc(s, l);
    REQUIRE(ap == pr_auc_oracle(s, l));
    CHECK(ap == doctest::Approx(pr_auc_exact(s, l)).epsilon(1e-12));
    // Strictly monotone transforms leave it unchanged.
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(3.0 * s[i]) - 7.0;
    CHECK(eval::pr_auc(t, l) == ap);
  }
}

TEST_CASE("slide class rule table") {
  CHECK(eval::slide_class(grid(5, 5), cal) == SlideClass::negative);
  auto one = grid(5, 5);
  one.prob[12] = 0.8;
  CHECK(eval::slide_class(one, cal) == SlideClass::itc);
  auto wide = grid(30, 30);
  for (std::size_t c = 0; c < 25; ++c) wide.prob[10 * 30 + c] = 0.9;
  CHECK(eval::largest_lesion_mm(wide, 0.1, eval::LesionMeasure::extent) == doctest::Approx(2.5));
  CHECK(eval::slide_class(wide, cal) == SlideClass::macro);
  auto mid = grid(30, 30);
  for (std::size_t c = 0; c < 5; ++c) mid.prob[c] = 0.9;
  CHECK(eval::slide_class(mid, cal) == SlideClass::micro);
  // Exactly 2.0 mm is still Micro; exactly 0.2 mm is ITC.
  auto twenty = grid(30, 30);
  for (std::size_t c = 0; c < 20; ++c) twenty.prob[c] = 0.9;
  CHECK(eval::slide_class(twenty, eval::LesionCalibration{0.1, 2.0, 0.2}) == SlideClass::micro);
  auto two = grid(5, 5);
  two.prob[0] = two.prob[1] = 0.9;
  CHECK(eval::slide_class(two, cal) == SlideClass::itc);
  CHECK_THROWS(eval::slide_class(one, eval::LesionCalibration{}));
}

TEST_CASE("lesions are 8-connected and invalid cells never count") {
  auto p = grid(6, 6);
  for (std::size_t k = 0; k < 5; ++k) p.prob[k * 6 + k] = 0.9;  // a diagonal
  CHECK(eval::largest_lesion_mm(p, 1.0, eval::LesionMeasure::extent) == 5.0);
  CHECK(eval::largest_lesion_mm(p, 1.0, eval::LesionMeasure::area) == doctest::Approx(std::sqrt(5.0)));
  p.valid[2 * 6 + 2] = 0;
  CHECK(eval::largest_lesion_mm(p, 1.0, eval::LesionMeasure::extent) == 2.0);
}

TEST_CASE("slide class is monotone in added tumor cells") {
  Rng rng(5);
  const eval::LesionCalibration c{0.3, 2.0, 0.2};
  for (int trial = 0; trial < 50; ++trial) {
    auto p = grid(12, 12);
    SlideClass prev = eval::slide_class(p, c);
    for (int k = 0; k < 40; ++k) {
      p.prob[rng.below(144)] = 0.9;
      const SlideClass now = eval::slide_class(p, c);
      CHECK(static_cast<int>(now) >= static_cast<int>(prev));
      prev = now;
    }
  }
}

TEST_CASE("pN stage rule table") {
  using S = SlideClass;
  auto stage = [](std::vector<S> v) { return eval::pn_stage(v); };
  CHECK(stage({S::negative, S::negative, S::negative, S::negative, S::negative}) == PNStage::pN0);
  CHECK(stage({S::itc, S::negative, S::negative, S::negative, S::negative}) == PNStage::pN0_itc);
  CHECK(stage({S::micro, S::itc, S::negative, S::negative, S::negative}) == PNStage::pN1mi);
  CHECK(stage({S::macro, S::micro, S::negative, S::negative, S::negative}) == PNStage::pN1);
  CHECK(stage({S::macro, S::macro, S::macro, S::negative, S::negative}) == PNStage::pN1);
  CHECK(stage({S::macro, S::macro, S::macro, S::macro, S::negative}) == PNStage::pN2);
  CHECK_THROWS(stage({S::macro, S::macro}));
  CHECK(std::string(eval::pn_stage_name(PNStage::pN0_itc)) == "pN0(i+)");
}

TEST_CASE("kappa: identical labelings, hand-derived reversal, constant predictions") {
  using P = PNStage;
  const std::vector<P> truth{P::pN0, P::pN0_itc, P::pN1mi, P::pN1};
  CHECK(eval::kappa(truth, truth) == 1.0);
  // Truth 0,1,2,3 against 3,2,1,0: observed squared disagreement 9+1+1+9 = 20,
  // all-pairs sum 2 * (4 * 14 - 6^2) = 40, kappa = 1 - 4 * 20 / 40 = -1.
  const std::vector<P> reversed{P::pN1, P::pN1mi, P::pN0_itc, P::pN0};
  CHECK(eval::kappa(reversed, truth) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(eval::kappa(reversed, truth) == doctest::Approx(kappa_oracle({3, 2, 1, 0}, {0, 1, 2, 3})));
  const std::vector<P> constant(4, P::pN1mi);
  CHECK(eval::kappa(constant, truth) <= 0.0);
  const std::vector<P> same(4, P::pN2);
  CHECK(eval::kappa(same, same) == 1.0);
  CHECK_THROWS(eval::kappa(std::vector<P>{}, std::vector<P>{}));
}

TEST_CASE("kappa agrees with the oracle, is symmetric and is 1 only for identical labelings") {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(12);
    std::vector<int> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(rng.below(5));
      b[i] = rng.bernoulli(0.5) ? a[i] : static_cast<int>(rng.below(5));
    }
    const double k = eval::quadratic_weighted_kappa(a, b, 5);
    CHECK(k == doctest::Approx(eval::quadratic_weighted_kappa(b, a, 5)).epsilon(1e-12));
    const bool degenerate = std::all_of(a.begin(), a.end(), [&](int v) { return v == a[0]; }) &&
                            std::all_of(b.begin(), b.end(), [&](int v) { return v == a[0]; });
    if (!degenerate) CHECK(k == doctest::Approx(kappa_oracle(a, b)).epsilon(1e-12));
    CHECK((k == 1.0) == (a == b));
  }
}
