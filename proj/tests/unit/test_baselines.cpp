#include "doctest.h"

#include "nsfs/models.hpp"
#include "nsfs/sgld.hpp"
#include "test_util.hpp"

#include <cmath>
#include <set>

using namespace nsfs;

namespace {

/// Flat log density in `d` dimensions with `n` uninformative data rows.
class FlatModel final : public BayesModel {
 public:
  FlatModel(Index d, Index n) : d_(d) {
    data_.features.resize(n, 0);
    data_.targets = Vector::Zero(n);
  }
  Index dim() const override { return d_; }
  Task task() const override { return Task::density; }
  const Dataset& data() const override { return data_; }
  double log_prior(const Eigen::Ref<const Vector>&, Vector*) const override { return 0.0; }
  double log_lik(const Eigen::Ref<const Vector>&, const Dataset&, Index, Vector*) const override {
    return 0.0;
  }

 private:
  Index d_;
  Dataset data_;
};

/// Gradient blows up once theta leaves the unit ball.
class ExplodingModel final : public BayesModel {
 public:
  ExplodingModel() {
    data_.features.resize(1, 0);
    data_.targets = Vector::Zero(1);
  }
  Index dim() const override { return 1; }
  Task task() const override { return Task::density; }
  const Dataset& data() const override { return data_; }
  double log_prior(const Eigen::Ref<const Vector>& th, Vector* g) const override {
    if (g) (*g)(0) += std::abs(th(0)) > 1.0 ? std::nan("") : 10.0;
    return 0.0;
  }
  double log_lik(const Eigen::Ref<const Vector>&, const Dataset&, Index, Vector*) const override {
    return 0.0;
  }

 private:
  Dataset data_;
};

}  // namespace

TEST_CASE("schedule arithmetic and validation") {
  const SgldSchedule s{1e-3, 10.0, 0.55};
  CHECK(s(0) == doctest::Approx(1e-3 / std::pow(10.0, 0.55)).epsilon(1e-15));
  for (Index i = 0; i < 100; ++i) {
    CHECK(s(i) > 0.0);
    CHECK(s(i + 1) < s(i));
  }
  CHECK_THROWS_AS((SgldSchedule{1e-3, 10.0, 0.5}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((SgldSchedule{0.0, 10.0, 0.6}.validate()), std::invalid_argument);
  CHECK_NOTHROW((SgldSchedule{1e-3, 10.0, 1.0}.validate()));
}

TEST_CASE("kept iterates: last third, evenly spread, or burn-in and thinning") {
  SgldOptions o;
  o.iterations = 300;
  o.samples = 100;
  const auto k = sgld_kept_iterations(o);
  REQUIRE(k.size() == 100);
  CHECK(k.front() == 200);
  CHECK(k.back() == 299);
  o.iterations = 900;
  const auto spread = sgld_kept_iterations(o);
  CHECK(spread.front() == 600);
  CHECK(spread[1] - spread[0] == 3);
  CHECK(spread.back() < 900);

  o.burn_in = 10;
  o.thin = 5;
  o.iterations = 1000;
  o.samples = 20;
  const auto t = sgld_kept_iterations(o);
  REQUIRE(t.size() == 20);
  CHECK(t.back() == 995);
  CHECK(t[1] - t[0] == 5);

  o.samples = 1000;
  CHECK_THROWS_AS(sgld_kept_iterations(o), std::invalid_argument);
  o.burn_in = -1;
  o.iterations = 50;
  o.samples = 100;
  CHECK_THROWS_AS(sgld_kept_iterations(o), std::invalid_argument);
}

TEST_CASE("minibatches are distinct, in range and seed-determined") {
  for (Index it = 0; it < 50; ++it) {
    const auto b = draw_batch(100, 32, 7, it);
    REQUIRE(b.size() == 32);
    std::set<Index> u(b.begin(), b.end());
    CHECK(u.size() == 32);
    CHECK(*u.begin() >= 0);
    CHECK(*u.rbegin() < 100);
    CHECK(b == draw_batch(100, 32, 7, it));
  }
  CHECK(draw_batch(5, 5, 1, 3) == std::vector<Index>{0, 1, 2, 3, 4});
  // Every row is equally likely.
  std::vector<int> hits(10, 0);
  for (Index it = 0; it < 5000; ++it) {
    for (Index i : draw_batch(10, 3, 2, it)) ++hits[i];
  }
  for (int h : hits) CHECK(std::abs(h - 1500) < 4 * std::sqrt(1500.0));
}

TEST_CASE("flat target: increments have variance lambda(i)") {
  FlatModel m(1, 4);
  const SgldSchedule s{0.5, 2.0, 0.7};
  const Index reps = 10000;
  Eigen::ArrayXd inc(reps);
  for (Index r = 0; r < reps; ++r) {
    SgldOptions o;
    o.iterations = 4;
    o.samples = 4;
    o.burn_in = 0;
    o.batch_size = 2;
    o.seed = static_cast<std::uint64_t>(r);
    const auto set = sgld_run(m, s, o);
    inc(r) = set.samples(3, 0) - set.samples(2, 0);
  }
  const auto mom = testutil::moments(inc);
  CHECK(std::abs(mom.var - s(3)) < 3 * mom.se_var);
  CHECK(std::abs(mom.mean) < 3 * mom.se_mean);
}

TEST_CASE("noiseless full-batch SGLD is gradient ascent with half the step, bit for bit") {
  ConjugateGaussianModel m(0.2, 1.5, 0.5, testutil::normals(8, 4));
  const SgldSchedule s{0.05, 3.0, 0.6};
  SgldOptions o;
  o.iterations = 60;
  o.samples = 1;
  o.burn_in = 59;
  o.batch_size = 8;
  o.inject_noise = false;
  const auto set = sgld_run(m, s, o);
  SgdOptions g;
  g.iterations = 60;
  g.batch_size = 8;
  const Vector theta = sgd_run(m, StepSchedule{0.025, 3.0, 0.6}, g);
  CHECK(set.samples(0, 0) == theta(0));
}

TEST_CASE("SGLD on the conjugate model recovers the posterior") {
  ConjugateGaussianModel m(0.0, 1.0, 1.0, sample_gaussian_observations(1.0, 1.0, 10, 7));
  // Ten chains of 1e5 iterations each; one chain alone has too few effective samples
  // to resolve the variance to 5%.
  const Index chains = 10, kept = 50000;
  Eigen::ArrayXd pooled(chains * kept);
  for (Index c = 0; c < chains; ++c) {
    SgldOptions o;
    o.iterations = 100000;
    o.burn_in = 50000;
    o.thin = 1;
    o.samples = kept;
    o.batch_size = 10;
    o.seed = static_cast<std::uint64_t>(c + 1);
    pooled.segment(c * kept, kept) = sgld_run(m, SgldSchedule{2.0, 10.0, 0.55}, o).samples.col(0).array();
  }
  const double mean = pooled.mean();
  const double var = (pooled - mean).square().mean();
  INFO("mean " << mean << " var " << var);
  CHECK(std::abs(mean - m.posterior_mean()) < 0.05 * std::abs(m.posterior_mean()));
  CHECK(std::abs(var - m.posterior_var()) < 0.05 * m.posterior_var());
}

TEST_CASE("SGD converges to the posterior mode and respects stationary points") {
  ConjugateGaussianModel m(0.0, 1.0, 1.0, sample_gaussian_observations(1.0, 1.0, 10, 7));
  SgdOptions o;
  o.iterations = 3000;
  o.batch_size = 10;
  const Vector th = sgd_run(m, StepSchedule{1e-2, 1.0, 0.0}, o);
  CHECK(std::abs(th(0) - m.posterior_mean()) < 1e-6);

  SgdOptions at;
  at.iterations = 50;
  at.batch_size = 10;
  at.init = Vector::Constant(1, m.posterior_mean());
  const Vector still = sgd_run(m, StepSchedule{1e-2, 1.0, 0.0}, at);
  CHECK(std::abs(still(0) - m.posterior_mean()) < 1e-14);

  FlatModel flat(3, 2);
  SgdOptions z;
  z.iterations = 10;
  z.batch_size = 1;
  CHECK((sgd_run(flat, StepSchedule{}, z).array() == 0.0).all());
}

TEST_CASE("argument and numeric errors") {
  FlatModel m(1, 4);
  SgldOptions o;
  o.iterations = 10;
  o.samples = 2;
  o.batch_size = 5;
  CHECK_THROWS_AS(sgld_run(m, SgldSchedule{}, o), std::invalid_argument);
  o.batch_size = 2;
  o.init = Vector::Zero(3);
  CHECK_THROWS_AS(sgld_run(m, SgldSchedule{}, o), std::invalid_argument);

  ExplodingModel e;
  SgdOptions s;
  s.iterations = 10;
  s.batch_size = 1;
  try {
    sgd_run(e, StepSchedule{0.06, 1.0, 0.0}, s);
    FAIL("expected NumericError");
  } catch (const NumericError& err) {
    CHECK(std::string(err.what()).find("iteration 2") != std::string::npos);
  }
}

TEST_CASE("prior initialisation differs from the origin and is seeded") {
  ConjugateGaussianModel m(3.0, 1.0, 1.0, testutil::normals(4, 1));
  SgdOptions o;
  o.iterations = 0;
  o.batch_size = 4;
  o.init_from_prior = true;
  o.seed = 8;
  const Vector a = sgd_run(m, StepSchedule{}, o);
  CHECK(a(0) != 0.0);
  CHECK(a(0) == sgd_run(m, StepSchedule{}, o)(0));
  o.init_from_prior = false;
  CHECK(sgd_run(m, StepSchedule{}, o)(0) == 0.0);
}
