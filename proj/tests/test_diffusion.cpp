#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "diffbgm/diffusion.hpp"
#include "diffbgm/pianoroll.hpp"

using namespace diffbgm;

namespace {

// Trivial predictors for formula-level checks.
struct ZeroNet : NoisePredictor {
  Tensor predict(const Tensor& x, int, const ConditionFeatures*) const override {
    return Tensor(x.dims);
  }
};

struct EchoNet : NoisePredictor {
  Tensor target;
  Tensor predict(const Tensor&, int, const ConditionFeatures*) const override {
    return target;
  }
};

}  // namespace

TEST_CASE("linear schedule endpoints and product") {
  auto s = make_schedule("linear", 1000, 1e-4, 0.02);
  CHECK(s.beta_at(1) == Catch::Approx(1e-4).epsilon(1e-15));
  CHECK(s.beta_at(1000) == Catch::Approx(0.02).epsilon(1e-15));

  // independent high-precision product oracle (long double running product)
  long double prod = 1.0L;
  for (int t = 1; t <= 1000; ++t) {
    long double beta = 1e-4L + (t - 1) / 999.0L * (0.02L - 1e-4L);
    prod *= (1.0L - beta);
  }
  CHECK(s.alpha_bar_at(1000) ==
        Catch::Approx(static_cast<double>(prod)).epsilon(1e-8));
  // magnitude sanity from the independent oracle
  CHECK(static_cast<double>(prod) == Catch::Approx(4.04e-5).epsilon(0.01));
}

TEST_CASE("constant schedule: abar_3 = 0.125 at beta 0.5") {
  auto s = make_schedule("constant", 3, 0.5, 0.5);
  CHECK(s.alpha_bar_at(3) == Catch::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("schedule invariants") {
  auto s = make_schedule("linear", 500, 1e-4, 0.02);
  for (int t = 1; t <= 500; ++t) {
    CHECK(s.beta_at(t) > 0.0);
    CHECK(s.beta_at(t) < 1.0);
    CHECK(s.alpha_at(t) == 1.0 - s.beta_at(t));
    if (t > 1) {
      CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
      // exact product identity
      CHECK(s.alpha_bar_at(t) ==
            Catch::Approx(s.alpha_bar_at(t - 1) * s.alpha_at(t)).epsilon(1e-15));
    }
  }
}

TEST_CASE("schedule rejects invalid bounds") {
  CHECK_THROWS_AS(make_schedule("linear", 0, 1e-4, 0.02), ConfigError);
  CHECK_THROWS_AS(make_schedule("linear", 10, 0.0, 0.02), ConfigError);
  CHECK_THROWS_AS(make_schedule("linear", 10, 0.3, 0.2), ConfigError);
  CHECK_THROWS_AS(make_schedule("linear", 10, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(make_schedule("cosine", 10, 1e-4, 0.02), ConfigError);
}

TEST_CASE("q_sample formula points") {
  auto s = make_schedule("linear", 100, 1e-4, 0.02);
  Tensor x0({4}), eps({4});
  for (int i = 0; i < 4; ++i) eps.v[i] = i + 1.0;

  SECTION("zero x0 leaves only the noise term") {
    Tensor xt = q_sample(x0, 50, eps, s);
    double b = std::sqrt(1.0 - s.alpha_bar_at(50));
    for (int i = 0; i < 4; ++i) CHECK(xt.v[i] == Catch::Approx(b * eps.v[i]));
  }
  SECTION("zero eps scales x0 by sqrt(abar)") {
    for (int i = 0; i < 4; ++i) x0.v[i] = 2.0;
    Tensor zero({4});
    Tensor xt = q_sample(x0, 70, zero, s);
    for (int i = 0; i < 4; ++i)
      CHECK(xt.v[i] == Catch::Approx(std::sqrt(s.alpha_bar_at(70)) * 2.0));
  }
  SECTION("t out of range") {
    CHECK_THROWS_AS(q_sample(x0, 0, eps, s), std::out_of_range);
    CHECK_THROWS_AS(q_sample(x0, 101, eps, s), std::out_of_range);
  }
}

TEST_CASE("q_sample Monte Carlo statistics") {
  auto s = make_schedule("linear", 1000, 1e-4, 0.02);
  Tensor x0({8});
  Rng init(4);
  for (double& v : x0.v) v = init.normal();

  for (int t : {1, 100, 500, 1000}) {
    const int draws = 10000;
    std::vector<double> mean(8, 0.0), m2(8, 0.0);
    Rng rng(1000 + t);
    Tensor eps({8});
    for (int d = 0; d < draws; ++d) {
      for (double& v : eps.v) v = rng.normal();
      Tensor xt = q_sample(x0, t, eps, s);
      for (int i = 0; i < 8; ++i) {
        double delta = xt.v[i] - mean[i];
        mean[i] += delta / (d + 1);
        m2[i] += delta * (xt.v[i] - mean[i]);
      }
    }
    double want_var = 1.0 - s.alpha_bar_at(t);
    double se_mean = std::sqrt(want_var / draws);
    double se_var = want_var * std::sqrt(2.0 / (draws - 1));
    for (int i = 0; i < 8; ++i) {
      double want_mean = std::sqrt(s.alpha_bar_at(t)) * x0.v[i];
      CHECK(std::abs(mean[i] - want_mean) < 3.0 * se_mean);
      CHECK(std::abs(m2[i] / (draws - 1) - want_var) < 3.0 * se_var);
    }
  }
}

TEST_CASE("closed form matches composed single-step forward transitions") {
  auto s = make_schedule("linear", 50, 1e-3, 0.05);
  Tensor x0({4});
  x0.v = {1.0, -1.0, 0.5, 2.0};
  const int t = 50, draws = 10000;
  std::vector<double> mean(4, 0.0), m2(4, 0.0);
  Rng rng(55);
  for (int d = 0; d < draws; ++d) {
    Tensor x = x0;  // iterate q(x_t | x_{t-1}) step by step
    for (int step = 1; step <= t; ++step)
      for (int i = 0; i < 4; ++i)
        x.v[i] = std::sqrt(1.0 - s.beta_at(step)) * x.v[i] +
                 std::sqrt(s.beta_at(step)) * rng.normal();
    for (int i = 0; i < 4; ++i) {
      double delta = x.v[i] - mean[i];
      mean[i] += delta / (d + 1);
      m2[i] += delta * (x.v[i] - mean[i]);
    }
  }
  double want_var = 1.0 - s.alpha_bar_at(t);
  double se_mean = std::sqrt(want_var / draws);
  double se_var = want_var * std::sqrt(2.0 / (draws - 1));
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(mean[i] - std::sqrt(s.alpha_bar_at(t)) * x0.v[i]) <
          3.0 * se_mean);
    CHECK(std::abs(m2[i] / (draws - 1) - want_var) < 3.0 * se_var);
  }
}

TEST_CASE("training loss endpoints") {
  auto s = make_schedule("linear", 100, 1e-4, 0.02);
  Tensor x0({64});
  Rng rng(8);
  Tensor eps({64});
  for (double& v : eps.v) v = rng.normal();

  SECTION("zero net gives mean(eps^2)") {
    ZeroNet net;
    double want = 0.0;
    for (double v : eps.v) want += v * v;
    want /= 64.0;
    CHECK(training_loss(x0, 10, eps, nullptr, net, s) == Catch::Approx(want));
  }
  SECTION("oracle net that returns eps gives zero") {
    EchoNet net;
    net.target = eps;
    CHECK(training_loss(x0, 10, eps, nullptr, net, s) == 0.0);
  }
  SECTION("shape mismatch is an error") {
    EchoNet net;
    net.target = Tensor({8});
    CHECK_THROWS_AS(training_loss(x0, 10, eps, nullptr, net, s),
                    std::invalid_argument);
  }
}

TEST_CASE("p_sample_step formula") {
  SECTION("zero net, zero noise divides by sqrt(alpha)") {
    auto s = make_schedule("constant", 10, 0.1, 0.1);
    ZeroNet net;
    Tensor x({4});
    x.v = {1.0, 2.0, -1.0, 0.0};
    Tensor noise({4});
    Tensor out = p_sample_step(x, 5, nullptr, net, noise, s);
    for (int i = 0; i < 4; ++i)
      CHECK(out.v[i] == Catch::Approx(x.v[i] / std::sqrt(0.9)).margin(1e-15));
  }
  SECTION("hand-computed scalar case") {
    // alpha_t = 0.99, abar_t = 0.5 via a custom schedule object
    NoiseSchedule s;
    s.N = 1;
    s.beta = {0.01};
    s.alpha = {0.99};
    s.alpha_bar = {0.5};
    EchoNet net;
    net.target = Tensor({1});
    net.target.v[0] = 0.2;
    Tensor x({1});
    x.v[0] = 1.0;
    Tensor noise({1});
    Tensor out = p_sample_step(x, 1, nullptr, net, noise, s);
    double want = (1.0 - 0.01 * 0.2 / std::sqrt(0.5)) / std::sqrt(0.99);
    CHECK(out.v[0] == Catch::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("sample_tensor is deterministic in its seed") {
  auto s = make_schedule("linear", 10, 1e-3, 0.05);
  ZeroNet net;
  Tensor a = sample_tensor(net, nullptr, s, {2, 4, 4}, 42);
  Tensor b = sample_tensor(net, nullptr, s, {2, 4, 4}, 42);
  CHECK(a.v == b.v);
  Tensor c = sample_tensor(net, nullptr, s, {2, 4, 4}, 43);
  CHECK(a.v != c.v);
}
