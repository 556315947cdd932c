#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cpr/policy.hpp"
#include "cpr/rng.hpp"

using namespace cpr;

namespace {

Trajectory random_trajectory(Rng& rng, int T, int d, const std::string& id = "tr") {
  Trajectory tr;
  tr.id = id;
  for (int t = 0; t < T; ++t) {
    std::vector<double> row(d);
    for (double& v : row) v = rng.uniform(-2, 2);
    tr.obs.push_back(row);
    tr.actions.push_back(rng.bernoulli(0.5) ? 1 : 0);
  }
  return tr;
}

void zero_params(std::vector<Tensor*> ts) {
  for (Tensor* t : ts) std::fill(t->data().begin(), t->data().end(), 0.0);
}

}  // namespace

TEST_CASE("predict is a plain logistic map") {
  PolicyParams p0{{0.0, 0.0}, 0.0};
  CHECK(predict(p0, std::vector<double>{1.0, -3.0}) == 0.5);

  PolicyParams p1{{1.0}, 0.0};
  CHECK(predict(p1, std::vector<double>{std::log(3.0)}) == doctest::Approx(0.75).epsilon(1e-14));

  Rng rng(17);
  for (int rep = 0; rep < 50; ++rep) {
    PolicyParams p{{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)},
                   rng.uniform(-1, 1)};
    std::vector<double> x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    double z = p.intercept;  // independent scalar evaluation
    for (int j = 0; j < 3; ++j) z += p.coef[j] * x[j];
    CHECK(predict(p, x) == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-14));
    CHECK(predict(p, x) > 0.0);
    CHECK(predict(p, x) < 1.0);
  }

  CHECK_THROWS_AS(predict(p1, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("predict is strictly increasing in the logit") {
  PolicyParams p{{2.0}, -0.5};
  double prev = -1;
  for (double x = -3; x <= 3; x += 0.25) {
    double v = predict(p, std::vector<double>{x});
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("cpr_forward emits the initial-state policy for every trajectory at t=1") {
  CprModel model(Cell::rnn, 8, 2, 0, 123);
  Rng rng(5);
  auto a = model.forward(random_trajectory(rng, 4, 2, "a"));
  auto b = model.forward(random_trajectory(rng, 6, 2, "b"));
  CHECK(a[0].params.coef == b[0].params.coef);
  CHECK(a[0].params.intercept == b[0].params.intercept);
}

TEST_CASE("cpr_forward with all-zero weights gives constant p from the bias terms") {
  CprModel model(Cell::lstm, 8, 2, 0, 1);
  zero_params(model.param_tensors());
  Rng rng(6);
  auto steps = model.forward(random_trajectory(rng, 5, 2));
  for (auto& s : steps) {
    CHECK(s.params.coef == std::vector<double>{0.0, 0.0});
    CHECK(s.prob == 0.5);  // sigma(0)
  }
}

TEST_CASE("cpr_forward is causal: p_2 tracks (x_1, a_1), p_1 does not") {
  CprModel model(Cell::rnn, 8, 1, 0, 321);
  Trajectory tr;
  tr.id = "t";
  tr.obs = {{0.5}, {1.0}};
  tr.actions = {1, 0};
  auto base = model.forward(tr);

  Trajectory changed = tr;
  changed.obs[0] = {-1.5};
  changed.actions[0] = 0;
  auto moved = model.forward(changed);

  CHECK(base[0].prob == base[0].prob);
  // theta_1 identical (emitted before any history is consumed)
  CHECK(base[0].params.coef == moved[0].params.coef);
  CHECK(base[0].params.intercept == moved[0].params.intercept);
  // theta_2 differs because step 1 changed
  CHECK(base[1].params.coef != moved[1].params.coef);

  // permuting future steps leaves earlier outputs bitwise unchanged
  Trajectory longer = tr;
  longer.obs.push_back({0.3});
  longer.actions.push_back(1);
  Trajectory permuted = longer;
  std::swap(permuted.obs[2], permuted.obs[1]);
  std::swap(permuted.actions[2], permuted.actions[1]);
  auto l1 = model.forward(longer);
  auto l2 = model.forward(permuted);
  CHECK(l1[0].prob == l2[0].prob);
  CHECK(l1[0].params.coef == l2[0].params.coef);
}

TEST_CASE("cpr_forward rejects empty trajectories") {
  CprModel model(Cell::rnn, 4, 1, 0, 1);
  Trajectory tr;
  tr.id = "empty";
  CHECK_THROWS_AS(model.forward(tr), std::invalid_argument);
}

TEST_CASE("global_forward base cases") {
  const int d = 2;
  Rng rng(9);

  SUBCASE("alpha outside (0,1] is rejected") {
    CHECK_THROWS_AS(CprGlobalModel(Cell::rnn, 4, d, 0, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(CprGlobalModel(Cell::rnn, 4, d, 0, 1.5, 1), std::invalid_argument);
  }

  SUBCASE("t=1 log-odds reduce to the plain contextual policy") {
    CprGlobalModel model(Cell::rnn, 6, d, 0, 0.5, 7);
    Trajectory tr = random_trajectory(rng, 1, d);
    auto trace = model.forward(tr);
    CHECK(trace.steps[0].mu == 0.0);
    const double direct = predict_logit(trace.steps[0].theta, tr.obs[0]);
    CHECK(trace.steps[0].logodds == doctest::Approx(direct).epsilon(1e-15));
  }

  SUBCASE("alpha=1 keeps no memory of older bias updates") {
    CprGlobalModel model(Cell::rnn, 6, d, 0, 1.0, 7);
    Trajectory tr = random_trajectory(rng, 4, d);
    auto trace = model.forward(tr);
    for (size_t i = 1; i < trace.steps.size(); ++i) {
      double expected = 0;
      const auto& beta = trace.betas[i - 1];
      for (int j = 0; j < d; ++j) expected += beta[j] * tr.obs[i - 1][j];
      expected += beta[d] * tr.actions[i - 1];
      CHECK(trace.steps[i].mu == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("global_forward mu matches the unrolled recursion at alpha=0.5, T=3") {
  const int d = 2;
  CprGlobalModel model(Cell::lstm, 6, d, 0, 0.5, 11);
  Rng rng(10);
  Trajectory tr = random_trajectory(rng, 3, d);
  auto trace = model.forward(tr);

  auto dot_step = [&](const std::vector<double>& beta, int i) {
    double s = 0;
    for (int j = 0; j < d; ++j) s += beta[j] * tr.obs[i][j];
    return s + beta[d] * tr.actions[i];
  };
  // mu_3 = 0.5 <beta_2, step_2> + 0.25 <beta_1, step_1>
  const double expected = 0.5 * dot_step(trace.betas[1], 1) + 0.25 * dot_step(trace.betas[0], 0);
  CHECK(trace.steps[2].mu == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("telescoping identity holds for random configurations") {
  Rng rng(12);
  for (int rep = 0; rep < 25; ++rep) {
    const int d = 1 + static_cast<int>(rng.below(3));
    const int T = 1 + static_cast<int>(rng.below(10));
    const double alpha = 0.1 + 0.9 * rng.uniform01();
    CprGlobalModel model(Cell::rnn, 5, d, 0, alpha, rng.next_u64());
    Trajectory tr = random_trajectory(rng, T, d);
    auto trace = model.forward(tr);
    auto ex = explain_global(trace, tr);
    for (int t = 0; t < T; ++t) {
      const double total = explanation_total(ex.per_step[t]);
      CHECK(std::abs(total - trace.steps[t].logodds) < 1e-9);
    }
  }
}

TEST_CASE("explain_global structure") {
  const int d = 2;
  Rng rng(13);

  SUBCASE("T=1 contributions are coef*x plus intercept") {
    CprGlobalModel model(Cell::rnn, 4, d, 0, 0.7, 3);
    Trajectory tr = random_trajectory(rng, 1, d);
    auto ex = explain_global(model.forward(tr), tr);
    REQUIRE(ex.per_step[0].size() == 3);
    auto trace = model.forward(tr);
    CHECK(ex.per_step[0][0].value ==
          doctest::Approx(trace.steps[0].theta.coef[0] * tr.obs[0][0]).epsilon(1e-12));
    CHECK(ex.per_step[0][2].feature == "intercept");
  }

  SUBCASE("alpha=1, T=2: step-1 terms carry weight 1, no deeper terms") {
    CprGlobalModel model(Cell::rnn, 4, d, 0, 1.0, 3);
    Trajectory tr = random_trajectory(rng, 2, d);
    auto trace = model.forward(tr);
    auto ex = explain_global(trace, tr);
    // step 2 explanation: d+1 current terms then d+1 lagged terms
    REQUIRE(ex.per_step[1].size() == 2 * (d + 1));
    const auto& lag_x0 = ex.per_step[1][d + 1];
    CHECK(lag_x0.source_step == 1);
    CHECK(lag_x0.value == doctest::Approx(trace.betas[0][0] * tr.obs[0][0]).epsilon(1e-12));
  }

  SUBCASE("alpha=0.3, T=5: weight of the lag-m term is alpha*(1-alpha)^(m-1)") {
    const double alpha = 0.3;
    CprGlobalModel model(Cell::lstm, 5, d, 0, alpha, 21);
    Trajectory tr = random_trajectory(rng, 5, d);
    auto trace = model.forward(tr);
    auto ex = explain_global(trace, tr);
    // explained step 5 (index 4): entries for source step s=5-m start at
    // (d+1) + (m-1)*(d+1)
    for (int m = 1; m <= 4; ++m) {
      const double w = alpha * std::pow(1 - alpha, m - 1);
      const int s = 4 - m;
      const auto& entry = ex.per_step[4][(d + 1) * m];
      CHECK(entry.source_step == s + 1);
      CHECK(entry.value ==
            doctest::Approx(w * trace.betas[s][0] * tr.obs[s][0]).epsilon(1e-10));
    }
  }
}

TEST_CASE("global_forward is causal in the same sense as cpr_forward") {
  const int d = 2;
  CprGlobalModel model(Cell::rnn, 5, d, 0, 0.4, 14);
  Rng rng(19);
  Trajectory tr = random_trajectory(rng, 6, d);
  Trajectory permuted = tr;
  std::swap(permuted.obs[4], permuted.obs[5]);
  std::swap(permuted.actions[4], permuted.actions[5]);
  auto a = model.forward(tr);
  auto b = model.forward(permuted);
  for (int t = 0; t < 4; ++t) {
    CHECK(a.steps[t].logodds == b.steps[t].logodds);
    CHECK(a.steps[t].mu == b.steps[t].mu);
    CHECK(a.steps[t].theta.coef == b.steps[t].theta.coef);
  }
}

TEST_CASE("cpr_loss matches hand-computed values") {
  const int d = 2;

  SUBCASE("constant p=0.5 with lambda=0 gives ln 2") {
    CprModel model(Cell::rnn, 4, d, 0, 2);
    zero_params(model.param_tensors());
    Rng rng(14);
    Dataset batch{random_trajectory(rng, 3, d, "a"), random_trajectory(rng, 5, d, "b")};
    CHECK(cpr_loss(model, batch, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("perfect clamped predictions give the BCE at the clamp") {
    // zero weights with a huge head bias on the intercept output drive p to 1
    CprModel model(Cell::rnn, 4, d, 0, 2);
    zero_params(model.param_tensors());
    model.encoder().params();  // const access only
    CprModel m2 = model;
    auto named = m2.named_params();
    for (auto& [name, t] : named)
      if (name == "head.b2") (*t)[d] = 50.0;  // intercept output
    Trajectory tr;
    tr.id = "ones";
    tr.obs = {{0.0, 0.0}, {0.0, 0.0}};
    tr.actions = {1, 1};
    Dataset batch{tr};
    CHECK(cpr_loss(m2, batch, 0.0) ==
          doctest::Approx(-std::log(1.0 - ad::kProbEps)).epsilon(1e-6));
  }

  SUBCASE("lambda=0.01 equals hand-computed BCE + 0.01 * mean |theta|") {
    CprModel model(Cell::lstm, 5, d, 0, 77);
    Rng rng(15);
    Dataset batch{random_trajectory(rng, 2, d, "a"), random_trajectory(rng, 4, d, "b")};

    double bce_sum = 0, l1_sum = 0;
    long steps_total = 0;
    for (const auto& tr : batch) {
      auto steps = model.forward(tr);
      double traj = 0;
      for (size_t t = 0; t < steps.size(); ++t) {
        const double p = steps[t].prob;
        traj += tr.actions[t] ? -std::log(p) : -std::log(1 - p);
        for (double c : steps[t].params.coef) l1_sum += std::abs(c);
        ++steps_total;
      }
      bce_sum += traj / static_cast<double>(steps.size());
    }
    const double expected =
        bce_sum / batch.size() + 0.01 * l1_sum / static_cast<double>(steps_total);
    CHECK(cpr_loss(model, batch, 0.01) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("cpr_loss is non-decreasing in lambda for fixed weights") {
  CprModel model(Cell::rnn, 6, 2, 0, 4);
  Rng rng(16);
  Dataset batch{random_trajectory(rng, 4, 2, "a"), random_trajectory(rng, 3, 2, "b")};
  double prev = cpr_loss(model, batch, 0.0);
  for (double lambda : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    const double v = cpr_loss(model, batch, lambda);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("global model loss gradients agree with finite differences") {
  const int d = 1;
  CprGlobalModel model(Cell::rnn, 4, d, 0, 0.5, 5);
  Rng rng(18);
  Dataset data{random_trajectory(rng, 5, d, "a")};
  auto ptrs = pointers_to(data);

  ad::Tape tape;
  auto bound = model.bind(tape);
  ad::Value loss = bound.batch_loss(ptrs, 1e-3);
  tape.backward(loss);

  auto eval = [&](CprGlobalModel& m) { return dataset_loss(m, std::span<const Trajectory* const>(ptrs), 1e-3); };
  const double h = 1e-6;
  double worst = 0;
  auto tensors = model.param_tensors();
  for (size_t pi = 0; pi < tensors.size(); ++pi) {
    for (int i = 0; i < tensors[pi]->size(); ++i) {
      CprGlobalModel plus = model, minus = model;
      (*plus.param_tensors()[pi])[i] += h;
      (*minus.param_tensors()[pi])[i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2 * h);
      const double ag = bound.leaves()[pi].grad()[i];
      worst = std::max(worst, std::abs(ag - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  CHECK(worst < 1e-4);
}
