#include <cmath>
#include <numeric>
#include <vector>

#include "../oracles.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "ss3m/errors.hpp"
#include "ss3m/model.hpp"
#include "ss3m/random.hpp"

using namespace ss3m;

namespace {

// Per-term sum of log densities, written out directly.
double oracle_log_likelihood(const ModelState& st, const Corpus& c, const Hyperparameters& h) {
  double ll = 0.0;
  const std::size_t num_p = st.b.size();
  for (std::size_t s = 0; s < st.phi.size(); ++s) {
    for (std::size_t p = 0; p < num_p; ++p) {
      const auto row = st.phi[s].row(p);
      std::vector<double> a(row.size(), h.token_concentration[s]);
      ll += oracle::log_dirichlet(row, a);
    }
  }
  for (double b : st.b) ll += oracle::log_gamma_pdf(b, h.b_shape, h.b_scale);
  ll += oracle::log_gamma_pdf(st.bstar, h.bstar_shape, h.bstar_scale);
  for (std::size_t d = 0; d < st.theta.rows(); ++d) {
    std::vector<double> a(num_p);
    for (std::size_t p = 0; p < num_p; ++p) {
      const bool on = st.activations(d, p) != 0;
      ll += std::log(on ? h.activation_prior : 1.0 - h.activation_prior);
      a[p] = on ? st.b[p] : st.bstar;
    }
    ll += oracle::log_dirichlet(st.theta.row(d), a);
    for (std::size_t s = 0; s < c.num_sources(); ++s) {
      for (std::size_t n = 0; n < c.tokens[d][s].size(); ++n) {
        const auto p = static_cast<std::size_t>(st.z[d][s][n]);
        ll += std::log(std::max(st.theta(d, p), 1e-300)) + std::log(st.phi[s](p, c.tokens[d][s][n]));
      }
    }
  }
  return ll;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("prior row examples") {
  CHECK(dirichlet_prior_row(std::vector<std::uint8_t>{1, 0}, std::vector<double>{10.0, 7.0}, 0.01) ==
        std::vector<double>{10.0, 0.01});
  CHECK(dirichlet_prior_row(std::vector<std::uint8_t>{0, 0, 0}, std::vector<double>{1, 2, 3}, 0.3) ==
        std::vector<double>{0.3, 0.3, 0.3});
  CHECK(dirichlet_prior_row(std::vector<std::uint8_t>{1, 1}, std::vector<double>{3.0, 4.0}, 0.5) ==
        std::vector<double>{3.0, 4.0});
}

TEST_CASE("prior row over every mask up to twelve phenotypes") {
  Rng rng(11);
  for (std::size_t num_p = 1; num_p <= 12; ++num_p) {
    std::vector<double> b(num_p);
    for (auto& x : b) x = rng.gamma(10.0, 1.0);
    const double bstar = rng.gamma(1.0, 0.1) + 1e-12;
    for (std::uint32_t mask = 0; mask < (1u << num_p); ++mask) {
      std::vector<std::uint8_t> active(num_p);
      for (std::size_t p = 0; p < num_p; ++p) active[p] = (mask >> p) & 1u;
      const auto row = dirichlet_prior_row(active, b, bstar);
      for (std::size_t p = 0; p < num_p; ++p) {
        REQUIRE(row[p] > 0.0);
        REQUIRE(row[p] == (active[p] ? b[p] : bstar));
      }
    }
  }
}

TEST_CASE("hyperparameter validation") {
  Hyperparameters h;
  CHECK_NOTHROW(h.validate());
  auto bad = h;
  bad.activation_prior = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = h;
  bad.num_labeled = 71;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = h;
  bad.bstar_scale = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = h;
  bad.token_concentration = {0.01, -1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("vocabulary rejects duplicates") {
  CHECK_THROWS_AS(Vocabulary({"a", "b", "a"}), DataError);
  Vocabulary v({"x", "y"});
  CHECK(v.find("y") == TokenId{1});
  CHECK_FALSE(v.find("z").has_value());
}

TEST_CASE("generate is reproducible and valid") {
  const auto h = fixture::small_hyper(4, 2, 2);
  const std::vector<std::size_t> vocab{20, 30};
  const DocLengthSpec lengths{PoissonLength{20.0}, FixedLength{5}};
  const auto a = generate(h, vocab, lengths, 30, 7);
  const auto b = generate(h, vocab, lengths, 30, 7);
  CHECK(a.corpus == b.corpus);
  CHECK(a.truth == b.truth);
  CHECK_NOTHROW(a.corpus.validate());
  CHECK_NOTHROW(a.truth.validate(a.corpus));
  for (std::size_t d = 0; d < 30; ++d) CHECK(a.corpus.tokens[d][1].size() == 5);
  const auto c = generate(h, vocab, lengths, 30, 8);
  CHECK_FALSE(c.truth == a.truth);
}

TEST_CASE("activation prior near one activates everything") {
  auto h = fixture::small_hyper(10, 0, 1);
  h.activation_prior = 1.0 - 1e-12;
  const std::vector<std::size_t> vocab{5};
  const auto g = generate(h, vocab, DocLengthSpec{FixedLength{1}}, 1000, 3);
  const auto& a = g.truth.activations.data();
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  CHECK(mean > 0.999);
}

TEST_CASE("large token concentration gives near-uniform phi") {
  auto h = fixture::small_hyper(1, 0, 1);
  h.token_concentration = {1000.0};
  const std::size_t num_v = 10;
  const double v = static_cast<double>(num_v);
  const double var = (1.0 / v) * (1.0 - 1.0 / v) / (1000.0 * v + 1.0);
  std::vector<double> sums(num_v, 0.0);
  const int draws = 100;
  for (int i = 0; i < draws; ++i) {
    const auto g = generate(h, std::vector<std::size_t>{num_v}, DocLengthSpec{FixedLength{0}}, 1,
                            derive_seed(100, static_cast<std::uint64_t>(i)));
    for (std::size_t w = 0; w < num_v; ++w) sums[w] += g.truth.phi[0](0, w);
  }
  const double se = std::sqrt(var / draws);
  for (std::size_t w = 0; w < num_v; ++w) CHECK(std::fabs(sums[w] / draws - 1.0 / v) < 3.0 * se);
}

TEST_CASE("generated token marginals match the truth") {
  auto h = fixture::small_hyper(3, 0, 1);
  h.token_concentration = {0.5};
  const std::size_t num_v = 20;
  const auto g = generate(h, std::vector<std::size_t>{num_v}, DocLengthSpec{FixedLength{1000}}, 100, 21);
  std::vector<std::uint64_t> counts(num_v, 0);
  std::vector<double> probs(num_v, 0.0);
  for (std::size_t d = 0; d < 100; ++d) {
    for (auto w : g.corpus.tokens[d][0]) ++counts[w];
    for (std::size_t w = 0; w < num_v; ++w) {
      for (std::size_t p = 0; p < 3; ++p) probs[w] += g.truth.theta(d, p) * g.truth.phi[0](p, w) / 100.0;
    }
  }
  CHECK(oracle::chi_squared_pvalue(counts, probs) > 0.001);
}

TEST_CASE("labels from activations") {
  ModelState st;
  st.theta = Matrix<double>(2, 3, 1.0 / 3.0);
  st.activations = Matrix<std::uint8_t>(2, 3);
  st.activations(0, 1) = 1;
  st.activations(1, 2) = 1;
  st.b = {1, 1, 1};
  const auto labels = labels_from_activations(st, 2);
  CHECK(labels.num_labels() == 2);
  CHECK(labels.entries(0, 0) == LabelState::Unknown);
  CHECK(labels.entries(0, 1) == LabelState::Present);
  CHECK(labels.entries(1, 1) == LabelState::Unknown);
}

TEST_CASE("degenerate one-token likelihood") {
  auto h = fixture::small_hyper(1, 0, 1);
  const auto corpus = fixture::make_corpus({1}, {{{0}}});
  ModelState st;
  st.theta = Matrix<double>(1, 1, 1.0);
  st.phi = {Matrix<double>(1, 1, 1.0)};
  st.z = {{{0}}};
  st.activations = Matrix<std::uint8_t>(1, 1, 1);
  st.b = {2.0};
  st.bstar = 0.5;
  // Single-coordinate Dirichlets have density 1; the rest are the Gamma
  // and Bernoulli terms.
  const double expected = std::log(0.1) + oracle::log_gamma_pdf(2.0, 10.0, 1.0) +
                          oracle::log_gamma_pdf(0.5, 0.01, 1.0);
  CHECK(complete_data_log_likelihood(st, corpus, h) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("likelihood agrees with the per-term oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    auto h = fixture::small_hyper(2, 1, 1);
    h.token_concentration = {0.3 + rng.uniform()};
    std::vector<std::vector<std::vector<TokenId>>> tokens(2, std::vector<std::vector<TokenId>>(1));
    ModelState st;
    st.theta = Matrix<double>(2, 2);
    st.activations = Matrix<std::uint8_t>(2, 2);
    st.phi = {Matrix<double>(2, 3)};
    st.b = {rng.gamma(10, 1), rng.gamma(10, 1)};
    st.bstar = rng.gamma(2, 0.5) + 1e-3;
    for (std::size_t p = 0; p < 2; ++p) rng.dirichlet(std::vector<double>(3, 1.0), st.phi[0].row(p));
    st.z.resize(2, std::vector<std::vector<Assignment>>(1));
    for (std::size_t d = 0; d < 2; ++d) {
      rng.dirichlet(std::vector<double>(2, 1.0), st.theta.row(d));
      for (std::size_t p = 0; p < 2; ++p) st.activations(d, p) = rng.bernoulli(0.5);
      const auto n = rng.below(4);
      for (std::uint64_t i = 0; i < n; ++i) {
        tokens[d][0].push_back(static_cast<TokenId>(rng.below(3)));
        st.z[d][0].push_back(static_cast<Assignment>(rng.below(2)));
      }
    }
    const auto corpus = fixture::make_corpus({3}, tokens);
    const double got = complete_data_log_likelihood(st, corpus, h);
    const double want = oracle_log_likelihood(st, corpus, h);
    REQUIRE(std::fabs(got - want) <= 1e-10 * std::max(1.0, std::fabs(want)));
  }
}

TEST_CASE("gamma term peaks at the gamma mode") {
  auto h = fixture::small_hyper(1, 0, 1);
  const auto corpus = fixture::make_corpus({1}, {{{}}});
  ModelState st;
  st.theta = Matrix<double>(1, 1, 1.0);
  st.phi = {Matrix<double>(1, 1, 1.0)};
  st.z = {{{}}};
  st.activations = Matrix<std::uint8_t>(1, 1, 0);
  st.bstar = 0.5;
  double best_b = 0.0, best = -INFINITY;
  for (int i = 1; i <= 400; ++i) {
    st.b = {0.05 * i};
    const double ll = complete_data_log_likelihood(st, corpus, h);
    if (ll > best) {
      best = ll;
      best_b = st.b[0];
    }
  }
  CHECK(best_b == doctest::Approx((h.b_shape - 1.0) * h.b_scale));
}

TEST_CASE("zero-probability token gives minus infinity") {
  auto h = fixture::small_hyper(1, 0, 1);
  const auto corpus = fixture::make_corpus({2}, {{{1}}});
  ModelState st;
  st.theta = Matrix<double>(1, 1, 1.0);
  st.phi = {Matrix<double>(1, 2)};
  st.phi[0](0, 0) = 1.0;
  st.z = {{{0}}};
  st.activations = Matrix<std::uint8_t>(1, 1, 1);
  st.b = {2.0};
  st.bstar = 0.5;
  const double ll = complete_data_log_likelihood(st, corpus, h);
  CHECK(std::isinf(ll));
  CHECK(ll < 0.0);
}

TEST_CASE("phenotype summary ordering") {
  const auto corpus = fixture::make_corpus({3}, {{{0}}});
  ModelState st;
  st.theta = Matrix<double>(1, 2, 0.5);
  st.phi = {Matrix<double>(2, 3)};
  st.phi[0](0, 0) = 0.7;
  st.phi[0](0, 1) = 0.2;
  st.phi[0](0, 2) = 0.1;
  for (std::size_t v = 0; v < 3; ++v) st.phi[0](1, v) = 1.0 / 3.0;
  st.b = {1.0, 1.0};
  const auto top2 = phenotype_summary(st, corpus, 2);
  REQUIRE(top2.size() == 2);
  CHECK(top2[0].tokens == std::vector<TokenWeight>{{"s0_t0", 0.7}, {"s0_t1", 0.2}});
  const auto all = phenotype_summary(st, corpus, 10);
  CHECK(all[0].tokens.size() == 3);
  CHECK(all[1].tokens[0].token == "s0_t0");
  CHECK(all[1].tokens[1].token == "s0_t1");
  CHECK(all[1].tokens[2].token == "s0_t2");
}

}
