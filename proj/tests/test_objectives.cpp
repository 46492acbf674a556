#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "equivalence.hpp"
#include "mimnet/objectives.hpp"

using namespace mimnet;
using Td = Tensor<double>;

namespace {

const double kLog2 = std::log(2.0);

Td scalar(double v) { return Td::scalar(v); }

}  // namespace

TEST_CASE("reconstruction loss") {
  oracle::Instance w(1);
  const auto img = w.uniform({3, 8, 8}, -1, 1);
  CHECK(loss_rec(img, img, Pairing::Paired).item() == 0.0);

  // A constant offset c gives a per-pixel mean squared error of c^2.
  const double c = 0.3;
  const auto shifted = ops::add_scalar(img, c);
  CHECK(loss_rec(img, shifted, Pairing::Paired).item() == doctest::Approx(c * c).epsilon(1e-12));

  // Fine outputs are compared with the nearest-upsampled target.
  const auto up = ops::upsample_nearest2x(img);
  CHECK(loss_rec(img, up, Pairing::Paired).item() == 0.0);
  CHECK(loss_rec(img, ops::add_scalar(up, -c), Pairing::Paired).item() == doctest::Approx(c * c).epsilon(1e-12));

  CHECK(loss_rec(img, w.uniform({3, 8, 8}, -1, 1), Pairing::Paired).item() >= 0.0);
  CHECK_THROWS_AS(loss_rec(img, img, Pairing::Mismatched), ContractError);
  CHECK_THROWS_AS(loss_rec(img, w.uniform({3, 4, 4}, -1, 1), Pairing::Paired), DimensionError);
}

TEST_CASE("pseudo ground-truth loss") {
  oracle::Instance w(2);
  const std::size_t l = 3;
  // Features constant per channel and equal to h_bar: zero for any alpha.
  Td v({l, 2, 2}, {1, 1, 1, 1, -2, -2, -2, -2, 0.5, 0.5, 0.5, 0.5});
  const Td h_bar({l}, {1, -2, 0.5});
  CHECK(loss_pseudo(FeatureMap<double>{v}, w.uniform({1, 2, 2}, 0.1, 1), h_bar).item() == doctest::Approx(0.0));

  // Uniform alpha reduces to the plain spatial mean.
  const auto r = w.uniform({l, 2, 2}, -1, 1);
  const auto uniform = loss_pseudo(FeatureMap<double>{r}, Td::full({1, 2, 2}, 0.7), h_bar).item();
  double expected = 0.0;
  for (std::size_t c = 0; c < l; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += r[c * 4 + i] / 4;
    expected += std::abs(mean - h_bar[c]);
  }
  CHECK(uniform == doctest::Approx(expected).epsilon(1e-12));

  // Random instances against a loop oracle.
  for (int k = 0; k < 20; ++k) {
    const auto vi = w.uniform({l, 3, 3}, -1, 1), alpha = w.uniform({1, 3, 3}, 0, 1), h = w.uniform({l}, -1, 1);
    double total = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < 9; ++i) total += alpha[i];
    for (std::size_t c = 0; c < l; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < 9; ++i) s += vi[c * 9 + i] * alpha[i];
      ref += std::abs(s / total - h[c]);
    }
    CHECK(std::abs(loss_pseudo(FeatureMap<double>{vi}, alpha, h).item() - ref) <= 1e-10);
  }
  CHECK_THROWS_AS(loss_pseudo(FeatureMap<double>{r}, Td::zeros({1, 2, 2}), h_bar), NumericError);
}

TEST_CASE("negative log of forced scores") {
  CHECK(negative_log(scalar(0.0)).item() == 0.0);  // D = 1
  CHECK(negative_log(scalar(std::log(0.5))).item() == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("discriminator terms") {
  // All four scores at one half.
  const auto half = discriminator_terms(scalar(0.0), scalar(0.0), scalar(-kLog2), scalar(-kLog2));
  CHECK(half.total.item() == doctest::Approx(4 * kLog2).epsilon(1e-12));

  // A perfect discriminator approaches zero.
  const auto perfect = discriminator_terms(scalar(40.0), scalar(-40.0), scalar(-1e-18), scalar(-40.0));
  CHECK(perfect.total.item() < 1e-15);

  // Random instances term by term.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> logit(-4, 4), logs(-5, -0.01);
  for (int k = 0; k < 20; ++k) {
    const double rl = logit(rng), fl = logit(rng), rt = logs(rng), ft = logs(rng);
    const auto t = discriminator_terms(scalar(rl), scalar(fl), scalar(rt), scalar(ft));
    const double sr = oracle::sigmoid(rl), sf = oracle::sigmoid(fl);
    CHECK(std::abs(t.real_reality.item() + std::log(sr)) <= 1e-8);
    CHECK(std::abs(t.fake_reality.item() + std::log(1 - sf)) <= 1e-8);
    CHECK(std::abs(t.real_text.item() + rt) <= 1e-8);
    CHECK(std::abs(t.fake_text.item() + std::log(1 - std::exp(ft))) <= 1e-8);
    CHECK(std::abs(t.total.item() - (t.real_reality.item() + t.fake_reality.item() + t.real_text.item() +
                                     t.fake_text.item())) <= 1e-12);
  }
}

TEST_CASE("generator adversarial losses leave discriminator parameters without gradient") {
  oracle::Instance w(4);
  Td fake = w.uniform({3, 8, 8}, -1, 1);
  fake.set_requires_grad(true);
  ops::add(loss_generator_reality(w.disc, fake), loss_generator_text(w.disc, fake, w.ids)).backward();
  CHECK(fake.has_grad());
  ParamList<double> params;
  w.disc.collect(params, "d");
  for (const auto& p : params) {
    CHECK_MESSAGE(!p.tensor.has_grad(), p.name);
  }
}

TEST_CASE("discriminator loss does not reach the generator") {
  oracle::Instance w(5);
  const auto inputs = w.gen.encode_inputs(w.uniform({3, 8, 8}, -1, 1), w.uniform({1, 8, 8}, 0, 1));
  const auto fake = w.gen.manipulate(inputs, w.gen.texture_for(w.gen.encode_caption(w.ids)), Stage::Icm).coarse;
  loss_discriminator(w.disc, w.uniform({3, 8, 8}, -1, 1), w.ids, fake, {2, 3}).total.backward();
  CHECK(w.disc.feature.weight.has_grad());
  CHECK_FALSE(w.gen.icm.projection.has_grad());
  CHECK_FALSE(w.gen.bank.memories.has_grad());
}

TEST_CASE("randomized memory loss reaches the memories unless frozen") {
  oracle::Instance w(6);
  const auto inputs = w.gen.encode_inputs(w.uniform({3, 8, 8}, -1, 1), w.uniform({1, 8, 8}, 0, 1));
  std::mt19937_64 rng(6);
  auto sample = random_memory_manipulation(w.gen, inputs, 3, Stage::Icm, rng);
  CHECK(sample.attention.shape() == Shape{3, w.dims.memory_count});
  loss_memory_random(sample.state.output(Stage::Icm), w.disc.detached()).backward();
  double norm = 0.0;
  for (double g : w.gen.bank.memories.grad()) norm += g * g;
  CHECK(norm > 0.0);

  w.gen.bank.memories.zero_grad();
  w.gen.bank.freeze();
  auto frozen = random_memory_manipulation(w.gen, inputs, 3, Stage::Icm, rng);
  loss_memory_random(frozen.state.output(Stage::Icm), w.disc).backward();
  CHECK_FALSE(w.gen.bank.memories.has_grad());
  CHECK_FALSE(w.disc.feature.weight.has_grad());
}

TEST_CASE("loss integration") {
  GeneratorLosses<double> g;
  g.pseudo = scalar(0.5);
  g.icm.reality = scalar(1.5);
  g.icm.reconstruction = scalar(0.25);
  g.fir.text = scalar(2.0);
  g.fir.memory = scalar(3.0);

  LossWeights zero;
  zero.pseudo = 0;
  zero.icm = zero.fir = StageWeights{0, 0, 0, 0, 0};
  CHECK(integrate_generator(g, zero).item() == 0.0);

  LossWeights one = zero;
  one.fir.text = 1.0;
  CHECK(integrate_generator(g, one).item() == 2.0);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 3);
  for (int k = 0; k < 20; ++k) {
    LossWeights w;
    w.pseudo = u(rng);
    w.icm = StageWeights{u(rng), u(rng), u(rng), u(rng), u(rng)};
    w.fir = StageWeights{u(rng), u(rng), u(rng), u(rng), u(rng)};
    const double dot = w.pseudo * 0.5 + w.icm.reality * 1.5 + w.icm.reconstruction * 0.25 + w.fir.text * 2.0 +
                       w.fir.memory * 3.0;
    CHECK(std::abs(integrate_generator(g, w).item() - dot) <= 1e-12);

    DiscriminatorLosses<double> d{scalar(0.7), scalar(1.1)};
    CHECK(std::abs(integrate_discriminator(d, w).item() - (w.icm.discriminator * 0.7 + w.fir.discriminator * 1.1)) <=
          1e-12);
  }

  g.fir.memory = scalar(std::nan(""));
  try {
    integrate_generator(g, LossWeights{});
    FAIL("expected a NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("L_m/fir") != std::string::npos);
  }
  LossWeights negative;
  negative.icm.text = -1;
  CHECK_THROWS_AS(negative.validate(), InputError);
}

TEST_CASE("mismatched captions differ from the paired one") {
  std::mt19937_64 rng(8);
  const std::vector<std::vector<int>> caps = {{2, 3}, {2, 3}, {4, 5}, {6}};
  for (int k = 0; k < 50; ++k) {
    const auto m = draw_mismatched(caps, rng);
    for (std::size_t i = 0; i < caps.size(); ++i) {
      CHECK(m[i] != i);
      CHECK(caps[m[i]] != caps[i]);
    }
  }
  CHECK_THROWS_AS(draw_mismatched({{2}}, rng), InputError);
}

TEST_CASE("loss log writes a header once") {
  const auto path = std::filesystem::temp_directory_path() / "mimnet_losslog_test.csv";
  std::filesystem::remove(path);
  {
    LossLog log(path, {"a", "b"});
    log.append(0, "reconstruction", {{"b", 2.5}});
  }
  {
    LossLog log(path, {"a", "b"});
    log.append(1, "adversarial", {{"a", 1.0}, {"b", 0.5}});
  }
  std::ifstream in(path);
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  CHECK(l1 == "step,phase,a,b");
  CHECK(l2 == "0,reconstruction,,2.5");
  CHECK(l3 == "1,adversarial,1,0.5");
  std::filesystem::remove(path);
}
