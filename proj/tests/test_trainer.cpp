#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "training_checks.hpp"

using namespace mimnet;
namespace fs = std::filesystem;

namespace {

fs::path temp(const std::string& name) { return fs::temp_directory_path() / ("mimnet_trainer_" + name); }

TrainingConfig small_config() {
  TrainingConfig c;
  c.batch_size = 4;
  c.steps = 6;
  c.seed = 3;
  return c;
}

const ToyDataset& data() {
  static const ToyDataset d = make_split(24, 4, 5);
  return d;
}

}  // namespace

TEST_CASE("adam matches a scalar oracle") {
  Tensor<float> p({1}, {1.0f}, true);
  const ParamList<float> params{{"p", p}};
  Adam opt(0.1, 0.5, 0.999, 1e-8);
  double x = 1.0, m = 0.0, v = 0.0;
  const double grads[] = {0.5, -2.0, 0.25};
  for (int t = 1; t <= 3; ++t) {
    p.mutable_grad()[0] = static_cast<float>(grads[t - 1]);
    opt.step(params);
    zero_grads(params);
    m = 0.5 * m + 0.5 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    x -= 0.1 * (m / (1 - std::pow(0.5, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(p[0] == doctest::Approx(x).epsilon(1e-6));
  }
  CHECK(opt.steps_taken() == 3);
}

TEST_CASE("adam skips frozen parameters and rejects NaN gradients") {
  Tensor<float> a({1}, {1.0f}, true), b({1}, {2.0f}, true);
  const ParamList<float> params{{"a", a}, {"b", b}};
  Adam opt(0.1, 0.5, 0.999, 1e-8);
  a.mutable_grad()[0] = 1.0f;
  b.mutable_grad()[0] = 1.0f;
  b.set_requires_grad(false);
  opt.step(params);
  CHECK(a[0] != 1.0f);
  CHECK(b[0] == 2.0f);
  CHECK(opt.moments().count("b") == 0);

  a.mutable_grad()[0] = std::nanf("");
  const float before = a[0];
  CHECK_THROWS_AS(opt.step(params), NumericError);
  CHECK(a[0] == before);
}

TEST_CASE("config text round-trips and rejects bad input") {
  TrainingConfig c;
  c.set("lambda_m_fir", "0.25");
  c.set("use_tlu", "false");
  c.set("steps", "123");
  const auto back = TrainingConfig::parse("# comment\n" + c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.hash() == c.hash());
  CHECK(back.weights.fir.memory == 0.25);
  CHECK_FALSE(back.options.use_tlu);
  CHECK(back.hash() != TrainingConfig{}.hash());

  CHECK_THROWS_AS(c.set("no_such_key", "1"), InputError);
  CHECK_THROWS_AS(c.set("steps", "many"), InputError);
  TrainingConfig bad;
  bad.adam_beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = {};
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = {};
  bad.weights.icm.reconstruction = -1;
  CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("epochs override steps") {
  TrainingConfig c;
  c.batch_size = 16;
  CHECK(c.total_steps(100) == c.steps);
  c.epochs = 3;
  CHECK(c.total_steps(100) == 3 * 7);
}

TEST_CASE("schedule and batches") {
  auto c = small_config();
  c.reconstruction_steps = 2;
  c.adversarial_steps = 1;
  Trainer t(c, data().train, data().vocab);
  CHECK(t.is_reconstruction(0));
  CHECK(t.is_reconstruction(1));
  CHECK_FALSE(t.is_reconstruction(2));
  CHECK(t.is_reconstruction(3));
  const auto b = t.batch_for(5);
  CHECK(b.size() == 4);
  CHECK(std::set<std::size_t>(b.begin(), b.end()).size() == 4);
  CHECK(t.batch_for(5) == b);
}

TEST_CASE("checkpoint files round-trip and reject bad headers") {
  Trainer t(small_config(), data().train, data().vocab);
  t.run(2);
  CHECK(checks::checkpoint_round_trip(t, temp("rt.bin")));

  const auto ckpt = t.checkpoint();
  CHECK(ckpt.step() == 2);
  CHECK(ckpt.config().to_text() == small_config().to_text());
  CHECK(ckpt.vocabulary().size() == data().vocab.size());

  const auto path = temp("bad.bin");
  ckpt.save(path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) { std::ofstream(path, std::ios::binary | std::ios::trunc) << b; };

  std::string version = bytes;
  version[4] = 9;  // u32 version follows the magic
  write(version);
  try {
    Checkpoint::load(path);
    FAIL("expected a FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  write("NOPE" + bytes.substr(4));
  CHECK_THROWS_AS(Checkpoint::load(path), FormatError);
  write(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(Checkpoint::load(path), FormatError);
  write(bytes + "x");
  CHECK_THROWS_AS(Checkpoint::load(path), FormatError);
  fs::remove(path);
  CHECK_THROWS_AS(Checkpoint::load(path), FormatError);
}

TEST_CASE("restore rejects a checkpoint from another configuration") {
  Trainer t(small_config(), data().train, data().vocab);
  auto other = small_config();
  other.weights.pseudo = 0.0;
  Trainer u(other, data().train, data().vocab);
  CHECK_THROWS_AS(u.restore(t.checkpoint()), FormatError);
}

TEST_CASE("same seed gives bit-identical training") {
  CHECK(checks::same_seed_identical(small_config(), data().train, data().vocab, 4));
  auto other = small_config();
  other.seed = 4;
  Trainer a(small_config(), data().train, data().vocab), b(other, data().train, data().vocab);
  a.run(1);
  b.run(1);
  CHECK_FALSE(checks::tables_equal(a.checkpoint().tensors, b.checkpoint().tensors));
}

TEST_CASE("resume equals an uninterrupted run") {
  CHECK(checks::resume_matches(small_config(), data().train, data().vocab, 3, 6, temp("resume.bin")));
}

TEST_CASE("memories are frozen in adversarial steps and trained in reconstruction steps") {
  Trainer t(small_config(), data().train, data().vocab);
  const auto r = checks::freeze_invariant(t, 5);
  CHECK(r.unchanged_over_adversarial);
  CHECK(r.changed_by_reconstruction);
  CHECK_FALSE(t.model().gen.bank.frozen());
}

TEST_CASE("step reports carry the logged components") {
  Trainer t(small_config(), data().train, data().vocab);
  const auto rec = t.step();
  CHECK(rec.phase == "reconstruction");
  CHECK(std::isfinite(rec.value("rec_icm")));
  CHECK(std::isfinite(rec.value("mem_fir")));
  const auto adv = t.step();
  CHECK(adv.phase == "adversarial");
  CHECK(std::isfinite(adv.value("gap_icm")));
  CHECK_THROWS_AS(adv.value("nonexistent"), ContractError);
  for (const auto& [name, v] : adv.values) {
    const auto cols = report_columns();
    CHECK(std::find(cols.begin(), cols.end(), name) != cols.end());
  }
}
