// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "equivalence.hpp"
#include "mimnet/harness.hpp"
#include "stats.hpp"
#include "training_checks.hpp"

using namespace mimnet;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("criterion %d %s: %s (%s)\n", id, o.pass ? "PASS" : "FAIL", title.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

Outcome gradients() {
  const auto start = Clock::now();
  const auto rows = run_gradcheck_suite(5);
  const double elapsed = seconds_since(start);
  double prim = 0.0, comp = 0.0;
  std::string failed;
  for (const auto& r : rows) {
    (r.composite ? comp : prim) = std::max(r.composite ? comp : prim, r.max_error);
    if (!r.passed()) failed += " " + r.name;
  }
  std::ostringstream d;
  d << rows.size() << " checks, worst primitive " << prim << ", worst composite " << comp << ", " << elapsed << " s";
  if (!failed.empty()) d << ", failed:" << failed;
  return {failed.empty() && elapsed < 300.0, d.str()};
}

Outcome equivalence() {
  const auto errors = oracle::equivalence_errors(20);
  const char* required[] = {"fuse_memory", "tlu", "icm_forward", "fir_forward", "text_conformity_score"};
  bool ok = true;
  std::ostringstream d;
  d << "20 instances";
  for (const char* name : required) {
    const double e = errors.at(name);
    ok = ok && e <= 1e-10;
    d << ", " << name << " " << e;
  }
  return {ok, d.str()};
}

Outcome freeze() {
  const auto data = make_split(256, 16, 21);
  TrainingConfig c;
  c.batch_size = 16;
  Trainer t(c, data.train, data.vocab);
  const auto r = checks::freeze_invariant(t, 100);
  return {r.unchanged_over_adversarial && r.changed_by_reconstruction,
          std::string("unchanged over 100 adversarial steps: ") + (r.unchanged_over_adversarial ? "yes" : "no") +
              ", changed by 1 reconstruction step: " + (r.changed_by_reconstruction ? "yes" : "no")};
}

Outcome mp_values() {
  const double ours = metric_mp(0.171, 0.190), manigan = metric_mp(0.101, 0.281);
  const bool ok = std::abs(ours - 0.139) <= 0.0005 && manigan >= 0.072 - 0.0005 && manigan <= 0.073 + 0.0005;
  std::ostringstream d;
  d << "MP(0.171,0.190)=" << ours << ", MP(0.101,0.281)=" << manigan;
  return {ok, d.str()};
}

double paired_rec(const Trainer& t, Stage stage) {
  double total = 0.0;
  for (const auto& it : t.items()) {
    const auto out = generate(it.image, it.boundary, it.caption, t.model().gen, stage);
    total += loss_rec(it.image, out, Pairing::Paired).item();
  }
  return total / static_cast<double>(t.items().size());
}

Outcome overfit() {
  const auto start = Clock::now();
  const auto data = make_split(4, 4, 31);
  TrainingConfig c;
  c.batch_size = 4;
  Trainer t(c, data.train, data.vocab);
  const std::vector<std::size_t> batch{0, 1, 2, 3};
  const double icm0 = paired_rec(t, Stage::Icm), fir0 = paired_rec(t, Stage::Fir);
  double icm50 = 0.0;
  for (std::size_t k = 0; k < 500; ++k) {
    t.reconstruction_step(batch);
    if (k == 49) icm50 = paired_rec(t, Stage::Icm);
  }
  const double fir500 = paired_rec(t, Stage::Fir), elapsed = seconds_since(start);
  const double drop50 = 1.0 - icm50 / icm0, drop500 = 1.0 - fir500 / fir0;
  std::ostringstream d;
  d << "reconstruction loss drop after 50 steps " << 100 * drop50 << "%, full-stage L2 after 500 steps "
    << 100 * drop500 << "% below baseline, " << elapsed << " s";
  return {drop50 >= 0.30 && drop500 >= 0.50 && elapsed < 600.0, d.str()};
}

Outcome toy_run() {
  const auto data = make_split(2048, 256, 11);
  const auto start = Clock::now();
  SimScorer scorer(data.vocab.size(), {});
  scorer.train(data.train, data.vocab);
  TrainingConfig base;
  base.batch_size = 16;
  base.steps = 2000;
  const auto results = run_ablations(base, data, scorer, [](const std::string& line) {
    if (line.find(": step ") == std::string::npos || line.find("000/") != std::string::npos)
      std::cerr << "  " << line << '\n';
  });
  const auto& full = results.front();
  double slowest = 0.0;
  bool ordering = true;
  std::ostringstream d;
  d.precision(4);
  d << "gap " << full.final_gap_icm << ", background kept " << full.report.background_preserved_fraction()
    << ", MP full " << full.report.mean_mp();
  for (const auto& r : results) {
    slowest = std::max(slowest, r.train_seconds);
    if (&r == &full) continue;
    d << ", " << r.name << " " << r.report.mean_mp();
    ordering = ordering && full.report.mean_mp() >= r.report.mean_mp();
  }
  const bool a = full.final_gap_icm > 0.0, b = full.report.background_preserved_fraction() >= 0.70;
  d << "; (a) " << (a ? "ok" : "fails") << ", (b) " << (b ? "ok" : "fails") << ", (c) "
    << (ordering ? "ok" : "fails") << ", slowest run " << slowest << " s, total " << seconds_since(start) << " s";
  return {a && b && ordering && slowest < 1800.0, d.str()};
}

Outcome determinism() {
  const auto data = make_split(64, 8, 41);
  TrainingConfig c;
  c.batch_size = 8;
  c.seed = 17;
  const auto path = std::filesystem::temp_directory_path() / "mimnet_acceptance.bin";
  const bool same = checks::same_seed_identical(c, data.train, data.vocab, 6);
  Trainer t(c, data.train, data.vocab);
  t.run(4);
  const bool round_trip = checks::checkpoint_round_trip(t, path);
  const bool resume = checks::resume_matches(c, data.train, data.vocab, 5, 10, path);
  return {same && round_trip && resume, std::string("same seed ") + (same ? "identical" : "differs") +
                                            ", round-trip " + (round_trip ? "lossless" : "lossy") + ", resume " +
                                            (resume ? "matches" : "differs")};
}

Outcome sampler() {
  const auto r = stats::attention_uniformity(16, 16000, 0x5eed);
  std::ostringstream d;
  d << "16 memories, 16000 draws, chi2 " << r.statistic << ", p " << r.p_value;
  return {r.p_value > 0.01, d.str()};
}

}  // namespace

int main() {
  report(1, "gradient suite", gradients);
  report(2, "naive-oracle equivalence", equivalence);
  report(3, "memory freeze invariant", freeze);
  report(4, "MP values", mp_values);
  report(5, "overfit smoke test", overfit);
  report(6, "toy training run and ablations", toy_run);
  report(7, "determinism and persistence", determinism);
  report(8, "random-attention sampler uniformity", sampler);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
