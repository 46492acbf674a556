#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sys/wait.h>

#include "mimnet/harness.hpp"

using namespace mimnet;
namespace fs = std::filesystem;

namespace {

const ToyDataset& data() {
  static const ToyDataset d = make_split(1024, 64, 11);
  return d;
}

const SimScorer& scorer() {
  static const SimScorer s = [] {
    SimScorer x(data().vocab.size(), {});
    x.train(data().train, data().vocab);
    return x;
  }();
  return s;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const auto out = fs::temp_directory_path() / "mimnet_cli_out.txt";
  const int status = std::system((std::string(MIMNET_CLI) + " " + args + " > " + out.string() + " 2>&1").c_str());
  if (output) {
    std::ifstream in(out);
    output->assign(std::istreambuf_iterator<char>(in), {});
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("Diff closed forms") {
  const auto a = Tensor<float>::full({3, 4, 4}, -1.0f);
  CHECK(metric_diff(a, a) == 0.0);
  CHECK(metric_diff(a, Tensor<float>::full({3, 4, 4}, 1.0f)) == 1.0);
  // Half the pixels moved by 0.5 on the [0,1] scale.
  std::vector<float> half(48, -1.0f);
  for (std::size_t i = 0; i < 48; i += 2) half[i] = 0.0f;
  CHECK(metric_diff(a, Tensor<float>({3, 4, 4}, half)) == doctest::Approx(0.25));
  CHECK_THROWS_AS(metric_diff(a, Tensor<float>::full({3, 8, 8}, 1.0f)), DimensionError);
}

TEST_CASE("region Diff splits object and background") {
  const auto a = Tensor<float>::zeros({3, 2, 2});
  const Tensor<float> b({3, 2, 2}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0});
  const Tensor<float> mask({1, 2, 2}, {1, 0, 0, 0});
  CHECK(metric_diff_region(a, b, mask, true) == doctest::Approx(0.5));
  CHECK(metric_diff_region(a, b, mask, false) == 0.0);
  CHECK(metric_diff_region(a, b, Tensor<float>::zeros({1, 2, 2}), true) == 0.0);
}

TEST_CASE("MP reproduces the published table rows") {
  CHECK(std::abs(metric_mp(0.171, 0.190) - 0.139) <= 0.0005);
  const double manigan = metric_mp(0.101, 0.281);
  CHECK(manigan >= 0.072 - 0.0005);
  CHECK(manigan <= 0.073 + 0.0005);
  CHECK(metric_mp(0.4, 0.0) == 0.4);
  CHECK_THROWS_AS(metric_mp(0.5, 1.2), InputError);
  CHECK_THROWS_AS(metric_mp(0.5, -0.1), InputError);
}

TEST_CASE("cosine similarity") {
  CHECK(cosine_similarity({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0));
  CHECK(cosine_similarity({1, 0}, {0, 2}) == 0.0);
  CHECK(cosine_similarity({1, 0}, {-3, 0}) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(cosine_similarity({1}, {1, 2}), DimensionError);
}

TEST_CASE("an untrained scorer refuses to score") {
  SimScorer s(data().vocab.size(), {});
  CHECK_FALSE(s.trained());
  CHECK_THROWS_AS(s.similarity(data().test[0].image, {2, 3}), ContractError);
}

TEST_CASE("the trained scorer ranks matched captions above mismatched ones on held-out data") {
  const auto targets = manipulation_targets(data().test, 1);
  double gap = 0.0;
  for (std::size_t i = 0; i < data().test.size(); ++i) {
    const auto& s = data().test[i];
    gap += scorer().similarity(s.image, tokenize(s.caption, data().vocab)) -
           scorer().similarity(s.image, tokenize(data().test[targets[i]].caption, data().vocab));
  }
  CHECK(gap / static_cast<double>(data().test.size()) > 0.1);

  const auto path = fs::temp_directory_path() / "mimnet_scorer_test.bin";
  scorer().save(path);
  const auto back = SimScorer::load(path);
  fs::remove(path);
  const auto& s = data().test[3];
  const auto ids = tokenize(s.caption, data().vocab);
  CHECK(back.similarity(s.image, ids) == scorer().similarity(s.image, ids));
  // 64-pixel inputs are pooled to the scorer's resolution.
  CHECK(scorer().similarity(ops::upsample_nearest2x(s.image), ids) ==
        doctest::Approx(scorer().similarity(s.image, ids)));
}

TEST_CASE("manipulation targets name another colour") {
  const auto targets = manipulation_targets(data().test, 2);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    CHECK(targets[i] != i);
    CHECK(data().test[targets[i]].attributes.color != data().test[i].attributes.color);
  }
}

TEST_CASE("evaluation rows satisfy the MP identity exactly") {
  TrainingConfig c;
  const Model model = Model::create(c, data().vocab.size());
  const std::vector<ToySample> few(data().test.begin(), data().test.begin() + 8);
  const auto report = evaluate(model, scorer(), few, data().vocab, 3);
  REQUIRE(report.rows.size() == 8);
  for (const auto& r : report.rows) {
    CHECK(r.mp == (1.0 - r.diff) * r.sim);
    CHECK(r.diff >= 0.0);
    CHECK(r.diff <= 1.0);
  }
  const auto j = nlohmann::json::parse(report.to_json());
  CHECK(j["rows"].size() == 8);
  CHECK(j["mean"]["mp"].get<double>() == doctest::Approx(report.mean_mp()));
  CHECK(j.contains("inception_score"));
  CHECK(report.to_csv().rfind("id,caption,sim,diff,mp", 0) == 0);
}

TEST_CASE("an image evaluated against itself has zero Diff") {
  const auto& s = data().test[0];
  const double sim = scorer().similarity(s.image, tokenize(s.caption, data().vocab));
  const double diff = metric_diff(s.image, s.image);
  CHECK(diff == 0.0);
  CHECK(metric_mp(sim, diff) == sim);
}

TEST_CASE("each ablation differs from the base in exactly one component") {
  const TrainingConfig base;
  const auto variants = ablation_configs(base);
  REQUIRE(variants.size() == 4);
  const std::vector<std::vector<std::string>> expected = {
      {"use_tlu"}, {"use_memory"}, {"lambda_p"}, {"lambda_m_icm", "lambda_m_fir"}};
  for (std::size_t i = 0; i < variants.size(); ++i) {
    auto diff = config_diff(base, variants[i].second);
    auto want = expected[i];
    std::sort(diff.begin(), diff.end());
    std::sort(want.begin(), want.end());
    CHECK_MESSAGE(diff == want, variants[i].first);
  }
  CHECK(config_diff(base, base).empty());
}

TEST_CASE("memory decoding yields one coarse image per memory") {
  TrainingConfig c;
  const Model model = Model::create(c, data().vocab.size());
  const auto images = decode_memories(model, data().test[0]);
  CHECK(images.size() == c.dims.memory_count);
  for (const auto& img : images) CHECK(img.shape() == Shape{3, 32, 32});

  c.options.use_memory = false;
  CHECK_THROWS_AS(decode_memories(Model::create(c, data().vocab.size()), data().test[0]), ContractError);
}

TEST_CASE("command line") {
  const auto dir = fs::temp_directory_path() / "mimnet_cli_test";
  fs::remove_all(dir);
  std::string out;

  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("gen-data --bogus-flag") == 2);
  CHECK(run_cli("gen-data --out " + (dir / "data").string() + " --train 40 --test 8 --json", &out) == 0);
  CHECK(nlohmann::json::parse(out)["train"] == 40);

  // A tiny training run and everything that consumes its checkpoint.
  const auto ckpt = (dir / "model.bin").string();
  CHECK(run_cli("train --data " + (dir / "data").string() + " --checkpoint " + ckpt +
                " --set steps=2 --set batch_size=4 --log " + (dir / "loss.csv").string()) == 0);
  CHECK(fs::exists(ckpt));
  CHECK(run_cli("train --data " + (dir / "data").string() + " --checkpoint x --set nonsense=1") == 1);

  std::string sample;
  for (const auto& e : fs::directory_iterator(dir / "data" / "test")) {
    const auto name = e.path().filename().string();
    if (name.ends_with(".ppm") && name.find('_') == std::string::npos) sample = e.path().string();
  }
  REQUIRE_FALSE(sample.empty());
  CHECK(run_cli("manipulate --checkpoint " + ckpt + " --image " + sample + " --caption 'a blue solid square' --out " +
                (dir / "out.ppm").string() + " --alpha " + (dir / "alpha.pgm").string()) == 0);
  CHECK(read_ppm(dir / "out.ppm").shape() == Shape{3, 64, 64});
  CHECK(read_pgm(dir / "alpha.pgm").shape() == Shape{1, 8, 8});

  const auto scorer_path = (dir / "scorer.bin").string();
  CHECK(run_cli("eval --data " + (dir / "data").string() + " --scorer " + scorer_path + " --before " + sample +
                    " --after " + sample + " --caption 'a red circle' --json",
                &out) == 0);
  CHECK(nlohmann::json::parse(out)["diff"] == 0.0);
  CHECK(run_cli("eval --data " + (dir / "data").string() + " --scorer " + scorer_path + " --checkpoint " + ckpt +
                    " --json --csv " + (dir / "eval.csv").string(),
                &out) == 0);
  CHECK(nlohmann::json::parse(out)["samples"] == 8);

  CHECK(run_cli("dump-memory --checkpoint " + ckpt + " --data " + (dir / "data").string() + " --out " +
                (dir / "memories").string()) == 0);
  CHECK(fs::exists(dir / "memories" / "memory_15.ppm"));

  // A checkpoint with an unknown format version.
  std::string bytes;
  {
    std::ifstream in(ckpt, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  bytes[4] = 7;
  std::ofstream(dir / "future.bin", std::ios::binary) << bytes;
  CHECK(run_cli("manipulate --checkpoint " + (dir / "future.bin").string() + " --image " + sample +
                    " --caption red --out " + (dir / "x.ppm").string(),
                &out) == 1);
  CHECK(out.find("version") != std::string::npos);

  CHECK(run_cli("gradcheck --seeds 1 --json", &out) == 0);
  CHECK(nlohmann::json::parse(out)["passed"] == true);
  fs::remove_all(dir);
}
