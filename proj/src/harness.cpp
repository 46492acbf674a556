#include "mimnet/harness.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <random>
#include <sstream>

#include "mimnet/seed.hpp"

namespace mimnet {

// ----------------------------------------------------------------- metrics

namespace {

void require_images(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
  if (a.shape() != b.shape() || a.rank() != 3) {
    throw DimensionError(std::string(what) + ": images " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " differ in resolution");
  }
}

}  // namespace

double metric_diff(const Tensor<float>& before, const Tensor<float>& after) {
  require_images(before, after, "metric_diff");
  double total = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) total += std::abs(static_cast<double>(before[i]) - after[i]) / 2.0;
  return total / static_cast<double>(before.size());
}

double metric_diff_region(const Tensor<float>& before, const Tensor<float>& after, const Tensor<float>& mask,
                          bool inside) {
  require_images(before, after, "metric_diff_region");
  const std::size_t c = before.shape()[0], p = before.shape()[1] * before.shape()[2];
  if (mask.shape() != Shape{1, before.shape()[1], before.shape()[2]}) {
    throw DimensionError("metric_diff_region: mask " + to_string(mask.shape()) + " does not cover " +
                         to_string(before.shape()));
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < p; ++i) {
    if ((mask[i] > 0.5f) != inside) continue;
    for (std::size_t ch = 0; ch < c; ++ch) total += std::abs(static_cast<double>(before[ch * p + i]) - after[ch * p + i]) / 2.0;
    count += c;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double metric_mp(double sim, double diff) {
  if (!(diff >= 0.0 && diff <= 1.0)) throw InputError("metric_mp: Diff " + std::to_string(diff) + " outside [0,1]");
  return (1.0 - diff) * sim;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("cosine_similarity: vector lengths differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

// ------------------------------------------------------------------ scorer

namespace {

// Rows scaled to unit L2 norm.
Tensor<float> normalize_rows(const Tensor<float>& x) {
  using namespace ops;
  const Tensor<float> sq = sum(mul(x, x), 1, true);
  return mul(x, exp(scale(log(add_scalar(sq, 1e-8f)), -0.5f)));
}

std::vector<double> to_doubles(const Tensor<float>& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

SimScorer::SimScorer(std::size_t vocab_size, Options options) : options_(options) {
  Initializer init(options.seed);
  conv1_ = Conv<float>::create(init, 3, 8, 3, 2, 1);
  conv2_ = Conv<float>::create(init, 8, 16, 3, 2, 1);
  const std::size_t flat = 16 * (kToyImageSize / 4) * (kToyImageSize / 4);
  image_head_ = Linear<float>::create(init, flat, options.embed);
  words_ = init.normal<float>({vocab_size, options.embed}, 1.0);
  text_head_ = Linear<float>::create(init, options.embed, options.embed);
}

ParamList<float> SimScorer::params() const {
  ParamList<float> p;
  conv1_.collect(p, "scorer.conv1");
  conv2_.collect(p, "scorer.conv2");
  image_head_.collect(p, "scorer.image_head");
  p.push_back({"scorer.words", words_});
  text_head_.collect(p, "scorer.text_head");
  return p;
}

Tensor<float> SimScorer::image_row(const Tensor<float>& images) const {
  using namespace ops;
  const std::size_t b = images.rank() == 4 ? images.shape()[0] : 1;
  const Tensor<float> h = relu(conv2_(relu(conv1_(images))));
  return image_head_(reshape(h, {b, h.size() / b}));
}

Tensor<float> SimScorer::caption_row(const std::vector<int>& ids) const {
  std::vector<int> kept;
  for (int id : ids) {
    if (id != Vocabulary::kPad) kept.push_back(id);
  }
  if (kept.empty()) throw InputError("scorer: caption has no tokens");
  return text_head_(ops::mean(ops::embedding(words_, kept), 0, true));
}

void SimScorer::train(const std::vector<ToySample>& samples, const Vocabulary& vocab) {
  using namespace ops;
  if (samples.size() < 2) throw InputError("scorer: need at least two training samples");
  std::vector<std::vector<int>> captions;
  for (const auto& s : samples) captions.push_back(tokenize(s.caption, vocab));
  const auto p = params();
  Adam opt(options_.learning_rate, 0.9, 0.999, 1e-8);
  std::mt19937_64 rng(options_.seed);
  const std::size_t b = std::min(options_.batch, samples.size());
  const std::size_t px = 3 * kToyImageSize * kToyImageSize;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<float> eye(b * b, 0.0f);
  for (std::size_t i = 0; i < b; ++i) eye[i * b + i] = 1.0f;
  const Tensor<float> diagonal({b, b}, eye);
  const float inv_t = static_cast<float>(1.0 / options_.temperature);

  for (std::size_t step = 0; step < options_.steps; ++step) {
    for (std::size_t i = 0; i < b; ++i) std::swap(order[i], order[i + rng() % (order.size() - i)]);
    std::vector<float> pixels(b * px);
    std::vector<Tensor<float>> texts;
    for (std::size_t i = 0; i < b; ++i) {
      const auto& img = samples[order[i]].image.values();
      std::copy(img.begin(), img.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * px));
      texts.push_back(caption_row(captions[order[i]]));
    }
    const Tensor<float> batch({b, 3, kToyImageSize, kToyImageSize}, std::move(pixels));
    const Tensor<float> a = normalize_rows(image_row(batch));
    const Tensor<float> t = normalize_rows(concat(texts, 0));
    const Tensor<float> logits = scale(matmul(a, transpose(t)), inv_t);
    const Tensor<float> matched =
        add(sum(mul(diagonal, log(softmax(logits, 1)))), sum(mul(diagonal, log(softmax(logits, 0)))));
    scale(matched, -1.0f / static_cast<float>(2 * b)).backward();
    opt.step(p);
    zero_grads(p);
  }
  trained_ = true;
}

std::vector<double> SimScorer::embed_image(const Tensor<float>& image) const {
  if (!trained_) throw ContractError("scorer: embed_image on an untrained scorer");
  Tensor<float> img = image.detach();
  if (img.rank() == 3 && img.shape()[1] == 2 * kToyImageSize) img = ops::avg_pool2x(img);
  if (img.shape() != Shape{3, kToyImageSize, kToyImageSize}) {
    throw DimensionError("scorer: expected a [3x32x32] or [3x64x64] image, got " + to_string(image.shape()));
  }
  return to_doubles(normalize_rows(image_row(img)));
}

std::vector<double> SimScorer::embed_caption(const std::vector<int>& ids) const {
  if (!trained_) throw ContractError("scorer: embed_caption on an untrained scorer");
  return to_doubles(normalize_rows(caption_row(ids)));
}

double SimScorer::similarity(const Tensor<float>& image, const std::vector<int>& ids) const {
  return cosine_similarity(embed_image(image), embed_caption(ids));
}

void SimScorer::save(const std::filesystem::path& path) const {
  if (!trained_) throw ContractError("scorer: refusing to save an untrained scorer");
  TensorTable t;
  t.emplace_back("scorer/meta", Tensor<float>({3}, {static_cast<float>(options_.embed),
                                                    static_cast<float>(words_.shape()[0]),
                                                    static_cast<float>(options_.temperature)}));
  for (const auto& p : params()) t.emplace_back(p.name, p.tensor.detach());
  save_tensors(path, t);
}

SimScorer SimScorer::load(const std::filesystem::path& path) {
  const Checkpoint c{load_tensors(path)};
  const auto& meta = c.at("scorer/meta");
  Options o;
  o.embed = static_cast<std::size_t>(meta[0]);
  o.temperature = meta[2];
  SimScorer s(static_cast<std::size_t>(meta[1]), o);
  for (auto& p : s.params()) {
    const auto& src = c.at(p.name);
    if (src.shape() != p.tensor.shape()) throw FormatError("scorer file " + path.string() + ": bad shape for " + p.name);
    Tensor<float> dst = p.tensor;
    std::copy(src.values().begin(), src.values().end(), dst.mutable_data().begin());
  }
  s.trained_ = true;
  return s;
}

// ------------------------------------------------------------------ report

namespace {

template <typename F>
double mean_of(const std::vector<EvalRow>& rows, F f) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += f(r);
  return s / static_cast<double>(rows.size());
}

}  // namespace

double EvalReport::mean_sim() const { return mean_of(rows, [](const EvalRow& r) { return r.sim; }); }
double EvalReport::mean_diff() const { return mean_of(rows, [](const EvalRow& r) { return r.diff; }); }
double EvalReport::mean_mp() const { return mean_of(rows, [](const EvalRow& r) { return r.mp; }); }

double EvalReport::background_preserved_fraction() const {
  return mean_of(rows, [](const EvalRow& r) { return r.diff_background < r.diff_object ? 1.0 : 0.0; });
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(9);
  out << "id,caption,sim,diff,mp,diff_background,diff_object\n";
  for (const auto& r : rows) {
    out << r.id << ",\"" << r.caption << "\"," << r.sim << ',' << r.diff << ',' << r.mp << ',' << r.diff_background
        << ',' << r.diff_object << '\n';
  }
  return out.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["checkpoint"] = checkpoint_id;
  j["inception_score"] = "not computed: requires an external pretrained classifier";
  j["mean"] = {{"sim", mean_sim()}, {"diff", mean_diff()}, {"mp", mean_mp()},
               {"background_preserved", background_preserved_fraction()}};
  auto& rows_json = j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"id", r.id},
                         {"caption", r.caption},
                         {"sim", r.sim},
                         {"diff", r.diff},
                         {"mp", r.mp},
                         {"diff_background", r.diff_background},
                         {"diff_object", r.diff_object}});
  }
  return j.dump(2);
}

// -------------------------------------------------------------- evaluation

std::vector<std::size_t> manipulation_targets(const std::vector<ToySample>& samples, std::uint64_t seed) {
  if (samples.size() < 2) throw InputError("manipulation_targets: need at least two samples");
  std::mt19937_64 rng(derive_seed(seed, 0x7e57));
  std::vector<std::size_t> out(samples.size());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < samples.size(); ++j) {
      if (samples[j].attributes.color != samples[i].attributes.color) candidates.push_back(j);
    }
    if (candidates.empty()) {
      for (std::size_t j = 0; j < samples.size(); ++j) {
        if (j != i) candidates.push_back(j);
      }
    }
    out[i] = candidates[rng() % candidates.size()];
  }
  return out;
}

Tensor<float> manipulate_image(const Model& model, const Tensor<float>& image, const std::vector<int>& caption,
                               Stage stage, Tensor<float>* alpha) {
  const auto& gen = model.gen;
  const Tensor<float> img = image.detach();
  const auto inputs = gen.encode_inputs(img, boundary_extract(img));
  const auto state = gen.manipulate(inputs, gen.texture_for(gen.encode_caption(caption)), stage);
  if (alpha) *alpha = state.alpha.detach();
  return state.output(stage).detach();
}

EvalReport evaluate(const Model& model, const SimScorer& scorer, const std::vector<ToySample>& samples,
                    const Vocabulary& vocab, std::uint64_t seed) {
  const auto targets = manipulation_targets(samples, seed);
  EvalReport report;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& caption = samples[targets[i]].caption;
    const auto ids = tokenize(caption, vocab);
    const Tensor<float> out = ops::avg_pool2x(manipulate_image(model, s.image, ids, Stage::Fir));
    EvalRow r;
    r.id = s.id;
    r.caption = caption;
    r.sim = scorer.similarity(out, ids);
    r.diff = metric_diff(s.image, out);
    r.mp = metric_mp(r.sim, r.diff);
    r.diff_background = metric_diff_region(s.image, out, s.mask, false);
    r.diff_object = metric_diff_region(s.image, out, s.mask, true);
    report.rows.push_back(std::move(r));
  }
  return report;
}

// --------------------------------------------------------------- ablations

std::vector<std::pair<std::string, TrainingConfig>> ablation_configs(const TrainingConfig& base) {
  std::vector<std::pair<std::string, TrainingConfig>> out;
  TrainingConfig c = base;
  c.options.use_tlu = false;
  out.emplace_back("no_tlu", c);
  c = base;
  c.options.use_memory = false;
  out.emplace_back("no_memory", c);
  c = base;
  c.weights.pseudo = 0.0;
  out.emplace_back("no_pseudo", c);
  c = base;
  c.weights.icm.memory = 0.0;
  c.weights.fir.memory = 0.0;
  out.emplace_back("no_memory_loss", c);
  return out;
}

std::vector<std::string> config_diff(const TrainingConfig& a, const TrainingConfig& b) {
  std::istringstream ta(a.to_text()), tb(b.to_text());
  std::string la, lb;
  std::vector<std::string> out;
  while (std::getline(ta, la) && std::getline(tb, lb)) {
    if (la != lb) out.push_back(la.substr(0, la.find('=')));
  }
  return out;
}

std::vector<AblationResult> run_ablations(const TrainingConfig& base, const ToyDataset& data, const SimScorer& scorer,
                                          const std::function<void(const std::string&)>& progress) {
  std::vector<std::pair<std::string, TrainingConfig>> variants = {{"full", base}};
  for (auto& v : ablation_configs(base)) variants.push_back(std::move(v));
  std::vector<AblationResult> out;
  for (auto& [name, config] : variants) {
    Trainer trainer(config, data.train, data.vocab);
    AblationResult r;
    r.name = name;
    r.config = config;
    const std::size_t total = config.total_steps(data.train.size());
    const auto start = std::chrono::steady_clock::now();
    trainer.run(total, nullptr, {}, [&](const StepReport& rep) {
      if (rep.phase == "adversarial") {
        r.final_gap_icm = rep.value("gap_icm");
        r.final_gap_fir = rep.value("gap_fir");
      }
      if (progress && (rep.step + 1) % 100 == 0) {
        progress(name + ": step " + std::to_string(rep.step + 1) + "/" + std::to_string(total));
      }
    });
    r.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.report = evaluate(trainer.model(), scorer, data.test, data.vocab, base.seed);
    r.report.config_hash = config.hash();
    r.report.checkpoint_id = name + "@" + std::to_string(trainer.steps_done());
    if (progress) {
      std::ostringstream line;
      line << name << ": mean MP " << r.report.mean_mp() << ", Sim " << r.report.mean_sim() << ", Diff "
           << r.report.mean_diff();
      progress(line.str());
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------- memories

std::vector<Tensor<float>> decode_memories(const Model& model, const ToySample& sample) {
  const auto& gen = model.gen;
  if (!gen.options.use_memory) throw ContractError("decode_memories: model was trained without memory");
  const Tensor<float> img = sample.image.detach();
  const auto inputs = gen.encode_inputs(img, boundary_extract(img));
  std::vector<Tensor<float>> out;
  const std::size_t n = gen.bank.count();
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<float> row(n, 0.0f);
    row[j] = 1.0f;
    const auto fused = texture_from_attention(Tensor<float>({1, n}, std::move(row)), gen.bank);
    out.push_back(gen.manipulate(inputs, fused, Stage::Icm).coarse.detach());
  }
  return out;
}

}  // namespace mimnet
