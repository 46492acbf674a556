#include "mimnet/objectives.hpp"

#include <cmath>
#include <iomanip>

namespace mimnet {

void LossWeights::validate() const {
  auto check = [](double v, const std::string& name) {
    if (!std::isfinite(v) || v < 0.0) throw InputError("loss weight " + name + " must be finite and >= 0");
  };
  check(pseudo, "lambda_p");
  for (Stage s : {Stage::Icm, Stage::Fir}) {
    const auto& w = stage(s);
    const std::string tag = std::string("/") + stage_name(s);
    check(w.reality, "lambda_I" + tag);
    check(w.text, "lambda_T" + tag);
    check(w.reconstruction, "lambda_rec" + tag);
    check(w.memory, "lambda_m" + tag);
    check(w.discriminator, "beta" + tag);
  }
}

template <typename T>
Tensor<T> loss_rec(const Tensor<T>& target, const Tensor<T>& output, Pairing pairing) {
  if (pairing != Pairing::Paired) throw ContractError("loss_rec: reconstruction needs a paired image and caption");
  if (target.rank() == 3 && output.rank() == 3 && output.shape()[0] == target.shape()[0] &&
      output.shape()[1] == 2 * target.shape()[1] && output.shape()[2] == 2 * target.shape()[2]) {
    return ops::mse(output, ops::upsample_nearest2x(target));
  }
  if (target.shape() != output.shape()) {
    throw DimensionError("loss_rec: output " + to_string(output.shape()) + " cannot be compared with target " +
                         to_string(target.shape()));
  }
  return ops::mse(output, target);
}

template <typename T>
Tensor<T> loss_pseudo(const FeatureMap<T>& v_i, const Tensor<T>& alpha, const Tensor<T>& h_bar) {
  using namespace ops;
  const Shape& fs = v_i.tensor.shape();
  if (fs.size() != 3 || alpha.shape() != Shape{1, fs[1], fs[2]} || h_bar.shape() != Shape{fs[0]}) {
    throw DimensionError("loss_pseudo: features " + to_string(fs) + ", alpha " + to_string(alpha.shape()) +
                         " and global texture " + to_string(h_bar.shape()) + " are inconsistent");
  }
  const Tensor<T> total = sum(alpha);
  if (!(static_cast<double>(total.item()) >= 1e-8)) {
    throw NumericError("loss_pseudo: weight map sums to " + std::to_string(total.item()) + ", below 1e-8");
  }
  const std::size_t l = fs[0], p = fs[1] * fs[2];
  const Tensor<T> weighted = sum(reshape(mul(v_i.tensor, alpha), {l, p}), 1);  // [l]
  return l1_distance(div(weighted, total), h_bar);
}

template <typename T>
Tensor<T> negative_log(const Tensor<T>& log_score) {
  return ops::scale(log_score, T(-1));
}

template <typename T>
RandomMemorySample<T> random_memory_manipulation(const Generator<T>& gen, const EncodedInputs<T>& inputs,
                                                 std::size_t slots, Stage stage, std::mt19937_64& rng) {
  RandomMemorySample<T> s;
  s.attention = random_attention_rows<T>(slots, gen.bank.count(), rng);
  s.state = gen.manipulate(inputs, texture_from_attention(s.attention, gen.bank), stage);
  return s;
}

template <typename T>
Tensor<T> loss_memory_random(const Tensor<T>& random_output, const Discriminator<T>& disc) {
  return negative_log(ops::log_sigmoid(disc.detached().reality_logit(random_output)));
}

template <typename T>
DiscriminatorTerms<T> discriminator_terms(const Tensor<T>& real_logit, const Tensor<T>& fake_logit,
                                          const Tensor<T>& real_text_log, const Tensor<T>& fake_text_log) {
  using namespace ops;
  DiscriminatorTerms<T> d;
  d.real_reality = negative_log(log_sigmoid(real_logit));
  d.fake_reality = negative_log(log_sigmoid(scale(fake_logit, T(-1))));  // 1 - sigmoid(x) = sigmoid(-x)
  d.real_text = negative_log(real_text_log);
  d.fake_text = negative_log(log1mexp(fake_text_log));
  d.total = add_n<T>({d.real_reality, d.fake_reality, d.real_text, d.fake_text});
  return d;
}

template <typename T>
DiscriminatorTerms<T> loss_discriminator(const Discriminator<T>& disc, const Tensor<T>& real,
                                         const std::vector<int>& caption, const Tensor<T>& fake,
                                         const std::vector<int>& mismatched) {
  const Tensor<T> fixed = fake.detach();
  const auto real_text = text_conformity_score(real, disc.encode_caption(caption), disc);
  const auto fake_text = text_conformity_score(fixed, disc.encode_caption(mismatched), disc);
  return discriminator_terms(disc.reality_logit(real), disc.reality_logit(fixed), real_text.log_score,
                             fake_text.log_score);
}

template <typename T>
Tensor<T> loss_discriminator_reality(const Discriminator<T>& disc, const Tensor<T>& real, const Tensor<T>& fake) {
  using namespace ops;
  const Tensor<T> real_term = log_sigmoid(disc.reality_logit(real));
  const Tensor<T> fake_term = log_sigmoid(scale(disc.reality_logit(fake.detach()), T(-1)));
  return negative_log(add(real_term, fake_term));
}

template <typename T>
Tensor<T> loss_generator_reality(const Discriminator<T>& disc, const Tensor<T>& fake) {
  return negative_log(ops::log_sigmoid(disc.detached().reality_logit(fake)));
}

template <typename T>
Tensor<T> loss_generator_text(const Discriminator<T>& disc, const Tensor<T>& fake, const std::vector<int>& mismatched) {
  const Discriminator<T> fixed = disc.detached();
  return negative_log(text_conformity_score(fake, fixed.encode_caption(mismatched), fixed).log_score);
}

namespace {

template <typename T>
void add_term(std::vector<Tensor<T>>& terms, const std::optional<Tensor<T>>& loss, double weight,
              const std::string& name) {
  if (!loss) return;
  if (loss->size() != 1) throw DimensionError("loss component " + name + " is not a scalar");
  if (std::isnan(static_cast<double>(loss->item()))) throw NumericError("loss component " + name + " is NaN");
  if (weight != 0.0) terms.push_back(ops::reshape(ops::scale(*loss, static_cast<T>(weight)), {}));
}

template <typename T>
Tensor<T> sum_terms(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) return Tensor<T>::scalar(T(0));
  return ops::add_n(terms);
}

}  // namespace

template <typename T>
Tensor<T> integrate_generator(const GeneratorLosses<T>& losses, const LossWeights& w) {
  std::vector<Tensor<T>> terms;
  add_term(terms, losses.pseudo, w.pseudo, "L_p");
  for (Stage s : {Stage::Icm, Stage::Fir}) {
    const auto& l = losses.stage(s);
    const auto& sw = w.stage(s);
    const std::string tag = std::string("/") + stage_name(s);
    add_term(terms, l.reality, sw.reality, "L_I" + tag);
    add_term(terms, l.text, sw.text, "L_T" + tag);
    add_term(terms, l.reconstruction, sw.reconstruction, "L_rec" + tag);
    add_term(terms, l.memory, sw.memory, "L_m" + tag);
  }
  return sum_terms(terms);
}

template <typename T>
Tensor<T> integrate_discriminator(const DiscriminatorLosses<T>& losses, const LossWeights& w) {
  std::vector<Tensor<T>> terms;
  add_term(terms, losses.icm, w.icm.discriminator, "L_D/icm");
  add_term(terms, losses.fir, w.fir.discriminator, "L_D/fir");
  return sum_terms(terms);
}

std::vector<std::size_t> draw_mismatched(const std::vector<std::vector<int>>& captions, std::mt19937_64& rng) {
  const std::size_t b = captions.size();
  if (b < 2) throw InputError("mismatched captions need a batch of at least 2");
  std::vector<std::size_t> out(b);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < b; ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i && captions[j] != captions[i]) candidates.push_back(j);
    }
    if (candidates.empty()) {
      for (std::size_t j = 0; j < b; ++j) {
        if (j != i) candidates.push_back(j);
      }
    }
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    out[i] = candidates[pick(rng)];
  }
  return out;
}

LossLog::LossLog(const std::filesystem::path& path, std::vector<std::string> components)
    : path_(path), components_(std::move(components)) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw FormatError("cannot open loss log " + path.string());
  if (fresh) {
    out_ << "step,phase";
    for (const auto& c : components_) out_ << ',' << c;
    out_ << '\n';
    out_.flush();
  }
}

void LossLog::append(std::size_t step, const std::string& phase,
                     const std::vector<std::pair<std::string, double>>& values) {
  out_ << step << ',' << phase;
  for (const auto& c : components_) {
    out_ << ',';
    for (const auto& [name, v] : values) {
      if (name == c) {
        out_ << std::setprecision(9) << v;
        break;
      }
    }
  }
  out_ << '\n';
  out_.flush();
  if (!out_) throw FormatError("failed writing loss log " + path_.string());
}

#define MIMNET_INSTANTIATE_OBJ(T)                                                                                \
  template Tensor<T> loss_rec(const Tensor<T>&, const Tensor<T>&, Pairing);                                      \
  template Tensor<T> loss_pseudo(const FeatureMap<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> negative_log(const Tensor<T>&);                                                             \
  template RandomMemorySample<T> random_memory_manipulation(const Generator<T>&, const EncodedInputs<T>&,        \
                                                            std::size_t, Stage, std::mt19937_64&);               \
  template Tensor<T> loss_memory_random(const Tensor<T>&, const Discriminator<T>&);                              \
  template DiscriminatorTerms<T> discriminator_terms(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                                     const Tensor<T>&);                                          \
  template DiscriminatorTerms<T> loss_discriminator(const Discriminator<T>&, const Tensor<T>&,                   \
                                                    const std::vector<int>&, const Tensor<T>&,                   \
                                                    const std::vector<int>&);                                    \
  template Tensor<T> loss_discriminator_reality(const Discriminator<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> loss_generator_reality(const Discriminator<T>&, const Tensor<T>&);                          \
  template Tensor<T> loss_generator_text(const Discriminator<T>&, const Tensor<T>&, const std::vector<int>&);    \
  template Tensor<T> integrate_generator(const GeneratorLosses<T>&, const LossWeights&);                         \
  template Tensor<T> integrate_discriminator(const DiscriminatorLosses<T>&, const LossWeights&);

MIMNET_INSTANTIATE_OBJ(float)
MIMNET_INSTANTIATE_OBJ(double)

}  // namespace mimnet
