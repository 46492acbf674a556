#include "mimnet/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "mimnet/seed.hpp"

namespace mimnet {

// ------------------------------------------------------------------ config

namespace {

struct ConfigKey {
  const char* name;
  std::function<std::string(const TrainingConfig&)> get;
  std::function<void(TrainingConfig&, const std::string&)> set;
};

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw InputError("config key " + key + ": '" + value + "' is not a number");
}

std::uint64_t parse_count(const std::string& key, const std::string& value) {
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
    throw InputError("config key " + key + ": '" + value + "' is not a non-negative integer");
  }
  try {
    return std::stoull(value);
  } catch (const std::exception&) {
    throw InputError("config key " + key + ": '" + value + "' is out of range");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw InputError("config key " + key + ": '" + value + "' is not a boolean");
}

template <typename Field>
ConfigKey real_key(const char* name, Field field) {
  return {name, [field](const TrainingConfig& c) { return format_double(field(const_cast<TrainingConfig&>(c))); },
          [field, name](TrainingConfig& c, const std::string& v) { field(c) = parse_double(name, v); }};
}

template <typename Field>
ConfigKey count_key(const char* name, Field field) {
  return {name, [field](const TrainingConfig& c) { return std::to_string(field(const_cast<TrainingConfig&>(c))); },
          [field, name](TrainingConfig& c, const std::string& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(parse_count(name, v));
          }};
}

template <typename Field>
ConfigKey bool_key(const char* name, Field field) {
  return {name,
          [field](const TrainingConfig& c) { return std::string(field(const_cast<TrainingConfig&>(c)) ? "true" : "false"); },
          [field, name](TrainingConfig& c, const std::string& v) { field(c) = parse_bool(name, v); }};
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back(count_key("seed", [](TrainingConfig& c) -> auto& { return c.seed; }));
    k.push_back(count_key("steps", [](TrainingConfig& c) -> auto& { return c.steps; }));
    k.push_back(count_key("epochs", [](TrainingConfig& c) -> auto& { return c.epochs; }));
    k.push_back(count_key("batch_size", [](TrainingConfig& c) -> auto& { return c.batch_size; }));
    k.push_back(count_key("schedule_reconstruction", [](TrainingConfig& c) -> auto& { return c.reconstruction_steps; }));
    k.push_back(count_key("schedule_adversarial", [](TrainingConfig& c) -> auto& { return c.adversarial_steps; }));
    k.push_back(count_key("checkpoint_every", [](TrainingConfig& c) -> auto& { return c.checkpoint_every; }));
    k.push_back(real_key("learning_rate", [](TrainingConfig& c) -> auto& { return c.learning_rate; }));
    k.push_back(real_key("adam_beta1", [](TrainingConfig& c) -> auto& { return c.adam_beta1; }));
    k.push_back(real_key("adam_beta2", [](TrainingConfig& c) -> auto& { return c.adam_beta2; }));
    k.push_back(real_key("adam_eps", [](TrainingConfig& c) -> auto& { return c.adam_eps; }));
    k.push_back(real_key("lambda_p", [](TrainingConfig& c) -> auto& { return c.weights.pseudo; }));
    for (Stage s : {Stage::Icm, Stage::Fir}) {
      const bool icm = s == Stage::Icm;
      auto sw = [icm](TrainingConfig& c) -> StageWeights& { return icm ? c.weights.icm : c.weights.fir; };
      k.push_back(real_key(icm ? "lambda_I_icm" : "lambda_I_fir", [sw](TrainingConfig& c) -> auto& { return sw(c).reality; }));
      k.push_back(real_key(icm ? "lambda_T_icm" : "lambda_T_fir", [sw](TrainingConfig& c) -> auto& { return sw(c).text; }));
      k.push_back(real_key(icm ? "lambda_rec_icm" : "lambda_rec_fir",
                           [sw](TrainingConfig& c) -> auto& { return sw(c).reconstruction; }));
      k.push_back(real_key(icm ? "lambda_m_icm" : "lambda_m_fir", [sw](TrainingConfig& c) -> auto& { return sw(c).memory; }));
      k.push_back(real_key(icm ? "beta_icm" : "beta_fir", [sw](TrainingConfig& c) -> auto& { return sw(c).discriminator; }));
    }
    k.push_back(bool_key("use_tlu", [](TrainingConfig& c) -> auto& { return c.options.use_tlu; }));
    k.push_back(bool_key("use_memory", [](TrainingConfig& c) -> auto& { return c.options.use_memory; }));
    k.push_back(count_key("image_size", [](TrainingConfig& c) -> auto& { return c.dims.image_size; }));
    k.push_back(count_key("encoder_hidden", [](TrainingConfig& c) -> auto& { return c.dims.encoder_hidden; }));
    k.push_back(count_key("memory_width", [](TrainingConfig& c) -> auto& { return c.dims.memory_width; }));
    k.push_back(count_key("memory_count", [](TrainingConfig& c) -> auto& { return c.dims.memory_count; }));
    k.push_back(count_key("text_dim", [](TrainingConfig& c) -> auto& { return c.dims.text_dim; }));
    k.push_back(count_key("embed_dim", [](TrainingConfig& c) -> auto& { return c.dims.embed_dim; }));
    k.push_back(count_key("coarse_hidden", [](TrainingConfig& c) -> auto& { return c.dims.coarse_hidden; }));
    k.push_back(count_key("fine_hidden", [](TrainingConfig& c) -> auto& { return c.dims.fine_hidden; }));
    k.push_back(count_key("disc_channels", [](TrainingConfig& c) -> auto& { return c.dims.disc_channels; }));
    k.push_back(count_key("disc_feature", [](TrainingConfig& c) -> auto& { return c.dims.disc_feature; }));
    k.push_back(count_key("max_caption", [](TrainingConfig& c) -> auto& { return c.dims.max_caption; }));
    return k;
  }();
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainingConfig::set(const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (key == k.name) {
      k.set(*this, trim(value));
      return;
    }
  }
  throw InputError("unknown config key '" + key + "'");
}

void TrainingConfig::validate() const {
  weights.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InputError("learning_rate must be > 0");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw InputError("adam_beta1 must lie in (0,1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw InputError("adam_beta2 must lie in (0,1)");
  if (!(adam_eps > 0.0)) throw InputError("adam_eps must be > 0");
  if (reconstruction_steps == 0 || adversarial_steps == 0) throw InputError("schedule ratios must be positive integers");
  if (batch_size < 2) throw InputError("batch_size must be at least 2 for mismatched captions");
  if (dims.image_size != kToyImageSize) {
    throw InputError("image_size must be " + std::to_string(kToyImageSize) + " for the toy set");
  }
  if (dims.text_dim % 2) throw InputError("text_dim must be even");
}

std::string TrainingConfig::to_text() const {
  std::ostringstream out;
  for (const auto& k : config_keys()) out << k.name << '=' << k.get(*this) << '\n';
  return out.str();
}

TrainingConfig TrainingConfig::parse(const std::string& text) {
  TrainingConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(lineno) + ": expected key=value");
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

TrainingConfig TrainingConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse(text.str());
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string TrainingConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::size_t TrainingConfig::total_steps(std::size_t train_size) const {
  if (epochs == 0) return steps;
  return epochs * ((train_size + batch_size - 1) / batch_size);
}

// ------------------------------------------------------------------- model

Model Model::create(const TrainingConfig& config, std::size_t vocab_size) {
  ModelDims dims = config.dims;
  dims.vocab_size = vocab_size;
  Initializer init(config.seed);
  Model m;
  m.gen = Generator<float>::create(init, dims, config.options);
  m.d_icm = Discriminator<float>::create(init, dims, Stage::Icm);
  m.d_fir = Discriminator<float>::create(init, dims, Stage::Fir);
  return m;
}

ParamList<float> Model::generator_params() const {
  ParamList<float> p;
  gen.collect(p, "gen");
  return p;
}

ParamList<float> Model::discriminator_params() const {
  ParamList<float> p;
  d_icm.collect(p, "d_icm");
  d_fir.collect(p, "d_fir");
  return p;
}

ParamList<float> Model::all_params() const {
  ParamList<float> p = generator_params();
  for (auto& d : discriminator_params()) p.push_back(d);
  return p;
}

// -------------------------------------------------------------------- adam

void Adam::step(const ParamList<float>& params) {
  // Validate everything first so a NaN leaves no parameter half-updated.
  for (const auto& [name, t] : params) {
    if (!t.requires_grad() || !t.has_grad()) continue;
    auto g = const_cast<Tensor<float>&>(t).mutable_grad();
    for (float v : g) {
      if (!std::isfinite(v)) throw NumericError("adam: non-finite gradient in " + name);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, tensor] : params) {
    if (!tensor.requires_grad() || !tensor.has_grad()) continue;
    Tensor<float> t = tensor;
    auto g = t.mutable_grad();
    auto x = t.mutable_data();
    auto& mom = moments_[name];
    if (mom.m.size() != x.size()) {
      mom.m.assign(x.size(), 0.0f);
      mom.v.assign(x.size(), 0.0f);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g[i];
      const double m = beta1_ * mom.m[i] + (1.0 - beta1_) * gi;
      const double v = beta2_ * mom.v[i] + (1.0 - beta2_) * gi * gi;
      mom.m[i] = static_cast<float>(m);
      mom.v[i] = static_cast<float>(v);
      const double mhat = static_cast<double>(mom.m[i]) / c1, vhat = static_cast<double>(mom.v[i]) / c2;
      x[i] = static_cast<float>(x[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

void zero_grads(const ParamList<float>& params) {
  for (const auto& p : params) const_cast<Tensor<float>&>(p.tensor).zero_grad();
}

// -------------------------------------------------------------- checkpoint

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get(std::istream& in, const std::string& where) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (in.gcount() != static_cast<std::streamsize>(sizeof v)) throw FormatError(where + ": truncated checkpoint");
  return v;
}

// 64-bit counters split into four exact 16-bit float chunks.
Tensor<float> encode_u64(std::uint64_t v) {
  std::vector<float> out(4);
  for (int i = 0; i < 4; ++i) out[i] = static_cast<float>((v >> (16 * i)) & 0xffff);
  return Tensor<float>({4}, std::move(out));
}

std::uint64_t decode_u64(const Tensor<float>& t) {
  if (t.size() != 4) throw FormatError("checkpoint counter has " + std::to_string(t.size()) + " elements, expected 4");
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint64_t>(t[i]) << (16 * i);
  return v;
}

Tensor<float> encode_text(const std::string& s) {
  std::vector<float> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = static_cast<float>(static_cast<unsigned char>(s[i]));
  return Tensor<float>({std::max<std::size_t>(s.size(), 1)}, s.empty() ? std::vector<float>{0.0f} : std::move(out));
}

std::string decode_text(const Tensor<float>& t) {
  std::string s;
  for (float v : t.values()) {
    if (v != 0.0f) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  }
  return s;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const TensorTable& tensors) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write checkpoint " + tmp.string());
    out.write("MIMN", 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("tensor name too long: " + name);
      if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("tensor rank too large: " + name);
      put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
      for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
      out.write(reinterpret_cast<const char*>(t.values().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    out.flush();
    if (!out) throw FormatError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

TensorTable load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::string where = path.string();
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "MIMN", 4) != 0) throw FormatError(where + ": not a checkpoint (bad magic)");
  const auto version = get<std::uint32_t>(in, where);
  if (version != kCheckpointVersion) {
    throw FormatError(where + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = get<std::uint32_t>(in, where);
  TensorTable out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint16_t>(in, where);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (in.gcount() != len) throw FormatError(where + ": truncated checkpoint");
    const auto rank = get<std::uint8_t>(in, where);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint32_t>(in, where);
    std::vector<float> values(numel(shape));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(values.size() * sizeof(float))) {
      throw FormatError(where + ": truncated payload of " + name);
    }
    out.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(where + ": trailing bytes after last tensor");
  return out;
}

const Tensor<float>& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

TrainingConfig Checkpoint::config() const { return TrainingConfig::parse(decode_text(at("meta/config"))); }

Vocabulary Checkpoint::vocabulary() const {
  std::istringstream in(decode_text(at("meta/vocab")));
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) v.add(line);
  }
  return v;
}

std::uint64_t Checkpoint::step() const { return decode_u64(at("meta/step")); }

void load_parameters(const Checkpoint& ckpt, Model& model) {
  for (auto& [name, t] : model.all_params()) {
    const auto& src = ckpt.at(name);
    if (src.shape() != t.shape()) {
      throw FormatError("checkpoint tensor " + name + " has shape " + to_string(src.shape()) + ", model expects " +
                        to_string(t.shape()));
    }
    Tensor<float> dst = t;
    std::copy(src.values().begin(), src.values().end(), dst.mutable_data().begin());
  }
}

// ----------------------------------------------------------------- reports

double StepReport::value(const std::string& name) const {
  for (const auto& [n, v] : values) {
    if (n == name) return v;
  }
  throw ContractError("step report has no value '" + name + "'");
}

std::vector<std::string> report_columns() {
  return {"loss_g",     "rec_icm",    "rec_fir", "pseudo",  "mem_icm", "mem_fir", "d_mem_icm", "d_mem_fir",
          "loss_d",     "d_icm",      "d_fir",   "adv_I_icm", "adv_T_icm", "adv_I_fir", "adv_T_fir",
          "gap_icm",    "gap_fir"};
}

// ----------------------------------------------------------------- trainer

namespace {

double scalar(const Tensor<float>& t) { return static_cast<double>(t.item()); }

// Accumulates per-sample values into batch means.
struct Means {
  std::vector<std::pair<std::string, double>> sums;
  void add(const std::string& name, double v) {
    for (auto& [n, s] : sums) {
      if (n == name) {
        s += v;
        return;
      }
    }
    sums.emplace_back(name, v);
  }
  std::vector<std::pair<std::string, double>> divided(std::size_t n) const {
    auto out = sums;
    for (auto& entry : out) entry.second /= static_cast<double>(n);
    return out;
  }
};

}  // namespace

Trainer::Trainer(TrainingConfig config, const std::vector<ToySample>& train, Vocabulary vocab)
    : config_(std::move(config)),
      vocab_(std::move(vocab)),
      gen_opt_(config_.learning_rate, config_.adam_beta1, config_.adam_beta2, config_.adam_eps),
      disc_opt_(config_.learning_rate, config_.adam_beta1, config_.adam_beta2, config_.adam_eps) {
  config_.validate();
  if (train.empty()) throw InputError("trainer: empty training set");
  for (const auto& s : train) {
    TrainItem item;
    item.image = s.image;
    item.image_up = ops::upsample_nearest2x(s.image);
    item.boundary = s.boundary;
    item.caption = tokenize(s.caption, vocab_);
    items_.push_back(std::move(item));
  }
  model_ = Model::create(config_, vocab_.size());
}

bool Trainer::is_reconstruction(std::size_t k) const {
  return k % (config_.reconstruction_steps + config_.adversarial_steps) < config_.reconstruction_steps;
}

std::vector<std::size_t> Trainer::batch_for(std::size_t k) const {
  std::mt19937_64 rng(derive_seed(config_.seed, 2 * k));
  const std::size_t n = items_.size(), b = config_.batch_size;
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<std::size_t> out;
  // Without replacement while the pool lasts, then refill.
  std::size_t left = 0;
  while (out.size() < b) {
    if (left == 0) left = n;
    const std::size_t j = rng() % left;
    out.push_back(pool[j]);
    std::swap(pool[j], pool[left - 1]);
    --left;
  }
  return out;
}

StepReport Trainer::reconstruction_step(const std::vector<std::size_t>& batch) {
  auto& gen = model_.gen;
  gen.bank.unfreeze();
  const auto& w = config_.weights;
  const bool use_memory_loss = gen.options.use_memory && (w.icm.memory > 0.0 || w.fir.memory > 0.0);
  std::mt19937_64 rng(derive_seed(config_.seed, 2 * step_ + 1));
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  const auto gen_params = model_.generator_params();
  const auto disc_params = model_.discriminator_params();
  zero_grads(gen_params);
  zero_grads(disc_params);

  Means means;
  for (std::size_t idx : batch) {
    const auto& item = items_[idx];
    const auto inputs = gen.encode_inputs(item.image, item.boundary);
    const auto fused = gen.texture_for(gen.encode_caption(item.caption));
    const auto state = gen.manipulate(inputs, fused, Stage::Fir);

    GeneratorLosses<float> losses;
    losses.icm.reconstruction = loss_rec(item.image, state.coarse, Pairing::Paired);
    losses.fir.reconstruction = loss_rec(item.image, *state.fine, Pairing::Paired);
    if (w.pseudo > 0.0) losses.pseudo = loss_pseudo(state.v_i, state.alpha, fused.global);

    std::optional<RandomMemorySample<float>> random;
    if (use_memory_loss) {
      random = random_memory_manipulation(gen, inputs, item.caption.size(), Stage::Fir, rng);
      losses.icm.memory = loss_memory_random(random->state.coarse, model_.d_icm);
      losses.fir.memory = loss_memory_random(*random->state.fine, model_.d_fir);
    }
    const auto total = integrate_generator(losses, w);
    if (total.requires_grad()) ops::scale(total, inv_b).backward();

    means.add("loss_g", scalar(total));
    means.add("rec_icm", scalar(*losses.icm.reconstruction));
    means.add("rec_fir", scalar(*losses.fir.reconstruction));
    if (losses.pseudo) means.add("pseudo", scalar(*losses.pseudo));
    if (random) {
      means.add("mem_icm", scalar(*losses.icm.memory));
      means.add("mem_fir", scalar(*losses.fir.memory));
      // The reality discriminators learn to separate real images from
      // random-memory manipulations.
      DiscriminatorLosses<float> d;
      d.icm = loss_discriminator_reality(model_.d_icm, item.image, random->state.coarse);
      d.fir = loss_discriminator_reality(model_.d_fir, item.image_up, *random->state.fine);
      ops::scale(integrate_discriminator(d, w), inv_b).backward();
      means.add("d_mem_icm", scalar(*d.icm));
      means.add("d_mem_fir", scalar(*d.fir));
    }
  }
  gen_opt_.step(gen_params);
  if (use_memory_loss) disc_opt_.step(disc_params);
  zero_grads(gen_params);
  zero_grads(disc_params);
  return {step_, "reconstruction", means.divided(batch.size())};
}

StepReport Trainer::adversarial_step(const std::vector<std::size_t>& batch) {
  auto& gen = model_.gen;
  const auto& w = config_.weights;
  std::mt19937_64 rng(derive_seed(config_.seed, 2 * step_ + 1));
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  const auto gen_params = model_.generator_params();
  const auto disc_params = model_.discriminator_params();
  zero_grads(gen_params);
  zero_grads(disc_params);

  std::vector<std::vector<int>> captions;
  for (std::size_t idx : batch) captions.push_back(items_[idx].caption);
  const auto mismatch = draw_mismatched(captions, rng);

  gen.bank.freeze();
  struct Fake {
    ManipulationState<float> state;
    const std::vector<int>* caption;
  };
  std::vector<Fake> fakes;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& item = items_[batch[i]];
    const auto& other = captions[mismatch[i]];
    const auto inputs = gen.encode_inputs(item.image, item.boundary);
    fakes.push_back({gen.manipulate(inputs, gen.texture_for(gen.encode_caption(other)), Stage::Fir), &other});
  }

  // Step 1: discriminators on L_D, fakes detached.
  Means means;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& item = items_[batch[i]];
    const auto& fake = fakes[i];
    const auto t_icm = loss_discriminator(model_.d_icm, item.image, item.caption, fake.state.coarse, *fake.caption);
    const auto t_fir = loss_discriminator(model_.d_fir, item.image_up, item.caption, *fake.state.fine, *fake.caption);
    DiscriminatorLosses<float> d{t_icm.total, t_fir.total};
    const auto total = integrate_discriminator(d, w);
    ops::scale(total, inv_b).backward();
    means.add("loss_d", scalar(total));
    means.add("d_icm", scalar(t_icm.total));
    means.add("d_fir", scalar(t_fir.total));
    // D_I(real) - D_I(fake), recovered from the two reality terms.
    means.add("gap_icm", std::exp(-scalar(t_icm.real_reality)) - (1.0 - std::exp(-scalar(t_icm.fake_reality))));
    means.add("gap_fir", std::exp(-scalar(t_fir.real_reality)) - (1.0 - std::exp(-scalar(t_fir.fake_reality))));
  }
  disc_opt_.step(disc_params);
  zero_grads(disc_params);

  // Step 2: generators against the updated discriminators.
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& fake = fakes[i];
    GeneratorLosses<float> losses;
    losses.icm.reality = loss_generator_reality(model_.d_icm, fake.state.coarse);
    losses.icm.text = loss_generator_text(model_.d_icm, fake.state.coarse, *fake.caption);
    losses.fir.reality = loss_generator_reality(model_.d_fir, *fake.state.fine);
    losses.fir.text = loss_generator_text(model_.d_fir, *fake.state.fine, *fake.caption);
    const auto total = integrate_generator(losses, w);
    if (total.requires_grad()) ops::scale(total, inv_b).backward();
    means.add("loss_g", scalar(total));
    means.add("adv_I_icm", scalar(*losses.icm.reality));
    means.add("adv_T_icm", scalar(*losses.icm.text));
    means.add("adv_I_fir", scalar(*losses.fir.reality));
    means.add("adv_T_fir", scalar(*losses.fir.text));
  }
  fakes.clear();
  gen_opt_.step(gen_params);
  zero_grads(gen_params);
  zero_grads(disc_params);
  gen.bank.unfreeze();
  return {step_, "adversarial", means.divided(batch.size())};
}

StepReport Trainer::step() {
  const auto batch = batch_for(step_);
  StepReport r = is_reconstruction(step_) ? reconstruction_step(batch) : adversarial_step(batch);
  ++step_;
  return r;
}

void Trainer::run(std::size_t total, LossLog* log, const std::filesystem::path& checkpoint_path,
                  const std::function<void(const StepReport&)>& on_step) {
  while (step_ < total) {
    const auto report = step();
    if (log) log->append(report.step, report.phase, report.values);
    if (on_step) on_step(report);
    if (!checkpoint_path.empty() && config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0) {
      checkpoint().save(checkpoint_path);
    }
  }
  if (!checkpoint_path.empty()) checkpoint().save(checkpoint_path);
}

namespace {

void export_adam(TensorTable& out, const std::string& group, const Adam& opt, const ParamList<float>& params) {
  out.emplace_back("adam/" + group + "/t", encode_u64(opt.steps_taken()));
  for (const auto& p : params) {
    auto it = opt.moments().find(p.name);
    if (it == opt.moments().end()) continue;
    out.emplace_back("adam/" + group + "/m/" + p.name, Tensor<float>(p.tensor.shape(), it->second.m));
    out.emplace_back("adam/" + group + "/v/" + p.name, Tensor<float>(p.tensor.shape(), it->second.v));
  }
}

void import_adam(const Checkpoint& ckpt, const std::string& group, Adam& opt, const ParamList<float>& params) {
  std::map<std::string, Adam::Moments> moments;
  for (const auto& p : params) {
    const std::string m = "adam/" + group + "/m/" + p.name, v = "adam/" + group + "/v/" + p.name;
    if (!ckpt.contains(m)) continue;
    const auto& mt = ckpt.at(m);
    const auto& vt = ckpt.at(v);
    if (mt.shape() != p.tensor.shape() || vt.shape() != p.tensor.shape()) {
      throw FormatError("checkpoint optimizer state for " + p.name + " has the wrong shape");
    }
    moments[p.name] = {mt.values(), vt.values()};
  }
  opt.restore(decode_u64(ckpt.at("adam/" + group + "/t")), std::move(moments));
}

}  // namespace

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.tensors.emplace_back("meta/step", encode_u64(step_));
  c.tensors.emplace_back("meta/config", encode_text(config_.to_text()));
  std::string vocab;
  for (std::size_t i = 2; i < vocab_.size(); ++i) vocab += vocab_.token(static_cast<int>(i)) + "\n";
  c.tensors.emplace_back("meta/vocab", encode_text(vocab));
  for (const auto& p : model_.all_params()) c.tensors.emplace_back(p.name, p.tensor.detach());
  export_adam(c.tensors, "gen", gen_opt_, model_.generator_params());
  export_adam(c.tensors, "disc", disc_opt_, model_.discriminator_params());
  return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.config().to_text() != config_.to_text()) {
    throw FormatError("checkpoint was written with a different training configuration");
  }
  load_parameters(ckpt, model_);
  import_adam(ckpt, "gen", gen_opt_, model_.generator_params());
  import_adam(ckpt, "disc", disc_opt_, model_.discriminator_params());
  step_ = static_cast<std::size_t>(ckpt.step());
}

}  // namespace mimnet
