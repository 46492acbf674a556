#pragma once

// Library versus naive-loop oracle on random small instances. Shared by the
// unit tests and the acceptance gate.

#include <map>
#include <string>

#include "mimnet/seed.hpp"
#include "oracles.hpp"

namespace oracle {

struct Instance {
  mimnet::ModelDims dims;
  mimnet::Initializer init;
  mimnet::Generator<double> gen;
  mimnet::Discriminator<double> disc;
  std::mt19937_64 rng;
  std::vector<int> ids;

  explicit Instance(std::uint64_t seed)
      : dims(pick_dims(seed)),
        init(seed),
        gen(mimnet::Generator<double>::create(init, dims)),
        disc(mimnet::Discriminator<double>::create(init, dims, mimnet::Stage::Icm)),
        rng(mimnet::derive_seed(seed, 3)) {
    // The second residual conv starts at zero; give it values so the block is exercised.
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& w : gen.icm.residual.second.weight.mutable_data()) w = n(rng);
    for (auto& w : gen.icm.residual.second.bias.mutable_data()) w = n(rng);
    ids.resize(2 + rng() % 4);
    for (auto& id : ids) id = 2 + static_cast<int>(rng() % (dims.vocab_size - 2));
  }

  static mimnet::ModelDims pick_dims(std::uint64_t seed) {
    auto d = mimnet::ModelDims::reduced(9);
    d.memory_width = 2 + seed % 3;
    d.memory_count = 2 + (seed / 3) % 4;
    d.text_dim = 2 * (1 + seed % 3);
    return d;
  }

  mimnet::Tensor<double> uniform(mimnet::Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(mimnet::numel(shape));
    for (auto& x : v) x = u(rng);
    return mimnet::Tensor<double>(std::move(shape), std::move(v));
  }
};

/// Worst absolute elementwise error per component over `instances` seeds.
inline std::map<std::string, double> equivalence_errors(std::size_t instances) {
  using namespace mimnet;
  std::map<std::string, double> worst;
  auto note = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };

  for (std::size_t s = 0; s < instances; ++s) {
    Instance w(derive_seed(2024, s));
    const auto& d = w.dims;
    const std::size_t l = d.memory_width, n = d.memory_count, t = w.ids.size();

    // Text encoder and memory fusion.
    const auto text = mimnet::encode_text(w.ids, w.gen.text);
    const Vec h = oracle::encode_text(w.ids, w.gen.text);
    note("encode_text", max_abs_diff(values(text.hidden), h));
    const auto fused = mimnet::fuse_memory(text, w.gen.bank);
    const Fused f = oracle::fuse_memory(h, values(w.gen.bank.key), values(w.gen.bank.memories), t, d.text_dim, n, l);
    note("fuse_memory", std::max({max_abs_diff(values(fused.attention), f.attention),
                                  max_abs_diff(values(fused.word_textures), f.words),
                                  max_abs_diff(values(fused.global), f.global)}));

    // TLU on a random feature map.
    const Tensor<double> vc = w.uniform({l, 2, 3}, -1.5, 1.5);
    note("tlu", max_abs_diff(values(mimnet::tlu(FeatureMap<double>{vc}, fused.global)), oracle::tlu(grid(vc), f.global).v));

    // ICM on random feature maps.
    const std::size_t fs = d.feature_size();
    const Tensor<double> vi = w.uniform({l, fs, fs}, -1, 1), vb = w.uniform({l, fs, fs}, -1, 1);
    const auto icm = mimnet::icm_forward(FeatureMap<double>{vi}, FeatureMap<double>{vb}, fused, w.gen.icm);
    const Icm ref = oracle::icm_forward(grid(vi), grid(vb), f.global, w.gen.icm);
    note("icm_forward", std::max({max_abs_diff(values(icm.v_c.tensor), ref.v_c.v),
                                  max_abs_diff(values(icm.alpha), ref.alpha.v),
                                  max_abs_diff(values(icm.v_u.tensor), ref.v_u.v),
                                  max_abs_diff(values(icm.image), ref.image.v)}));

    // FIR on the ICM output.
    const auto fir = mimnet::fir_forward(icm.v_u, fused, w.gen.fine_decoder);
    const Fir fref = oracle::fir_forward(ref.v_u, f.words, t, w.gen.fine_decoder);
    note("fir_forward", std::max(max_abs_diff(values(fir.h_f.tensor), fref.h_f.v),
                                 max_abs_diff(values(fir.image), fref.image.v)));

    // Text conformity of a random image.
    const Tensor<double> img = w.uniform({3, d.image_size, d.image_size}, -1, 1);
    const auto dtext = w.disc.encode_caption(w.ids);
    const auto score = text_conformity_score(img, dtext, w.disc);
    const Conformity cref = text_conformity(grid(img), values(dtext.hidden), t, w.disc);
    note("text_conformity_score", std::max({max_abs_diff(values(score.inner_logits), cref.inner),
                                            max_abs_diff(values(score.weights), cref.weights),
                                            std::abs(score.log_score.item() - cref.log_score)}));
  }
  return worst;
}

}  // namespace oracle
