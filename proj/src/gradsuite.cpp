#include <algorithm>
#include <cmath>
#include <random>

#include "mimnet/gradcheck.hpp"
#include "mimnet/harness.hpp"
#include "mimnet/seed.hpp"

namespace mimnet {
namespace {

using D = double;
using Tn = Tensor<D>;
using Inputs = std::vector<Tn>;

constexpr double kPrimitiveTolerance = 1e-6;
constexpr double kCompositeTolerance = 1e-4;
// Composite gradients reach 1e-7 on some LSTM weights, where central
// differences carry ~1e-9 of rounding noise; below this they compare absolutely.
constexpr double kCompositeFloor = 1e-4;
constexpr std::size_t kVocab = 10;

// Uniform leaf in [lo, hi]; with `gap`, values are kept at least `gap` away from zero.
Tn leaf(Shape shape, std::mt19937_64& rng, double lo, double hi, double gap = 0.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<D> v(numel(shape));
  for (auto& x : v) {
    do x = u(rng);
    while (std::abs(x) < gap);
  }
  return Tn(std::move(shape), std::move(v), true);
}

// Scalar sum(y * w) for a fixed random w, so every output coordinate
// contributes a distinct gradient.
Tn project(const Tn& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<D> w(y.size());
  for (auto& x : w) x = n(rng);
  return ops::sum(ops::mul(y, Tn(y.shape(), std::move(w))));
}

template <typename M>
Inputs params_of(const M& module) {
  ParamList<D> p;
  module.collect(p, "m");
  Inputs out;
  for (auto& n : p) out.push_back(n.tensor);
  return out;
}

Inputs join(Inputs a, const Inputs& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<int> caption(std::mt19937_64& rng, std::size_t length) {
  std::vector<int> ids(length);
  for (auto& id : ids) id = 2 + static_cast<int>(rng() % (kVocab - 2));
  return ids;
}

using Check = std::function<double(std::uint64_t)>;

double run(const std::function<Tn()>& loss, const Inputs& inputs) {
  return grad_check(loss, inputs).max_relative_error;
}

double run_composite(const std::function<Tn()>& loss, const Inputs& inputs) {
  return grad_check(loss, inputs, 1e-5, kCompositeFloor).max_relative_error;
}

// ---------------------------------------------------------------- primitives

std::vector<std::pair<std::string, Check>> primitive_checks() {
  std::vector<std::pair<std::string, Check>> c;
  auto unary = [&](std::string name, auto op, double lo, double hi, double gap = 0.0) {
    c.emplace_back(std::move(name), [=](std::uint64_t s) {
      std::mt19937_64 rng(s);
      Tn x = leaf({3, 4}, rng, lo, hi, gap);
      return run([=] { return project(op(x), s); }, {x});
    });
  };
  auto binary = [&](std::string name, auto op, Shape sa, Shape sb, double lo, double hi) {
    c.emplace_back(std::move(name), [=](std::uint64_t s) {
      std::mt19937_64 rng(s);
      Tn a = leaf(sa, rng, -1.5, 1.5), b = leaf(sb, rng, lo, hi);
      return run([=] { return project(op(a, b), s); }, {a, b});
    });
  };
  binary("add", [](const Tn& a, const Tn& b) { return ops::add(a, b); }, {2, 3, 4}, {2, 3, 4}, -1.5, 1.5);
  binary("add_broadcast", [](const Tn& a, const Tn& b) { return ops::add(a, b); }, {2, 3, 4}, {4}, -1.5, 1.5);
  binary("sub", [](const Tn& a, const Tn& b) { return ops::sub(a, b); }, {3, 4}, {1, 4}, -1.5, 1.5);
  binary("mul", [](const Tn& a, const Tn& b) { return ops::mul(a, b); }, {2, 3, 4}, {3, 1}, -1.5, 1.5);
  binary("div", [](const Tn& a, const Tn& b) { return ops::div(a, b); }, {3, 4}, {3, 4}, 0.5, 2.0);
  binary("matmul", [](const Tn& a, const Tn& b) { return ops::matmul(a, b); }, {3, 4}, {4, 2}, -1.5, 1.5);
  binary("mse", [](const Tn& a, const Tn& b) { return ops::mse(a, b); }, {3, 4}, {3, 4}, -1.5, 1.5);
  binary("l2_distance", [](const Tn& a, const Tn& b) { return ops::l2_distance(a, b); }, {3, 4}, {3, 4}, -1.5, 1.5);
  binary("channel_dot", [](const Tn& a, const Tn& b) { return ops::channel_dot(a, b); }, {3, 2, 2}, {3}, -1.5, 1.5);

  unary("add_scalar", [](const Tn& x) { return ops::add_scalar(x, 0.7); }, -2, 2);
  unary("scale", [](const Tn& x) { return ops::scale(x, -1.3); }, -2, 2);
  unary("one_minus", [](const Tn& x) { return ops::one_minus(x); }, -2, 2);
  unary("exp", [](const Tn& x) { return ops::exp(x); }, -2, 2);
  unary("log", [](const Tn& x) { return ops::log(x); }, 0.3, 3);
  unary("tanh", [](const Tn& x) { return ops::tanh(x); }, -2, 2);
  unary("sigmoid", [](const Tn& x) { return ops::sigmoid(x); }, -3, 3);
  unary("relu", [](const Tn& x) { return ops::relu(x); }, -2, 2, 0.05);
  unary("leaky_relu", [](const Tn& x) { return ops::leaky_relu(x); }, -2, 2, 0.05);
  unary("log_sigmoid", [](const Tn& x) { return ops::log_sigmoid(x); }, -4, 4);
  unary("log1mexp", [](const Tn& x) { return ops::log1mexp(x); }, -3, -0.1);
  unary("softmax_rows", [](const Tn& x) { return ops::softmax(x, 1); }, -2, 2);
  unary("softmax_cols", [](const Tn& x) { return ops::softmax(x, 0); }, -2, 2);
  unary("transpose", [](const Tn& x) { return ops::transpose(x); }, -2, 2);
  unary("reshape", [](const Tn& x) { return ops::reshape(x, {2, 6}); }, -2, 2);
  unary("slice", [](const Tn& x) { return ops::slice(x, 1, 1, 2); }, -2, 2);
  unary("sum", [](const Tn& x) { return ops::mul(ops::sum(x), ops::sum(x)); }, -2, 2);
  unary("mean", [](const Tn& x) { return ops::exp(ops::mean(x)); }, -2, 2);
  unary("sum_axis", [](const Tn& x) { return ops::sum(x, 0); }, -2, 2);
  unary("mean_axis_keepdim", [](const Tn& x) { return ops::mean(x, 1, true); }, -2, 2);
  unary("concat", [](const Tn& x) { return ops::concat(std::vector<Tn>{x, ops::exp(x)}, 1); }, -2, 2);
  unary("add_n", [](const Tn& x) { return ops::add_n(std::vector<Tn>{x, ops::tanh(x), x}); }, -2, 2);
  unary("l1_distance", [](const Tn& x) { return ops::l1_distance(x, Tn::zeros({3, 4})); }, -2, 2, 0.05);

  auto spatial = [&](std::string name, auto op, Shape shape) {
    c.emplace_back(std::move(name), [=](std::uint64_t s) {
      std::mt19937_64 rng(s);
      Tn x = leaf(shape, rng, -1.5, 1.5);
      return run([=] { return project(op(x), s); }, {x});
    });
  };
  spatial("upsample_nearest2x", [](const Tn& x) { return ops::upsample_nearest2x(x); }, {2, 3, 3});
  spatial("avg_pool2x", [](const Tn& x) { return ops::avg_pool2x(x); }, {2, 4, 4});

  c.emplace_back("conv2d", [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tn x = leaf({2, 5, 5}, rng, -1, 1), k = leaf({3, 2, 3, 3}, rng, -1, 1);
    return run([=] { return project(ops::conv2d(x, k, 1, 1), s); }, {x, k});
  });
  c.emplace_back("conv2d_strided_bias_batched", [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tn x = leaf({2, 2, 6, 6}, rng, -1, 1), k = leaf({3, 2, 3, 3}, rng, -1, 1), b = leaf({3}, rng, -1, 1);
    return run([=] { return project(ops::conv2d(x, k, b, 2, 1), s); }, {x, k, b});
  });
  c.emplace_back("embedding", [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tn table = leaf({5, 3}, rng, -1, 1);
    return run([=] { return project(ops::embedding(table, {1, 3, 1, 4}), s); }, {table});
  });
  return c;
}

// ---------------------------------------------------------------- composites

struct World {
  ModelDims dims = ModelDims::reduced(kVocab);
  Initializer init;
  Generator<D> gen;
  Discriminator<D> d_icm, d_fir;
  std::mt19937_64 rng;
  Tn image, boundary;
  std::vector<int> ids, other;

  explicit World(std::uint64_t seed)
      : init(seed),
        gen(Generator<D>::create(init, dims)),
        d_icm(Discriminator<D>::create(init, dims, Stage::Icm)),
        d_fir(Discriminator<D>::create(init, dims, Stage::Fir)),
        rng(derive_seed(seed, 1)) {
    image = leaf({3, dims.image_size, dims.image_size}, rng, -0.9, 0.9);
    boundary = leaf({1, dims.image_size, dims.image_size}, rng, 0.0, 1.0);
    ids = caption(rng, 4);
    other = caption(rng, 3);
    // Zero-initialized tensors put ReLU inputs exactly on the kink (a dead
    // patch plus a zero bias) and hide gradients behind the identity residual.
    std::normal_distribution<double> jitter(0.0, 0.3);
    for (auto& w : gen.icm.residual.second.weight.mutable_data()) w = jitter(rng);
    for (const auto& list : {params_of(gen), params_of(d_icm), params_of(d_fir)}) {
      for (auto t : list) {
        auto v = t.mutable_data();
        if (std::all_of(v.begin(), v.end(), [](D x) { return x == 0.0; })) {
          for (auto& x : v) x = 0.3 * jitter(rng);
        }
      }
    }
  }

  Inputs gen_params() const { return params_of(gen); }
  const Discriminator<D>& disc(Stage s) const { return s == Stage::Icm ? d_icm : d_fir; }
  std::size_t out_size(Stage s) const { return s == Stage::Icm ? dims.image_size : dims.fine_size(); }
  Tn fake_image(Stage s) { return leaf({3, out_size(s), out_size(s)}, rng, -0.9, 0.9); }
  Tn hidden(std::size_t t) { return leaf({t, dims.text_dim}, rng, -1, 1); }
  FusedTexture<D> fused_from(const Tn& words) const {
    FusedTexture<D> f;
    f.word_textures = words;
    f.global = ops::mean(words, 0);
    return f;
  }
};

std::vector<std::pair<std::string, Check>> composite_checks() {
  std::vector<std::pair<std::string, Check>> c;
  c.emplace_back("encode_text", [](std::uint64_t s) {
    World w(s);
    return run_composite([&] { return project(encode_text(w.ids, w.gen.text).hidden, s); }, params_of(w.gen.text));
  });
  c.emplace_back("fuse_memory", [](std::uint64_t s) {
    World w(s);
    Tn h = w.hidden(4);
    return run_composite(
        [&] {
          const auto f = fuse_memory(TextEncoding<D>{w.ids, h}, w.gen.bank);
          return ops::add(project(f.word_textures, s), project(f.global, s + 1));
        },
        join({h}, params_of(w.gen.bank)));
  });
  c.emplace_back("texture_from_attention", [](std::uint64_t s) {
    World w(s);
    const Tn rows = random_attention_rows<D>(4, w.dims.memory_count, w.rng);
    return run_composite([&] { return project(texture_from_attention(rows, w.gen.bank).word_textures, s); },
               {w.gen.bank.memories});
  });
  c.emplace_back("word_importance", [](std::uint64_t s) {
    World w(s);
    Tn h = w.hidden(4);
    return run_composite([&] { return project(word_importance(TextEncoding<D>{w.ids, h}), s); }, {h});
  });
  c.emplace_back("encode_image", [](std::uint64_t s) {
    World w(s);
    return run_composite([&] { return project(encode_image(w.image, w.gen.encoder).tensor, s); },
               join({w.image}, params_of(w.gen.encoder)));
  });
  c.emplace_back("encode_boundary", [](std::uint64_t s) {
    World w(s);
    return run_composite([&] { return project(encode_boundary(w.boundary, w.gen.encoder).tensor, s); },
               join({w.boundary}, params_of(w.gen.encoder)));
  });
  c.emplace_back("residual_block", [](std::uint64_t s) {
    World w(s);
    Tn v = leaf({w.dims.memory_width, 2, 2}, w.rng, -1, 1);
    return run_composite([&] { return project(residual_block(FeatureMap<D>{v}, w.gen.icm.residual).tensor, s); },
               join({v}, params_of(w.gen.icm.residual)));
  });
  c.emplace_back("decode_coarse", [](std::uint64_t s) {
    World w(s);
    Tn v = leaf({w.dims.memory_width, w.dims.fused_size(), w.dims.fused_size()}, w.rng, -1, 1);
    return run_composite([&] { return project(decode_coarse(FeatureMap<D>{v}, w.gen.icm.decoder), s); },
               join({v}, params_of(w.gen.icm.decoder)));
  });
  c.emplace_back("decode_fine", [](std::uint64_t s) {
    World w(s);
    Tn v = leaf({2 * w.dims.memory_width, w.dims.image_size, w.dims.image_size}, w.rng, -1, 1);
    return run_composite([&] { return project(decode_fine(FeatureMap<D>{v}, w.gen.fine_decoder), s); },
               join({v}, params_of(w.gen.fine_decoder)));
  });
  c.emplace_back("tlu", [](std::uint64_t s) {
    World w(s);
    Tn v = leaf({w.dims.memory_width, 2, 2}, w.rng, -1, 1), h = leaf({w.dims.memory_width}, w.rng, -1, 1);
    return run_composite([&] { return project(tlu(FeatureMap<D>{v}, h), s); }, {v, h});
  });
  c.emplace_back("icm_forward", [](std::uint64_t s) {
    World w(s);
    const std::size_t f = w.dims.feature_size(), l = w.dims.memory_width;
    Tn vi = leaf({l, f, f}, w.rng, -1, 1), vb = leaf({l, f, f}, w.rng, -1, 1), words = leaf({3, l}, w.rng, -1, 1);
    return run_composite(
        [&] {
          const auto o = icm_forward(FeatureMap<D>{vi}, FeatureMap<D>{vb}, w.fused_from(words), w.gen.icm);
          return ops::add(project(o.image, s), project(o.alpha, s + 1));
        },
        join({vi, vb, words}, params_of(w.gen.icm)));
  });
  c.emplace_back("fir_forward", [](std::uint64_t s) {
    World w(s);
    const std::size_t u = w.dims.fused_size(), l = w.dims.memory_width;
    Tn vu = leaf({l, u, u}, w.rng, -1, 1), words = leaf({3, l}, w.rng, -1, 1);
    return run_composite(
        [&] { return project(fir_forward(FeatureMap<D>{vu}, w.fused_from(words), w.gen.fine_decoder).image, s); },
        join({vu, words}, params_of(w.gen.fine_decoder)));
  });
  for (Stage stage : {Stage::Icm, Stage::Fir}) {
    const std::string tag = stage_name(stage);
    c.emplace_back("generate_" + tag, [stage](std::uint64_t s) {
      World w(s);
      return run_composite([&] { return project(generate(w.image, w.boundary, w.ids, w.gen, stage), s); },
                 join({w.image}, w.gen_params()));
    });
    c.emplace_back("reality_score_" + tag, [stage](std::uint64_t s) {
      World w(s);
      Tn img = w.fake_image(stage);
      return run_composite([&] { return reality_score(img, w.disc(stage)).log_score; }, join({img}, params_of(w.disc(stage))));
    });
    c.emplace_back("text_conformity_score_" + tag, [stage](std::uint64_t s) {
      World w(s);
      Tn img = w.fake_image(stage);
      return run_composite(
          [&] {
            const auto& d = w.disc(stage);
            return text_conformity_score(img, d.encode_caption(w.ids), d).log_score;
          },
          join({img}, params_of(w.disc(stage))));
    });
    c.emplace_back("loss_rec_" + tag, [stage](std::uint64_t s) {
      World w(s);
      return run_composite(
          [&] { return loss_rec(w.image.detach(), generate(w.image, w.boundary, w.ids, w.gen, stage), Pairing::Paired); },
          w.gen_params());
    });
    c.emplace_back("loss_memory_random_" + tag, [stage](std::uint64_t s) {
      World w(s);
      return run_composite(
          [&] {
            std::mt19937_64 rng(s);
            const auto inputs = w.gen.encode_inputs(w.image, w.boundary);
            const auto r = random_memory_manipulation(w.gen, inputs, w.ids.size(), stage, rng);
            return loss_memory_random(r.state.output(stage), w.disc(stage));
          },
          w.gen_params());
    });
    c.emplace_back("loss_discriminator_" + tag, [stage](std::uint64_t s) {
      World w(s);
      Tn real = w.fake_image(stage), fake = w.fake_image(stage);
      return run_composite([&] { return loss_discriminator(w.disc(stage), real, w.ids, fake, w.other).total; },
                 params_of(w.disc(stage)));
    });
    c.emplace_back("loss_discriminator_reality_" + tag, [stage](std::uint64_t s) {
      World w(s);
      Tn real = w.fake_image(stage), fake = w.fake_image(stage);
      return run_composite([&] { return loss_discriminator_reality(w.disc(stage), real, fake); }, params_of(w.disc(stage)));
    });
    c.emplace_back("loss_generator_" + tag, [stage](std::uint64_t s) {
      World w(s);
      return run_composite(
          [&] {
            const Tn fake = generate(w.image, w.boundary, w.other, w.gen, stage);
            return ops::add(loss_generator_reality(w.disc(stage), fake),
                            loss_generator_text(w.disc(stage), fake, w.other));
          },
          w.gen_params());
    });
  }
  c.emplace_back("loss_pseudo", [](std::uint64_t s) {
    World w(s);
    const std::size_t f = w.dims.feature_size(), l = w.dims.memory_width;
    Tn vi = leaf({l, f, f}, w.rng, -1, 1), alpha = leaf({1, f, f}, w.rng, 0.1, 0.9);
    Tn h = leaf({l}, w.rng, 3, 4);  // far from the weighted mean, away from the L1 kink
    return run_composite([&] { return loss_pseudo(FeatureMap<D>{vi}, alpha, h); }, {vi, alpha, h});
  });
  c.emplace_back("discriminator_terms", [](std::uint64_t s) {
    std::mt19937_64 rng(s);
    Tn rl = leaf({1}, rng, -2, 2), fl = leaf({1}, rng, -2, 2), rt = leaf({1}, rng, -3, -0.2),
       ft = leaf({1}, rng, -3, -0.2);
    return run_composite([&] { return discriminator_terms(rl, fl, rt, ft).total; }, {rl, fl, rt, ft});
  });
  c.emplace_back("integrate_generator", [](std::uint64_t s) {
    World w(s);
    return run_composite(
        [&] {
          GeneratorLosses<D> g;
          const auto inputs = w.gen.encode_inputs(w.image, w.boundary);
          const auto fused = w.gen.texture_for(w.gen.encode_caption(w.ids));
          const auto st = w.gen.manipulate(inputs, fused, Stage::Fir);
          g.icm.reconstruction = loss_rec(w.image.detach(), st.coarse, Pairing::Paired);
          g.fir.reconstruction = loss_rec(w.image.detach(), *st.fine, Pairing::Paired);
          g.fir.reality = loss_generator_reality(w.d_fir, *st.fine);
          g.icm.text = loss_generator_text(w.d_icm, st.coarse, w.ids);
          return integrate_generator(g, LossWeights{});
        },
        w.gen_params());
  });
  return c;
}

}  // namespace

std::vector<GradCheckRow> run_gradcheck_suite(std::size_t seeds) {
  if (seeds == 0) throw InputError("gradcheck: need at least one seed");
  std::vector<GradCheckRow> rows;
  auto sweep = [&](const std::vector<std::pair<std::string, Check>>& checks, bool composite, double tolerance) {
    for (const auto& [name, check] : checks) {
      GradCheckRow r{name, composite, 0.0, tolerance};
      for (std::size_t k = 0; k < seeds; ++k) r.max_error = std::max(r.max_error, check(derive_seed(0x6c0ffee, k)));
      rows.push_back(std::move(r));
    }
  };
  sweep(primitive_checks(), false, kPrimitiveTolerance);
  sweep(composite_checks(), true, kCompositeTolerance);
  return rows;
}

}  // namespace mimnet
