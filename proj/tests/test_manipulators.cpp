#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "equivalence.hpp"

using namespace mimnet;

TEST_CASE("tlu, icm_forward and fir_forward match scalar oracles on 20 instances") {
  const auto errors = oracle::equivalence_errors(20);
  CHECK(errors.at("tlu") <= 1e-10);
  CHECK(errors.at("icm_forward") <= 1e-10);
  CHECK(errors.at("fir_forward") <= 1e-10);
}

TEST_CASE("tlu of a zero texture is one half everywhere") {
  const Tensor<double> v({2, 2, 2}, {1, -2, 3, 4, 5, 6, -7, 8});
  const auto a = tlu(FeatureMap<double>{v}, Tensor<double>::zeros({2}));
  CHECK(a.shape() == Shape{1, 2, 2});
  for (double x : a.values()) CHECK(x == 0.5);
  CHECK_THROWS_AS(tlu(FeatureMap<double>{v}, Tensor<double>::zeros({3})), DimensionError);
}

TEST_CASE("a forced alpha of zero passes the image features through unchanged") {
  oracle::Instance w(11);
  const std::size_t l = w.dims.memory_width, fs = w.dims.feature_size();
  const auto vi = w.uniform({l, fs, fs}, -1, 1), vb = w.uniform({l, fs, fs}, -1, 1);
  const auto fused = w.gen.texture_for(w.gen.encode_caption(w.ids));
  const auto out = icm_forward(FeatureMap<double>{vi}, FeatureMap<double>{vb}, fused, w.gen.icm, std::optional<double>(0.0));
  CHECK(out.v_u.tensor.values() == ops::upsample_nearest2x(vi).values());

  // With alpha forced to one the image features have no influence.
  const auto other = w.uniform({l, fs, fs}, -1, 1);
  const auto a = icm_forward(FeatureMap<double>{vi}, FeatureMap<double>{vb}, fused, w.gen.icm, std::optional<double>(1.0));
  const auto b = icm_forward(FeatureMap<double>{other}, FeatureMap<double>{vb}, fused, w.gen.icm, std::optional<double>(1.0));
  CHECK(a.image.values() == b.image.values());
}

TEST_CASE("fir with zero word textures adds zero refinement features") {
  oracle::Instance w(12);
  const std::size_t l = w.dims.memory_width, u = w.dims.fused_size();
  FusedTexture<double> fused;
  fused.word_textures = Tensor<double>::zeros({3, l});
  fused.global = Tensor<double>::zeros({l});
  const auto out = fir_forward(FeatureMap<double>{w.uniform({l, u, u}, -1, 1)}, fused, w.gen.fine_decoder);
  for (double x : out.h_f.tensor.values()) CHECK(x == 0.0);
  CHECK(out.image.shape() == Shape{3, w.dims.fine_size(), w.dims.fine_size()});
}

TEST_CASE("generator stages produce 32 and 64 pixel images") {
  Initializer init(1);
  ModelDims dims;
  dims.vocab_size = 12;
  const auto gen = Generator<float>::create(init, dims);
  const auto img = Tensor<float>::full({3, 32, 32}, -0.2f);
  const auto edges = Tensor<float>::zeros({1, 32, 32});
  CHECK(generate(img, edges, {2, 3, 4}, gen, Stage::Icm).shape() == Shape{3, 32, 32});
  const auto state = gen.manipulate(gen.encode_inputs(img, edges), gen.texture_for(gen.encode_caption({2, 3})), Stage::Fir);
  CHECK(state.output(Stage::Fir).shape() == Shape{3, 64, 64});
  CHECK(state.alpha.shape() == Shape{1, 8, 8});
  CHECK(state.h_f.has_value());

  const auto coarse_only = gen.manipulate(gen.encode_inputs(img, edges), state.fused, Stage::Icm);
  CHECK_THROWS_AS(coarse_only.output(Stage::Fir), ContractError);
}

TEST_CASE("ablation switches") {
  Initializer init(2);
  auto dims = ModelDims::reduced(9);
  const auto no_memory = Generator<double>::create(init, dims, {true, false});
  REQUIRE(no_memory.direct_texture.has_value());
  const auto fused = no_memory.texture_for(no_memory.encode_caption({2, 3}));
  CHECK(fused.word_textures.shape() == Shape{2, dims.memory_width});

  const auto no_tlu = Generator<double>::create(init, dims, {false, true});
  const auto img = Tensor<double>::full({3, 8, 8}, 0.1);
  const auto state =
      no_tlu.manipulate(no_tlu.encode_inputs(img, Tensor<double>::zeros({1, 8, 8})),
                        no_tlu.texture_for(no_tlu.encode_caption({2})), Stage::Icm);
  for (double a : state.alpha.values()) CHECK(a == 1.0);
}

TEST_CASE("generator construction validates sizes") {
  Initializer init(3);
  ModelDims dims;
  CHECK_THROWS_AS(Generator<float>::create(init, dims), DimensionError);  // vocabulary not set
  dims.vocab_size = 10;
  dims.image_size = 30;
  CHECK_THROWS_AS(Generator<float>::create(init, dims), DimensionError);
}
