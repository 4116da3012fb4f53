#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "mlffn/error.hpp"
#include "mlffn/model.hpp"
#include "mlffn/util.hpp"

using namespace mlffn;
using namespace mlffn::model;
using nn::Mode;
using nn::Tensor;

namespace {

std::vector<Sample> random_samples(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
  nn::Rng rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = "s" + std::to_string(i);
    s.label = static_cast<int>(i % c.num_classes);
    for (std::size_t k = 0; k < c.numeric_input_width(); ++k) s.numeric.push_back(rng.normal());
    for (std::size_t k = 0; k < c.text_dim; ++k) s.text.push_back(rng.normal() * 0.1);
    out.push_back(std::move(s));
  }
  return out;
}

// Class-dependent offsets on both channels, well separated.
std::vector<Sample> separable_samples(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
  auto out = random_samples(c, n, seed);
  for (auto& s : out) {
    const auto label = static_cast<std::size_t>(s.label);
    for (std::size_t k = 0; k < s.numeric.size(); ++k) {
      s.numeric[k] = 0.3 * s.numeric[k] + ((k % c.num_classes) == label ? 2.0 : 0.0);
    }
    for (std::size_t k = 0; k < s.text.size(); ++k) {
      s.text[k] += (k % c.num_classes) == label ? 0.2 : 0.0;
    }
  }
  return out;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.feature_dim = 18;
  c.text_dim = 16;
  c.d_k = 8;
  c.branch_channels = 8;
  c.refine_channels = {8, 8};
  c.semantic_width = 8;
  c.numeric_width = 8;
  c.hidden = 16;
  c.dropout = 0.0;
  c.seed = 99;
  return c;
}

// Independent count from the layer shapes.
std::size_t expected_params(const ModelConfig& c) {
  std::size_t total = 0;
  if (c.uses_text()) total += c.text_dim * c.semantic_width + c.semantic_width;
  std::size_t fused = c.uses_text() ? c.semantic_width : 0;
  if (c.uses_numeric()) {
    std::size_t cat = 0;
    for (auto k : c.kernels) {
      total += c.branch_channels * c.input_channels() * k + c.branch_channels;
      cat += c.branch_channels;
    }
    std::size_t ch = cat;
    if (c.uses_attention()) {
      total += 3 * c.d_k * cat;
      ch = c.d_k;
    }
    for (auto out : c.refine_channels) {
      total += out * ch * c.refine_kernel + 2 * out;
      ch = out;
    }
    total += ch * c.pool_out_len * c.numeric_width + c.numeric_width;
    fused += c.numeric_width;
  }
  total += c.hidden * fused + c.hidden;
  total += c.num_classes * c.hidden + c.num_classes;
  return total;
}

}  // namespace

TEST_CASE("full variant maps a batch of two to [2, K] logits") {
  ModelConfig c;
  FusionNet net(c);
  auto samples = random_samples(c, 2, 1);
  auto logits = net.forward(make_batch(c, samples), Mode::Eval);
  CHECK(logits.shape() == std::vector<std::size_t>{2, 4});
  CHECK(logits.all_finite());
  auto train_logits = net.forward(make_batch(c, samples), Mode::Train);
  CHECK(train_logits.shape() == std::vector<std::size_t>{2, 4});
}

TEST_CASE("default parameter count") {
  ModelConfig c;
  FusionNet net(c);
  CHECK(net.param_count() == 294020);
  CHECK(net.param_count() == expected_params(c));
  for (auto v : kAllVariants) {
    auto vc = make_variant(c, v);
    FusionNet vn(vc);
    CHECK(vn.param_count() == expected_params(vc));
  }
  ModelConfig raw = c;
  raw.input_mode = InputMode::RawSeries;
  raw.raw_len = 50;
  FusionNet rn(raw);
  CHECK(rn.param_count() == expected_params(raw));
}

TEST_CASE("variants enumerate the five ablation rows") {
  std::vector<std::string> titles;
  for (auto v : kAllVariants) titles.emplace_back(variant_title(v));
  CHECK(titles == std::vector<std::string>{"Full Model", "w/o Spatio-Temp Attn.", "w/o Multi-Scale Conv.",
                                           "Text Features Only", "Num. Features Only"});
  for (auto v : kAllVariants) CHECK(parse_variant(variant_key(v)) == v);
  try {
    make_variant(ModelConfig{}, "no_text");
    FAIL("expected UnknownVariant");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownVariant);
  }

  auto nm = make_variant(ModelConfig{}, Variant::NoMultiscale);
  FusionNet net(nm);
  REQUIRE(net.branches.size() == 1);
  CHECK(net.branches[0].kernel() == 3);
  CHECK(net.branches[0].out_channels() == 192);
  CHECK(net.attention.wq.value.shape() == std::vector<std::size_t>{64, 192});

  auto na = make_variant(ModelConfig{}, Variant::NoAttention);
  FusionNet nan(na);
  CHECK(nan.refine_convs[0].in_channels() == 192);
}

TEST_CASE("single-channel variants need only their channel") {
  ModelConfig base;
  auto samples = random_samples(base, 3, 2);

  auto num = make_variant(base, Variant::NumericOnly);
  FusionNet numeric(num);
  auto no_text = samples;
  for (auto& s : no_text) s.text.clear();
  CHECK(numeric.forward(make_batch(num, no_text), Mode::Eval).shape() == std::vector<std::size_t>{3, 4});
  CHECK(numeric.fuse_weight.value.shape() == std::vector<std::size_t>{256, 128});

  auto txt = make_variant(base, Variant::TextOnly);
  FusionNet text(txt);
  auto no_num = samples;
  for (auto& s : no_num) s.numeric.clear();
  auto a = text.forward(make_batch(txt, samples), Mode::Eval);
  auto b = text.forward(make_batch(txt, no_num), Mode::Eval);
  CHECK(a.storage() == b.storage());

  try {
    make_batch(base, no_num);
    FAIL("expected VariantChannelMissing");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::VariantChannelMissing);
  }
}

TEST_CASE("zeroing the numeric output reproduces text-only logits bit for bit") {
  ModelConfig base;
  base.seed = 5;
  FusionNet full(base);
  FusionNet text(make_variant(base, Variant::TextOnly));
  CHECK(text.semantic_proj.weight.value.storage() == full.semantic_proj.weight.value.storage());
  CHECK(text.semantic_proj.bias.value.storage() == full.semantic_proj.bias.value.storage());

  full.numeric_proj.weight.value.fill(0.0);
  full.numeric_proj.bias.value.fill(0.0);
  const auto hidden = base.hidden;
  const auto sw = base.semantic_width;
  for (std::size_t r = 0; r < hidden; ++r) {
    for (std::size_t k = 0; k < sw; ++k) {
      text.fuse_weight.value[r * sw + k] = full.fuse_weight.value[r * (sw + base.numeric_width) + k];
    }
  }
  text.fuse_bias.value = full.fuse_bias.value;
  text.classifier.weight.value = full.classifier.weight.value;
  text.classifier.bias.value = full.classifier.bias.value;

  auto samples = random_samples(base, 7, 3);
  auto a = full.forward(make_batch(base, samples), Mode::Eval);
  auto b = text.forward(make_batch(text.config(), samples), Mode::Eval);
  CHECK(a.storage() == b.storage());
}

TEST_CASE("full network gradient check on a tiny configuration") {
  for (auto v : kAllVariants) {
    CAPTURE(variant_key(v));
    auto c = make_variant(tiny_config(), v);
    FusionNet net(c);
    auto samples = random_samples(c, 5, 7);
    auto batch = make_batch(c, samples);
    auto params = net.params();
    nn::zero_grads(params);
    auto ce = nn::cross_entropy(net.forward(batch, Mode::Train), batch.labels);
    net.backward(ce.grad);
    std::vector<nn::GradTarget> targets;
    for (auto* p : params) targets.push_back({p->name, &p->value, &p->grad});
    auto loss = [&] { return nn::cross_entropy(net.forward(batch, Mode::Train), batch.labels).loss; };
    auto res = nn::grad_check(loss, targets, 1e-5, 24, 11);
    CAPTURE(res.worst);
    CHECK(res.max_rel_error <= 1e-4);
    CHECK(res.checked >= 60);
  }
}

TEST_CASE("permuting a batch permutes eval logits") {
  ModelConfig c;
  FusionNet net(c);
  auto samples = random_samples(c, 6, 8);
  std::vector<std::size_t> perm = {4, 2, 0, 5, 1, 3};
  auto a = net.forward(make_batch(c, samples), Mode::Eval);
  auto b = net.forward(make_batch(c, samples, perm), Mode::Eval);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(std::abs(b[i * 4 + k] - a[perm[i] * 4 + k]) <= 1e-12);
    }
  }
}

TEST_CASE("eval forward is deterministic and consumes no randomness") {
  ModelConfig c;
  FusionNet net(c);
  auto batch = make_batch(c, random_samples(c, 4, 9));
  auto a = net.forward(batch, Mode::Eval);
  auto b = net.forward(batch, Mode::Eval);
  CHECK(a.storage() == b.storage());
}

TEST_CASE("argmax and probabilities") {
  std::vector<double> strong = {10, 0, 0, 0};
  CHECK(argmax_row(strong) == 0);
  Tensor logits({1, 4}, strong);
  CHECK(nn::softmax_rows(logits)[0] >= 0.999);
  std::vector<double> equal = {1.5, 1.5, 1.5, 1.5};
  CHECK(argmax_row(equal) == 0);
  std::vector<double> tie_late = {0, 2, 2, 1};
  CHECK(argmax_row(tie_late) == 1);

  ModelConfig c;
  FusionNet net(c);
  auto samples = random_samples(c, 10, 10);
  auto pred = predict(net, samples, 3);
  REQUIRE(pred.labels.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += pred.probabilities[i * 4 + k];
    CHECK(std::abs(s - 1.0) <= 1e-9);
    CHECK(pred.labels[i] == argmax_row(std::span<const double>(pred.logits.data() + i * 4, 4)));
  }
}

TEST_CASE("config json round trip, unknown keys and fingerprints") {
  ModelConfig c;
  c.seed = 123456789012345ULL;
  c.variant = Variant::NoAttention;
  c.kernels = {3, 9};
  auto back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(fingerprint(back) == fingerprint(c));
  auto d = c;
  d.dropout = 0.25;
  CHECK(fingerprint(d) != fingerprint(c));
  CHECK_THROWS_AS(config_from_json(R"({"dropuot": 0.2})"), Error);
  CHECK(config_from_json(R"({"epochs": 7})").epochs == 7);
  auto even = c;
  even.kernels = {4};
  try {
    validate(even);
    FAIL("expected EvenKernel");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EvenKernel);
  }
}

TEST_CASE("checkpoint round trip preserves eval logits bitwise") {
  auto c = tiny_config();
  auto samples = random_samples(c, 12, 12);
  auto result = train(c, samples, samples);
  auto& net = result.model;
  features::NormStats ns{{"a", "b"}, {1.0, 2.0}, {0.5, 0.0}};
  net.norm_stats = ns;
  auto bytes = serialize_checkpoint(net);
  auto loaded = parse_checkpoint(bytes);
  auto a = net.forward(make_batch(c, samples), Mode::Eval);
  auto b = loaded.forward(make_batch(c, samples), Mode::Eval);
  CHECK(a.storage() == b.storage());
  REQUIRE(loaded.norm_stats);
  CHECK(loaded.norm_stats->std == ns.std);
  CHECK(loaded.param_count() == net.param_count());
  CHECK(bytes.find("\"param_count\":" + std::to_string(net.param_count())) != std::string::npos);

  auto dir = std::filesystem::temp_directory_path() / "mlffn_model_test";
  std::filesystem::create_directories(dir);
  save_checkpoint(net, dir / "m.ckpt");
  auto from_file = load_checkpoint(dir / "m.ckpt");
  CHECK(from_file.forward(make_batch(c, samples), Mode::Eval).storage() == a.storage());
  std::filesystem::remove_all(dir);

  auto code_of = [](std::string_view data) {
    try {
      parse_checkpoint(data);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  CHECK(code_of(std::string_view(bytes).substr(0, bytes.size() / 2)) == ErrorCode::CorruptCheckpoint);
  CHECK(code_of(std::string_view(bytes).substr(0, 5)) == ErrorCode::CorruptCheckpoint);
  auto flipped = bytes;
  flipped[flipped.size() - 20] ^= 0x01;
  CHECK(code_of(flipped) == ErrorCode::CorruptCheckpoint);
  auto versioned = bytes;
  versioned[8] = 2;
  CHECK(code_of(versioned) == ErrorCode::VersionMismatch);

  auto edited = bytes;
  auto pos = edited.find("\"dropout\":0.0");
  REQUIRE(pos != std::string::npos);
  edited.replace(pos, 13, "\"dropout\":0.5");
  auto tampered = parse_checkpoint(edited);
  try {
    predict(tampered, samples);
    FAIL("expected FingerprintMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FingerprintMismatch);
  }
  auto other = c;
  other.epochs = 3;
  CHECK_THROWS_AS(predict(loaded, other, samples), Error);
  CHECK_NOTHROW(predict(loaded, c, samples));
}

TEST_CASE("training rejects empty splits and non-finite inputs") {
  auto c = tiny_config();
  auto samples = random_samples(c, 8, 13);
  try {
    train(c, {}, samples);
    FAIL("expected EmptySplit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySplit);
  }
  CHECK_THROWS_AS(train(c, samples, {}), Error);

  auto bad = samples;
  bad[5].numeric[3] = std::nan("");
  c.batch = 8;
  try {
    train(c, bad, samples);
    FAIL("expected NonfiniteLoss");
  } catch (const NonfiniteLossError& e) {
    CHECK(e.epoch() == 1);
    CHECK(e.batch() == 0);
    CHECK(e.category() == ErrorCategory::Numeric);
  }
  c.batch = 4;
  try {
    train(c, bad, samples);
    FAIL("expected NonfiniteLoss");
  } catch (const NonfiniteLossError& e) {
    CHECK(e.epoch() == 1);
    CHECK(e.batch() <= 1);
  }
}

TEST_CASE("identical seeds give identical loss traces") {
  auto c = tiny_config();
  c.dropout = 0.3;
  c.epochs = 6;
  c.batch = 5;
  c.lr = 1e-3;
  auto samples = random_samples(c, 23, 14);
  auto r1 = train(c, samples, samples);
  auto r2 = train(c, samples, samples);
  REQUIRE(r1.log.size() == r2.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].train_loss == r2.log[i].train_loss);
    CHECK(r1.log[i].val_loss == r2.log[i].val_loss);
  }
  auto jsonl = training_log_jsonl(r1.log);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 2 * static_cast<long>(r1.log.size()));
  CHECK(jsonl.find("\"split\":\"val\"") != std::string::npos);

  c.seed += 1;
  auto r3 = train(c, samples, samples);
  CHECK(r3.log[0].train_loss != r1.log[0].train_loss);
}

TEST_CASE("early stopping honours patience") {
  auto c = tiny_config();
  c.epochs = 200;
  c.patience = 2;
  c.lr = 1e-9;
  auto samples = random_samples(c, 8, 15);
  auto r = train(c, samples, samples);
  CHECK(r.early_stopped);
  CHECK(static_cast<int>(r.log.size()) < c.epochs);
  CHECK(static_cast<int>(r.log.size()) >= r.best_epoch + c.patience);
}

TEST_CASE("32 separable samples are memorized within 200 epochs") {
  ModelConfig c;
  c.lr = 1e-3;
  c.epochs = 200;
  c.seed = 21;
  auto samples = separable_samples(c, 32, 16);
  auto r = train(c, samples, samples);
  auto pred = predict(r.model, samples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) correct += pred.labels[i] == samples[i].label;
  CHECK(correct == 32);
}

TEST_CASE("raw series resampling") {
  TrajectorySegment s;
  s.t = {0, 0.1, 0.2};
  s.v = {0, 1, 2};
  s.a = {1, 1, 1};
  s.j = {0, 0, 4};
  auto r = resample_series(s, 5);
  REQUIRE(r.size() == 15);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == doctest::Approx(0.5));
  CHECK(r[4] == 2.0);
  CHECK(r[7] == 1.0);
  CHECK(r[13] == doctest::Approx(2.0));
  CHECK(r[14] == 4.0);

  ModelConfig c;
  c.input_mode = InputMode::RawSeries;
  c.raw_len = 40;
  FusionNet net(c);
  auto samples = random_samples(c, 2, 17);
  CHECK(net.forward(make_batch(c, samples), Mode::Eval).shape() == std::vector<std::size_t>{2, 4});
}
