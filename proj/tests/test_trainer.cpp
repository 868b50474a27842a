#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cdpad/trainer.hpp"

using namespace cdpad;
namespace fs = std::filesystem;

namespace {

/// Micro geometry: 16x16 images, minimum stage widths. Fast enough for
/// several short training runs per test.
BackboneConfig micro_backbone() {
  BackboneConfig config;
  config.preset = BackboneConfig::Preset::Tiny;
  config.input_height = 16;
  config.input_width = 16;
  config.width_multiplier = 0.01;
  return config;
}

SyntheticConfig micro_synth() {
  SyntheticConfig config;
  config.image_size = 16;
  config.identities_train = 2;
  config.identities_dev = 1;
  config.identities_test = 1;
  config.samples_per_identity = 8;
  config.seed = 33;
  return config;
}

PhaseConfig quick_phase(int epochs, float lr = 1e-3f) {
  PhaseConfig p;
  p.epochs = epochs;
  p.batch_size = 8;
  p.learning_rate = lr;
  p.patience = 50;
  p.seed = 5;
  return p;
}

std::uint64_t subnet_learnable_checksum(const TrainState& state) {
  ParamSetT<float> learnable;
  for (const auto& e : state.subnet->params.entries) {
    if (!e.buffer) learnable.add(e.name, e.value);
  }
  return param_bytes_checksum(learnable);
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("augmentation building blocks") {
  Rng rng(1);
  Tensor img({16, 16, 1});
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());

  SUBCASE("two successive flips are the identity, bit-exact") {
    CHECK(flip_horizontal(flip_horizontal(img)).data == img.data);
  }
  SUBCASE("zero-degree rotation is the identity") {
    const Tensor rot = rotate_bilinear(img, 0.0);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      CHECK(std::abs(rot.data[i] - img.data[i]) < 1e-6f);
  }
  SUBCASE("rotation fills out-of-frame pixels with zero") {
    Tensor ones({16, 16, 1}, 1.0f);
    const Tensor rot = rotate_bilinear(ones, 10.0);
    // a corner pixel rotates out of frame and must lose mass
    CHECK(rot.at(0, 0, 0) < 1.0f);
    CHECK(rot.all_finite());
  }
  SUBCASE("fixed seed gives an identical augmented batch") {
    Rng a(42), b(42);
    const Tensor x = augment_image(img, a);
    const Tensor y = augment_image(img, b);
    CHECK(x.data == y.data);
    Rng c(43);
    const Tensor z = augment_image(img, c);
    CHECK(x.data != z.data);
  }
}

TEST_CASE("zero epochs leave every weight unchanged") {
  const SyntheticDataset data = generate_dataset(micro_synth());
  TrainState state = make_train_state(micro_backbone(), 4);
  const std::uint64_t before = frozen_parameter_checksum(state);
  const PhaseLog log = train_target_phase(state, data, quick_phase(0));
  CHECK(log.epochs_run == 0);
  CHECK(frozen_parameter_checksum(state) == before);
  CHECK(state.phase1_done);
}

TEST_CASE("early stopping restores the best-dev-metric weights") {
  const SyntheticDataset data = generate_dataset(micro_synth());
  TrainState state = make_train_state(micro_backbone(), 4);
  const PhaseLog log = train_target_phase(state, data, quick_phase(4));
  REQUIRE(log.best_epoch >= 0);
  double best = 1e9;
  for (double m : log.dev_metric) best = std::min(best, m);
  CHECK(log.dev_metric[static_cast<std::size_t>(log.best_epoch)] ==
        doctest::Approx(best));
  // the restored weights reproduce the recorded best metric
  const ScoreSet dev = score_split(state, data, Split::Dev, DomainTag::Target, false);
  CHECK(compute_metric_report(dev).min_acer == doctest::Approx(best));
}

TEST_CASE("adaptation preconditions are enforced") {
  const SyntheticDataset data = generate_dataset(micro_synth());
  TrainState state = make_train_state(micro_backbone(), 4);

  SUBCASE("phase 1 must run first") {
    attach_subnet(state, SubnetType::Dense, TapId::Pool3);
    CHECK_THROWS_AS(adapt_source_phase(state, data, quick_phase(1)), Error);
  }
  SUBCASE("a subnet must be attached") {
    train_target_phase(state, data, quick_phase(1));
    CHECK_THROWS_AS(adapt_source_phase(state, data, quick_phase(1)), Error);
  }
  SUBCASE("idr requires the domain-classifier stage") {
    train_target_phase(state, data, quick_phase(1));
    attach_subnet(state, SubnetType::Dense, TapId::Pool3);
    PhaseConfig p = quick_phase(1);
    p.variant = RegularizerVariant::Idr;
    CHECK_THROWS_AS(adapt_with_regularizer(state, data, p), Error);
  }
  SUBCASE("source labels outside the target label set are refused") {
    train_target_phase(state, data, quick_phase(1));
    attach_subnet(state, SubnetType::Dense, TapId::Pool3);
    state.target_labels_seen = {PadClass::Bonafide};  // as if attacks were never seen
    CHECK_THROWS_AS(adapt_source_phase(state, data, quick_phase(1)), Error);
  }
}

TEST_CASE("freezing is absolute through adaptation and the domain stage") {
  const SyntheticDataset data = generate_dataset(micro_synth());
  TrainState state = make_train_state(micro_backbone(), 4);
  train_target_phase(state, data, quick_phase(2));
  attach_subnet(state, SubnetType::Dense, TapId::Pool3);

  const std::uint64_t frozen = frozen_parameter_checksum(state);
  adapt_source_phase(state, data, quick_phase(2));
  CHECK(frozen_parameter_checksum(state) == frozen);

  PhaseConfig dom = quick_phase(2);
  train_domain_classifier(state, data, dom);
  CHECK(frozen_parameter_checksum(state) == frozen);

  PhaseConfig idr = quick_phase(2);
  idr.variant = RegularizerVariant::Idr;
  adapt_with_regularizer(state, data, idr);
  CHECK(frozen_parameter_checksum(state) == frozen);
}

TEST_CASE("lambda zero reproduces the plain adaptation trajectory") {
  const SyntheticDataset data = generate_dataset(micro_synth());

  auto run = [&](RegularizerVariant variant, float lambda) {
    TrainState state = make_train_state(micro_backbone(), 4);
    train_target_phase(state, data, quick_phase(2));
    attach_subnet(state, SubnetType::Dense, TapId::Pool3);
    PhaseConfig p = quick_phase(2);
    p.variant = variant;
    p.lambda_weight = lambda;
    adapt_with_regularizer(state, data, p);
    return subnet_learnable_checksum(state);
  };

  const std::uint64_t plain = [&] {
    TrainState state = make_train_state(micro_backbone(), 4);
    train_target_phase(state, data, quick_phase(2));
    attach_subnet(state, SubnetType::Dense, TapId::Pool3);
    adapt_source_phase(state, data, quick_phase(2));
    return subnet_learnable_checksum(state);
  }();

  CHECK(run(RegularizerVariant::Mmd, 0.0f) == plain);
  CHECK(run(RegularizerVariant::Dil, 0.0f) == plain);
  // and a nonzero weight must actually change the trajectory
  CHECK(run(RegularizerVariant::Dil, 1.0f) != plain);
}

TEST_CASE("total loss is task plus lambda times regularizer") {
  const SyntheticDataset data = generate_dataset(micro_synth());
  TrainState state = make_train_state(micro_backbone(), 4);
  train_target_phase(state, data, quick_phase(2));
  attach_subnet(state, SubnetType::Dense, TapId::Pool3);
  PhaseConfig p = quick_phase(2);
  p.variant = RegularizerVariant::Dil;
  p.lambda_weight = 0.7f;
  const PhaseLog log = adapt_with_regularizer(state, data, p);
  for (std::size_t e = 0; e < log.total_loss.size(); ++e) {
    CHECK(std::abs(log.total_loss[e] -
                   (log.task_loss[e] + 0.7 * log.reg_loss[e])) < 1e-6);
  }
}

TEST_CASE("zero learning rate leaves learnable parameters bit-identical") {
  const SyntheticDataset data = generate_dataset(micro_synth());
  TrainState state = make_train_state(micro_backbone(), 4);
  train_target_phase(state, data, quick_phase(2));

  SUBCASE("dense subnet parameters do not move") {
    attach_subnet(state, SubnetType::Dense, TapId::Pool3);
    const std::uint64_t before = subnet_learnable_checksum(state);
    adapt_source_phase(state, data, quick_phase(2, 0.0f));
    CHECK(subnet_learnable_checksum(state) == before);
  }
  SUBCASE("residual subnet keeps metrics identical to the plain backbone") {
    // the zero-initialized final conv makes the residual subnet transparent,
    // so an lr=0 run must score exactly like the unadapted stream
    const ScoreSet plain = score_split(state, data, Split::Test, DomainTag::Source, false);
    attach_subnet(state, SubnetType::Residual, TapId::Pool3);
    adapt_source_phase(state, data, quick_phase(2, 0.0f));
    const ScoreSet adapted = score_split(state, data, Split::Test, DomainTag::Source, true);
    REQUIRE(adapted.records.size() == plain.records.size());
    for (std::size_t i = 0; i < plain.records.size(); ++i)
      CHECK(adapted.records[i].score == plain.records[i].score);
  }
}

TEST_CASE("fixed seed makes whole phases bit-reproducible") {
  const SyntheticDataset data = generate_dataset(micro_synth());
  auto run_once = [&] {
    TrainState state = make_train_state(micro_backbone(), 9);
    train_target_phase(state, data, quick_phase(2));
    attach_subnet(state, SubnetType::Dense, TapId::Pool3);
    adapt_source_phase(state, data, quick_phase(2));
    return std::make_pair(frozen_parameter_checksum(state),
                          subnet_learnable_checksum(state));
  };
  const auto a = run_once();
  const auto b = run_once();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("checkpoint io") {
  const SyntheticDataset data = generate_dataset(micro_synth());
  TrainState state = make_train_state(micro_backbone(), 4);
  train_target_phase(state, data, quick_phase(1));
  attach_subnet(state, SubnetType::Dense, TapId::Pool3);

  const std::string stem = (fs::temp_directory_path() / "cdpad_ckpt_test").string();
  save_state_checkpoint(state, stem, "phase1", "{}");

  SUBCASE("round trip restores every parameter bit-exactly") {
    TrainState back = load_state_checkpoint(stem);
    CHECK(frozen_parameter_checksum(back) == frozen_parameter_checksum(state));
    CHECK(subnet_learnable_checksum(back) == subnet_learnable_checksum(state));
    CHECK(back.phase1_done == state.phase1_done);
    CHECK(back.subnet_config.type == SubnetType::Dense);
    // saving the loaded state reproduces an identical blob
    const std::string stem2 = stem + "_again";
    save_state_checkpoint(back, stem2, "phase1", "{}");
    std::ifstream f1(stem + ".bin", std::ios::binary);
    std::ifstream f2(stem2 + ".bin", std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)),
                         std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)),
                         std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    fs::remove(stem2 + ".json");
    fs::remove(stem2 + ".bin");
  }

  SUBCASE("manifest learnable total matches the model ledger") {
    const CheckpointInfo info = peek_checkpoint(stem);
    const std::int64_t expected = param_report(state.backbone).total +
                                  state.heads.params.learnable_count() +
                                  dda_param_report(*state.subnet).total;
    CHECK(info.learnable_total == expected);
    CHECK(info.phase == "phase1");
  }

  SUBCASE("corrupted magic bytes are rejected") {
    std::fstream f(stem + ".bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("ZZZZ", 4);
    f.close();
    CHECK_THROWS_AS(load_state_checkpoint(stem), Error);
  }

  fs::remove(stem + ".json");
  fs::remove(stem + ".bin");
}

TEST_CASE("checkpoint rejects version and name mismatches") {
  ParamSetT<float> params;
  params.add("w", Tensor({2}, std::vector<float>{1.0f, 2.0f}));
  const std::string stem = (fs::temp_directory_path() / "cdpad_ckpt_edge").string();
  CheckpointMeta meta;
  save_checkpoint(stem, {{"set", &params}}, meta);

  SUBCASE("unknown parameter name") {
    ParamSetT<float> other;
    other.add("different", Tensor({2}));
    MutComponents components{{"set", &other}};
    CHECK_THROWS_AS(load_checkpoint(stem, components), Error);
  }
  SUBCASE("shape mismatch") {
    ParamSetT<float> other;
    other.add("w", Tensor({3}));
    MutComponents components{{"set", &other}};
    CHECK_THROWS_AS(load_checkpoint(stem, components), Error);
  }
  SUBCASE("truncated blob") {
    fs::resize_file(stem + ".bin", 10);
    ParamSetT<float> other;
    other.add("w", Tensor({2}));
    MutComponents components{{"set", &other}};
    CHECK_THROWS_AS(load_checkpoint(stem, components), Error);
  }
  fs::remove(stem + ".json");
  fs::remove(stem + ".bin");
}

TEST_CASE("domain stage trains only the domain head") {
  const SyntheticDataset data = generate_dataset(micro_synth());
  TrainState state = make_train_state(micro_backbone(), 4);
  train_target_phase(state, data, quick_phase(1));
  attach_subnet(state, SubnetType::Dense, TapId::Pool3);

  const std::uint64_t frozen = frozen_parameter_checksum(state);
  const std::uint64_t subnet_before = subnet_learnable_checksum(state);
  auto dom_w1_before = state.heads.params.at(state.heads.dom_w1).value.data;

  train_domain_classifier(state, data, quick_phase(2));

  CHECK(frozen_parameter_checksum(state) == frozen);
  CHECK(subnet_learnable_checksum(state) == subnet_before);
  CHECK(state.heads.params.at(state.heads.dom_w1).value.data != dom_w1_before);
  CHECK(state.domain_trained);
}

TEST_SUITE_END();
