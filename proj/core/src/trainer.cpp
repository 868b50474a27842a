#include "cdpad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace cdpad {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

void set_head_trainable(HeadsT<float>& heads, bool pad, bool domain) {
  heads.params.at(heads.pad_w).trainable = pad;
  heads.params.at(heads.pad_b).trainable = pad;
  heads.params.at(heads.dom_w1).trainable = domain;
  heads.params.at(heads.dom_b1).trainable = domain;
  heads.params.at(heads.dom_w2).trainable = domain;
  heads.params.at(heads.dom_b2).trainable = domain;
}

SourceStreamT<float> eval_stream(TrainState& state, bool use_subnet) {
  SourceStreamT<float> stream;
  stream.backbone = &state.backbone;
  if (use_subnet) {
    require(state.has_subnet(), ErrorCode::State,
            "no subnet attached to evaluate the adapted stream");
    stream.subnet = &*state.subnet;
    stream.tap_index = state.backbone.tap_index(state.subnet->config.tap);
  }
  return stream;
}

Tensor assemble_batch(const SyntheticDataset& data, const std::vector<int>& indices,
                      std::size_t begin, std::size_t end, DomainTag domain,
                      Rng* aug_rng) {
  const int n = static_cast<int>(end - begin);
  const int size = data.config.image_size;
  Tensor batch({n, size, size, 1});
  for (int i = 0; i < n; ++i) {
    const Tensor& src = data.image(indices[begin + static_cast<std::size_t>(i)], domain);
    Tensor img = aug_rng ? augment_image(src, *aug_rng) : src;
    std::copy(img.data.begin(), img.data.end(),
              batch.data.begin() + static_cast<std::int64_t>(i) * size * size);
  }
  return batch;
}

Tensor assemble_labels(const SyntheticDataset& data, const std::vector<int>& indices,
                       std::size_t begin, std::size_t end) {
  const int n = static_cast<int>(end - begin);
  Tensor labels({n});
  for (int i = 0; i < n; ++i) {
    const auto& s = data.samples[static_cast<std::size_t>(
        indices[begin + static_cast<std::size_t>(i)])];
    labels.data[static_cast<std::size_t>(i)] =
        s.label == PadClass::Bonafide ? 1.0f : 0.0f;
  }
  return labels;
}

double dev_acer(TrainState& state, const SyntheticDataset& data, DomainTag domain,
                bool use_subnet) {
  const ScoreSet dev = score_split(state, data, Split::Dev, domain, use_subnet);
  return compute_metric_report(dev).min_acer;
}

void fnv_accumulate(std::uint64_t& h, const void* ptr, std::size_t bytes) {
  const unsigned char* p = static_cast<const unsigned char*>(ptr);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
}

}  // namespace

TrainState make_train_state(const BackboneConfig& config, std::uint64_t seed) {
  TrainState state;
  state.backbone_config = config;
  state.seed = seed;
  state.backbone = build_backbone<float>(config, seed);
  state.heads = build_heads<float>(state.backbone.embedding_dim, seed);
  state.subnet_config.type = SubnetType::None;
  return state;
}

void attach_subnet(TrainState& state, SubnetType type, TapId tap) {
  require(type != SubnetType::None, ErrorCode::InvalidArgument,
          "attach_subnet requires a dense or residual type");
  SubnetConfig cfg;
  cfg.type = type;
  cfg.tap = tap;
  cfg.in_channels = state.backbone.tap_channels(tap);
  state.subnet = build_dda<float>(cfg, state.seed);
  state.subnet_config = state.subnet->config;
  insert_subnet(state.backbone, &*state.subnet);
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

Tensor flip_horizontal(const Tensor& image) {
  const int h = image.dim(0), w = image.dim(1);
  Tensor out(image.shape);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x, 0) = image.at(y, w - 1 - x, 0);
  return out;
}

Tensor rotate_bilinear(const Tensor& image, double degrees) {
  const int h = image.dim(0), w = image.dim(1);
  const double rad = degrees * kPi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  Tensor out(image.shape);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // inverse-rotate the destination pixel into the source frame
      const double dx = x - cx, dy = y - cy;
      const double sx = cx + c * dx + s * dy;
      const double sy = cy - s * dx + c * dy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      double acc = 0.0;
      for (int oy = 0; oy <= 1; ++oy) {
        for (int ox = 0; ox <= 1; ++ox) {
          const int yy = y0 + oy, xx = x0 + ox;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;  // zero fill
          const double wgt = (ox ? fx : 1.0 - fx) * (oy ? fy : 1.0 - fy);
          acc += wgt * image.at(yy, xx, 0);
        }
      }
      out.at(y, x, 0) = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor augment_image(const Tensor& image, Rng& rng) {
  Tensor img = rng.uniform() < 0.5 ? flip_horizontal(image) : image;
  const double angle = rng.uniform(-10.0, 10.0);
  return rotate_bilinear(img, angle);
}

// ---------------------------------------------------------------------------
// phase 1: target-domain supervised training
// ---------------------------------------------------------------------------

PhaseLog train_target_phase(TrainState& state, const SyntheticDataset& data,
                            const PhaseConfig& config) {
  std::vector<int> train_idx = data.indices_of(Split::Train);
  require(!train_idx.empty(), ErrorCode::Data, "empty target train split");
  require(!data.indices_of(Split::Dev).empty(), ErrorCode::Data,
          "empty target dev split");

  state.target_labels_seen.clear();
  for (int i : train_idx) {
    const PadClass label = data.samples[static_cast<std::size_t>(i)].label;
    if (std::find(state.target_labels_seen.begin(), state.target_labels_seen.end(),
                  label) == state.target_labels_seen.end())
      state.target_labels_seen.push_back(label);
  }

  state.backbone.params.set_all_trainable(true);
  set_head_trainable(state.heads, true, false);
  if (state.subnet) state.subnet->params.set_all_trainable(false);

  AdamStateT<float> opt_backbone;
  opt_backbone.learning_rate = config.learning_rate;
  opt_backbone.bind(state.backbone.params);
  AdamStateT<float> opt_heads;
  opt_heads.learning_rate = config.learning_rate;
  opt_heads.bind(state.heads.params);

  Rng rng_batch(derive_seed(config.seed, "phase1-batch"));
  Rng rng_aug(derive_seed(config.seed, "phase1-aug"));

  PhaseLog log;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_backbone, best_heads;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng_batch.shuffle(train_idx);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < train_idx.size();
         b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t e =
          std::min(b + static_cast<std::size_t>(config.batch_size), train_idx.size());
      Tensor images = assemble_batch(data, train_idx, b, e, DomainTag::Target, &rng_aug);
      Tensor labels = assemble_labels(data, train_idx, b, e);

      BackboneCacheT<float> cache;
      Tensor emb = backbone_forward(state.backbone, images, &cache);
      HeadsCacheT<float> hc;
      Tensor probs = heads_forward(state.heads, emb, HeadKind::Pad, &hc);
      loss_sum += bce_loss_batch(probs, labels);
      ++batches;

      Tensor dprobs = bce_loss_backward(probs, labels);
      Tensor demb = heads_backward(state.heads, hc, HeadKind::Pad, dprobs);
      backbone_backward(state.backbone, cache, std::move(demb), false);
      adam_step(state.backbone.params, opt_backbone);
      adam_step(state.heads.params, opt_heads);
    }
    log.task_loss.push_back(loss_sum / std::max(1, batches));
    log.reg_loss.push_back(0.0);
    log.total_loss.push_back(log.task_loss.back());

    const double acer = dev_acer(state, data, DomainTag::Target, false);
    log.dev_metric.push_back(acer);
    log.epochs_run = epoch + 1;
    if (acer < best) {
      best = acer;
      log.best_epoch = epoch;
      best_backbone = state.backbone.params.snapshot_values();
      best_heads = state.heads.params.snapshot_values();
    }
    if (epoch - log.best_epoch >= config.patience) break;
  }

  if (!best_backbone.empty()) {
    state.backbone.params.restore_values(best_backbone);
    state.heads.params.restore_values(best_heads);
  }
  state.phase1_done = true;
  return log;
}

// ---------------------------------------------------------------------------
// phase 2: source adaptation against the frozen classifier
// ---------------------------------------------------------------------------

namespace {

PhaseLog adapt_impl(TrainState& state, const SyntheticDataset& data,
                    const PhaseConfig& config) {
  require(state.phase1_done, ErrorCode::State,
          "adaptation requires a completed target phase");
  require(state.has_subnet(), ErrorCode::State,
          "adaptation requires an attached subnet");
  if (config.variant == RegularizerVariant::Idr) {
    require(state.domain_trained, ErrorCode::State,
            "idr adaptation requires a trained domain classifier");
  }

  std::vector<int> train_idx = data.indices_of(Split::Train);
  require(!train_idx.empty(), ErrorCode::Data, "empty source train split");
  require(!data.indices_of(Split::Dev).empty(), ErrorCode::Data,
          "empty source dev split");

  // overlapping-label requirement: every source label must have been seen
  // in the target training data
  for (int i : train_idx) {
    const PadClass label = data.samples[static_cast<std::size_t>(i)].label;
    require(std::find(state.target_labels_seen.begin(),
                      state.target_labels_seen.end(),
                      label) != state.target_labels_seen.end(),
            ErrorCode::Data,
            "source label set is not contained in the target label set");
  }

  SourceStreamT<float> stream = insert_subnet(state.backbone, &*state.subnet);
  set_head_trainable(state.heads, false, false);

  AdamStateT<float> opt;
  opt.learning_rate = config.learning_rate;
  opt.bind(state.subnet->params);

  Rng rng_batch(derive_seed(config.seed, "adapt-batch"));
  Rng rng_aug(derive_seed(config.seed, "adapt-aug"));
  Rng rng_variant(derive_seed(config.seed, "adapt-variant"));

  const bool use_reg =
      config.variant != RegularizerVariant::None && config.lambda_weight != 0.0f;
  const float lambda = config.lambda_weight;
  std::vector<int> target_pool = data.indices_of(Split::Train);

  PhaseLog log;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_subnet;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng_batch.shuffle(train_idx);
    double task_sum = 0.0, reg_sum = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < train_idx.size();
         b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t e =
          std::min(b + static_cast<std::size_t>(config.batch_size), train_idx.size());
      Tensor images = assemble_batch(data, train_idx, b, e, DomainTag::Source, &rng_aug);
      Tensor labels = assemble_labels(data, train_idx, b, e);
      const int n = images.dim(0);

      SourceCacheT<float> cache;
      Tensor emb = source_forward(stream, images, BatchNormMode::Train, &cache);
      HeadsCacheT<float> hc;
      Tensor probs = heads_forward(state.heads, emb, HeadKind::Pad, &hc);
      const double task = bce_loss_batch(probs, labels);

      Tensor dprobs = bce_loss_backward(probs, labels);
      Tensor demb = heads_backward(state.heads, hc, HeadKind::Pad, dprobs);

      double reg = 0.0;
      if (use_reg) {
        if (config.variant == RegularizerVariant::Mmd) {
          // unpaired target batch, drawn independently each step
          std::vector<int> tidx(static_cast<std::size_t>(n));
          for (auto& t : tidx)
            t = target_pool[static_cast<std::size_t>(
                rng_variant.uniform_int(target_pool.size()))];
          Tensor timages =
              assemble_batch(data, tidx, 0, tidx.size(), DomainTag::Target, nullptr);
          Tensor temb = backbone_forward(state.backbone, timages);
          Tensor grad_s;
          reg = mmd_squared(emb, temb, KernelSpec::rbf_median(), &grad_s, nullptr);
          demb.add_scaled(grad_s, lambda);
        } else if (config.variant == RegularizerVariant::Dil) {
          HeadsCacheT<float> dc;
          Tensor q = heads_forward(state.heads, emb, HeadKind::Domain, &dc);
          Tensor dq;
          reg = dil_loss(q, &dq);
          Tensor demb_reg = heads_backward(state.heads, dc, HeadKind::Domain, dq);
          demb.add_scaled(demb_reg, lambda);
        } else {  // Idr: frozen domain head, inverted labels on source
          HeadsCacheT<float> dc;
          Tensor q = heads_forward(state.heads, emb, HeadKind::Domain, &dc);
          std::vector<DomainTag> tags(static_cast<std::size_t>(n), DomainTag::Source);
          Tensor dq;
          reg = idr_loss(q, tags, IdrStage::Adapt, &dq);
          Tensor demb_reg = heads_backward(state.heads, dc, HeadKind::Domain, dq);
          demb.add_scaled(demb_reg, lambda);
        }
      }

      source_backward(stream, cache, std::move(demb), false);
      adam_step(state.subnet->params, opt);

      task_sum += task;
      reg_sum += reg;
      ++batches;
    }
    const double denom = std::max(1, batches);
    log.task_loss.push_back(task_sum / denom);
    log.reg_loss.push_back(reg_sum / denom);
    log.total_loss.push_back((task_sum + static_cast<double>(lambda) * reg_sum) / denom);

    const double acer = dev_acer(state, data, DomainTag::Source, true);
    log.dev_metric.push_back(acer);
    log.epochs_run = epoch + 1;
    if (acer < best) {
      best = acer;
      log.best_epoch = epoch;
      best_subnet = state.subnet->params.snapshot_values();
    }
    if (epoch - log.best_epoch >= config.patience) break;
  }

  if (!best_subnet.empty()) state.subnet->params.restore_values(best_subnet);
  return log;
}

}  // namespace

PhaseLog adapt_source_phase(TrainState& state, const SyntheticDataset& data,
                            const PhaseConfig& config) {
  PhaseConfig plain = config;
  plain.variant = RegularizerVariant::None;
  return adapt_impl(state, data, plain);
}

PhaseLog adapt_with_regularizer(TrainState& state, const SyntheticDataset& data,
                                const PhaseConfig& config) {
  return adapt_impl(state, data, config);
}

// ---------------------------------------------------------------------------
// domain-classifier stage
// ---------------------------------------------------------------------------

PhaseLog train_domain_classifier(TrainState& state, const SyntheticDataset& data,
                                 const PhaseConfig& config) {
  require(state.phase1_done, ErrorCode::State,
          "the domain classifier stage requires a completed target phase");
  std::vector<int> train_idx = data.indices_of(Split::Train);
  require(!train_idx.empty(), ErrorCode::Data, "empty train split");
  require(!data.indices_of(Split::Dev).empty(), ErrorCode::Data, "empty dev split");

  state.backbone.params.set_all_trainable(false);
  if (state.subnet) state.subnet->params.set_all_trainable(false);
  set_head_trainable(state.heads, false, true);

  SourceStreamT<float> src_stream = eval_stream(state, state.has_subnet());

  // calibrate the first domain layer to the embedding scale; after the
  // target phase embeddings can be large enough to pin the sigmoid
  {
    double norm_sum = 0.0;
    int count = 0;
    const int size = data.config.image_size;
    for (DomainTag domain : {DomainTag::Source, DomainTag::Target}) {
      for (int i : train_idx) {
        Tensor img = data.image(i, domain);
        img.shape = {1, size, size, 1};
        Tensor emb = domain == DomainTag::Source
                         ? source_forward(src_stream, img, BatchNormMode::Eval)
                         : backbone_forward(state.backbone, img);
        double n2 = 0.0;
        for (float v : emb.data) n2 += static_cast<double>(v) * v;
        norm_sum += std::sqrt(n2);
        ++count;
      }
    }
    const double mean_norm = norm_sum / std::max(1, count);
    if (mean_norm > 1e-8) {
      const float rescale = static_cast<float>(
          std::sqrt(static_cast<double>(state.backbone.embedding_dim)) / mean_norm);
      auto& w1 = state.heads.params.at(state.heads.dom_w1).value;
      for (auto& v : w1.data) v *= rescale;
    }
  }

  AdamStateT<float> opt;
  opt.learning_rate = config.learning_rate;
  opt.bind(state.heads.params);

  Rng rng_batch(derive_seed(config.seed, "domain-batch"));
  Rng rng_aug(derive_seed(config.seed, "domain-aug"));

  // every train sample contributes one source-stream and one target-stream view
  std::vector<std::pair<int, DomainTag>> entries;
  entries.reserve(train_idx.size() * 2);
  for (int i : train_idx) {
    entries.emplace_back(i, DomainTag::Source);
    entries.emplace_back(i, DomainTag::Target);
  }

  PhaseLog log;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_heads;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng_batch.shuffle(entries);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < entries.size();
         b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t e =
          std::min(b + static_cast<std::size_t>(config.batch_size), entries.size());
      const int n = static_cast<int>(e - b);
      Tensor emb({n, state.backbone.embedding_dim});
      std::vector<DomainTag> tags(static_cast<std::size_t>(n));
      const int size = data.config.image_size;
      for (int i = 0; i < n; ++i) {
        const auto& [sample_idx, domain] = entries[b + static_cast<std::size_t>(i)];
        Tensor img = augment_image(data.image(sample_idx, domain), rng_aug);
        img.shape = {1, size, size, 1};
        Tensor one = domain == DomainTag::Source
                         ? source_forward(src_stream, img, BatchNormMode::Eval)
                         : backbone_forward(state.backbone, img);
        std::copy(one.data.begin(), one.data.end(),
                  emb.data.begin() +
                      static_cast<std::int64_t>(i) * state.backbone.embedding_dim);
        tags[static_cast<std::size_t>(i)] = domain;
      }
      HeadsCacheT<float> hc;
      Tensor probs = heads_forward(state.heads, emb, HeadKind::Domain, &hc);
      Tensor dq;
      loss_sum += idr_loss(probs, tags, IdrStage::Classify, &dq);
      ++batches;
      heads_backward(state.heads, hc, HeadKind::Domain, dq);
      adam_step(state.heads.params, opt);
    }
    log.task_loss.push_back(loss_sum / std::max(1, batches));
    log.reg_loss.push_back(0.0);
    log.total_loss.push_back(log.task_loss.back());

    const double err = 1.0 - domain_accuracy(state, data, Split::Dev);
    log.dev_metric.push_back(err);
    log.epochs_run = epoch + 1;
    if (err < best) {
      best = err;
      log.best_epoch = epoch;
      best_heads = state.heads.params.snapshot_values();
    }
    if (epoch - log.best_epoch >= config.patience) break;
  }

  if (!best_heads.empty()) state.heads.params.restore_values(best_heads);
  state.domain_trained = true;
  return log;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

ScoreSet score_split(TrainState& state, const SyntheticDataset& data, Split split,
                     DomainTag domain, bool use_subnet) {
  const std::vector<int> indices = data.indices_of(split);
  require(!indices.empty(), ErrorCode::Data,
          std::string("empty split ") + split_name(split));
  SourceStreamT<float> stream = eval_stream(state, use_subnet);

  ScoreSet scores;
  scores.records.reserve(indices.size());
  const std::size_t eval_batch = 32;
  for (std::size_t b = 0; b < indices.size(); b += eval_batch) {
    const std::size_t e = std::min(b + eval_batch, indices.size());
    Tensor images = assemble_batch(data, indices, b, e, domain, nullptr);
    Tensor emb = source_forward(stream, images, BatchNormMode::Eval);
    Tensor logits = heads_logits(state.heads, emb, HeadKind::Pad);
    for (std::size_t i = b; i < e; ++i) {
      const auto& s = data.samples[static_cast<std::size_t>(indices[i])];
      ScoreRecord r;
      r.id = s.id;
      r.score = sigmoid_double(static_cast<double>(logits.data[i - b]));
      r.label = s.label;
      r.category = category_name(s.category);
      r.split = split_name(s.split);
      scores.records.push_back(std::move(r));
    }
  }
  return scores;
}

double domain_accuracy(TrainState& state, const SyntheticDataset& data, Split split,
                       std::optional<DomainTag> only) {
  const std::vector<int> indices = data.indices_of(split);
  require(!indices.empty(), ErrorCode::Data,
          std::string("empty split ") + split_name(split));
  SourceStreamT<float> stream = eval_stream(state, state.has_subnet());

  std::int64_t correct = 0, total = 0;
  const std::size_t eval_batch = 32;
  for (DomainTag domain : {DomainTag::Source, DomainTag::Target}) {
    if (only && *only != domain) continue;
    for (std::size_t b = 0; b < indices.size(); b += eval_batch) {
      const std::size_t e = std::min(b + eval_batch, indices.size());
      Tensor images = assemble_batch(data, indices, b, e, domain, nullptr);
      Tensor emb = domain == DomainTag::Source
                       ? source_forward(stream, images, BatchNormMode::Eval)
                       : backbone_forward(state.backbone, images);
      Tensor logits = heads_logits(state.heads, emb, HeadKind::Domain);
      for (std::int64_t i = 0; i < logits.numel(); ++i) {
        const bool predicted_target = logits.data[static_cast<std::size_t>(i)] > 0.0f;
        if (predicted_target == (domain == DomainTag::Target)) ++correct;
        ++total;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

EmbeddingDump dump_embeddings(TrainState& state, const SyntheticDataset& data,
                              Split split, DomainTag domain, bool use_subnet) {
  const std::vector<int> indices = data.indices_of(split);
  require(!indices.empty(), ErrorCode::Data,
          std::string("empty split ") + split_name(split));
  SourceStreamT<float> stream = eval_stream(state, use_subnet);
  EmbeddingDump dump;
  const std::size_t eval_batch = 32;
  const int dim = state.backbone.embedding_dim;
  for (std::size_t b = 0; b < indices.size(); b += eval_batch) {
    const std::size_t e = std::min(b + eval_batch, indices.size());
    Tensor images = assemble_batch(data, indices, b, e, domain, nullptr);
    Tensor emb = source_forward(stream, images, BatchNormMode::Eval);
    for (std::size_t i = b; i < e; ++i) {
      const auto& s = data.samples[static_cast<std::size_t>(indices[i])];
      std::vector<float> row(static_cast<std::size_t>(dim));
      std::copy(emb.data.begin() + static_cast<std::int64_t>(i - b) * dim,
                emb.data.begin() + static_cast<std::int64_t>(i - b + 1) * dim,
                row.begin());
      dump.rows.push_back(std::move(row));
      dump.labels.push_back(s.label);
      dump.ids.push_back(s.id);
    }
  }
  return dump;
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

void save_state_checkpoint(const TrainState& state, const std::string& stem,
                           const std::string& phase,
                           const std::string& config_echo_json) {
  json echo;
  try {
    echo["experiment"] = json::parse(config_echo_json);
  } catch (const json::exception&) {
    echo["experiment"] = config_echo_json;
  }
  echo["train_state"] = {
      {"preset", state.backbone_config.preset_name()},
      {"input_height", state.backbone_config.input_height},
      {"input_width", state.backbone_config.input_width},
      {"width_multiplier", state.backbone_config.width_multiplier},
      {"subnet_type", subnet_type_name(state.subnet_config.type)},
      {"subnet_tap", tap_name(state.subnet_config.tap)},
      {"phase1_done", state.phase1_done},
      {"domain_trained", state.domain_trained},
      {"bonafide_seen",
       std::find(state.target_labels_seen.begin(), state.target_labels_seen.end(),
                 PadClass::Bonafide) != state.target_labels_seen.end()},
      {"attack_seen",
       std::find(state.target_labels_seen.begin(), state.target_labels_seen.end(),
                 PadClass::Attack) != state.target_labels_seen.end()},
  };

  ConstComponents components{{"backbone", &state.backbone.params},
                             {"heads", &state.heads.params}};
  if (state.subnet) components.emplace_back("subnet", &state.subnet->params);

  CheckpointMeta meta;
  meta.seed = state.seed;
  meta.phase = phase;
  meta.config_echo_json = echo.dump();
  save_checkpoint(stem, components, meta);
}

TrainState load_state_checkpoint(const std::string& stem, CheckpointInfo* info_out) {
  CheckpointInfo info = peek_checkpoint(stem);
  json echo;
  try {
    echo = json::parse(info.config_echo_json);
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("bad checkpoint config echo: ") + e.what());
  }
  require(echo.contains("train_state"), ErrorCode::Format,
          "checkpoint lacks a train_state section");
  const json& ts = echo["train_state"];

  BackboneConfig config;
  const std::string preset = ts.at("preset").get<std::string>();
  config = preset == "full" ? BackboneConfig::full() : BackboneConfig::tiny();
  config.input_height = ts.at("input_height").get<int>();
  config.input_width = ts.at("input_width").get<int>();
  config.width_multiplier = ts.at("width_multiplier").get<double>();

  TrainState state = make_train_state(config, info.seed);
  const SubnetType subnet_type =
      subnet_type_from_string(ts.at("subnet_type").get<std::string>());
  if (subnet_type != SubnetType::None) {
    attach_subnet(state, subnet_type, tap_from_string(ts.at("subnet_tap").get<std::string>()));
  }
  state.phase1_done = ts.at("phase1_done").get<bool>();
  state.domain_trained = ts.at("domain_trained").get<bool>();
  state.target_labels_seen.clear();
  if (ts.value("bonafide_seen", false))
    state.target_labels_seen.push_back(PadClass::Bonafide);
  if (ts.value("attack_seen", false))
    state.target_labels_seen.push_back(PadClass::Attack);

  MutComponents components{{"backbone", &state.backbone.params},
                           {"heads", &state.heads.params}};
  if (state.subnet) components.emplace_back("subnet", &state.subnet->params);
  load_checkpoint(stem, components);
  if (info_out) *info_out = info;
  return state;
}

std::uint64_t frozen_parameter_checksum(const TrainState& state) {
  // covers the backbone and the PAD classifier: the parameters that must
  // stay byte-identical through every adaptation stage
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& e : state.backbone.params.entries)
    fnv_accumulate(h, e.value.data.data(), e.value.data.size() * sizeof(float));
  const auto& pad_w = state.heads.params.at(state.heads.pad_w).value;
  const auto& pad_b = state.heads.params.at(state.heads.pad_b).value;
  fnv_accumulate(h, pad_w.data.data(), pad_w.data.size() * sizeof(float));
  fnv_accumulate(h, pad_b.data.data(), pad_b.data.size() * sizeof(float));
  return h;
}

}  // namespace cdpad
