#pragma once

// Masked-language-model pretraining: corruption sampling, decoupled-weight-
// decay adaptive-moment optimization with linear warmup, fixed-length chunking
// of a separator-joined document stream, a held-out tail for eval, two-stage
// short-then-long context scheduling, and resumable checkpoints.
//
// Seed discipline: every random choice in step t of stage s is drawn from a
// generator seeded by sub_seed(seed, "stage<s>.<purpose>", t), so resuming
// from a checkpoint replays the exact byte-for-byte trajectory of an
// uninterrupted run.

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "transtok/common.hpp"
#include "transtok/encoder.hpp"
#include "transtok/tokenizer.hpp"

namespace transtok {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  double mask_rate = 0.30;
  double mask_token_frac = 0.80;
  double random_token_frac = 0.10;
  double keep_frac = 0.10;
  std::size_t batch_sequences = 8;
  std::size_t stage1_steps = 500;
  std::size_t stage2_steps = 100;
  std::size_t stage1_context = 128;
  std::size_t stage2_context = 1024;
  double lr = 3e-4;
  double weight_decay = 0.01;
  double warmup_frac = 0.10;  // fraction of each stage's steps
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double held_out_frac = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
      throw std::invalid_argument("train config: mask_rate must be in (0,1)");
    }
    if (mask_token_frac < 0.0 || random_token_frac < 0.0 || keep_frac < 0.0 ||
        std::abs(mask_token_frac + random_token_frac + keep_frac - 1.0) >
            1e-12) {
      throw std::invalid_argument(
          "train config: corruption split must be nonnegative and sum to 1");
    }
    if (batch_sequences < 1) {
      throw std::invalid_argument("train config: batch_sequences must be >= 1");
    }
    if (stage1_context < 2 || stage2_context < stage1_context) {
      throw std::invalid_argument(
          "train config: need stage2_context >= stage1_context >= 2");
    }
    if (lr < 0.0 || weight_decay < 0.0) {
      throw std::invalid_argument(
          "train config: lr and weight_decay must be nonnegative");
    }
    if (warmup_frac < 0.0 || warmup_frac > 1.0) {
      throw std::invalid_argument("train config: warmup_frac must be in [0,1]");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("train config: betas must be in [0,1)");
    }
    if (adam_eps <= 0.0) {
      throw std::invalid_argument("train config: adam_eps must be positive");
    }
    if (held_out_frac < 0.0 || held_out_frac >= 1.0) {
      throw std::invalid_argument(
          "train config: held_out_frac must be in [0,1)");
    }
  }
};

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["mask_rate"] = c.mask_rate;
  j["mask_token_frac"] = c.mask_token_frac;
  j["random_token_frac"] = c.random_token_frac;
  j["keep_frac"] = c.keep_frac;
  j["batch_sequences"] = c.batch_sequences;
  j["stage1_steps"] = c.stage1_steps;
  j["stage2_steps"] = c.stage2_steps;
  j["stage1_context"] = c.stage1_context;
  j["stage2_context"] = c.stage2_context;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["warmup_frac"] = c.warmup_frac;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["held_out_frac"] = c.held_out_frac;
  j["seed"] = c.seed;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "mask_rate") c.mask_rate = it.value().get<double>();
    else if (k == "mask_token_frac") c.mask_token_frac = it.value().get<double>();
    else if (k == "random_token_frac") c.random_token_frac = it.value().get<double>();
    else if (k == "keep_frac") c.keep_frac = it.value().get<double>();
    else if (k == "batch_sequences") c.batch_sequences = it.value().get<std::size_t>();
    else if (k == "stage1_steps") c.stage1_steps = it.value().get<std::size_t>();
    else if (k == "stage2_steps") c.stage2_steps = it.value().get<std::size_t>();
    else if (k == "stage1_context") c.stage1_context = it.value().get<std::size_t>();
    else if (k == "stage2_context") c.stage2_context = it.value().get<std::size_t>();
    else if (k == "lr") c.lr = it.value().get<double>();
    else if (k == "weight_decay") c.weight_decay = it.value().get<double>();
    else if (k == "warmup_frac") c.warmup_frac = it.value().get<double>();
    else if (k == "beta1") c.beta1 = it.value().get<double>();
    else if (k == "beta2") c.beta2 = it.value().get<double>();
    else if (k == "adam_eps") c.adam_eps = it.value().get<double>();
    else if (k == "held_out_frac") c.held_out_frac = it.value().get<double>();
    else if (k == "seed") c.seed = it.value().get<std::uint64_t>();
    else throw std::runtime_error("train config: unknown field '" + k + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Masking
// ---------------------------------------------------------------------------

struct MaskParams {
  double mask_rate = 0.30;
  double mask_token_frac = 0.80;
  double random_token_frac = 0.10;
  double keep_frac = 0.10;
  int mask_id = 0;
  std::size_t vocab_size = 0;
  std::vector<int> special_ids;  // never selected for corruption
};

inline MaskParams mask_params_from(const TokenizerModel& tok,
                                   const TrainConfig& cfg) {
  MaskParams p;
  p.mask_rate = cfg.mask_rate;
  p.mask_token_frac = cfg.mask_token_frac;
  p.random_token_frac = cfg.random_token_frac;
  p.keep_frac = cfg.keep_frac;
  p.mask_id = tok.special_id("masking");
  p.vocab_size = tok.vocab.size();
  for (const auto& [role, surface] : tok.special_tokens) {
    p.special_ids.push_back(tok.special_id(role));
  }
  std::sort(p.special_ids.begin(), p.special_ids.end());
  return p;
}

struct MaskStats {
  std::size_t maskable = 0;
  std::size_t selected = 0;
  std::size_t to_mask = 0;
  std::size_t to_random = 0;
  std::size_t to_keep = 0;
};

struct MaskedSequence {
  std::vector<int> input;   // corrupted ids
  std::vector<int> labels;  // original id where selected, -1 elsewhere
  std::size_t selected = 0;
};

// Corrupts one sequence in place-order: for each non-special position,
// draw selection; if selected, draw the corruption kind (mask / random /
// keep) and, only on the random branch, the replacement token. Special
// positions consume no randomness.
inline MaskedSequence mask_sequence(const std::vector<int>& ids,
                                    const MaskParams& p, Rng& rng,
                                    MaskStats* stats = nullptr) {
  MaskedSequence out;
  out.input = ids;
  out.labels.assign(ids.size(), -1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (std::binary_search(p.special_ids.begin(), p.special_ids.end(),
                           ids[i])) {
      continue;
    }
    if (stats) ++stats->maskable;
    if (rng.uniform() >= p.mask_rate) continue;
    out.labels[i] = ids[i];
    ++out.selected;
    if (stats) ++stats->selected;
    const double kind = rng.uniform();
    if (kind < p.mask_token_frac) {
      out.input[i] = p.mask_id;
      if (stats) ++stats->to_mask;
    } else if (kind < p.mask_token_frac + p.random_token_frac) {
      out.input[i] = static_cast<int>(rng.below(p.vocab_size));
      if (stats) ++stats->to_random;
    } else {
      if (stats) ++stats->to_keep;  // label set, token left intact
    }
  }
  return out;
}

struct MaskedBatch {
  std::vector<MaskedSequence> sequences;  // sequences with >= 1 label
  std::size_t skipped = 0;                // sequences with nothing to predict
  MaskStats stats;
};

inline MaskedBatch mask_batch(const std::vector<std::vector<int>>& seqs,
                              const MaskParams& p, std::uint64_t seed) {
  Rng rng(seed);
  MaskedBatch out;
  for (const auto& s : seqs) {
    MaskedSequence m = mask_sequence(s, p, rng, &out.stats);
    if (m.selected == 0) {
      ++out.skipped;
    } else {
      out.sequences.push_back(std::move(m));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stream building and chunking
// ---------------------------------------------------------------------------

// Tokenizes documents (one per line, blanks skipped) and joins them into one
// id stream with the separator token between consecutive documents.
inline std::vector<int> build_token_stream(const TokenizerModel& tok,
                                           const std::vector<std::string>& docs) {
  CorpusEncoder enc(tok);
  const int sep = tok.special_id("separation");
  std::vector<int> stream;
  bool first = true;
  for (const auto& doc : docs) {
    bool blank = true;
    for (char ch : doc) {
      if (!std::isspace(static_cast<unsigned char>(ch))) {
        blank = false;
        break;
      }
    }
    if (blank) continue;
    if (!first) stream.push_back(sep);
    first = false;
    std::vector<int> ids = enc.encode(doc);
    stream.insert(stream.end(), ids.begin(), ids.end());
  }
  return stream;
}

// Consecutive fixed-length chunks; the trailing partial chunk is dropped.
inline std::vector<std::vector<int>> chunk_stream(const std::vector<int>& stream,
                                                  std::size_t context) {
  if (context < 1) throw std::invalid_argument("chunk_stream: context >= 1");
  std::vector<std::vector<int>> chunks;
  for (std::size_t start = 0; start + context <= stream.size();
       start += context) {
    chunks.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(start),
                        stream.begin() + static_cast<std::ptrdiff_t>(start + context));
  }
  return chunks;
}

struct ChunkSplit {
  std::vector<std::vector<int>> train;
  std::vector<std::vector<int>> held_out;
};

// The held-out slice is the tail of the chunk list; at least one chunk always
// stays in the training split.
inline ChunkSplit split_chunks(std::vector<std::vector<int>> chunks,
                               double held_out_frac) {
  ChunkSplit out;
  std::size_t held = static_cast<std::size_t>(
      std::ceil(held_out_frac * static_cast<double>(chunks.size())));
  if (held_out_frac == 0.0) held = 0;
  if (held + 1 > chunks.size()) {
    held = chunks.size() > 1 ? chunks.size() - 1 : 0;
  }
  const std::size_t train_n = chunks.size() - held;
  out.train.assign(chunks.begin(),
                   chunks.begin() + static_cast<std::ptrdiff_t>(train_n));
  out.held_out.assign(chunks.begin() + static_cast<std::ptrdiff_t>(train_n),
                      chunks.end());
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

namespace detail {

inline double scheduled_lr(double lr, std::size_t warmup_steps, std::size_t t) {
  if (warmup_steps == 0 || t >= warmup_steps) return lr;
  return lr * static_cast<double>(t) / static_cast<double>(warmup_steps);
}

}  // namespace detail

// Adaptive moments with decoupled weight decay. Weight decay applies only to
// parameters of rank >= 2 (matrices); vectors (biases, norm gains) are
// exempt. Gradients left empty are treated as zero, so moments still decay.
struct AdamW {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 0;
  std::size_t t = 0;  // completed steps
  std::vector<std::vector<double>> m, v;

  void init(const std::vector<std::pair<std::string, Tensor>>& params) {
    m.clear();
    v.clear();
    for (const auto& [name, p] : params) {
      m.emplace_back(p.size(), 0.0);
      v.emplace_back(p.size(), 0.0);
    }
  }

  void step(const std::vector<std::pair<std::string, Tensor>>& params) {
    if (m.size() != params.size()) {
      throw std::logic_error("AdamW: optimizer state not initialized");
    }
    ++t;
    const double lr_t =
        detail::scheduled_lr(lr, warmup_steps, t);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor& p = params[i].second;
      const bool decay = p.rank() >= 2 && weight_decay > 0.0;
      const std::vector<double>& g = p.grad();
      std::vector<double>& val = p.node()->value;
      for (std::size_t j = 0; j < val.size(); ++j) {
        const double gj = g.empty() ? 0.0 : g[j];
        m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * gj;
        v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * gj * gj;
        const double mhat = m[i][j] / bc1;
        const double vhat = v[i][j] / bc2;
        const double cur = val[j];
        double upd = mhat / (std::sqrt(vhat) + eps);
        if (decay) upd += weight_decay * cur;
        val[j] = cur - lr_t * upd;
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct LossRow {
  std::size_t step = 0;
  std::size_t stage = 0;
  double loss = 0.0;
};

struct Checkpoint {
  EncoderModel model;
  std::vector<std::vector<double>> opt_m, opt_v;  // named_parameters() order
  std::size_t step = 0;   // completed steps within the current stage
  std::size_t stage = 1;
  std::vector<LossRow> history;
};

inline Checkpoint make_checkpoint(EncoderModel model) {
  Checkpoint ck;
  ck.model = std::move(model);
  for (const auto& [name, p] : ck.model.named_parameters()) {
    ck.opt_m.emplace_back(p.size(), 0.0);
    ck.opt_v.emplace_back(p.size(), 0.0);
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::vector<NamedTensor> tensors = model_tensors(ck.model);
  const auto params = ck.model.named_parameters();
  if (ck.opt_m.size() != params.size() || ck.opt_v.size() != params.size()) {
    throw std::logic_error("save_checkpoint: optimizer state size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({"opt.m." + params[i].first,
                       params[i].second.shape(), ck.opt_m[i]});
    tensors.push_back({"opt.v." + params[i].first,
                       params[i].second.shape(), ck.opt_v[i]});
  }
  tensors.push_back({"trainer.meta",
                     {2},
                     {static_cast<double>(ck.step),
                      static_cast<double>(ck.stage)}});
  NamedTensor hist;
  hist.name = "trainer.history";
  hist.shape = {ck.history.size(), 3};
  for (const auto& row : ck.history) {
    hist.data.push_back(static_cast<double>(row.step));
    hist.data.push_back(static_cast<double>(row.stage));
    hist.data.push_back(row.loss);
  }
  tensors.push_back(std::move(hist));
  write_container(path, encoder_config_to_json(ck.model.config).dump(),
                  tensors);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  Container c = read_container(path);
  Checkpoint ck;
  ck.model = model_from_container(c);
  for (const auto& [name, p] : ck.model.named_parameters()) {
    const NamedTensor* tm = c.find("opt.m." + name);
    const NamedTensor* tv = c.find("opt.v." + name);
    if (tm == nullptr || tv == nullptr) {
      throw std::runtime_error("checkpoint is missing optimizer state for '" +
                               name + "'");
    }
    if (tm->data.size() != p.size() || tv->data.size() != p.size()) {
      throw std::runtime_error("checkpoint optimizer state for '" + name +
                               "' has wrong size");
    }
    ck.opt_m.push_back(tm->data);
    ck.opt_v.push_back(tv->data);
  }
  const NamedTensor* meta = c.find("trainer.meta");
  if (meta == nullptr || meta->data.size() != 2) {
    throw std::runtime_error("checkpoint is missing trainer metadata");
  }
  ck.step = static_cast<std::size_t>(std::llround(meta->data[0]));
  ck.stage = static_cast<std::size_t>(std::llround(meta->data[1]));
  const NamedTensor* hist = c.find("trainer.history");
  if (hist == nullptr || hist->shape.size() != 2 || hist->shape[1] != 3) {
    throw std::runtime_error("checkpoint is missing loss history");
  }
  for (std::size_t r = 0; r < hist->shape[0]; ++r) {
    ck.history.push_back(
        {static_cast<std::size_t>(std::llround(hist->data[r * 3 + 0])),
         static_cast<std::size_t>(std::llround(hist->data[r * 3 + 1])),
         hist->data[r * 3 + 2]});
  }
  return ck;
}

inline std::string losses_to_tsv(const std::vector<LossRow>& rows) {
  std::string out = "step\tstage\tloss\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step);
    out += '\t';
    out += std::to_string(r.stage);
    out += '\t';
    out += format_double(r.loss);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation helper shared with the metrics module
// ---------------------------------------------------------------------------

// Average masked cross-entropy over chunks under a fixed masking seed:
// sum of per-position losses divided by the number of predicted positions.
inline double masked_eval_loss(const EncoderModel& model,
                               const std::vector<std::vector<int>>& chunks,
                               const MaskParams& p, std::uint64_t seed) {
  if (chunks.empty()) {
    throw std::invalid_argument("masked_eval_loss: no chunks to evaluate");
  }
  NoGradGuard ng;
  Rng rng(seed);
  double total = 0.0;
  std::size_t kept_total = 0;
  for (const auto& chunk : chunks) {
    MaskedSequence ms = mask_sequence(chunk, p, rng);
    if (ms.selected == 0) continue;
    Tensor logits = forward(model, ms.input);
    std::size_t kept = 0;
    Tensor ce = cross_entropy_sum(logits, ms.labels, &kept);
    total += ce.values()[0];
    kept_total += kept;
  }
  if (kept_total == 0) {
    throw std::runtime_error(
        "masked_eval_loss: masking selected no positions in any chunk");
  }
  return total / static_cast<double>(kept_total);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct StageParams {
  std::size_t stage_id = 1;
  std::size_t steps = 0;
  std::size_t context = 0;
  std::string checkpoint_path;       // "" = no checkpoints written
  std::size_t checkpoint_every = 0;  // 0 = final only (when path set)
  std::size_t stop_after = 0;        // 0 = run to `steps`; else pause there
};

struct StageSummary {
  double initial_held_out = std::numeric_limits<double>::quiet_NaN();
  double final_held_out = std::numeric_limits<double>::quiet_NaN();
  std::size_t steps_run = 0;
  std::size_t skipped_sequences = 0;
};

// Advances the checkpoint through one training stage. Entering a different
// stage id resets the step counter and optimizer moments (each stage is its
// own optimization run with its own warmup); re-entering the same stage
// resumes at ck.step + 1 with the stored moments.
inline StageSummary train_stage(Checkpoint& ck, const std::vector<int>& stream,
                                const TrainConfig& cfg, const MaskParams& mask,
                                const StageParams& sp) {
  cfg.validate();
  if (sp.context < 2) {
    throw std::invalid_argument("train_stage: context must be >= 2");
  }
  if (sp.context > ck.model.config.max_context) {
    throw std::invalid_argument(
        "train_stage: context exceeds the model's max_context");
  }
  if (ck.stage != sp.stage_id) {
    ck.stage = sp.stage_id;
    ck.step = 0;
    for (auto& mm : ck.opt_m) std::fill(mm.begin(), mm.end(), 0.0);
    for (auto& vv : ck.opt_v) std::fill(vv.begin(), vv.end(), 0.0);
  }

  ChunkSplit split = split_chunks(chunk_stream(stream, sp.context),
                                  cfg.held_out_frac);
  if (split.train.empty()) {
    throw std::runtime_error(
        "train_stage: corpus yields no training chunks at context " +
        std::to_string(sp.context));
  }

  const std::string tag = "stage" + std::to_string(sp.stage_id);
  auto params = ck.model.named_parameters();
  AdamW opt;
  opt.lr = cfg.lr;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.eps = cfg.adam_eps;
  opt.weight_decay = cfg.weight_decay;
  opt.warmup_steps = static_cast<std::size_t>(
      std::llround(cfg.warmup_frac * static_cast<double>(sp.steps)));
  opt.t = ck.step;
  opt.m = ck.opt_m;
  opt.v = ck.opt_v;

  StageSummary summary;
  if (!split.held_out.empty()) {
    summary.initial_held_out = masked_eval_loss(
        ck.model, split.held_out, mask, sub_seed(cfg.seed, tag + ".heldout"));
  }

  const std::size_t last =
      sp.stop_after > 0 ? std::min(sp.stop_after, sp.steps) : sp.steps;
  for (std::size_t step = ck.step + 1; step <= last; ++step) {
    // Assemble the batch for this step (stateless in `step`).
    Rng pick(sub_seed(cfg.seed, tag + ".batch", step));
    std::vector<std::vector<int>> batch;
    for (std::size_t b = 0; b < cfg.batch_sequences; ++b) {
      batch.push_back(split.train[pick.below(split.train.size())]);
    }
    MaskedBatch mb =
        mask_batch(batch, mask, sub_seed(cfg.seed, tag + ".mask", step));
    summary.skipped_sequences += mb.skipped;
    if (mb.sequences.empty()) {
      throw std::runtime_error(
          "train_stage: step " + std::to_string(step) +
          " has no maskable positions in any batch sequence");
    }

    for (auto& [name, p] : params) p.zero_grad();
    Tensor total;
    std::size_t kept_total = 0;
    for (const auto& ms : mb.sequences) {
      std::size_t kept = 0;
      Tensor ce =
          cross_entropy_sum(forward(ck.model, ms.input), ms.labels, &kept);
      kept_total += kept;
      total = total.node() == nullptr ? ce : add(total, ce);
    }
    Tensor loss = scale(total, 1.0 / static_cast<double>(kept_total));
    const double loss_value = loss.values()[0];
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("train_stage: non-finite loss at step " +
                               std::to_string(step) + " (stage " +
                               std::to_string(sp.stage_id) + ")");
    }
    backward(loss);
    opt.step(params);

    ck.step = step;
    ck.history.push_back({step, sp.stage_id, loss_value});
    ++summary.steps_run;

    if (!sp.checkpoint_path.empty() && sp.checkpoint_every > 0 &&
        step % sp.checkpoint_every == 0 && step != last) {
      ck.opt_m = opt.m;
      ck.opt_v = opt.v;
      save_checkpoint(ck, sp.checkpoint_path);
    }
  }
  ck.opt_m = std::move(opt.m);
  ck.opt_v = std::move(opt.v);

  if (!split.held_out.empty()) {
    summary.final_held_out = masked_eval_loss(
        ck.model, split.held_out, mask, sub_seed(cfg.seed, tag + ".heldout"));
  }
  if (!sp.checkpoint_path.empty()) save_checkpoint(ck, sp.checkpoint_path);
  return summary;
}

struct TwoStageSummary {
  StageSummary stage1, stage2;
};

// Stage 1 at the short context, then stage 2 at the long context on the same
// parameters. When `checkpoint_dir` is set, each stage leaves
// checkpoint_stage<i>.bin behind.
inline TwoStageSummary run_two_stage(Checkpoint& ck,
                                     const std::vector<int>& stream,
                                     const TrainConfig& cfg,
                                     const MaskParams& mask,
                                     const std::string& checkpoint_dir = "") {
  TwoStageSummary out;
  StageParams s1;
  s1.stage_id = 1;
  s1.steps = cfg.stage1_steps;
  s1.context = cfg.stage1_context;
  StageParams s2;
  s2.stage_id = 2;
  s2.steps = cfg.stage2_steps;
  s2.context = cfg.stage2_context;
  if (!checkpoint_dir.empty()) {
    s1.checkpoint_path =
        (std::filesystem::path(checkpoint_dir) / "checkpoint_stage1.bin")
            .string();
    s2.checkpoint_path =
        (std::filesystem::path(checkpoint_dir) / "checkpoint_stage2.bin")
            .string();
  }
  out.stage1 = train_stage(ck, stream, cfg, mask, s1);
  if (cfg.stage2_steps > 0) {
    out.stage2 = train_stage(ck, stream, cfg, mask, s2);
  }
  return out;
}

}  // namespace transtok
