#include "ditsinger/ditsinger.h"

#include "ditsinger/alignment.hpp"
#include "ditsinger/binary_io.hpp"
#include "ditsinger/errors.hpp"
#include "ditsinger/metrics.hpp"
#include "ditsinger/model.hpp"
#include "ditsinger/run_config.hpp"
#include "ditsinger/score.hpp"
#include "ditsinger/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <memory>
#include <optional>
#include <string>

using namespace ditsinger;
using nlohmann::json;

struct ds_model {
  std::unique_ptr<DiTSinger> model;
  NoiseSchedule schedule = NoiseSchedule::linear();
};

struct ds_score {
  ScoreSequence score;
  std::optional<MelGeometry> geometry;
};

struct ds_mel {
  MelTensor mel;
};

struct ds_corpus {
  SyntheticCorpus corpus;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
ds_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return DS_OK;
  } catch (const ContractViolation& e) {
    g_last_error = e.what();
    return DS_ERR_INVALID_ARGUMENT;
  } catch (const VersionMismatch& e) {
    g_last_error = e.what();
    return DS_ERR_VERSION;
  } catch (const ChecksumMismatch& e) {
    g_last_error = e.what();
    return DS_ERR_CHECKSUM;
  } catch (const GeometryMismatch& e) {
    g_last_error = e.what();
    return DS_ERR_GEOMETRY;
  } catch (const TrainingDiverged& e) {
    g_last_error = e.what();
    return DS_ERR_DIVERGED;
  } catch (const IoError& e) {
    g_last_error = e.what();
    return DS_ERR_IO;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return DS_ERR_IO;
  } catch (const json::exception& e) {
    g_last_error = std::string("invalid JSON: ") + e.what();
    return DS_ERR_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return DS_ERR_INTERNAL;
  }
}

void require_arg(bool ok, const char* what) {
  if (!ok) throw ContractViolation(std::string("null or invalid argument: ") + what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json parse_object(const char* text, const char* what) {
  if (!text) return json::object();
  json j = parse_commented_json(text);
  if (!j.is_object()) throw ContractViolation(std::string(what) + " must be a JSON object");
  return j;
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known, const char* what) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ContractViolation(std::string(what) + ": unknown key '" + key + "'");
  }
}

json corpus_params_json(const CorpusParams& p) {
  return {{"groups", p.n_groups},
          {"melodies", p.melodies_per_group},
          {"variants", p.variants_per_melody},
          {"holdout", p.holdout_fraction},
          {"unseen_melodies", p.unseen_melodies},
          {"vocab", p.phoneme_vocab},
          {"max_chars", p.max_chars},
          {"bins", p.geometry.bins},
          {"hop", p.geometry.hop},
          {"sample_rate", p.geometry.sample_rate},
          {"max_seconds", p.melody_options.max_total_seconds},
          {"seed", p.seed}};
}

json eval_json(const EvalSummary& s) {
  json j = {{"mcd", s.mcd}, {"ffe", s.ffe}, {"band_accuracy", s.band_accuracy}, {"samples", s.rows.size()}};
  j["f0rmse"] = s.f0rmse ? json(*s.f0rmse) : json(nullptr);
  return j;
}

void check_score_fits(const DiTSinger& model, const ds_score& s) {
  const ModelConfig& c = model.config();
  if (s.geometry && !(*s.geometry == c.geometry())) {
    throw GeometryMismatch("score geometry " + std::to_string(s.geometry->bins) + " bins / hop " +
                           std::to_string(s.geometry->hop) + " / " + std::to_string(s.geometry->sample_rate) +
                           " Hz does not match the checkpoint's " + std::to_string(c.mel_bins) + " / " +
                           std::to_string(c.hop) + " / " + std::to_string(c.sample_rate));
  }
  for (const auto& t : s.score.tokens) {
    if (t.phoneme_id >= c.phoneme_vocab) {
      throw GeometryMismatch("score phoneme id " + std::to_string(t.phoneme_id) + " exceeds the checkpoint vocabulary of " +
                             std::to_string(c.phoneme_vocab));
    }
  }
  if (s.score.speaker_id >= c.speaker_count) {
    throw GeometryMismatch("score speaker " + std::to_string(s.score.speaker_id) + " exceeds the checkpoint's " +
                           std::to_string(c.speaker_count) + " speakers");
  }
}

}  // namespace

extern "C" {

const char* ds_last_error(void) { return g_last_error.c_str(); }

const char* ds_version(void) {
  static const std::string v(kCodeVersion);
  return v.c_str();
}

const char* ds_status_name(ds_status status) {
  switch (status) {
    case DS_OK: return "ok";
    case DS_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case DS_ERR_IO: return "io";
    case DS_ERR_VERSION: return "version_mismatch";
    case DS_ERR_CHECKSUM: return "checksum_mismatch";
    case DS_ERR_GEOMETRY: return "geometry_mismatch";
    case DS_ERR_DIVERGED: return "diverged";
    case DS_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void ds_string_free(char* s) { std::free(s); }

ds_status ds_fingerprint(const void* bytes, size_t size, char** hex) {
  return guarded([&] {
    require_arg((bytes || size == 0) && hex, "bytes/hex");
    *hex = dup_string(fingerprint(std::string_view(static_cast<const char*>(bytes), size)));
  });
}

// ---------------------------------------------------------------------------
// Configuration

ds_status ds_config_resolve(const char* config_text, const char* overrides_json, char** resolved_json, char** hash) {
  return guarded([&] {
    require_arg(resolved_json != nullptr, "resolved_json");
    RunConfig c;
    if (config_text) c = run_config_from_json(parse_object(config_text, "config"));
    if (overrides_json) c = run_config_from_json(parse_object(overrides_json, "overrides"), c);
    *resolved_json = dup_string(to_json(c).dump(2));
    if (hash) *hash = dup_string(config_hash(c));
  });
}

ds_status ds_preset_config(const char* preset, char** model_json) {
  return guarded([&] {
    require_arg(preset && model_json, "preset/model_json");
    *model_json = dup_string(to_json(model_preset(preset)).dump(2));
  });
}

ds_status ds_count_flops(const char* model_json, double seconds, char** flops_json) {
  return guarded([&] {
    require_arg(model_json && flops_json, "model_json/flops_json");
    const ModelConfig c = model_config_from_json(parse_object(model_json, "model"));
    const FlopBreakdown f = count_flops(c, seconds);
    json j = {{"tokenizer", f.tokenizer},
              {"condition_encoder", f.condition_encoder},
              {"self_attention_scores", f.self_attention_scores},
              {"self_attention_proj", f.self_attention_proj},
              {"cross_attention", f.cross_attention},
              {"ffn", f.ffn},
              {"adaln", f.adaln},
              {"head", f.head},
              {"total", f.total()},
              {"gflops", f.gflops()},
              {"parameters", parameter_count(c)}};
    *flops_json = dup_string(j.dump(2));
  });
}

// ---------------------------------------------------------------------------
// Data

ds_status ds_generate_corpus(const char* params_json, const char* out_dir, char** summary_json) {
  return guarded([&] {
    require_arg(params_json && out_dir, "params_json/out_dir");
    const json j = parse_object(params_json, "corpus params");
    reject_unknown_keys(j, {"groups", "melodies", "variants", "holdout", "unseen_melodies", "vocab", "max_chars", "bins",
                            "hop", "sample_rate", "max_seconds", "seed"},
                        "corpus params");
    if (!j.contains("seed")) throw ContractViolation("corpus params: seed is required");
    CorpusParams p;
    p.n_groups = j.value("groups", p.n_groups);
    p.melodies_per_group = j.value("melodies", p.melodies_per_group);
    p.variants_per_melody = j.value("variants", p.variants_per_melody);
    p.holdout_fraction = j.value("holdout", p.holdout_fraction);
    p.unseen_melodies = j.value("unseen_melodies", p.unseen_melodies);
    p.phoneme_vocab = j.value("vocab", p.phoneme_vocab);
    p.max_chars = j.value("max_chars", p.max_chars);
    p.geometry.bins = j.value("bins", p.geometry.bins);
    p.geometry.hop = j.value("hop", p.geometry.hop);
    p.geometry.sample_rate = j.value("sample_rate", p.geometry.sample_rate);
    p.melody_options.max_total_seconds = j.value("max_seconds", p.melody_options.max_total_seconds);
    p.seed = j.at("seed").get<std::uint64_t>();
    const CorpusSplit split = build_corpus(p);
    const std::filesystem::path dir(out_dir);
    save_corpus(split.train, dir / "train");
    save_corpus(split.test, dir / "test");
    save_corpus(split.test_unseen, dir / "test_unseen");
    const std::size_t total = split.train.samples.size() + split.test.samples.size() + split.test_unseen.samples.size();
    json summary = {{"train", split.train.samples.size()},
                    {"test", split.test.samples.size()},
                    {"test_unseen", split.test_unseen.samples.size()},
                    {"total", total},
                    {"params", corpus_params_json(p)}};
    if (summary_json) *summary_json = dup_string(summary.dump(2));
  });
}

ds_status ds_corpus_open(const char* corpus_dir, ds_corpus** out) {
  return guarded([&] {
    require_arg(corpus_dir && out, "corpus_dir/out");
    auto c = std::make_unique<ds_corpus>();
    c->corpus = load_corpus(corpus_dir);
    *out = c.release();
  });
}

size_t ds_corpus_size(const ds_corpus* corpus) { return corpus ? corpus->corpus.samples.size() : 0; }

ds_status ds_corpus_info(const ds_corpus* corpus, char** info_json) {
  return guarded([&] {
    require_arg(corpus && info_json, "corpus/info_json");
    json j = {{"split", corpus->corpus.split},
              {"params", corpus_params_json(corpus->corpus.params)},
              {"samples", corpus->corpus.samples.size()},
              {"oracle_version", corpus->corpus.oracle_version}};
    *info_json = dup_string(j.dump(2));
  });
}

ds_status ds_corpus_score(const ds_corpus* corpus, size_t index, ds_score** out) {
  return guarded([&] {
    require_arg(corpus && out, "corpus/out");
    require_arg(index < corpus->corpus.samples.size(), "index out of range");
    auto s = std::make_unique<ds_score>();
    s->score = corpus->corpus.samples[index].score;
    s->geometry = corpus->corpus.params.geometry;
    *out = s.release();
  });
}

ds_status ds_corpus_mel(const ds_corpus* corpus, size_t index, ds_mel** out) {
  return guarded([&] {
    require_arg(corpus && out, "corpus/out");
    require_arg(index < corpus->corpus.samples.size(), "index out of range");
    *out = new ds_mel{corpus->corpus.samples[index].mel};
  });
}

void ds_corpus_free(ds_corpus* corpus) { delete corpus; }

ds_status ds_score_parse(const char* json_text, ds_score** out) {
  return guarded([&] {
    require_arg(json_text && out, "json_text/out");
    json j = parse_object(json_text, "score");
    auto s = std::make_unique<ds_score>();
    if (j.contains("geometry")) {
      const json& g = j.at("geometry");
      s->geometry = MelGeometry{g.at("bins").get<int>(), g.at("hop").get<int>(), g.at("sample_rate").get<int>()};
      j.erase("geometry");
    }
    s->score = score_from_json(j);
    validate_score(s->score, std::numeric_limits<int>::max());
    *out = s.release();
  });
}

ds_status ds_score_to_json(const ds_score* score, char** json_text) {
  return guarded([&] {
    require_arg(score && json_text, "score/json_text");
    json j = score_to_json(score->score);
    if (score->geometry) {
      j["geometry"] = {{"bins", score->geometry->bins}, {"hop", score->geometry->hop}, {"sample_rate", score->geometry->sample_rate}};
    }
    *json_text = dup_string(j.dump(2));
  });
}

void ds_score_free(ds_score* score) { delete score; }

ds_status ds_mel_load(const char* path, ds_mel** out) {
  return guarded([&] {
    require_arg(path && out, "path/out");
    *out = new ds_mel{load_mel(path)};
  });
}

ds_status ds_mel_save(const ds_mel* mel, const char* path) {
  return guarded([&] {
    require_arg(mel && path, "mel/path");
    save_mel(mel->mel, path);
  });
}

ds_status ds_mel_shape(const ds_mel* mel, int* frames, int* bins, int* hop, int* sample_rate) {
  return guarded([&] {
    require_arg(mel != nullptr, "mel");
    if (frames) *frames = static_cast<int>(mel->mel.frames());
    if (bins) *bins = static_cast<int>(mel->mel.bins());
    if (hop) *hop = mel->mel.hop;
    if (sample_rate) *sample_rate = mel->mel.sample_rate;
  });
}

ds_status ds_mel_values(const ds_mel* mel, double* dst, size_t capacity) {
  return guarded([&] {
    require_arg(mel && dst, "mel/dst");
    const auto n = static_cast<size_t>(mel->mel.values.size());
    require_arg(capacity >= n, "capacity too small");
    std::memcpy(dst, mel->mel.values.data(), n * sizeof(double));
  });
}

void ds_mel_free(ds_mel* mel) { delete mel; }

ds_status ds_oracle_render(const ds_score* score, int bins, int hop, int sample_rate, int vocab, ds_mel** out) {
  return guarded([&] {
    require_arg(score && out, "score/out");
    *out = new ds_mel{oracle_synthesize(score->score, MelGeometry{bins, hop, sample_rate}, vocab)};
  });
}

// ---------------------------------------------------------------------------
// Alignment

ds_status ds_dump_mask(const ds_score* score, double delta, double frame_seconds, int frames, char** csv) {
  return guarded([&] {
    require_arg(score && csv, "score/csv");
    require_arg(frame_seconds > 0.0, "frame_seconds must be positive");
    Index n = frames;
    if (n <= 0) n = static_cast<Index>(std::ceil(score->score.total_duration / frame_seconds - 1e-9));
    const AlignmentMask mask = build_score_mask(score->score, delta, n, frame_seconds);
    *csv = dup_string(mask_to_csv(mask));
  });
}

// ---------------------------------------------------------------------------
// Training

ds_status ds_train(const char* run_config_json, const char* resume_path, ds_progress_fn progress, void* user,
                   char** report_json) {
  return guarded([&] {
    require_arg(run_config_json != nullptr, "run_config_json");
    const RunConfig rc = run_config_from_json(parse_object(run_config_json, "run config"));
    if (rc.corpus.empty()) throw ContractViolation("run config: corpus path is required");
    if (rc.out_dir.empty()) throw ContractViolation("run config: out_dir is required");
    const SyntheticCorpus corpus = load_corpus(rc.corpus);
    TrainOptions opts;
    opts.out_dir = rc.out_dir;
    if (resume_path) {
      opts.resume = load_training_checkpoint(resume_path);
      if (!(opts.resume->train_config == rc.train)) {
        TrainConfig a = opts.resume->train_config, b = rc.train;
        a.iterations = b.iterations = 0;
        a.checkpoint_every = b.checkpoint_every = 0;
        if (!(a == b)) throw ContractViolation("resume: checkpoint was written with different optimization settings");
      }
    }
    if (progress) {
      opts.on_step = [&](const Trainer& t) { progress(t.state().step, t.state().loss_history.back().loss, user); };
    }
    std::filesystem::create_directories(rc.out_dir);
    io::write_text(std::filesystem::path(rc.out_dir) / "run_config.json", to_json(rc).dump(2) + "\n");
    const TrainResult result = train(rc.model, corpus, rc.train, opts);
    json report = result.report;
    report["config_hash"] = config_hash(rc);
    report["resumed_from_step"] = opts.resume ? opts.resume->state.step : 0;
    io::write_text(std::filesystem::path(rc.out_dir) / "train_report.json", report.dump(2) + "\n");
    if (report_json) *report_json = dup_string(report.dump(2));
  });
}

// ---------------------------------------------------------------------------
// Inference

ds_status ds_model_load(const char* path, ds_model** out) {
  return guarded([&] {
    require_arg(path && out, "path/out");
    const auto bytes = io::read_file(path);
    auto m = std::make_unique<ds_model>();
    const std::string_view head(reinterpret_cast<const char*>(bytes.data()), std::min<std::size_t>(bytes.size(), 8));
    if (head == "DSTRAIN1") {
      const TrainingCheckpoint ck = load_training_checkpoint(path);
      m->model = restore_model(ck);
      m->schedule = NoiseSchedule::make(ck.train_config.schedule, ck.train_config.diffusion_steps);
    } else {
      m->model = std::make_unique<DiTSinger>(load_model(path));
    }
    *out = m.release();
  });
}

ds_status ds_model_config(const ds_model* model, char** model_json) {
  return guarded([&] {
    require_arg(model && model_json, "model/model_json");
    *model_json = dup_string(to_json(model->model->config()).dump(2));
  });
}

void ds_model_free(ds_model* model) { delete model; }

ds_status ds_sample(const ds_model* model, const ds_score* score, const char* sampler_json, ds_mel** out) {
  return guarded([&] {
    require_arg(model && score && out, "model/score/out");
    const SamplerConfig sc = sampler_config_from_json(parse_object(sampler_json, "sampler"));
    check_score_fits(*model->model, *score);
    Rng rng(sc.seed);
    *out = new ds_mel{sample_mel(*model->model, score->score, model->schedule, sc, rng)};
  });
}

// ---------------------------------------------------------------------------
// Evaluation

ds_status ds_evaluate_pair(const ds_mel* ref, const double* ref_f0, size_t ref_f0_len, const ds_mel* hyp,
                           const double* hyp_f0, size_t hyp_f0_len, char** row_json) {
  return guarded([&] {
    require_arg(ref && hyp && row_json, "ref/hyp/row_json");
    if (!(ref->mel.geometry() == hyp->mel.geometry())) {
      throw GeometryMismatch("evaluate: reference and hypothesis mel geometries differ");
    }
    const F0Track rf = ref_f0 ? F0Track{std::vector<double>(ref_f0, ref_f0 + ref_f0_len)} : decode_f0(ref->mel);
    const F0Track hf = hyp_f0 ? F0Track{std::vector<double>(hyp_f0, hyp_f0 + hyp_f0_len)} : decode_f0(hyp->mel);
    const MetricReport r = evaluate_pair(ref->mel, rf, hyp->mel, hf);
    json j = {{"mcd", r.mcd}, {"ffe", r.ffe}, {"frames_compared", r.frames_compared}};
    j["f0rmse"] = r.f0rmse ? json(*r.f0rmse) : json(nullptr);
    *row_json = dup_string(j.dump());
  });
}

ds_status ds_band_accuracy(const ds_mel* mel, const ds_score* score, double* accuracy) {
  return guarded([&] {
    require_arg(mel && score && accuracy, "mel/score/accuracy");
    *accuracy = band_accuracy(mel->mel, score->score);
  });
}

// ---------------------------------------------------------------------------
// Experiments

ds_status ds_experiment_groups(const char* budget_json, uint64_t seed, char** table_json) {
  return guarded([&] {
    require_arg(table_json != nullptr, "table_json");
    const json j = parse_object(budget_json, "group budget");
    reject_unknown_keys(j, {"groups", "total_melodies", "variants", "holdout", "preset", "train", "sampler", "eval_samples"},
                        "group budget");
    GroupBudget b;
    std::vector<int> groups = j.value("groups", std::vector<int>{1, 10, 20, 30, 40, 50});
    b.total_melodies = j.value("total_melodies", b.total_melodies);
    b.variants_per_melody = j.value("variants", b.variants_per_melody);
    b.holdout_fraction = j.value("holdout", b.holdout_fraction);
    b.preset = j.value("preset", b.preset);
    if (j.contains("train")) b.train = train_config_from_json(j.at("train"), b.train);
    if (j.contains("sampler")) b.sampler = sampler_config_from_json(j.at("sampler"), b.sampler);
    b.eval_samples = j.value("eval_samples", b.eval_samples);
    const auto rows = grouped_pseudosinger_experiment(groups, b, seed);
    json table = json::array();
    for (const auto& r : rows) {
      json row = {{"groups", r.n_groups},
                  {"melodies_per_group", r.melodies_per_group},
                  {"train_samples", r.train_samples},
                  {"final_loss", r.final_loss}};
      row.update(eval_json(r.eval));
      table.push_back(row);
    }
    *table_json = dup_string(table.dump(2));
  });
}

ds_status ds_experiment_scaling(const char* budget_json, uint64_t seed, char** table_json) {
  return guarded([&] {
    require_arg(table_json != nullptr, "table_json");
    const json j = parse_object(budget_json, "scaling budget");
    reject_unknown_keys(j, {"presets", "melodies", "variants", "train", "sampler", "eval_samples", "clip_seconds"},
                        "scaling budget");
    ScalingBudget b;
    b.presets = j.value("presets", b.presets);
    b.melody_counts = j.value("melodies", b.melody_counts);
    b.variants_per_melody = j.value("variants", b.variants_per_melody);
    if (j.contains("train")) b.train = train_config_from_json(j.at("train"), b.train);
    if (j.contains("sampler")) b.sampler = sampler_config_from_json(j.at("sampler"), b.sampler);
    b.eval_samples = j.value("eval_samples", b.eval_samples);
    b.flop_clip_seconds = j.value("clip_seconds", b.flop_clip_seconds);
    const auto rows = scaling_experiment(b, seed);
    json table = json::array();
    for (const auto& r : rows) {
      table.push_back({{"preset", r.preset},
                       {"gflops", r.gflops},
                       {"melodies", r.melodies},
                       {"train_samples", r.train_samples},
                       {"data_seconds", r.data_seconds},
                       {"final_loss", r.final_loss},
                       {"proxy_mcd", r.proxy_mcd}});
    }
    *table_json = dup_string(table.dump(2));
  });
}

}  // extern "C"
