// Command-line front end. Everything below goes through the C interface.

#include "ditsinger/ditsinger.h"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes.
constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;
constexpr int kExitGeometry = 5;
constexpr int kExitUnpaired = 6;

struct Failure {
  int code;
  std::string message;
};

int exit_code_for(ds_status s) {
  switch (s) {
    case DS_OK: return kExitOk;
    case DS_ERR_INVALID_ARGUMENT: return kExitUsage;
    case DS_ERR_IO:
    case DS_ERR_VERSION:
    case DS_ERR_CHECKSUM: return kExitIo;
    case DS_ERR_GEOMETRY: return kExitGeometry;
    case DS_ERR_DIVERGED: return kExitDiverged;
    case DS_ERR_INTERNAL: return kExitInternal;
  }
  return kExitInternal;
}

void check(ds_status s, const std::string& what) {
  if (s != DS_OK) throw Failure{exit_code_for(s), what + ": " + ds_last_error()};
}

// Owns a string returned by the library.
std::string take(char* s) {
  std::string out = s ? s : "";
  ds_string_free(s);
  return out;
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(ptr); }
};
using ModelHandle = Handle<ds_model, ds_model_free>;
using ScoreHandle = Handle<ds_score, ds_score_free>;
using MelHandle = Handle<ds_mel, ds_mel_free>;
using CorpusHandle = Handle<ds_corpus, ds_corpus_free>;

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Failure{kExitIo, "cannot read " + p.string()};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw Failure{kExitIo, "cannot write " + p.string()};
}

std::string hash_text(const std::string& text) {
  char* hex = nullptr;
  check(ds_fingerprint(text.data(), text.size(), &hex), "fingerprint");
  return take(hex);
}

std::string hash_file(const fs::path& p) { return hash_text(read_text(p)); }

std::string g_command_line;

// Provenance record written next to (or, for directories, inside) an output.
void write_provenance(const fs::path& target, json fields) {
  fields["tool"] = ds_version();
  fields["command"] = g_command_line;
  const fs::path sidecar = fs::is_directory(target) ? target / "provenance.json" : fs::path(target.string() + ".provenance.json");
  write_text(sidecar, fields.dump(2) + "\n");
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  int groups = 1;
  int melodies = 2;
  int variants = 4;
  double holdout = 0.25;
  int unseen = 0;
  int vocab = 16;
  int max_chars = 6;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a) {
  json params = {{"groups", a.groups},     {"melodies", a.melodies}, {"variants", a.variants},
                 {"holdout", a.holdout},   {"unseen_melodies", a.unseen}, {"vocab", a.vocab},
                 {"max_chars", a.max_chars}, {"seed", *a.seed}};
  if (!a.preset.empty()) {
    char* model = nullptr;
    check(ds_preset_config(a.preset.c_str(), &model), "preset");
    const json m = json::parse(take(model));
    params["bins"] = m.at("mel_bins");
    params["hop"] = m.at("hop");
    params["sample_rate"] = m.at("sample_rate");
    params["vocab"] = m.at("phoneme_vocab");
  }
  char* summary = nullptr;
  check(ds_generate_corpus(params.dump().c_str(), a.out.c_str(), &summary), "gen-data");
  const json s = json::parse(take(summary));
  write_text(fs::path(a.out) / "summary.json", s.dump(2) + "\n");
  write_provenance(a.out, {{"subcommand", "gen-data"}, {"params", s.at("params")}, {"config_hash", hash_text(s.at("params").dump())},
                           {"seed", *a.seed}});
  std::cout << "train " << s.at("train") << "\ntest " << s.at("test") << "\ntest_unseen " << s.at("test_unseen") << "\ntotal "
            << s.at("total") << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string preset;
  std::string corpus;
  std::string out;
  std::string resume;
  std::optional<int> iters, batch, accum, checkpoint_every;
  std::optional<double> lr, wd, dropout, delta;
  std::optional<std::uint64_t> seed;
  bool no_mask = false;
  int log_every = 100;
};

void print_progress(int step, double loss, void* user) {
  const int every = *static_cast<int*>(user);
  if (every > 0 && step % every == 0) std::fprintf(stderr, "step %d loss %.6f\n", step, loss);
}

int cmd_train(TrainArgs a) {
  json overrides = json::object();
  if (!a.preset.empty()) overrides["model"]["preset"] = a.preset;
  if (a.delta) overrides["model"]["align_delta"] = *a.delta;
  if (a.no_mask) overrides["model"]["use_alignment_mask"] = false;
  if (a.iters) overrides["train"]["iterations"] = *a.iters;
  if (a.batch) overrides["train"]["batch_size"] = *a.batch;
  if (a.accum) overrides["train"]["grad_accum_steps"] = *a.accum;
  if (a.checkpoint_every) overrides["train"]["checkpoint_every"] = *a.checkpoint_every;
  if (a.lr) overrides["train"]["learning_rate"] = *a.lr;
  if (a.wd) overrides["train"]["weight_decay"] = *a.wd;
  if (a.seed) overrides["train"]["seed"] = *a.seed;
  if (a.dropout) overrides["guidance"]["cond_dropout_p"] = *a.dropout;
  if (!a.corpus.empty()) overrides["corpus"] = a.corpus;
  if (!a.out.empty()) overrides["out_dir"] = a.out;

  const std::string config_text = a.config.empty() ? std::string() : read_text(a.config);
  char* resolved = nullptr;
  char* hash = nullptr;
  check(ds_config_resolve(a.config.empty() ? nullptr : config_text.c_str(), overrides.dump().c_str(), &resolved, &hash),
        "config");
  const std::string config = take(resolved);
  const std::string config_hash = take(hash);
  const json rc = json::parse(config);
  if (rc.at("corpus").get<std::string>().empty()) throw Failure{kExitUsage, "train: --corpus (or a config corpus) is required"};
  if (rc.at("out_dir").get<std::string>().empty()) throw Failure{kExitUsage, "train: --out (or a config out_dir) is required"};
  if (!a.config.empty() || !a.seed) {
    if (!rc.at("train").contains("seed")) throw Failure{kExitUsage, "train: a seed is required"};
  }
  std::cout << config << "\n";
  std::cout.flush();

  char* report = nullptr;
  const ds_status s = ds_train(config.c_str(), a.resume.empty() ? nullptr : a.resume.c_str(), print_progress, &a.log_every, &report);
  check(s, "train");
  const json r = json::parse(take(report));
  const fs::path out = rc.at("out_dir").get<std::string>();
  json prov = {{"subcommand", "train"},
               {"config_hash", config_hash},
               {"seed", rc.at("train").at("seed")},
               {"corpus", rc.at("corpus")},
               {"corpus_manifest_hash", hash_file(fs::path(rc.at("corpus").get<std::string>()) / "manifest.bin")}};
  if (!a.resume.empty()) prov["resumed_from"] = a.resume;
  write_provenance(out, prov);
  prov["model_hash"] = hash_file(out / "model.bin");
  write_provenance(out / "model.bin", prov);
  write_provenance(out / "loss.csv", prov);
  std::fprintf(stderr, "steps %d first-100 mean %.6f last-100 mean %.6f\n", r.at("steps").get<int>(),
               r.at("first_100_mean_loss").get<double>(), r.at("last_100_mean_loss").get<double>());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sample

struct SampleArgs {
  std::string checkpoint;
  std::string score;
  std::string corpus;
  std::optional<int> index;
  std::string out;
  std::string sampler = "ode";
  int steps = 50;
  double w = 4.0;
  std::uint64_t seed = 0;
};

int cmd_sample(const SampleArgs& a) {
  if (a.score.empty() == a.corpus.empty()) throw Failure{kExitUsage, "sample: give exactly one of --score or --corpus"};
  ModelHandle model;
  check(ds_model_load(a.checkpoint.c_str(), &model.ptr), "load checkpoint");
  const std::string ckpt_hash = hash_file(a.checkpoint);

  auto run_one = [&](const ds_score* score, std::uint64_t seed, const fs::path& out_path, const json& source) {
    const json sampler = {{"kind", a.sampler}, {"steps", a.steps}, {"w", a.w}, {"seed", seed}};
    MelHandle mel;
    check(ds_sample(model.ptr, score, sampler.dump().c_str(), &mel.ptr), "sample");
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    check(ds_mel_save(mel.ptr, out_path.string().c_str()), "write mel");
    json prov = {{"subcommand", "sample"}, {"checkpoint", a.checkpoint}, {"checkpoint_hash", ckpt_hash},
                 {"sampler", a.sampler},   {"steps", a.steps},           {"w", a.w},
                 {"seed", seed},           {"source", source},           {"unconditional", a.w == 0.0},
                 {"config_hash", hash_text(sampler.dump())}};
    write_provenance(out_path, prov);
  };

  if (!a.score.empty()) {
    ScoreHandle score;
    check(ds_score_parse(read_text(a.score).c_str(), &score.ptr), "score");
    run_one(score.ptr, a.seed, a.out, {{"score", a.score}});
    std::cout << a.out << "\n";
    return kExitOk;
  }
  CorpusHandle corpus;
  check(ds_corpus_open(a.corpus.c_str(), &corpus.ptr), "open corpus");
  const std::size_t n = ds_corpus_size(corpus.ptr);
  std::vector<std::size_t> indices;
  if (a.index) {
    if (*a.index < 0 || static_cast<std::size_t>(*a.index) >= n) throw Failure{kExitUsage, "sample: --index out of range"};
    indices.push_back(static_cast<std::size_t>(*a.index));
  } else {
    for (std::size_t i = 0; i < n; ++i) indices.push_back(i);
  }
  for (std::size_t i : indices) {
    ScoreHandle score;
    check(ds_corpus_score(corpus.ptr, i, &score.ptr), "corpus score");
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.mel", i);
    // Per-sample seed so a subset reproduces the same outputs as a full run.
    char* seed_hex = nullptr;
    const std::string seed_key = std::to_string(a.seed) + ":" + std::to_string(i);
    check(ds_fingerprint(seed_key.data(), seed_key.size(), &seed_hex), "seed");
    const std::uint64_t seed = std::stoull(take(seed_hex), nullptr, 16);
    run_one(score.ptr, seed, fs::path(a.out) / name, {{"corpus", a.corpus}, {"index", i}});
    std::cout << (fs::path(a.out) / name).string() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string ref;
  std::string hyp;
  std::string csv;
  std::string json_out;
};

std::map<std::string, fs::path> mel_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Failure{kExitIo, dir.string() + " is not a directory"};
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".mel") out[e.path().filename().string()] = e.path();
  }
  return out;
}

int cmd_eval(const EvalArgs& a) {
  const auto refs = mel_files(a.ref);
  const auto hyps = mel_files(a.hyp);
  std::vector<std::string> orphans;
  for (const auto& [name, p] : refs) {
    if (!hyps.count(name)) orphans.push_back(p.string());
  }
  for (const auto& [name, p] : hyps) {
    if (!refs.count(name)) orphans.push_back(p.string());
  }
  if (!orphans.empty()) {
    std::cerr << "eval: unpaired files:\n";
    for (const auto& o : orphans) std::cerr << "  " << o << "\n";
    return kExitUnpaired;
  }
  if (refs.empty()) throw Failure{kExitUsage, "eval: no .mel files found"};

  std::string csv = "name,mcd,ffe,f0rmse,frames_compared\n";
  json rows = json::array();
  double mcd = 0.0, ffe = 0.0, f0 = 0.0;
  std::size_t f0_n = 0;
  for (const auto& [name, ref_path] : refs) {
    MelHandle ref, hyp;
    check(ds_mel_load(ref_path.string().c_str(), &ref.ptr), "load " + ref_path.string());
    check(ds_mel_load(hyps.at(name).string().c_str(), &hyp.ptr), "load " + hyps.at(name).string());
    char* row_text = nullptr;
    check(ds_evaluate_pair(ref.ptr, nullptr, 0, hyp.ptr, nullptr, 0, &row_text), "evaluate " + name);
    json row = json::parse(take(row_text));
    row["name"] = name;
    mcd += row.at("mcd").get<double>();
    ffe += row.at("ffe").get<double>();
    const bool has_f0 = !row.at("f0rmse").is_null();
    if (has_f0) {
      f0 += row.at("f0rmse").get<double>();
      ++f0_n;
    }
    csv += name + "," + format_number(row.at("mcd").get<double>()) + "," + format_number(row.at("ffe").get<double>()) + "," +
           (has_f0 ? format_number(row.at("f0rmse").get<double>()) : std::string()) + "," +
           std::to_string(row.at("frames_compared").get<long long>()) + "\n";
    rows.push_back(row);
  }
  const double n = static_cast<double>(rows.size());
  json summary = {{"pairs", rows.size()}, {"mcd", mcd / n}, {"ffe", ffe / n}, {"rows", rows}};
  summary["f0rmse"] = f0_n > 0 ? json(f0 / static_cast<double>(f0_n)) : json(nullptr);
  std::cout << csv;
  const json prov = {{"subcommand", "eval"}, {"ref", a.ref}, {"hyp", a.hyp}, {"config_hash", hash_text(a.ref + "\n" + a.hyp)}};
  if (!a.csv.empty()) {
    write_text(a.csv, csv);
    write_provenance(a.csv, prov);
  }
  if (!a.json_out.empty()) {
    write_text(a.json_out, summary.dump(2) + "\n");
    write_provenance(a.json_out, prov);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// dump-mask

struct MaskArgs {
  std::string score;
  std::string preset = "tiny";
  std::optional<double> delta;
  std::optional<double> frame_seconds;
  int frames = 0;
  std::string out;
};

int cmd_dump_mask(const MaskArgs& a) {
  char* model = nullptr;
  check(ds_preset_config(a.preset.c_str(), &model), "preset");
  const json m = json::parse(take(model));
  const double clock = a.frame_seconds.value_or(m.at("hop").get<double>() * m.at("downsample_factor").get<double>() /
                                                 m.at("sample_rate").get<double>());
  const double delta = a.delta.value_or(m.at("align_delta").get<double>());
  ScoreHandle score;
  check(ds_score_parse(read_text(a.score).c_str(), &score.ptr), "score");
  char* csv = nullptr;
  check(ds_dump_mask(score.ptr, delta, clock, a.frames, &csv), "dump-mask");
  const std::string text = take(csv);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
    write_provenance(a.out, {{"subcommand", "dump-mask"}, {"score", a.score}, {"delta", delta}, {"frame_seconds", clock},
                             {"config_hash", hash_text(json({{"delta", delta}, {"clock", clock}, {"frames", a.frames}}).dump())}});
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// experiments

struct ExperimentArgs {
  std::vector<std::string> presets{"tiny", "small_toy"};
  std::vector<int> melodies{8};
  std::vector<int> groups{1, 10, 20, 30, 40, 50};
  int total_melodies = 40;
  int variants = 8;
  int iters = 200;
  int batch = 8;
  int eval_samples = 8;
  int steps = 20;
  double w = 4.0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

json experiment_train(const ExperimentArgs& a) {
  return {{"iterations", a.iters}, {"batch_size", a.batch}, {"seed", *a.seed}};
}

void emit_table(const ExperimentArgs& a, const std::string& subcommand, const json& budget, const std::string& table_text,
                const std::vector<std::string>& columns) {
  const json table = json::parse(table_text);
  std::string text;
  for (std::size_t c = 0; c < columns.size(); ++c) text += (c ? "," : "") + columns[c];
  text += "\n";
  for (const auto& row : table) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const json& v = row.at(columns[c]);
      text += c ? "," : "";
      if (v.is_null()) continue;
      if (v.is_string()) text += v.get<std::string>();
      else if (v.is_number_float()) text += format_number(v.get<double>());
      else text += v.dump();
    }
    text += "\n";
  }
  std::cout << text;
  if (!a.out.empty()) {
    write_text(a.out, json({{"budget", budget}, {"rows", table}}).dump(2) + "\n");
    write_provenance(a.out, {{"subcommand", subcommand}, {"seed", *a.seed}, {"config_hash", hash_text(budget.dump())}});
  }
}

int cmd_scaling(const ExperimentArgs& a) {
  const json budget = {{"presets", a.presets},
                       {"melodies", a.melodies},
                       {"variants", a.variants},
                       {"train", experiment_train(a)},
                       {"sampler", {{"steps", a.steps}, {"w", a.w}, {"seed", *a.seed}}},
                       {"eval_samples", a.eval_samples}};
  char* table = nullptr;
  check(ds_experiment_scaling(budget.dump().c_str(), *a.seed, &table), "scaling");
  emit_table(a, "scaling", budget, take(table),
             {"preset", "gflops", "melodies", "train_samples", "data_seconds", "final_loss", "proxy_mcd"});
  return kExitOk;
}

int cmd_groups(const ExperimentArgs& a) {
  const json budget = {{"groups", a.groups},
                       {"total_melodies", a.total_melodies},
                       {"variants", a.variants},
                       {"train", experiment_train(a)},
                       {"sampler", {{"steps", a.steps}, {"w", a.w}, {"seed", *a.seed}}},
                       {"eval_samples", a.eval_samples}};
  char* table = nullptr;
  check(ds_experiment_groups(budget.dump().c_str(), *a.seed, &table), "groups");
  emit_table(a, "groups", budget, take(table),
             {"groups", "melodies_per_group", "train_samples", "final_loss", "mcd", "ffe", "f0rmse", "band_accuracy"});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// flops

int cmd_flops(const std::vector<std::string>& presets, double seconds) {
  std::cout << "preset,parameters,gflops\n";
  for (const auto& p : presets) {
    char* model = nullptr;
    check(ds_preset_config(p.c_str(), &model), "preset");
    const std::string m = take(model);
    char* flops = nullptr;
    check(ds_count_flops(m.c_str(), seconds, &flops), "flops");
    const json f = json::parse(take(flops));
    std::cout << p << "," << f.at("parameters").get<long long>() << "," << format_number(f.at("gflops").get<double>()) << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) g_command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"DiTSinger toolkit: synthetic data, training, sampling and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ds_version()));

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Generate a synthetic corpus (train, test, test_unseen splits)");
  c_gen->add_option("--groups", gen.groups, "Melody groups (one speaker each)")->check(CLI::PositiveNumber);
  c_gen->add_option("--melodies", gen.melodies, "Melodies per group")->check(CLI::PositiveNumber);
  c_gen->add_option("--variants", gen.variants, "Lyric variants per melody")->check(CLI::PositiveNumber);
  c_gen->add_option("--holdout", gen.holdout, "Fraction of variants held out per melody");
  c_gen->add_option("--unseen-melodies", gen.unseen, "Extra melodies rendered only into test_unseen");
  c_gen->add_option("--vocab", gen.vocab, "Phoneme vocabulary size");
  c_gen->add_option("--max-chars", gen.max_chars, "Maximum characters per melody");
  c_gen->add_option("--preset", gen.preset, "Take mel geometry and vocabulary from a model preset");
  c_gen->add_option("--seed", gen.seed, "Generator seed")->required();
  c_gen->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model; flags override the config file");
  c_train->add_option("--config", tr.config, "Run config (JSON, comments allowed)")->check(CLI::ExistingFile);
  c_train->add_option("--preset", tr.preset, "Model preset (tiny, small_toy, small, small_2, base_4, ...)");
  c_train->add_option("--corpus", tr.corpus, "Training corpus directory");
  c_train->add_option("--out", tr.out, "Output directory");
  c_train->add_option("--resume", tr.resume, "Training checkpoint to continue from")->check(CLI::ExistingFile);
  c_train->add_option("--iters", tr.iters, "Optimizer steps");
  c_train->add_option("--batch", tr.batch, "Micro-batch size");
  c_train->add_option("--accum", tr.accum, "Gradient accumulation steps");
  c_train->add_option("--lr", tr.lr, "Learning rate");
  c_train->add_option("--wd", tr.wd, "Decoupled weight decay");
  c_train->add_option("--dropout", tr.dropout, "Condition dropout probability");
  c_train->add_option("--delta", tr.delta, "Span extension offset in seconds");
  c_train->add_flag("--no-mask", tr.no_mask, "Unmasked cross-attention ablation");
  c_train->add_option("--checkpoint-every", tr.checkpoint_every, "Steps between checkpoints (0: final only)");
  c_train->add_option("--seed", tr.seed, "Training seed");
  c_train->add_option("--log-every", tr.log_every, "Steps between progress lines on stderr");

  SampleArgs sa;
  auto* c_sample = app.add_subcommand("sample", "Sample mel spectrograms from a checkpoint");
  c_sample->add_option("--checkpoint", sa.checkpoint, "model.bin or training checkpoint")->required()->check(CLI::ExistingFile);
  c_sample->add_option("--score", sa.score, "Score JSON file")->check(CLI::ExistingFile);
  c_sample->add_option("--corpus", sa.corpus, "Corpus directory (samples every score, or --index)");
  c_sample->add_option("--index", sa.index, "Single corpus sample index");
  c_sample->add_option("--out", sa.out, "Output .mel file (--score) or directory (--corpus)")->required();
  c_sample->add_option("--sampler", sa.sampler, "ode or ancestral")->check(CLI::IsMember({"ode", "ancestral"}));
  c_sample->add_option("--steps", sa.steps, "Sampler steps")->check(CLI::PositiveNumber);
  c_sample->add_option("--w", sa.w, "Guidance scale");
  c_sample->add_option("--seed", sa.seed, "Initial-noise seed");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Score hypothesis mels against references paired by file name");
  c_eval->add_option("--ref", ev.ref, "Reference directory")->required();
  c_eval->add_option("--hyp", ev.hyp, "Hypothesis directory")->required();
  c_eval->add_option("--csv", ev.csv, "Also write the CSV rows here");
  c_eval->add_option("--json", ev.json_out, "Write the JSON summary here");

  MaskArgs mk;
  auto* c_mask = app.add_subcommand("dump-mask", "Print the alignment bias for a score as CSV");
  c_mask->add_option("--score", mk.score, "Score JSON file")->required()->check(CLI::ExistingFile);
  c_mask->add_option("--preset", mk.preset, "Preset supplying the latent frame clock and default offset");
  c_mask->add_option("--delta", mk.delta, "Span extension offset in seconds");
  c_mask->add_option("--frame-seconds", mk.frame_seconds, "Latent frame clock override");
  c_mask->add_option("--frames", mk.frames, "Latent frame count (default: from score duration)");
  c_mask->add_option("--out", mk.out, "Output file (default stdout)");

  ExperimentArgs sc;
  auto* c_scaling = app.add_subcommand("scaling", "Train presets on corpora of several sizes and tabulate loss and proxy MCD");
  c_scaling->add_option("--presets", sc.presets, "Presets")->delimiter(',');
  c_scaling->add_option("--melodies", sc.melodies, "Melody counts (data sizes)")->delimiter(',');
  c_scaling->add_option("--variants", sc.variants, "Lyric variants per melody");
  c_scaling->add_option("--iters", sc.iters, "Steps per run");
  c_scaling->add_option("--batch", sc.batch, "Batch size");
  c_scaling->add_option("--eval-samples", sc.eval_samples, "Held-out samples scored per run");
  c_scaling->add_option("--steps", sc.steps, "Sampler steps for evaluation");
  c_scaling->add_option("--w", sc.w, "Guidance scale for evaluation");
  c_scaling->add_option("--seed", sc.seed, "Seed")->required();
  c_scaling->add_option("--out", sc.out, "Write the JSON table here");

  ExperimentArgs gr;
  auto* c_groups = app.add_subcommand("groups", "Group-count sweep under a fixed melody budget");
  c_groups->add_option("--groups", gr.groups, "Group counts")->delimiter(',');
  c_groups->add_option("--total-melodies", gr.total_melodies, "Melody budget shared by all groups");
  c_groups->add_option("--variants", gr.variants, "Lyric variants per melody");
  c_groups->add_option("--iters", gr.iters, "Steps per run");
  c_groups->add_option("--batch", gr.batch, "Batch size");
  c_groups->add_option("--eval-samples", gr.eval_samples, "Held-out samples scored per run");
  c_groups->add_option("--steps", gr.steps, "Sampler steps for evaluation");
  c_groups->add_option("--w", gr.w, "Guidance scale for evaluation");
  c_groups->add_option("--seed", gr.seed, "Seed")->required();
  c_groups->add_option("--out", gr.out, "Write the JSON table here");

  std::vector<std::string> flop_presets{"small", "small_2", "base", "base_2", "base_4", "large"};
  double flop_seconds = 5.0;
  auto* c_flops = app.add_subcommand("flops", "Analytic forward GFLOPs per preset");
  c_flops->add_option("--presets", flop_presets, "Presets")->delimiter(',');
  c_flops->add_option("--seconds", flop_seconds, "Clip length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_gen) return cmd_gen_data(gen);
    if (*c_train) return cmd_train(tr);
    if (*c_sample) return cmd_sample(sa);
    if (*c_eval) return cmd_eval(ev);
    if (*c_mask) return cmd_dump_mask(mk);
    if (*c_scaling) return cmd_scaling(sc);
    if (*c_groups) return cmd_groups(gr);
    if (*c_flops) return cmd_flops(flop_presets, flop_seconds);
  } catch (const Failure& f) {
    std::cerr << "ditsinger: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "ditsinger: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
