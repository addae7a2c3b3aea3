#include "hrt/cli/cli.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <stdexcept>

#include "hrt/bench/bench.hpp"
#include "hrt/common/parallel.hpp"
#include "hrt/corpus/bleu.hpp"
#include "hrt/corpus/distill.hpp"
#include "hrt/corpus/toy.hpp"
#include "hrt/decode/decoder.hpp"
#include "hrt/masking/masking.hpp"
#include "hrt/model/checkpoint.hpp"
#include "hrt/model/grad_suite.hpp"
#include "hrt/train/trainer.hpp"

namespace hrt::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using corpus::TokenSeq;
using Clock = std::chrono::system_clock;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Runs f, reporting invalid arguments as usage errors.
template <class F>
auto usage(F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot read config file " + path.string());
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw UsageError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string timestamp(Clock::time_point t) {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(Clock::to_time_t(t)));
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

struct Context {
  std::ostream& out;
  std::ostream& err;
  json inputs = json::object();
  json outputs = json::object();
  json results = json::object();
};

class Command {
 public:
  virtual ~Command() = default;

  void attach(CLI::App& parent, const std::string& name, const std::string& description) {
    app = parent.add_subcommand(name, description);
    add("config", config_path, "JSON config file or manifest of an earlier run")->check(CLI::ExistingFile);
    add("seed", seed, "random seed");
    add("threads", threads, "thread budget")->check(CLI::PositiveNumber);
    options();
  }

  virtual void execute(Context& ctx) = 0;
  // Where the manifest goes; empty for none.
  virtual fs::path manifest_path() const = 0;

  json config() const {
    json j;
    for (const auto& [key, get] : keys_) {
      if (key != "config") j[key] = get();
    }
    return j;
  }

  CLI::App* app = nullptr;
  std::string config_path;
  std::uint64_t seed = 1;
  int threads = 1;

 protected:
  virtual void options() = 0;

  template <typename V>
  CLI::Option* add(const std::string& key, V& var, const std::string& description) {
    keys_.emplace_back(key, [&var] { return json(var); });
    auto* opt = app->add_option("--" + key, var, description);
    if constexpr (std::is_same_v<V, bool>) opt->default_str(var ? "true" : "false");
    return opt;
  }

  void add_decode_options(decode::DecodeConfig& c) {
    add("k", c.k, "chunk size of the Skip-AT stage")->check(CLI::Range(1, corpus::kMaxChunk));
    add("bat", c.b_at, "Stage I beam width");
    add("bnat", c.b_nat, "Stage II candidates (b_nat <= b_at)");
    add("beam", c.beam, "AT beam width");
    add("iterations", c.iterations, "mask-predict iterations");
    add("length-beam", c.length_beam, "mask-predict length candidates");
    add("max-steps", c.max_steps, "decoding step cap, 0 = source length + 8");
    add("length-penalty", c.length_penalty, "length-normalisation exponent, 0 = off");
  }

 private:
  std::vector<std::pair<std::string, std::function<json()>>> keys_;
};

corpus::Vocab resolve_vocab(const std::string& path, const model::Checkpoint& ckpt) {
  if (!path.empty()) return corpus::Vocab::load(path);
  const auto& p = ckpt.meta.value("provenance", json::object());
  if (p.contains("vocab")) return corpus::Vocab(p["vocab"].get<std::vector<std::string>>());
  throw UsageError("--vocab is required: the checkpoint carries no vocabulary");
}

std::vector<decode::Translation> translate_corpus(decode::System system, const model::Transformer<float>& model,
                                                  std::span<const TokenSeq> sources,
                                                  const decode::DecodeConfig& config, std::size_t batch) {
  std::vector<decode::Translation> out(sources.size());
  const std::size_t batches = (sources.size() + batch - 1) / batch;
  parallel_for(batches, 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      const std::size_t lo = b * batch;
      const std::size_t n = std::min(batch, sources.size() - lo);
      auto part = decode::translate_batch(system, model, sources.subspan(lo, n), config);
      for (std::size_t i = 0; i < n; ++i) out[lo + i] = std::move(part[i]);
    }
  });
  return out;
}

std::vector<TokenSeq> outputs_of(const std::vector<decode::Translation>& tr) {
  std::vector<TokenSeq> out;
  out.reserve(tr.size());
  for (const auto& t : tr) out.push_back(t.output);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// ---------------------------------------------------------------------------

class GenData final : public Command {
 public:
  void execute(Context& ctx) override {
    spec.kind = usage([&] { return corpus::parse_toy_kind(task); });
    spec.seed = seed;
    usage([&] { spec.validate(); });
    const auto c = corpus::generate_corpus(spec);
    corpus::write_corpus(c, out_dir);
    for (const char* split : {"train", "valid", "test"}) {
      for (const char* side : {"src", "tgt"}) {
        const auto name = fmt::format("{}.{}", split, side);
        ctx.outputs[name] = (fs::path(out_dir) / name).string();
      }
    }
    ctx.outputs["vocab"] = (fs::path(out_dir) / "vocab.txt").string();
    ctx.results = {{"train", c.train.size()}, {"valid", c.valid.size()}, {"test", c.test.size()},
                   {"vocab_size", c.vocab.size()}};
    ctx.out << fmt::format("wrote {}/{}/{} pairs ({} tokens in vocabulary) to {}\n", c.train.size(), c.valid.size(),
                           c.test.size(), c.vocab.size(), out_dir);
  }
  fs::path manifest_path() const override { return fs::path(out_dir) / "manifest.json"; }

 protected:
  void options() override {
    add("task", task, "copy, reverse or cipher_blockswap");
    add("vocab-size", spec.vocab_size, "content tokens");
    add("min-length", spec.min_length, "shortest source");
    add("max-length", spec.max_length, "longest source");
    add("train-size", spec.train_size, "training pairs");
    add("valid-size", spec.valid_size, "validation pairs");
    add("test-size", spec.test_size, "test pairs");
    add("out-dir", out_dir, "output directory")->required();
  }

 private:
  std::string task = "cipher_blockswap";
  corpus::ToyTaskSpec spec;
  std::string out_dir;
};

class Train final : public Command {
 public:
  void execute(Context& ctx) override {
    tc.mode = usage([&] { return train::parse_train_mode(mode); });
    tc.layout = usage([&] { return tasks::parse_skip_cmlm_layout(layout); });
    tc.seed = seed;
    std::string init_used = init;
    if (ablation == "no-ft") {
      init_used.clear();
    } else if (ablation == "no-md") {
      tc.p_raw = 0.0;
    } else if (ablation == "no-cl") {
      tc.curriculum = false;
    } else if (ablation != "none") {
      throw UsageError("unknown ablation '" + ablation + "' (expected none, no-ft, no-md or no-cl)");
    }
    if (eval_split != "valid" && eval_split != "test" && eval_split != "none") {
      throw UsageError("--eval-split must be valid, test or none");
    }
    const fs::path dir(data_dir);
    const auto vocab = corpus::Vocab::load(dir / "vocab.txt");
    mc.vocab_size = vocab.size();
    usage([&] {
      tc.validate();
      auto m = mc;
      m.length_head = tc.mode == train::TrainMode::CMLM_ONLY;
      m.chunk_size = tc.k;
      m.validate();
    });

    const auto pairs = corpus::read_parallel(dir / "train.src", dir / "train.tgt", vocab);
    ctx.inputs["train_src"] = (dir / "train.src").string();
    ctx.inputs["train_tgt"] = (dir / "train.tgt").string();
    std::vector<train::TrainPair> data;
    data.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) data.push_back({pairs.src[i], pairs.tgt[i], std::nullopt});
    if (!distilled.empty()) {
      const auto targets = corpus::read_distilled(distilled, vocab);
      if (targets.size() != data.size()) {
        throw UsageError(fmt::format("{} has {} lines, training data has {}", distilled, targets.size(), data.size()));
      }
      for (std::size_t i = 0; i < data.size(); ++i) data[i].distilled = targets[i];
      ctx.inputs["distilled"] = distilled;
    }
    usage([&] { train::check_pairs(data, tc.p_raw); });

    std::optional<model::Checkpoint> init_ckpt;
    if (!init_used.empty()) {
      init_ckpt = model::load_checkpoint(init_used);
      ctx.inputs["init"] = init_used;
    }
    ensure_parent(out);
    const auto start = std::chrono::steady_clock::now();
    bool copied = false;
    if (tc.total_steps == 0 && init_ckpt && init_ckpt->config.same_shapes(mc) &&
        init_ckpt->config.length_head == (tc.mode == train::TrainMode::CMLM_ONLY)) {
      // No update happens, so the initial checkpoint is the result.
      fs::copy_file(init_used, out, fs::copy_options::overwrite_existing);
      copied = true;
    } else {
      train::RunOptions opts;
      opts.init = init_ckpt ? &*init_ckpt : nullptr;
      opts.init_path = init_used;
      opts.log = &ctx.err;
      if (tc.checkpoint_every > 0) opts.checkpoint_dir = out + ".steps";
      const auto& tokens = vocab.tokens();
      opts.provenance = {{"data_dir", data_dir},
                         {"distilled", distilled},
                         {"vocab", std::vector<std::string>(tokens.begin() + corpus::kReserved, tokens.end())}};
      auto run = usage([&] { return train::run_training(tc, mc, data, opts); });
      model::save_checkpoint(out, run.checkpoint);
      if (!run.reports.empty()) ctx.results["final"] = run.reports.back().to_json();
    }
    ctx.outputs["checkpoint"] = out;
    ctx.results["train"] = tc.to_json();
    ctx.results["init"] = init_used.empty() ? "random" : init_used;
    ctx.results["ablation"] = ablation;
    ctx.results["unchanged_copy"] = copied;
    ctx.results["train_seconds"] = seconds_since(start);
    ctx.err << fmt::format("saved {} after {:.1f}s\n", out, seconds_since(start));

    if (eval_split == "none") return;
    const auto eval_start = std::chrono::steady_clock::now();
    const auto split = corpus::read_parallel(dir / (eval_split + ".src"), dir / (eval_split + ".tgt"), vocab);
    const auto model = model::model_from_checkpoint<float>(model::load_checkpoint(out));
    decode::DecodeConfig dc;
    dc.k = tc.k;
    const auto system = tc.mode == train::TrainMode::AT_ONLY     ? decode::System::AT
                        : tc.mode == train::TrainMode::CMLM_ONLY ? decode::System::CMLM
                                                                 : decode::System::HRT;
    const auto tr = translate_corpus(system, model, split.src, dc, 64);
    const double bleu = corpus::corpus_bleu_ids(outputs_of(tr), split.tgt);
    ctx.results["eval"] = {{"split", eval_split},
                           {"system", decode::to_string(system)},
                           {"sentences", split.size()},
                           {"bleu", bleu},
                           {"seconds", seconds_since(eval_start)}};
    ctx.out << fmt::format("{} BLEU {:.2f} on {}\n", decode::to_string(system), bleu, eval_split);
  }
  fs::path manifest_path() const override { return out + ".manifest.json"; }

 protected:
  void options() override {
    add("data-dir", data_dir, "corpus directory written by gen-data")->required()->check(CLI::ExistingDirectory);
    add("distilled", distilled, "distilled training targets, line-aligned with train.src");
    add("mode", mode, "at, cmlm or hrt");
    add("steps", tc.total_steps, "optimizer updates");
    add("lambda", tc.lambda, "curriculum exponent");
    add("p-raw", tc.p_raw, "probability of the raw target per sample");
    add("batch-size", tc.batch_size, "sentence pairs per update");
    add("lr", tc.peak_lr, "peak learning rate");
    add("warmup", tc.warmup_steps, "warmup steps");
    add("label-smoothing", tc.label_smoothing, "label smoothing");
    add("k", tc.k, "chunk size")->check(CLI::Range(1, corpus::kMaxChunk));
    add("curriculum", tc.curriculum, "schedule the skip-task share (false: always 1)");
    add("layout", layout, "Skip-CMLM layout: inference or reference");
    add("init", init, "checkpoint to fine-tune from")->check(CLI::ExistingFile);
    add("ablation", ablation, "none, no-ft (random init), no-md (p-raw 0) or no-cl (no curriculum)");
    add("model-dim", mc.model_dim, "model width");
    add("ffn-dim", mc.ffn_dim, "feed-forward width");
    add("heads", mc.heads, "attention heads");
    add("encoder-layers", mc.encoder_layers, "encoder layers");
    add("decoder-layers", mc.decoder_layers, "decoder layers");
    add("max-position", mc.max_position, "largest position index");
    add("log-every", tc.log_every, "steps between log lines");
    add("checkpoint-every", tc.checkpoint_every, "steps between intermediate checkpoints, 0 = none");
    add("eval-split", eval_split, "split scored after training: valid, test or none");
    add("out", out, "output checkpoint")->required();
  }

 private:
  std::string data_dir, distilled, mode = "hrt", layout = "inference", init, ablation = "none",
                                   eval_split = "valid", out;
  train::TrainConfig tc;
  model::ModelConfig mc;
};

class Distill final : public Command {
 public:
  void execute(Context& ctx) override {
    if (beam < 1 || batch_size < 1) throw UsageError("--beam and --batch-size must be >= 1");
    const auto ckpt = model::load_checkpoint(model_path);
    const auto vocab = resolve_vocab(vocab_path, ckpt);
    const auto model = model::model_from_checkpoint<float>(ckpt);
    const auto sources = corpus::read_token_file(src, vocab);
    const auto start = std::chrono::steady_clock::now();
    const auto result = corpus::distill(model, std::span<const TokenSeq>(sources), beam, batch_size);
    ensure_parent(out);
    corpus::write_distilled(out, vocab, result);
    ctx.inputs = {{"model", model_path}, {"src", src}};
    ctx.outputs = {{"distilled", out}};
    ctx.results = {{"lines", sources.size()}, {"empty_lines", result.empty_lines}, {"seconds", seconds_since(start)}};
    for (auto line : result.empty_lines) ctx.err << fmt::format("warning: line {} translated to nothing\n", line + 1);
    ctx.out << fmt::format("distilled {} lines ({} empty) to {}\n", sources.size(), result.empty_lines.size(), out);
  }
  fs::path manifest_path() const override { return out + ".manifest.json"; }

 protected:
  void options() override {
    add("model", model_path, "AT checkpoint")->required()->check(CLI::ExistingFile);
    add("src", src, "source sentences")->required()->check(CLI::ExistingFile);
    add("vocab", vocab_path, "vocabulary file (default: stored in the checkpoint)");
    add("beam", beam, "beam width");
    add("batch-size", batch_size, "sentences per decoding batch");
    add("out", out, "distilled target file")->required();
  }

 private:
  std::string model_path, src, vocab_path, out;
  std::size_t beam = 5;
  std::size_t batch_size = 64;
};

class Translate final : public Command {
 public:
  void execute(Context& ctx) override {
    const auto sys = usage([&] { return decode::parse_system(system); });
    usage([&] { dc.validate(); });
    if (batch_size < 1) throw UsageError("--batch-size must be >= 1");
    const auto ckpt = model::load_checkpoint(model_path);
    const auto vocab = resolve_vocab(vocab_path, ckpt);
    const auto model = model::model_from_checkpoint<float>(ckpt);
    const auto sources = corpus::read_token_file(src, vocab);
    const auto start = std::chrono::steady_clock::now();
    const auto tr = translate_corpus(sys, model, sources, dc, batch_size);
    const double secs = seconds_since(start);
    std::vector<std::string> lines;
    double calls = 0.0;
    for (const auto& t : tr) {
      lines.push_back(vocab.decode(t.output));
      calls += static_cast<double>(t.calls.decoder_calls);
    }
    ensure_parent(out);
    corpus::write_lines(out, lines);
    ctx.inputs = {{"model", model_path}, {"src", src}};
    ctx.outputs = {{"translations", out}};
    ctx.results = {{"system", decode::to_string(sys)},
                   {"sentences", tr.size()},
                   {"seconds", secs},
                   {"mean_decoder_calls", tr.empty() ? 0.0 : calls / static_cast<double>(tr.size())}};
    ctx.err << fmt::format("translated {} sentences in {:.3f}s\n", tr.size(), secs);
    if (!ref.empty()) {
      ctx.inputs["ref"] = ref;
      const double bleu = corpus::bleu_files(out, ref);
      ctx.results["bleu"] = bleu;
      ctx.out << fmt::format("BLEU {:.2f}\n", bleu);
    }
  }
  fs::path manifest_path() const override { return out + ".manifest.json"; }

 protected:
  void options() override {
    add("model", model_path, "checkpoint")->required()->check(CLI::ExistingFile);
    add("src", src, "source sentences")->required()->check(CLI::ExistingFile);
    add("vocab", vocab_path, "vocabulary file (default: stored in the checkpoint)");
    add("system", system, "at, hrt or cmlm");
    add_decode_options(dc);
    add("batch-size", batch_size, "sentences per decoding batch");
    add("ref", ref, "reference file; prints corpus BLEU")->check(CLI::ExistingFile);
    add("out", out, "translation output")->required();
  }

 private:
  std::string model_path, src, vocab_path, system = "hrt", ref, out;
  decode::DecodeConfig dc;
  std::size_t batch_size = 32;
};

class Bench final : public Command {
 public:
  void execute(Context& ctx) override {
    usage([&] { dc.validate(); });
    for (int t : profiles) {
      if (t > threads) throw UsageError(fmt::format("thread profile {} exceeds --threads {}", t, threads));
    }
    auto load = [&](const std::string& path, const char* name) -> std::unique_ptr<model::Transformer<float>> {
      if (path.empty()) return nullptr;
      ctx.inputs[name] = path;
      return std::make_unique<model::Transformer<float>>(
          model::model_from_checkpoint<float>(model::load_checkpoint(path)));
    };
    const auto at = load(at_path, "at");
    const auto hrt = load(hrt_path, "hrt");
    const auto cmlm = load(cmlm_path, "cmlm");
    const auto vocab = resolve_vocab(vocab_path, model::load_checkpoint(at_path));
    auto sources = corpus::read_token_file(src, vocab);
    if (limit > 0 && sources.size() > limit) sources.resize(limit);
    ctx.inputs["src"] = src;

    bench::BenchConfig cfg;
    cfg.batch_sizes = batch_sizes;
    cfg.thread_profiles = profiles;
    cfg.runs = runs;
    cfg.unstable_threshold = unstable;
    decode::DecodeConfig at_cfg = dc, hrt_cfg = dc, cmlm_cfg = dc;
    cfg.systems.push_back({"AT", decode::System::AT, at_cfg});
    if (cmlm) cfg.systems.push_back({fmt::format("CMLM{}", dc.iterations), decode::System::CMLM, cmlm_cfg});
    if (hrt) cfg.systems.push_back({"HRT", decode::System::HRT, hrt_cfg});
    usage([&] { cfg.validate(); });

    auto report = bench::run_bench(cfg, {at.get(), hrt.get(), cmlm.get()}, sources);
    const auto& probe = cmlm ? *cmlm : *at;
    for (int t : profiles) {
      auto cells = bench::measure_parallel_efficiency(probe, batch_sizes, lengths, t, runs);
      report.efficiency.insert(report.efficiency.end(), cells.begin(), cells.end());
    }
    fs::create_directories(out_dir);
    const auto json_path = fs::path(out_dir) / "report.json";
    const auto table_path = fs::path(out_dir) / "table.txt";
    write_json(json_path, report.to_json());
    const auto table = report.table();
    std::ofstream(table_path) << table;
    ctx.outputs = {{"report", json_path.string()}, {"table", table_path.string()}};
    json calls = json::object();
    for (const auto& c : report.cells) {
      calls[fmt::format("{} B={} threads={}", c.system, c.batch, c.threads)] = c.calls.exact();
    }
    ctx.results = {{"sentences", sources.size()}, {"counters_exact", calls}};
    ctx.out << table;
  }
  fs::path manifest_path() const override { return fs::path(out_dir) / "manifest.json"; }

 protected:
  void options() override {
    add("at", at_path, "AT checkpoint (reference system)")->required()->check(CLI::ExistingFile);
    add("hrt", hrt_path, "HRT checkpoint")->check(CLI::ExistingFile);
    add("cmlm", cmlm_path, "CMLM checkpoint")->check(CLI::ExistingFile);
    add("src", src, "benchmark source sentences")->required()->check(CLI::ExistingFile);
    add("vocab", vocab_path, "vocabulary file (default: stored in the AT checkpoint)");
    add("limit", limit, "use only the first N sentences, 0 = all");
    add("batch-sizes", batch_sizes, "decoding batch sizes");
    add("thread-profiles", profiles, "thread counts timed separately");
    add("runs", runs, "timed runs per cell after one warmup");
    add("unstable-threshold", unstable, "stddev / mean above which a cell is flagged");
    add_decode_options(dc);
    add("efficiency-lengths", lengths, "target lengths for the parallel-efficiency table");
    add("out-dir", out_dir, "report directory")->required();
  }

 private:
  std::string at_path, hrt_path, cmlm_path, src, vocab_path, out_dir;
  std::size_t limit = 0;
  std::vector<std::size_t> batch_sizes{1, 8, 16, 32};
  std::vector<int> profiles{1};
  std::size_t runs = 5;
  double unstable = 0.2;
  decode::DecodeConfig dc;
  std::vector<std::size_t> lengths{1, 8, 16, 32};
};

class MaskExp final : public Command {
 public:
  void execute(Context& ctx) override {
    if (at_path.empty() && hyps_path.empty()) throw UsageError("one of --at or --hyps is required");
    const auto cmlm_ckpt = model::load_checkpoint(cmlm_path);
    const auto vocab = resolve_vocab(vocab_path, cmlm_ckpt);
    const auto cmlm = model::model_from_checkpoint<float>(cmlm_ckpt);
    auto sources = corpus::read_token_file(src, vocab);
    auto refs = corpus::read_token_file(ref, vocab);
    if (sources.size() != refs.size()) {
      throw UsageError(fmt::format("{} has {} lines, {} has {}", src, sources.size(), ref, refs.size()));
    }
    if (limit > 0 && sources.size() > limit) {
      sources.resize(limit);
      refs.resize(limit);
    }
    ctx.inputs = {{"cmlm", cmlm_path}, {"src", src}, {"ref", ref}};
    fs::create_directories(out_dir);
    std::vector<TokenSeq> hyps;
    if (!hyps_path.empty()) {
      hyps = corpus::read_token_file(hyps_path, vocab);
      if (limit > 0 && hyps.size() > limit) hyps.resize(limit);
      ctx.inputs["hyps"] = hyps_path;
    } else {
      const auto at = model::model_from_checkpoint<float>(model::load_checkpoint(at_path));
      hyps = corpus::distill(at, std::span<const TokenSeq>(sources), beam).targets;
      std::vector<std::string> lines;
      for (const auto& h : hyps) lines.push_back(vocab.decode(h));
      const auto path = fs::path(out_dir) / "at_hyps.txt";
      corpus::write_lines(path, lines);
      ctx.inputs["at"] = at_path;
      ctx.outputs["at_hyps"] = path.string();
    }
    masking::Grid grid;
    grid.rates = rates;
    grid.chunk_sizes = chunk_sizes;
    grid.random_seeds = random_seeds;
    if (grid.random_seeds.empty()) grid.random_seeds = {seed, seed + 1, seed + 2};
    const auto points = usage([&] {
      return masking::fill_and_score(cmlm, std::span<const TokenSeq>(sources), std::span<const TokenSeq>(hyps),
                                     std::span<const TokenSeq>(refs), grid);
    });
    const auto csv = fs::path(out_dir) / "curve.csv";
    const auto tsv = fs::path(out_dir) / "curve.tsv";
    masking::write_curve_csv(csv, points);
    masking::write_curve_tsv(tsv, points);
    ctx.outputs["csv"] = csv.string();
    ctx.outputs["tsv"] = tsv.string();
    const double at_bleu = corpus::corpus_bleu_ids(hyps, refs);
    ctx.results["at_bleu"] = at_bleu;
    ctx.results["random_seeds"] = grid.random_seeds;
    ctx.out << fmt::format("unmasked AT BLEU {:.2f}\n", at_bleu);
    json by_rate = json::object();
    for (double r : grid.rates) {
      json row;
      for (auto s : {masking::MaskStrategy::HEAD, masking::MaskStrategy::TAIL, masking::MaskStrategy::RANDOM}) {
        row[masking::to_string(s)] = masking::mean_bleu(points, s, r);
      }
      by_rate[fmt::format("{:.2f}", r)] = row;
      ctx.out << fmt::format("rate {:.2f}  HEAD {:6.2f}  TAIL {:6.2f}  RANDOM {:6.2f}\n", r, row["HEAD"].get<double>(),
                             row["TAIL"].get<double>(), row["RANDOM"].get<double>());
    }
    json chunk = json::object();
    for (const auto& p : points) {
      if (p.strategy != masking::MaskStrategy::CHUNK) continue;
      chunk[fmt::format("k={}", p.k)] = {{"rate", p.rate}, {"effective_rate", p.effective_rate}, {"bleu", p.bleu}};
      ctx.out << fmt::format("CHUNK k={} (rate {:.2f}, effective {:.3f})  {:6.2f}\n", p.k, p.rate, p.effective_rate,
                             p.bleu);
    }
    ctx.results["by_rate"] = by_rate;
    ctx.results["chunk"] = chunk;
  }
  fs::path manifest_path() const override { return fs::path(out_dir) / "manifest.json"; }

 protected:
  void options() override {
    add("cmlm", cmlm_path, "CMLM checkpoint used for the one-pass fill")->required()->check(CLI::ExistingFile);
    add("at", at_path, "AT checkpoint producing the hypotheses")->check(CLI::ExistingFile);
    add("hyps", hyps_path, "precomputed AT hypotheses instead of --at")->check(CLI::ExistingFile);
    add("src", src, "source sentences")->required()->check(CLI::ExistingFile);
    add("ref", ref, "references")->required()->check(CLI::ExistingFile);
    add("vocab", vocab_path, "vocabulary file (default: stored in the CMLM checkpoint)");
    add("beam", beam, "AT beam width");
    add("limit", limit, "use only the first N sentences, 0 = all");
    add("rates", rates, "masking rates for HEAD, TAIL and RANDOM");
    add("chunk-sizes", chunk_sizes, "CHUNK sizes");
    add("random-seeds", random_seeds, "RANDOM seeds (default: seed, seed+1, seed+2)");
    add("out-dir", out_dir, "output directory")->required();
  }

 private:
  std::string cmlm_path, at_path, hyps_path, src, ref, vocab_path, out_dir;
  std::size_t beam = 5;
  std::size_t limit = 0;
  std::vector<double> rates = masking::Grid{}.rates;
  std::vector<int> chunk_sizes = masking::Grid{}.chunk_sizes;
  std::vector<std::uint64_t> random_seeds;
};

class Bleu final : public Command {
 public:
  void execute(Context& ctx) override {
    const double score = usage([&] { return corpus::bleu_files(hyp, ref, smooth); });
    ctx.inputs = {{"hyp", hyp}, {"ref", ref}};
    ctx.results = {{"bleu", score}};
    ctx.out << fmt::format("{:.2f}\n", score);
    if (!out.empty()) {
      ensure_parent(out);
      write_json(out, ctx.results);
      ctx.outputs = {{"score", out}};
    }
  }
  fs::path manifest_path() const override { return out.empty() ? fs::path() : fs::path(out + ".manifest.json"); }

 protected:
  void options() override {
    add("hyp", hyp, "hypothesis file")->required()->check(CLI::ExistingFile);
    add("ref", ref, "reference file")->required()->check(CLI::ExistingFile);
    add("smooth", smooth, "add-one smoothing on orders >= 2");
    add("out", out, "JSON score file");
  }

 private:
  std::string hyp, ref, out;
  bool smooth = false;
};

class GradCheck final : public Command {
 public:
  void execute(Context& ctx) override {
    auto results = model::op_gradient_checks(seed, eps);
    if (with_model) {
      auto m = model::model_gradient_checks(seed + 1, eps);
      results.insert(results.end(), m.begin(), m.end());
    }
    double worst = 0.0;
    json rows = json::array();
    for (const auto& r : results) {
      worst = std::max(worst, r.error);
      rows.push_back({{"name", r.name}, {"error", r.error}});
      ctx.out << fmt::format("{:<40} {:.3e}\n", r.name, r.error);
    }
    ctx.out << fmt::format("max relative error {:.3e} (tolerance {:.1e})\n", worst, tolerance);
    ctx.results = {{"checks", rows}, {"max_error", worst}, {"passed", worst < tolerance}};
    if (!out.empty()) {
      ensure_parent(out);
      write_json(out, ctx.results);
      ctx.outputs = {{"report", out}};
    }
    if (!(worst < tolerance)) throw std::runtime_error("gradient check above tolerance");
  }
  fs::path manifest_path() const override { return out.empty() ? fs::path() : fs::path(out + ".manifest.json"); }

 protected:
  void options() override {
    add("eps", eps, "central-difference step");
    add("tolerance", tolerance, "largest accepted relative error");
    add("model", with_model, "also check every parameter of a 2-layer model");
    add("out", out, "JSON report");
  }

 private:
  double eps = 1e-5;
  double tolerance = 1e-4;
  bool with_model = true;
  std::string out;
};

class Inspect final : public Command {
 public:
  void execute(Context& ctx) override {
    const auto ckpt = model::load_checkpoint(model_path);
    json j;
    j["config"] = ckpt.config.to_json();
    j["step"] = ckpt.step;
    std::size_t total = 0;
    json params = json::array();
    for (const auto& p : ckpt.parameters) {
      params.push_back({{"name", p.name}, {"shape", p.shape}, {"count", p.values.size()}});
      total += p.values.size();
    }
    j["parameter_count"] = total;
    j["parameters"] = params;
    j["meta"] = ckpt.meta;
    ctx.inputs = {{"model", model_path}};
    ctx.results = {{"step", ckpt.step}, {"parameter_count", total}};
    ctx.out << j.dump(2) << '\n';
    if (!out.empty()) {
      ensure_parent(out);
      write_json(out, j);
      ctx.outputs = {{"summary", out}};
    }
  }
  fs::path manifest_path() const override { return out.empty() ? fs::path() : fs::path(out + ".manifest.json"); }

 protected:
  void options() override {
    add("model", model_path, "checkpoint")->required()->check(CLI::ExistingFile);
    add("out", out, "JSON summary");
  }

 private:
  std::string model_path, out;
};

struct Registry {
  std::vector<std::pair<std::string, std::unique_ptr<Command>>> commands;

  Command* find(const std::string& name) const {
    for (const auto& [n, c] : commands) {
      if (n == name) return c.get();
    }
    return nullptr;
  }
};

bool flag_given(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

std::optional<std::string> flag_value(const std::vector<std::string>& args, const std::string& flag) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == flag && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind(flag + "=", 0) == 0) return args[i].substr(flag.size() + 1);
  }
  return std::nullopt;
}

std::string token_of(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

// Appends config-file values for every option not given on the command line.
void layer_config(std::vector<std::string>& args, const std::string& subcommand, CLI::App& sub) {
  const auto path = flag_value(args, "--config");
  if (!path) return;
  if (!fs::exists(*path)) throw UsageError("config file not found: " + *path);
  json j = read_json(*path);
  if (!j.is_object()) throw UsageError(*path + ": expected a JSON object");
  if (j.contains("subcommand") && j.contains("config")) {
    if (j["subcommand"] != subcommand) {
      throw UsageError(fmt::format("{} is a manifest of '{}', not '{}'", *path, token_of(j["subcommand"]), subcommand));
    }
    j = j["config"];
  }
  for (const auto& [raw_key, value] : j.items()) {
    std::string key = raw_key;
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "config") continue;
    const std::string flag = "--" + key;
    if (sub.get_option_no_throw(flag) == nullptr) {
      throw UsageError(fmt::format("{}: unknown key '{}' for {}", *path, raw_key, subcommand));
    }
    // Empty strings mean "unset" (e.g. no --init in a manifest).
    if (flag_given(args, flag) || value.is_null() || (value.is_string() && value.get<std::string>().empty())) continue;
    if (value.is_array()) {
      if (value.empty()) continue;
      args.push_back(flag);
      for (const auto& v : value) args.push_back(token_of(v));
    } else {
      args.push_back(flag);
      args.push_back(token_of(value));
    }
  }
}

class ThreadScope {
 public:
  explicit ThreadScope(int n) : previous_(num_threads()) { set_num_threads(n); }
  ~ThreadScope() { set_num_threads(previous_); }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  int previous_;
};

}  // namespace

int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hybrid-regressive translation toolkit", "hrt"};
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Registry reg;
  auto attach = [&](const std::string& name, const std::string& description, std::unique_ptr<Command> cmd) {
    cmd->attach(app, name, description);
    reg.commands.emplace_back(name, std::move(cmd));
  };
  attach("gen-data", "generate a synthetic parallel corpus", std::make_unique<GenData>());
  attach("train", "train an AT, CMLM or HRT model", std::make_unique<Train>());
  attach("distill", "translate training sources with an AT model", std::make_unique<Distill>());
  attach("translate", "decode a source file", std::make_unique<Translate>());
  attach("bench", "time decoders across batch sizes and thread profiles", std::make_unique<Bench>());
  attach("maskexp", "mask AT outputs, fill them in one pass and score BLEU curves", std::make_unique<MaskExp>());
  attach("bleu", "corpus BLEU-4 of a hypothesis file", std::make_unique<Bleu>());
  attach("grad-check", "compare analytic and numeric gradients in 64-bit", std::make_unique<GradCheck>());
  attach("inspect-checkpoint", "print a checkpoint's config, parameters and provenance", std::make_unique<Inspect>());

  Command* cmd = args.empty() ? nullptr : reg.find(args.front());
  try {
    if (cmd) layer_config(args, args.front(), *cmd->app);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << (cmd ? cmd->app->help() : app.help());
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  cmd = reg.find(name);
  const auto started = Clock::now();
  Context ctx{out, err};
  try {
    ThreadScope scope(cmd->threads);
    cmd->execute(ctx);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  const auto finished = Clock::now();
  const auto manifest = cmd->manifest_path();
  if (!manifest.empty()) {
    json m;
    m["subcommand"] = name;
    m["version"] = kVersion;
    m["config"] = cmd->config();
    m["seed"] = cmd->seed;
    m["threads"] = cmd->threads;
    m["inputs"] = ctx.inputs;
    m["outputs"] = ctx.outputs;
    m["results"] = ctx.results;
    m["started"] = timestamp(started);
    m["finished"] = timestamp(finished);
    m["seconds"] = std::chrono::duration<double>(finished - started).count();
    try {
      ensure_parent(manifest);
      write_json(manifest, m);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << '\n';
      return kExitFailure;
    }
  }
  return kExitOk;
}

}  // namespace hrt::cli
