// Acceptance run: one PASS/FAIL line per criterion at pinned tolerances.
//
//   acceptance --work DIR [--threads N] [--only 1,5,8] [--known-failures 9] [--reuse]
//
// Criteria 8-12 drive the command-line tool in-process and keep every
// artifact (corpus, checkpoints, manifests, logs) under DIR.

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <json.hpp>
#include <limits>
#include <set>
#include <thread>

#include "hrt/cli/cli.hpp"
#include "hrt/decode/decoder.hpp"
#include "hrt/masking/masking.hpp"
#include "hrt/model/grad_suite.hpp"
#include "hrt/tasks/tasks.hpp"
#include "hrt/tensor/ops.hpp"

using namespace hrt;
namespace fs = std::filesystem;
using json = nlohmann::json;
using corpus::kBos;
using corpus::kEos;
using corpus::kMask;
using corpus::TokenSeq;
using decode::DecodeConfig;
using decode::Hypothesis;
using model::Transformer;
using SteadyClock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path work;
  int threads = 1;
  bool reuse = false;
};

Options g_opt;

double since(SteadyClock::time_point t) { return std::chrono::duration<double>(SteadyClock::now() - t).count(); }

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(is), {}};
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

// Runs one CLI command, appending its output to `log`. With --reuse a step
// whose manifest already exists is skipped.
void cli(const fs::path& log, std::vector<std::string> args, const fs::path& manifest = {}) {
  if (g_opt.reuse && !manifest.empty() && fs::exists(manifest)) return;
  args.push_back("--threads");
  args.push_back(std::to_string(g_opt.threads));
  std::string line = "hrt";
  for (const auto& a : args) line += " " + a;
  progress(line);
  std::ofstream os(log, std::ios::app);
  os << "$ " << line << '\n';
  const int code = cli::dispatch(args, os, os);
  if (code != 0) throw std::runtime_error(fmt::format("'{}' exited with {} (log: {})", line, code, log.string()));
}

// ---------------------------------------------------------------------------
// Criterion 1

Outcome gradients() {
  const auto start = SteadyClock::now();
  auto results = model::op_gradient_checks();
  const auto m = model::model_gradient_checks();
  results.insert(results.end(), m.begin(), m.end());
  const double secs = since(start);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& r : results) {
    if (!(r.error <= worst)) {
      worst = r.error;
      worst_name = r.name;
    }
  }
  return {worst < 1e-4 && secs < 120.0, fmt::format("{} checks, max relative error {:.2e} ({}) < 1e-4, {:.1f}s < 120s",
                                                    results.size(), worst, worst_name, secs)};
}

// ---------------------------------------------------------------------------
// Criteria 2-4

Outcome golden_constructions() {
  using namespace tasks;
  constexpr std::int32_t y1 = 11, y2 = 12, y3 = 13, y4 = 14, y5 = 15, I = kIgnore;
  const TokenSeq src{20, 21, 22};
  const TokenSeq y{y1, y2, y3, y4};
  int ok = 0, total = 0;
  auto expect = [&](const TrainingSample& s, const TokenSeq& in, const std::vector<std::int32_t>& pos,
                    const std::vector<std::int32_t>& tgt) {
    ++total;
    if (s.dec_input == in && s.positions == pos && s.targets == tgt) ++ok;
  };
  expect(build_task_at(src, y), {kBos, y1, y2, y3, y4}, {0, 1, 2, 3, 4}, {y1, y2, y3, y4, kEos});
  Rng rng(1);
  const std::vector<std::size_t> masks{2, 3};
  expect(build_task_cmlm(src, y, rng, masks), {y1, kMask, kMask, y4, kEos}, {1, 2, 3, 4, 5}, {I, y2, y3, I, I});
  expect(build_task_skip_at(src, y, 2), {corpus::bos_k(2), y2, y4}, {0, 2, 4}, {y2, y4, kEos});
  expect(build_task_skip_cmlm(src, y, 2), {kMask, y2, kMask, y4, kEos}, {1, 2, 3, 4, 5}, {y1, I, y3, I, I});
  const TokenSeq y_odd{y1, y2, y3, y4, y5};
  expect(build_task_skip_at(src, y_odd, 2), {corpus::bos_k(2), y2, y4}, {0, 2, 4}, {y2, y4, kEos});
  expect(build_task_skip_cmlm(src, y_odd, 2), {kMask, y2, kMask, y4, kMask, kEos}, {1, 2, 3, 4, 5, 6},
         {y1, I, y3, I, y5, I});
  return {ok == total, fmt::format("{}/{} samples equal token-for-token and position-for-position", ok, total)};
}

Outcome supervision_partition() {
  using namespace tasks;
  const TokenSeq src{20, 21};
  std::size_t cases = 0, failures = 0;
  for (int k = 1; k <= 4; ++k) {
    for (std::size_t n = 1; n <= 32; ++n) {
      TokenSeq y(n);
      for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<std::int32_t>(corpus::kReserved + (i * 7) % 50);
      const auto at = build_task_skip_at(src, y, k);
      const auto cm = build_task_skip_cmlm(src, y, k);
      // Supervised slots as (1-based position, token); EOS is slot N+1.
      std::multiset<std::pair<std::size_t, std::int32_t>> got, want;
      for (std::size_t i = 0; i < at.targets.size(); ++i) {
        const std::size_t pos = i + 1 < at.targets.size() ? (i + 1) * static_cast<std::size_t>(k) : n + 1;
        got.insert({pos, at.targets[i]});
      }
      for (std::size_t i = 0; i < cm.targets.size(); ++i) {
        if (cm.targets[i] != kIgnore) got.insert({static_cast<std::size_t>(cm.positions[i]), cm.targets[i]});
      }
      for (std::size_t p = 1; p <= n; ++p) want.insert({p, y[p - 1]});
      want.insert({n + 1, kEos});
      ++cases;
      if (got != want) ++failures;
    }
  }
  return {failures == 0, fmt::format("{} (k, N) cases, {} without an exact partition", cases, failures)};
}

Outcome curriculum_schedule() {
  using tasks::CurriculumState;
  const std::uint64_t T = 10000;
  const bool ends = CurriculumState{0, T, 1.0}.p_k() == 0.0 && CurriculumState{T, T, 1.0}.p_k() == 1.0;
  const bool half = CurriculumState{T / 2, T, 1.0}.p_k() == 0.5 && CurriculumState{T / 2, T, 2.0}.p_k() == 0.25;
  bool monotone = true;
  for (double lambda : {0.5, 1.0, 2.0}) {
    double prev = -1.0;
    for (std::uint64_t i = 0; i < 1000; ++i) {
      const double p = CurriculumState{i * T / 999, T, lambda}.p_k();
      monotone = monotone && p >= prev && p >= 0.0 && p <= 1.0;
      prev = p;
    }
  }
  return {ends && half && monotone,
          fmt::format("p(0)=0, p(T)=1: {}; p(T/2)=0.5 (lambda 1), 0.25 (lambda 2): {}; monotone over 1000 points: {}",
                      ends, half, monotone)};
}

// ---------------------------------------------------------------------------
// Criteria 5-7

model::ModelConfig frozen_config(std::size_t content) {
  model::ModelConfig c;
  c.vocab_size = corpus::kReserved + content;
  c.model_dim = 8;
  c.ffn_dim = 16;
  c.heads = 2;
  c.max_position = 96;
  return c;
}

// Larger output embeddings give a random model less uniform distributions.
void sharpen(Transformer<double>& m, double factor) {
  for (auto& [name, p] : m.named_parameters()) {
    if (name == "dec.embed") {
      for (auto& v : p.mutable_values()) v *= factor;
    }
  }
}

TokenSeq random_source(Rng& rng, std::size_t content, std::int64_t lo, std::int64_t hi) {
  TokenSeq s(static_cast<std::size_t>(rng.uniform_range(lo, hi)));
  for (auto& t : s) t = corpus::kReserved + static_cast<std::int32_t>(rng.uniform_range(0, static_cast<std::int64_t>(content) - 1));
  return s;
}

// Enumerates every sequence the search admits within max_len steps and
// returns the best by (score, then lexicographically smaller tokens).
std::pair<TokenSeq, double> exhaustive_best(const Transformer<double>& m, const TokenSeq& src, std::size_t content,
                                            std::size_t max_len) {
  const std::size_t vocab = m.config().vocab_size;
  std::vector<TokenSeq> one{src};
  const auto memory = m.encode(one);
  TokenSeq best;
  double best_score = -std::numeric_limits<double>::infinity();
  auto consider = [&](TokenSeq seq, double score) {
    if (score > best_score || (score == best_score && seq < best)) {
      best = std::move(seq);
      best_score = score;
    }
  };
  std::vector<TokenSeq> frontier{{}};
  for (std::size_t len = 0; len <= max_len; ++len) {
    std::vector<TokenSeq> next;
    for (const auto& y : frontier) {
      TokenSeq ids{kBos};
      ids.insert(ids.end(), y.begin(), y.end());
      std::vector<std::int32_t> pos(ids.size());
      for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int32_t>(i);
      const auto lp = tensor::log_softmax_lastdim(m.decode_step(ids, pos, memory, model::DecoderMode::CAUSAL));
      const auto& rows = lp.values();
      double prefix = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) prefix += rows[i * vocab + static_cast<std::size_t>(y[i])];
      TokenSeq ended = y;
      ended.push_back(kEos);
      if (len == max_len) {
        consider(ended, prefix);  // forced finish, EOS unscored
        continue;
      }
      consider(ended, prefix + rows[y.size() * vocab + kEos]);
      for (std::size_t c = 0; c < content; ++c) {
        TokenSeq grown = y;
        grown.push_back(corpus::kReserved + static_cast<std::int32_t>(c));
        next.push_back(std::move(grown));
      }
    }
    frontier = std::move(next);
  }
  return {best, best_score};
}

Outcome beam_oracle() {
  const auto start = SteadyClock::now();
  Rng rng(2718);
  int matches = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    Transformer<double> m(frozen_config(4), 1000 + static_cast<std::uint64_t>(t));
    sharpen(m, 3.0);
    const auto src = random_source(rng, 4, 2, 6);
    const auto [tokens, score] = exhaustive_best(m, src, 4, 4);
    // 5 continuations per step (4 tokens + EOS) over 4 steps.
    const auto hyps = decode::beam_search_at(m, src, 625, 4);
    if (!hyps.empty() && hyps.front().tokens == tokens) ++matches;
  }
  const double secs = since(start);
  return {matches == trials && secs < 60.0,
          fmt::format("{}/{} sources match the exhaustive argmax, {:.1f}s < 60s", matches, trials, secs)};
}

TokenSeq sparse_of(const TokenSeq& full, int k) {
  TokenSeq z;
  for (std::size_t i = static_cast<std::size_t>(k) - 1; i < full.size(); i += static_cast<std::size_t>(k)) {
    z.push_back(full[i]);
  }
  return z;
}

Outcome score_consistency() {
  Rng rng(314);
  double worst = 0.0;
  std::size_t hyps = 0;
  for (int t = 0; t < 100; ++t) {
    Transformer<double> m(frozen_config(6), 2000 + static_cast<std::uint64_t>(t));
    sharpen(m, 2.0);
    const auto src = random_source(rng, 6, 1, 12);
    DecodeConfig cfg;
    cfg.k = 1 + t % 4;
    cfg.b_at = 1 + static_cast<std::size_t>(t % 5);
    cfg.b_nat = 1 + static_cast<std::size_t>(t / 5) % cfg.b_at;
    const auto tr = decode::hrt_translate(m, src, cfg);
    for (const auto& h : tr.candidates) {
      Hypothesis sparse;
      sparse.tokens = sparse_of(h.tokens, cfg.k);
      sparse.forced = h.forced;
      const double at = decode::teacher_forced_skip_at_score(m, src, sparse, cfg.k);
      const double nat =
          decode::teacher_forced_nat_score(m, src, decode::build_nat_input(sparse.tokens, cfg.k), h.tokens);
      const double err = std::abs(h.score() - (at + nat));
      worst = std::isfinite(err) ? std::max(worst, err) : std::numeric_limits<double>::infinity();
      ++hyps;
    }
  }
  int equal = 0;
  const int k1_trials = 50;
  for (int t = 0; t < k1_trials; ++t) {
    Transformer<double> m(frozen_config(6), 3000 + static_cast<std::uint64_t>(t));
    sharpen(m, 2.0);
    const auto src = random_source(rng, 6, 2, 10);
    DecodeConfig cfg;
    cfg.k = 1;
    cfg.b_at = 1 + static_cast<std::size_t>(t % 5);
    const auto hrt = decode::hrt_translate(m, src, cfg);
    const auto at = decode::beam_search_at(m, src, cfg.b_at, src.size() + 8, nullptr, corpus::bos_k(1));
    if (!at.empty() && hrt.output == decode::finalize_output(at.front().tokens)) ++equal;
  }
  return {worst < 1e-5 && equal == k1_trials,
          fmt::format("max |S - (at + nat)| {:.2e} < 1e-5 over {} hypotheses of 100 decodes; k=1 equals AT on {}/{}",
                      worst, hyps, equal, k1_trials)};
}

Outcome mask_laws() {
  Rng rng(77);
  std::size_t nat_bad = 0, nat_cases = 0;
  for (int k = 1; k <= 4; ++k) {
    for (std::size_t m = 1; m <= 32; ++m) {
      TokenSeq z(m);
      for (auto& t : z) t = corpus::kReserved + static_cast<std::int32_t>(rng.uniform_range(0, 40));
      const auto in = decode::build_nat_input(z, k);
      bool ok = in.ids.size() == static_cast<std::size_t>(k) * m && in.positions.size() == in.ids.size();
      for (std::size_t p = 1; ok && p <= in.ids.size(); ++p) {
        ok = in.positions[p - 1] == static_cast<std::int32_t>(p);
        if (p % static_cast<std::size_t>(k) == 0) {
          ok = ok && in.ids[p - 1] == z[p / static_cast<std::size_t>(k) - 1];
        } else {
          ok = ok && in.ids[p - 1] == kMask;
        }
      }
      ++nat_cases;
      if (!ok) ++nat_bad;
    }
  }
  std::size_t count_bad = 0, count_cases = 0;
  for (std::size_t n = 1; n <= 32; ++n) {
    TokenSeq y(n, corpus::kReserved);
    for (int j = 1; j <= 10; ++j) {
      const std::size_t want = std::max<std::size_t>(1, n * static_cast<std::size_t>(j) / 10);
      for (auto s : {masking::MaskStrategy::HEAD, masking::MaskStrategy::TAIL, masking::MaskStrategy::RANDOM}) {
        const auto masked = masking::apply_mask(y, {s, j / 10.0, 2, 1}, rng);
        const std::set<std::size_t> unique(masked.positions.begin(), masked.positions.end());
        ++count_cases;
        if (unique.size() != want || masked.positions.size() != want) ++count_bad;
      }
    }
  }
  double worst_rate = 0.0;
  for (int k = 2; k <= 4; ++k) {
    const auto masked = masking::apply_mask(TokenSeq(1000, corpus::kReserved), {masking::MaskStrategy::CHUNK, 0.0, k, 1}, rng);
    worst_rate = std::max(worst_rate, std::abs(static_cast<double>(masked.positions.size()) / 1000.0 - (1.0 - 1.0 / k)));
  }
  return {nat_bad == 0 && count_bad == 0 && worst_rate < 0.01,
          fmt::format("nat input {}/{} exact; mask counts {}/{} exact; CHUNK |rate - (1-1/k)| {:.4f} < 0.01 at N=1000",
                      nat_cases - nat_bad, nat_cases, count_cases - count_bad, count_cases, worst_rate)};
}

// ---------------------------------------------------------------------------
// Criteria 8-11: the toy pipeline

struct Toy {
  fs::path dir, data, log;
  fs::path at, hrt, cmlm, distilled;
  bool ready = false;
  std::string error;
  double seconds = 0.0;
};

Toy g_toy;

void build_toy() {
  auto& t = g_toy;
  t.dir = g_opt.work / "toy";
  t.data = t.dir / "data";
  t.log = t.dir / "pipeline.log";
  t.at = t.dir / "at.ckpt";
  t.hrt = t.dir / "hrt.ckpt";
  t.cmlm = t.dir / "cmlm.ckpt";
  t.distilled = t.dir / "distilled.txt";
  fs::create_directories(t.dir);
  const auto start = SteadyClock::now();
  try {
    const auto d = t.data.string();
    cli(t.log, {"gen-data", "--out-dir", d}, t.data / "manifest.json");
    cli(t.log, {"train", "--data-dir", d, "--mode", "at", "--p-raw", "1", "--out", t.at.string()},
        t.at.string() + ".manifest.json");
    cli(t.log, {"distill", "--model", t.at.string(), "--src", (t.data / "train.src").string(), "--beam", "5", "--out",
                t.distilled.string()},
        t.distilled.string() + ".manifest.json");
    cli(t.log, {"train", "--data-dir", d, "--mode", "hrt", "--k", "2", "--distilled", t.distilled.string(), "--init",
                t.at.string(), "--out", t.hrt.string()},
        t.hrt.string() + ".manifest.json");
    cli(t.log, {"train", "--data-dir", d, "--mode", "cmlm", "--distilled", t.distilled.string(), "--out",
                t.cmlm.string()},
        t.cmlm.string() + ".manifest.json");
    t.ready = true;
  } catch (const std::exception& e) {
    t.error = e.what();
  }
  t.seconds = since(start);
}

double translate_bleu(const fs::path& model, const std::string& name, std::vector<std::string> extra) {
  const auto out = g_toy.dir / ("test." + name + ".txt");
  std::vector<std::string> args{"translate", "--model", model.string(), "--src", (g_toy.data / "test.src").string(),
                                "--ref", (g_toy.data / "test.tgt").string(), "--out", out.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  cli(g_toy.log, args, out.string() + ".manifest.json");
  return load_json(out.string() + ".manifest.json")["results"]["bleu"].get<double>();
}

Outcome toy_quality() {
  if (!g_toy.ready) return {false, "toy pipeline failed: " + g_toy.error};
  const auto start = SteadyClock::now();
  const double at = translate_bleu(g_toy.at, "at", {"--system", "at", "--beam", "5"});
  const double hrt = translate_bleu(g_toy.hrt, "hrt", {"--system", "hrt", "--k", "2", "--bat", "5", "--bnat", "1"});
  const double cmlm = translate_bleu(g_toy.cmlm, "cmlm", {"--system", "cmlm", "--iterations", "10"});
  // Training time comes from the manifests so that --reuse keeps it honest.
  double train_secs = 0.0;
  for (const auto& m : {g_toy.at.string() + ".manifest.json", g_toy.distilled.string() + ".manifest.json",
                        g_toy.hrt.string() + ".manifest.json", g_toy.cmlm.string() + ".manifest.json",
                        (g_toy.data / "manifest.json").string()}) {
    train_secs += load_json(m)["seconds"].get<double>();
  }
  const double total = train_secs + since(start);
  const bool pass = at >= 95.0 && hrt >= 95.0 && std::abs(hrt - at) <= 1.0 && std::abs(cmlm - at) <= 2.0 &&
                    total <= 3600.0;
  return {pass, fmt::format("AT {:.2f} >= 95; HRT {:.2f} >= 95, |HRT-AT| {:.2f} <= 1; CMLM10 {:.2f}, |CMLM-AT| {:.2f} "
                            "<= 2; pipeline {:.0f}s <= 3600s on {} thread(s)",
                            at, hrt, std::abs(hrt - at), cmlm, std::abs(cmlm - at), total, g_opt.threads)};
}

Outcome masking_direction() {
  if (!g_toy.ready) return {false, "toy pipeline failed: " + g_toy.error};
  const auto out = g_toy.dir / "maskexp";
  const auto hyps = g_toy.dir / "test.at.txt";
  if (!fs::exists(hyps)) translate_bleu(g_toy.at, "at", {"--system", "at", "--beam", "5"});
  cli(g_toy.log, {"maskexp", "--cmlm", g_toy.cmlm.string(), "--hyps", hyps.string(), "--src",
                  (g_toy.data / "test.src").string(), "--ref", (g_toy.data / "test.tgt").string(), "--out-dir",
                  out.string()},
      out / "manifest.json");
  const auto r = load_json(out / "manifest.json")["results"];
  const auto& half = r["by_rate"]["0.50"];
  const double head = half["HEAD"], tail = half["TAIL"], random = half["RANDOM"];
  const double chunk = r["chunk"]["k=2"]["bleu"];
  const double edge = std::max(head, tail);
  const bool pass = chunk >= random && random >= edge && chunk - edge >= 0.5;
  return {pass, fmt::format("rate 0.5: CHUNK {:.2f} >= RANDOM {:.2f} >= max(HEAD {:.2f}, TAIL {:.2f}); "
                            "CHUNK margin {:.2f} >= 0.5",
                            chunk, random, head, tail, chunk - edge)};
}

std::vector<int> thread_profiles() {
  std::vector<int> p{1};
  if (g_opt.threads > 1) p.push_back(g_opt.threads);
  return p;
}

Outcome bench_direction() {
  if (!g_toy.ready) return {false, "toy pipeline failed: " + g_toy.error};
  const auto out = g_toy.dir / "bench";
  std::vector<std::string> args{"bench", "--at", g_toy.at.string(), "--hrt", g_toy.hrt.string(), "--cmlm",
                                g_toy.cmlm.string(), "--src", (g_toy.data / "test.src").string(), "--runs", "5",
                                "--out-dir", out.string(), "--thread-profiles"};
  for (int p : thread_profiles()) args.push_back(std::to_string(p));
  cli(g_toy.log, args, out / "manifest.json");
  const auto report = load_json(out / "report.json");
  std::map<std::tuple<std::string, int, int>, json> cells;
  for (const auto& c : report["cells"]) {
    cells[{c["system"].get<std::string>(), c["batch"].get<int>(), c["threads"].get<int>()}] = c;
  }
  bool a = true, b = true, counters = true;
  std::string alphas, unstable;
  std::size_t violations = 0, forced = 0;
  for (int p : thread_profiles()) {
    const double a1 = cells.at({"CMLM10", 1, p})["alpha"], a32 = cells.at({"CMLM10", 32, p})["alpha"];
    a = a && a32 < a1;
    alphas += fmt::format(" [threads {}: CMLM10 alpha B=1 {:.2f} > B=32 {:.2f}; HRT alpha", p, a1, a32);
    for (int batch : {1, 8, 16, 32}) {
      const double h = cells.at({"HRT", batch, p})["alpha"];
      b = b && h > 1.0;
      alphas += fmt::format(" {:.2f}", h);
    }
    alphas += "]";
  }
  for (const auto& [key, c] : cells) {
    counters = counters && c["calls"]["exact"].get<bool>();
    violations += c["calls"]["violations"].get<std::size_t>();
    forced += c["calls"]["forced"].get<std::size_t>();
    if (c["unstable"].get<bool>()) unstable += fmt::format(" {}/B={}", std::get<0>(key), std::get<1>(key));
  }
  return {a && b && counters,
          fmt::format("(a) {} (b) {} (c) {} [{} counter violations, {} forced]{}{}", a, b, counters, violations, forced,
                      alphas, unstable.empty() ? "" : "; unstable cells:" + unstable)};
}

Outcome ablations() {
  if (!g_toy.ready) return {false, "toy pipeline failed: " + g_toy.error};
  const auto dir = g_opt.work / "ablation";
  fs::create_directories(dir);
  const auto log = dir / "ablation.log";
  std::vector<json> keys;
  std::string detail;
  bool ok = true;
  for (const char* a : {"none", "no-ft", "no-md", "no-cl"}) {
    const auto out = dir / (std::string(a) + ".ckpt");
    const auto manifest = out.string() + ".manifest.json";
    try {
      cli(log, {"train", "--data-dir", g_toy.data.string(), "--mode", "hrt", "--distilled", g_toy.distilled.string(),
                "--init", g_toy.at.string(), "--steps", "1000", "--ablation", a, "--out", out.string()},
          manifest);
    } catch (const std::exception& e) {
      return {false, e.what()};
    }
    const auto m = load_json(manifest);
    const auto& eval = m["results"]["eval"];
    ok = ok && eval["bleu"].is_number();
    detail += fmt::format(" {} {:.2f};", a, eval.value("bleu", -1.0));
    const json key{m["results"]["train"], m["results"]["init"]};
    for (const auto& k : keys) ok = ok && k != key;
    keys.push_back(key);
  }
  return {ok, "all runs completed with distinct recorded configs; valid BLEU after 1000 steps:" + detail};
}

// ---------------------------------------------------------------------------
// Criterion 12

json report_structure(const fs::path& p) {
  auto j = load_json(p);
  for (auto& c : j["cells"]) {
    for (const char* k : {"samples_ms", "mean_ms", "median_ms", "stddev_ms", "unstable", "alpha"}) c.erase(k);
  }
  for (auto& e : j["efficiency"]) {
    for (const char* k : {"time_1_ms", "time_n_ms", "efficiency"}) e.erase(k);
  }
  return j;
}

Outcome determinism() {
  const auto base = g_opt.work / "determinism";
  fs::remove_all(base);
  // Both runs use the same paths, which checkpoints record as provenance.
  auto run = [&](const std::string& name) {
    const auto dir = base / "run";
    fs::create_directories(dir);
    const auto log = dir / "run.log";
    const auto d = (dir / "data").string();
    const auto at = (dir / "at.ckpt").string(), hrt = (dir / "hrt.ckpt").string();
    const auto dist = (dir / "distilled.txt").string();
    cli(log, {"gen-data", "--train-size", "2000", "--valid-size", "100", "--test-size", "100", "--out-dir", d});
    cli(log, {"train", "--data-dir", d, "--mode", "at", "--p-raw", "1", "--steps", "40", "--eval-split", "none",
              "--out", at});
    cli(log, {"distill", "--model", at, "--src", d + "/train.src", "--out", dist});
    cli(log, {"train", "--data-dir", d, "--mode", "hrt", "--distilled", dist, "--init", at, "--steps", "40", "--out",
              hrt});
    cli(log, {"translate", "--model", hrt, "--src", d + "/test.src", "--system", "hrt", "--out",
              (dir / "hrt.txt").string()});
    cli(log, {"translate", "--model", at, "--src", d + "/test.src", "--system", "at", "--out",
              (dir / "at.txt").string()});
    cli(log, {"bench", "--at", at, "--hrt", hrt, "--src", d + "/test.src", "--runs", "1", "--batch-sizes", "1", "8",
              "--efficiency-lengths", "1", "8", "--out-dir", (dir / "bench").string()});
    fs::rename(dir, base / name);
    return base / name;
  };
  try {
    const auto a = run("run1");
    const auto b = run("run2");
    std::vector<std::string> differ;
    for (const char* f : {"data/train.src", "data/train.tgt", "at.ckpt", "distilled.txt", "hrt.ckpt", "hrt.txt",
                          "at.txt"}) {
      if (slurp(a / f) != slurp(b / f)) differ.emplace_back(f);
    }
    if (report_structure(a / "bench/report.json") != report_structure(b / "bench/report.json")) {
      differ.emplace_back("bench/report.json structure");
    }
    std::string list;
    for (const auto& d : differ) list += " " + d;
    return {differ.empty(), differ.empty() ? fmt::format("two runs on {} thread(s): checkpoints, distilled data, "
                                                         "translations and bench report structure are bit-identical",
                                                         g_opt.threads)
                                           : "differ:" + list};
  } catch (const std::exception& e) {
    return {false, e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work;
  std::vector<int> only, known;
  g_opt.threads = static_cast<int>(std::clamp(std::thread::hardware_concurrency(), 1u, 4u));
  app.add_option("--work", work, "artifact directory")->required();
  app.add_option("--threads", g_opt.threads, "thread budget")->capture_default_str();
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--known-failures", known, "documented failing criteria that do not fail the run")->delimiter(',');
  app.add_flag("--reuse", g_opt.reuse, "skip pipeline steps whose manifest exists");
  CLI11_PARSE(app, argc, argv);
  g_opt.work = work;
  fs::create_directories(g_opt.work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"golden task constructions", golden_constructions},
      {"supervision partition", supervision_partition},
      {"curriculum schedule", curriculum_schedule},
      {"beam search oracle", beam_oracle},
      {"score decomposition", score_consistency},
      {"mask construction laws", mask_laws},
      {"toy end-to-end quality", toy_quality},
      {"masking strategy ordering", masking_direction},
      {"speed-up direction and call counters", bench_direction},
      {"ablation hooks", ablations},
      {"determinism", determinism},
  };
  auto selected = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  const bool needs_toy = selected(8) || selected(9) || selected(10) || selected(11);

  int passed = 0, run = 0;
  std::vector<int> unexpected, expected;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected(id)) continue;
    if (id >= 8 && id <= 11 && needs_toy && g_toy.dir.empty()) {
      progress("building the toy pipeline under " + (g_opt.work / "toy").string());
      build_toy();
    }
    const auto start = SteadyClock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++run;
    passed += o.pass ? 1 : 0;
    if (!o.pass) (std::find(known.begin(), known.end(), id) != known.end() ? expected : unexpected).push_back(id);
    std::cout << fmt::format("[{}] {:>2} {}: {} ({:.1f}s)", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail,
                             since(start))
              << std::endl;
  }
  std::cout << fmt::format("{}/{} criteria passed", passed, run);
  if (!expected.empty()) std::cout << fmt::format("; known failures: {}", fmt::join(expected, ","));
  if (!unexpected.empty()) std::cout << fmt::format("; unexpected failures: {}", fmt::join(unexpected, ","));
  std::cout << std::endl;
  return unexpected.empty() ? 0 : 1;
}
