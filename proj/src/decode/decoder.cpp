#include "hrt/decode/decoder.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "hrt/tensor/ops.hpp"

namespace hrt::decode {

using corpus::kBos;
using corpus::kEos;
using corpus::kMask;
using model::DecoderBatch;
using model::DecoderMode;
using model::Memory;

std::string to_string(System system) {
  switch (system) {
    case System::AT:
      return "at";
    case System::HRT:
      return "hrt";
    case System::CMLM:
      return "cmlm";
  }
  return "?";
}

System parse_system(const std::string& name) {
  if (name == "at") return System::AT;
  if (name == "hrt") return System::HRT;
  if (name == "cmlm") return System::CMLM;
  throw std::invalid_argument("unknown system '" + name + "' (expected at, hrt or cmlm)");
}

void DecodeConfig::validate() const {
  if (k < 1 || k > corpus::kMaxChunk) throw std::invalid_argument(fmt::format("chunk size {} outside 1..4", k));
  if (b_nat < 1) throw std::invalid_argument("b_nat must be >= 1");
  if (b_at < b_nat) throw std::invalid_argument(fmt::format("b_at ({}) must be >= b_nat ({})", b_at, b_nat));
  if (beam < 1) throw std::invalid_argument("beam must be >= 1");
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (length_beam < 1) throw std::invalid_argument("length beam must be >= 1");
  if (length_penalty < 0.0) throw std::invalid_argument("length penalty must be >= 0");
}

namespace {

bool emittable(std::int32_t id) { return id == kEos || !corpus::is_special(id); }

double ranked_score(const Hypothesis& h, double alpha) {
  if (alpha <= 0.0) return h.score();
  return h.score() / std::pow(static_cast<double>(std::max<std::size_t>(h.tokens.size(), 1)), alpha);
}

void rank(std::vector<Hypothesis>& hyps, double alpha) {
  std::stable_sort(hyps.begin(), hyps.end(), [alpha](const Hypothesis& a, const Hypothesis& b) {
    const double sa = ranked_score(a, alpha), sb = ranked_score(b, alpha);
    if (sa != sb) return sa > sb;
    // Lexicographic order puts lower token ids first, then shorter sequences.
    return a.tokens < b.tokens;
  });
}

struct Candidate {
  double score;
  std::int32_t token;
  std::size_t parent;
};

bool candidate_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.token != b.token) return a.token < b.token;
  return a.parent < b.parent;
}

struct Live {
  TokenSeq tokens;
  double score = 0.0;
};

}  // namespace

template <typename T>
std::vector<std::vector<Hypothesis>> causal_beam_search(const Transformer<T>& model, const Memory<T>& memory,
                                                        std::int32_t start, int stride, std::size_t beam,
                                                        std::span<const std::size_t> max_steps,
                                                        std::vector<CallStats>* calls, double length_penalty) {
  const std::size_t n_src = memory.sources();
  if (beam < 1) throw std::invalid_argument("beam must be >= 1");
  if (max_steps.size() != n_src) throw std::invalid_argument("need one step cap per source");
  const std::size_t vocab = model.config().vocab_size;
  std::vector<std::vector<Live>> live(n_src);
  std::vector<std::vector<Hypothesis>> finished(n_src);
  std::vector<std::size_t> hyp_source;
  for (std::size_t s = 0; s < n_src; ++s) {
    if (max_steps[s] < 1) throw std::invalid_argument("step cap must be >= 1");
    live[s].push_back({});
    hyp_source.push_back(s);
  }
  if (calls) calls->assign(n_src, {});
  model::IncrementalDecoder<T> inc(model, memory, hyp_source);

  std::vector<Candidate> cands;
  std::vector<std::int32_t> tokens, positions;
  while (inc.hypotheses() > 0) {
    tokens.clear();
    positions.clear();
    for (std::size_t s = 0; s < n_src; ++s) {
      for (const auto& h : live[s]) {
        tokens.push_back(h.tokens.empty() ? start : h.tokens.back());
        positions.push_back(static_cast<std::int32_t>(h.tokens.size() * static_cast<std::size_t>(stride)));
      }
    }
    const std::vector<T> lp = inc.step(tokens, positions);

    std::vector<std::size_t> keep;
    std::size_t base = 0;
    for (std::size_t s = 0; s < n_src; ++s) {
      auto& hyps = live[s];
      if (hyps.empty()) continue;
      if (calls) ++(*calls)[s].decoder_calls;
      cands.clear();
      for (std::size_t h = 0; h < hyps.size(); ++h) {
        const T* row = lp.data() + (base + h) * vocab;
        for (std::size_t v = 0; v < vocab; ++v) {
          const auto id = static_cast<std::int32_t>(v);
          if (!emittable(id)) continue;
          cands.push_back({hyps[h].score + static_cast<double>(row[v]), id, h});
        }
      }
      const std::size_t take = std::min(beam, cands.size());
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(take), cands.end(),
                        candidate_before);
      const bool at_cap = hyps.front().tokens.size() + 1 >= max_steps[s];
      std::vector<Live> next;
      for (std::size_t c = 0; c < take; ++c) {
        const auto& cand = cands[c];
        Live grown{hyps[cand.parent].tokens, cand.score};
        grown.tokens.push_back(cand.token);
        if (cand.token == kEos) {
          finished[s].push_back({std::move(grown.tokens), grown.score, 0.0, true, false});
        } else if (at_cap) {
          grown.tokens.push_back(kEos);
          finished[s].push_back({std::move(grown.tokens), grown.score, 0.0, true, true});
        } else {
          keep.push_back(base + cand.parent);
          next.push_back(std::move(grown));
        }
      }
      base += hyps.size();
      bool done = next.empty();
      if (!done && !finished[s].empty()) {
        if (length_penalty <= 0.0) {
          // Scores only decrease along a path, so no live hypothesis can
          // overtake the best finished one.
          double best_finished = -std::numeric_limits<double>::infinity();
          for (const auto& f : finished[s]) best_finished = std::max(best_finished, f.score());
          done = best_finished >= next.front().score;
        } else {
          done = finished[s].size() >= beam;
        }
      }
      if (done) {
        // Drop this sentence's live hypotheses from the decoder.
        keep.resize(keep.size() - next.size());
        next.clear();
      }
      hyps = std::move(next);
    }
    inc.reorder(keep);
  }
  for (auto& f : finished) rank(f, length_penalty);
  return finished;
}

template <typename T>
std::vector<Hypothesis> beam_search_at(const Transformer<T>& model, const TokenSeq& src, std::size_t beam,
                                       std::size_t max_len, CallStats* calls, std::int32_t start) {
  std::vector<TokenSeq> sources{src};
  auto memory = model.encode(sources);
  std::vector<std::size_t> caps{max_len};
  std::vector<CallStats> stats;
  auto out = causal_beam_search(model, memory, start, 1, beam, caps, &stats);
  if (calls) *calls = stats[0];
  return std::move(out[0]);
}

template <typename T>
std::vector<Hypothesis> skip_at_stage(const Transformer<T>& model, const Memory<T>& memory, int k, std::size_t b_at,
                                      std::size_t max_steps, CallStats* calls) {
  if (memory.sources() != 1) throw std::invalid_argument("skip_at_stage expects one encoded source");
  std::vector<std::size_t> caps{max_steps};
  std::vector<CallStats> stats;
  auto out = causal_beam_search(model, memory, corpus::bos_k(k), k, b_at, caps, &stats);
  if (calls) {
    *calls = stats[0];
    calls->stage1_calls = stats[0].decoder_calls;
  }
  return std::move(out[0]);
}

NatInput build_nat_input(std::span<const std::int32_t> sparse, int k) {
  if (k < 1) throw std::invalid_argument("chunk size must be >= 1");
  NatInput in;
  for (auto z : sparse) {
    for (int j = 0; j < k - 1; ++j) in.ids.push_back(kMask);
    in.ids.push_back(z);
  }
  in.positions.resize(in.ids.size());
  std::iota(in.positions.begin(), in.positions.end(), 1);
  return in;
}

template <typename T>
std::vector<Hypothesis> skip_cmlm_fill(const Transformer<T>& model, const Memory<T>& memory,
                                       std::span<const NatInput> inputs, std::span<const std::size_t> memory_index) {
  if (inputs.size() != memory_index.size()) throw std::invalid_argument("one memory index per input");
  std::vector<Hypothesis> out(inputs.size());
  DecoderBatch batch;
  batch.mode = DecoderMode::FULL;
  bool any_mask = false;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out[i].tokens = inputs[i].ids;
    out[i].finished = true;
    any_mask = any_mask || std::find(inputs[i].ids.begin(), inputs[i].ids.end(), kMask) != inputs[i].ids.end();
    batch.add(inputs[i].ids, inputs[i].positions, memory_index[i]);
  }
  if (!any_mask) return out;
  const auto lp = tensor::log_softmax_lastdim(model.decode(batch, memory));
  const std::size_t vocab = model.config().vocab_size;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t p = 0; p < inputs[i].ids.size(); ++p) {
      if (inputs[i].ids[p] != kMask) continue;
      const T* row = lp.data() + (batch.offset[i] + p) * vocab;
      std::int32_t best = kEos;
      for (std::size_t v = 0; v < vocab; ++v) {
        const auto id = static_cast<std::int32_t>(v);
        if (emittable(id) && row[v] > row[best]) best = id;
      }
      out[i].tokens[p] = best;
      out[i].score_nat += static_cast<double>(row[best]);
    }
  }
  return out;
}

TokenSeq finalize_output(std::span<const std::int32_t> tokens) {
  TokenSeq out;
  for (auto t : tokens) {
    if (t == kEos) break;
    if (!corpus::is_special(t)) out.push_back(t);
  }
  return out;
}

namespace {
std::size_t default_cap(std::size_t src_len, int k, std::size_t configured) {
  if (configured > 0) return configured;
  const auto kk = static_cast<std::size_t>(k);
  return (src_len + 8 + kk - 1) / kk;
}
}  // namespace

template <typename T>
std::vector<Translation> hrt_translate_batch(const Transformer<T>& model, std::span<const TokenSeq> sources,
                                             const DecodeConfig& config) {
  config.validate();
  if (sources.empty()) return {};
  const auto memory = model.encode(sources);
  std::vector<std::size_t> caps;
  for (const auto& s : sources) caps.push_back(default_cap(s.size(), config.k, config.max_steps));
  std::vector<CallStats> stage1;
  auto sparse = causal_beam_search(model, memory, corpus::bos_k(config.k), config.k, config.b_at, caps, &stage1,
                                   config.length_penalty);

  std::vector<NatInput> inputs;
  std::vector<std::size_t> owner;
  std::vector<const Hypothesis*> parents;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const std::size_t take = std::min(config.b_nat, sparse[s].size());
    for (std::size_t j = 0; j < take; ++j) {
      inputs.push_back(build_nat_input(sparse[s][j].tokens, config.k));
      owner.push_back(s);
      parents.push_back(&sparse[s][j]);
    }
  }
  auto filled = skip_cmlm_fill(model, memory, inputs, owner);
  const bool stage2_ran = config.k > 1;

  std::vector<Translation> out(sources.size());
  std::vector<std::vector<std::size_t>> sparse_length(sources.size());
  for (std::size_t i = 0; i < filled.size(); ++i) {
    auto& h = filled[i];
    h.score_at = parents[i]->score_at;
    h.forced = parents[i]->forced;
    auto& tr = out[owner[i]];
    tr.candidates.push_back(h);
    sparse_length[owner[i]].push_back(parents[i]->tokens.size() - 1);
  }
  for (std::size_t s = 0; s < sources.size(); ++s) {
    auto& tr = out[s];
    // Candidates arrive in Stage-I rank order; stable ranking keeps that
    // order among equal totals.
    std::size_t best = 0;
    for (std::size_t j = 1; j < tr.candidates.size(); ++j) {
      if (ranked_score(tr.candidates[j], config.length_penalty) >
          ranked_score(tr.candidates[best], config.length_penalty)) {
        best = j;
      }
    }
    tr.best = tr.candidates[best];
    tr.output = finalize_output(tr.best.tokens);
    tr.length = sparse_length[s][best];
    tr.calls.stage1_calls = stage1[s].decoder_calls;
    tr.calls.stage2_calls = stage2_ran ? 1 : 0;
    tr.calls.decoder_calls = tr.calls.stage1_calls + tr.calls.stage2_calls;
  }
  return out;
}

template <typename T>
Translation hrt_translate(const Transformer<T>& model, const TokenSeq& src, const DecodeConfig& config) {
  std::vector<TokenSeq> one{src};
  return std::move(hrt_translate_batch(model, std::span<const TokenSeq>(one), config)[0]);
}

template <typename T>
std::vector<Translation> at_translate_batch(const Transformer<T>& model, std::span<const TokenSeq> sources,
                                            const DecodeConfig& config) {
  config.validate();
  if (sources.empty()) return {};
  const auto memory = model.encode(sources);
  std::vector<std::size_t> caps;
  for (const auto& s : sources) caps.push_back(config.max_steps > 0 ? config.max_steps : s.size() + 8);
  std::vector<CallStats> stats;
  auto hyps = causal_beam_search(model, memory, kBos, 1, config.beam, caps, &stats, config.length_penalty);
  std::vector<Translation> out(sources.size());
  for (std::size_t s = 0; s < sources.size(); ++s) {
    out[s].best = hyps[s].front();
    out[s].candidates = std::move(hyps[s]);
    out[s].output = finalize_output(out[s].best.tokens);
    out[s].length = out[s].output.size();
    out[s].calls = stats[s];
    out[s].calls.stage1_calls = stats[s].decoder_calls;
  }
  return out;
}

std::size_t remask_count(std::size_t n, std::size_t iterations, std::size_t i) {
  if (iterations == 0 || i >= iterations) return 0;
  return (n * (iterations - i) + iterations - 1) / iterations;
}

namespace {

template <typename T>
struct MaskPredictState {
  std::size_t sentence = 0;
  TokenSeq tokens;
  std::vector<double> prob, logp;
  bool converged = false;
};

}  // namespace

template <typename T>
std::vector<Translation> cmlm_mask_predict_batch(const Transformer<T>& model, std::span<const TokenSeq> sources,
                                                 const DecodeConfig& config,
                                                 std::span<const std::size_t> oracle_lengths) {
  config.validate();
  if (sources.empty()) return {};
  if (config.length_mode == LengthMode::ORACLE && oracle_lengths.size() != sources.size()) {
    throw std::invalid_argument("oracle length mode needs one length per source");
  }
  const std::size_t vocab = model.config().vocab_size;
  const std::size_t max_len = model.config().max_position - 1;
  const auto memory = model.encode(sources);

  std::vector<MaskPredictState<T>> states;
  if (config.length_mode == LengthMode::ORACLE) {
    for (std::size_t s = 0; s < sources.size(); ++s) {
      MaskPredictState<T> st;
      st.sentence = s;
      st.tokens.assign(std::clamp<std::size_t>(oracle_lengths[s], 1, max_len), kMask);
      states.push_back(std::move(st));
    }
  } else {
    const auto logits = model.length_logits(memory);
    for (std::size_t s = 0; s < sources.size(); ++s) {
      std::vector<std::size_t> cls(model::kLengthClasses);
      std::iota(cls.begin(), cls.end(), 0);
      const T* row = logits.data() + s * model::kLengthClasses;
      std::stable_sort(cls.begin(), cls.end(), [row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
      std::vector<std::size_t> lengths;
      for (std::size_t c : cls) {
        if (lengths.size() >= config.length_beam) break;
        const long len = static_cast<long>(sources[s].size()) + static_cast<long>(c) - model::kLengthRange;
        // Non-positive predictions fall back to the source length.
        const std::size_t n = len <= 0 ? sources[s].size() : static_cast<std::size_t>(len);
        const std::size_t clamped = std::min(n, max_len);
        if (std::find(lengths.begin(), lengths.end(), clamped) == lengths.end()) lengths.push_back(clamped);
      }
      for (auto n : lengths) {
        MaskPredictState<T> st;
        st.sentence = s;
        st.tokens.assign(n, kMask);
        states.push_back(std::move(st));
      }
    }
  }
  for (auto& st : states) {
    st.prob.assign(st.tokens.size(), 0.0);
    st.logp.assign(st.tokens.size(), 0.0);
  }

  std::vector<CallStats> calls(sources.size());
  std::vector<std::size_t> lengths_out(sources.size(), 0);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<std::size_t> active;
    std::vector<std::vector<std::size_t>> masked;
    DecoderBatch batch;
    batch.mode = DecoderMode::FULL;
    for (std::size_t c = 0; c < states.size(); ++c) {
      auto& st = states[c];
      if (st.converged) continue;
      const std::size_t n = st.tokens.size();
      std::vector<std::size_t> pos;
      if (it == 0) {
        pos.resize(n);
        std::iota(pos.begin(), pos.end(), 0);
      } else {
        const std::size_t count = remask_count(n, config.iterations, it);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&st](std::size_t a, std::size_t b) { return st.prob[a] < st.prob[b]; });
        pos.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
        std::sort(pos.begin(), pos.end());
      }
      TokenSeq input = st.tokens;
      for (auto p : pos) input[p] = kMask;
      input.push_back(kEos);
      std::vector<std::int32_t> positions(input.size());
      std::iota(positions.begin(), positions.end(), 1);
      batch.add(input, positions, st.sentence);
      active.push_back(c);
      masked.push_back(std::move(pos));
    }
    if (active.empty()) break;
    std::vector<bool> touched(sources.size(), false);
    const auto lp = tensor::log_softmax_lastdim(model.decode(batch, memory));
    for (std::size_t a = 0; a < active.size(); ++a) {
      auto& st = states[active[a]];
      if (!touched[st.sentence]) {
        touched[st.sentence] = true;
        ++calls[st.sentence].decoder_calls;
      }
      const TokenSeq before = st.tokens;
      for (auto p : masked[a]) {
        const T* row = lp.data() + (batch.offset[a] + p) * vocab;
        std::int32_t best = -1;
        for (std::size_t v = 0; v < vocab; ++v) {
          const auto id = static_cast<std::int32_t>(v);
          if (corpus::is_special(id)) continue;
          if (best < 0 || row[v] > row[best]) best = id;
        }
        st.tokens[p] = best;
        st.logp[p] = static_cast<double>(row[best]);
        st.prob[p] = std::exp(st.logp[p]);
      }
      if (it > 0 && st.tokens == before) st.converged = true;
    }
  }

  std::vector<Translation> out(sources.size());
  std::vector<double> best_score(sources.size(), -std::numeric_limits<double>::infinity());
  for (const auto& st : states) {
    const double total = std::accumulate(st.logp.begin(), st.logp.end(), 0.0);
    const double avg = total / static_cast<double>(st.tokens.size());
    if (avg > best_score[st.sentence]) {
      best_score[st.sentence] = avg;
      auto& tr = out[st.sentence];
      tr.best = Hypothesis{st.tokens, 0.0, total, true, false};
      tr.output = finalize_output(st.tokens);
      tr.length = st.tokens.size();
    }
  }
  for (std::size_t s = 0; s < sources.size(); ++s) {
    out[s].calls = calls[s];
    out[s].calls.stage2_calls = calls[s].decoder_calls;
  }
  return out;
}

template <typename T>
Translation cmlm_mask_predict(const Transformer<T>& model, const TokenSeq& src, const DecodeConfig& config,
                              std::optional<std::size_t> oracle_length) {
  std::vector<TokenSeq> one{src};
  std::vector<std::size_t> lengths;
  if (oracle_length) lengths.push_back(*oracle_length);
  return std::move(cmlm_mask_predict_batch(model, std::span<const TokenSeq>(one), config, lengths)[0]);
}

template <typename T>
std::vector<Translation> translate_batch(System system, const Transformer<T>& model, std::span<const TokenSeq> sources,
                                         const DecodeConfig& config) {
  switch (system) {
    case System::AT:
      return at_translate_batch(model, sources, config);
    case System::HRT:
      return hrt_translate_batch(model, sources, config);
    case System::CMLM:
      return cmlm_mask_predict_batch(model, sources, config);
  }
  throw std::logic_error("unreachable");
}

template <typename T>
double teacher_forced_skip_at_score(const Transformer<T>& model, const TokenSeq& src, const Hypothesis& sparse,
                                    int k) {
  if (sparse.tokens.empty() || sparse.tokens.back() != kEos) {
    throw std::invalid_argument("sparse hypothesis must end with EOS");
  }
  std::vector<TokenSeq> one{src};
  const auto memory = model.encode(one);
  const std::size_t m = sparse.tokens.size() - 1;
  TokenSeq ids{corpus::bos_k(k)};
  ids.insert(ids.end(), sparse.tokens.begin(), sparse.tokens.end() - 1);
  std::vector<std::int32_t> positions;
  for (std::size_t i = 0; i <= m; ++i) positions.push_back(static_cast<std::int32_t>(i * static_cast<std::size_t>(k)));
  const auto lp = tensor::log_softmax_lastdim(model.decode_step(ids, positions, memory, DecoderMode::CAUSAL));
  const std::size_t vocab = model.config().vocab_size;
  const std::size_t scored = sparse.forced ? m : m + 1;
  double total = 0.0;
  for (std::size_t i = 0; i < scored; ++i) {
    total += static_cast<double>(lp.values()[i * vocab + static_cast<std::size_t>(sparse.tokens[i])]);
  }
  return total;
}

template <typename T>
double teacher_forced_nat_score(const Transformer<T>& model, const TokenSeq& src, const NatInput& input,
                                const TokenSeq& filled) {
  if (filled.size() != input.ids.size()) throw std::invalid_argument("filled sequence length mismatch");
  std::vector<TokenSeq> one{src};
  const auto memory = model.encode(one);
  const auto lp = tensor::log_softmax_lastdim(model.decode_step(input.ids, input.positions, memory, DecoderMode::FULL));
  const std::size_t vocab = model.config().vocab_size;
  double total = 0.0;
  for (std::size_t i = 0; i < filled.size(); ++i) {
    if (input.ids[i] == kMask) total += static_cast<double>(lp.values()[i * vocab + static_cast<std::size_t>(filled[i])]);
  }
  return total;
}

#define HRT_INSTANTIATE_DECODE(T)                                                                                  \
  template std::vector<std::vector<Hypothesis>> causal_beam_search<T>(                                             \
      const Transformer<T>&, const Memory<T>&, std::int32_t, int, std::size_t, std::span<const std::size_t>,       \
      std::vector<CallStats>*, double);                                                                            \
  template std::vector<Hypothesis> beam_search_at<T>(const Transformer<T>&, const TokenSeq&, std::size_t,          \
                                                     std::size_t, CallStats*, std::int32_t);                       \
  template std::vector<Hypothesis> skip_at_stage<T>(const Transformer<T>&, const Memory<T>&, int, std::size_t,     \
                                                    std::size_t, CallStats*);                                      \
  template std::vector<Hypothesis> skip_cmlm_fill<T>(const Transformer<T>&, const Memory<T>&,                      \
                                                     std::span<const NatInput>, std::span<const std::size_t>);     \
  template std::vector<Translation> hrt_translate_batch<T>(const Transformer<T>&, std::span<const TokenSeq>,       \
                                                           const DecodeConfig&);                                   \
  template Translation hrt_translate<T>(const Transformer<T>&, const TokenSeq&, const DecodeConfig&);              \
  template std::vector<Translation> at_translate_batch<T>(const Transformer<T>&, std::span<const TokenSeq>,        \
                                                          const DecodeConfig&);                                    \
  template std::vector<Translation> cmlm_mask_predict_batch<T>(const Transformer<T>&, std::span<const TokenSeq>,   \
                                                               const DecodeConfig&, std::span<const std::size_t>); \
  template Translation cmlm_mask_predict<T>(const Transformer<T>&, const TokenSeq&, const DecodeConfig&,           \
                                            std::optional<std::size_t>);                                           \
  template std::vector<Translation> translate_batch<T>(System, const Transformer<T>&, std::span<const TokenSeq>,   \
                                                       const DecodeConfig&);                                       \
  template double teacher_forced_skip_at_score<T>(const Transformer<T>&, const TokenSeq&, const Hypothesis&, int); \
  template double teacher_forced_nat_score<T>(const Transformer<T>&, const TokenSeq&, const NatInput&,             \
                                              const TokenSeq&);

HRT_INSTANTIATE_DECODE(float)
HRT_INSTANTIATE_DECODE(double)

}  // namespace hrt::decode
