// SPDX-License-Identifier: Apache-2.0
#include "eah/cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "eah/dump_io.hpp"
#include "eah/error.hpp"
#include "eah/intervention.hpp"
#include "eah/report.hpp"
#include "eah/sink_analysis.hpp"
#include "eah/toy_model.hpp"

namespace eah::cli {
namespace {

struct SharedFlags {
  std::string span = "36:611";
  double beta = 0.002;
  double gamma = 0.15;
  int layer = 2;
  std::size_t top_n = 1;
  std::string copy_heads = "all";
  std::optional<std::size_t> anchor_k;
  bool anchor_random = false;
  std::uint64_t seed = 0;
  std::string out;
  bool strict = false;
};

void add_shared_flags(CLI::App& app, SharedFlags& f) {
  app.add_option("--span", f.span, "Image-token span S:E, 0-based inclusive")
      ->capture_default_str();
  app.add_option("--beta", f.beta, "Vision-sink threshold on the masked column mean")
      ->capture_default_str();
  app.add_option("--gamma", f.gamma, "Dense-head threshold on the sink density alpha")
      ->capture_default_str();
  app.add_option("--layer", f.layer, "Target layer, 1-based")->capture_default_str();
  app.add_option("--top-n", f.top_n, "Number of top-ranked heads averaged into the source")
      ->capture_default_str();
  app.add_option("--copy-heads", f.copy_heads, "Heads to overwrite: a count or 'all'")
      ->capture_default_str();
  app.add_option("--anchor-k", f.anchor_k, "First row of the column mean")
      ->default_str("span start");
  app.add_flag("--anchor-random", f.anchor_random,
               "Draw the anchor row uniformly from the span using --seed")
      ->default_str("false");
  app.add_option("--seed", f.seed, "Seed for random anchors and simulation")
      ->capture_default_str();
  app.add_option("--out", f.out, "Output path (stdout when empty)")->default_str("stdout");
  app.add_flag("--strict", f.strict, "Reject dumps whose rows are not stochastic")
      ->default_str("false");
}

TokenSpan parse_span(const std::string& text) {
  const auto colon = text.find(':');
  TokenSpan span;
  auto parse = [&](std::string_view part, std::size_t& out) {
    const auto* end = part.data() + part.size();
    auto [ptr, ec] = std::from_chars(part.data(), end, out);
    return ec == std::errc() && ptr == end && !part.empty();
  };
  if (colon == std::string::npos ||
      !parse(std::string_view(text).substr(0, colon), span.start) ||
      !parse(std::string_view(text).substr(colon + 1), span.end) || span.start > span.end) {
    throw Error(ErrorCode::Span, "expected --span S:E with S <= E, got '" + text + "'");
  }
  return span;
}

std::optional<std::size_t> parse_copy(const std::string& text) {
  if (text == "all") return std::nullopt;
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw Error(ErrorCode::Config, "expected a head count or 'all', got '" + text + "'");
  }
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) {
      throw Error(ErrorCode::Config, std::string("bad ") + what + " entry '" + item + "'");
    }
    values.push_back(v);
  }
  return values;
}

std::size_t layer_index(long one_based, std::size_t layer_count) {
  if (one_based < 1 || static_cast<std::size_t>(one_based) > layer_count) {
    throw Error(ErrorCode::Layer, "layer " + std::to_string(one_based) + " outside 1.." +
                                      std::to_string(layer_count));
  }
  return static_cast<std::size_t>(one_based - 1);
}

std::size_t resolve_anchor(const SharedFlags& f, const TokenSpan& span) {
  if (f.anchor_random) return random_anchor(span, f.seed);
  return f.anchor_k.value_or(span.start);
}

void check_thresholds(const SharedFlags& f) {
  if (!(f.beta >= 0.0)) throw Error(ErrorCode::Config, "--beta must be non-negative");
  if (!(f.gamma > 0.0 && f.gamma <= 1.0)) throw Error(ErrorCode::Config, "--gamma must be in (0, 1]");
  if (f.top_n < 1) throw Error(ErrorCode::Config, "--top-n must be at least 1");
}

// Writes to the --out file when given, otherwise to `out`.
void emit(const std::string& path, std::ostream& out,
          const std::function<void(std::ostream&)>& body) {
  if (path.empty()) {
    body(out);
    out.flush();
    return;
  }
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  body(file);
  file.flush();
  if (!file) throw Error(ErrorCode::Io, "failed writing " + path);
}

ModelAttention load(const std::string& path, bool strict) {
  ReadOptions options;
  options.strict = strict;
  return read_dump(path, options);
}

// --- analyze ---------------------------------------------------------------

struct AnalyzeFlags {
  std::string dump;
  std::string layers;
  std::string skew_scope = "all";
};

int cmd_analyze(const SharedFlags& f, const AnalyzeFlags& a, bool layer_given, std::ostream& out,
                std::ostream& err) {
  check_thresholds(f);
  const auto span = parse_span(f.span);
  if (a.skew_scope != "all" && a.skew_scope != "dense") {
    throw Error(ErrorCode::Config, "--skew-scope must be 'all' or 'dense'");
  }
  const auto model = load(a.dump, f.strict);

  SinkParams params;
  params.beta = f.beta;
  params.gamma = f.gamma;
  params.span = span;
  params.anchor_k = resolve_anchor(f, span);
  params.skew_scope = a.skew_scope == "dense" ? SkewnessScope::DenseHeads : SkewnessScope::AllHeads;
  params.validate(model.size());

  std::vector<std::size_t> layers;
  if (!a.layers.empty()) {
    for (long l : parse_list<long>(a.layers, "--layers")) {
      layers.push_back(layer_index(l, model.layer_count()));
    }
  } else if (layer_given) {
    layers.push_back(layer_index(f.layer, model.layer_count()));
  } else {
    for (std::size_t l = 0; l < model.layer_count(); ++l) layers.push_back(l);
  }

  const auto reports = analyze_model(model, params, layers);
  emit(f.out, out, [&](std::ostream& os) {
    for (const auto& r : reports) os << to_json(r).dump() << '\n';
  });
  err << "analyzed " << reports.size() << " layer(s) of " << a.dump << " (anchor row "
      << params.anchor_k << ")\n";
  return kExitOk;
}

// --- intervene -------------------------------------------------------------

struct InterveneFlags {
  std::string dump;
  std::string report;
};

int cmd_intervene(const SharedFlags& f, const InterveneFlags& i, std::ostream& out,
                  std::ostream& err) {
  check_thresholds(f);
  const auto span = parse_span(f.span);
  const auto copies = parse_copy(f.copy_heads);
  if (f.out.empty()) throw Error(ErrorCode::Config, "intervene needs --out for the modified dump");
  const auto model = load(i.dump, f.strict);

  EahConfig cfg;
  cfg.layer = layer_index(f.layer, model.layer_count());
  cfg.beta = f.beta;
  cfg.top_n = f.top_n;
  cfg.copy_targets = copies;
  cfg.span = span;
  cfg.anchor_k = resolve_anchor(f, span);

  const auto outcome = apply_eah(model, cfg);
  write_dump(outcome.modified, f.out);
  emit(i.report, out, [&](std::ostream& os) { os << to_json(outcome, cfg).dump() << '\n'; });
  err << "layer " << f.layer << ": broadcast head";
  for (auto h : outcome.selected_heads) err << ' ' << h;
  err << " to " << outcome.overwritten_heads.size() << " head(s), wrote " << f.out << '\n';
  return kExitOk;
}

// --- simulate --------------------------------------------------------------

struct SimulateFlags {
  std::string eah = "off";
  std::optional<long> eah_layer;
  std::size_t n_layers = 4;
  std::size_t n_heads = 8;
  std::size_t d_model = 32;
  std::size_t seq_len = 612;
  std::size_t vocab = 64;
  std::string sink_gain = "3,2";
  std::optional<std::uint64_t> input_seed;
};

int cmd_simulate(const SharedFlags& f, const SimulateFlags& s, std::ostream& out,
                 std::ostream& err) {
  check_thresholds(f);
  if (s.eah != "on" && s.eah != "off") throw Error(ErrorCode::Config, "--eah must be 'on' or 'off'");
  const auto span = parse_span(f.span);
  const auto copies = parse_copy(f.copy_heads);

  toy::ToyModelConfig mc;
  mc.n_layers = s.n_layers;
  mc.n_heads = s.n_heads;
  mc.d_model = s.d_model;
  mc.seq_len = s.seq_len;
  mc.vocab_size = s.vocab;
  mc.image_span = span;
  mc.seed = f.seed;
  mc.sink_gain = parse_list<float>(s.sink_gain, "--sink-gain");
  mc.validate();

  const bool eah_on = s.eah == "on";
  EahConfig cfg;
  cfg.layer = layer_index(s.eah_layer.value_or(f.layer), mc.n_layers);
  cfg.beta = f.beta;
  cfg.top_n = f.top_n;
  cfg.copy_targets = copies;
  cfg.span = span;
  cfg.anchor_k = resolve_anchor(f, span);
  if (eah_on) cfg.validate(mc.n_heads, mc.seq_len);

  const auto model = toy::init_model(mc);
  const auto inputs = toy::synthetic_inputs(mc, s.input_seed.value_or(f.seed));
  const auto base = toy::forward(model, inputs);

  LayerEahResult record;
  const auto final_trace = eah_on ? toy::forward(model, inputs, toy::make_eah_hook(cfg, &record))
                                  : base;
  const auto diff = toy::compare_runs(base, final_trace, span);

  if (!f.out.empty()) {
    ModelMetadata meta;
    meta.model_name = "toy-transformer";
    meta.span = span;
    meta.notes = "seed=" + std::to_string(f.seed) + " eah=" + s.eah;
    write_dump(final_trace.to_model_attention(meta), f.out);
  }

  ordered_json j;
  j["seed"] = f.seed;
  j["checksum"] = model.checksum();
  j["eah"] = eah_on;
  if (eah_on) {
    j["eah_layer"] = cfg.layer + 1;
    j["selected_heads"] = record.selected_heads;
    j["sink_counts"] = record.selected_sink_counts;
    j["overwritten_heads"] = record.overwritten_heads;
  }
  j["diff"] = to_json(diff);
  out << j.dump() << '\n';
  err << "simulated " << mc.n_layers << " layers x " << mc.n_heads << " heads x " << mc.seq_len
      << " tokens" << (f.out.empty() ? "" : ", trace written to " + f.out) << '\n';
  return kExitOk;
}

// --- sweep -----------------------------------------------------------------

struct SweepFlags {
  std::string dump;
  std::string layers = "2";
  std::string betas = "0.002";
  std::string top_ns = "1";
  std::string copy_counts = "all";
  unsigned threads = 0;
};

int cmd_sweep(const SharedFlags& f, const SweepFlags& s, std::ostream& out, std::ostream& err) {
  check_thresholds(f);
  const auto span = parse_span(f.span);
  const auto model = load(s.dump, f.strict);

  SweepGrid grid;
  for (long l : parse_list<long>(s.layers, "--layers")) {
    grid.layers.push_back(layer_index(l, model.layer_count()));
  }
  grid.betas = parse_list<double>(s.betas, "--betas");
  grid.top_ns = parse_list<std::size_t>(s.top_ns, "--top-ns");
  std::stringstream ss(s.copy_counts);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) grid.copy_counts.push_back(parse_copy(item));
  }

  SweepOptions options;
  options.span = span;
  options.anchor_k = resolve_anchor(f, span);
  options.gamma = f.gamma;

  const unsigned threads = s.threads ? s.threads : std::max(1u, std::thread::hardware_concurrency());
  const auto result = sweep(model, grid, options, threads);
  emit(f.out, out, [&](std::ostream& os) { write_sweep_csv(os, result); });
  err << result.summary.points << " grid point(s); p_after mean "
      << format_real(result.summary.mean_p_after) << " range ["
      << format_real(result.summary.min_p_after) << ", "
      << format_real(result.summary.max_p_after) << "]\n";
  return kExitOk;
}

// --- validate --------------------------------------------------------------

struct ValidateFlags {
  std::string dump;
  double tol = 1e-5;
  bool causal = false;
};

int cmd_validate(const SharedFlags& f, const ValidateFlags& v, std::ostream& out,
                 std::ostream& err) {
  const auto model = load(v.dump, false);
  ordered_json failures = ordered_json::array();
  for (const auto& layer : model.layers()) {
    for (std::size_t h = 0; h < layer.head_count(); ++h) {
      const auto check = validate_attention(layer.head(h), v.causal, v.tol);
      if (!check) {
        failures.push_back(ordered_json{{"layer", layer.layer_index() + 1},
                                        {"head", h},
                                        {"row", check.row},
                                        {"col", check.col},
                                        {"reason", describe(check)}});
      }
    }
  }
  const bool ok = failures.empty();
  ordered_json j;
  j["valid"] = ok;
  j["model"] = model.metadata().model_name;
  j["layers"] = model.layer_count();
  j["heads"] = model.head_count();
  j["size"] = model.size();
  j["failures"] = std::move(failures);
  emit(f.out, out, [&](std::ostream& os) { os << j.dump() << '\n'; });
  if (!ok) err << v.dump << ": " << j["failures"].size() << " head(s) failed validation\n";
  return ok ? kExitOk : kExitInvalid;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Vision-sink analysis and attention-head broadcasting for attention dumps",
               "eahtool"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  SharedFlags shared;

  AnalyzeFlags analyze_flags;
  auto* analyze = app.add_subcommand("analyze", "Per-head vision sinks and dense-head statistics");
  add_shared_flags(*analyze, shared);
  analyze->add_option("dump", analyze_flags.dump, "ATND dump")->required();
  analyze->add_option("--layers", analyze_flags.layers,
                      "Comma-separated 1-based layers (default: all, or --layer if given)")
      ->default_str("all");
  analyze->add_option("--skew-scope", analyze_flags.skew_scope,
                      "Heads feeding the skewness: all or dense")
      ->capture_default_str();

  InterveneFlags intervene_flags;
  auto* intervene = app.add_subcommand("intervene", "Broadcast the densest-sink head of a layer");
  add_shared_flags(*intervene, shared);
  intervene->add_option("dump", intervene_flags.dump, "ATND dump")->required();
  intervene->add_option("--report", intervene_flags.report, "Outcome JSON path")
      ->default_str("stdout");

  SimulateFlags simulate_flags;
  auto* simulate = app.add_subcommand("simulate", "Run the toy transformer, optionally with EAH");
  add_shared_flags(*simulate, shared);
  simulate->add_option("--eah", simulate_flags.eah, "on or off")->capture_default_str();
  simulate->add_option("--eah-layer", simulate_flags.eah_layer, "1-based EAH layer")
      ->default_str("--layer");
  simulate->add_option("--n-layers", simulate_flags.n_layers, "Layers")->capture_default_str();
  simulate->add_option("--n-heads", simulate_flags.n_heads, "Heads per layer")
      ->capture_default_str();
  simulate->add_option("--d-model", simulate_flags.d_model, "Model width")->capture_default_str();
  simulate->add_option("--seq-len", simulate_flags.seq_len, "Sequence length")
      ->capture_default_str();
  simulate->add_option("--vocab", simulate_flags.vocab, "Vocabulary size")->capture_default_str();
  simulate->add_option("--sink-gain", simulate_flags.sink_gain,
                       "Comma-separated planted sink gains for the first layers")
      ->capture_default_str();
  simulate->add_option("--input-seed", simulate_flags.input_seed, "Seed for the input tokens")
      ->default_str("--seed");

  SweepFlags sweep_flags;
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid of EAH settings, one CSV row per point");
  add_shared_flags(*sweep_cmd, shared);
  sweep_cmd->add_option("dump", sweep_flags.dump, "ATND dump")->required();
  sweep_cmd->add_option("--layers", sweep_flags.layers, "Comma-separated 1-based layers")
      ->capture_default_str();
  sweep_cmd->add_option("--betas", sweep_flags.betas, "Comma-separated beta values")
      ->capture_default_str();
  sweep_cmd->add_option("--top-ns", sweep_flags.top_ns, "Comma-separated top-n values")
      ->capture_default_str();
  sweep_cmd->add_option("--copy-counts", sweep_flags.copy_counts,
                        "Comma-separated copy-head counts ('all' allowed)")
      ->capture_default_str();
  sweep_cmd->add_option("--threads", sweep_flags.threads, "Worker threads")
      ->default_str("hardware");

  ValidateFlags validate_flags;
  auto* validate = app.add_subcommand("validate", "Check every head for row-stochasticity");
  add_shared_flags(*validate, shared);
  validate->add_option("dump", validate_flags.dump, "ATND dump")->required();
  validate->add_option("--tol", validate_flags.tol, "Row-sum tolerance")->capture_default_str();
  validate->add_flag("--causal", validate_flags.causal, "Also require zeros above the diagonal")
      ->default_str("false");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitInvalid;
  }

  try {
    if (*analyze) {
      return cmd_analyze(shared, analyze_flags, analyze->count("--layer") > 0, out, err);
    }
    if (*intervene) return cmd_intervene(shared, intervene_flags, out, err);
    if (*simulate) return cmd_simulate(shared, simulate_flags, out, err);
    if (*sweep_cmd) return cmd_sweep(shared, sweep_flags, out, err);
    if (*validate) return cmd_validate(shared, validate_flags, out, err);
  } catch (const Error& e) {
    err << "eahtool: " << e.what() << '\n';
    return e.code() == ErrorCode::Io ? kExitIo : kExitInvalid;
  } catch (const std::exception& e) {
    err << "eahtool: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitInvalid;
}

}  // namespace eah::cli
