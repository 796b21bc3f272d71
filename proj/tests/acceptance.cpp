// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eah/cli.hpp"
#include "eah/dump_io.hpp"
#include "eah/error.hpp"
#include "eah/intervention.hpp"
#include "eah/sink_analysis.hpp"
#include "eah/toy_model.hpp"
#include "fixtures.hpp"

using namespace eah;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const char* name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  if (!ok) ++failures;
}

std::string short_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int run_cli(std::vector<std::string> args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  return code;
}

template <class E>
bool throws_code(ErrorCode code, E&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code() == code;
  }
  return false;
}

void oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0, checks = 0, sinks = 0;
  for (int m = 0; m < 200; ++m) {
    const auto map = testing::random_causal_map(64, rng, 0.5 + (m % 8));
    for (double beta : {0.0006, 0.0015, 0.02}) {
      SinkParams p;
      p.beta = beta;
      p.span = {8, 55};
      p.anchor_k = 8;
      const auto got = detect_vision_sinks(map, p, 0);
      const auto want = testing::oracle_sink_columns(map, 8, 55, 8, beta);
      ++checks;
      sinks += want.size();
      if (std::set<std::size_t>(got.sink_columns.begin(), got.sink_columns.end()) != want)
        ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  report("sink-oracle-equivalence", mismatches == 0 && secs < 5.0,
         std::to_string(checks) + " map/beta pairs, " + std::to_string(mismatches) +
             " mismatches, " + std::to_string(sinks) + " sinks total, " + std::to_string(secs) +
             " s (limit 5 s)");
}

void default_operating_point() {
  testing::TempDir dir;
  const auto path = dir.file("fixture.atnd").string();
  write_dump(testing::reference_fixture().model, path);

  std::string analysis, outcome;
  const int a = run_cli({"analyze", path, "--layers", "2"}, &analysis);
  const int b = run_cli({"intervene", path, "--out", dir.file("o.atnd").string()}, &outcome);
  bool ok = a == 0 && b == 0;
  double p = -1;
  nlohmann::json selected;
  if (ok) {
    const auto aj = nlohmann::json::parse(analysis);
    const auto oj = nlohmann::json::parse(outcome);
    p = aj["p"].get<double>();
    selected = oj["selected_heads"];
    // 8 planted dense heads out of 32; head 13 carries the most sinks.
    ok = aj["layer"] == 2 && p == 8.0 / 32.0 && aj["heads"].size() == 32 &&
         selected == nlohmann::json::array({13}) && oj["layer"] == 2;
  }
  report("default-operating-point", ok,
         "layer 2 p=" + std::to_string(p) + " (expected 0.25), selected " + selected.dump() +
             " (expected [13])");
}

void broadcast_contracts() {
  testing::TempDir dir;
  const auto& fixture = testing::reference_fixture().model;
  const auto path = dir.file("fixture.atnd").string();
  write_dump(fixture, path);

  bool ok = run_cli({"intervene", path, "--out", dir.file("full.atnd").string()}) == 0;
  std::string detail;
  if (ok) {
    const auto full = read_dump(dir.file("full.atnd"));
    const auto& layer = full.layer(1);
    bool identical = true;
    for (const auto& h : layer.heads()) identical = identical && h.bitwise_equal(layer.head(0));
    const bool others = full.layer(0).bitwise_equal(fixture.layer(0));

    EahConfig cfg;
    const auto again = apply_eah(full, cfg);
    const bool idempotent = encode_dump(again.modified) == encode_dump(full);
    ok = identical && others && idempotent;
    detail = std::string("full copy identical=") + (identical ? "yes" : "no") +
             " other-layers-unchanged=" + (others ? "yes" : "no") +
             " idempotent=" + (idempotent ? "yes" : "no");
  }

  // With k = 32 the source head is one of the targets and is overwritten by
  // itself, so 31 heads change bytes; every k < 32 changes exactly k.
  for (std::size_t k : {4u, 8u, 16u, 28u, 32u}) {
    const auto out = dir.file("k" + std::to_string(k) + ".atnd").string();
    std::string rep;
    if (run_cli({"intervene", path, "--out", out, "--copy-heads", std::to_string(k)}, &rep) != 0) {
      ok = false;
      continue;
    }
    const auto after = read_dump(out);
    const auto overwritten = nlohmann::json::parse(rep)["overwritten_heads"].size();
    const auto changed = testing::changed_heads(fixture.layer(1), after.layer(1));
    const std::size_t expect_changed = k == 32 ? 31 : k;
    const bool good = overwritten == k && changed == expect_changed &&
                      32 - changed == 32 - expect_changed &&
                      after.layer(0).bitwise_equal(fixture.layer(0));
    ok = ok && good;
    detail += " k=" + std::to_string(k) + ":overwritten " + std::to_string(overwritten) +
              "/changed " + std::to_string(changed);
  }
  report("broadcast-contracts", ok, detail);
}

void stochasticity() {
  std::size_t bad = 0, heads = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto model = testing::random_model(2, 6, 48, seed);
    EahConfig cfg;
    cfg.layer = seed % 2;
    cfg.beta = 0.005;
    cfg.span = {6, 41};
    cfg.top_n = 1 + seed % 3;
    if (seed % 4 == 1) cfg.copy_targets = 1 + seed % 6;
    const auto after = apply_eah(model, cfg).modified;
    for (const auto* m : {&model, &after}) {
      for (std::size_t l = 0; l < m->layer_count(); ++l) {
        for (const auto& h : m->layer(l).heads()) {
          ++heads;
          if (!validate_attention(h, true, 1e-5)) ++bad;
        }
      }
    }
  }
  report("stochasticity-preservation", bad == 0,
         std::to_string(heads) + " heads checked before and after, " + std::to_string(bad) +
             " failed at tol 1e-5");
}

void skewness_checks() {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> xs(3 + rng() % 30);
    for (auto& x : xs) x = std::exp(normal(rng));
    const auto got = skewness(xs);
    const auto want = testing::oracle_skewness(xs);
    if (!got || !want) {
      worst = INFINITY;
      continue;
    }
    worst = std::max(worst, std::abs(*got - *want));
  }
  const std::vector<double> sym = {0.1, 0.2, 0.3, 0.4, 0.5};
  const auto s = skewness(sym);
  const bool symmetric_zero = s && std::abs(*s) < 1e-12;
  const std::vector<double> constant(8, 0.25);
  const bool undefined = !skewness(constant).has_value();
  report("skewness", worst <= 1e-12 && symmetric_zero && undefined,
         "max |diff| over 50 samples " + short_real(worst) + " (limit 1e-12), symmetric " +
             (symmetric_zero ? "0" : "nonzero") + ", constant " +
             (undefined ? "undefined" : "defined"));
}

void toy_contracts() {
  toy::ToyModelConfig cfg;
  cfg.n_layers = 4;
  cfg.n_heads = 8;
  cfg.seq_len = 128;
  cfg.image_span = {16, 79};
  cfg.seed = 5;
  cfg.sink_gain = {3.0f, 2.0f};
  const auto model = toy::init_model(cfg);
  const auto inputs = toy::synthetic_inputs(cfg, 5);

  auto truncated = inputs;
  const std::size_t t = 90;
  for (std::size_t i = t + 1; i < truncated.size(); ++i) truncated[i] = 0;
  const auto full = toy::forward(model, inputs);
  const auto cut = toy::forward(model, truncated);
  double causal_diff = 0.0;
  for (std::size_t i = 0; i < (t + 1) * cfg.vocab_size; ++i)
    causal_diff = std::max(causal_diff, static_cast<double>(std::abs(full.logits[i] - cut.logits[i])));

  EahConfig eah;
  eah.layer = 2;
  eah.beta = 0.02;
  eah.span = cfg.image_span;
  const auto hooked = toy::forward(model, inputs, toy::make_eah_hook(eah));
  bool local = true;
  for (std::size_t l = 0; l < eah.layer; ++l)
    local = local && hooked.attention[l].bitwise_equal(full.attention[l]);

  const bool deterministic =
      encode_dump(full.to_model_attention({})) ==
      encode_dump(toy::forward(toy::init_model(cfg), inputs).to_model_attention({}));

  testing::TempDir dir;
  const auto t0 = Clock::now();
  const int code = run_cli({"simulate", "--n-layers", "4", "--n-heads", "8", "--seq-len", "128",
                            "--span", "16:79", "--beta", "0.02", "--eah", "on", "--out",
                            dir.file("sim.atnd").string()});
  const double secs = seconds_since(t0);

  report("toy-transformer", causal_diff == 0.0 && local && deterministic && code == 0 && secs < 10.0,
         "past-logit max diff " + std::to_string(causal_diff) + ", lower layers unchanged=" +
             (local ? "yes" : "no") + ", deterministic=" + (deterministic ? "yes" : "no") +
             ", simulate " + std::to_string(secs) + " s (limit 10 s)");
}

void dump_round_trip() {
  testing::TempDir dir;
  std::size_t identical = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto model = testing::random_model(1 + seed % 4, 1 + seed % 5, 4 + seed * 2, seed);
    const auto path = dir.file("m" + std::to_string(seed) + ".atnd");
    write_dump(model, path);
    if (read_dump(path).bitwise_equal(model)) ++identical;
  }
  auto bytes = encode_dump(testing::random_model(2, 2, 8, 99));
  auto magic = bytes;
  magic[1] = 'X';
  auto truncated = bytes;
  truncated.resize(truncated.size() - 4);
  auto padded = bytes;
  padded.push_back(0);
  const bool magic_rejected = throws_code(ErrorCode::BadMagic, [&] { decode_dump(magic); });
  const bool short_rejected =
      throws_code(ErrorCode::SizeMismatch, [&] { decode_dump(truncated); }) &&
      throws_code(ErrorCode::SizeMismatch, [&] { decode_dump(padded); });
  report("dump-round-trip", identical == 20 && magic_rejected && short_rejected,
         std::to_string(identical) + "/20 bitwise identical, bad magic " +
             (magic_rejected ? "rejected" : "accepted") + ", bad length " +
             (short_rejected ? "rejected" : "accepted"));
}

void sweep_grid() {
  testing::TempDir dir;
  const auto dump = dir.file("sim.atnd").string();
  bool ok = run_cli({"simulate", "--n-layers", "4", "--out", dump}) == 0;
  std::string a, b;
  const std::vector<std::string> args = {"sweep", dump, "--layers", "1,2,3,4", "--betas",
                                         "0.0006,0.0008,0.0015,0.002"};
  ok = ok && run_cli(args, &a) == 0;
  auto threaded = args;
  threaded.insert(threaded.end(), {"--threads", "4"});
  ok = ok && run_cli(threaded, &b) == 0;
  std::size_t rows = 0;
  for (char c : a) rows += c == '\n';
  rows = rows == 0 ? 0 : rows - 1;
  report("sweep-grid", ok && rows == 16 && a == b,
         std::to_string(rows) + " rows (expected 16), repeat run " +
             (a == b ? "byte-identical" : "differs"));
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria = {
      oracle_equivalence, default_operating_point, broadcast_contracts, stochasticity,
      skewness_checks,    toy_contracts,         dump_round_trip,     sweep_grid};
  for (const auto& c : criteria) {
    try {
      c();
    } catch (const std::exception& e) {
      report("criterion", false, std::string("threw: ") + e.what());
    }
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
