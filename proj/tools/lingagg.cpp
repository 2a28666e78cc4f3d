// lingagg: layer-wise MI analysis and layer aggregation from the command line.
//
// Exit codes: 0 success, 2 input or validation error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lingagg/aggregation.hpp"
#include "lingagg/error.hpp"
#include "lingagg/lfa.hpp"
#include "lingagg/mi.hpp"
#include "lingagg/synth.hpp"

namespace fs = std::filesystem;
using namespace lingagg;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kInternal = 1, kInput = 2, kNumerical = 3 };

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename V>
std::string join(const std::vector<V>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<V>) {
      out += fmt17(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  Fnv1a h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

// Flags shared by every training subcommand.
struct CommonOptions {
  std::optional<std::uint64_t> seed;
  int epochs = 15;
  double lr = 1e-3;
  std::size_t batch_size = 256;
  double eval_fraction = 0.2;
  std::vector<std::size_t> hidden{256, 256};
  double dropout = 0.1;
  unsigned threads = 1;
  bool bits = false;
  std::string probe = "mlp";
  std::string precision = "f32";
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--seed", o.seed, "Base seed (falls back to LING_AGG_SEED, then 0)");
  cmd->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size, "Minibatch size")->capture_default_str();
  cmd->add_option("--eval-frac", o.eval_fraction, "Held-out fraction")->capture_default_str();
  cmd->add_option("--probe-hidden", o.hidden, "Hidden widths, comma separated")->delimiter(',')->capture_default_str();
  cmd->add_option("--dropout", o.dropout, "Dropout after each hidden layer")->capture_default_str();
  cmd->add_option("--threads", o.threads, "Worker threads (1 is the reproducible reference)")->capture_default_str();
  cmd->add_flag("--bits", o.bits, "Add an mi_bits column");
  cmd->add_option("--probe", o.probe, "Probe family")->check(CLI::IsMember({"mlp", "linear"}))->capture_default_str();
  cmd->add_option("--precision", o.precision, "Training precision")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  cmd->add_option("--out", o.out, "Output path");
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("LING_AGG_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used, 10);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw InputError(std::string("LING_AGG_SEED is not an unsigned integer: '") + env + "'");
  }
  return 0;
}

TrainConfig make_config(const CommonOptions& o) {
  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.lr = o.lr;
  cfg.batch_size = o.batch_size;
  cfg.seed = resolve_seed(o.seed);
  cfg.eval_fraction = o.eval_fraction;
  cfg.hidden = o.hidden;
  cfg.dropout = o.dropout;
  cfg.linear_probe = o.probe == "linear";
  cfg.precision = o.precision == "f64" ? Precision::f64 : Precision::f32;
  cfg.threads = o.threads == 0 ? 1 : o.threads;
  cfg.validate();
  return cfg;
}

std::vector<std::string> common_args(const TrainConfig& cfg, const CommonOptions& o, const std::string& out) {
  std::vector<std::string> args{"--seed=" + std::to_string(cfg.seed),
                                "--epochs=" + std::to_string(cfg.epochs),
                                "--lr=" + fmt17(cfg.lr),
                                "--batch-size=" + std::to_string(cfg.batch_size),
                                "--eval-frac=" + fmt17(cfg.eval_fraction),
                                "--probe-hidden=" + join(cfg.hidden),
                                "--dropout=" + fmt17(cfg.dropout),
                                "--threads=" + std::to_string(cfg.threads),
                                "--probe=" + o.probe,
                                "--precision=" + o.precision};
  if (o.bits) args.push_back("--bits");
  args.push_back("--out=" + out);
  return args;
}

// Everything needed to rerun a command and check its outputs.
struct Manifest {
  std::string subcommand;
  std::vector<std::string> argv;
  json config = json::object();
  json inputs = json::array();
  std::vector<std::string> outputs;
  std::uint64_t seed = 0;
  json results = json::object();

  void add_input(const fs::path& p) { inputs.push_back(json{{"path", p.string()}, {"hash", file_hash(p)}}); }

  void write(const fs::path& primary_out, double seconds) const {
    json j{{"tool", "lingagg"},
           {"version", kVersion},
           {"subcommand", subcommand},
           {"argv", argv},
           {"config", config},
           {"inputs", inputs},
           {"outputs", outputs},
           {"seed", seed},
           {"results", results},
           {"wall_clock_seconds", seconds}};
    const fs::path path = primary_out.string() + ".manifest.json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << dump_json(j) << '\n';
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

std::string default_out(const std::string& out, const fs::path& stem_source, const std::string& suffix) {
  if (!out.empty()) return out;
  return stem_source.stem().string() + suffix;
}

json estimate_json(const MIEstimate& e) {
  return json{{"context", e.context}, {"h_y_nats", e.h_y}, {"ce_nats", e.ce}, {"mi_nats", e.bound},
              {"mi_bits", e.bits()},  {"n_eval", e.n_eval}};
}

// ---------------------------------------------------------------------------

int cmd_validate(const std::string& input) {
  LayeredDataset ds;
  try {
    ds = read_lfa_unchecked(input);
  } catch (const LfaError& e) {
    std::cout << "FAIL structure: " << e.what() << '\n';
    return kInput;
  }
  std::cout << "PASS structure: " << ds.n_frames << " frames x " << ds.n_layers << " layers x " << ds.dim
            << " dims, " << ds.vocab_size() << " classes" << (ds.snr_db ? ", SNR track" : "") << '\n';
  bool ok = true;
  for (const auto& c : check_invariants(ds)) {
    std::cout << (c.ok ? "PASS " : "FAIL ") << c.name;
    if (!c.ok) std::cout << ": " << c.detail;
    std::cout << '\n';
    ok = ok && c.ok;
  }
  return ok ? kOk : kInput;
}

struct SynthOptions {
  std::string family = "deterministic";
  SynthSpec spec;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool classes_given = false;
};

int cmd_synth(SynthOptions& o, Manifest& m, fs::path& primary) {
  o.spec.family = family_from_string(o.family);
  // The binary channel is K=2 by construction; --classes only matters if given.
  if (o.spec.family == Family::binary_channel && !o.classes_given) o.spec.classes = 2;
  o.spec.seed = resolve_seed(o.seed);
  o.spec.validate();
  const LayeredDataset ds = generate(o.spec);
  primary = default_out(o.out, to_string(o.spec.family), ".lfa");
  write_lfa(ds, primary);

  const auto& s = o.spec;
  m.argv = {"synth",
            "--family=" + to_string(s.family),
            "--n=" + std::to_string(s.n),
            "--layers=" + std::to_string(s.layers),
            "--dim=" + std::to_string(s.dim),
            "--classes=" + std::to_string(s.classes),
            "--p=" + fmt17(s.flip_p),
            "--snr-levels=" + join(s.snr_levels),
            "--informative=" + join(s.informative),
            "--decay-db=" + fmt17(s.decay_db),
            "--segment=" + std::to_string(s.segment),
            "--marker=" + fmt17(s.marker),
            "--seed=" + std::to_string(s.seed),
            "--out=" + primary.string()};
  m.config = s.to_json();
  m.seed = s.seed;
  m.outputs = {primary.string()};
  m.results = json{{"dataset_hash", dataset_hash(ds)}};
  std::cout << "wrote " << primary.string() << " (" << ds.n_frames << " frames, hash " << dataset_hash(ds) << ")\n";
  return kOk;
}

int cmd_analyze(const std::string& input, std::vector<double> levels, const CommonOptions& o, Manifest& m,
                fs::path& primary) {
  const TrainConfig cfg = make_config(o);
  const LayeredDataset ds = read_lfa(input);
  if (ds.snr_db && levels.empty()) levels = snr_levels_of(ds);
  const MIReport report = full_analysis(ds, levels, cfg);

  primary = default_out(o.out, input, ".mi.csv");
  std::ostringstream csv;
  write_report_csv(report, csv, o.bits);
  write_text(primary, csv.str());

  m.argv = {"analyze", input};
  if (!levels.empty()) m.argv.push_back("--snr-levels=" + join(levels));
  for (auto& a : common_args(cfg, o, primary.string())) m.argv.push_back(a);
  m.config = cfg.to_json();
  m.config["snr_levels"] = levels;
  m.config["averaging"] = report.averaging;
  m.add_input(input);
  m.seed = cfg.seed;
  m.outputs = {primary.string()};
  std::cout << csv.str();
  return kOk;
}

int cmd_train(bool dynamic, const std::string& input, bool hybrid, std::size_t key_dim, const CommonOptions& o,
              Manifest& m, fs::path& primary) {
  const TrainConfig cfg = make_config(o);
  const LayeredDataset ds = read_lfa(input);
  Aggregator agg;
  MIEstimate heldout;
  const bool f64 = cfg.precision == Precision::f64;
  if (dynamic) {
    DWSAggregator r;
    if (f64) {
      auto res = train_linguistic_dws<double>(ds, cfg, key_dim);
      r = std::move(res.aggregator);
      heldout = res.heldout;
    } else {
      auto res = train_linguistic_dws<float>(ds, cfg, key_dim);
      r = std::move(res.aggregator);
      heldout = res.heldout;
    }
    if (hybrid) make_hybrid(r);
    agg = std::move(r);
  } else {
    WSAggregator r;
    if (f64) {
      auto res = train_linguistic_ws<double>(ds, cfg);
      r = std::move(res.aggregator);
      heldout = res.heldout;
    } else {
      auto res = train_linguistic_ws<float>(ds, cfg);
      r = std::move(res.aggregator);
      heldout = res.heldout;
    }
    if (hybrid) make_hybrid(r);
    agg = std::move(r);
  }
  heldout.context = aggregator_id(agg);

  primary = default_out(o.out, input, dynamic ? ".dws.json" : ".ws.json");
  export_aggregator(agg, primary);

  m.argv = {dynamic ? "train-dws" : "train-ws", input};
  if (hybrid) m.argv.push_back("--hybrid");
  if (dynamic) m.argv.push_back("--key-dim=" + std::to_string(key_dim == 0 ? ds.dim : key_dim));
  for (auto& a : common_args(cfg, o, primary.string())) m.argv.push_back(a);
  m.config = cfg.to_json();
  m.config["hybrid"] = hybrid;
  m.add_input(input);
  m.seed = cfg.seed;
  m.outputs = {primary.string()};
  m.results = estimate_json(heldout);
  if (const auto* ws = std::get_if<WSAggregator>(&agg)) m.results["weights"] = ws->display_weights();

  std::cout << report_csv_header(o.bits) << '\n' << estimate_csv_row(heldout, o.bits) << '\n';
  return kOk;
}

int cmd_eval(const std::string& agg_path, const std::string& input, const CommonOptions& o, Manifest& m,
             fs::path& primary) {
  const TrainConfig cfg = make_config(o);
  const Aggregator agg = import_aggregator(agg_path);
  const LayeredDataset ds = read_lfa(input);
  const MIEstimate e = evaluate_aggregator(agg, ds, cfg);

  primary = default_out(o.out, agg_path, ".eval.csv");
  const std::string text = report_csv_header(o.bits) + "\n" + estimate_csv_row(e, o.bits) + "\n";
  write_text(primary, text);

  m.argv = {"eval", agg_path, input};
  for (auto& a : common_args(cfg, o, primary.string())) m.argv.push_back(a);
  m.config = cfg.to_json();
  m.add_input(agg_path);
  m.add_input(input);
  m.seed = cfg.seed;
  m.outputs = {primary.string()};
  m.results = estimate_json(e);
  std::cout << text;
  return kOk;
}

int cmd_dump_dynamic(const std::string& agg_path, const std::string& input, const std::string& out, Manifest& m,
                     fs::path& primary) {
  const Aggregator agg = import_aggregator(agg_path);
  const auto* dws = std::get_if<DWSAggregator>(&agg);
  if (!dws) {
    throw InputError(agg_path +
                     " holds a static WS aggregator; its weights do not vary per frame (use compare-weights instead)");
  }
  const LayeredDataset ds = read_lfa(input);
  const auto dyn = dws_fuse<float>(*dws, ds);
  primary = default_out(out, agg_path, ".frames.csv");
  std::ostringstream csv;
  write_dynamic_weights_csv(ds, dyn.layer_weights, csv);
  write_text(primary, csv.str());

  m.argv = {"dump-dynamic", agg_path, input, "--out=" + primary.string()};
  m.add_input(agg_path);
  m.add_input(input);
  m.outputs = {primary.string()};
  std::cout << "wrote " << primary.string() << " (" << ds.n_frames << " rows)\n";
  return kOk;
}

int cmd_compare(const std::vector<std::string>& paths, std::vector<std::string> labels, const std::string& reference,
                const std::string& out, Manifest& m, fs::path& primary) {
  if (labels.empty()) {
    for (const auto& p : paths) labels.push_back(fs::path(p).stem().string());
  }
  if (labels.size() != paths.size()) throw InputError("--labels needs one entry per aggregator file");
  std::vector<Aggregator> aggs;
  for (const auto& p : paths) aggs.push_back(import_aggregator(p));
  std::optional<LayeredDataset> ref;
  if (!reference.empty()) ref = read_lfa(reference);
  const auto rows = compare_weights(aggs, labels, ref ? &*ref : nullptr);

  primary = out.empty() ? fs::path("weights.csv") : fs::path(out);
  std::ostringstream csv;
  write_weight_table_csv(rows, csv);
  write_text(primary, csv.str());

  m.argv = {"compare-weights"};
  for (const auto& p : paths) m.argv.push_back(p);
  std::string label_arg = "--labels=";
  for (std::size_t i = 0; i < labels.size(); ++i) label_arg += (i ? "," : "") + labels[i];
  m.argv.push_back(label_arg);
  if (!reference.empty()) m.argv.push_back("--reference=" + reference);
  m.argv.push_back("--out=" + primary.string());
  for (const auto& p : paths) m.add_input(p);
  if (!reference.empty()) m.add_input(reference);
  m.outputs = {primary.string()};
  std::cout << csv.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probe-based MI analysis of layered features and MI-trained layer aggregation", "lingagg"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string input;
  std::string agg_path;
  std::vector<double> levels;
  bool hybrid = false;
  std::size_t key_dim = 0;
  std::vector<std::string> agg_paths;
  std::vector<std::string> labels;
  std::string reference;
  std::string out;

  auto* validate_cmd = app.add_subcommand("validate", "Check an LFA file and print each invariant");
  validate_cmd->add_option("path", input, "LFA file")->required();

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic LFA dataset");
  synth_cmd->add_option("--family", synth.family, "deterministic|independent|binary_channel|noisy_snr|layer_switching")
      ->capture_default_str();
  synth_cmd->add_option("--n", synth.spec.n, "Frames")->capture_default_str();
  synth_cmd->add_option("--layers", synth.spec.layers, "Layers")->capture_default_str();
  synth_cmd->add_option("--dim", synth.spec.dim, "Feature width")->capture_default_str();
  synth_cmd->add_option("--classes", synth.spec.classes, "Label classes")->capture_default_str();
  synth_cmd->add_option("--p", synth.spec.flip_p, "binary_channel flip probability")->capture_default_str();
  synth_cmd->add_option("--snr-levels", synth.spec.snr_levels, "noisy_snr levels in dB")->delimiter(',');
  synth_cmd->add_option("--informative", synth.spec.informative, "Informative layer(s)")->delimiter(',');
  synth_cmd->add_option("--decay-db", synth.spec.decay_db, "noisy_snr attenuation per layer")->capture_default_str();
  synth_cmd->add_option("--segment", synth.spec.segment, "Frames per SNR block or switching segment")
      ->capture_default_str();
  synth_cmd->add_option("--marker", synth.spec.marker, "layer_switching live-layer cue (0 disables)")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Seed (falls back to LING_AGG_SEED, then 0)");
  synth_cmd->add_option("--out", synth.out, "Output LFA path");

  CommonOptions analyze_opts;
  auto* analyze_cmd = app.add_subcommand("analyze", "Layer-wise (and per-SNR) MI lower bounds as CSV");
  analyze_cmd->add_option("input", input, "LFA file")->required();
  analyze_cmd->add_option("--snr-levels", levels, "SNR bin centres (default: from the file)")->delimiter(',');
  add_common(analyze_cmd, analyze_opts);

  CommonOptions ws_opts;
  auto* ws_cmd = app.add_subcommand("train-ws", "Train, freeze and export a linguistic weighted-sum aggregator");
  ws_cmd->add_option("input", input, "LFA file")->required();
  ws_cmd->add_flag("--hybrid", hybrid, "Leave only layer 0 trainable downstream");
  add_common(ws_cmd, ws_opts);

  CommonOptions dws_opts;
  auto* dws_cmd = app.add_subcommand("train-dws", "Train, freeze and export a linguistic dynamic aggregator");
  dws_cmd->add_option("input", input, "LFA file")->required();
  dws_cmd->add_flag("--hybrid", hybrid, "Leave only b_0 trainable downstream");
  dws_cmd->add_option("--key-dim", key_dim, "Query/key width (default: D)");
  add_common(dws_cmd, dws_opts);

  CommonOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "MI bound of a frozen aggregator's fused view");
  eval_cmd->add_option("aggregator", agg_path, "Aggregator JSON")->required();
  eval_cmd->add_option("input", input, "LFA file")->required();
  add_common(eval_cmd, eval_opts);

  auto* dump_cmd = app.add_subcommand("dump-dynamic", "Per-frame DWS layer weights as CSV");
  dump_cmd->add_option("aggregator", agg_path, "DWS aggregator JSON")->required();
  dump_cmd->add_option("input", input, "LFA file")->required();
  dump_cmd->add_option("--out", out, "Output CSV");

  auto* compare_cmd = app.add_subcommand("compare-weights", "Normalized per-layer weights of several aggregators");
  compare_cmd->add_option("aggregators", agg_paths, "Aggregator JSON files")->required();
  compare_cmd->add_option("--labels", labels, "Row labels, comma separated")->delimiter(',');
  compare_cmd->add_option("--reference", reference, "LFA file for DWS mean weights");
  compare_cmd->add_option("--out", out, "Output CSV");

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
    return kInput;
  }

  const auto start = std::chrono::steady_clock::now();
  Manifest manifest;
  fs::path primary;
  try {
    int code = kOk;
    if (*validate_cmd) return cmd_validate(input);
    if (*synth_cmd) {
      manifest.subcommand = "synth";
      synth.classes_given = synth_cmd->count("--classes") > 0;
      code = cmd_synth(synth, manifest, primary);
    } else if (*analyze_cmd) {
      manifest.subcommand = "analyze";
      code = cmd_analyze(input, levels, analyze_opts, manifest, primary);
    } else if (*ws_cmd) {
      manifest.subcommand = "train-ws";
      code = cmd_train(false, input, hybrid, 0, ws_opts, manifest, primary);
    } else if (*dws_cmd) {
      manifest.subcommand = "train-dws";
      code = cmd_train(true, input, hybrid, key_dim, dws_opts, manifest, primary);
    } else if (*eval_cmd) {
      manifest.subcommand = "eval";
      code = cmd_eval(agg_path, input, eval_opts, manifest, primary);
    } else if (*dump_cmd) {
      manifest.subcommand = "dump-dynamic";
      code = cmd_dump_dynamic(agg_path, input, out, manifest, primary);
    } else if (*compare_cmd) {
      manifest.subcommand = "compare-weights";
      code = cmd_compare(agg_paths, labels, reference, out, manifest, primary);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest.write(primary, seconds);
    return code;
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged at epoch " << e.epoch() << ": " << e.what() << '\n';
    return kNumerical;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}
