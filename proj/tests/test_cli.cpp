#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "lingagg/aggregation.hpp"
#include "lingagg/json_io.hpp"
#include "lingagg/lfa.hpp"
#include "support.hpp"

using namespace lingagg;
using support::run_cli;

namespace {

const std::vector<std::string> kFast{"--epochs=2", "--probe-hidden=16,16"};

std::vector<std::string> with(std::vector<std::string> args, const std::vector<std::string>& extra) {
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

json read_json(const std::filesystem::path& p) { return json::parse(support::read_file(p)); }

}  // namespace

TEST_CASE("cli: usage and input errors exit 2") {
  CHECK(run_cli({}).exit_code == 2);
  CHECK(run_cli({"no-such-command"}).exit_code == 2);
  const auto missing = run_cli({"analyze", "does/not/exist.lfa"});
  CHECK(missing.exit_code == 2);
  CHECK(missing.output.find("exist.lfa") != std::string::npos);
  CHECK(run_cli({"synth", "--family=binary_channel", "--p=0.7", "--out=x.lfa"}).exit_code == 2);
  CHECK(run_cli({"synth", "--family=speech"}).exit_code == 2);
}

TEST_CASE("cli: synth binary channel and validate") {
  const auto dir = support::scratch_dir("cli_synth");
  const auto a = (dir / "a.lfa").string();
  const auto b = (dir / "b.lfa").string();
  const std::vector<std::string> args{"synth", "--family", "binary_channel", "--p", "0.1", "--n", "20000", "--seed",
                                      "3"};
  REQUIRE(run_cli(with(args, {"--out", a})).exit_code == 0);
  REQUIRE(run_cli(with(args, {"--out", b})).exit_code == 0);
  CHECK(support::read_file(a) == support::read_file(b));

  const auto ds = read_lfa(a);
  CHECK(ds.n_frames == 20000);
  CHECK(ds.vocab_size() == 2);

  CHECK(std::filesystem::exists(a + ".manifest.json"));
  std::filesystem::remove(a + ".manifest.json");
  const auto ok = run_cli({"validate", a});
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("FAIL") == std::string::npos);
  CHECK(ok.output.find("PASS labels_in_vocab") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(a + ".manifest.json"));

  // Corrupt one label past the vocabulary.
  std::string bytes = support::read_file(a);
  bytes[bytes.size() - 4] = 7;
  {
    std::ofstream out(dir / "bad.lfa", std::ios::binary);
    out << bytes;
  }
  const auto bad = run_cli({"validate", (dir / "bad.lfa").string()});
  CHECK(bad.exit_code == 2);
  CHECK(bad.output.find("FAIL labels_in_vocab") != std::string::npos);

  {
    std::ofstream out(dir / "junk.lfa", std::ios::binary);
    out << "JUNKJUNKJUNK";
  }
  const auto junk = run_cli({"validate", (dir / "junk.lfa").string()});
  CHECK(junk.exit_code == 2);
  CHECK(junk.output.find("FAIL structure") != std::string::npos);
}

TEST_CASE("cli: analyze CSV, bits column and manifest replay") {
  const auto dir = support::scratch_dir("cli_analyze");
  const auto lfa = (dir / "snr.lfa").string();
  REQUIRE(run_cli({"synth", "--family=noisy_snr", "--n=700", "--layers=3", "--dim=4", "--classes=4",
                   "--informative=1", "--seed=2", "--out=" + lfa})
              .exit_code == 0);

  const auto csv = (dir / "snr.mi.csv").string();
  const auto r = run_cli(with({"analyze", lfa, "--out=" + csv, "--seed=1"}, kFast));
  REQUIRE(r.exit_code == 0);
  auto rows = lines_of(support::read_file(csv));
  CHECK(rows[0] == "context,layer,snr_bin,h_y_nats,ce_nats,mi_nats,n_eval");
  // 3 layer rows + 3 x 7 SNR rows + 3 averages.
  CHECK(rows.size() == 1 + 3 + 21 + 3);

  const auto bits_csv = (dir / "bits.csv").string();
  REQUIRE(run_cli(with({"analyze", lfa, "--bits", "--out=" + bits_csv, "--seed=1"}, kFast)).exit_code == 0);
  CHECK(lines_of(support::read_file(bits_csv))[0] == "context,layer,snr_bin,h_y_nats,ce_nats,mi_nats,mi_bits,n_eval");

  const json manifest = read_json(csv + ".manifest.json");
  CHECK(manifest["subcommand"] == "analyze");
  CHECK(manifest["seed"] == 1);
  CHECK(manifest["inputs"][0]["path"] == lfa);
  CHECK(manifest["outputs"][0] == csv);
  CHECK(manifest.contains("wall_clock_seconds"));
  CHECK(manifest["config"]["averaging"].get<std::string>().find("unweighted") != std::string::npos);

  const std::string before = support::read_file(csv);
  std::filesystem::remove(csv);
  const auto replay = run_cli(manifest["argv"].get<std::vector<std::string>>());
  REQUIRE(replay.exit_code == 0);
  CHECK(support::read_file(csv) == before);
}

TEST_CASE("cli: train, eval, dump and compare") {
  const auto dir = support::scratch_dir("cli_train");
  const auto lfa = (dir / "sw.lfa").string();
  REQUIRE(run_cli({"synth", "--family=layer_switching", "--n=600", "--layers=3", "--dim=6", "--classes=3",
                   "--informative=0,2", "--segment=30", "--seed=4", "--out=" + lfa})
              .exit_code == 0);

  const auto ws = (dir / "ws.json").string();
  const auto hyb = (dir / "hyb.json").string();
  const auto dws = (dir / "dws.json").string();
  REQUIRE(run_cli(with({"train-ws", lfa, "--out=" + ws}, kFast)).exit_code == 0);
  REQUIRE(run_cli(with({"train-ws", lfa, "--hybrid", "--out=" + hyb}, kFast)).exit_code == 0);
  REQUIRE(run_cli(with({"train-dws", lfa, "--key-dim=3", "--out=" + dws}, kFast)).exit_code == 0);

  const json jw = read_json(ws);
  CHECK(jw["mode"] == "linguistic");
  CHECK(jw["frozen"] == true);
  CHECK(jw["trainable_mask"]["logits"] == json{false, false, false});
  const json jh = read_json(hyb);
  CHECK(jh["mode"] == "hybrid");
  CHECK(jh["trainable_mask"]["logits"] == json{true, false, false});
  CHECK(jh["logits"] == jw["logits"]);
  const json jd = read_json(dws);
  CHECK(jd["type"] == "dws");
  CHECK(jd["d_k"] == 3);

  const std::string ws_bytes = support::read_file(ws);
  const auto eval_csv = (dir / "ws.eval.csv").string();
  const auto e = run_cli(with({"eval", ws, lfa, "--out=" + eval_csv}, kFast));
  REQUIRE(e.exit_code == 0);
  CHECK(support::read_file(ws) == ws_bytes);
  const auto eval_rows = lines_of(support::read_file(eval_csv));
  REQUIRE(eval_rows.size() == 2);
  CHECK(eval_rows[1].rfind("ws:linguistic:", 0) == 0);

  const auto dump_ws = run_cli({"dump-dynamic", ws, lfa});
  CHECK(dump_ws.exit_code == 2);
  CHECK(dump_ws.output.find("compare-weights") != std::string::npos);

  const auto frames = (dir / "frames.csv").string();
  REQUIRE(run_cli({"dump-dynamic", dws, lfa, "--out=" + frames}).exit_code == 0);
  const auto frame_rows = lines_of(support::read_file(frames));
  REQUIRE(frame_rows.size() == 601);
  CHECK(frame_rows[0] == "frame,snr_db,w_0,w_1,w_2");
  for (std::size_t i = 1; i < frame_rows.size(); ++i) {
    std::istringstream in(frame_rows[i]);
    std::string cell;
    std::getline(in, cell, ',');
    std::getline(in, cell, ',');
    CHECK(cell.empty());
    double total = 0.0;
    while (std::getline(in, cell, ',')) total += std::stod(cell);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
  }

  const auto table = (dir / "weights.csv").string();
  const auto cmp = run_cli({"compare-weights", ws, hyb, dws, "--labels=a,b,c", "--reference=" + lfa, "--out=" + table});
  REQUIRE(cmp.exit_code == 0);
  const auto t = lines_of(support::read_file(table));
  REQUIRE(t.size() == 4);
  CHECK(t[0] == "label,type,mode,normalized_from_raw,w_0,w_1,w_2");
  CHECK(t[1].rfind("a,ws,linguistic,0,", 0) == 0);
  CHECK(t[2].rfind("b,ws,hybrid,0,", 0) == 0);
  CHECK(t[3].rfind("c,dws,linguistic,0,", 0) == 0);
  CHECK(run_cli({"compare-weights", ws, dws}).exit_code == 2);

  // Reruns with the same seed are byte-identical.
  const auto ws2 = (dir / "ws2.json").string();
  REQUIRE(run_cli(with({"train-ws", lfa, "--out=" + ws2}, kFast)).exit_code == 0);
  CHECK(support::read_file(ws2) == ws_bytes);
}

TEST_CASE("cli: seed falls back to LING_AGG_SEED") {
  const auto dir = support::scratch_dir("cli_seed");
  const auto a = (dir / "a.lfa").string();
  const auto b = (dir / "b.lfa").string();
  const auto c = (dir / "c.lfa").string();
  REQUIRE(run_cli({"synth", "--n=50", "--out=" + a}, "LING_AGG_SEED=17").exit_code == 0);
  REQUIRE(run_cli({"synth", "--n=50", "--seed=17", "--out=" + b}).exit_code == 0);
  REQUIRE(run_cli({"synth", "--n=50", "--out=" + c}, "LING_AGG_SEED=18").exit_code == 0);
  CHECK(support::read_file(a) == support::read_file(b));
  CHECK(support::read_file(a) != support::read_file(c));
  CHECK(read_json(a + ".manifest.json")["seed"] == 17);
  // The flag wins over the environment.
  REQUIRE(run_cli({"synth", "--n=50", "--seed=17", "--out=" + c}, "LING_AGG_SEED=18").exit_code == 0);
  CHECK(support::read_file(a) == support::read_file(c));
  CHECK(run_cli({"synth", "--n=50", "--out=" + c}, "LING_AGG_SEED=abc").exit_code == 2);
}

TEST_CASE("cli: divergence exits 3") {
  const auto dir = support::scratch_dir("cli_diverge");
  auto ds = support::random_dataset(200, 2, 4, 3, 1);
  for (auto& v : ds.features) v *= 1e30f;
  write_lfa(ds, dir / "huge.lfa");
  const auto r = run_cli({"train-ws", (dir / "huge.lfa").string(), "--lr=1e30", "--epochs=2", "--probe-hidden=8",
                          "--out=" + (dir / "x.json").string()});
  CHECK(r.exit_code == 3);
  CHECK(r.output.find("epoch") != std::string::npos);
}
