#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "heatsd/experiment.hpp"
#include "support/test_models.hpp"

using namespace heatsd;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("heatsd_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const char* kDeskToml = R"(# desk experiment
domain_length = 3.141592653589793
n_grid = 400
potential = -2.0
omega = [0.6283185307179586, 1.5707963267948966]
omega1 = [1.7278759594743864, 2.670353755551324]
gamma = 0.5
T = 1.0
seeds = [1]
safety_factor = 1.1
)";

ExperimentConfig small_config(const fs::path& outdir) {
  TomlTable t = parse_toml(kDeskToml);
  ExperimentConfig cfg = parse_experiment_config(t);
  cfg.model.n_grid = 80;
  cfg.output_dir = outdir.string();
  return cfg;
}

}  // namespace

TEST_CASE("flat TOML parsing") {
  const TomlTable t = parse_toml(
      "a = 1.5   # comment\n"
      "b = \"text with # inside\"\n"
      "c = true\n"
      "d = [1, 2.5, 1_000,]\n"
      "e = [\"x\", \"y\"]\n"
      "f = -1e-3\n");
  CHECK(t.at("a").number == 1.5);
  CHECK(t.at("b").str == "text with # inside");
  CHECK(t.at("c").boolean == true);
  REQUIRE(t.at("d").numbers.size() == 3);
  CHECK(t.at("d").numbers[2] == 1000.0);
  CHECK(t.at("e").strings == std::vector<std::string>{"x", "y"});
  CHECK(t.at("f").number == -1e-3);
  CHECK(t.at("f").line == 6);
}

TEST_CASE("TOML parser rejects what the schema does not use") {
  auto kind_of = [](const std::string& text) {
    try {
      parse_toml(text);
      return std::string("none");
    } catch (const Error& e) {
      return std::string(to_string(e.kind())) + "|" + e.what();
    }
  };
  CHECK(kind_of("[section]\nx = 1\n").find("parse") == 0);
  CHECK(kind_of("[section]\n").find("line 1") != std::string::npos);
  CHECK(kind_of("[section]\n").find("sections are not supported") != std::string::npos);
  CHECK(kind_of("x = 1\nx = 2\n").find("duplicate key") != std::string::npos);
  CHECK(kind_of("x = 1\nx = 2\n").find("line 2") != std::string::npos);
  CHECK(kind_of("x = zebra\n").find("not a number") != std::string::npos);
  CHECK(kind_of("x = \"abc\n").find("unterminated string") != std::string::npos);
  CHECK(kind_of("x = [1, \"two\"]\n").find("mixed-type array") != std::string::npos);
  CHECK(kind_of("x = []\n").find("empty arrays") != std::string::npos);
  CHECK(kind_of("x = [[1], [2]]\n").find("nested") != std::string::npos);
  CHECK(kind_of("x 1\n").find("expected 'key = value'") != std::string::npos);
  CHECK(kind_of("bad key = 1\n").find("invalid key") != std::string::npos);
  CHECK(kind_of("x = 1\ny = 2\n") == "none");
}

TEST_CASE("experiment config parsing") {
  const ExperimentConfig cfg = parse_experiment_config(parse_toml(kDeskToml));
  CHECK(cfg.model.n_grid == 400);
  CHECK(cfg.model.domain_length == fixtures::kPi);
  CHECK(cfg.model.potential.size() == 1);
  CHECK(cfg.model.potential[0] == -2.0);
  CHECK(cfg.model.omega.a == Catch::Approx(0.2 * fixtures::kPi).epsilon(1e-15));
  CHECK(cfg.gamma.has_value());
  CHECK(*cfg.gamma == 0.5);
  REQUIRE(cfg.T_grid.size() == 1);
  CHECK(cfg.T_grid[0] == 1.0);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1});
  CHECK(cfg.safety_factor == 1.1);
  CHECK(cfg.output_dir == "out");  // default
}

TEST_CASE("experiment config rejections carry kind and location") {
  auto reject = [](const std::string& extra, const std::string& needle) {
    std::string text = kDeskToml;
    text += extra;
    try {
      parse_experiment_config(parse_toml(text));
      CAPTURE(extra);
      FAIL("config accepted");
    } catch (const Error& e) {
      CAPTURE(extra, e.what());
      CHECK(e.kind() == ErrorKind::config);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  reject("typo_key = 3\n", "unknown key 'typo_key'");
  reject("typo_key = 3\n", "line 11");
  reject("T_grid = [1, 2]\n", "not both");

  auto reject_full = [](const std::string& text, const std::string& needle) {
    try {
      parse_experiment_config(parse_toml(text));
      FAIL("config accepted");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::config);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  std::string no_T(kDeskToml);
  no_T.replace(no_T.find("T = 1.0"), 7, "T_grid = [2.0, 1.0]");
  reject_full(no_T, "strictly increasing");
  std::string low_safety(kDeskToml);
  low_safety.replace(low_safety.find("safety_factor = 1.1"),
                     std::string("safety_factor = 1.1").size(),
                     "safety_factor = 0.5");
  reject_full(low_safety, "safety_factor");
  std::string bad_seed(kDeskToml);
  bad_seed.replace(bad_seed.find("seeds = [1]"), 11, "seeds = [1.5]");
  reject_full(bad_seed, "seeds");
  std::string no_len(kDeskToml);
  no_len.replace(no_len.find("domain_length"), std::string("domain_length").size(),
                 "domain_lenght");
  reject_full(no_len, "unknown key");
}

TEST_CASE("shortest round-trip doubles") {
  for (double v : {0.1, 1.0 / 3.0, -2.0, 1e-300, 12345.6789, 3.141592653589793}) {
    const std::string s = format_double(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1.0) == "1");
}

TEST_CASE("content hashes") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hash_hex(0xabcULL) == "0000000000000abc");
  CHECK(hash_hex(fnv1a64("a")) == "af63dc4c8601ec8c");

  const ExperimentConfig cfg = parse_experiment_config(parse_toml(kDeskToml));
  const std::string h = config_hash(cfg);
  CHECK(h.size() == 16);
  ExperimentConfig moved = cfg;
  moved.output_dir = "elsewhere";  // result-neutral field
  CHECK(config_hash(moved) == h);
  ExperimentConfig changed = cfg;
  changed.gamma = 0.7;
  CHECK(config_hash(changed) != h);
  CHECK(model_hash(cfg.model) == model_hash(moved.model));
}

TEST_CASE("manifest identity excludes the timestamp") {
  const ExperimentConfig cfg = parse_experiment_config(parse_toml(kDeskToml));
  RunManifest a = make_manifest(cfg, "none");
  RunManifest b = a;
  b.timestamp_utc = "1999-01-01T00:00:00Z";
  CHECK(manifest_hash(a) == manifest_hash(b));
  b.calibration = "C0=3;safety=1.1";
  CHECK(manifest_hash(a) != manifest_hash(b));
  const json j = to_json(a);
  CHECK(j.at("manifest_hash").get<std::string>() == manifest_hash(a));
  CHECK(j.contains("timestamp_utc"));
  CHECK(j.at("tool_version").get<std::string>() == std::string(kVersion));
}

TEST_CASE("atomic text and CSV layout") {
  const fs::path dir = fresh_dir("io_csv");
  atomic_write_text(dir / "t.txt", "hello\n");
  CHECK(slurp(dir / "t.txt") == "hello\n");
  CHECK_FALSE(fs::exists(dir / "t.txt.tmp"));

  write_csv(dir / "table.csv", "deadbeefdeadbeef", {"t", "norm"},
            {{"0", "1"}, {"0.5", "0.25"}});
  CHECK(slurp(dir / "table.csv") ==
        "# manifest=deadbeefdeadbeef\nt,norm\n0,1\n0.5,0.25\n");
  CHECK_THROWS_AS(write_csv(dir / "bad.csv", "h", {"a", "b"}, {{"1"}}), Error);
}

TEST_CASE("JSON codecs round-trip bit-exactly") {
  Eigen::VectorXd v(4);
  v << 0.1, -2.0 / 3.0, 1e-200, 5.0;
  const Eigen::VectorXd w = vector_from_json(to_json(v));
  CHECK((v - w).norm() == 0.0);
  CHECK_THROWS_AS(vector_from_json(json{{"not", "array"}}), Error);

  const auto& mdl = fixtures::small_model();
  const CalibratedConstant cal =
      calibrate_C0(mdl, default_calibration_range(mdl, 8), 1.25);
  const CalibratedConstant cal2 =
      calibration_from_json(to_json(cal, model_hash(fixtures::desk_config())));
  CHECK(cal2.C0 == cal.C0);
  CHECK(cal2.safety_factor == cal.safety_factor);
  REQUIRE(cal2.samples.size() == cal.samples.size());
  for (std::size_t i = 0; i < cal.samples.size(); ++i) {
    CHECK(cal2.samples[i].mask == cal.samples[i].mask);
    CHECK(cal2.samples[i].M == cal.samples[i].M);
    CHECK(cal2.samples[i].lambda_min == cal.samples[i].lambda_min);
    CHECK(cal2.samples[i].ratio == cal.samples[i].ratio);
  }
}

TEST_CASE("feedback law records round-trip and refuse foreign models") {
  const auto& mdl = fixtures::small_model();
  auto cfg = fixtures::desk_config();
  cfg.n_grid = 80;
  const CalibratedConstant cal =
      calibrate_C0(mdl, default_calibration_range(mdl, 8), 1.1);
  const FeedbackLaw law = synthesize(mdl, 0.5, 2.0, cal);

  const json j = to_json(law, model_hash(cfg));
  const FeedbackLaw back = law_from_json(j, model_hash(cfg));
  CHECK(back.op_norm == law.op_norm);
  CHECK(back.params.eps0 == law.params.eps0);
  CHECK(back.params.M == law.params.M);
  REQUIRE(back.f_list.size() == law.f_list.size());
  for (std::size_t i = 0; i < law.f_list.size(); ++i) {
    CHECK((back.f_list[i] - law.f_list[i]).norm() == 0.0);
    CHECK((back.h_list[i] - law.h_list[i]).norm() == 0.0);
  }

  try {
    law_from_json(j, "0123456789abcdef");
    FAIL("foreign law accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
  json crippled = j;
  crippled.erase("op_norm");
  CHECK_THROWS_AS(law_from_json(crippled, model_hash(cfg)), Error);
}

TEST_CASE("initial state specifications") {
  const auto& mdl = fixtures::small_model();
  const StateVector m3 = cmd_detail::parse_y0(mdl, "mode:3", 1);
  CHECK(m3[2] == 1.0);
  CHECK(m3.norm() == 1.0);
  const StateVector r5a = cmd_detail::parse_y0(mdl, "random:5", 1);
  const StateVector r5b = cmd_detail::parse_y0(mdl, "random:5", 99);
  CHECK((r5a - r5b).norm() == 0.0);  // seed comes from the spec, not the fallback
  CHECK(r5a.norm() == Catch::Approx(1.0).epsilon(1e-14));
  const StateVector fallback = cmd_detail::parse_y0(mdl, "", 7);
  CHECK((fallback - cmd_detail::parse_y0(mdl, "random:7", 0)).norm() == 0.0);

  const fs::path dir = fresh_dir("io_y0");
  write_json_file(dir / "y0.json", to_json(r5a));
  const StateVector from_file =
      cmd_detail::parse_y0(mdl, "file:" + (dir / "y0.json").string(), 1);
  CHECK((from_file - r5a).norm() == 0.0);

  CHECK_THROWS_AS(cmd_detail::parse_y0(mdl, "mode:0", 1), Error);
  CHECK_THROWS_AS(cmd_detail::parse_y0(mdl, "mode:4000", 1), Error);
  CHECK_THROWS_AS(cmd_detail::parse_y0(mdl, "gibberish", 1), Error);
}

TEST_CASE("command drivers write their artifacts") {
  const fs::path dir = fresh_dir("io_cmd");
  const ExperimentConfig cfg = small_config(dir);
  std::ostringstream out;

  CHECK(cmd_model_info(cfg, out) == 0);
  CHECK(fs::exists(dir / "model_info.json"));
  CHECK(fs::exists(dir / "manifest.json"));
  const json info = read_json_file(dir / "model_info.json");
  CHECK(info.at("n").get<int>() == 80);
  CHECK(info.at("gamma0").get<double>() == 2.0);
  CHECK(info.at("nonpositive_count").get<int>() == 1);
  CHECK(out.str().find("gamma0 = 2") != std::string::npos);

  CHECK(cmd_calibrate(cfg, out, 8, std::nullopt) == 0);
  const json calj = read_json_file(dir / "calibration.json");
  CHECK(calj.at("C0").get<double>() > 0.0);
  CHECK(calj.at("model_hash").get<std::string>() == model_hash(cfg.model));

  // Synthesize reuses the stored calibration, then simulate reuses the law.
  CHECK(cmd_synthesize(cfg, out, std::nullopt, 2.0,
                       (dir / "calibration.json").string()) == 0);
  const json lawj = read_json_file(dir / "law.json");
  CHECK(lawj.at("params").at("T").get<double>() == 2.0);
  CHECK(cmd_simulate(cfg, out, std::nullopt, "mode:1", 3, std::nullopt,
                     std::nullopt) == 0);
  CHECK(fs::exists(dir / "trajectory.csv"));
  const std::string csv = slurp(dir / "trajectory.csv");
  CHECK(csv.rfind("# manifest=", 0) == 0);
  CHECK(csv.find("t,norm\n") != std::string::npos);
  const json rep = read_json_file(dir / "report.json");
  CHECK(rep.at("pass").get<bool>());

  // Verification harness over the same config.
  CHECK(cmd_verify(cfg, out, std::nullopt) == 0);
  CHECK(out.str().find("[ok]") != std::string::npos);
  CHECK(out.str().find("[FAIL]") == std::string::npos);
}

TEST_CASE("simulate rejects a law synthesized for another model") {
  const fs::path dir = fresh_dir("io_foreign");
  const ExperimentConfig cfg = small_config(dir);
  std::ostringstream out;
  CHECK(cmd_synthesize(cfg, out, std::nullopt, 2.0, std::nullopt) == 0);
  ExperimentConfig other = cfg;
  other.model.n_grid = 96;
  try {
    cmd_simulate(other, out, (dir / "law.json").string(), "mode:1", 2,
                 std::nullopt, std::nullopt);
    FAIL("foreign law accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
}
