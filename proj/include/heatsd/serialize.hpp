#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "heatsd/closed_loop.hpp"
#include "heatsd/errors.hpp"
#include "heatsd/feedback.hpp"
#include "heatsd/gram.hpp"
#include "heatsd/model.hpp"
#include "heatsd/version.hpp"

namespace heatsd {

using nlohmann::json;

// Shortest decimal that round-trips to the same double; the backbone of the
// bit-identical-outputs guarantee.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  require(res.ec == std::errc(), ErrorKind::io, "double formatting failed");
  return std::string(buf, res.ptr);
}

// --- content hashing ------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xF];
    h >>= 4;
  }
  return s;
}

// Identity of a discretized model: every defining number in shortest form.
inline std::string model_hash(const ModelConfig& c) {
  std::string s = "L=" + format_double(c.domain_length) + ";n=" + std::to_string(c.n_grid) + ";V=";
  for (Eigen::Index i = 0; i < c.potential.size(); ++i) {
    if (i) s += ",";
    s += format_double(c.potential[i]);
  }
  s += ";omega=" + format_double(c.omega.a) + "," + format_double(c.omega.b);
  s += ";omega1=" + format_double(c.omega1.a) + "," + format_double(c.omega1.b);
  return hash_hex(fnv1a64(s));
}

// --- atomic file output -----------------------------------------------------------

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::io, "cannot create directory " + dir.string());
}

// Write-to-temp then rename: readers never observe a half-written file.
inline void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot open " + tmp.string());
    out << content;
    out.flush();
    require(out.good(), ErrorKind::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorKind::io, "cannot rename " + tmp.string() + " to " + path.string());
}

// CSV: comma separators, header row, LF endings, leading comment tying the
// table to its manifest.
inline void write_csv(const std::filesystem::path& path, const std::string& manifest_hash,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::string out = "# manifest=" + manifest_hash + "\n";
  for (std::size_t i = 0; i < header.size(); ++i)
    out += (i ? "," : "") + header[i];
  out += "\n";
  for (const auto& row : rows) {
    require(row.size() == header.size(), ErrorKind::io, "csv row width mismatch");
    for (std::size_t i = 0; i < row.size(); ++i)
      out += (i ? "," : "") + row[i];
    out += "\n";
  }
  atomic_write_text(path, out);
}

// --- JSON codecs -------------------------------------------------------------------

inline json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vector_from_json(const json& a) {
  require(a.is_array(), ErrorKind::parse, "expected a JSON array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(a[i].is_number(), ErrorKind::parse, "expected a JSON array of numbers");
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  }
  return v;
}

inline const char* mask_name(Mask m) {
  return m == Mask::control ? "control" : "observation";
}

inline json to_json(const CalibratedConstant& cal, const std::string& mdl_hash) {
  json samples = json::array();
  for (const CalibrationSample& s : cal.samples)
    samples.push_back({{"mask", mask_name(s.mask)},
                       {"M", s.M},
                       {"lambda_min", s.lambda_min},
                       {"ratio", s.ratio}});
  return {{"C0", cal.C0},
          {"safety_factor", cal.safety_factor},
          {"per_M_ratios", samples},
          {"model_hash", mdl_hash},
          {"version", std::string(kVersion)}};
}

inline CalibratedConstant calibration_from_json(const json& j) {
  CalibratedConstant cal;
  try {
    cal.C0 = j.at("C0").get<double>();
    cal.safety_factor = j.at("safety_factor").get<double>();
    for (const json& s : j.at("per_M_ratios")) {
      CalibrationSample cs;
      cs.mask = s.at("mask").get<std::string>() == "control" ? Mask::control
                                                             : Mask::observation;
      cs.M = s.at("M").get<int>();
      cs.lambda_min = s.at("lambda_min").get<double>();
      cs.ratio = s.at("ratio").get<double>();
      cal.samples.push_back(cs);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::parse, std::string("bad calibration record: ") + e.what());
  }
  return cal;
}

inline json to_json(const FeedbackParameters& p) {
  return {{"gamma", p.gamma},       {"T", p.T},
          {"c_hat_p", p.c_hat_p},   {"N", p.N},
          {"M", p.M},               {"eps0", p.eps0},
          {"C_gamma_T", p.C_gamma_T},
          {"C0", p.C0},             {"safety_factor", p.safety_factor}};
}

inline FeedbackParameters parameters_from_json(const json& j) {
  FeedbackParameters p;
  p.gamma = j.at("gamma").get<double>();
  p.T = j.at("T").get<double>();
  p.c_hat_p = j.at("c_hat_p").get<double>();
  p.N = j.at("N").get<int>();
  p.M = j.at("M").get<int>();
  p.eps0 = j.at("eps0").get<double>();
  p.C_gamma_T = j.at("C_gamma_T").get<double>();
  p.C0 = j.at("C0").get<double>();
  p.safety_factor = j.at("safety_factor").get<double>();
  return p;
}

inline json to_json(const FeedbackLaw& law, const std::string& mdl_hash) {
  json f = json::array(), h = json::array();
  for (const auto& v : law.f_list) f.push_back(to_json(v));
  for (const auto& v : law.h_list) h.push_back(to_json(v));
  return {{"params", to_json(law.params)},
          {"f_list", f},
          {"h_list", h},
          {"op_norm", law.op_norm},
          {"coercivity_check_conclusive", law.coercivity_check_conclusive},
          {"model_hash", mdl_hash},
          {"version", std::string(kVersion)}};
}

inline FeedbackLaw law_from_json(const json& j, const std::string& expected_model_hash) {
  FeedbackLaw law;
  try {
    const std::string stored = j.at("model_hash").get<std::string>();
    require(stored == expected_model_hash, ErrorKind::config,
            "law was synthesized for a different model (hash " + stored + ")");
    law.params = parameters_from_json(j.at("params"));
    for (const json& v : j.at("f_list")) law.f_list.push_back(vector_from_json(v));
    for (const json& v : j.at("h_list")) law.h_list.push_back(vector_from_json(v));
    law.op_norm = j.at("op_norm").get<double>();
    law.coercivity_check_conclusive = j.at("coercivity_check_conclusive").get<bool>();
  } catch (const json::exception& e) {
    fail(ErrorKind::parse, std::string("bad law record: ") + e.what());
  }
  require(law.f_list.size() == law.h_list.size(), ErrorKind::parse,
          "law record has mismatched profile counts");
  return law;
}

inline json to_json(const DecayReport& rep) {
  json v = json::array();
  for (const DecayViolation& x : rep.violations)
    v.push_back({{"n", x.n}, {"t", x.t}, {"ratio", x.ratio}});
  return {{"pass", rep.pass},
          {"contraction_threshold", rep.contraction_threshold},
          {"worst_two_period_ratio", rep.worst_two_period_ratio},
          {"worst_bound_margin", rep.worst_bound_margin},
          {"violations", v}};
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::parse, path.string() + ": " + e.what());
  }
  return j;
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  atomic_write_text(path, j.dump(2) + "\n");
}

}  // namespace heatsd
