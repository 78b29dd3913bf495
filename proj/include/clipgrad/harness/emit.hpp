#pragma once

// Deterministic CSV/JSON serialization of traces, aggregates, sweep tables
// and bound reports, with matching parsers.
//
// Floats are written with %.17g. Non-finite values appear as inf, -inf and
// nan (bare in CSV, quoted strings in JSON). Absent CSV values are empty.

#include <cerrno>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "clipgrad/error.hpp"
#include "clipgrad/harness/config.hpp"
#include "clipgrad/harness/runner.hpp"
#include "clipgrad/metrics.hpp"
#include "clipgrad/theory.hpp"
#include "clipgrad/version.hpp"

namespace clipgrad {

// ---------------------------------------------------------------------------
// Scalars
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view s) {
  const std::string str(s);
  if (str == "inf" || str == "+inf") return kInf;
  if (str == "-inf") return -kInf;
  if (str == "nan") return kNaN;
  char* end = nullptr;
  const double v = std::strtod(str.c_str(), &end);
  if (str.empty() || end != str.c_str() + str.size())
    throw ParseError("cannot parse number '" + str + "'");
  return v;
}

inline std::uint64_t parse_u64(std::string_view s) {
  const std::string str(s);
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(str.c_str(), &end, 10);
  if (str.empty() || str[0] == '-' || end != str.c_str() + str.size() || errno == ERANGE)
    throw ParseError("cannot parse integer '" + str + "'");
  return v;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

/// JSON value for a double; non-finite values become strings.
inline Json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

inline double json_to_double(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return parse_double(j.get<std::string>());
  throw ParseError("expected a number");
}

inline Json json_numbers(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(json_number(x));
  return a;
}

inline std::vector<double> json_to_doubles(const Json& j) {
  if (!j.is_array()) throw ParseError("expected an array of numbers");
  std::vector<double> v;
  v.reserve(j.size());
  for (const Json& x : j) v.push_back(json_to_double(x));
  return v;
}

namespace detail {

inline void write_json(std::string& out, const Json& j, int indent, int depth) {
  const std::string pad = indent > 0 ? "\n" + std::string(static_cast<std::size_t>(indent * (depth + 1)), ' ') : "";
  const std::string close = indent > 0 ? "\n" + std::string(static_cast<std::size_t>(indent * depth), ' ') : "";
  const char* sep = indent > 0 ? ": " : ":";
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out += ',';
        first = false;
        out += pad;
        out += Json(k).dump();
        out += sep;
        write_json(out, v, indent, depth + 1);
      }
      out += close;
      out += '}';
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      bool scalars = true;
      for (const Json& v : j) scalars = scalars && !v.is_structured();
      out += '[';
      bool first = true;
      for (const Json& v : j) {
        if (!first) out += scalars ? ", " : ",";
        first = false;
        if (!scalars) out += pad;
        write_json(out, v, indent, depth + 1);
      }
      if (!scalars) out += close;
      out += ']';
      return;
    }
    case Json::value_t::number_float:
      out += format_double(j.get<double>());
      return;
    default:
      out += j.dump();
      return;
  }
}

}  // namespace detail

/// Serializes with %.17g floats and stable key order.
inline std::string dump_json(const Json& j, int indent = 2) {
  std::string out;
  detail::write_json(out, j, indent, 0);
  out += '\n';
  return out;
}

inline Json parse_json_text(const std::string& text, const std::string& context) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(context + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// CSV helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> f;
  std::size_t start = 0;
  for (;;) {
    const std::size_t c = line.find(',', start);
    if (c == std::string_view::npos) {
      f.push_back(line.substr(start));
      return f;
    }
    f.push_back(line.substr(start, c - start));
    start = c + 1;
  }
}

inline std::vector<std::string_view> csv_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t e = text.find('\n', start);
    if (e == std::string_view::npos) e = text.size();
    std::string_view l = text.substr(start, e - start);
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (!l.empty()) lines.push_back(l);
    start = e + 1;
  }
  return lines;
}

inline std::vector<std::vector<std::string_view>> parse_csv(std::string_view text, std::string_view header,
                                                           std::string_view what) {
  const auto lines = csv_lines(text);
  if (lines.empty() || lines[0] != header)
    throw ParseError(std::string(what) + ": unexpected CSV header");
  const std::size_t width = split_csv_line(header).size();
  std::vector<std::vector<std::string_view>> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = split_csv_line(lines[i]);
    if (f.size() != width)
      throw ParseError(std::string(what) + ": row " + std::to_string(i) + " has " + std::to_string(f.size()) +
                       " fields, expected " + std::to_string(width));
    rows.push_back(std::move(f));
  }
  return rows;
}

inline std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline std::optional<double> parse_opt(std::string_view s) {
  if (s.empty()) return std::nullopt;
  return parse_double(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

inline constexpr std::string_view kTraceHeader = "k,fgap,dist,dnorm,alpha,gamma,batch,Wk,Vk,moreau_gradsq,diverged";

inline std::string trace_to_csv(const Trace& t) {
  std::string out(kTraceHeader);
  out += '\n';
  for (const TraceRecord& r : t.records) {
    out += std::to_string(r.k);
    out += ',' + format_double(r.fgap);
    out += ',' + detail::opt_field(r.dist);
    out += ',' + detail::opt_field(r.dnorm);
    out += ',' + format_double(r.alpha);
    out += ',' + detail::opt_field(r.gamma);
    out += ',' + std::to_string(r.batch);
    out += ',' + detail::opt_field(r.W);
    out += ',' + detail::opt_field(r.V);
    out += ',' + detail::opt_field(r.moreau_gradsq);
    out += r.diverged ? ",1\n" : ",0\n";
  }
  return out;
}

/// Inverse of trace_to_csv; draws and clip factors are not part of the format.
inline Trace trace_from_csv(std::string_view text) {
  Trace t;
  for (const auto& f : detail::parse_csv(text, kTraceHeader, "trace")) {
    TraceRecord r;
    r.k = parse_u64(f[0]);
    r.fgap = parse_double(f[1]);
    r.dist = detail::parse_opt(f[2]);
    r.dnorm = detail::parse_opt(f[3]);
    r.alpha = parse_double(f[4]);
    r.gamma = detail::parse_opt(f[5]);
    r.batch = parse_u64(f[6]);
    r.W = detail::parse_opt(f[7]);
    r.V = detail::parse_opt(f[8]);
    r.moreau_gradsq = detail::parse_opt(f[9]);
    if (f[10] != "0" && f[10] != "1") throw ParseError("trace: diverged must be 0 or 1");
    r.diverged = f[10] == "1";
    t.records.push_back(std::move(r));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Aggregate
// ---------------------------------------------------------------------------

inline constexpr std::string_view kAggregateHeader =
    "epoch,gap_median,gap_p05,gap_p95,dist_median,dist_p05,dist_p95";

inline std::string aggregate_to_csv(const AggregateResult& a) {
  std::string out(kAggregateHeader);
  out += '\n';
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    out += std::to_string(a.epochs[i]);
    const Percentiles& g = a.gap[i];
    out += ',' + format_double(g.median) + ',' + format_double(g.p05) + ',' + format_double(g.p95);
    if (i < a.dist.size()) {
      const Percentiles& d = a.dist[i];
      out += ',' + format_double(d.median) + ',' + format_double(d.p05) + ',' + format_double(d.p95);
    } else {
      out += ",,,";
    }
    out += '\n';
  }
  return out;
}

/// Recovers the per-epoch series of an aggregate CSV.
inline AggregateResult aggregate_from_csv(std::string_view text) {
  AggregateResult a;
  for (const auto& f : detail::parse_csv(text, kAggregateHeader, "aggregate")) {
    a.epochs.push_back(parse_u64(f[0]));
    a.gap.push_back({parse_double(f[1]), parse_double(f[2]), parse_double(f[3])});
    if (!f[4].empty()) a.dist.push_back({parse_double(f[4]), parse_double(f[5]), parse_double(f[6])});
  }
  return a;
}

namespace detail {

inline Json percentiles_json(const Percentiles& p) {
  return Json{{"median", json_number(p.median)}, {"p05", json_number(p.p05)}, {"p95", json_number(p.p95)}};
}

inline Percentiles percentiles_from_json(const Json& j) {
  return {json_to_double(j.at("median")), json_to_double(j.at("p05")), json_to_double(j.at("p95"))};
}

inline Json series_json(const std::vector<Percentiles>& s) {
  std::vector<double> med, lo, hi;
  for (const Percentiles& p : s) {
    med.push_back(p.median);
    lo.push_back(p.p05);
    hi.push_back(p.p95);
  }
  return Json{{"median", json_numbers(med)}, {"p05", json_numbers(lo)}, {"p95", json_numbers(hi)}};
}

inline std::vector<Percentiles> series_from_json(const Json& j) {
  const auto med = json_to_doubles(j.at("median"));
  const auto lo = json_to_doubles(j.at("p05"));
  const auto hi = json_to_doubles(j.at("p95"));
  if (med.size() != lo.size() || med.size() != hi.size()) throw ParseError("aggregate: ragged series");
  std::vector<Percentiles> s;
  for (std::size_t i = 0; i < med.size(); ++i) s.push_back({med[i], lo[i], hi[i]});
  return s;
}

}  // namespace detail

inline Json aggregate_to_json(const AggregateResult& a) {
  Json j;
  j["tool_version"] = kToolVersion;
  j["trials"] = a.trials;
  j["divergence_count"] = a.divergence_count;
  j["epoch_size"] = a.epoch_size;
  j["epochs"] = a.epochs;
  j["gap"] = detail::series_json(a.gap);
  j["dist"] = a.dist.empty() ? Json(nullptr) : detail::series_json(a.dist);
  j["final_gap"] = detail::percentiles_json(a.final_gap);
  Json eps = Json::array();
  for (const EpsSummary& e : a.eps) {
    Json per = Json::array();
    for (const auto& q : e.per_trial) per.push_back(q ? Json(*q) : Json(nullptr));
    eps.push_back(Json{{"eps", json_number(e.eps)}, {"per_trial", per},
                       {"epochs", detail::percentiles_json(e.epochs)}});
  }
  j["eps"] = eps;
  j["trial_errors"] = a.trial_errors;
  return j;
}

inline AggregateResult aggregate_from_json(const Json& j) {
  try {
    AggregateResult a;
    a.trials = j.at("trials").get<std::uint64_t>();
    a.divergence_count = j.at("divergence_count").get<std::uint64_t>();
    a.epoch_size = j.at("epoch_size").get<std::uint64_t>();
    a.epochs = j.at("epochs").get<std::vector<std::uint64_t>>();
    a.gap = detail::series_from_json(j.at("gap"));
    if (!j.at("dist").is_null()) a.dist = detail::series_from_json(j.at("dist"));
    a.final_gap = detail::percentiles_from_json(j.at("final_gap"));
    for (const Json& e : j.at("eps")) {
      EpsSummary s{json_to_double(e.at("eps")), {}, detail::percentiles_from_json(e.at("epochs"))};
      for (const Json& q : e.at("per_trial"))
        s.per_trial.push_back(q.is_null() ? std::nullopt : std::optional<std::uint64_t>(q.get<std::uint64_t>()));
      a.eps.push_back(std::move(s));
    }
    a.trial_errors = j.at("trial_errors").get<std::vector<std::string>>();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("aggregate: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sweep table
// ---------------------------------------------------------------------------

inline constexpr std::string_view kSweepHeader =
    "alpha0,eps,epochs_median,epochs_p05,epochs_p95,divergence_count,trials";

inline std::string sweep_to_csv(const SweepTable& t) {
  std::string out(kSweepHeader);
  out += '\n';
  for (const SweepRow& r : t.rows) {
    out += format_double(r.alpha0) + ',' + format_double(r.eps) + ',' + format_double(r.epochs.median) + ',' +
           format_double(r.epochs.p05) + ',' + format_double(r.epochs.p95) + ',' +
           std::to_string(r.divergence_count) + ',' + std::to_string(r.trials) + '\n';
  }
  return out;
}

inline SweepTable sweep_from_csv(std::string_view text) {
  SweepTable t;
  for (const auto& f : detail::parse_csv(text, kSweepHeader, "sweep")) {
    t.rows.push_back({parse_double(f[0]), parse_double(f[1]),
                      {parse_double(f[2]), parse_double(f[3]), parse_double(f[4])},
                      parse_u64(f[5]), parse_u64(f[6])});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Bound report
// ---------------------------------------------------------------------------

inline Json bound_report_to_json(const BoundReport& r) {
  auto named = [](const BoundReport::Named& v) {
    Json o = Json::object();
    for (const auto& [k, x] : v) o[k] = json_number(x);
    return o;
  };
  Json j;
  j["tool_version"] = kToolVersion;
  j["bound"] = r.name;
  j["applicable"] = r.applicable;
  j["note"] = r.note;
  j["inputs"] = named(r.inputs);
  j["derived"] = named(r.derived);
  j["checkpoints"] = r.checkpoints;
  j["theory"] = json_numbers(r.theory);
  j["empirical"] = json_numbers(r.empirical);
  j["std_error"] = json_numbers(r.std_error);
  Json verdicts = Json::array();
  for (Verdict v : r.verdicts) verdicts.push_back(std::string(to_string(v)));
  j["verdicts"] = verdicts;
  const SlackStats s = r.slack();
  j["summary"] = Json{{"satisfied", r.count(Verdict::satisfied)},
                      {"violated", r.count(Verdict::violated)},
                      {"not_applicable", r.count(Verdict::not_applicable)},
                      {"satisfied_fraction", json_number(r.satisfied_fraction())},
                      {"slack", Json{{"min", json_number(s.min)}, {"mean", json_number(s.mean)},
                                     {"max", json_number(s.max)}}}};
  return j;
}

inline BoundReport bound_report_from_json(const Json& j) {
  try {
    BoundReport r;
    r.name = j.at("bound").get<std::string>();
    r.applicable = j.at("applicable").get<bool>();
    r.note = j.at("note").get<std::string>();
    for (const auto& [k, v] : j.at("inputs").items()) r.inputs.emplace_back(k, json_to_double(v));
    for (const auto& [k, v] : j.at("derived").items()) r.derived.emplace_back(k, json_to_double(v));
    r.checkpoints = j.at("checkpoints").get<std::vector<std::uint64_t>>();
    r.theory = json_to_doubles(j.at("theory"));
    r.empirical = json_to_doubles(j.at("empirical"));
    r.std_error = json_to_doubles(j.at("std_error"));
    for (const Json& v : j.at("verdicts")) {
      const std::string s = v.get<std::string>();
      if (s == "satisfied") r.verdicts.push_back(Verdict::satisfied);
      else if (s == "violated") r.verdicts.push_back(Verdict::violated);
      else if (s == "not_applicable") r.verdicts.push_back(Verdict::not_applicable);
      else throw ParseError("bound report: unknown verdict '" + s + "'");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bound report: ") + e.what());
  }
}

}  // namespace clipgrad
