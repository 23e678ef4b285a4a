#pragma once

#include <json.hpp>

#include <cctype>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "graph.hpp"
#include "leaf_peeling.hpp"
#include "signal.hpp"
#include "tree_forward.hpp"

namespace dirac_tree {

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed config content (as opposed to a missing file).
class config_error : public validation_error {
 public:
  using validation_error::validation_error;
};

using json = nlohmann::json;

struct GraphConfig {
  RawGraph raw;
  double horizon = 0.0;  // 0 when the config does not set one
};

namespace detail {

inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw io_error("file not found: " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw config_error("cannot parse " + p.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw io_error("cannot write " + p.string());
  out << text;
}

inline void parse_potential(const json& spec, RawEdge& e) {
  if (spec.is_null()) return;
  if (spec.is_string()) {
    std::istringstream ss(spec.get<std::string>());
    std::string kind;
    ss >> kind;
    if (kind != "constant" || !(ss >> e.p0 >> e.q0))
      throw config_error("edge " + std::to_string(e.id) + ": potential string must read \"constant p q\"");
    e.constant_potential = true;
    return;
  }
  const json& s = spec.contains("samples") ? spec.at("samples") : spec;
  if (!s.is_object() || !s.contains("p") || !s.contains("q"))
    throw config_error("edge " + std::to_string(e.id) + ": sampled potential needs p and q arrays");
  e.constant_potential = false;
  e.p_samples = s.at("p").get<std::vector<double>>();
  e.q_samples = s.at("q").get<std::vector<double>>();
}

}  // namespace detail

/// Reads a graph config:
///   { "dt": 0.00390625, "horizon": 6, "root": 0, "vertices": [0, 1, 2, 3],
///     "edges": [ {"id": 1, "endpoints": [1, 0], "length": 1.0,
///                 "potential": "constant 0.3 0"},
///                {"id": 2, "endpoints": [2, 1], "length": 0.5,
///                 "potential": {"samples": {"p": [...], "q": [...]}}} ] }
/// Sampled potentials run from the first endpoint to the second.
inline GraphConfig parse_graph_config(const json& j) {
  GraphConfig c;
  try {
    c.raw.dt = j.value("dt", 1.0 / 256.0);
    c.horizon = j.value("horizon", 0.0);
    c.raw.root = j.at("root").get<int>();
    c.raw.vertices = j.at("vertices").get<std::vector<int>>();
    int next_id = 1;
    for (const auto& je : j.at("edges")) {
      RawEdge e;
      e.id = je.value("id", next_id);
      next_id = e.id + 1;
      const auto ends = je.at("endpoints").get<std::vector<int>>();
      if (ends.size() != 2) throw config_error("edge " + std::to_string(e.id) + ": endpoints must be a pair");
      e.a = ends[0];
      e.b = ends[1];
      e.length = je.at("length").get<double>();
      detail::parse_potential(je.contains("potential") ? je.at("potential") : json(), e);
      c.raw.edges.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw config_error(std::string("malformed graph config: ") + e.what());
  }
  return c;
}

inline GraphConfig load_graph_config(const std::filesystem::path& p) {
  return parse_graph_config(detail::read_json_file(p));
}

inline json tree_to_json(const MetricTree& t, double horizon = 0.0) {
  json j;
  j["dt"] = t.dt;
  if (horizon > 0.0) j["horizon"] = horizon;
  j["root"] = t.root;
  j["vertices"] = t.vertices;
  j["edges"] = json::array();
  for (const auto& e : t.edges)
    j["edges"].push_back({{"id", e.id},
                          {"endpoints", {e.head, e.tail}},
                          {"length", e.length},
                          {"potential", {{"samples", {{"p", e.potential.p}, {"q", e.potential.q}}}}}});
  return j;
}

// ---------------------------------------------------------------------------
// Signals: CSV (time, re, im) of the regular part plus a JSON sidecar with the
// grid and the atoms.

inline void write_signal(const std::filesystem::path& stem, const Signal& s, double time_offset = 0.0) {
  std::ostringstream csv;
  csv << std::setprecision(17) << "time,re,im\n";
  for (std::size_t n = 0; n < s.size(); ++n)
    csv << s.dt() * static_cast<double>(n) + time_offset << ',' << s.regular(n).real() << ',' << s.regular(n).imag()
        << '\n';
  detail::write_text(stem.string() + ".csv", csv.str());
  json side;
  side["dt"] = s.dt();
  side["samples"] = s.size();
  side["time_offset"] = time_offset;
  side["atoms"] = json::array();
  for (const auto& a : s.atoms())
    side["atoms"].push_back({{"index", a.index},
                             {"time", s.dt() * static_cast<double>(a.index) + time_offset},
                             {"re", a.amplitude.real()},
                             {"im", a.amplitude.imag()}});
  detail::write_text(stem.string() + ".atoms.json", side.dump(2));
}

inline Signal read_signal(const std::filesystem::path& stem) {
  const json side = detail::read_json_file(stem.string() + ".atoms.json");
  Signal s(side.at("dt").get<double>(), side.at("samples").get<std::size_t>());
  std::ifstream in(stem.string() + ".csv");
  if (!in) throw io_error("file not found: " + stem.string() + ".csv");
  std::string line;
  std::getline(in, line);
  for (std::size_t n = 0; n < s.size() && std::getline(in, line); ++n) {
    std::istringstream ls(line);
    std::string t, re, im;
    std::getline(ls, t, ',');
    std::getline(ls, re, ',');
    std::getline(ls, im, ',');
    s.regular()[n] = cplx(std::stod(re), std::stod(im));
  }
  for (const auto& a : side.at("atoms"))
    s.add_atom(a.at("index").get<std::size_t>(), cplx(a.at("re").get<double>(), a.at("im").get<double>()));
  return s;
}

/// Reads a two- or three-column CSV (time, re[, im]) of samples on the grid.
inline Signal read_samples_csv(const std::filesystem::path& p, double dt, std::size_t samples) {
  std::ifstream in(p);
  if (!in) throw io_error("file not found: " + p.string());
  Signal s(dt, samples);
  std::string line;
  std::size_t n = 0;
  while (n < samples && std::getline(in, line)) {
    if (line.empty() || !(std::isdigit(static_cast<unsigned char>(line[0])) || line[0] == '-' || line[0] == '.'))
      continue;
    std::istringstream ls(line);
    std::string t, re, im;
    std::getline(ls, t, ',');
    std::getline(ls, re, ',');
    const bool has_im = static_cast<bool>(std::getline(ls, im, ','));
    s.regular()[n++] = cplx(std::stod(re), has_im ? std::stod(im) : 0.0);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Response matrices: directory of R_<k>_<j> signals plus manifest.json.

inline void write_response(const std::filesystem::path& dir, const ResponseMatrix& r, const json& extra = {}) {
  std::filesystem::create_directories(dir);
  json m;
  m["dt"] = r.dt;
  m["samples"] = r.samples;
  m["horizon"] = r.horizon();
  m["leaves"] = r.leaves;
  m["entry_convention"] = "R_<k>_<j>: u2 observed at leaf k for a delta control at leaf j";
  if (!extra.is_null()) m["generator"] = extra;
  for (const auto& [kj, s] : r.entries)
    write_signal(dir / ("R_" + std::to_string(kj.first) + "_" + std::to_string(kj.second)), s);
  detail::write_text(dir / "manifest.json", m.dump(2));
}

inline ResponseMatrix read_response(const std::filesystem::path& dir) {
  const json m = detail::read_json_file(dir / "manifest.json");
  ResponseMatrix r;
  try {
    r.dt = m.at("dt").get<double>();
    r.samples = m.at("samples").get<std::size_t>();
    r.leaves = m.at("leaves").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw config_error(std::string("malformed response manifest: ") + e.what());
  }
  for (int k : r.leaves)
    for (int j : r.leaves)
      r.entries[{k, j}] = read_signal(dir / ("R_" + std::to_string(k) + "_" + std::to_string(j)));
  return r;
}

// ---------------------------------------------------------------------------
// Reconstruction report.

inline json report_to_json(const MetricTree& tree, const ReconstructionReport& rep,
                           const std::optional<TreeComparison>& truth = std::nullopt) {
  json j;
  j["tree"] = tree_to_json(tree);
  j["edges"] = json::array();
  for (const auto& e : rep.edges)
    j["edges"].push_back({{"head", e.head},
                          {"tail", e.tail},
                          {"cells", e.cells},
                          {"length", tree.dt * static_cast<double>(e.cells)},
                          {"misfit", e.misfit},
                          {"p", e.potential.p},
                          {"q", e.potential.q}});
  j["steps"] = json::array();
  for (const auto& s : rep.steps)
    j["steps"].push_back({{"sheaf", s.sheaf},
                          {"stem_vertex", s.stem_vertex},
                          {"degree", s.degree},
                          {"actuated_leaf", s.actuated_leaf},
                          {"horizon_before", tree.dt * static_cast<double>(s.horizon_before)},
                          {"horizon_after", tree.dt * static_cast<double>(s.horizon_after)}});
  j["max_misfit"] = rep.max_misfit;
  if (truth) {
    j["ground_truth"] = {{"same_topology", truth->same_topology},
                         {"same_lengths", truth->same_lengths},
                         {"max_potential_error", truth->max_potential_error},
                         {"max_potential_relative", truth->max_potential_relative}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Solution fields: one long-format CSV per edge plus atom rays.

inline void write_field(const std::filesystem::path& dir, const SolutionField& f, const MetricTree& t,
                        std::size_t time_stride = 1) {
  std::filesystem::create_directories(dir);
  time_stride = std::max<std::size_t>(1, time_stride);
  json atoms = json::array();
  for (const auto& ef : f.edges) {
    const Edge& e = t.edges[ef.edge];
    std::ostringstream csv;
    csv << std::setprecision(12) << "x,t,u1_re,u1_im,u2_re,u2_im\n";
    for (const auto& tr : ef.traces) {
      const double x = 0.5 * f.dt * static_cast<double>(tr.x_half);
      const double off = tr.offset() ? 0.5 * f.dt : 0.0;
      for (std::size_t n = 0; n < tr.u1.size(); n += time_stride)
        csv << x << ',' << f.dt * static_cast<double>(n) + off << ',' << tr.u1.regular(n).real() << ','
            << tr.u1.regular(n).imag() << ',' << tr.u2.regular(n).real() << ',' << tr.u2.regular(n).imag() << '\n';
      std::map<std::size_t, std::pair<cplx, cplx>> rays;
      for (const auto& a : tr.u1.atoms()) rays[a.index].first = a.amplitude;
      for (const auto& a : tr.u2.atoms()) rays[a.index].second = a.amplitude;
      for (const auto& [n, uv] : rays)
        atoms.push_back({{"edge", e.id},
                         {"x", x},
                         {"t", f.dt * static_cast<double>(n) + off},
                         {"u1", {uv.first.real(), uv.first.imag()}},
                         {"u2", {uv.second.real(), uv.second.imag()}}});
    }
    detail::write_text(dir / ("field_edge_" + std::to_string(e.id) + ".csv"), csv.str());
  }
  detail::write_text(dir / "field_atoms.json", atoms.dump(1));
}

inline void write_series(const std::filesystem::path& p, const std::string& header, double dt,
                         const std::vector<double>& v, double offset = 0.0) {
  std::ostringstream csv;
  csv << std::setprecision(17) << header << '\n';
  for (std::size_t n = 0; n < v.size(); ++n) csv << dt * static_cast<double>(n) + offset << ',' << v[n] << '\n';
  detail::write_text(p, csv.str());
}

}  // namespace dirac_tree
