#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dirac_tree/dirac_tree.hpp"

namespace fs = std::filesystem;
using namespace dirac_tree;

namespace {

enum Exit : int { ok = 0, failure = 1, not_found = 2, invalid = 3, inverse_failed = 4 };

struct Common {
  std::string config;
  double dt = 0.0;
  double horizon = 0.0;
  std::string out = "out";
  unsigned threads = 1;
};

struct Loaded {
  MetricTree tree;
  double horizon;
};

Loaded load_tree(const Common& c) {
  GraphConfig cfg = load_graph_config(c.config);
  if (c.dt > 0.0) cfg.raw.dt = c.dt;
  Loaded l{validate_tree(cfg.raw), c.horizon > 0.0 ? c.horizon : cfg.horizon};
  for (const auto& w : l.tree.warnings) std::cerr << "warning: " << w << '\n';
  if (!(l.horizon > 0.0)) throw config_error("no horizon: pass --horizon or set \"horizon\" in the config");
  // round the horizon down onto the grid
  l.horizon = l.tree.dt * std::floor(l.horizon / l.tree.dt + 1e-9);
  return l;
}

/// delta:<leaf> | bump:<leaf>[:width] | samples:<leaf>:<file.csv>
BoundaryInput parse_inputs(const std::vector<std::string>& specs, const MetricTree& t, std::size_t samples) {
  BoundaryInput in;
  std::vector<std::string> list = specs;
  if (list.empty()) list.push_back("delta:" + std::to_string(t.leaves().front()));
  for (const auto& s : list) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t pos; (pos = s.find(':', start)) != std::string::npos; start = pos + 1)
      parts.push_back(s.substr(start, pos - start));
    parts.push_back(s.substr(start));
    if (parts.size() < 2) throw config_error("input spec '" + s + "' must read kind:leaf[:arg]");
    const int leaf = std::stoi(parts[1]);
    Signal sig;
    if (parts[0] == "delta") {
      sig = Signal::delta(t.dt, samples);
    } else if (parts[0] == "bump") {
      const double width = parts.size() > 2 ? std::stod(parts[2]) : 8.0 * t.dt;
      sig = raised_cosine_bump(t.dt, samples, width);
    } else if (parts[0] == "samples") {
      if (parts.size() < 3) throw config_error("samples input needs a file");
      sig = read_samples_csv(parts[2], t.dt, samples);
    } else {
      throw config_error("unknown input kind '" + parts[0] + "'");
    }
    in.signals[leaf] = sig;
  }
  return in;
}

int cmd_forward(const Common& c, const std::vector<std::string>& inputs, std::size_t stride, bool oracle) {
  const Loaded l = load_tree(c);
  const std::size_t steps = static_cast<std::size_t>(std::llround(l.horizon / l.tree.dt));
  const BoundaryInput in = parse_inputs(inputs, l.tree, steps + 1);
  ForwardModel model(l.tree, steps, FieldLayout::nodes, stride, c.threads);
  const SolutionField field = forward_solve(model, in, c.threads);
  const double residual = kirchhoff_residual(field, l.tree);
  fs::create_directories(c.out);
  write_field(c.out, field, l.tree);
  write_series(fs::path(c.out) / "norm.csv", "time,norm", l.tree.dt, field_norm_history(field));
  json summary{{"kirchhoff_residual", residual}, {"dt", l.tree.dt}, {"horizon", l.horizon}};
  if (oracle) {
    BoundaryInput smooth;
    for (const auto& [v, s] : in.signals)
      smooth.signals[v] = s.atoms().empty() ? s : regularized_delta(l.tree.dt, steps + 1);
    const FdResult fd = fd_solve(l.tree, smooth, steps);
    write_series(fs::path(c.out) / "fd_norm.csv", "time,norm", l.tree.dt, fd.norm, 0.5 * l.tree.dt);
    summary["fd_kirchhoff_residual"] = kirchhoff_residual(fd.field, l.tree);
    write_field(fs::path(c.out) / "fd", fd.field, l.tree);
  }
  detail::write_text(fs::path(c.out) / "summary.json", summary.dump(2));
  std::cout << "kirchhoff residual " << residual << '\n';
  return ok;
}

int cmd_response(const Common& c) {
  const Loaded l = load_tree(c);
  const ResponseMatrix r = response_matrix(l.tree, l.horizon, c.threads);
  write_response(c.out, r, {{"config", c.config}});
  std::cout << "wrote " << r.entries.size() << " entries to " << c.out << '\n';
  return ok;
}

int cmd_invert(const std::string& response_dir, const Common& c, const std::string& backend,
               const std::string& truth) {
  const ResponseMatrix r = read_response(response_dir);
  RecoveryOptions opt;
  opt.backend = backend == "gn" ? RecoveryBackend::gauss_newton : RecoveryBackend::strip;
  const auto [tree, rep] = reconstruct_tree(r, opt);
  std::optional<TreeComparison> cmp;
  if (!truth.empty()) {
    GraphConfig cfg = load_graph_config(truth);
    cfg.raw.dt = r.dt;
    cmp = compare_trees(tree, validate_tree(cfg.raw));
  }
  fs::create_directories(c.out);
  detail::write_text(fs::path(c.out) / "report.json", report_to_json(tree, rep, cmp).dump(2));
  detail::write_text(fs::path(c.out) / "tree.json", tree_to_json(tree, r.horizon()).dump(2));
  std::cout << "recovered " << tree.edges.size() << " edges in " << rep.steps.size() << " steps\n";
  if (cmp)
    std::cout << "topology " << (cmp->same_topology ? "match" : "MISMATCH") << ", lengths "
              << (cmp->same_lengths ? "match" : "MISMATCH") << ", potential max error " << cmp->max_potential_error
              << '\n';
  return ok;
}

int compare_responses(const ResponseMatrix& a, const ResponseMatrix& b) {
  if (a.leaves != b.leaves) {
    std::cout << "leaf sets differ\n";
    return failure;
  }
  for (const auto& [kj, sa] : a.entries) {
    const Signal& sb = b.at(kj.first, kj.second);
    const std::size_t n = std::min(sa.size(), sb.size());
    std::size_t time_diffs = 0;
    double amp = 0.0;
    for (const auto& x : sa.atoms()) {
      if (x.index >= n) continue;
      const cplx y = sb.atom_at(x.index);
      if (y == cplx{}) ++time_diffs;
      amp = std::max(amp, std::abs(x.amplitude - y));
    }
    for (const auto& y : sb.atoms())
      if (y.index < n && sa.atom_at(y.index) == cplx{}) ++time_diffs;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num += std::norm(sa.regular(i) - sb.regular(i));
      den += std::norm(sb.regular(i));
    }
    std::cout << "R_" << kj.first << '_' << kj.second << ": atom-time diffs " << time_diffs << ", amplitude diff "
              << amp << ", regular L2 diff " << (den > 0 ? std::sqrt(num / den) : std::sqrt(num)) << '\n';
  }
  return ok;
}

MetricTree tree_from_json_file(const std::string& path) {
  json j = detail::read_json_file(path);
  if (j.contains("tree")) j = j.at("tree");  // a reconstruction report
  return validate_tree(parse_graph_config(j).raw);
}

int cmd_compare(const std::string& a, const std::string& b) {
  if (fs::is_directory(a) && fs::is_directory(b)) return compare_responses(read_response(a), read_response(b));
  for (const auto& p : {a, b})
    if (!fs::exists(p)) throw io_error("file not found: " + p);
  const MetricTree ta = tree_from_json_file(a), tb = tree_from_json_file(b);
  const TreeComparison c = compare_trees(ta, tb);
  std::cout << "topology " << (c.same_topology ? "match" : "MISMATCH") << '\n'
            << "lengths " << (c.same_lengths ? "match" : "MISMATCH") << '\n'
            << "potential max error " << c.max_potential_error << " (relative " << c.max_potential_relative << ")\n";
  return c.same_topology && c.same_lengths ? ok : failure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dirac system on metric trees: forward simulation and leaf-peeling reconstruction"};
  app.require_subcommand(1);
  Common c;
  c.threads = std::max(1u, std::thread::hardware_concurrency());

  auto add_common = [&](CLI::App* s, bool needs_config) {
    auto* opt = s->add_option("--config", c.config, "graph config (JSON)");
    if (needs_config) opt->required();
    s->add_option("--dt", c.dt, "grid step (overrides the config; default 1/256)");
    s->add_option("--horizon", c.horizon, "time horizon T (overrides the config)");
    s->add_option("--out", c.out, "output directory")->capture_default_str();
    s->add_option("--threads", c.threads, "worker threads")->capture_default_str();
  };

  std::vector<std::string> inputs;
  std::size_t stride = 1;
  bool oracle = false;
  auto* fwd = app.add_subcommand("forward", "simulate the field for boundary controls");
  add_common(fwd, true);
  fwd->add_option("--input", inputs, "control: delta:<leaf> | bump:<leaf>[:width] | samples:<leaf>:<csv>");
  fwd->add_option("--stride", stride, "spatial stride of the written field (grid cells)")->capture_default_str();
  fwd->add_flag("--oracle", oracle, "also run the finite-difference solver (deltas regularised, width 8 dt)");

  auto* resp = app.add_subcommand("response", "compute the response matrix");
  add_common(resp, true);

  std::string response_dir, backend = "strip", truth;
  auto* inv = app.add_subcommand("invert", "reconstruct the tree from a response directory");
  add_common(inv, false);
  inv->add_option("--input,--response", response_dir, "response directory")->required();
  inv->add_option("--backend", backend, "potential recovery backend")
      ->check(CLI::IsMember({"strip", "gn"}))
      ->capture_default_str();
  inv->add_option("--truth", truth, "ground-truth config for error metrics");

  std::string cmp_a, cmp_b;
  auto* cmp = app.add_subcommand("compare", "compare two response directories or two trees");
  cmp->add_option("a", cmp_a, "first response dir, config or report")->required();
  cmp->add_option("b", cmp_b, "second response dir, config or report")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (fwd->parsed()) return cmd_forward(c, inputs, stride, oracle);
    if (resp->parsed()) return cmd_response(c);
    if (inv->parsed()) return cmd_invert(response_dir, c, backend, truth);
    if (cmp->parsed()) return cmd_compare(cmp_a, cmp_b);
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return not_found;
  } catch (const validation_error& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return invalid;
  } catch (const inverse_error& e) {
    std::cerr << "reconstruction failed: " << e.what() << '\n';
    return inverse_failed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return failure;
  }
  return failure;
}
