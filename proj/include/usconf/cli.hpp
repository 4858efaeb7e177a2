#pragma once
// Command-line front end. run_cli() is the whole program; tools/usconf.cpp
// only forwards argv.
//
// Exit codes: 0 success, 2 bad input / format / flags, 3 no convergence
// (CG stall, censored Monte-Carlo walks, diverged training).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "usconf/confidence.hpp"
#include "usconf/error.hpp"
#include "usconf/io.hpp"
#include "usconf/loss.hpp"
#include "usconf/mc_oracle.hpp"
#include "usconf/metrics.hpp"
#include "usconf/toy.hpp"

namespace usconf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNotConverged = 3;

namespace cli {

using nlohmann::ordered_json;

/// 6 significant digits, C locale.
inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline ordered_json num_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

inline void write_text(const std::string &path, const std::string &text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

inline void emit(const std::string &path, const std::string &text, std::ostream &out) {
  if (path.empty())
    out << text;
  else
    write_text(path, text);
}

inline std::string json_text(const ordered_json &j) { return j.dump(2) + "\n"; }

inline Spacing3 parse_spacing(const std::vector<double> &v, Spacing3 fallback) {
  if (v.empty()) return fallback;
  detail::require(v.size() == 2 || v.size() == 3, "--spacing takes 2 or 3 values");
  for (double s : v) detail::require(s > 0.0 && std::isfinite(s), "--spacing values must be > 0");
  return {v[0], v[1], v.size() == 3 ? v[2] : 1.0};
}

inline ordered_json params_json(const RwParams &p) {
  return {{"alpha", p.alpha}, {"beta", p.beta}, {"gamma", p.gamma}, {"epsilon", p.epsilon}, {"tol", p.tol}};
}

inline ordered_json row_json(const MetricsRow &r) {
  ordered_json j{{"subject", r.subject}, {"class", r.class_id}};
  const auto vals = metric_values(r);
  for (std::size_t m = 0; m < kMetricCount; ++m) j[kMetricNames[m]] = num_or_null(vals[m]);
  return j;
}

inline ordered_json report_json(const MetricsReport &rep) {
  ordered_json rows = ordered_json::array();
  for (const auto &r : rep.rows) rows.push_back(row_json(r));
  ordered_json agg{{"order", rep.order == AggregationOrder::pooled ? "pooled" : "classes_then_subjects"}};
  for (std::size_t m = 0; m < kMetricCount; ++m)
    agg[kMetricNames[m]] = {{"mean", num_or_null(rep.summary[m].mean)},
                            {"std", num_or_null(rep.summary[m].std)},
                            {"n", rep.summary[m].n}};
  return {{"rows", rows}, {"aggregate", agg}};
}

inline std::string metrics_csv(const std::vector<MetricsRow> &rows) {
  std::string s = "subject,class";
  for (auto *name : kMetricNames) s += std::string(",") + name;
  s += "\n";
  for (const auto &r : rows) {
    s += r.subject + "," + std::to_string(r.class_id);
    for (double v : metric_values(r)) s += "," + fmt6(v);
    s += "\n";
  }
  return s;
}

/// Flags shared by every subcommand that builds a confidence map.
inline void add_rw_flags(CLI::App *sub, RwParams &p) {
  sub->add_option("--alpha", p.alpha, "attenuation coefficient per unit depth")->check(CLI::NonNegativeNumber);
  sub->add_option("--beta", p.beta, "intensity-difference penalty in edge weights")->check(CLI::NonNegativeNumber);
  sub->add_option("--gamma", p.gamma, "penalty for horizontal and diagonal moves")->check(CLI::NonNegativeNumber);
  sub->add_option("--epsilon", p.epsilon, "edge weight floor")->check(CLI::PositiveNumber);
  sub->add_option("--tol", p.tol, "CG relative residual tolerance")->check(CLI::PositiveNumber);
  sub->add_option("--max-iter", p.max_iter, "CG iteration cap (0: 10 x unknowns)");
}

inline std::string sweep_filename(double alpha, double beta) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "cm_alpha%g_beta%g.cmg", alpha, beta);
  return buf;
}

inline Volume3D volume_of(const GridFile &g, const char *what) {
  detail::require(g.kind == GridKind::f32 && g.num_classes == 0,
                  std::string(what) + ": expected a plain f32 grid (num_classes 0)");
  return grid_to_volume(g);
}

struct Options {
  RwParams rw;
  RwParams toy_rw = study_cm_params();
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  std::string in, out, export_pgm, labels, pred_path, cm_path, stderr_out, json_out, kind = "ce", order;
  std::vector<double> spacing, alpha_list, beta_list;
  std::vector<std::string> inputs, preds, gts, subjects, configs;
  std::size_t walks = 1000, max_steps = 0, seeds = 20, epochs = 200, batch = 256;
  double lr = 0.1;
  bool compare = false;
};

// ---- subcommands -------------------------------------------------------------

inline int cmd_compute(const Options &o, std::ostream &out) {
  const auto vol = read_image_volume(o.in, parse_spacing(o.spacing, {}));
  const Volume3D in{vol.dims(), {vol.data().begin(), vol.data().end()}, parse_spacing(o.spacing, vol.spacing())};
  const auto cm = compute_volume_confidence(in, o.rw, o.workers);
  if (!o.out.empty()) write_grid(to_grid(cm), o.out);
  if (!o.export_pgm.empty()) {
    const auto d = cm.dims();
    const auto bytes = encode_pgm(quantize_8bit(d.width, d.height * d.depth, cm.data()));
    write_file(o.export_pgm, bytes);
  }
  if (o.out.empty() && o.export_pgm.empty()) out << "no output requested (use --out or --export-pgm)\n";
  return kExitOk;
}

inline int cmd_sweep(const Options &o, std::ostream &out) {
  detail::require(!o.alpha_list.empty() && !o.beta_list.empty(), "sweep: --alpha-list and --beta-list are required");
  const std::size_t n = std::max(o.alpha_list.size(), o.beta_list.size());
  auto pick = [n](const std::vector<double> &v, std::size_t i, const char *name) {
    detail::require(v.size() == 1 || v.size() == n, std::string("sweep: ") + name +
                                                        " must have one value or as many as the other list");
    return v.size() == 1 ? v[0] : v[i];
  };
  std::vector<RwParams> points(n, o.rw);
  for (std::size_t i = 0; i < n; ++i) {
    points[i].alpha = pick(o.alpha_list, i, "--alpha-list");
    points[i].beta = pick(o.beta_list, i, "--beta-list");
    points[i].validate();
  }
  const auto vol = read_image_volume(o.in, parse_spacing(o.spacing, {}));
  const std::filesystem::path dir = o.out.empty() ? std::filesystem::path(".") : std::filesystem::path(o.out);
  std::filesystem::create_directories(dir);
  std::vector<std::string> names(n);
  parallel_for(n, o.workers, [&](std::size_t i) {
    const auto cm = compute_volume_confidence(vol, points[i], 1);
    names[i] = (dir / sweep_filename(points[i].alpha, points[i].beta)).string();
    write_grid(to_grid(cm), names[i]);
  });
  for (const auto &name : names) out << name << "\n";
  return kExitOk;
}

inline int cmd_mask(const Options &o, std::ostream &) {
  const auto labels = grid_to_labels(read_grid(o.labels));
  const auto cm = volume_of(read_grid(o.cm_path), "mask --cm");
  detail::require(cm.dims() == labels.dims(), "mask: confidence map dims do not match labels");
  const auto mask = confidence_mask(one_hot_encode(labels), cm.data());
  write_grid(to_grid(mask, labels.spacing()), o.out);
  return kExitOk;
}

inline int cmd_loss(const Options &o, std::ostream &out) {
  const auto kind = parse_loss_kind(o.kind);
  const auto labels = grid_to_labels(read_grid(o.labels));
  const auto pred = grid_to_probmap(read_grid(o.pred_path));
  std::optional<Volume3D> cm;
  if (!o.cm_path.empty()) {
    cm = volume_of(read_grid(o.cm_path), "loss --cm");
    detail::require(cm->dims() == labels.dims(), "loss: confidence map dims do not match labels");
  }
  const auto y = one_hot_encode(labels);
  const auto v = cm ? loss_value(kind, y, pred, cm->data()) : loss_value(kind, y, pred);
  ordered_json j{{"kind", to_string(kind)}, {"total", v.total}};
  j["ce"] = v.ce ? ordered_json(*v.ce) : ordered_json(nullptr);
  j["dice"] = v.dice ? ordered_json(*v.dice) : ordered_json(nullptr);
  emit(o.out, json_text(j), out);
  return kExitOk;
}

inline int cmd_metrics(const Options &o, std::ostream &out) {
  detail::require(!o.preds.empty() && o.preds.size() == o.gts.size(), "metrics: need matching --pred and --gt lists");
  detail::require(o.subjects.empty() || o.subjects.size() == o.gts.size(),
                  "metrics: --subject count must match --gt count");
  AggregationOrder order = AggregationOrder::classes_then_subjects;
  if (o.order == "pooled")
    order = AggregationOrder::pooled;
  else
    detail::require(o.order.empty() || o.order == "classes_then_subjects", "metrics: unknown --order '" + o.order + "'");
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < o.gts.size(); ++i) {
    const auto pred = grid_to_labels(read_grid(o.preds[i]));
    const auto gt = grid_to_labels(read_grid(o.gts[i]));
    const auto subject = o.subjects.empty() ? std::filesystem::path(o.gts[i]).stem().string() : o.subjects[i];
    const auto r = evaluate_subject(subject, pred, gt, parse_spacing(o.spacing, gt.spacing()));
    rows.insert(rows.end(), r.begin(), r.end());
  }
  const auto rep = aggregate_report(rows, order);
  emit(o.out, metrics_csv(rep.rows), out);
  std::string json_path = o.json_out;
  if (json_path.empty() && !o.out.empty()) json_path = std::filesystem::path(o.out).replace_extension(".json").string();
  if (!json_path.empty()) write_text(json_path, json_text(report_json(rep)));
  return kExitOk;
}

inline int cmd_oracle_mc(const Options &o, std::ostream &out) {
  const auto vol = read_image_volume(o.in, parse_spacing(o.spacing, {}));
  detail::require(vol.dims().depth == 1, "oracle mc: expects a single 2D image");
  const auto img = vol.slice(0);
  const McConfig cfg{o.walks, o.max_steps, o.seed};
  const auto res = mc_confidence(img, o.rw, cfg, o.workers);
  if (!o.out.empty()) write_grid(to_grid(res.estimate, img.spacing()), o.out);
  if (!o.stderr_out.empty())
    write_grid(to_grid({img.width(), img.height(), 1}, res.std_error.data, vol.spacing()), o.stderr_out);
  ordered_json j{{"walks_per_pixel", o.walks},
                 {"seed", o.seed},
                 {"step_cap", cfg.step_cap(img.width(), img.height())},
                 {"total_walks", res.total_walks},
                 {"censored", res.censored}};
  if (o.compare) {
    const auto cg = compute_confidence_map(img, o.rw).map;
    double worst = 0.0;
    std::size_t within = 0;
    for (std::size_t i = 0; i < cg.size(); ++i) {
      const double d = std::abs(double(res.estimate.data()[i]) - double(cg.data()[i]));
      worst = std::max(worst, d);
      within += d <= 3.0 * res.std_error.data[i] + 1e-7;
    }
    j["max_abs_diff_vs_cg"] = worst;
    j["fraction_within_3se"] = static_cast<double>(within) / static_cast<double>(cg.size());
  }
  emit(o.json_out, json_text(j), out);
  return kExitOk;
}

inline ordered_json toy_study_json(const ToyStudy &s) {
  ordered_json cfgs = ordered_json::array();
  for (const auto &r : s.results) cfgs.push_back(r.config.name());
  ordered_json j;
  j["config"] = {{"seeds", s.seeds},
                 {"epochs", s.base.epochs},
                 {"lr", s.base.lr},
                 {"batch", s.base.batch},
                 {"hidden_units", kHiddenUnits},
                 {"confidence_map", params_json(s.cm_params)},
                 {"configurations", cfgs}};
  ordered_json results = ordered_json::array();
  ordered_json islands = ordered_json::object();
  for (const auto &r : s.results) {
    ordered_json runs = ordered_json::array();
    for (const auto &run : r.runs)
      runs.push_back({{"seed", run.seed},
                      {"initial_loss", run.initial_loss},
                      {"final_loss", run.history.empty() ? run.initial_loss : run.history.back()},
                      {"pixel_accuracy", run.pixel_accuracy},
                      {"islands", run.islands},
                      {"loss_history", run.history}});
    auto rep = report_json(r.report);
    results.push_back({{"name", r.config.name()},
                       {"channels", to_string(r.config.mode)},
                       {"loss", to_string(r.config.kind)},
                       {"median_islands", r.median_islands},
                       {"runs", runs},
                       {"metrics", rep["rows"]},
                       {"aggregate", rep["aggregate"]}});
    islands[r.config.name()] = r.median_islands;
  }
  j["results"] = results;
  j["median_islands"] = islands;
  return j;
}

inline int cmd_train_toy(const Options &o, std::ostream &out) {
  detail::require(o.seeds >= 1, "train-toy: --seeds must be >= 1");
  std::vector<std::uint64_t> seeds(o.seeds);
  std::iota(seeds.begin(), seeds.end(), o.seed);
  std::vector<ToyConfiguration> configs;
  for (const auto &c : standard_configurations())
    if (o.configs.empty() || std::find(o.configs.begin(), o.configs.end(), c.name()) != o.configs.end())
      configs.push_back(c);
  for (const auto &name : o.configs)
    detail::require(std::any_of(configs.begin(), configs.end(), [&](const auto &c) { return c.name() == name; }),
                    "train-toy: unknown configuration '" + name + "'");
  TrainConfig base;
  base.lr = o.lr;
  base.epochs = o.epochs;
  base.batch = o.batch;
  const auto study = run_toy_study(seeds, configs, base, o.toy_rw, o.workers);
  emit(o.out, json_text(toy_study_json(study)), out);
  return kExitOk;
}

inline int cmd_entropy(const Options &o, std::ostream &) {
  detail::require(!o.inputs.empty(), "entropy: need at least one --in prediction");
  std::vector<ProbMap> preds;
  Spacing3 spacing{};
  for (const auto &path : o.inputs) {
    const auto g = read_grid(path);
    spacing = g.spacing3();
    preds.push_back(grid_to_probmap(g));
  }
  const auto h = entropy_map(preds);
  write_grid(to_grid(h.dims, h.data, spacing), o.out);
  return kExitOk;
}

} // namespace cli

/// Parses `args` (without the program name) and runs one subcommand.
inline int run_cli(const std::vector<std::string> &args, std::ostream &out = std::cout,
                   std::ostream &err = std::cerr) {
  using namespace cli;
  Options o;
  CLI::App app{"Ultrasound confidence maps, confidence-weighted losses and segmentation metrics", "usconf"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for all subcommands");

  auto *compute = app.add_subcommand("compute", "random-walk confidence map of a PGM image or f32 grid");
  compute->add_option("--in", o.in, "input .pgm or .cmg")->required();
  compute->add_option("--out", o.out, "output .cmg (f32)");
  compute->add_option("--export-pgm", o.export_pgm, "also write an 8-bit PGM (stacked slices for volumes)");
  compute->add_option("--spacing", o.spacing, "pixel spacing in mm: x,y[,z]")->delimiter(',');
  compute->add_option("--workers", o.workers, "slice-level threads")->check(CLI::Range(1, 256));
  add_rw_flags(compute, o.rw);

  auto *sweep = app.add_subcommand("sweep", "one confidence map per (alpha, beta) pair");
  sweep->add_option("--in", o.in, "input .pgm or .cmg")->required();
  sweep->add_option("--out", o.out, "output directory");
  sweep->add_option("--alpha-list", o.alpha_list, "alpha values (comma separated)")->delimiter(',')->required();
  sweep->add_option("--beta-list", o.beta_list, "beta values, paired with --alpha-list")->delimiter(',')->required();
  sweep->add_option("--spacing", o.spacing, "pixel spacing in mm: x,y[,z]")->delimiter(',');
  sweep->add_option("--workers", o.workers, "threads across sweep points")->check(CLI::Range(1, 256));
  add_rw_flags(sweep, o.rw);

  auto *mask = app.add_subcommand("mask", "confidence mask: one-hot labels times confidence");
  mask->add_option("--labels", o.labels, "label grid .cmg")->required();
  mask->add_option("--cm", o.cm_path, "confidence grid .cmg")->required();
  mask->add_option("--out", o.out, "output channel-stacked f32 grid")->required();
  mask->add_option("--workers", o.workers, "accepted for uniformity")->check(CLI::Range(1, 256));

  auto *loss = app.add_subcommand("loss", "evaluate a loss on labels and a prediction");
  loss->add_option("--kind", o.kind, "ce, ce_conf, dice, dice_ce or dice_ce_conf");
  loss->add_option("--labels", o.labels, "label grid .cmg")->required();
  loss->add_option("--pred", o.pred_path, "channel-stacked probability grid .cmg")->required();
  loss->add_option("--cm", o.cm_path, "confidence grid .cmg (required by *_conf kinds)");
  loss->add_option("--out", o.out, "JSON output (default stdout)");
  loss->add_option("--workers", o.workers, "accepted for uniformity")->check(CLI::Range(1, 256));

  auto *metrics = app.add_subcommand("metrics", "overlap and surface-distance metrics per subject and class");
  metrics->add_option("--pred", o.preds, "predicted label grids")->required();
  metrics->add_option("--gt", o.gts, "ground-truth label grids, same order")->required();
  metrics->add_option("--subject", o.subjects, "subject names (default: gt file stem)");
  metrics->add_option("--spacing", o.spacing, "override voxel spacing in mm: x,y[,z]")->delimiter(',');
  metrics->add_option("--order", o.order, "aggregation: classes_then_subjects (default) or pooled");
  metrics->add_option("--out", o.out, "CSV output (default stdout)");
  metrics->add_option("--json", o.json_out, "JSON mirror (default: --out with .json)");
  metrics->add_option("--workers", o.workers, "accepted for uniformity")->check(CLI::Range(1, 256));

  auto *oracle = app.add_subcommand("oracle", "independent reference estimators");
  oracle->require_subcommand(1);
  auto *mc = oracle->add_subcommand("mc", "Monte-Carlo random-walk estimate of the confidence map");
  mc->add_option("--in", o.in, "input .pgm or single-slice .cmg")->required();
  mc->add_option("--out", o.out, "estimate grid .cmg");
  mc->add_option("--stderr-out", o.stderr_out, "standard-error grid .cmg");
  mc->add_option("--json", o.json_out, "summary JSON (default stdout)");
  mc->add_option("--walks", o.walks, "walks per pixel")->check(CLI::PositiveNumber);
  mc->add_option("--max-steps", o.max_steps, "step cap per walk (0: 8 H^2 W)");
  mc->add_option("--seed", o.seed, "RNG seed");
  mc->add_flag("--compare", o.compare, "also solve with CG and report the deviation");
  mc->add_option("--workers", o.workers, "pixel-level threads")->check(CLI::Range(1, 256));
  add_rw_flags(mc, o.rw);

  auto *toy = app.add_subcommand("train-toy", "train the toy segmenter configurations on synthetic phantoms");
  toy->add_option("--seeds", o.seeds, "number of seeds");
  toy->add_option("--seed", o.seed, "first seed");
  toy->add_option("--configs", o.configs, "subset of configurations, e.g. 1ch-ce,2ch-dice")->delimiter(',');
  toy->add_option("--epochs", o.epochs, "training epochs")->check(CLI::PositiveNumber);
  toy->add_option("--lr", o.lr, "SGD learning rate")->check(CLI::PositiveNumber);
  toy->add_option("--batch", o.batch, "minibatch size")->check(CLI::PositiveNumber);
  toy->add_option("--out", o.out, "JSON report (default stdout)");
  toy->add_option("--workers", o.workers, "seed-level threads")->check(CLI::Range(1, 256));
  add_rw_flags(toy, o.toy_rw);

  auto *entropy = app.add_subcommand("entropy", "predictive entropy of an ensemble of probability grids");
  entropy->add_option("--in", o.inputs, "channel-stacked probability grids")->required();
  entropy->add_option("--out", o.out, "entropy grid .cmg")->required();
  entropy->add_option("--workers", o.workers, "accepted for uniformity")->check(CLI::Range(1, 256));

  std::vector<std::string> argv_store{"usconf"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char *> argv;
  for (const auto &a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp &) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App *sub = &app;
    for (auto *s : app.get_subcommands()) sub = s;
    err << sub->help();
    return kExitInput;
  }

  try {
    if (compute->parsed()) return cmd_compute(o, out);
    if (sweep->parsed()) return cmd_sweep(o, out);
    if (mask->parsed()) return cmd_mask(o, out);
    if (loss->parsed()) return cmd_loss(o, out);
    if (metrics->parsed()) return cmd_metrics(o, out);
    if (mc->parsed()) return cmd_oracle_mc(o, out);
    if (toy->parsed()) return cmd_train_toy(o, out);
    if (entropy->parsed()) return cmd_entropy(o, out);
  } catch (const InputError &e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ConfidenceNotConverged &e) {
    err << "error: " << e.what() << "\n";
    return kExitNotConverged;
  } catch (const CgNotConverged &e) {
    err << "error: " << e.what() << "\n";
    return kExitNotConverged;
  } catch (const CensoredWalksError &e) {
    err << "error: " << e.what() << "\n";
    return kExitNotConverged;
  } catch (const DivergenceError &e) {
    err << "error: " << e.what() << "\n";
    return kExitNotConverged;
  } catch (const std::filesystem::filesystem_error &e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  err << app.help();
  return kExitInput;
}

} // namespace usconf
