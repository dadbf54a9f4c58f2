#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"
#include "train.hpp"

namespace sirem::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int { ok = 0, usage_error = 2, data_error = 3, runtime_error = 4 };

inline int exit_code_for(Errc c) {
  switch (c) {
    case Errc::usage:
    case Errc::invalid_argument: return usage_error;
    case Errc::format_error:
    case Errc::size_mismatch:
    case Errc::unknown_dtype:
    case Errc::missing_file:
    case Errc::schema_violation:
    case Errc::dimension_mismatch:
    case Errc::shape_mismatch:
    case Errc::empty_input:
    case Errc::all_zero_input:
    case Errc::range_violation:
    case Errc::zero_reference: return data_error;
    default: return runtime_error;
  }
}

struct Common {
  bool overwrite = false;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
};

// Refuses to reuse a non-empty output directory unless overwriting.
inline void prepare_output_dir(const fs::path &dir, bool overwrite) {
  if (fs::exists(dir)) {
    require(fs::is_directory(dir), Errc::usage, dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      require(overwrite, Errc::usage, dir.string() + " is not empty (pass --overwrite to replace it)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

inline void prepare_output_file(const fs::path &file, bool overwrite) {
  require(overwrite || !fs::exists(file), Errc::usage, file.string() + " exists (pass --overwrite to replace it)");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

inline std::vector<std::size_t> parse_arms(const std::string &s) {
  std::vector<std::size_t> arms;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t pos = 0;
      const unsigned long v = std::stoul(tok, &pos);
      require(pos == tok.size() && v < kArmsPerRotation, Errc::usage, "");
      arms.push_back(v);
    } catch (...) {
      fail(Errc::usage, "--arms expects comma-separated arm indices in [0, 12], got '" + s + "'");
    }
  }
  require(!arms.empty(), Errc::usage, "--arms is empty");
  return arms;
}

inline std::vector<std::string> split_ids(const io::Dataset &d, const std::string &split) {
  if (split == "all") return d.all_ids();
  return d.split(split);
}

inline std::string frame_file(std::size_t t) {
  std::string s = std::to_string(t);
  return "frame_" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s + ".png";
}

// ---------------------------------------------------------------------------

inline int cmd_simulate(const std::string &config, const fs::path &out, const Common &c, std::ostream &log) {
  DatasetConfig cfg;
  if (!config.empty()) cfg = dataset_config_from_json(io::read_json(config));
  if (c.seed) cfg.master_seed = *c.seed;
  prepare_output_dir(out, c.overwrite);
  const auto d = make_dataset(cfg, out, c.threads);
  log << "wrote " << d.all_ids().size() << " utterances to " << out.string() << '\n';
  return ok;
}

inline DecoderShape decoder_shape_for(const io::Dataset &d, const json &config) {
  DecoderShape s;
  const auto g = d.metadata.at("grid").get<std::vector<std::size_t>>();
  s.output = {g.at(0), g.at(1)};
  s.input_dim = d.metadata.at("feature_dim").get<std::size_t>();
  if (config.contains("decoder")) {
    const auto &j = config["decoder"];
    try {
      if (j.contains("hidden")) s.hidden = j["hidden"].get<std::vector<std::size_t>>();
      if (j.contains("dropout")) s.dropout = j["dropout"].get<double>();
    } catch (const json::exception &e) {
      fail(Errc::usage, std::string("decoder config: ") + e.what());
    }
  }
  return s;
}

inline int cmd_train(const fs::path &data, const std::string &config, const fs::path &out, bool freeze_arms,
                     bool zero_features, const Common &c, std::ostream &log) {
  json cj = json::object();
  if (!config.empty()) cj = io::read_json(config);
  TrainConfig cfg = io::config_from_json(cj);
  if (c.seed) cfg.seed = *c.seed;
  if (freeze_arms) cfg.freeze_arms = true;
  if (zero_features) cfg.zero_features = true;
  cfg.workers = c.threads;
  const auto d = io::load_dataset(data);
  const DecoderShape shape = decoder_shape_for(d, cj);
  prepare_output_dir(out, c.overwrite);
  const auto train = prepare_split(d, d.split("train"), c.threads);
  const auto val = prepare_split(d, d.split("val"), c.threads);
  io::CsvWriter csv(out / "train_log.csv",
                    {"epoch", "loss", "recon", "psf", "budget", "mask", "lr", "grad_norm", "skipped", "val_psnr"});
  const auto r = train_loop<float>(train, val, shape, cfg, [&](const EpochLog &e) {
    csv.row({std::to_string(e.epoch), io::fmt(e.loss.total, 9), io::fmt(e.loss.recon, 9), io::fmt(e.loss.psf, 9),
             io::fmt(e.loss.budget, 9), io::fmt(e.loss.mask, 9), io::fmt(e.lr, 9), io::fmt(e.grad_norm, 9),
             std::to_string(e.skipped_steps), io::fmt(e.val_psnr, 9)});
    log << "epoch " << e.epoch << " loss " << io::fmt(e.loss.total) << " val_psnr " << io::fmt(e.val_psnr) << '\n';
  });
  io::save_model(out, r.model,
                 {{"best_epoch", r.best_epoch},
                  {"best_val_psnr", r.best_val_psnr},
                  {"train_config", io::config_to_json(cfg)},
                  {"dataset", fs::absolute(data).lexically_normal().string()}});
  log << "best validation PSNR " << io::fmt(r.best_val_psnr) << " dB at epoch " << r.best_epoch << '\n';
  return ok;
}

struct ReconArgs {
  fs::path data, out;
  std::string method, model, split = "test", arms;
  std::optional<std::size_t> iters;
  std::optional<double> lambda;
};

inline ReconOptions recon_options(const std::string &arms, std::optional<std::size_t> iters,
                                  std::optional<double> lambda, std::size_t threads) {
  ReconOptions opt;
  opt.workers = threads;
  if (!arms.empty()) opt.baseline_arms = parse_arms(arms);
  for (CSConfig *cs : {&opt.wavelet, &opt.tv}) {
    if (iters) cs->iters = *iters;
    if (lambda) cs->lambda = *lambda;
    try {
      cs->validate();
    } catch (const Error &e) {
      fail(Errc::usage, e.what());
    }
  }
  return opt;
}

inline std::optional<io::ModelBundle> load_model_for(Method m, const std::string &model_dir) {
  const bool needs = m == Method::sirem || m == Method::sirem_no_audio;
  require(!needs || !model_dir.empty(), Errc::usage,
          "--method " + std::string(method_name(m)) + " requires --model <dir>");
  if (!needs) return std::nullopt;
  return io::load_model(model_dir);
}

inline int cmd_recon(const ReconArgs &a, const Common &c, std::ostream &log) {
  const Method method = parse_method(a.method);
  const auto bundle = load_model_for(method, a.model);
  ReconOptions opt = recon_options(a.arms, a.iters, a.lambda, c.threads);
  if (bundle) opt.model = &bundle->model;
  const auto d = io::load_dataset(a.data);
  const auto ids = split_ids(d, a.split);
  prepare_output_dir(a.out, c.overwrite);
  json provenance = {{"method", method_name(method)},
                     {"dataset", fs::absolute(a.data).lexically_normal().string()},
                     {"split", a.split},
                     {"utterances", ids}};
  if (bundle) provenance["model"] = fs::absolute(a.model).lexically_normal().string();
  if (opt.baseline_arms) provenance["baseline_arms"] = *opt.baseline_arms;
  if (method == Method::wavelet || method == Method::tv) {
    const auto &cs = method == Method::wavelet ? opt.wavelet : opt.tv;
    provenance["lambda"] = cs.lambda;
    provenance["iters"] = cs.iters;
  }
  json timing = json::object();
  for (const auto &id : ids) {
    const auto u = io::load_utterance(d, id);
    const auto frames = reconstruct_frames(method, u, opt);
    const fs::path dir = a.out / id;
    fs::create_directories(dir);
    const GridSize g = frames.at(0).image.grid();
    std::vector<float> stack;
    std::vector<double> ms;
    for (const auto &f : frames) {
      io::write_png(dir / frame_file(f.frame_id), f.image);
      for (double v : f.image) stack.push_back(static_cast<float>(v));
      ms.push_back(f.wall_time_ms);
    }
    io::Manifest m;
    m.metadata = {{"id", id}, {"method", method_name(method)}};
    io::write_array(dir, m, "recon", {frames.size(), g.rows, g.cols}, std::move(stack));
    io::write_manifest(dir, m);
    timing[id] = ms;
    log << id << ": " << frames.size() << " frames\n";
  }
  io::write_json(a.out / "provenance.json", provenance);
  // Wall times are kept apart so the rest of the output is reproducible byte for byte.
  io::write_json(a.out / "timing.json", timing);
  return ok;
}

// Frames of one sequence from either a recon directory or a dataset.
struct FrameSource {
  fs::path root;
  bool is_dataset = false;
  std::optional<io::Dataset> dataset;
  json provenance = json::object();

  explicit FrameSource(const fs::path &dir) : root(dir) {
    if (fs::exists(dir / io::kDatasetFile)) {
      is_dataset = true;
      dataset = io::load_dataset(dir);
    } else {
      require(fs::exists(dir / "provenance.json"), Errc::missing_file,
              dir.string() + " is neither a dataset nor a reconstruction directory");
      provenance = io::read_json(dir / "provenance.json");
    }
  }

  std::vector<std::string> ids() const {
    if (is_dataset) return dataset->all_ids();
    return provenance.at("utterances").get<std::vector<std::string>>();
  }

  std::vector<RealImage> frames(const std::string &id) const {
    NdArray<float> a;
    if (is_dataset) {
      const auto m = io::read_manifest(dataset->dir(id));
      a = io::read_array<float>(dataset->dir(id), m, "reference");
    } else {
      const auto m = io::read_manifest(root / id);
      a = io::read_array<float>(root / id, m, "recon");
    }
    require(a.rank() == 3, Errc::schema_violation, "frame stack of '" + id + "' must be [T, H, W]");
    const GridSize g{a.shape[1], a.shape[2]};
    std::vector<RealImage> out;
    for (std::size_t t = 0; t < a.shape[0]; ++t) {
      RealImage img(g);
      for (std::size_t i = 0; i < img.size(); ++i) img[i] = a.data[t * g.pixels() + i];
      out.push_back(std::move(img));
    }
    return out;
  }
};

inline std::vector<std::string> metric_row(const std::string &seq, const std::string &method, const std::string &metric,
                                           std::optional<double> v) {
  return {seq, method, metric, v ? io::fmt(*v, 10) : "nan"};
}

inline MetricReport evaluate_sequences(const std::string &method,
                                       const std::vector<std::pair<std::string, std::vector<FrameMetrics>>> &seqs) {
  MetricReport r;
  r.method = method;
  for (const auto &[id, fm] : seqs) r.sequences.push_back(summarize_sequence(id, fm));
  aggregate(r);
  return r;
}

inline int cmd_eval(const fs::path &pred, const fs::path &ref, const fs::path &out, const Common &c, std::ostream &log) {
  const FrameSource p(pred), r(ref);
  require(!p.is_dataset, Errc::usage, "--pred must be a reconstruction directory");
  prepare_output_file(out, c.overwrite);
  const std::string method = p.provenance.value("method", std::string("unknown"));
  std::vector<std::pair<std::string, std::vector<FrameMetrics>>> seqs;
  for (const auto &id : p.ids()) {
    const auto x = p.frames(id), y = r.frames(id);
    require(x.size() == y.size(), Errc::shape_mismatch, "'" + id + "' has " + std::to_string(x.size()) +
                                                            " predicted frames and " + std::to_string(y.size()) +
                                                            " reference frames");
    std::vector<FrameMetrics> fm;
    for (std::size_t t = 0; t < x.size(); ++t) fm.push_back(evaluate_frame(x[t], y[t]));
    seqs.emplace_back(id, std::move(fm));
  }
  const auto rep = evaluate_sequences(method, seqs);
  io::CsvWriter csv(out, {"sequence", "method", "metric", "value"});
  for (const auto &s : rep.sequences)
    for (std::size_t k = 0; k < metric_names().size(); ++k) csv.row(metric_row(s.sequence, method, metric_names()[k], s.values[k]));
  for (std::size_t k = 0; k < metric_names().size(); ++k)
    csv.row(metric_row("aggregate", method, metric_names()[k], rep.aggregate[k]));
  log << method << ": PSNR " << io::fmt(rep.aggregate[0].value_or(NAN)) << " dB over " << rep.sequences.size()
      << " sequences\n";
  return ok;
}

struct BenchArgs {
  fs::path data, out;
  std::string methods = "gridding,wavelet,tv,sirem", model, split = "test", arms;
  std::size_t repetitions = 1;
  std::size_t max_frames = 0;
  std::optional<std::size_t> iters;
  std::optional<double> lambda;
};

inline std::vector<Method> parse_methods(const std::string &s) {
  std::vector<Method> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_method(tok));
  require(!out.empty(), Errc::usage, "--methods is empty");
  return out;
}

// Times each method frame by frame on one thread, then scores the outputs.
inline int cmd_bench(const BenchArgs &a, const Common &c, std::ostream &log) {
  const auto methods = parse_methods(a.methods);
  std::optional<io::ModelBundle> bundle;
  for (Method m : methods)
    if (!bundle && (m == Method::sirem || m == Method::sirem_no_audio)) bundle = load_model_for(m, a.model);
  require(a.repetitions >= 1, Errc::usage, "--repetitions must be positive");
  ReconOptions opt = recon_options(a.arms, a.iters, a.lambda, 1);
  if (bundle) opt.model = &bundle->model;
  const auto d = io::load_dataset(a.data);
  const auto ids = split_ids(d, a.split);
  prepare_output_file(a.out, c.overwrite);
  std::vector<io::UtteranceData> data;
  for (const auto &id : ids) data.push_back(io::load_utterance(d, id));

  io::CsvWriter csv(a.out, {"sequence", "method", "metric", "value", "ms_per_frame_mean", "ms_per_frame_std", "fps",
                            "realtime"});
  for (Method m : methods) {
    std::vector<double> ms;
    std::vector<std::pair<std::string, std::vector<FrameMetrics>>> seqs;
    for (const auto &u : data) {
      const FrameRunner run(m, u, opt);
      const std::size_t n = a.max_frames ? std::min(a.max_frames, run.frames()) : run.frames();
      std::vector<ReconFrame> frames(n);
      const auto samples = bench_samples(n, a.repetitions, [&](std::size_t f) { frames[f] = run(f); });
      std::vector<FrameMetrics> fm;
      for (std::size_t f = 0; f < n; ++f) fm.push_back(evaluate_frame(frames[f].image, u.reference[f]));
      seqs.emplace_back(u.id, std::move(fm));
      ms.insert(ms.end(), samples.begin(), samples.end());
    }
    auto rep = evaluate_sequences(std::string(method_name(m)), seqs);
    rep.timing = timing_stats(ms);
    const auto &tm = rep.timing;
    const std::vector<std::string> timing_cells = {io::fmt(tm.mean_ms, 6), io::fmt(tm.std_ms, 6), io::fmt(tm.fps(), 6),
                                                   tm.realtime() ? "true" : "false"};
    auto emit = [&](const std::string &seq, const std::string &metric, std::optional<double> v) {
      auto row = metric_row(seq, rep.method, metric, v);
      row.insert(row.end(), timing_cells.begin(), timing_cells.end());
      csv.row(row);
    };
    for (const auto &s : rep.sequences)
      for (std::size_t k = 0; k < metric_names().size(); ++k) emit(s.sequence, metric_names()[k], s.values[k]);
    for (std::size_t k = 0; k < metric_names().size(); ++k) emit("aggregate", metric_names()[k], rep.aggregate[k]);
    log << rep.method << ": " << io::fmt(tm.mean_ms) << " ms/frame, PSNR " << io::fmt(rep.aggregate[0].value_or(NAN))
        << " dB\n";
  }
  return ok;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char *const *argv, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
  CLI::App app{"Speech-informed reconstruction of dynamic vocal-tract MRI"};
  app.require_subcommand(1);
  Common common;
  std::optional<std::size_t> threads;
  auto add_common = [&](CLI::App *sub) {
    sub->add_flag("--overwrite", common.overwrite, "Replace existing outputs");
    sub->add_option("--seed", common.seed, "Seed override for every stochastic component");
    sub->add_option("--threads", threads, std::string("Worker threads (default: ") + kThreadsEnv + " or all cores)")
        ->check(CLI::PositiveNumber);
  };

  std::string config;
  fs::path out_dir;
  auto *sim = app.add_subcommand("simulate", "Generate a synthetic phantom dataset");
  sim->add_option("--config", config, "Simulation config (JSON)");
  sim->add_option("--out", out_dir, "Dataset directory")->required();
  add_common(sim);

  fs::path data;
  bool freeze_arms = false, zero_features = false;
  auto *tr = app.add_subcommand("train", "Train decoder and arm profile");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--config", config, "Training config (JSON)");
  tr->add_option("--out", out_dir, "Model directory")->required();
  tr->add_flag("--freeze-arms", freeze_arms, "Keep every arm weight at 1");
  tr->add_flag("--zero-features", zero_features, "Audio ablation: decode from zero features");
  add_common(tr);

  ReconArgs ra;
  auto *rc = app.add_subcommand("recon", "Reconstruct frames with one method");
  rc->add_option("--data", ra.data, "Dataset directory")->required();
  rc->add_option("--method", ra.method, "gridding | wavelet | tv | sirem | sirem_no_audio | reference")->required();
  rc->add_option("--model", ra.model, "Model directory (SIREM methods)");
  rc->add_option("--out", ra.out, "Output directory")->required();
  rc->add_option("--split", ra.split, "train | val | test | all")->check(CLI::IsMember({"train", "val", "test", "all"}));
  rc->add_option("--arms", ra.arms, "Arms kept by the baselines, e.g. 0,6");
  rc->add_option("--iters", ra.iters, "Iterations for wavelet/tv");
  rc->add_option("--lambda", ra.lambda, "Regularization weight for wavelet/tv");
  add_common(rc);

  fs::path pred, ref, out_file;
  auto *ev = app.add_subcommand("eval", "Score reconstructions against references");
  ev->add_option("--pred", pred, "Reconstruction directory")->required();
  ev->add_option("--ref", ref, "Dataset or reconstruction directory")->required();
  ev->add_option("--out", out_file, "Metrics CSV")->required();
  add_common(ev);

  BenchArgs ba;
  auto *bn = app.add_subcommand("bench", "Time and score several methods");
  bn->add_option("--data", ba.data, "Dataset directory")->required();
  bn->add_option("--methods", ba.methods, "Comma-separated methods");
  bn->add_option("--model", ba.model, "Model directory (SIREM methods)");
  bn->add_option("--out", ba.out, "Benchmark CSV")->required();
  bn->add_option("--split", ba.split, "train | val | test | all")->check(CLI::IsMember({"train", "val", "test", "all"}));
  bn->add_option("--arms", ba.arms, "Arms kept by the baselines, e.g. 0,6");
  bn->add_option("--repetitions", ba.repetitions, "Timed passes over each sequence");
  bn->add_option("--frames", ba.max_frames, "Frames per sequence (0 = all)");
  bn->add_option("--iters", ba.iters, "Iterations for wavelet/tv");
  bn->add_option("--lambda", ba.lambda, "Regularization weight for wavelet/tv");
  add_common(bn);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp &e) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << '\n';
    return usage_error;
  }

  try {
    common.threads = threads.value_or(worker_count());
    if (sim->parsed()) return cmd_simulate(config, out_dir, common, out);
    if (tr->parsed()) return cmd_train(data, config, out_dir, freeze_arms, zero_features, common, out);
    if (rc->parsed()) return cmd_recon(ra, common, out);
    if (ev->parsed()) return cmd_eval(pred, ref, out_file, common, out);
    if (bn->parsed()) return cmd_bench(ba, common, out);
  } catch (const Error &e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error &e) {
    err << "error: " << e.what() << '\n';
    return data_error;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return runtime_error;
  }
  return usage_error;
}

}  // namespace sirem::cli
