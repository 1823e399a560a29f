#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "msvit/checkpoint.hpp"
#include "msvit/config.hpp"
#include "msvit/train.hpp"

namespace msvit::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// option bags shared between commands

struct ConfigArgs {
  std::string profile;      // built-in architecture name
  std::string config_file;  // key = value file; overrides profile keys
  // command-line overrides; they win over both layers
  std::optional<int64_t> epochs, batch, timesteps;
  std::optional<uint64_t> seed;
  bool deterministic = false;
};

struct DataArgs {
  std::string kind;  // cifar10 | synth-events | events
  std::string dir;   // --data-dir, else MSVIT_DATA_DIR
  uint64_t data_seed = 1;
  int64_t limit = 0, eval_limit = 0;        // cifar caps, 0 = all
  std::vector<int64_t> classes;             // cifar label subset
  int64_t per_class = 50, eval_per_class = 10;  // synthetic stream counts
  int64_t sensor = 32;                      // event sensor resolution
};

void add_config_flags(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--profile", a.profile, "built-in architecture profile");
  cmd->add_option("--config", a.config_file, "config file; overrides profile keys");
  cmd->add_option("--epochs", a.epochs, "override train.epochs");
  cmd->add_option("--batch", a.batch, "override train.batch");
  cmd->add_option("--timesteps", a.timesteps, "override model.timesteps");
  cmd->add_option("--seed", a.seed, "override model.seed and train.seed");
  cmd->add_flag("--deterministic", a.deterministic,
                "zero wall-clock metric fields for byte-stable outputs");
}

void add_data_flags(CLI::App* cmd, DataArgs& d) {
  cmd->add_option("--data", d.kind, "dataset kind: cifar10, synth-events, or events");
  cmd->add_option("--data-dir", d.dir, "dataset root (else MSVIT_DATA_DIR)");
  cmd->add_option("--data-seed", d.data_seed, "synthetic stream seed");
  cmd->add_option("--limit", d.limit, "cap train examples (cifar10; 0 = all)");
  cmd->add_option("--eval-limit", d.eval_limit, "cap eval examples (cifar10; 0 = all)");
  cmd->add_option("--classes", d.classes,
                  "cifar10 label subset, e.g. --classes 3 5; labels are remapped to 0..k-1");
  cmd->add_option("--per-class", d.per_class, "synth-events: train examples per class");
  cmd->add_option("--eval-per-class", d.eval_per_class,
                  "synth-events: eval examples per class");
  cmd->add_option("--sensor", d.sensor, "event sensor resolution");
}

// ---------------------------------------------------------------------------
// config resolution: profile <- config file <- command-line overrides

KvMap resolve_kv(const ConfigArgs& a) {
  KvMap kv;
  if (!a.profile.empty()) kv = profile_config(a.profile);
  if (!a.config_file.empty()) kv = merge_configs(kv, load_config_file(a.config_file));
  KvMap over;
  if (a.epochs) over["train.epochs"] = std::to_string(*a.epochs);
  if (a.batch) over["train.batch"] = std::to_string(*a.batch);
  if (a.timesteps) over["model.timesteps"] = std::to_string(*a.timesteps);
  if (a.seed) {
    over["model.seed"] = std::to_string(*a.seed);
    over["train.seed"] = std::to_string(*a.seed);
  }
  if (a.deterministic) over["train.deterministic"] = "true";
  return merge_configs(kv, over);
}

struct Resolved {
  ModelConfig model;
  TrainOptions train;
  KvMap kv;  // normalized: every model.* and train.* key, canonical values
};

Resolved resolve(const ConfigArgs& a) {
  KvMap kv = resolve_kv(a);
  Resolved r;
  r.model = model_config_from_kv(kv);
  r.train = train_options_from_kv(kv);
  reject_unknown_keys(kv, "resolved config");
  r.kv = merge_configs(model_config_to_kv(r.model), train_options_to_kv(r.train));
  return r;
}

// ---------------------------------------------------------------------------
// datasets

std::string data_root(const DataArgs& d) {
  if (!d.dir.empty()) return d.dir;
  const char* env = std::getenv("MSVIT_DATA_DIR");
  return env ? env : "";
}

Dataset load_split(const DataArgs& d, const ModelConfig& m, bool eval_split) {
  if (d.kind.empty()) raise("--data is required (cifar10, synth-events, or events)");
  if (d.kind == "cifar10") {
    const std::string root = data_root(d);
    if (root.empty()) raise("cifar10 needs --data-dir or MSVIT_DATA_DIR");
    CifarOptions opt;
    opt.limit = eval_split ? d.eval_limit : d.limit;
    opt.classes = d.classes;
    return load_cifar10(root, eval_split ? Split::Test : Split::Train, opt);
  }
  if (d.kind == "synth-events") {
    const int64_t per = eval_split ? d.eval_per_class : d.per_class;
    const uint64_t seed = d.data_seed + (eval_split ? 1000 : 0);
    return synth_event_dataset(per, seed, m.timesteps, m.height, m.width);
  }
  if (d.kind == "events") {
    const std::string root = data_root(d);
    if (root.empty()) raise("events needs --data-dir or MSVIT_DATA_DIR");
    return load_event_dataset(root, eval_split ? "test" : "train", m.timesteps, m.height,
                              m.width, d.sensor);
  }
  raise("unknown --data kind '", d.kind, "' (expected cifar10, synth-events, or events)");
}

// One aggregated complaint when the dataset cannot feed the model.
void check_compatible(const Dataset& d, const ModelConfig& m, const char* which) {
  std::vector<std::string> bad;
  if (d.classes != m.classes)
    bad.push_back("has " + std::to_string(d.classes) + " classes, model.classes = " +
                  std::to_string(m.classes));
  if (d.channels != m.in_channels)
    bad.push_back("has " + std::to_string(d.channels) + " channels, model.in_channels = " +
                  std::to_string(m.in_channels));
  if (d.height != m.height || d.width != m.width)
    bad.push_back("is " + std::to_string(d.height) + "x" + std::to_string(d.width) +
                  ", model expects " + std::to_string(m.height) + "x" +
                  std::to_string(m.width));
  if (bad.empty()) return;
  std::string msg = std::string(which) + " dataset does not fit the model:";
  for (const auto& b : bad) msg += "\n  - " + b;
  raise(msg);
}

// ---------------------------------------------------------------------------
// output directory with cleanup of partial results on failure

class OutputSet {
public:
  void prepare(const std::string& dir) {
    dir_ = fs::path(dir);
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) raise("cannot create output directory '", dir, "': ", ec.message());
    active_ = true;
  }
  bool active() const { return active_; }
  fs::path file(const std::string& name) const { return dir_ / name; }
  void wrote(const fs::path& p) { files_.push_back(p); }
  void commit() { files_.clear(); }
  void discard() {
    std::error_code ec;
    for (const auto& p : files_) fs::remove(p, ec);
    files_.clear();
  }

private:
  bool active_ = false;
  fs::path dir_;
  std::vector<fs::path> files_;
};

void write_text(OutputSet& outs, const std::string& name, const std::string& text) {
  const fs::path p = outs.file(name);
  std::ofstream f(p, std::ios::binary);
  if (!f) raise("cannot write '", p.string(), "'");
  f << text;
  f.close();
  if (!f) raise("write failed for '", p.string(), "'");
  outs.wrote(p);
}

// ---------------------------------------------------------------------------
// shared rendering

std::string attention_text(AttentionKind k) { return k == AttentionKind::Mssa ? "mssa" : "ssa"; }

std::string millions(int64_t n) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << static_cast<double>(n) / 1e6 << "M";
  return os.str();
}

// Architecture summary as config-file comments; the lines after it are the
// resolved keys themselves, so the whole printout re-parses to the same model.
void print_architecture(std::ostream& out, const Resolved& r, const Model* model) {
  const auto stages = stage_schedule(r.model);
  out << "# msvit architecture\n";
  if (model)
    out << "# parameters  : " << model->param_count() << " (" << millions(model->param_count())
        << ")\n";
  out << "# model hash  : " << hex64(r.model.hash()) << "  (seed-independent identity)\n";
  out << "# config hash : " << hex64(config_hash(r.kv)) << "\n";
  out << "# stage   dim  depth     grid   tokens  attention\n";
  for (const auto& s : stages) {
    std::ostringstream grid;
    grid << s.grid_h << "x" << s.grid_w;
    out << "# " << std::setw(5) << s.index + 1 << std::setw(6) << s.dim << std::setw(7)
        << s.depth << std::setw(9) << grid.str() << std::setw(9) << s.tokens() << "  "
        << attention_text(s.kind) << "\n";
  }
  out << config_text(r.kv);
}

int64_t params_under(const ParamStore& ps, const std::string& prefix) {
  int64_t n = 0;
  for (const auto& e : ps.entries())
    if (!e.buffer && e.path.rfind(prefix + ".", 0) == 0) n += e.var.value().numel();
  return n;
}

// Static per-layer cost table from one instrumented zero-input pass.
void print_static_table(std::ostream& out, Model& model, const Profiler& prof) {
  size_t width = 24;
  for (const auto& l : prof.layers()) width = std::max(width, l.path.size() + 2);
  out << std::left << std::setw(static_cast<int>(width)) << "layer" << std::right
      << std::setw(14) << "kind" << std::setw(16) << "flops/sample" << std::setw(12)
      << "params" << "\n";
  int64_t flops = 0, attributed = 0;
  for (const auto& l : prof.layers()) {
    const int64_t p = params_under(model.params(), l.path);
    flops += l.flops_per_sample;
    attributed += p;
    out << std::left << std::setw(static_cast<int>(width)) << l.path << std::right
        << std::setw(14) << layer_kind_name(l.kind) << std::setw(16) << l.flops_per_sample
        << std::setw(12) << p << "\n";
  }
  const int64_t total = model.param_count();
  out << std::left << std::setw(static_cast<int>(width)) << "(norm affine)" << std::right
      << std::setw(14) << "" << std::setw(16) << "" << std::setw(12) << total - attributed
      << "\n";
  out << std::left << std::setw(static_cast<int>(width)) << "total" << std::right
      << std::setw(14) << "" << std::setw(16) << flops << std::setw(12) << total << "\n";
  out << "flops are dense multiply-accumulates per sample per timestep; timesteps = "
      << model.config().timesteps << "\n";
}

Profiler static_profile(Model& model) {
  const ModelConfig& m = model.config();
  Profiler prof;
  Ctx ctx;
  ctx.prof = &prof;
  Tensor zeros({m.timesteps, 1, m.in_channels, m.height, m.width});
  model.forward(ctx, zeros);
  return prof;
}

// ---------------------------------------------------------------------------
// commands

struct TrainCmd {
  ConfigArgs cfg;
  DataArgs data;
  std::string out_dir = "msvit-out";
  std::string resume;
};

int cmd_train(const TrainCmd& a, std::ostream& out, std::ostream& err) {
  Resolved r;
  Dataset train_set, eval_set;
  std::unique_ptr<Model> model;
  OutputSet outs;
  try {
    r = resolve(a.cfg);
    train_set = load_split(a.data, r.model, false);
    eval_set = load_split(a.data, r.model, true);
    check_compatible(train_set, r.model, "train");
    check_compatible(eval_set, r.model, "eval");
    model = Model::build(r.model);
    if (!a.resume.empty()) load_checkpoint_into(*model, a.resume);
    outs.prepare(a.out_dir);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    TrainResult res = train_model(*model, train_set, eval_set, r.train, &out);

    write_metrics_csv(outs.file("metrics.csv").string(), res.history);
    outs.wrote(outs.file("metrics.csv"));
    save_checkpoint(*model, outs.file("model.ckpt").string());
    outs.wrote(outs.file("model.ckpt"));

    json summary;
    summary["command"] = "train";
    summary["config_hash"] = hex64(config_hash(r.kv));
    summary["model_hash"] = hex64(r.model.hash());
    summary["parameters"] = model->param_count();
    summary["train_samples"] = train_set.size();
    summary["eval_samples"] = eval_set.size();
    summary["epochs"] = r.train.epochs;
    summary["optimizer_steps"] = res.optimizer_steps;
    summary["skipped_steps"] = res.skipped_steps;
    summary["final_accuracy"] = res.final_accuracy;
    for (auto it = res.history.rbegin(); it != res.history.rend(); ++it)
      if (it->split == "eval") {
        summary["final_eval_loss"] = it->loss;
        break;
      }
    summary["deterministic"] = r.train.deterministic;
    write_text(outs, "summary.json", summary.dump(2) + "\n");

    outs.commit();
    out << "final eval accuracy " << std::fixed << std::setprecision(4) << res.final_accuracy
        << " after " << res.optimizer_steps << " steps\n";
    out << "wrote " << outs.file("metrics.csv").string() << ", "
        << outs.file("summary.json").string() << ", " << outs.file("model.ckpt").string()
        << "\n";
    return kExitOk;
  } catch (const DivergenceError& e) {
    outs.discard();
    err << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    outs.discard();
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

struct EvalCmd {
  std::string ckpt;
  DataArgs data;
  int64_t batch = 32;
  std::string out_dir;
  bool energy = false;
  bool deterministic = false;  // eval has no clock or rng; accepted for symmetry
};

int cmd_eval(const EvalCmd& a, std::ostream& out, std::ostream& err) {
  std::unique_ptr<Model> model;
  Dataset data;
  OutputSet outs;
  try {
    model = load_checkpoint(a.ckpt);
    data = load_split(a.data, model->config(), true);
    check_compatible(data, model->config(), "eval");
    if (a.batch < 1) raise("--batch must be positive");
    if (!a.out_dir.empty()) outs.prepare(a.out_dir);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    EvalResult res = evaluate(*model, data, a.batch, model->config().timesteps);
    out << std::fixed << std::setprecision(4);
    out << "samples " << data.size() << "  loss " << res.loss << "  top-1 " << res.accuracy
        << "  top-5 " << res.accuracy_top5;
    if (const auto fr = res.profiler.model_firing_rate()) out << "  firing-rate " << *fr;
    out << "\n";

    json summary;
    summary["command"] = "eval";
    summary["checkpoint"] = a.ckpt;
    summary["samples"] = data.size();
    summary["loss"] = res.loss;
    summary["top1"] = res.accuracy;
    summary["top5"] = res.accuracy_top5;
    if (const auto fr = res.profiler.model_firing_rate()) summary["model_firing_rate"] = *fr;

    if (a.energy) {
      EnergyReport report = compute_energy(res.profiler);
      out << report.to_table();
      out << std::fixed << std::setprecision(4) << "ann equivalent " << report.ann_mj()
          << " mJ/sample; spiking " << report.total_mj() << " mJ/sample\n";
      summary["energy_pj_per_sample"] = report.total_pj;
      summary["ann_energy_pj_per_sample"] = report.ann_pj;
      if (outs.active()) write_text(outs, "energy.json", report.to_json() + "\n");
    }
    if (outs.active()) write_text(outs, "summary.json", summary.dump(2) + "\n");
    outs.commit();
    return kExitOk;
  } catch (const std::exception& e) {
    outs.discard();
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

struct ProfileCmd {
  ConfigArgs cfg;  // --batch doubles as the realized-profiling batch size
  std::string ckpt;  // exclusive with --profile/--config
  DataArgs data;
  int64_t samples = 64;
  std::string out_dir;
  bool ann_equivalent = false;
};

int cmd_profile(const ProfileCmd& a, std::ostream& out, std::ostream& err) {
  Resolved r;
  std::unique_ptr<Model> model;
  Dataset data;
  OutputSet outs;
  const bool realized = !a.data.kind.empty();
  const int64_t batch = a.cfg.batch.value_or(32);
  try {
    if (!a.ckpt.empty()) {
      if (!a.cfg.profile.empty() || !a.cfg.config_file.empty())
        raise("--ckpt carries its own architecture; drop --profile/--config");
      model = load_checkpoint(a.ckpt);
      r.model = model->config();
      r.kv = merge_configs(model_config_to_kv(r.model), train_options_to_kv(TrainOptions{}));
    } else {
      r = resolve(a.cfg);
      model = Model::build(r.model);
    }
    if (realized) {
      if (a.samples < 1) raise("--samples must be positive when --data is given");
      if (batch < 1) raise("--batch must be positive");
      DataArgs d = a.data;
      if (d.kind == "cifar10" && (d.eval_limit == 0 || d.eval_limit > a.samples))
        d.eval_limit = a.samples;
      if (d.kind == "synth-events")
        d.eval_per_class = std::max<int64_t>(1, (a.samples + kSynthEventClasses - 1) /
                                                    kSynthEventClasses);
      data = load_split(d, r.model, true);
      if (data.size() > a.samples)
        data.samples.resize(static_cast<size_t>(a.samples));
      check_compatible(data, r.model, "profile");
    }
    if (!a.out_dir.empty()) outs.prepare(a.out_dir);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    out << "# " << (a.ckpt.empty() ? "fresh weights" : a.ckpt) << ", "
        << model->param_count() << " parameters (" << millions(model->param_count())
        << ")\n";
    if (realized) {
      EvalResult res = evaluate(*model, data, batch, r.model.timesteps);
      EnergyReport report = compute_energy(res.profiler);
      out << report.to_table();
      out << std::fixed << std::setprecision(4);
      out << "spiking energy " << report.total_mj() << " mJ/sample over " << data.size()
          << " samples\n";
      if (a.ann_equivalent)
        out << "ann equivalent " << report.ann_mj() << " mJ/sample ("
            << report.constants.e_mac_pj << " pJ x total flops); ratio "
            << (report.ann_pj > 0 ? report.total_pj / report.ann_pj : 0.0) << "\n";
      if (outs.active()) write_text(outs, "energy.json", report.to_json() + "\n");
    } else {
      Profiler prof = static_profile(*model);
      print_static_table(out, *model, prof);
      if (a.ann_equivalent) {
        EnergyReport report = compute_energy(prof);
        out << std::fixed << std::setprecision(4) << "ann equivalent " << report.ann_mj()
            << " mJ/sample (" << report.constants.e_mac_pj << " pJ x total flops)\n";
      }
    }
    outs.commit();
    return kExitOk;
  } catch (const std::exception& e) {
    outs.discard();
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

struct InspectCmd {
  ConfigArgs cfg;
};

int cmd_inspect(const InspectCmd& a, std::ostream& out, std::ostream& err) {
  Resolved r;
  std::unique_ptr<Model> model;
  try {
    r = resolve(a.cfg);
    model = Model::build(r.model);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    print_architecture(out, r, model.get());
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

struct SynthDataCmd {
  std::string out_dir;
  int64_t per_class = 50;
  int64_t test_per_class = 10;
  uint64_t seed = 1;
  int64_t sensor = 32;
};

int cmd_synth_data(const SynthDataCmd& a, std::ostream& out, std::ostream& err) {
  try {
    if (a.per_class < 1 || a.test_per_class < 1) raise("per-class counts must be positive");
    if (a.sensor < 8) raise("--sensor must be at least 8");
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    write_event_dataset(a.out_dir, "train", a.per_class, a.seed, a.sensor);
    write_event_dataset(a.out_dir, "test", a.test_per_class, a.seed + 1000, a.sensor);
    out << "wrote " << kSynthEventClasses * a.per_class << " train and "
        << kSynthEventClasses * a.test_per_class << " test event streams under " << a.out_dir
        << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"msvit: spike-driven multi-scale vision transformer"};
  app.require_subcommand(1);

  TrainCmd train;
  auto* train_cmd = app.add_subcommand("train", "train a model and write metrics + checkpoint");
  add_config_flags(train_cmd, train.cfg);
  add_data_flags(train_cmd, train.data);
  train_cmd->add_option("--out", train.out_dir, "output directory")
      ->capture_default_str();
  train_cmd->add_option("--resume", train.resume, "checkpoint to load weights from");

  EvalCmd eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval_cmd->add_option("--ckpt", eval.ckpt, "checkpoint file")->required();
  add_data_flags(eval_cmd, eval.data);
  eval_cmd->add_option("--batch", eval.batch, "eval batch size")->capture_default_str();
  eval_cmd->add_option("--out", eval.out_dir, "directory for summary.json / energy.json");
  eval_cmd->add_flag("--energy", eval.energy, "attach the profiler; report and write energy");
  eval_cmd->add_flag("--deterministic", eval.deterministic,
                     "accepted for symmetry; eval is already reproducible");

  ProfileCmd prof;
  auto* prof_cmd = app.add_subcommand(
      "profile", "per-layer flops/params; with --data also realized firing rates and energy");
  add_config_flags(prof_cmd, prof.cfg);
  prof_cmd->add_option("--ckpt", prof.ckpt, "profile a trained checkpoint instead");
  add_data_flags(prof_cmd, prof.data);
  prof_cmd->add_option("--samples", prof.samples, "dataset slice size for realized profiling")
      ->capture_default_str();
  prof_cmd->add_option("--out", prof.out_dir, "directory for energy.json");
  prof_cmd->add_flag("--ann-equivalent", prof.ann_equivalent,
                     "also report the dense mac-per-flop energy figure");

  InspectCmd inspect;
  auto* inspect_cmd = app.add_subcommand(
      "inspect", "print the resolved architecture; output re-parses as a config file");
  add_config_flags(inspect_cmd, inspect.cfg);

  SynthDataCmd synth;
  auto* synth_cmd =
      app.add_subcommand("synth-data", "write a synthetic event dataset as csv streams");
  synth_cmd->add_option("--out", synth.out_dir, "dataset directory")->required();
  synth_cmd->add_option("--per-class", synth.per_class, "train streams per class")
      ->capture_default_str();
  synth_cmd->add_option("--test-per-class", synth.test_per_class, "test streams per class")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  synth_cmd->add_option("--sensor", synth.sensor, "sensor resolution")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  if (train_cmd->parsed()) return cmd_train(train, out, err);
  if (eval_cmd->parsed()) return cmd_eval(eval, out, err);
  if (prof_cmd->parsed()) return cmd_profile(prof, out, err);
  if (inspect_cmd->parsed()) return cmd_inspect(inspect, out, err);
  if (synth_cmd->parsed()) return cmd_synth_data(synth, out, err);
  err << "config error: no command given\n";
  return kExitConfig;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace msvit::cli
