#include "mambadet/cli.hpp"

#include "mambadet/bench.hpp"
#include "mambadet/binary_io.hpp"
#include "mambadet/checkpoint.hpp"
#include "mambadet/dataset.hpp"
#include "mambadet/evaluate.hpp"
#include "mambadet/experiment.hpp"
#include "mambadet/scan2d.hpp"
#include "mambadet/text.hpp"
#include "mambadet/train.hpp"

#include "CLI11.hpp"

#include <charconv>
#include <filesystem>
#include <functional>
#include <ostream>
#include <sstream>

namespace mambadet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Key {
  std::string name;  // config-file spelling; the flag is --name with '_' -> '-'
  std::string def;
  std::string help;
  bool flag = false;
};

std::string flag_name(const std::string& key) {
  std::string f = key;
  for (char& c : f) {
    if (c == '_') c = '-';
  }
  return "--" + f;
}

class Settings {
 public:
  Settings(std::string command, std::map<std::string, std::string> values)
      : command_(std::move(command)), values_(std::move(values)) {}

  const std::string& command() const { return command_; }
  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::logic_error("unregistered key " + key);
    return it->second;
  }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::uint64_t u64(const std::string& key) const {
    const std::string& s = str(key);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw UsageError(key + ": expected a non-negative integer, got '" + s + "'");
    }
    return v;
  }
  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }
  double real(const std::string& key) const {
    const std::string& s = str(key);
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw UsageError(key + ": expected a number, got '" + s + "'");
    }
    return v;
  }
  bool boolean(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no" || s.empty()) return false;
    throw UsageError(key + ": expected true or false, got '" + s + "'");
  }
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
    if (out.empty()) throw UsageError(key + ": expected a comma-separated list");
    return out;
  }
  std::vector<std::uint64_t> u64_list(const std::string& key) const {
    std::vector<std::uint64_t> out;
    for (const auto& item : list(key)) {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || p != item.data() + item.size()) {
        throw UsageError(key + ": '" + item + "' is not a non-negative integer");
      }
      out.push_back(v);
    }
    return out;
  }

  std::string echo() const {
    std::string out = "# resolved configuration for '" + command_ + "'\n";
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  std::string command_;
  std::map<std::string, std::string> values_;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
};

using Handler = std::function<int(Settings&, Io&)>;

struct Command {
  std::string name;
  std::string description;
  std::vector<Key> keys;
  bool writes_output = true;
  Handler handler;
};

// --- shared helpers ------------------------------------------------------------

fs::path out_dir(const Settings& s) {
  const std::string& dir = s.str("out");
  if (dir.empty()) throw UsageError("--out is required");
  return fs::path(dir);
}

// Creates the output directory and applies the overwrite policy to `files`.
void prepare_output(const Settings& s, Io& io, const std::vector<std::string>& files) {
  const fs::path dir = out_dir(s);
  for (const auto& f : files) {
    if (!fs::exists(dir / f)) continue;
    if (s.boolean("no_clobber")) {
      throw std::runtime_error("refusing to overwrite " + (dir / f).string() + " (--no-clobber)");
    }
    io.err << "warning: overwriting " << (dir / f).string() << "\n";
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) { io::write_file(path.string(), text); }

void echo_config(const Settings& s) {
  write_text(out_dir(s) / (s.command() + ".config"), s.echo());
}

std::vector<std::string> with_echo(const Settings& s, std::vector<std::string> files) {
  files.push_back(s.command() + ".config");
  return files;
}

data::Dataset load_dataset(const Settings& s) {
  fs::path p = s.str("data");
  if (p.empty()) throw UsageError("--data is required (a manifest.json or its directory)");
  if (fs::is_directory(p)) p /= "manifest.json";
  if (!fs::exists(p)) throw std::runtime_error("dataset manifest not found: " + p.string());
  json manifest;
  try {
    manifest = json::parse(io::read_file(p.string()));
  } catch (const json::exception& e) {
    throw std::runtime_error("cannot parse " + p.string() + ": " + e.what());
  }
  return data::dataset_from_manifest(manifest);
}

model::Model load_model(const Settings& s) {
  const std::string& path = s.str("checkpoint");
  if (path.empty()) throw UsageError("--checkpoint is required");
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
  return checkpoint::load(path);
}

const data::Split& pick_split(const data::Dataset& ds, const std::string& name) {
  if (name == "train") return ds.train;
  if (name == "val") return ds.val;
  if (name == "test") return ds.test;
  throw UsageError("split must be train, val or test, got '" + name + "'");
}

std::vector<Key> model_keys() {
  return {{"preset", "desk-vim", "model preset (vim-tiny, desk-vim, desk-mambavision, desk-vssd)"},
          {"family", "", "override the preset's family (vim, mambavision, vssd)"},
          {"embed_dim", "", "override the embedding dimension"},
          {"depth", "", "override the number of blocks"},
          {"state_dim", "", "override the SSM state size"},
          {"scan", "", "override the scan strategy"},
          {"scan_param", "", "override the scan window/stride"},
          {"merge", "", "override the direction merge (sum or mean)"},
          {"tie_directions", "", "vim: share branch weights across directions (true/false)"}};
}

model::ModelConfig resolve_model(Settings& s) {
  model::ModelConfig cfg;
  try {
    cfg = model::preset(s.str("preset"));
    if (!s.str("family").empty()) {
      const auto fam = model::parse_family(s.str("family"));
      if (fam != cfg.family) {
        if (cfg.preset == "vim-tiny") throw UsageError("--family cannot change the vim-tiny preset");
        cfg = model::desk_preset(fam);
      }
    }
  } catch (const model::ConfigError& e) {
    throw UsageError(e.what());
  }
  if (!s.str("embed_dim").empty()) cfg.embed_dim = s.size("embed_dim");
  if (!s.str("depth").empty()) cfg.depth = s.size("depth");
  if (!s.str("state_dim").empty()) cfg.state_dim = s.size("state_dim");
  if (!s.str("scan").empty()) cfg.scan = s.str("scan");
  if (!s.str("scan_param").empty()) cfg.scan_param = s.size("scan_param");
  if (!s.str("merge").empty()) {
    if (s.str("merge") != "sum" && s.str("merge") != "mean") throw UsageError("merge must be sum or mean");
    cfg.merge = s.str("merge") == "sum" ? scan::Merge::kSum : scan::Merge::kMean;
  }
  if (!s.str("tie_directions").empty()) cfg.tie_directions = s.boolean("tie_directions");
  try {
    cfg.validate();
  } catch (const model::ConfigError& e) {
    throw UsageError(e.what());
  }
  // Echo the effective values, not the blanks.
  s.set("family", model::family_name(cfg.family));
  s.set("embed_dim", std::to_string(cfg.embed_dim));
  s.set("depth", std::to_string(cfg.depth));
  s.set("state_dim", std::to_string(cfg.state_dim));
  s.set("scan", cfg.scan);
  s.set("scan_param", std::to_string(cfg.scan_param));
  s.set("merge", cfg.merge == scan::Merge::kSum ? "sum" : "mean");
  s.set("tie_directions", cfg.tie_directions ? "true" : "false");
  return cfg;
}

std::vector<Key> hyper_keys() {
  return {{"epochs", "6", "training epochs"},
          {"batch", "32", "minibatch size"},
          {"lr", "0.001", "peak learning rate (cosine decay to 0)"}};
}

train::TrainHyper resolve_hyper(const Settings& s) {
  train::TrainHyper h;
  h.epochs = s.size("epochs");
  h.batch = s.size("batch");
  h.lr = s.real("lr");
  h.seed = s.u64("seed");
  try {
    h.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return h;
}

std::vector<Key> data_keys() {
  return {{"n_train", "1000", "training images (half real, half fake)"},
          {"n_val", "200", "validation images (half real, half fake)"},
          {"n_test", "500", "images per test subset"},
          {"image_h", "32", "image height"},
          {"image_w", "32", "image width"},
          {"train_generator", "G1", "generator whose fakes appear in train/val"},
          {"strength", "0.5", "artifact strength of every generator, in (0, 1]"}};
}

data::DatasetConfig resolve_data(const Settings& s) {
  data::DatasetConfig c;
  c.n_train = s.size("n_train");
  c.n_val = s.size("n_val");
  c.n_test = s.size("n_test");
  c.image_h = s.size("image_h");
  c.image_w = s.size("image_w");
  const double strength = s.real("strength");
  for (auto& g : c.generators) g.strength = strength;
  c.seed = s.u64("seed");
  try {
    c.train_generator = data::parse_generator(s.str("train_generator"));
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

// --- commands ---------------------------------------------------------------------

int cmd_bench(Settings& s, Io& io) {
  bench::BenchConfig cfg;
  cfg.lengths.clear();
  for (auto v : s.u64_list("lengths")) cfg.lengths.push_back(static_cast<std::size_t>(v));
  cfg.state_dim = s.size("state_dim");
  cfg.channels = s.size("channels");
  cfg.chunk = s.size("chunk");
  cfg.repeats = s.size("repeats");
  cfg.seed = s.u64("seed");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const bool to_disk = !s.str("out").empty();
  if (to_disk) prepare_output(s, io, with_echo(s, {"bench.json", "bench.csv"}));

  const auto report = bench::run_bench(cfg);
  for (const auto& c : report.checks) {
    io.out << "check " << c.pair << " L=" << c.length << " max_abs_err=" << format_double(c.max_abs_err)
           << (c.pass ? " ok" : " FAIL") << "\n";
  }
  if (!report.correct) {
    if (to_disk) write_text(out_dir(s) / "bench.json", report.to_json().dump(2) + "\n");
    throw CheckFailure("forms disagree beyond " + format_double(cfg.tolerance) + "; no timings taken");
  }
  io.out << "method,length,seconds\n";
  for (const auto& r : report.rows) {
    io.out << r.method << "," << r.length << "," << format_double(r.seconds) << "\n";
  }
  if (to_disk) {
    write_text(out_dir(s) / "bench.json", report.to_json().dump(2) + "\n");
    write_text(out_dir(s) / "bench.csv", report.to_csv());
    echo_config(s);
  }
  return kExitOk;
}

std::string render_ppm(const scan::MultiScan& ms) {
  constexpr std::size_t kCell = 12;
  const std::size_t h = ms.directions.front().height();
  const std::size_t w = ms.directions.front().width();
  const std::size_t n = ms.directions.size();
  const std::size_t img_w = (n * (w + 1) - 1) * kCell;
  const std::size_t img_h = h * kCell;
  std::string px(img_w * img_h * 3, static_cast<char>(255));
  for (std::size_t d = 0; d < n; ++d) {
    const auto& order = ms.directions[d];
    const double span = order.size() > 1 ? static_cast<double>(order.size() - 1) : 1.0;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t rank = order.inverse()[r * w + c];
        unsigned char rgb[3] = {40, 40, 40};
        if (rank != scan::kUnvisited) {
          const double t = static_cast<double>(rank) / span;
          rgb[0] = static_cast<unsigned char>(255.0 * t);
          rgb[1] = static_cast<unsigned char>(64.0 + 96.0 * (1.0 - std::abs(2.0 * t - 1.0)));
          rgb[2] = static_cast<unsigned char>(255.0 * (1.0 - t));
        }
        for (std::size_t y = r * kCell; y < (r + 1) * kCell; ++y) {
          for (std::size_t x = (d * (w + 1) + c) * kCell; x < (d * (w + 1) + c + 1) * kCell; ++x) {
            for (int k = 0; k < 3; ++k) px[(y * img_w + x) * 3 + k] = static_cast<char>(rgb[k]);
          }
        }
      }
    }
  }
  return "P6\n" + std::to_string(img_w) + " " + std::to_string(img_h) + "\n255\n" + px;
}

int cmd_scan_show(Settings& s, Io& io) {
  scan::MultiScan ms;
  try {
    ms = scan::make_scan(s.str("strategy"), s.size("height"), s.size("width"), s.size("param"));
  } catch (const scan::ScanError& e) {
    throw UsageError(e.what());
  }
  io.out << "strategy=" << s.str("strategy") << " grid=" << s.str("height") << "x" << s.str("width")
         << " directions=" << ms.directions.size() << "\n";
  for (std::size_t d = 0; d < ms.directions.size(); ++d) {
    io.out << "direction " << d << ":\n" << scan::render_ranks(ms.directions[d]);
  }
  if (!s.str("ppm").empty()) {
    const fs::path p = s.str("ppm");
    if (fs::exists(p)) {
      if (s.boolean("no_clobber")) throw std::runtime_error("refusing to overwrite " + p.string() + " (--no-clobber)");
      io.err << "warning: overwriting " << p.string() << "\n";
    }
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_text(p, render_ppm(ms));
    io.out << "wrote " << p.string() << "\n";
  }
  return kExitOk;
}

int cmd_make_data(Settings& s, Io& io) {
  const data::DatasetConfig cfg = resolve_data(s);
  prepare_output(s, io, with_echo(s, {"manifest.json"}));
  const data::Dataset ds = data::make_dataset(cfg);
  if (s.boolean("pgm")) {
    for (const data::Split* split : {&ds.train, &ds.val, &ds.test}) {
      for (const auto& sub : split->subsets) {
        const fs::path dir = out_dir(s) / "images" / split->name / sub.tag;
        fs::create_directories(dir);
        for (std::size_t i = 0; i < sub.size(); ++i) {
          write_text(dir / (std::to_string(sub.seeds[i]) + ".pgm"), data::to_pnm(sub.images[i]));
        }
      }
    }
  }
  write_text(out_dir(s) / "manifest.json", ds.manifest().dump(2) + "\n");
  echo_config(s);
  io.out << "train=" << ds.train.size() << " val=" << ds.val.size() << " test=" << ds.test.size()
         << " -> " << (out_dir(s) / "manifest.json").string() << "\n";
  return kExitOk;
}

int cmd_train(Settings& s, Io& io) {
  model::ModelConfig mcfg = resolve_model(s);
  const train::TrainHyper hyper = resolve_hyper(s);
  const data::Dataset ds = load_dataset(s);
  // Desk presets take their image extents from the data.
  if (mcfg.preset.rfind("desk-", 0) == 0) {
    mcfg.image_h = ds.cfg.image_h;
    mcfg.image_w = ds.cfg.image_w;
    try {
      mcfg.validate();
    } catch (const model::ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  if (ds.cfg.image_h != mcfg.image_h || ds.cfg.image_w != mcfg.image_w || mcfg.channels != 1) {
    throw UsageError("model expects " + std::to_string(mcfg.image_h) + "x" + std::to_string(mcfg.image_w) +
                     "x" + std::to_string(mcfg.channels) + " images, dataset has " +
                     std::to_string(ds.cfg.image_h) + "x" + std::to_string(ds.cfg.image_w) + "x1");
  }
  prepare_output(s, io, with_echo(s, {"model.ckpt", "model.ckpt.json", "train_log.csv"}));

  model::Model m = model::build_model(mcfg, hyper.seed);
  const auto state = train::train(m, data::flatten(ds.train), data::flatten(ds.val), hyper, std::nullopt,
                                  [&](const train::TrainState& st, std::size_t epoch) {
                                    io.out << "epoch " << epoch << " loss " << format_fixed(st.loss_history.back(), 4)
                                           << " val_acc " << format_fixed(st.val_history.back(), 4) << "\n";
                                  });
  std::string log = "step,loss\n";
  for (std::size_t i = 0; i < state.loss_history.size(); ++i) {
    log += std::to_string(i) + "," + format_double(state.loss_history[i]) + "\n";
  }
  const std::string ckpt = (out_dir(s) / "model.ckpt").string();
  checkpoint::save(m, ckpt);
  write_text(out_dir(s) / "train_log.csv", log);
  echo_config(s);
  io.out << "best val_acc " << format_fixed(state.best_val, 4) << " at step " << state.best_step << " -> "
         << ckpt << "\n";
  return kExitOk;
}

int cmd_eval(Settings& s, Io& io) {
  const model::Model m = load_model(s);
  const data::Dataset ds = load_dataset(s);
  const auto report = eval::evaluate(eval::ModelDetector(m), ds.test.subsets, {ds.cfg.seed}, m.cfg.to_json());
  prepare_output(s, io, with_echo(s, {"eval_report.json", "eval_report.csv"}));
  write_text(out_dir(s) / "eval_report.json", report.to_json().dump(2) + "\n");
  write_text(out_dir(s) / "eval_report.csv", report.to_csv());
  echo_config(s);
  for (const auto& r : report.per_subset) {
    io.out << r.tag << " " << format_fixed(r.accuracy, 4) << " (" << r.correct << "/" << r.total << ")\n";
  }
  io.out << "mean " << format_fixed(report.mean_accuracy, 4) << "\n";
  return kExitOk;
}

int cmd_export_features(Settings& s, Io& io) {
  const model::Model m = load_model(s);
  const data::Dataset ds = load_dataset(s);
  const data::Split& split = pick_split(ds, s.str("split"));
  const std::string csv = eval::export_features(m, split.subsets);
  prepare_output(s, io, with_echo(s, {"features.csv"}));
  write_text(out_dir(s) / "features.csv", csv);
  echo_config(s);
  io.out << split.size() << " rows x " << m.cfg.embed_dim << " features -> "
         << (out_dir(s) / "features.csv").string() << "\n";
  return kExitOk;
}

int cmd_experiment(Settings& s, Io& io) {
  experiment::ExperimentConfig cfg;
  cfg.data = resolve_data(s);
  for (const auto& name : s.list("families")) {
    model::ModelConfig m;
    try {
      m = model::desk_preset(model::parse_family(name));
    } catch (const model::ConfigError& e) {
      throw UsageError(e.what());
    }
    if (!s.str("embed_dim").empty()) m.embed_dim = s.size("embed_dim");
    if (!s.str("depth").empty()) m.depth = s.size("depth");
    if (!s.str("state_dim").empty()) m.state_dim = s.size("state_dim");
    m.image_h = cfg.data.image_h;
    m.image_w = cfg.data.image_w;
    cfg.models.push_back(m);
  }
  cfg.seeds = s.u64_list("seeds");
  cfg.hyper = resolve_hyper(s);
  cfg.in_dist_threshold = s.real("threshold");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  prepare_output(s, io, with_echo(s, {"experiment.json", "experiment.csv"}));
  const auto report = experiment::run_experiment(cfg, [&](const experiment::RunRecord& r) {
    io.out << r.family << " seed " << r.seed;
    for (const auto& sub : r.report.per_subset) io.out << " " << sub.tag << "=" << format_fixed(sub.accuracy, 3);
    io.out << " in_dist=" << format_fixed(r.in_dist, 3) << " ood=" << format_fixed(r.ood, 3) << " ("
           << format_fixed(r.seconds, 1) << "s)\n";
    io.out.flush();
  });
  write_text(out_dir(s) / "experiment.json", report.to_json().dump(2) + "\n");
  write_text(out_dir(s) / "experiment.csv", report.to_csv());
  echo_config(s);
  for (const auto& f : report.families) {
    io.out << f.family << ": in_dist " << format_fixed(f.in_dist.mean, 4) << " +- " << format_fixed(f.in_dist.sd, 4)
           << ", ood " << format_fixed(f.ood.mean, 4) << " +- " << format_fixed(f.ood.sd, 4)
           << (f.passes ? "" : "  (below threshold)") << "\n";
  }
  if (!report.all_pass()) throw CheckFailure("in-distribution accuracy below " + s.str("threshold"));
  return kExitOk;
}

int cmd_param_count(Settings& s, Io& io) {
  const model::ModelConfig cfg = resolve_model(s);
  io.out << "preset=" << cfg.preset << " family=" << model::family_name(cfg.family)
         << " param_count=" << model::param_count(cfg) << "\n";
  return kExitOk;
}

std::vector<Command> commands() {
  const Key out_key{"out", "", "output directory"};
  std::vector<Command> cmds;

  cmds.push_back({"bench-kernels",
                  "time recurrent vs FFT-convolution vs chunked scans after a correctness cross-check",
                  {{"lengths", "64,128,256,512,1024,2048,4096,8192", "comma-separated sequence lengths"},
                   {"state_dim", "8", "state size"},
                   {"channels", "4", "selective scan channels"},
                   {"chunk", "64", "chunk size of the parallel scan"},
                   {"repeats", "3", "timing repeats (best is kept)"},
                   {"out", "", "output directory (optional; stdout only when empty)"}},
                  true,
                  cmd_bench});
  cmds.push_back({"scan-show",
                  "print the visitation ranks of a scan strategy",
                  {{"strategy", "raster", "raster, bidirectional, cross, zigzag, local or efficient"},
                   {"height", "4", "grid rows"},
                   {"width", "4", "grid columns"},
                   {"param", "2", "window (local) or stride (efficient)"},
                   {"ppm", "", "optional PPM heatmap path"}},
                  false,
                  cmd_scan_show});
  {
    auto keys = data_keys();
    keys.push_back(out_key);
    keys.push_back({"pgm", "false", "also write every image as PGM", true});
    cmds.push_back({"make-data", "synthesize a dataset and write its manifest", keys, true, cmd_make_data});
  }
  {
    auto keys = model_keys();
    for (auto& k : hyper_keys()) keys.push_back(k);
    keys.push_back({"data", "", "dataset manifest or directory"});
    keys.push_back(out_key);
    cmds.push_back({"train", "train a detector and write its checkpoint", keys, true, cmd_train});
  }
  cmds.push_back({"eval",
                  "evaluate a checkpoint on every test subset",
                  {{"checkpoint", "", "model checkpoint"}, {"data", "", "dataset manifest or directory"}, out_key},
                  true,
                  cmd_eval});
  cmds.push_back({"export-features",
                  "write penultimate features as CSV",
                  {{"checkpoint", "", "model checkpoint"},
                   {"data", "", "dataset manifest or directory"},
                   {"split", "test", "train, val or test"},
                   out_key},
                  true,
                  cmd_export_features});
  {
    auto keys = data_keys();
    for (auto& k : hyper_keys()) keys.push_back(k);
    keys.push_back({"families", "vim,mambavision,vssd", "comma-separated model families"});
    keys.push_back({"seeds", "1,2,3", "comma-separated run seeds"});
    keys.push_back({"embed_dim", "", "override the desk embedding dimension"});
    keys.push_back({"depth", "", "override the desk depth"});
    keys.push_back({"state_dim", "", "override the desk state size"});
    keys.push_back({"threshold", "0.95", "required in-distribution accuracy per family"});
    keys.push_back(out_key);
    cmds.push_back({"experiment", "cross-generator protocol over families and seeds", keys, true,
                    cmd_experiment});
  }
  cmds.push_back({"param-count", "print the trainable parameter count of a model config", model_keys(), false,
                  cmd_param_count});
  return cmds;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  const auto trim = [](std::string v) {
    const auto b = v.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = v.find_last_not_of(" \t\r");
    return v.substr(b, e - b + 1);
  };
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"mambadet: state-space vision models for synthetic image forensics"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  auto cmds = commands();
  struct Bound {
    CLI::App* sub;
    std::map<std::string, std::string> raw;
    std::map<std::string, bool> flags;
    std::map<std::string, CLI::Option*> options;
    std::string config_path;
    bool no_clobber = false;
    CLI::Option* no_clobber_opt = nullptr;
    std::string seed;
    CLI::Option* seed_opt = nullptr;
  };
  std::vector<Bound> bound(cmds.size());
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    auto& b = bound[i];
    b.sub = app.add_subcommand(cmds[i].name, cmds[i].description);
    b.sub->add_option("--config", b.config_path, "key = value config file; flags override it");
    b.seed = "0";
    b.seed_opt = b.sub->add_option("--seed", b.seed, "global seed")->default_str("0");
    b.no_clobber_opt = b.sub->add_flag("--no-clobber", b.no_clobber, "fail instead of overwriting outputs");
    for (const auto& k : cmds[i].keys) {
      if (k.flag) {
        b.flags[k.name] = false;
        b.options[k.name] = b.sub->add_flag(flag_name(k.name), b.flags[k.name], k.help);
      } else {
        b.raw[k.name] = k.def;
        b.options[k.name] = b.sub->add_option(flag_name(k.name), b.raw[k.name], k.help)->default_str(k.def);
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (std::size_t i = 0; i < cmds.size(); ++i) {
    auto& b = bound[i];
    if (!b.sub->parsed()) continue;
    try {
      std::map<std::string, std::string> values;
      for (const auto& k : cmds[i].keys) values[k.name] = k.def;
      values["seed"] = "0";
      values["no_clobber"] = "false";
      if (!b.config_path.empty()) {
        if (!fs::exists(b.config_path)) throw UsageError("config file not found: " + b.config_path);
        for (const auto& [k, v] : parse_config_text(io::read_file(b.config_path))) {
          if (!values.count(k)) throw UsageError("config file: unknown key '" + k + "' for " + cmds[i].name);
          values[k] = v;
        }
      }
      for (const auto& k : cmds[i].keys) {
        if (b.options[k.name]->count() == 0) continue;
        values[k.name] = k.flag ? (b.flags[k.name] ? "true" : "false") : b.raw[k.name];
      }
      if (b.seed_opt->count()) values["seed"] = b.seed;
      if (b.no_clobber_opt->count()) values["no_clobber"] = "true";
      Settings settings(cmds[i].name, std::move(values));
      Io io{out, err};
      return cmds[i].handler(settings, io);
    } catch (const UsageError& e) {
      err << "usage error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const CheckFailure& e) {
      err << "check failed: " << e.what() << "\n";
      return kExitCheck;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitRuntime;
    }
  }
  return kExitUsage;
}

}  // namespace mambadet::cli
