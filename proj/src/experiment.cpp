#include "mambadet/experiment.hpp"

#include "mambadet/text.hpp"

#include <chrono>
#include <stdexcept>

namespace mambadet::experiment {

using nlohmann::json;

void ExperimentConfig::validate() const {
  if (models.empty()) throw std::invalid_argument("experiment: no model families");
  if (seeds.size() < 3) throw std::invalid_argument("experiment: need at least 3 seeds");
  if (data.generators.size() < 2) throw std::invalid_argument("experiment: need at least 2 generators");
  data.validate();
  hyper.validate();
  for (const auto& m : models) {
    m.validate();
    if (m.image_h != data.image_h || m.image_w != data.image_w || m.channels != 1) {
      throw std::invalid_argument("experiment: " + model::family_name(m.family) +
                                  " expects different image extents than the data");
    }
  }
}

bool ExperimentReport::all_pass() const {
  for (const auto& f : families) {
    if (!f.passes) return false;
  }
  return !families.empty();
}

json ExperimentReport::to_json() const {
  json runs_json = json::array();
  for (const auto& r : runs) {
    runs_json.push_back({{"family", r.family},
                         {"seed", r.seed},
                         {"in_dist", r.in_dist},
                         {"ood", r.ood},
                         {"best_val", r.best_val},
                         {"seconds", r.seconds},
                         {"report", r.report.to_json()}});
  }
  json fams = json::array();
  for (const auto& f : families) {
    json subsets = json::object();
    for (const auto& [tag, st] : f.per_subset) subsets[tag] = {{"mean", st.mean}, {"sd", st.sd}};
    fams.push_back({{"family", f.family},
                    {"in_dist", {{"mean", f.in_dist.mean}, {"sd", f.in_dist.sd}}},
                    {"ood", {{"mean", f.ood.mean}, {"sd", f.ood.sd}}},
                    {"per_subset", subsets},
                    {"passes", f.passes}});
  }
  return json{{"schema", "mambadet.experiment.v1"},
              {"train_generator", train_generator},
              {"in_dist_threshold", threshold},
              {"runs", runs_json},
              {"families", fams}};
}

std::string ExperimentReport::to_csv() const {
  std::string out = "schema,family,seed,subset,accuracy\n";
  const std::string prefix = "mambadet.experiment.v1,";
  for (const auto& r : runs) {
    const std::string head = prefix + r.family + "," + std::to_string(r.seed) + ",";
    for (const auto& s : r.report.per_subset) out += head + s.tag + "," + format_double(s.accuracy) + "\n";
    out += head + "in_dist," + format_double(r.in_dist) + "\n";
    out += head + "ood," + format_double(r.ood) + "\n";
  }
  for (const auto& f : families) {
    for (const auto& [tag, st] : f.per_subset) {
      out += prefix + f.family + ",mean," + tag + "," + format_double(st.mean) + "\n";
      out += prefix + f.family + ",sd," + tag + "," + format_double(st.sd) + "\n";
    }
    out += prefix + f.family + ",mean,in_dist," + format_double(f.in_dist.mean) + "\n";
    out += prefix + f.family + ",sd,in_dist," + format_double(f.in_dist.sd) + "\n";
    out += prefix + f.family + ",mean,ood," + format_double(f.ood.mean) + "\n";
    out += prefix + f.family + ",sd,ood," + format_double(f.ood.sd) + "\n";
  }
  return out;
}

namespace {

Stat stat_of(const std::vector<double>& v) { return {eval::mean_of(v), eval::stddev_of(v)}; }

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const RunLogFn& log) {
  cfg.validate();
  ExperimentReport out;
  const std::string train_tag = data::generator_tag(cfg.data.train_generator);
  out.train_generator = train_tag;
  out.threshold = cfg.in_dist_threshold;

  for (const auto& mcfg : cfg.models) {
    const std::string family = model::family_name(mcfg.family);
    std::vector<double> in_dist, ood;
    std::map<std::string, std::vector<double>> subset_acc;
    for (std::uint64_t seed : cfg.seeds) {
      const auto t0 = std::chrono::steady_clock::now();
      data::DatasetConfig dcfg = cfg.data;
      dcfg.seed = seed;
      const data::Dataset ds = data::make_dataset(dcfg);
      train::TrainHyper hyper = cfg.hyper;
      hyper.seed = seed;
      model::Model m = model::build_model(mcfg, seed);
      const auto state = train::train(m, data::flatten(ds.train), data::flatten(ds.val), hyper);

      RunRecord rec;
      rec.family = family;
      rec.seed = seed;
      rec.report = eval::evaluate(eval::ModelDetector(m), ds.test.subsets, {seed}, mcfg.to_json());
      rec.best_val = state.best_val;
      std::vector<double> ood_parts;
      for (const auto& s : rec.report.per_subset) {
        subset_acc[s.tag].push_back(s.accuracy);
        if (s.tag != "real" && s.tag != train_tag) ood_parts.push_back(s.accuracy);
      }
      rec.in_dist = 0.5 * (rec.report.accuracy_of("real") + rec.report.accuracy_of(train_tag));
      rec.ood = eval::mean_of(ood_parts);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      in_dist.push_back(rec.in_dist);
      ood.push_back(rec.ood);
      if (log) log(rec);
      out.runs.push_back(std::move(rec));
    }
    FamilySummary fs;
    fs.family = family;
    fs.in_dist = stat_of(in_dist);
    fs.ood = stat_of(ood);
    for (const auto& [tag, v] : subset_acc) fs.per_subset[tag] = stat_of(v);
    fs.passes = fs.in_dist.mean >= cfg.in_dist_threshold;
    out.families.push_back(std::move(fs));
  }
  return out;
}

}  // namespace mambadet::experiment
