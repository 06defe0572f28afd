#pragma once

// The end-to-end experiment: corpus preparation, victims and attacks, the
// gamma study, detector training/evaluation and the consolidated report.
// Every stage reads the resolved config and writes under one output tree.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pencil_guard/attacks.hpp"
#include "pencil_guard/audio.hpp"
#include "pencil_guard/chordal.hpp"
#include "pencil_guard/detector.hpp"
#include "pencil_guard/spectrogram.hpp"
#include "pencil_guard/victims.hpp"

namespace pencil_guard {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

struct CwSettings {
  std::size_t iterations = 200;
  std::size_t search_steps = 5;
  double c_init = 1.0;
  double learning_rate = 0.01;
  double confidence = 0.0;
};

struct AttackSettings {
  std::vector<std::string> enabled{"FGSM", "BIM-a", "BIM-b", "JSMA", "CWA", "OPT", "EA", "LFA"};
  double epsilon_cap = std::numeric_limits<double>::infinity();
  double fgsm_eps = 0.08;
  double bim_eps = 0.08;
  double bim_step = 0.008;
  std::size_t bim_iterations = 20;
  double jsma_budget_fraction = 0.1;
  double jsma_theta = 0.5;
  CwSettings cwa;
  CwSettings opt{200, 5, 1.0, 0.01, 10.0};
  double ea_step = 0.05;
  std::size_t ea_iterations = 200;
  double lfa_flip_fraction = 0.2;
};

struct ChordalSettings {
  std::size_t probes = 8;
  ChordPairing pairing = ChordPairing::Ratio;
  double epsilon_max = std::numeric_limits<double>::infinity();
  bool skip_failures = false;
};

struct DetectorSettings {
  std::size_t batch_per_class = 16;
  std::size_t pairs_per_class = 64;
  double reg_strength = 1.0;
  double clip_cap = 30.0;
  bool include_noisy = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::size_t workers = 0;
  std::string output_dir = "pencil_guard_out";
  std::string wav_dir;
  int sample_rate = 8000;
  double max_seconds = 5.0;
  double test_fraction = 1.0 / 3.0;
  SyntheticSpec synthetic;
  PipelineOptions pipeline;
  std::vector<double> augmentation_scales{0.75, 0.9, 1.15, 1.5};
  std::vector<double> noise_sigmas{0.01, 0.02, 0.04, 0.05};
  MlpConfig mlp;
  SvmConfig svm;
  AttackSettings attacks;
  ChordalSettings chordal;
  DetectorSettings detector;
};

namespace experiment_detail {

inline ojson number_or_null(double v) { return std::isinf(v) ? ojson() : ojson(v); }

inline ojson cw_json(const CwSettings& c) {
  return {{"iterations", c.iterations}, {"search_steps", c.search_steps}, {"c_init", c.c_init},
          {"learning_rate", c.learning_rate}, {"confidence", c.confidence}};
}

/// Recursively overlays `patch` onto `base`, rejecting keys `base` lacks.
inline void overlay(ojson& base, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) fail(ErrorCode::ValidationError, path.empty() ? "config must be a JSON object" : path + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) fail(ErrorCode::ValidationError, "unknown config key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) overlay(slot, it.value(), key);
    else slot = it.value();
  }
}

}  // namespace experiment_detail

inline ojson to_json(const ExperimentConfig& c) {
  using experiment_detail::number_or_null;
  ojson j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["output_dir"] = c.output_dir;
  j["corpus"] = {{"wav_dir", c.wav_dir},
                 {"sample_rate", c.sample_rate},
                 {"max_seconds", c.max_seconds},
                 {"test_fraction", c.test_fraction},
                 {"synthetic",
                  {{"classes", c.synthetic.classes},
                   {"clips_per_class", c.synthetic.clips_per_class},
                   {"seconds", c.synthetic.seconds},
                   {"noise_level", c.synthetic.noise_level}}}};
  j["spectrogram"] = {{"n", c.pipeline.n},
                      {"visualization", to_string(c.pipeline.visualization)},
                      {"frame_ms", c.pipeline.scalogram.frame_ms},
                      {"overlap", c.pipeline.scalogram.overlap},
                      {"num_scales", c.pipeline.scalogram.num_scales},
                      {"omega0", c.pipeline.scalogram.omega0},
                      {"f_min", c.pipeline.scalogram.f_min}};
  j["augmentation_scales"] = c.augmentation_scales;
  j["noise_sigmas"] = c.noise_sigmas;
  j["victims"] = {{"mlp",
                   {{"hidden", c.mlp.hidden},
                    {"epochs", c.mlp.epochs},
                    {"batch", c.mlp.batch},
                    {"learning_rate", c.mlp.learning_rate},
                    {"weight_decay", c.mlp.weight_decay}}},
                  {"svm",
                   {{"c", c.svm.c},
                    {"gamma", c.svm.gamma},
                    {"tolerance", c.svm.tolerance},
                    {"max_iterations", c.svm.max_iterations}}}};
  const auto& a = c.attacks;
  j["attacks"] = {{"enabled", a.enabled},
                  {"epsilon_cap", number_or_null(a.epsilon_cap)},
                  {"fgsm", {{"eps", a.fgsm_eps}}},
                  {"bim", {{"eps", a.bim_eps}, {"step", a.bim_step}, {"iterations", a.bim_iterations}}},
                  {"jsma", {{"budget_fraction", a.jsma_budget_fraction}, {"theta", a.jsma_theta}}},
                  {"cwa", experiment_detail::cw_json(a.cwa)},
                  {"opt", experiment_detail::cw_json(a.opt)},
                  {"ea", {{"step", a.ea_step}, {"iterations", a.ea_iterations}}},
                  {"lfa", {{"flip_fraction", a.lfa_flip_fraction}}}};
  j["chordal"] = {{"probes", c.chordal.probes},
                  {"pairing", c.chordal.pairing == ChordPairing::Ratio ? "ratio" : "diagonal"},
                  {"epsilon_max", number_or_null(c.chordal.epsilon_max)},
                  {"skip_failures", c.chordal.skip_failures}};
  j["detector"] = {{"batch_per_class", c.detector.batch_per_class},
                   {"pairs_per_class", c.detector.pairs_per_class},
                   {"reg_strength", c.detector.reg_strength},
                   {"clip_cap", c.detector.clip_cap},
                   {"include_noisy", c.detector.include_noisy}};
  return j;
}

/// Reads a (possibly partial) config over the defaults and validates it.
inline ExperimentConfig config_from_json(const nlohmann::json& user) {
  ojson j = to_json(ExperimentConfig{});
  experiment_detail::overlay(j, user, "");
  ExperimentConfig c;
  auto inf_or = [](const ojson& v) { return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>(); };
  auto cw = [](const ojson& v) {
    return CwSettings{v.at("iterations").get<std::size_t>(), v.at("search_steps").get<std::size_t>(),
                      v.at("c_init").get<double>(), v.at("learning_rate").get<double>(),
                      v.at("confidence").get<double>()};
  };
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.workers = j.at("workers").get<std::size_t>();
    c.output_dir = j.at("output_dir").get<std::string>();
    const auto& corpus = j.at("corpus");
    c.wav_dir = corpus.at("wav_dir").get<std::string>();
    c.sample_rate = corpus.at("sample_rate").get<int>();
    c.max_seconds = corpus.at("max_seconds").get<double>();
    c.test_fraction = corpus.at("test_fraction").get<double>();
    const auto& syn = corpus.at("synthetic");
    c.synthetic.classes = syn.at("classes").get<int>();
    c.synthetic.clips_per_class = syn.at("clips_per_class").get<int>();
    c.synthetic.seconds = syn.at("seconds").get<double>();
    c.synthetic.noise_level = syn.at("noise_level").get<double>();
    c.synthetic.sample_rate = c.sample_rate;
    const auto& sp = j.at("spectrogram");
    c.pipeline.n = sp.at("n").get<std::size_t>();
    c.pipeline.visualization = parse_visualization(sp.at("visualization").get<std::string>());
    c.pipeline.scalogram.frame_ms = sp.at("frame_ms").get<double>();
    c.pipeline.scalogram.overlap = sp.at("overlap").get<double>();
    c.pipeline.scalogram.num_scales = sp.at("num_scales").get<std::size_t>();
    c.pipeline.scalogram.omega0 = sp.at("omega0").get<double>();
    c.pipeline.scalogram.f_min = sp.at("f_min").get<double>();
    c.augmentation_scales = j.at("augmentation_scales").get<std::vector<double>>();
    c.noise_sigmas = j.at("noise_sigmas").get<std::vector<double>>();
    const auto& mlp = j.at("victims").at("mlp");
    c.mlp.hidden = mlp.at("hidden").get<std::vector<std::size_t>>();
    c.mlp.epochs = mlp.at("epochs").get<std::size_t>();
    c.mlp.batch = mlp.at("batch").get<std::size_t>();
    c.mlp.learning_rate = mlp.at("learning_rate").get<double>();
    c.mlp.weight_decay = mlp.at("weight_decay").get<double>();
    const auto& svm = j.at("victims").at("svm");
    c.svm.c = svm.at("c").get<double>();
    c.svm.gamma = svm.at("gamma").get<double>();
    c.svm.tolerance = svm.at("tolerance").get<double>();
    c.svm.max_iterations = svm.at("max_iterations").get<std::size_t>();
    const auto& a = j.at("attacks");
    c.attacks.enabled = a.at("enabled").get<std::vector<std::string>>();
    c.attacks.epsilon_cap = inf_or(a.at("epsilon_cap"));
    c.attacks.fgsm_eps = a.at("fgsm").at("eps").get<double>();
    c.attacks.bim_eps = a.at("bim").at("eps").get<double>();
    c.attacks.bim_step = a.at("bim").at("step").get<double>();
    c.attacks.bim_iterations = a.at("bim").at("iterations").get<std::size_t>();
    c.attacks.jsma_budget_fraction = a.at("jsma").at("budget_fraction").get<double>();
    c.attacks.jsma_theta = a.at("jsma").at("theta").get<double>();
    c.attacks.cwa = cw(a.at("cwa"));
    c.attacks.opt = cw(a.at("opt"));
    c.attacks.ea_step = a.at("ea").at("step").get<double>();
    c.attacks.ea_iterations = a.at("ea").at("iterations").get<std::size_t>();
    c.attacks.lfa_flip_fraction = a.at("lfa").at("flip_fraction").get<double>();
    const auto& ch = j.at("chordal");
    c.chordal.probes = ch.at("probes").get<std::size_t>();
    const auto pairing = ch.at("pairing").get<std::string>();
    if (pairing != "ratio" && pairing != "diagonal") {
      fail(ErrorCode::ValidationError, "chordal.pairing must be 'ratio' or 'diagonal'");
    }
    c.chordal.pairing = pairing == "ratio" ? ChordPairing::Ratio : ChordPairing::Diagonal;
    c.chordal.epsilon_max = inf_or(ch.at("epsilon_max"));
    c.chordal.skip_failures = ch.at("skip_failures").get<bool>();
    const auto& d = j.at("detector");
    c.detector.batch_per_class = d.at("batch_per_class").get<std::size_t>();
    c.detector.pairs_per_class = d.at("pairs_per_class").get<std::size_t>();
    c.detector.reg_strength = d.at("reg_strength").get<double>();
    c.detector.clip_cap = d.at("clip_cap").get<double>();
    c.detector.include_noisy = d.at("include_noisy").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ValidationError, std::string("config: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::ValidationError, std::string("config: ") + e.what());
  }

  auto require = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::ValidationError, "config: " + what);
  };
  require(!c.wav_dir.empty() || (c.synthetic.classes >= 2 && c.synthetic.clips_per_class >= 3),
          "synthetic corpus needs >= 2 classes and >= 3 clips per class");
  require(c.wav_dir.empty() || fs::is_directory(c.wav_dir), "corpus.wav_dir '" + c.wav_dir + "' is not a directory");
  require(c.sample_rate >= 1000, "corpus.sample_rate must be >= 1000");
  require(c.test_fraction > 0.0 && c.test_fraction < 1.0, "corpus.test_fraction must lie in (0, 1)");
  require(c.pipeline.n >= 4, "spectrogram.n must be >= 4");
  for (double s : c.augmentation_scales) require(s >= 0.5 && s <= 2.0, "augmentation scales must lie in [0.5, 2]");
  require(!c.noise_sigmas.empty(), "noise_sigmas must be nonempty");
  for (double s : c.noise_sigmas) require(s > 0.0, "noise sigmas must be positive");
  require(!c.mlp.hidden.empty() && c.mlp.epochs > 0 && c.mlp.batch > 0, "victims.mlp needs hidden layers, epochs and batch");
  for (const auto& name : c.attacks.enabled) {
    try {
      parse_attack(name);
    } catch (const Error&) {
      fail(ErrorCode::ValidationError, "config: unknown attack '" + name + "' in attacks.enabled");
    }
  }
  require(c.attacks.fgsm_eps > 0.0 && c.attacks.bim_eps > 0.0 && c.attacks.bim_step > 0.0,
          "attack budgets must be positive");
  require(c.attacks.bim_iterations > 0 && c.attacks.ea_iterations > 0 && c.attacks.cwa.iterations > 0 &&
              c.attacks.opt.iterations > 0,
          "attack iteration caps must be positive");
  require(c.attacks.lfa_flip_fraction > 0.0 && c.attacks.lfa_flip_fraction <= 0.4,
          "attacks.lfa.flip_fraction must lie in (0, 0.4]");
  require(c.chordal.probes >= 1, "chordal.probes must be >= 1");
  require(c.detector.batch_per_class >= 2, "detector.batch_per_class must be >= 2");
  require(c.detector.clip_cap > 0.0, "detector.clip_cap must be positive");
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ValidationError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ValidationError, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Run context

namespace experiment_detail {

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

inline void write_json(const fs::path& path, const ojson& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path, const std::string& producer) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MissingArtifact, "missing " + path.string() + " (run " + producer + " first)");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MissingArtifact, path.string() + " does not parse: " + e.what());
  }
}

inline std::string fmt(double v, int precision = 6) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

inline std::string scale_label(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", s);
  return buf;
}

inline Vec flatten(const Spectrogram& s) { return {s.data.data().begin(), s.data.data().end()}; }

inline LabeledSet to_set(const std::vector<Spectrogram>& v) {
  LabeledSet s;
  for (const auto& x : v) {
    s.x.push_back(flatten(x));
    s.y.push_back(x.class_label);
  }
  return s;
}

}  // namespace experiment_detail

/// Resolved config plus output layout and the timestamped log.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)), root_(cfg_.output_dir) {
    workers_ = resolve_workers(cfg_.workers);
  }

  const ExperimentConfig& config() const { return cfg_; }
  const fs::path& root() const { return root_; }
  std::size_t workers() const { return workers_; }

  void log(const std::string& line) const {
    fs::create_directories(root_);
    std::ofstream out(root_ / "run.log", std::ios::app);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    out << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ") << ' ' << line << '\n';
  }

  void write_resolved_config() const { experiment_detail::write_json(root_ / "config.json", to_json(cfg_)); }

 private:
  ExperimentConfig cfg_;
  fs::path root_;
  std::size_t workers_ = 1;
};

// ---------------------------------------------------------------------------
// prepare

struct ManifestEntry {
  std::string id;
  std::string clip_id;
  int class_label = 0;
  std::string split;
  double augment_scale = 1.0;
};

struct Manifest {
  std::vector<std::string> classes;
  std::size_t n = 0;
  std::vector<ManifestEntry> entries;
  std::vector<std::string> skipped;

  fs::path stem(const fs::path& root, const ManifestEntry& e) const { return root / "prepare" / "spectrograms" / e.id; }

  std::vector<const ManifestEntry*> select(const std::string& split, bool originals_only = false) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == split && (!originals_only || e.augment_scale == 1.0)) out.push_back(&e);
    return out;
  }

  ojson to_json() const {
    ojson j;
    j["classes"] = classes;
    j["n"] = n;
    auto& arr = j["entries"] = ojson::array();
    for (const auto& e : entries) {
      arr.push_back({{"id", e.id}, {"clip_id", e.clip_id}, {"class", e.class_label}, {"split", e.split},
                     {"augment_scale", e.augment_scale}});
    }
    j["skipped"] = skipped;
    return j;
  }

  static Manifest load(const fs::path& root) {
    const auto j = experiment_detail::read_json(root / "prepare" / "manifest.json", "cmd_prepare");
    Manifest m;
    try {
      m.classes = j.at("classes").get<std::vector<std::string>>();
      m.n = j.at("n").get<std::size_t>();
      for (const auto& e : j.at("entries")) {
        m.entries.push_back({e.at("id").get<std::string>(), e.at("clip_id").get<std::string>(), e.at("class").get<int>(),
                             e.at("split").get<std::string>(), e.at("augment_scale").get<double>()});
      }
      m.skipped = j.at("skipped").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::MissingArtifact, "manifest does not parse: " + std::string(e.what()));
    }
    return m;
  }
};

/// WAV corpus: one subdirectory per class (sorted), *.wav files sorted by name.
inline std::pair<std::vector<AudioClip>, std::vector<std::string>> load_wav_corpus(const ExperimentConfig& cfg) {
  std::vector<std::string> classes;
  for (const auto& d : fs::directory_iterator(cfg.wav_dir))
    if (d.is_directory()) classes.push_back(d.path().filename().string());
  std::sort(classes.begin(), classes.end());
  std::vector<AudioClip> clips;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(fs::path(cfg.wav_dir) / classes[c])) {
      auto ext = f.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      if (f.is_regular_file() && ext == ".wav") files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto clip = load_wav(f, cfg.sample_rate, cfg.max_seconds);
      clip.clip_id = classes[c] + "_" + clip.clip_id;
      clip.class_label = static_cast<int>(c);
      clips.push_back(std::move(clip));
    }
  }
  return {clips, classes};
}

inline Manifest cmd_prepare(const Experiment& ex) {
  using namespace experiment_detail;
  const auto& cfg = ex.config();
  ex.write_resolved_config();
  ex.log("prepare: start");
  std::vector<AudioClip> clips;
  std::vector<std::string> classes;
  bool synthetic = true;
  if (!cfg.wav_dir.empty()) {
    std::tie(clips, classes) = load_wav_corpus(cfg);
    synthetic = clips.empty();
  }
  if (synthetic) {
    clips = synthesize_corpus(cfg.synthetic, cfg.seed);
    classes.clear();
    for (int c = 0; c < cfg.synthetic.classes; ++c) classes.push_back("class" + std::to_string(c));
  }

  // stratified seeded split
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < clips.size(); ++i) by_class[clips[i].class_label].push_back(i);
  std::vector<bool> is_test(clips.size(), false);
  for (auto& [c, idx] : by_class) {
    Rng rng(derive_seed(cfg.seed, {0x5317, static_cast<std::uint64_t>(c)}));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < n_test && k < idx.size(); ++k) is_test[idx[k]] = true;
  }

  struct Job {
    std::size_t clip;
    double scale;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    jobs.push_back({i, 1.0});
    if (!is_test[i])
      for (double s : cfg.augmentation_scales) jobs.push_back({i, s});
  }
  const auto dir = ex.root() / "prepare" / "spectrograms";
  fs::create_directories(dir);
  std::vector<std::optional<ManifestEntry>> done(jobs.size());
  std::vector<std::string> errors(jobs.size());
  parallel_for(jobs.size(), ex.workers(), [&](std::size_t k) {
    const auto& job = jobs[k];
    const auto& clip = clips[job.clip];
    ManifestEntry e{clip.clip_id, clip.clip_id, clip.class_label, is_test[job.clip] ? "test" : "train", job.scale};
    if (job.scale != 1.0) e.id += "_p" + scale_label(job.scale);
    try {
      const auto seed = derive_seed(cfg.seed, {hash_id(e.id)});
      const auto spec = finalize_spectrogram(job.scale == 1.0 ? clip : pitch_shift(clip, job.scale), cfg.pipeline, seed);
      spec.save(dir / e.id, {{"split", e.split}, {"augment_scale", e.augment_scale}});
      done[k] = e;
    } catch (const Error& err) {
      errors[k] = e.id + ": " + err.what();
    }
  });
  Manifest m;
  m.classes = classes;
  m.n = cfg.pipeline.n;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    if (done[k]) m.entries.push_back(*done[k]);
    else {
      std::clog << "prepare: skipped " << errors[k] << '\n';
      m.skipped.push_back(errors[k]);
    }
  }
  write_json(ex.root() / "prepare" / "manifest.json", m.to_json());
  ex.log("prepare: " + std::to_string(m.entries.size()) + " spectrograms, " + std::to_string(m.skipped.size()) + " skipped");
  return m;
}

// ---------------------------------------------------------------------------
// victims and attacks

struct Victims {
  Mlp mlp;
  Mlp surrogate;
  Svm svm;
};

struct Corpus {
  Manifest manifest;
  std::vector<Spectrogram> train;
  std::vector<Spectrogram> test;
  /// Per-class detector batch: the first originals of each class in the
  /// training split.
  std::vector<std::vector<Spectrogram>> batch;
  ValidRange range;
};

inline Corpus load_corpus(const Experiment& ex) {
  Corpus c;
  c.manifest = Manifest::load(ex.root());
  for (const auto& e : c.manifest.entries) {
    auto s = Spectrogram::load(c.manifest.stem(ex.root(), e));
    (e.split == "test" ? c.test : c.train).push_back(std::move(s));
  }
  if (c.train.empty() || c.test.empty()) fail(ErrorCode::MissingArtifact, "manifest has an empty train or test split");
  c.batch.resize(c.manifest.classes.size());
  for (const auto* e : c.manifest.select("train", true)) {
    auto& b = c.batch[static_cast<std::size_t>(e->class_label)];
    if (b.size() < ex.config().detector.batch_per_class) b.push_back(Spectrogram::load(c.manifest.stem(ex.root(), *e)));
  }
  c.range = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& s : c.train)
    for (double v : s.data.data()) {
      c.range.lo = std::min(c.range.lo, v);
      c.range.hi = std::max(c.range.hi, v);
    }
  return c;
}

inline Victims ensure_victims(const Experiment& ex, const Corpus& corpus) {
  const auto dir = ex.root() / "victims";
  Victims v;
  const auto train = experiment_detail::to_set(corpus.train);
  if (fs::exists(dir / "mlp.json") && fs::exists(dir / "surrogate.json") && fs::exists(dir / "svm.json")) {
    v.mlp = Mlp::load(dir, "mlp");
    v.surrogate = Mlp::load(dir, "surrogate");
    v.svm = Svm::load(dir, "svm");
    ex.log("attack: loaded victims");
    return v;
  }
  ex.log("attack: training victims");
  v.mlp = train_mlp(train, ex.config().mlp, derive_seed(ex.config().seed, {0x4d4c50}));
  v.surrogate = train_mlp(train, ex.config().mlp, derive_seed(ex.config().seed, {0x5355}));
  v.svm = train_svm(train, ex.config().svm, derive_seed(ex.config().seed, {0x53564d}));
  v.mlp.save(dir, "mlp");
  v.surrogate.save(dir, "surrogate");
  v.svm.save(dir, "svm");
  return v;
}

struct AttackRow {
  std::string tag;
  std::string victim;
  std::size_t count = 0;
  double accuracy = 0.0;
  double success_rate = 0.0;
  std::optional<double> epsilon_mean;
  std::size_t over_cap = 0;
};

inline ojson to_json(const AttackRow& r) {
  return {{"tag", r.tag},
          {"victim", r.victim},
          {"count", r.count},
          {"accuracy", r.accuracy},
          {"success_rate", r.success_rate},
          {"epsilon_mean", r.epsilon_mean ? ojson(*r.epsilon_mean) : ojson()},
          {"over_cap", r.over_cap}};
}

namespace experiment_detail {

inline fs::path attack_dir(const fs::path& root, const std::string& name) { return root / "attack" / name; }

inline std::string noise_dir_name(double sigma) { return "NOISY_" + scale_label(sigma); }

inline AttackSpec cw_spec(const CwSettings& s, std::uint64_t seed) {
  AttackSpec a;
  a.iterations = s.iterations;
  a.search_steps = s.search_steps;
  a.c_init = s.c_init;
  a.learning_rate = s.learning_rate;
  a.confidence = s.confidence;
  a.seed = seed;
  return a;
}

inline ojson attack_settings_json(const ExperimentConfig& cfg, AttackName name) {
  const auto all = to_json(cfg)["attacks"];
  switch (name) {
    case AttackName::Fgsm: return all["fgsm"];
    case AttackName::BimA:
    case AttackName::BimB: return all["bim"];
    case AttackName::Jsma: return all["jsma"];
    case AttackName::Cwa: return all["cwa"];
    case AttackName::Opt: return all["opt"];
    case AttackName::Ea: return all["ea"];
    case AttackName::Lfa: return all["lfa"];
  }
  return {};
}

}  // namespace experiment_detail

/// Runs one input attack on a spectrogram.
inline AttackResult run_attack(AttackName name, const ExperimentConfig& cfg, const Victims& v, const Spectrogram& s,
                               const ValidRange& range) {
  const auto& a = cfg.attacks;
  const double cap = a.epsilon_cap;
  const auto seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(name), hash_id(s.source_clip_id)});
  switch (name) {
    case AttackName::Fgsm: return attack_fgsm(v.mlp, s, a.fgsm_eps, range, cap);
    case AttackName::BimA: return attack_bim(v.mlp, s, a.bim_eps, a.bim_step, a.bim_iterations, true, range, cap);
    case AttackName::BimB: return attack_bim(v.mlp, s, a.bim_eps, a.bim_step, a.bim_iterations, false, range, cap);
    case AttackName::Jsma: return attack_jsma(v.mlp, s, a.jsma_budget_fraction, a.jsma_theta, range, -1, cap);
    case AttackName::Cwa: return attack_cwa(v.mlp, s, experiment_detail::cw_spec(a.cwa, seed), range, cap);
    case AttackName::Opt: return attack_opt(v.surrogate, v.mlp, s, experiment_detail::cw_spec(a.opt, seed), range, cap);
    case AttackName::Ea: return attack_ea(v.svm, s, a.ea_step, a.ea_iterations, range, cap);
    case AttackName::Lfa: break;
  }
  fail(ErrorCode::InvalidArgument, "LFA is not an input attack");
}

struct AttackSummary {
  std::vector<AttackRow> rows;
  std::vector<std::string> failures;

  ojson to_json() const {
    ojson j;
    auto& arr = j["rows"] = ojson::array();
    for (const auto& r : rows) arr.push_back(pencil_guard::to_json(r));
    j["failures"] = failures;
    return j;
  }

  std::string to_csv() const {
    std::string out = "tag,victim,count,accuracy,success_rate,epsilon_mean,over_cap\n";
    for (const auto& r : rows) {
      out += r.tag + "," + r.victim + "," + std::to_string(r.count) + "," + experiment_detail::fmt(r.accuracy) + "," +
             experiment_detail::fmt(r.success_rate) + "," + (r.epsilon_mean ? experiment_detail::fmt(*r.epsilon_mean) : "") +
             "," + std::to_string(r.over_cap) + "\n";
    }
    return out;
  }

  static AttackSummary from_json(const nlohmann::json& j) {
    AttackSummary s;
    for (const auto& r : j.at("rows")) {
      AttackRow row;
      row.tag = r.at("tag").get<std::string>();
      row.victim = r.at("victim").get<std::string>();
      row.count = r.at("count").get<std::size_t>();
      row.accuracy = r.at("accuracy").get<double>();
      row.success_rate = r.at("success_rate").get<double>();
      if (!r.at("epsilon_mean").is_null()) row.epsilon_mean = r.at("epsilon_mean").get<double>();
      row.over_cap = r.at("over_cap").get<std::size_t>();
      s.rows.push_back(row);
    }
    s.failures = j.at("failures").get<std::vector<std::string>>();
    return s;
  }

  const AttackRow* find(const std::string& tag) const {
    for (const auto& r : rows)
      if (r.tag == tag) return &r;
    return nullptr;
  }
};

/// Crafts every enabled attack on the test split and the detector batch, plus
/// the noise sets; writes per-item spectrograms with result sidecars.
inline AttackSummary cmd_attack(const Experiment& ex) {
  using namespace experiment_detail;
  const auto& cfg = ex.config();
  ex.write_resolved_config();
  ex.log("attack: start");
  const auto corpus = load_corpus(ex);
  const auto victims = ensure_victims(ex, corpus);
  const auto test_set = to_set(corpus.test);
  std::vector<Spectrogram> batch_flat;
  for (const auto& b : corpus.batch) batch_flat.insert(batch_flat.end(), b.begin(), b.end());

  AttackSummary summary;
  summary.rows.push_back({"CLEAN", "mlp", corpus.test.size(), victims.mlp.accuracy(test_set), 0.0, std::nullopt, 0});
  summary.rows.push_back({"CLEAN", "svm", corpus.test.size(), victims.svm.accuracy(test_set), 0.0, std::nullopt, 0});

  for (const auto& enabled : cfg.attacks.enabled) {
    const auto name = parse_attack(enabled);
    const auto tag = to_string(name);
    const auto dir = attack_dir(ex.root(), tag);
    const auto settings = attack_settings_json(cfg, name);
    try {
      ex.log("attack: " + tag);
      fs::remove_all(dir);
      if (name == AttackName::Lfa) {
        const auto train_set = to_set(corpus.train);
        const auto out = attack_lfa(train_set, victims.svm, cfg.svm, cfg.attacks.lfa_flip_fraction,
                                    derive_seed(cfg.seed, {static_cast<std::uint64_t>(name)}), test_set);
        out.poisoned.save(ex.root() / "victims", "svm_poisoned");
        auto save_witness = [&](const Spectrogram& s, const fs::path& sub) {
          auto w = s;
          w.tag = PerturbationTag::attacked(tag);
          const int pred = out.poisoned.predict(flatten(s));
          w.save(dir / sub / s.source_clip_id,
                 {{"attack", settings},
                  {"result", {{"success", true}, {"epsilon_realized", 0.0}, {"iterations", 0}, {"over_cap", false}}},
                  {"victim_prediction", pred}});
        };
        for (auto i : out.witnesses) save_witness(corpus.test[i], "test");
        for (const auto& s : batch_flat) {
          const auto x = flatten(s);
          if (out.poisoned.predict(x) != victims.svm.predict(x)) save_witness(s, "train");
        }
        const auto poisoned_acc = out.poisoned.accuracy(test_set);
        summary.rows.push_back({PerturbationTag::attacked(tag).label(), "svm(poisoned)", out.witnesses.size(), poisoned_acc,
                                static_cast<double>(out.witnesses.size()) / static_cast<double>(corpus.test.size()),
                                std::nullopt, 0});
        write_json(dir / "flipped.json", ojson{{"flipped", out.flipped}, {"witnesses", out.witnesses}});
        continue;
      }
      const bool on_svm = name == AttackName::Ea;
      auto craft = [&](const std::vector<Spectrogram>& items, const fs::path& sub) {
        std::vector<std::optional<AttackResult>> results(items.size());
        parallel_for(items.size(), ex.workers(), [&](std::size_t k) {
          auto r = run_attack(name, cfg, victims, items[k], corpus.range);
          const auto x = flatten(r.adversarial);
          const int pred = on_svm ? victims.svm.predict(x) : victims.mlp.predict(x);
          r.adversarial.save(dir / sub / items[k].source_clip_id,
                             {{"attack", settings},
                              {"result",
                               {{"success", r.success},
                                {"epsilon_realized", r.epsilon_realized},
                                {"iterations", r.iterations},
                                {"over_cap", r.over_cap}}},
                              {"victim_prediction", pred}});
          results[k] = std::move(r);
        });
        return results;
      };
      craft(batch_flat, "train");
      const auto results = craft(corpus.test, "test");
      AttackRow row;
      row.tag = PerturbationTag::attacked(tag).label();
      row.victim = name == AttackName::Opt ? "mlp(transfer)" : (on_svm ? "svm" : "mlp");
      double correct = 0.0, wins = 0.0, eps = 0.0;
      for (std::size_t k = 0; k < results.size(); ++k) {
        const auto& r = *results[k];
        const auto x = flatten(r.adversarial);
        const int pred = on_svm ? victims.svm.predict(x) : victims.mlp.predict(x);
        correct += pred == corpus.test[k].class_label;
        wins += r.success;
        eps += r.epsilon_realized;
        row.over_cap += r.over_cap;
      }
      const double n = static_cast<double>(results.size());
      row.count = results.size();
      row.accuracy = correct / n;
      row.success_rate = wins / n;
      row.epsilon_mean = eps / n;
      summary.rows.push_back(row);
    } catch (const Error& e) {
      summary.failures.push_back(tag + ": " + e.what());
      ex.log("attack: " + tag + " failed: " + e.what());
    }
  }

  for (std::size_t k = 0; k < cfg.noise_sigmas.size(); ++k) {
    const double sigma = cfg.noise_sigmas[k];
    const auto dir = attack_dir(ex.root(), noise_dir_name(sigma));
    fs::remove_all(dir);
    auto noisy = [&](const std::vector<Spectrogram>& items, const fs::path& sub) {
      std::vector<double> eps(items.size());
      parallel_for(items.size(), ex.workers(), [&](std::size_t i) {
        const auto seed = derive_seed(cfg.seed, {0x4e4f, k, hash_id(items[i].source_clip_id)});
        const auto out = add_gaussian_noise(items[i], sigma, seed, cfg.attacks.epsilon_cap);
        eps[i] = epsilon_of(to_complex(items[i].data), to_complex(out.data));
        out.save(dir / sub / items[i].source_clip_id, {{"result", {{"epsilon_realized", eps[i]}}}});
      });
      return eps;
    };
    noisy(batch_flat, "train");
    const auto eps = noisy(corpus.test, "test");
    AttackRow row;
    row.tag = PerturbationTag::noisy(sigma).label();
    row.victim = "mlp";
    row.count = corpus.test.size();
    double correct = 0.0;
    for (const auto& s : corpus.test) {
      const auto out = Spectrogram::load(dir / "test" / s.source_clip_id);
      correct += victims.mlp.predict(flatten(out)) == s.class_label;
    }
    row.accuracy = correct / static_cast<double>(corpus.test.size());
    row.success_rate = 1.0 - row.accuracy;
    row.epsilon_mean = std::accumulate(eps.begin(), eps.end(), 0.0) / static_cast<double>(eps.size());
    summary.rows.push_back(row);
  }

  write_json(ex.root() / "attack" / "summary.json", summary.to_json());
  write_text(ex.root() / "attack" / "summary.csv", summary.to_csv());
  ex.log("attack: done, " + std::to_string(summary.failures.size()) + " failures");
  return summary;
}

// ---------------------------------------------------------------------------
// chordal

struct AdversarialItem {
  Spectrogram spec;
  bool success = true;
  bool over_cap = false;
  int victim_prediction = -1;
};

/// Loads one split of an attack (or noise) directory, keyed by clip id.
inline std::map<std::string, AdversarialItem> load_attack_split(const fs::path& dir) {
  std::map<std::string, AdversarialItem> out;
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(dir))
    if (f.path().extension() == ".pgm1") files.push_back(f.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto stem = f.parent_path() / f.stem();
    AdversarialItem item{Spectrogram::load(stem)};
    const auto j = experiment_detail::read_json(stem.string() + ".json", "cmd_attack");
    if (j.contains("result")) {
      const auto& r = j.at("result");
      if (r.contains("success")) item.success = r.at("success").get<bool>();
      if (r.contains("over_cap")) item.over_cap = r.at("over_cap").get<bool>();
    }
    if (j.contains("victim_prediction")) item.victim_prediction = j.at("victim_prediction").get<int>();
    out.emplace(item.spec.source_clip_id, std::move(item));
  }
  return out;
}

struct ChordalOutcome {
  SeparationReport report;
  double attack_gamma_mean = 0.0;
  double noise_gamma_mean = 0.0;
  std::optional<double> ratio;
};

inline bool separation_attack(const std::string& tag) {
  return tag == "ATTACK(FGSM)" || tag == "ATTACK(BIM-a)" || tag == "ATTACK(BIM-b)" || tag == "ATTACK(CWA)";
}

/// Gamma study over (clean test, perturbed test) pairs of every input attack
/// and noise level.
inline ChordalOutcome cmd_chordal(const Experiment& ex) {
  using namespace experiment_detail;
  const auto& cfg = ex.config();
  ex.write_resolved_config();
  ex.log("chordal: start");
  const auto summary = AttackSummary::from_json(read_json(ex.root() / "attack" / "summary.json", "cmd_attack"));
  const auto manifest = Manifest::load(ex.root());
  std::map<std::string, Spectrogram> clean;
  for (const auto* e : manifest.select("test")) clean.emplace(e->clip_id, Spectrogram::load(manifest.stem(ex.root(), *e)));

  std::vector<std::string> dirs;
  for (const auto& name : cfg.attacks.enabled) {
    const auto a = parse_attack(name);
    if (a != AttackName::Lfa) dirs.push_back(to_string(a));
  }
  for (double s : cfg.noise_sigmas) dirs.push_back(noise_dir_name(s));

  std::vector<StudyPair> dataset;
  for (const auto& d : dirs) {
    const auto items = load_attack_split(attack_dir(ex.root(), d) / "test");
    if (items.empty()) fail(ErrorCode::MissingArtifact, "no test items under attack/" + d + " (run cmd_attack)");
    for (const auto& [id, item] : items) {
      const auto it = clean.find(id);
      if (it == clean.end()) fail(ErrorCode::MissingArtifact, "attack/" + d + "/" + id + " has no clean counterpart");
      dataset.push_back({item.spec.tag.label() + "/" + id, to_complex(it->second.data), to_complex(item.spec.data),
                         item.spec.tag});
    }
  }
  StudyOptions opt;
  opt.probes = cfg.chordal.probes;
  opt.seed = derive_seed(cfg.seed, {0x4348});
  opt.epsilon_max = cfg.chordal.epsilon_max;
  opt.pairing = cfg.chordal.pairing;
  opt.skip_failures = cfg.chordal.skip_failures;
  opt.workers = ex.workers();

  ChordalOutcome out;
  out.report = gamma_study(dataset, opt);
  double attack_sum = 0.0, noise_sum = 0.0;
  std::size_t attack_n = 0, noise_n = 0;
  for (auto& t : out.report.tags) {
    const auto& label = t.tag;
    if (const auto* row = summary.find(label)) t.victim_accuracy = row->accuracy;
    if (separation_attack(label)) {
      attack_sum += t.gamma_mean * static_cast<double>(t.count);
      attack_n += t.count;
    } else if (label.rfind("NOISY(", 0) == 0) {
      noise_sum += t.gamma_mean * static_cast<double>(t.count);
      noise_n += t.count;
    }
  }
  out.attack_gamma_mean = attack_n ? attack_sum / static_cast<double>(attack_n) : 0.0;
  out.noise_gamma_mean = noise_n ? noise_sum / static_cast<double>(noise_n) : 0.0;
  if (out.noise_gamma_mean > 0.0) out.ratio = out.attack_gamma_mean / out.noise_gamma_mean;

  auto j = out.report.to_json();
  j["separation"] = {{"attack_tags", {"ATTACK(FGSM)", "ATTACK(BIM-a)", "ATTACK(BIM-b)", "ATTACK(CWA)"}},
                     {"attack_gamma_mean", out.attack_gamma_mean},
                     {"noise_gamma_mean", out.noise_gamma_mean},
                     {"ratio", out.ratio ? ojson(*out.ratio) : ojson()}};
  write_json(ex.root() / "chordal" / "report.json", j);
  write_text(ex.root() / "chordal" / "report.csv", out.report.to_csv());
  ex.log("chordal: " + std::to_string(dataset.size()) + " pairs");
  return out;
}

// ---------------------------------------------------------------------------
// detect

struct DetectRow {
  std::string attack;
  std::optional<double> schur_auc;
  std::optional<double> pair_auc;
  std::optional<double> schur_class_wise;
  std::optional<double> pair_class_wise;
  std::size_t train_pairs = 0;
  std::size_t test_adversarial = 0;
  std::string note;
};

struct DetectOutcome {
  std::vector<DetectRow> rows;
  /// Legitimate-vs-legitimate control.
  DetectRow null_row;
  /// Schur-mode AUC of the detector trained on one attack (row) on another
  /// attack's test set (column).
  std::map<std::string, std::map<std::string, double>> transfer;

  const DetectRow* find(const std::string& attack) const {
    for (const auto& r : rows)
      if (r.attack == attack) return &r;
    return nullptr;
  }
};

namespace experiment_detail {

inline ojson opt_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(); }

inline ojson to_json(const DetectRow& r) {
  return {{"attack", r.attack},         {"schur_auc", opt_json(r.schur_auc)},
          {"pair_auc", opt_json(r.pair_auc)}, {"schur_class_wise_auc", opt_json(r.schur_class_wise)},
          {"pair_class_wise_auc", opt_json(r.pair_class_wise)}, {"train_pairs", r.train_pairs},
          {"test_adversarial", r.test_adversarial}, {"note", r.note}};
}

inline std::string csv_cell(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

}  // namespace experiment_detail

inline DetectOutcome cmd_detect(const Experiment& ex) {
  using namespace experiment_detail;
  const auto& cfg = ex.config();
  const auto& dc = cfg.detector;
  ex.write_resolved_config();
  ex.log("detect: start");
  read_json(ex.root() / "attack" / "summary.json", "cmd_attack");
  const auto corpus = load_corpus(ex);
  const auto victims = ensure_victims(ex, corpus);
  std::optional<Svm> poisoned;
  if (fs::exists(ex.root() / "victims" / "svm_poisoned.json")) poisoned = Svm::load(ex.root() / "victims", "svm_poisoned");
  const std::size_t classes = corpus.manifest.classes.size();

  // legitimate training batches: clean detector batch plus its noisy copies
  auto legitimate = corpus.batch;
  if (dc.include_noisy) {
    for (double s : cfg.noise_sigmas) {
      const auto items = load_attack_split(attack_dir(ex.root(), noise_dir_name(s)) / "train");
      for (auto& b : corpus.batch)
        for (const auto& spec : b) {
          const auto it = items.find(spec.source_clip_id);
          if (it != items.end()) legitimate[static_cast<std::size_t>(spec.class_label)].push_back(it->second.spec);
        }
    }
  }

  // per-class references for pair mode
  std::vector<RealMatrix> reference(classes, RealMatrix(corpus.manifest.n, corpus.manifest.n));
  for (std::size_t c = 0; c < classes; ++c) {
    for (const auto& s : corpus.batch[c])
      for (std::size_t k = 0; k < s.data.data().size(); ++k)
        reference[c].data()[k] += s.data.data()[k] / static_cast<double>(corpus.batch[c].size());
  }

  const double cap = dc.clip_cap;
  auto schur_features = [&](const std::vector<const Spectrogram*>& items, FeatureLabel label) {
    std::vector<EigenFeature> out(items.size());
    parallel_for(items.size(), ex.workers(), [&](std::size_t k) {
      out[k] = extract_test_feature(items[k]->data, cap);
      out[k].label = label;
      out[k].class_label = items[k]->class_label;
    });
    return out;
  };
  auto pair_features = [&](const std::vector<const Spectrogram*>& items, const std::vector<int>& predicted,
                           FeatureLabel label) {
    std::vector<EigenFeature> out(items.size());
    parallel_for(items.size(), ex.workers(), [&](std::size_t k) {
      const auto c = static_cast<std::size_t>(std::clamp(predicted[k], 0, static_cast<int>(classes) - 1));
      out[k] = pair_feature(items[k]->data, reference[c], cap);
      out[k].label = label;
      out[k].class_label = items[k]->class_label;
    });
    return out;
  };
  std::vector<const Spectrogram*> clean_ptrs;
  std::vector<int> clean_mlp, clean_svm;
  for (const auto& s : corpus.test) {
    clean_ptrs.push_back(&s);
    clean_mlp.push_back(victims.mlp.predict(flatten(s)));
    clean_svm.push_back(victims.svm.predict(flatten(s)));
  }
  const auto clean_schur = schur_features(clean_ptrs, FeatureLabel::Legitimate);
  const auto clean_pair_mlp = pair_features(clean_ptrs, clean_mlp, FeatureLabel::Legitimate);
  const auto clean_pair_svm = pair_features(clean_ptrs, clean_svm, FeatureLabel::Legitimate);
  std::vector<int> clean_poisoned;
  if (poisoned)
    for (const auto& s : corpus.test) clean_poisoned.push_back(poisoned->predict(flatten(s)));
  const auto clean_pair_poisoned =
      poisoned ? pair_features(clean_ptrs, clean_poisoned, FeatureLabel::Legitimate) : std::vector<EigenFeature>{};

  auto evaluate = [](const DetectorModel& model, std::vector<EigenFeature> legit, const std::vector<EigenFeature>& adv,
                     std::optional<double>& auc, std::optional<double>& class_wise) {
    legit.insert(legit.end(), adv.begin(), adv.end());
    const auto r = evaluate_auc(model, legit);
    auc = r.auc;
    class_wise = r.class_wise_mean;
  };

  DetectOutcome out;
  std::map<std::string, DetectorModel> models;
  std::map<std::string, std::vector<EigenFeature>> adv_schur;
  for (const auto& enabled : cfg.attacks.enabled) {
    const auto name = parse_attack(enabled);
    const auto tag = to_string(name);
    DetectRow row;
    row.attack = tag;
    const auto train_items = load_attack_split(attack_dir(ex.root(), tag) / "train");
    const auto test_items = load_attack_split(attack_dir(ex.root(), tag) / "test");
    std::vector<std::vector<Spectrogram>> adv_batches(classes);
    for (const auto& [id, item] : train_items)
      if (item.success && !item.over_cap) adv_batches[static_cast<std::size_t>(item.spec.class_label)].push_back(item.spec);
    std::vector<std::vector<Spectrogram>> leg_used, adv_used;
    std::vector<std::size_t> dropped;
    for (std::size_t c = 0; c < classes; ++c) {
      if (adv_batches[c].size() >= 2 && legitimate[c].size() >= 2) {
        leg_used.push_back(legitimate[c]);
        adv_used.push_back(adv_batches[c]);
      } else {
        dropped.push_back(c);
      }
    }
    std::vector<const Spectrogram*> adv_ptrs;
    std::vector<int> adv_pred;
    for (const auto& [id, item] : test_items) {
      if (!item.success || item.over_cap) continue;
      adv_ptrs.push_back(&item.spec);
      adv_pred.push_back(item.victim_prediction);
    }
    row.test_adversarial = adv_ptrs.size();
    if (leg_used.empty() || adv_ptrs.empty()) {
      row.note = "insufficient adversarial examples";
      ex.log("detect: " + tag + " skipped, " + row.note);
      out.rows.push_back(row);
      continue;
    }
    if (!dropped.empty()) row.note = std::to_string(dropped.size()) + " classes without adversarial training pairs";
    const auto pf = build_pair_features(leg_used, adv_used, dc.pairs_per_class,
                                        derive_seed(cfg.seed, {0x4445, static_cast<std::uint64_t>(name)}), cap,
                                        ex.workers());
    row.train_pairs = pf.legitimate.size() + pf.adversarial.size();
    DetectorConfig dcfg;
    dcfg.reg_strength = dc.reg_strength;
    auto model = train_detector(pf.legitimate, pf.adversarial, dcfg, derive_seed(cfg.seed, {0x4c52}));
    model.attacks_seen = {tag};
    write_json(ex.root() / "detect" / "models" / (tag + ".json"), model.to_json());

    const auto schur_adv = schur_features(adv_ptrs, FeatureLabel::Adversarial);
    evaluate(model, clean_schur, schur_adv, row.schur_auc, row.schur_class_wise);
    const auto& clean_pair =
        name == AttackName::Lfa && poisoned ? clean_pair_poisoned : (name == AttackName::Ea || name == AttackName::Lfa ? clean_pair_svm : clean_pair_mlp);
    evaluate(model, clean_pair, pair_features(adv_ptrs, adv_pred, FeatureLabel::Adversarial), row.pair_auc,
             row.pair_class_wise);
    models.emplace(tag, model);
    adv_schur.emplace(tag, schur_adv);
    out.rows.push_back(row);
    ex.log("detect: " + tag + " schur AUC " + fmt(*row.schur_auc) + ", pair AUC " + fmt(*row.pair_auc));
  }

  for (const auto& [from, model] : models) {
    for (const auto& [to, feats] : adv_schur) {
      std::optional<double> auc, cw;
      evaluate(model, clean_schur, feats, auc, cw);
      out.transfer[from][to] = *auc;
    }
  }

  // null control: two halves of the legitimate batch as opposing classes,
  // scored on two halves of the clean test split
  {
    DetectRow& row = out.null_row;
    row.attack = "NULL";
    std::vector<std::vector<Spectrogram>> half_a, half_b;
    for (std::size_t c = 0; c < classes; ++c) {
      std::vector<Spectrogram> a, b;
      for (std::size_t k = 0; k < legitimate[c].size(); ++k) (k % 2 ? b : a).push_back(legitimate[c][k]);
      if (a.size() >= 2 && b.size() >= 2) {
        half_a.push_back(std::move(a));
        half_b.push_back(std::move(b));
      }
    }
    if (half_a.empty()) {
      row.note = "insufficient legitimate examples";
    } else {
      const auto pf = build_pair_features(half_a, half_b, dc.pairs_per_class, derive_seed(cfg.seed, {0x4e55}), cap,
                                          ex.workers());
      row.train_pairs = pf.legitimate.size() + pf.adversarial.size();
      DetectorConfig dcfg;
      dcfg.reg_strength = dc.reg_strength;
      const auto model = train_detector(pf.legitimate, pf.adversarial, dcfg, derive_seed(cfg.seed, {0x4c52}));
      std::vector<std::size_t> order(corpus.test.size());
      std::iota(order.begin(), order.end(), 0);
      Rng rng(derive_seed(cfg.seed, {0x4e56}));
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<EigenFeature> schur_mix, pair_mix;
      for (std::size_t k = 0; k < order.size(); ++k) {
        const auto label = k % 2 ? FeatureLabel::Adversarial : FeatureLabel::Legitimate;
        schur_mix.push_back(clean_schur[order[k]]);
        schur_mix.back().label = label;
        pair_mix.push_back(clean_pair_mlp[order[k]]);
        pair_mix.back().label = label;
      }
      row.test_adversarial = order.size() / 2;
      evaluate(model, schur_mix, {}, row.schur_auc, row.schur_class_wise);
      evaluate(model, pair_mix, {}, row.pair_auc, row.pair_class_wise);
    }
  }

  ojson j;
  auto& rows = j["rows"] = ojson::array();
  for (const auto& r : out.rows) rows.push_back(to_json(r));
  j["null"] = to_json(out.null_row);
  ojson tr = ojson::object();
  for (const auto& [from, cols] : out.transfer) {
    ojson c = ojson::object();
    for (const auto& [to, v] : cols) c[to] = v;
    tr[from] = c;
  }
  j["transfer_schur"] = tr;
  write_json(ex.root() / "detect" / "auc.json", j);

  // rows are modes, columns attacks
  std::string csv = "mode";
  for (const auto& r : out.rows) csv += "," + r.attack;
  csv += ",NULL\n";
  for (const auto& [mode, pick] : {std::pair{"schur", &DetectRow::schur_auc}, std::pair{"pair", &DetectRow::pair_auc}}) {
    csv += mode;
    for (const auto& r : out.rows) csv += "," + csv_cell(r.*pick);
    csv += "," + csv_cell(out.null_row.*pick) + "\n";
  }
  write_text(ex.root() / "detect" / "auc.csv", csv);
  ex.log("detect: done");
  return out;
}

// ---------------------------------------------------------------------------
// report

inline std::string cmd_report(const Experiment& ex) {
  using namespace experiment_detail;
  ex.log("report: start");
  const std::vector<std::pair<fs::path, std::string>> needed{
      {ex.root() / "prepare" / "manifest.json", "cmd_prepare"},
      {ex.root() / "attack" / "summary.json", "cmd_attack"},
      {ex.root() / "chordal" / "report.json", "cmd_chordal"},
      {ex.root() / "detect" / "auc.json", "cmd_detect"}};
  std::vector<std::string> missing;
  std::vector<nlohmann::json> docs;
  for (const auto& [path, stage] : needed) {
    try {
      docs.push_back(read_json(path, stage));
    } catch (const Error&) {
      missing.push_back(stage);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    fail(ErrorCode::MissingArtifact, "missing artifacts from: " + list);
  }
  const auto& manifest = docs[0];
  const auto summary = AttackSummary::from_json(docs[1]);
  const auto& chordal = docs[2];
  const auto& detect = docs[3];

  std::map<std::string, nlohmann::json> gamma_by_tag;
  for (const auto& t : chordal.at("tags")) gamma_by_tag[t.at("tag").get<std::string>()] = t;
  std::map<std::string, nlohmann::json> auc_by_attack;
  for (const auto& r : detect.at("rows")) auc_by_attack[r.at("attack").get<std::string>()] = r;
  auto num = [](const nlohmann::json& v, int precision = 4) {
    return v.is_null() ? std::string("n/a") : fmt(v.get<double>(), precision);
  };

  std::ostringstream md;
  std::string csv = "tag,victim,count,accuracy,epsilon_mean,gamma_mean,gamma_std,bound_violation_rate,schur_auc,pair_auc\n";
  md << "# pencil-guard report\n\n";
  md << "Corpus: " << manifest.at("entries").size() << " spectrograms of size " << manifest.at("n").get<std::size_t>()
     << ", " << manifest.at("classes").size() << " classes.\n\n";
  md << "## Victim accuracy, perturbation size and gamma\n\n";
  md << "| tag | victim | count | accuracy | mean epsilon | gamma (mean +- std) | bound violation rate |\n";
  md << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : summary.rows) {
    const auto& label = r.tag;
    std::string gamma = "n/a", viol = "n/a", gm, gs, vr;
    if (const auto it = gamma_by_tag.find(label); it != gamma_by_tag.end()) {
      gm = fmt(it->second.at("gamma_mean").get<double>(), 4);
      gs = fmt(it->second.at("gamma_std").get<double>(), 4);
      vr = fmt(it->second.at("bound_violation_rate").get<double>(), 4);
      gamma = gm + " +- " + gs;
      viol = vr;
    }
    md << "| " << label << " | " << r.victim << " | " << r.count << " | " << fmt(r.accuracy, 4) << " | "
       << (r.epsilon_mean ? fmt(*r.epsilon_mean, 4) : "n/a") << " | " << gamma << " | " << viol << " |\n";
    std::string sa, pa;
    const auto bare = label.rfind("ATTACK(", 0) == 0 ? label.substr(7, label.size() - 8) : label;
    if (const auto it = auc_by_attack.find(bare); it != auc_by_attack.end()) {
      sa = it->second.at("schur_auc").is_null() ? "" : fmt(it->second.at("schur_auc").get<double>());
      pa = it->second.at("pair_auc").is_null() ? "" : fmt(it->second.at("pair_auc").get<double>());
    }
    csv += label + "," + r.victim + "," + std::to_string(r.count) + "," + fmt(r.accuracy) + "," +
           (r.epsilon_mean ? fmt(*r.epsilon_mean) : "") + "," + gm + "," + gs + "," + vr + "," + sa + "," + pa + "\n";
  }
  const auto& sep = chordal.at("separation");
  md << "\nMean gamma over FGSM/BIM/CW pairs: " << num(sep.at("attack_gamma_mean"), 6)
     << "; over noise pairs: " << num(sep.at("noise_gamma_mean"), 6) << "; ratio: " << num(sep.at("ratio")) << ".\n";

  md << "\n## Detector AUC\n\n| mode |";
  for (const auto& r : detect.at("rows")) md << ' ' << r.at("attack").get<std::string>() << " |";
  md << " NULL |\n|---|";
  for (std::size_t k = 0; k <= detect.at("rows").size(); ++k) md << "---|";
  md << '\n';
  for (const std::string mode : {"schur", "pair"}) {
    md << "| " << mode << " |";
    for (const auto& r : detect.at("rows")) md << ' ' << num(r.at(mode + "_auc")) << " |";
    md << ' ' << num(detect.at("null").at(mode + "_auc")) << " |\n";
  }
  if (!summary.failures.empty()) {
    md << "\n## Attack failures\n\n";
    for (const auto& f : summary.failures) md << "- " << f << '\n';
  }
  write_text(ex.root() / "report" / "summary.md", md.str());
  write_text(ex.root() / "report" / "summary.csv", csv);
  ex.log("report: done");
  return md.str();
}

}  // namespace pencil_guard
