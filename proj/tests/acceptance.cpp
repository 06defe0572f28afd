// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance [work_dir]
//
// Criteria 6-8 run the full default pipeline on the synthetic desk corpus
// under <work_dir>/desk; criterion 9 checks the victims that run produced;
// criterion 10 reruns every stage of a reduced config.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "pencil_guard/experiment.hpp"

using namespace pencil_guard;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(int id, bool pass, const std::string& detail) {
  std::cout << "CRITERION " << id << ' ' << (pass ? "PASS" : "FAIL") << ": " << detail << std::endl;
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int precision = 4) { return experiment_detail::fmt(v, precision); }

double rel(cdouble a, cdouble b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale > 0.0 ? std::abs(a - b) / scale : 0.0;
}

ComplexMatrix random_pencil_matrix(std::size_t n, std::mt19937_64& rng, bool complex_entries) {
  return complex_entries ? oracle::random_complex(n, rng) : oracle::random_real(n, rng);
}

// ---------------------------------------------------------------------------

void criterion_1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst_residual = 0.0, worst_unitarity_ratio = 0.0;
  std::map<std::size_t, std::size_t> failed;
  const std::vector<std::size_t> orders{4, 8, 16, 32, 64};
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = orders[static_cast<std::size_t>(k) % orders.size()];
    const bool cplx = (k / 5) % 2 == 1;
    Pencil p{random_pencil_matrix(n, rng, cplx), random_pencil_matrix(n, rng, cplx)};
    try {
      const auto f = qz_decompose(p);
      worst_residual = std::max({worst_residual, f.residual_t, f.residual_s});
      const double u = std::max(unitarity_defect(f.q), unitarity_defect(f.z));
      worst_unitarity_ratio = std::max(worst_unitarity_ratio, u / (1e-10 * static_cast<double>(n)));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ConvergenceFailure) throw;
      ++failed[n];
    }
  }
  std::size_t small_failures = 0;
  for (const auto& [n, c] : failed)
    if (n <= 32) small_failures += c;
  const double rate64 = static_cast<double>(failed[64]) / 200.0;
  const double runtime = seconds_since(t0);
  const bool pass = worst_residual <= 1e-10 && worst_unitarity_ratio <= 1.0 && small_failures == 0 && rate64 <= 0.001 &&
                    runtime <= 120.0;
  verdict(1, pass,
          "1000 pencils, max residual " + num(worst_residual, 3) + ", max unitarity/(1e-10 n) " +
              num(worst_unitarity_ratio, 3) + ", failures n<=32: " + std::to_string(small_failures) +
              ", n=64 failure rate " + num(rate64) + ", " + num(runtime, 3) + " s");
}

void criterion_2() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = 1 + static_cast<std::size_t>(k) % 5;
    Pencil p{oracle::random_complex(n, rng), oracle::random_complex(n, rng)};
    const auto e = generalized_eigenvalues(qz_decompose(p));
    std::vector<cdouble> lambdas;
    for (const auto& v : e.values) lambdas.push_back(v.lambda);
    const auto roots = oracle::poly_roots(oracle::pencil_characteristic_polynomial(p.m1, p.m2));
    worst = std::max(worst, oracle::matched_relative_error(lambdas, roots));
  }
  const double runtime = seconds_since(t0);
  verdict(2, worst <= 1e-6 && runtime <= 30.0,
          "200 pencils n<=5, max matched relative error " + num(worst, 3) + ", " + num(runtime, 3) + " s");
}

void criterion_3() {
  std::mt19937_64 rng(303);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst_det = 0.0, worst_inv = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 2 + static_cast<std::size_t>(k) % 11;
    Pencil p{oracle::random_complex(n, rng), oracle::random_complex(n, rng)};
    const auto f = qz_decompose(p);
    for (int probe = 0; probe < 5; ++probe) {
      const auto d = det_pencil_probe(p, f, cdouble(g(rng), g(rng)));
      worst_det = std::max(worst_det, rel(d.lhs, d.rhs));
    }
  }
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 2 + static_cast<std::size_t>(k) % 11;
    Pencil p{oracle::random_complex(n, rng), oracle::random_complex(n, rng)};
    for (std::size_t i = 0; i < n; ++i) p.m2(i, i) += 3.0 * std::sqrt(static_cast<double>(n));
    worst_inv = std::max(worst_inv, inverse_identity_check(p, qz_decompose(p)));
  }
  verdict(3, worst_det <= 1e-8 && worst_inv <= 1e-8,
          "max determinant probe relative gap " + num(worst_det, 3) + " (100 pencils x 5 probes), max inverse residual " +
              num(worst_inv, 3) + " (100 pencils)");
}

void criterion_4() {
  std::mt19937_64 rng(404);
  std::cauchy_distribution<double> heavy(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, 19);
  auto draw = [&]() -> Eigenvalue {
    if (pick(rng) == 0) return {1.0, 0.0, 0.0, EigenKind::Infinite, 0};
    const cdouble z{heavy(rng), heavy(rng)};
    return {z, 1.0, z, EigenKind::Finite, 0};
  };
  std::size_t bounded = 0, symmetric = 0, identity = 0, triangle = 0;
  for (int t = 0; t < 10000; ++t) {
    const auto a = draw(), b = draw(), c = draw();
    const double ab = chordal_distance(a, b), ba = chordal_distance(b, a), bc = chordal_distance(b, c),
                 ac = chordal_distance(a, c);
    if (ab < -1e-12 || ab > 1.0 + 1e-12) ++bounded;
    if (std::abs(ab - ba) > 1e-12) ++symmetric;
    if (chordal_distance(a, a) > 1e-12) ++identity;
    const bool same = a.kind == b.kind && (a.kind == EigenKind::Infinite || a.lambda == b.lambda);
    if (!same && ab == 0.0) ++identity;
    if (ac > ab + bc + 1e-12) ++triangle;
  }
  const double anchor = std::abs(chordal_distance(cdouble(0.0), cdouble(1.0)) - 1.0 / std::sqrt(2.0));
  const std::size_t total = bounded + symmetric + identity + triangle;
  verdict(4, total == 0 && anchor <= 1e-15,
          "10^4 triples: bound/symmetry/identity/triangle violations " + std::to_string(bounded) + "/" +
              std::to_string(symmetric) + "/" + std::to_string(identity) + "/" + std::to_string(triangle) +
              ", |chord(0,1) - 1/sqrt2| = " + num(anchor, 3));
}

void criterion_5() {
  std::mt19937_64 rng(505);
  std::size_t ok = 0, cases = 0;
  for (int t = 0; t < 100; ++t) {
    auto m = oracle::random_real(8, rng);
    const double nm = oracle::jacobi_spectral_norm(m);
    for (auto& v : m.data()) v /= nm;
    auto e = oracle::random_real(8, rng);
    const double ne = oracle::jacobi_spectral_norm(e);
    ComplexMatrix mt = m;
    for (std::size_t k = 0; k < mt.data().size(); ++k) mt.data()[k] += 1e-8 * e.data()[k] / ne;
    const double eps = epsilon_of(m, mt);
    Rng probe_rng(derive_seed(505, {static_cast<std::uint64_t>(t)}));
    std::vector<double> bounds;
    for (int p = 0; p < 64; ++p) {
      const auto x = random_unit_vector(8, probe_rng);
      const auto y = random_unit_vector(8, probe_rng);
      bounds.push_back(perturbation_bound(m, mt, 1.0, x, y, eps).value_or(std::numeric_limits<double>::infinity()));
    }
    std::sort(bounds.begin(), bounds.end());
    const double median = 0.5 * (bounds[31] + bounds[32]);
    for (double chord : chordal_vector_distance(schur_eigenvalues(m), schur_eigenvalues(mt), Alignment::Matching)) {
      ok += chord <= median;
      ++cases;
    }
  }
  const double rate = static_cast<double>(ok) / static_cast<double>(cases);
  verdict(5, rate >= 0.95,
          "matched-eigenvalue chord <= median bound in " + num(100.0 * rate) + "% of " + std::to_string(cases) +
              " eigenvalues (100 pencils, 64 probe pairs, eps = 1e-8 ||M||_2)");
}

// ---------------------------------------------------------------------------

struct DeskRun {
  double seconds = 0.0;
  AttackSummary attacks;
  ChordalOutcome chordal;
  DetectOutcome detect;
  fs::path root;
};

DeskRun run_desk(const fs::path& root) {
  fs::remove_all(root);
  nlohmann::json cfg{{"output_dir", root.string()}};
  const Experiment ex(config_from_json(cfg));
  DeskRun run;
  run.root = root;
  const auto t0 = Clock::now();
  cmd_prepare(ex);
  run.attacks = cmd_attack(ex);
  run.chordal = cmd_chordal(ex);
  run.detect = cmd_detect(ex);
  cmd_report(ex);
  run.seconds = seconds_since(t0);
  std::cout << "desk pipeline finished in " << num(run.seconds, 4) << " s (" << ex.workers() << " workers)" << std::endl;
  return run;
}

void criterion_6(const DeskRun& run) {
  const auto& c = run.chordal;
  const double ratio = c.ratio.value_or(c.attack_gamma_mean > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  verdict(6, ratio >= 3.0 && run.seconds <= 600.0,
          "mean gamma FGSM/BIM/CW " + num(c.attack_gamma_mean, 4) + " vs noise " + num(c.noise_gamma_mean, 4) +
              ", ratio " + num(ratio) + " (need >= 3), pipeline " + num(run.seconds, 4) + " s");
}

void criterion_7(const DeskRun& run) {
  auto acc = [&](const std::string& tag, const std::string& victim = "") {
    for (const auto& r : run.attacks.rows)
      if (r.tag == tag && (victim.empty() || r.victim == victim)) return r.accuracy;
    return std::numeric_limits<double>::quiet_NaN();
  };
  const double clean = acc("CLEAN", "mlp"), fgsm = acc("ATTACK(FGSM)"), bim = acc("ATTACK(BIM-b)"), ea = acc("ATTACK(EA)");
  verdict(7, clean >= 0.85 && fgsm <= 0.20 && bim <= 0.20 && ea <= 0.30,
          "MLP clean " + num(clean) + ", FGSM " + num(fgsm) + ", BIM-b " + num(bim) + ", EA on SVM " + num(ea));
}

void criterion_8(const DeskRun& run) {
  auto better = [&](const std::string& attack) {
    const auto* r = run.detect.find(attack);
    if (!r) return std::numeric_limits<double>::quiet_NaN();
    return std::max(r->schur_auc.value_or(0.0), r->pair_auc.value_or(0.0));
  };
  const auto& null = run.detect.null_row;
  const double null_auc = std::max(null.schur_auc.value_or(1.0), null.pair_auc.value_or(1.0));
  const double fgsm = better("FGSM"), bim = better("BIM-b");
  std::string detail = "best-mode AUC FGSM " + num(fgsm) + ", BIM-b " + num(bim) + ", null max " + num(null_auc);
  for (const auto* name : {"FGSM", "BIM-b"}) {
    if (const auto* r = run.detect.find(name)) {
      detail += std::string(" | ") + name + " schur " + num(r->schur_auc.value_or(NAN)) + " pair " +
                num(r->pair_auc.value_or(NAN));
    }
  }
  verdict(8, fgsm >= 0.80 && bim >= 0.80 && null_auc <= 0.6, detail);
}

void criterion_9(const DeskRun& run) {
  const auto mlp = Mlp::load(run.root / "victims", "mlp");
  const auto svm = Svm::load(run.root / "victims", "svm");
  const auto manifest = Manifest::load(run.root);
  const auto* entry = manifest.select("test").front();
  const auto spec = Spectrogram::load(manifest.stem(run.root, *entry));
  const Vec x(spec.data.data().begin(), spec.data.data().end());
  std::mt19937_64 rng(909);
  std::uniform_int_distribution<std::size_t> coord(0, x.size() - 1);
  auto rel_err = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); };

  const double h = 1e-5;
  double worst_mlp = 0.0, worst_svm = 0.0;
  const auto [loss, grad] = mlp.loss_gradient(x, spec.class_label);
  for (int k = 0; k < 10; ++k) {
    const auto d = coord(rng);
    auto xp = x, xm = x;
    xp[d] += h;
    xm[d] -= h;
    const double fd = (mlp.loss_gradient(xp, spec.class_label).first - mlp.loss_gradient(xm, spec.class_label).first) / (2 * h);
    worst_mlp = std::max(worst_mlp, rel_err(fd, grad[d]));
  }
  std::normal_distribution<double> g(0.0, 1.0);
  Vec w(svm.decision(x).size());
  for (auto& v : w) v = g(rng);
  const auto sg = svm.decision_gradient(x, w);
  auto weighted = [&](const Vec& at) {
    const auto f = svm.decision(at);
    double s = 0.0;
    for (std::size_t c = 0; c < f.size(); ++c) s += w[c] * f[c];
    return s;
  };
  for (int k = 0; k < 10; ++k) {
    const auto d = coord(rng);
    auto xp = x, xm = x;
    xp[d] += h;
    xm[d] -= h;
    worst_svm = std::max(worst_svm, rel_err((weighted(xp) - weighted(xm)) / (2 * h), sg[d]));
  }
  verdict(9, worst_mlp <= 1e-5 && worst_svm <= 1e-5,
          "desk victims, 10 coordinates each: MLP max relative error " + num(worst_mlp, 3) + ", SVM " + num(worst_svm, 3));
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& f : fs::recursive_directory_iterator(root)) {
    if (!f.is_regular_file() || f.path().filename() == "run.log") continue;
    std::ifstream in(f.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    out[fs::relative(f.path(), root).string()] = s.str();
  }
  return out;
}

void criterion_10(const fs::path& work) {
  const auto root = work / "determinism";
  fs::remove_all(root);
  const nlohmann::json base{{"output_dir", root.string()},
                            {"corpus", {{"synthetic", {{"classes", 3}, {"clips_per_class", 9}, {"seconds", 0.5}}}}},
                            {"spectrogram", {{"n", 16}, {"num_scales", 32}}},
                            {"victims", {{"mlp", {{"hidden", {32, 16}}, {"epochs", 8}}}}},
                            {"attacks",
                             {{"cwa", {{"iterations", 40}, {"search_steps", 2}}},
                              {"opt", {{"iterations", 40}, {"search_steps", 2}}},
                              {"ea", {{"iterations", 40}}}}},
                            {"detector", {{"batch_per_class", 4}, {"pairs_per_class", 8}}}};
  auto stages = [](const Experiment& ex) {
    cmd_prepare(ex);
    cmd_attack(ex);
    cmd_chordal(ex);
    cmd_detect(ex);
    cmd_report(ex);
  };
  auto cfg = config_from_json(base);
  cfg.workers = 3;
  stages(Experiment(cfg));
  const auto first = snapshot(root);
  // rerun in place
  stages(Experiment(cfg));
  const auto in_place = snapshot(root);
  // from scratch with a different pool width
  fs::remove_all(root);
  cfg.workers = 1;
  stages(Experiment(cfg));
  auto fresh = snapshot(root);
  // the resolved config records the requested pool width
  fresh.erase("config.json");
  auto first_cmp = first;
  first_cmp.erase("config.json");

  std::size_t diffs = 0;
  std::string example;
  auto compare = [&](const std::map<std::string, std::string>& a, const std::map<std::string, std::string>& b) {
    for (const auto& [path, bytes] : a) {
      const auto it = b.find(path);
      if (it == b.end() || it->second != bytes) {
        ++diffs;
        if (example.empty()) example = path;
      }
    }
    if (a.size() != b.size()) ++diffs;
  };
  compare(first, in_place);
  compare(first_cmp, fresh);
  verdict(10, diffs == 0 && !first.empty(),
          std::to_string(first.size()) + " artifacts across all stages; rerun in place and from scratch (3 vs 1 workers): " +
              std::to_string(diffs) + " differences" + (example.empty() ? "" : " (first: " + example + ")"));
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_work";
  fs::create_directories(work);
  auto guarded = [](int id, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      verdict(id, false, std::string("threw: ") + e.what());
    }
  };
  guarded(1, criterion_1);
  guarded(2, criterion_2);
  guarded(3, criterion_3);
  guarded(4, criterion_4);
  guarded(5, criterion_5);
  std::optional<DeskRun> desk;
  try {
    desk = run_desk(work / "desk");
  } catch (const std::exception& e) {
    for (int id : {6, 7, 8, 9}) verdict(id, false, std::string("desk pipeline threw: ") + e.what());
  }
  if (desk) {
    guarded(6, [&] { criterion_6(*desk); });
    guarded(7, [&] { criterion_7(*desk); });
    guarded(8, [&] { criterion_8(*desk); });
    guarded(9, [&] { criterion_9(*desk); });
  }
  guarded(10, [&] { criterion_10(work); });
  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << std::endl;
  return failures == 0 ? 0 : 1;
}
