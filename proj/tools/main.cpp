#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <jebm/checkpoint.hpp>
#include <jebm/config.hpp>
#include <jebm/data.hpp>
#include <jebm/evaluation.hpp>
#include <jebm/model.hpp>
#include <jebm/oracles.hpp>
#include <jebm/samplers.hpp>
#include <jebm/training.hpp>

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

void write_file_atomic(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + tmp);
    os << content;
  }
  std::filesystem::rename(tmp, path);
}

std::string iso_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%FT%TZ", std::gmtime(&t));
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct TrainArgs {
  std::string config, out, resume;
};

int cmd_train(const TrainArgs& a) {
  jebm::AppConfig app = jebm::load_config(a.config);
  std::filesystem::create_directories(a.out);

  std::string config_text = slurp(a.config);
  json manifest;
  manifest["config"] = config_text;
  manifest["config_hash"] = jebm::fnv1a_mix(0, config_text, 0);
  manifest["seed"] = app.trainer.seed;
  manifest["started"] = iso_timestamp();
  manifest["outputs"] = {a.out + "/metrics.jsonl"};
  write_file_atomic(a.out + "/run.json", manifest.dump(2) + "\n");

  jebm::Dataset ds = jebm::make_dataset(app.data, app.trainer.seed);
  jebm::Models models = a.resume.empty() ? jebm::build_models(app.model, app.trainer.seed)
                                         : jebm::load_checkpoint(a.resume);
  jebm::Trainer trainer(models, app.trainer);
  if (!a.resume.empty() && jebm::checkpoint_has_trainer(a.resume))
    jebm::restore_trainer(a.resume, models, trainer);

  std::ofstream metrics(a.out + "/metrics.jsonl",
                        a.resume.empty() ? std::ios::trunc : std::ios::app);
  auto on_log = [&](const jebm::StepMetrics& m) {
    json j = {{"iter", m.iter},
              {"recon", m.recon},
              {"energy_pos", m.energy_pos},
              {"energy_neg", m.energy_neg},
              {"kl", m.kl},
              {"grad_norm_alpha", m.grad_norm_alpha},
              {"grad_norm_beta", m.grad_norm_beta},
              {"wall_ms", m.wall_ms}};
    metrics << j.dump() << '\n';
    metrics.flush();
  };
  std::vector<std::string> ckpts;
  std::int64_t final_iter = trainer.iteration() + app.trainer.iterations;
  auto on_checkpoint = [&](std::int64_t it) {
    std::string dir = a.out + "/ckpt-" + std::to_string(it);
    jebm::save_checkpoint(dir, models, &trainer);
    ckpts.push_back(dir);
    if (it == final_iter) {
      jebm::save_checkpoint(a.out + "/ckpt-final", models, &trainer);
      ckpts.push_back(a.out + "/ckpt-final");
    }
  };

  trainer.run(ds.as_matrix(), on_log, on_checkpoint);

  manifest["finished"] = iso_timestamp();
  for (const auto& c : ckpts) manifest["outputs"].push_back(c);
  write_file_atomic(a.out + "/run.json", manifest.dump(2) + "\n");
  return kExitOk;
}

struct SampleArgs {
  std::string ckpt, out, space = "z", record_chains;
  std::size_t n = 100;
  int steps = 40;
  int thin = 10;
  std::uint64_t seed = 0;
  bool with_noise = false;
};

int cmd_sample(const SampleArgs& a) {
  jebm::Models m = jebm::load_checkpoint(a.ckpt);
  jebm::LangevinConfig cfg;
  cfg.steps = a.steps;
  if (a.space == "z")
    cfg.space = jebm::LangevinConfig::Space::Z;
  else if (a.space == "eps")
    cfg.space = jebm::LangevinConfig::Space::Epsilon;
  else
    throw jebm::UsageError("--space must be z or eps");

  jebm::Tensor means;
  if (a.record_chains.empty() || a.n == 0) {
    means = jebm::generate(m.decoder, m.prior, a.n, cfg, a.seed, a.with_noise).means;
  } else {
    // same stream layout as generate(), plus a chain record
    cfg.thin = a.thin;
    jebm::ChainRecord rec;
    jebm::RngStream rng = jebm::make_stream(a.seed, "generate");
    jebm::LatentStack z = jebm::sample_prior(m.prior, a.n, cfg, rng, &rec);
    means = jebm::decode_mean_rows(m.decoder, z.layers[0]);
    std::ofstream snap(a.record_chains + ".snapshots.csv");
    jebm::write_snapshot_csv(snap, rec);
    std::ofstream energy(a.record_chains + ".energy.csv");
    jebm::write_energy_csv(energy, rec);
  }

  jebm::Dataset out;
  out.n = a.n;
  out.shape = {m.config.data_dim};
  out.data.assign(means.data().begin(), means.data().end());
  jebm::save_dataset(out, a.out);
  return kExitOk;
}

jebm::Tensor dataset_matrix(const std::string& path) {
  jebm::Dataset ds = jebm::load_dataset(path);
  return ds.as_matrix();
}

struct EvalOodArgs {
  std::string ckpt, in_data, out_data, report, scores = "ood_scores.csv";
  std::size_t k = 1;
  std::size_t n_mc = 4;
  int steps = 40;
  double step_size = 0.1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

int cmd_eval_ood(const EvalOodArgs& a) {
  jebm::Models m = jebm::load_checkpoint(a.ckpt);
  jebm::Tensor in_x = dataset_matrix(a.in_data);
  jebm::Tensor out_x = dataset_matrix(a.out_data);

  jebm::ScoringConfig cfg;
  cfg.n_mc = a.n_mc;
  cfg.threads = a.threads;
  cfg.sampler.steps = a.steps;
  cfg.sampler.step_size = a.step_size;
  cfg.sampler.space = jebm::LangevinConfig::Space::Epsilon;

  auto in_lk = jebm::ood_scores(m, in_x, a.k, cfg, a.seed);
  auto out_lk = jebm::ood_scores(m, out_x, a.k, cfg, a.seed);
  auto in_llr = jebm::llr_scores(m, in_x, a.k, cfg, a.seed);
  auto out_llr = jebm::llr_scores(m, out_x, a.k, cfg, a.seed);

  std::vector<std::uint32_t> in_labels(in_lk.size(), 1), out_labels(out_lk.size(), 0);
  {
    std::ofstream os(a.scores);
    os << "id,label,k,score,score_type\n";
    os.precision(17);
    auto rows = [&](const std::vector<double>& s, const std::vector<std::uint32_t>& l,
                    const char* type, std::size_t offset) {
      for (std::size_t i = 0; i < s.size(); ++i)
        os << (offset + i) << ',' << l[i] << ',' << a.k << ',' << s[i] << ',' << type
           << '\n';
    };
    rows(in_lk, in_labels, "L>k", 0);
    rows(out_lk, out_labels, "L>k", in_lk.size());
    rows(in_llr, in_labels, "LLR>k", 0);
    rows(out_llr, out_labels, "LLR>k", in_lk.size());
  }

  json report;
  report["k"] = a.k;
  report["n_mc"] = a.n_mc;
  {
    std::ostringstream lk_json, llr_json;
    jebm::write_report_json(lk_json,
                            jebm::make_report(in_lk, out_lk, "in-distribution"));
    jebm::write_report_json(llr_json,
                            jebm::make_report(in_llr, out_llr, "in-distribution"));
    report["L>k"] = json::parse(lk_json.str());
    report["LLR>k"] = json::parse(llr_json.str());
  }
  write_file_atomic(a.report, report.dump(2) + "\n");
  return kExitOk;
}

struct EvalAdArgs {
  std::string ckpt, data, report, scores = "ad_scores.csv";
  std::int64_t heldout_label = 0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

int cmd_eval_ad(const EvalAdArgs& a) {
  jebm::Models m = jebm::load_checkpoint(a.ckpt);
  jebm::Dataset ds = jebm::load_dataset(a.data);
  if (!ds.labels) throw jebm::UsageError("eval-ad: dataset has no labels");

  jebm::ScoringConfig cfg;
  cfg.threads = a.threads;
  auto scores = jebm::anomaly_scores(m, ds.as_matrix(), cfg, a.seed);

  // anomaly is the positive class; anomaly_score is higher for normal data,
  // so metrics run on the negated score
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if ((*ds.labels)[i] == static_cast<std::uint32_t>(a.heldout_label))
      pos.push_back(-scores[i]);
    else
      neg.push_back(-scores[i]);
  }
  if (pos.empty() || neg.empty())
    throw jebm::UsageError("eval-ad: held-out label splits the data degenerately");

  {
    std::ofstream os(a.scores);
    jebm::write_scores_csv(os, scores, *ds.labels, 0, "L>0");
  }
  std::ostringstream rj;
  jebm::write_report_json(rj, jebm::make_report(pos, neg, "anomaly"));
  write_file_atomic(a.report, rj.str());
  return kExitOk;
}

struct VizArgs {
  std::string ckpt, data, out;
  int steps = 40;
  int thin = 10;
  std::size_t chains = 64;
  std::uint64_t seed = 0;
};

int cmd_viz_latent(const VizArgs& a) {
  jebm::Models m = jebm::load_checkpoint(a.ckpt);
  for (std::size_t d : m.prior.dims)
    if (d != 2)
      std::cerr << "viz-latent: latent layer dim " << d
                << " != 2; plots use the first two coordinates\n";
  std::filesystem::create_directories(a.out);

  jebm::LangevinConfig cfg;
  cfg.steps = a.steps;
  cfg.thin = a.thin;
  jebm::ChainRecord rec;
  jebm::RngStream rng = jebm::make_stream(a.seed, "viz/prior");
  jebm::sample_prior(m.prior, a.chains, cfg, rng, &rec);
  {
    std::ofstream os(a.out + "/prior_chains.csv");
    jebm::write_snapshot_csv(os, rec);
  }
  {
    std::ofstream os(a.out + "/prior_energy.csv");
    jebm::write_energy_csv(os, rec);
  }

  jebm::Tensor x = dataset_matrix(a.data);
  jebm::RngStream infer_rng = jebm::make_stream(a.seed, "viz/infer");
  jebm::InferResult q = jebm::infer(m.inference, x, infer_rng, /*noise=*/false);
  std::ofstream os(a.out + "/posterior_codes.csv");
  os << "id,layer,coordinate,value\n";
  os.precision(17);
  for (std::size_t l = 0; l < q.z.num_layers(); ++l)
    for (std::size_t i = 0; i < q.z.layers[l].rows(); ++i)
      for (std::size_t j = 0; j < q.z.layers[l].cols(); ++j)
        os << i << ',' << (l + 1) << ',' << j << ',' << q.z.layers[l].at(i, j) << '\n';
  return kExitOk;
}

struct GradcheckArgs {
  std::string dims = "2,2";
  std::uint64_t seed = 0;
  bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  std::vector<std::size_t> dims;
  std::stringstream ss(a.dims);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    int v = std::stoi(tok);
    if (v < 1) throw jebm::UsageError("gradcheck: dims must be >= 1");
    dims.push_back(static_cast<std::size_t>(v));
  }
  if (dims.empty()) throw jebm::UsageError("gradcheck: empty --dims");

  auto reports = jebm::run_gradcheck(dims, a.seed, a.corrupt);
  bool ok = true;
  for (const auto& r : reports) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  max_rel_err="
              << r.err << "  tol=" << r.tol << '\n';
    ok = ok && r.pass;
  }
  return ok ? kExitOk : kExitCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-layer latent-variable generator models with a joint "
               "latent-space EBM prior"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model from a TOML config");
  train->add_option("--config", train_args.config, "TOML config path")->required();
  train->add_option("--out", train_args.out, "Output directory")->required();
  train->add_option("--resume", train_args.resume, "Checkpoint directory to resume from");

  SampleArgs sample_args;
  auto* sample = app.add_subcommand("sample", "Draw samples from a checkpoint");
  sample->add_option("--ckpt", sample_args.ckpt, "Checkpoint directory")->required();
  sample->add_option("--n", sample_args.n, "Sample count");
  sample->add_option("--steps", sample_args.steps, "Langevin steps (0 = ancestral)");
  sample->add_option("--space", sample_args.space, "Sampling space: z or eps");
  sample->add_option("--out", sample_args.out, "Output dataset path")->required();
  sample->add_option("--record-chains", sample_args.record_chains,
                     "Prefix for chain snapshot/energy CSVs");
  sample->add_option("--thin", sample_args.thin, "Snapshot thinning for --record-chains");
  sample->add_option("--seed", sample_args.seed, "Random seed");
  sample->add_flag("--with-noise", sample_args.with_noise,
                   "Add observation noise to outputs");

  EvalOodArgs ood_args;
  auto* ood = app.add_subcommand("eval-ood", "Score in/out datasets with L>k and LLR>k");
  ood->add_option("--ckpt", ood_args.ckpt, "Checkpoint directory")->required();
  ood->add_option("--in-data", ood_args.in_data, "In-distribution dataset")->required();
  ood->add_option("--out-data", ood_args.out_data, "OOD dataset")->required();
  ood->add_option("--k", ood_args.k, "Layer cutoff (resample layers <= k)");
  ood->add_option("--n-mc", ood_args.n_mc, "Monte-Carlo replicates");
  ood->add_option("--steps", ood_args.steps, "Resampling Langevin steps");
  ood->add_option("--step-size", ood_args.step_size, "Resampling Langevin step size");
  ood->add_option("--report", ood_args.report, "DetectionReport JSON path")->required();
  ood->add_option("--scores", ood_args.scores, "Per-example score CSV path");
  ood->add_option("--seed", ood_args.seed, "Random seed");
  ood->add_option("--threads", ood_args.threads, "Worker thread cap");

  EvalAdArgs ad_args;
  auto* ad = app.add_subcommand("eval-ad", "Anomaly detection with L>0");
  ad->add_option("--ckpt", ad_args.ckpt, "Checkpoint directory")->required();
  ad->add_option("--data", ad_args.data, "Labeled dataset")->required();
  ad->add_option("--heldout-label", ad_args.heldout_label, "Anomalous class label")
      ->required();
  ad->add_option("--report", ad_args.report, "DetectionReport JSON path")->required();
  ad->add_option("--scores", ad_args.scores, "Per-example score CSV path");
  ad->add_option("--seed", ad_args.seed, "Random seed");
  ad->add_option("--threads", ad_args.threads, "Worker thread cap");

  VizArgs viz_args;
  auto* viz = app.add_subcommand("viz-latent",
                                 "Export prior-chain and posterior latent CSVs");
  viz->add_option("--ckpt", viz_args.ckpt, "Checkpoint directory")->required();
  viz->add_option("--data", viz_args.data, "Dataset for posterior codes")->required();
  viz->add_option("--steps", viz_args.steps, "Prior Langevin steps");
  viz->add_option("--thin", viz_args.thin, "Snapshot thinning");
  viz->add_option("--chains", viz_args.chains, "Prior chain count");
  viz->add_option("--out", viz_args.out, "Output directory")->required();
  viz->add_option("--seed", viz_args.seed, "Random seed");

  GradcheckArgs gc_args;
  auto* gc = app.add_subcommand("gradcheck",
                                "Run the finite-difference and quadrature oracles");
  gc->add_option("--dims", gc_args.dims, "Comma-separated latent dims, e.g. 1,1");
  gc->add_option("--seed", gc_args.seed, "Random seed");
  gc->add_flag("--corrupt-gradient", gc_args.corrupt,
               "Deliberately corrupt a gradient (failure-path test hook)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*sample) return cmd_sample(sample_args);
    if (*ood) return cmd_eval_ood(ood_args);
    if (*ad) return cmd_eval_ad(ad_args);
    if (*viz) return cmd_viz_latent(viz_args);
    if (*gc) return cmd_gradcheck(gc_args);
  } catch (const jebm::DivergedChainError& e) {
    std::cerr << "error: diverged chain " << e.chain_index << " at step "
              << e.step_index << ": " << e.what() << '\n';
    return kExitDiverged;
  } catch (const jebm::NonFiniteError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const jebm::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const jebm::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const jebm::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const jebm::CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const jebm::DimensionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckFailure;
  }
  return kExitOk;
}
