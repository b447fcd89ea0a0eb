// Command-line experiment runner: train / sdl-verify / cost-report / bench.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include "ipr/io.hpp"
#include "ipr/schedules.hpp"
#include "ipr/sdl.hpp"
#include "ipr/sparsexec.hpp"

namespace {

using nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown key \"" + key + "\" in " + where);
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return j;
}

ipr::Mode parse_mode(const std::string& s) {
  if (s == "sp") return ipr::Mode::SP;
  if (s == "ip") return ipr::Mode::IP;
  throw ConfigError("mode must be sp|ip, got \"" + s + "\"");
}

ipr::Sharing parse_sharing(const std::string& s) {
  if (s == "coarse") return ipr::Sharing::Coarse;
  if (s == "medium") return ipr::Sharing::Medium;
  if (s == "fine") return ipr::Sharing::Fine;
  throw ConfigError("sharing must be coarse|medium|fine, got \"" + s + "\"");
}

ipr::InitScheme parse_init(const std::string& s) {
  if (s == "standard") return ipr::InitScheme::Standard;
  if (s == "onb") return ipr::InitScheme::Onb;
  if (s == "random_fd") return ipr::InitScheme::RandomFd;
  throw ConfigError("init must be standard|onb|random_fd, got \"" + s + "\"");
}

ipr::ScoreKind parse_score(const std::string& s) {
  if (s == "random") return ipr::ScoreKind::Random;
  if (s == "magnitude") return ipr::ScoreKind::Magnitude;
  if (s == "snip") return ipr::ScoreKind::Snip;
  if (s == "grasp") return ipr::ScoreKind::Grasp;
  if (s == "synflow") return ipr::ScoreKind::SynFlow;
  throw ConfigError("score must be random|magnitude|snip|grasp|synflow");
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> p;
  std::optional<std::string> mode;
  std::optional<std::string> sharing;
  std::optional<std::string> out;
};

ipr::Dataset build_dataset(const json& dj, ipr::Rng& rng, bool test_split) {
  check_keys(dj, {"kind", "samples", "test_samples", "classes", "h", "w", "noise",
                  "images", "labels", "test_images", "test_labels"},
             "dataset");
  const std::string kind = dj.value("kind", "synthetic");
  if (kind == "synthetic") {
    ipr::SynthSpec spec;
    spec.samples = test_split ? dj.value("test_samples", std::size_t{200})
                              : dj.value("samples", std::size_t{500});
    spec.classes = dj.value("classes", std::size_t{4});
    spec.h = dj.value("h", std::size_t{8});
    spec.w = dj.value("w", std::size_t{8});
    spec.noise = dj.value("noise", 0.1);
    return ipr::synth_dataset(spec, rng);
  }
  if (kind == "idx") {
    const char* ik = test_split ? "test_images" : "images";
    const char* lk = test_split ? "test_labels" : "labels";
    if (!dj.contains(ik) || !dj.contains(lk))
      throw ConfigError(std::string("idx dataset needs \"") + ik + "\" and \"" +
                        lk + "\" paths");
    return ipr::load_idx(dj.at(ik), dj.at(lk));
  }
  throw ConfigError("dataset.kind must be synthetic|idx");
}

json cost_rows_for_model(const ipr::ModelState& m, const std::vector<double>& ps) {
  json rows = json::array();
  std::size_t h = m.spec.input_h, w = m.spec.input_w;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    const ipr::LayerSpec& ls = m.layers[li].spec;
    if (ls.kind == ipr::LayerKind::MaxPool) {
      h /= ls.pool;
      w /= ls.pool;
      continue;
    }
    if (ls.kind != ipr::LayerKind::Conv) continue;
    const ipr::ConvArgs args{ls.stride, ls.padding};
    const std::size_t d1 = ipr::conv_out_extent(h, ls.kernel, args);
    const std::size_t d2 = ipr::conv_out_extent(w, ls.kernel, args);
    for (double p : ps) {
      const double sp =
          ipr::flops_forward(ls.out_channels, ls.in_channels, ls.kernel, d1, d2,
                             p, ipr::ReprMode::SP);
      const double ip =
          ipr::flops_forward(ls.out_channels, ls.in_channels, ls.kernel, d1, d2,
                             p, ipr::ReprMode::IP);
      const ipr::BackwardFlops bsp =
          ipr::flops_backward(ls.out_channels, ls.in_channels, ls.kernel, d1, d2,
                              h, w, p, ipr::ReprMode::SP);
      const ipr::BackwardFlops bip =
          ipr::flops_backward(ls.out_channels, ls.in_channels, ls.kernel, d1, d2,
                              h, w, p, ipr::ReprMode::IP);
      const std::size_t d =
          ls.out_channels * ls.in_channels * ls.kernel * ls.kernel;
      const ipr::MemoryReport mem = ipr::mem_report(d, p, ls.out_channels);
      rows.push_back({{"layer", li},
                      {"p", p},
                      {"forward_sp", sp},
                      {"forward_ip", ip},
                      {"forward_delta", ip - sp},
                      {"backward_sp", bsp.total()},
                      {"backward_ip", bip.total()},
                      {"mask_entropy_bits", mem.mask_entropy_bits},
                      {"entropy_ratio", mem.entropy_ratio},
                      {"csr_bytes", mem.csr_bytes},
                      {"raw_bytes", mem.raw_bytes}});
    }
    h = d1;
    w = d2;
  }
  return rows;
}

int cmd_train(const json& cfg, const Overrides& ov) {
  check_keys(cfg, {"seed", "dataset", "model", "mode", "sharing", "init",
                   "basis_size", "score", "schedule", "epochs", "batch_size",
                   "lr", "momentum", "weight_decay", "wd_on_fb", "wd_on_coeffs",
                   "out"},
             "config");
  const std::uint64_t seed = ov.seed.value_or(cfg.value("seed", std::uint64_t{1}));
  const ipr::Mode mode = parse_mode(ov.mode.value_or(cfg.value("mode", "sp")));
  const ipr::Sharing sharing =
      parse_sharing(ov.sharing.value_or(cfg.value("sharing", "fine")));
  const std::string out_dir = ov.out.value_or(cfg.value("out", "out"));

  const json mj = cfg.value("model", json::object());
  check_keys(mj, {"arch", "classes"}, "model");
  if (mj.value("arch", "minivgg") != "minivgg")
    throw ConfigError("model.arch must be minivgg");

  const json dj = cfg.value("dataset", json::object());
  ipr::Rng data_rng(seed, 1);
  const ipr::Dataset train_data = build_dataset(dj, data_rng, false);
  const ipr::Dataset test_data = build_dataset(dj, data_rng, true);
  if (train_data.size() == 0) throw ConfigError("dataset is empty");
  const std::size_t classes = dj.value("classes", std::size_t{4});

  ipr::BuildOptions bopt;
  bopt.init = parse_init(cfg.value("init", "standard"));
  bopt.dictionary_size = cfg.value("basis_size", std::size_t{0});
  const ipr::ModelSpec spec =
      ipr::minivgg_spec(dj.value("h", std::size_t{8}) ? 1 : 1,
                        dj.value("h", std::size_t{8}),
                        dj.value("w", std::size_t{8}), classes);
  ipr::ModelState model = ipr::build(spec, mode, sharing, ipr::Rng(seed), bopt);

  ipr::TrainConfig tcfg;
  tcfg.epochs = cfg.value("epochs", std::size_t{10});
  tcfg.batch_size = cfg.value("batch_size", std::size_t{32});
  tcfg.sgd.lr = cfg.value("lr", 0.1);
  tcfg.sgd.momentum = cfg.value("momentum", 0.9);
  tcfg.sgd.weight_decay = cfg.value("weight_decay", 0.0);
  tcfg.sgd.wd_on_fb = cfg.value("wd_on_fb", false);
  tcfg.sgd.wd_on_coeffs = cfg.value("wd_on_coeffs", true);

  const json sj = cfg.value("schedule", json::object());
  check_keys(sj, {"kind", "p", "t0", "t1", "interval", "p_init", "p_min",
                  "total_steps", "rewind_step", "synflow_iters", "batches"},
             "schedule");
  const std::string sched = sj.value("kind", "none");
  const double p = ov.p.value_or(sj.value("p", 0.0));
  if (p < 0.0 || p > 1.0) throw ConfigError("schedule.p outside [0,1]");

  const std::size_t steps_per_epoch =
      (train_data.size() + tcfg.batch_size - 1) / tcfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * tcfg.epochs;

  ipr::ScheduleConfig scfg;
  scfg.p = p;
  scfg.t0 = sj.value("t0", total_steps / 10);
  scfg.t1 = sj.value("t1", std::max(scfg.t0 + 1, total_steps / 2));
  scfg.interval = sj.value("interval", std::max<std::size_t>(1, steps_per_epoch / 2));
  scfg.p_init = sj.value("p_init", 0.5);
  scfg.p_min = sj.value("p_min", 0.005);
  scfg.total_steps = sj.value("total_steps", total_steps);
  scfg.synflow_iters = sj.value("synflow_iters", std::size_t{100});

  // score batches for SNIP/GraSP
  ipr::BatchList batches;
  {
    const std::size_t nb = sj.value("batches", std::size_t{2});
    std::vector<std::size_t> order =
        ipr::shuffled_indices(model.rng, train_data.size());
    for (std::size_t b = 0; b < nb; ++b) {
      std::vector<std::size_t> idx;
      for (std::size_t i = b * tcfg.batch_size;
           i < std::min((b + 1) * tcfg.batch_size, order.size()); ++i)
        idx.push_back(order[i]);
      if (!idx.empty()) batches.push_back(std::move(idx));
    }
  }

  std::vector<ipr::EpochMetrics> history;
  if (sched == "none") {
    history = ipr::train(model, train_data, test_data, tcfg);
  } else if (sched == "pai") {
    ipr::pai_prune(model, parse_score(cfg.value("score", "random")), p,
                   train_data, batches, scfg.synflow_iters);
    history = ipr::train(model, train_data, test_data, tcfg);
  } else if (sched == "gmp") {
    history = ipr::train(model, train_data, test_data, tcfg, ipr::gmp_hook(scfg));
  } else if (sched == "set" || sched == "rigl") {
    ipr::ScoreSet s = ipr::score_random(model.rng, model);
    ipr::mask_layerwise(model, s, ipr::erk_sparsities(model, p));
    const ipr::DstMode dm = sched == "set" ? ipr::DstMode::SET : ipr::DstMode::RigL;
    history = ipr::train(model, train_data, test_data, tcfg,
                         ipr::dst_hook(dm, scfg));
  } else if (sched == "lt") {
    const std::size_t t0 = sj.value("rewind_step", steps_per_epoch);
    ipr::LtResult lt = ipr::lt_run(std::move(model), train_data, test_data, tcfg,
                                   p, t0);
    model = std::move(lt.model);
    history = std::move(lt.history);
  } else if (sched == "ft") {
    ipr::train(model, train_data, test_data, tcfg);  // dense pre-training
    ipr::ft_prune(model, p);
    history = ipr::train(model, train_data, test_data, tcfg);
  } else {
    throw ConfigError("schedule.kind must be none|pai|gmp|set|rigl|lt|ft");
  }

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  ipr::write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), history);
  ipr::save_checkpoint((fs::path(out_dir) / "checkpoint").string(), model);
  {
    json report;
    report["rows"] = cost_rows_for_model(model, {0.0, 0.5, 0.9, p});
    const ipr::PruningRates rates = ipr::pruning_rate(model);
    report["pruning_rate_sp"] = rates.sp;
    report["pruning_rate_ip"] = rates.ip;
    report["forward_flops"] = ipr::model_forward_flops(model);
    std::ofstream out(fs::path(out_dir) / "cost-report.json");
    out << report.dump(2) << "\n";
  }

  const ipr::EvalResult ev = ipr::evaluate(model, test_data);
  const ipr::PruningRates rates = ipr::pruning_rate(model);
  std::cout << "test_accuracy=" << ev.accuracy << " pruning_rate="
            << (model.mode == ipr::Mode::IP ? rates.ip : rates.sp) << "\n";
  return 0;
}

int cmd_sdl_verify(const json& cfg, const Overrides& ov) {
  check_keys(cfg, {"seed", "m", "n", "s", "p", "trials", "out"}, "config");
  const std::uint64_t seed = ov.seed.value_or(cfg.value("seed", std::uint64_t{1}));
  const std::size_t m = cfg.value("m", std::size_t{9});
  const std::size_t n = cfg.value("n", std::size_t{100});
  std::size_t s;
  if (cfg.contains("s")) {
    s = cfg.at("s");
  } else {
    const double p = ov.p.value_or(cfg.value("p", 0.5));
    s = static_cast<std::size_t>(
        std::llround((1.0 - p) * static_cast<double>(m * n)));
  }
  if (m < 2 || s == 0 || s >= m * n)
    throw ConfigError("sdl-verify requires m > 1 and 0 < s < m*n");
  const std::size_t trials = cfg.value("trials", std::size_t{50});

  ipr::Rng rng(seed);
  const ipr::MonteCarloStats stats = ipr::montecarlo_verify(m, n, s, trials, rng);
  std::ostringstream csv;
  csv << "m,n,s,delta,trials,frac_strict,mean_gap\n";
  csv.precision(12);
  csv << m << ',' << n << ',' << s << ',' << stats.delta << ',' << trials << ','
      << stats.frac_strict_free << ',' << stats.mean_gap_free << "\n";
  std::cout << csv.str();
  if (ov.out || cfg.contains("out")) {
    std::ofstream out(ov.out.value_or(cfg.value("out", "")));
    out << csv.str();
  }
  return 0;
}

int cmd_cost_report(const json& cfg, const Overrides& ov) {
  check_keys(cfg, {"seed", "model", "mode", "sharing", "p_grid", "out", "classes",
                   "h", "w"},
             "config");
  const std::uint64_t seed = ov.seed.value_or(cfg.value("seed", std::uint64_t{1}));
  const ipr::Mode mode = parse_mode(ov.mode.value_or(cfg.value("mode", "ip")));
  const ipr::Sharing sharing =
      parse_sharing(ov.sharing.value_or(cfg.value("sharing", "fine")));
  std::vector<double> ps = cfg.value("p_grid",
                                     std::vector<double>{0.0, 0.5, 0.9, 0.99});
  if (ov.p) ps = {*ov.p};
  const ipr::ModelSpec spec = ipr::minivgg_spec(
      1, cfg.value("h", std::size_t{8}), cfg.value("w", std::size_t{8}),
      cfg.value("classes", std::size_t{4}));
  const ipr::ModelState model = ipr::build(spec, mode, sharing, ipr::Rng(seed));
  json report;
  report["rows"] = cost_rows_for_model(model, ps);
  const std::string text = report.dump(2) + "\n";
  std::cout << text;
  if (ov.out || cfg.contains("out")) {
    std::ofstream out(ov.out.value_or(cfg.value("out", "")));
    out << text;
  }
  return 0;
}

int cmd_bench(const json& cfg, const Overrides& ov) {
  check_keys(cfg, {"seed", "rows", "cols", "sparsities", "reps", "out"}, "config");
  const std::uint64_t seed = ov.seed.value_or(cfg.value("seed", std::uint64_t{1}));
  const std::size_t rows = cfg.value("rows", std::size_t{1024});
  const std::size_t cols = cfg.value("cols", std::size_t{1024});
  std::vector<double> ps = cfg.value(
      "sparsities", std::vector<double>{0.0, 0.5, 0.75, 0.9, 0.99});
  if (ov.p) ps = {*ov.p};
  const std::size_t reps = cfg.value("reps", std::size_t{25});

  ipr::Rng rng(seed);
  std::ostringstream csv;
  csv << ipr::bench_csv_header() << "\n";
  csv.precision(9);
  for (double p : ps) {
    const ipr::BenchRow row = ipr::bench_speedup(rows, cols, p, rng, reps);
    if (row.max_abs_err > 1e-10)
      throw std::runtime_error("bench: CSR result diverged from dense");
    csv << row.rows << ',' << row.cols << ',' << row.p << ',' << row.t_dense_mean
        << ',' << row.t_dense_median << ',' << row.t_csr_mean << ','
        << row.t_csr_median << ',' << row.speedup << "\n";
  }
  std::cout << csv.str();
  if (ov.out || cfg.contains("out")) {
    std::ofstream out(ov.out.value_or(cfg.value("out", "")));
    out << csv.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse CNN training and analysis toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  std::uint64_t seed_flag = 0;
  double p_flag = 0.0;
  std::string mode_flag, sharing_flag, out_flag;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed_flag)->each([&](const std::string&) {
      ov.seed = seed_flag;
    });
    sub->add_option("--p", p_flag)->each([&](const std::string&) {
      ov.p = p_flag;
    });
    sub->add_option("--mode", mode_flag)->each([&](const std::string& v) {
      ov.mode = v;
    });
    sub->add_option("--sharing", sharing_flag)->each([&](const std::string& v) {
      ov.sharing = v;
    });
    sub->add_option("--out", out_flag)->each([&](const std::string& v) {
      ov.out = v;
    });
  };

  CLI::App* train = app.add_subcommand("train", "run a training schedule");
  CLI::App* sdl = app.add_subcommand("sdl-verify", "dictionary-learning bound check");
  CLI::App* cost = app.add_subcommand("cost-report", "closed-form cost tables");
  CLI::App* bench = app.add_subcommand("bench", "sparse matvec benchmark");
  for (CLI::App* sub : {train, sdl, cost, bench}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    json cfg = config_path.empty() ? json::object() : load_config(config_path);
    if (train->parsed()) return cmd_train(cfg, ov);
    if (sdl->parsed()) return cmd_sdl_verify(cfg, ov);
    if (cost->parsed()) return cmd_cost_report(cfg, ov);
    if (bench->parsed()) return cmd_bench(cfg, ov);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
