// Command-line entry point: data generation, training, manipulation,
// evaluation, gradient checks, ablations and memory decoding.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "mimnet/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mimnet;

namespace {

struct ConfigFlags {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override one key, e.g. --set steps=500");
  }

  TrainingConfig resolve() const {
    TrainingConfig c = file.empty() ? TrainingConfig{} : TrainingConfig::load(file);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw InputError("--set expects key=value, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    c.validate();
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

void emit(bool as_json, const json& summary, const std::string& human) {
  if (as_json) {
    std::cout << summary.dump(2) << '\n';
  } else {
    std::cout << human;
  }
}

std::pair<Model, Checkpoint> load_model(const fs::path& path) {
  Checkpoint ckpt = Checkpoint::load(path);
  Model model = Model::create(ckpt.config(), ckpt.vocabulary().size());
  load_parameters(ckpt, model);
  return {std::move(model), std::move(ckpt)};
}

Stage parse_stage(const std::string& s) {
  if (s == "icm") return Stage::Icm;
  if (s == "fir") return Stage::Fir;
  throw InputError("unknown stage '" + s + "' (expected icm or fir)");
}

SimScorer obtain_scorer(const std::string& path, const std::vector<ToySample>& train, const Vocabulary& vocab) {
  if (!path.empty() && fs::exists(path)) return SimScorer::load(path);
  SimScorer scorer(vocab.size(), {});
  scorer.train(train, vocab);
  if (!path.empty()) scorer.save(path);
  return scorer;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

json report_summary(const EvalReport& r) {
  return {{"samples", r.rows.size()},
          {"mean_sim", r.mean_sim()},
          {"mean_diff", r.mean_diff()},
          {"mean_mp", r.mean_mp()},
          {"background_preserved", r.background_preserved_fraction()},
          {"config_hash", r.config_hash},
          {"checkpoint", r.checkpoint_id}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mimnet: memory-based text-guided image manipulation on a toy dataset"};
  app.require_subcommand(1);
  app.fallthrough();  // lets --json follow the subcommand
  bool as_json = false;
  app.add_flag("--json", as_json, "print a machine-readable JSON summary");

  // gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "render the toy dataset to PPM/PGM files");
  std::string data_out;
  std::size_t n_train = 2048, n_test = 256;
  std::uint64_t data_seed = 11;
  gen_cmd->add_option("--out", data_out, "output directory")->required();
  gen_cmd->add_option("--train", n_train, "training samples");
  gen_cmd->add_option("--test", n_test, "test samples");
  gen_cmd->add_option("--seed", data_seed, "dataset seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  ConfigFlags train_cfg;
  train_cfg.attach(train_cmd);
  std::string train_data, train_ckpt, train_log, resume;
  train_cmd->add_option("--data", train_data, "dataset directory from gen-data")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--checkpoint", train_ckpt, "checkpoint output path")->required();
  train_cmd->add_option("--log", train_log, "loss log CSV");
  train_cmd->add_option("--resume", resume, "continue from this checkpoint")->check(CLI::ExistingFile);

  // manipulate
  auto* man_cmd = app.add_subcommand("manipulate", "manipulate one image towards a caption");
  std::string man_ckpt, man_image, man_caption, man_out, man_alpha, man_stage = "fir";
  man_cmd->add_option("--checkpoint", man_ckpt)->required()->check(CLI::ExistingFile);
  man_cmd->add_option("--image", man_image, "input PPM")->required()->check(CLI::ExistingFile);
  man_cmd->add_option("--caption", man_caption)->required();
  man_cmd->add_option("--out", man_out, "output PPM")->required();
  man_cmd->add_option("--alpha", man_alpha, "write the localization map as PGM");
  man_cmd->add_option("--stage", man_stage, "icm or fir");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Sim/Diff/MP over the test split, or for one image pair");
  std::string eval_ckpt, eval_data, eval_scorer, eval_csv, eval_report, before, after, eval_caption;
  std::uint64_t eval_seed = 7;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_data)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--scorer", eval_scorer, "scorer file; trained on the train split and saved if absent");
  eval_cmd->add_option("--csv", eval_csv, "per-sample CSV report");
  eval_cmd->add_option("--report", eval_report, "full JSON report");
  eval_cmd->add_option("--seed", eval_seed, "target caption seed");
  eval_cmd->add_option("--before", before, "score one pair instead: original PPM")->check(CLI::ExistingFile);
  eval_cmd->add_option("--after", after, "manipulated PPM (32 or 64 pixels)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--caption", eval_caption, "caption for the pair");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::size_t grad_seeds = 5;
  grad_cmd->add_option("--seeds", grad_seeds, "random seeds per check");

  // ablate
  auto* abl_cmd = app.add_subcommand("ablate", "train the full model and each single-component ablation");
  ConfigFlags abl_cfg;
  abl_cfg.attach(abl_cmd);
  std::string abl_data, abl_scorer, abl_report;
  abl_cmd->add_option("--data", abl_data)->required()->check(CLI::ExistingDirectory);
  abl_cmd->add_option("--scorer", abl_scorer);
  abl_cmd->add_option("--report", abl_report, "JSON report path");

  // dump-memory
  auto* mem_cmd = app.add_subcommand("dump-memory", "decode every memory row on a fixed image");
  std::string mem_ckpt, mem_data, mem_out;
  std::size_t mem_index = 0;
  mem_cmd->add_option("--checkpoint", mem_ckpt)->required()->check(CLI::ExistingFile);
  mem_cmd->add_option("--data", mem_data)->required()->check(CLI::ExistingDirectory);
  mem_cmd->add_option("--out", mem_out, "output directory")->required();
  mem_cmd->add_option("--sample", mem_index, "index of the test sample to decode on");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_cmd) {
      const ToyDataset data = make_split(n_train, n_test, data_seed);
      save_split(data_out, "train", data.train);
      save_split(data_out, "test", data.test);
      data.vocab.save(fs::path(data_out) / "vocab.txt");
      json held = json::array();
      for (auto c : data.held_out) held.push_back(c);
      emit(as_json, {{"train", data.train.size()}, {"test", data.test.size()}, {"held_out_combinations", held}},
           "wrote " + std::to_string(data.train.size()) + " train and " + std::to_string(data.test.size()) +
               " test samples to " + data_out + "\n");
    } else if (*train_cmd) {
      TrainingConfig config = train_cfg.resolve();
      const auto train = load_split(train_data, "train");
      Trainer trainer(config, train, toy_vocabulary());
      if (!resume.empty()) trainer.restore(Checkpoint::load(resume));
      std::optional<LossLog> log;
      if (!train_log.empty()) log.emplace(train_log, report_columns());
      const std::size_t total = config.total_steps(train.size());
      const auto start = std::chrono::steady_clock::now();
      StepReport last_adv;
      trainer.run(total, log ? &*log : nullptr, train_ckpt, [&](const StepReport& r) {
        if (r.phase == "adversarial") last_adv = r;
        if (!as_json && (r.step + 1) % 100 == 0) {
          std::cerr << "step " << r.step + 1 << "/" << total << " " << r.phase << " loss_g=" << fixed(r.value("loss_g"))
                    << '\n';
        }
      });
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      json s = {{"steps", trainer.steps_done()}, {"seconds", secs}, {"checkpoint", train_ckpt},
                {"config_hash", config.hash()}};
      if (!last_adv.phase.empty()) {
        s["gap_icm"] = last_adv.value("gap_icm");
        s["gap_fir"] = last_adv.value("gap_fir");
      }
      emit(as_json, s, "trained " + std::to_string(trainer.steps_done()) + " steps in " + fixed(secs, 1) + "s -> " +
                           train_ckpt + "\n");
    } else if (*man_cmd) {
      const auto [model, ckpt] = load_model(man_ckpt);
      const Stage stage = parse_stage(man_stage);
      const Tensor<float> image = read_ppm(man_image);
      Tensor<float> alpha;
      const auto out = manipulate_image(model, image, tokenize(man_caption, ckpt.vocabulary()), stage, &alpha);
      write_ppm(man_out, out);
      if (!man_alpha.empty()) write_pgm(man_alpha, alpha);
      emit(as_json, {{"output", man_out}, {"stage", man_stage}, {"size", out.shape()[1]}},
           "wrote " + man_out + "\n");
    } else if (*eval_cmd) {
      const auto train = load_split(eval_data, "train");
      const Vocabulary vocab = toy_vocabulary();
      const SimScorer scorer = obtain_scorer(eval_scorer, train, vocab);
      if (!before.empty() || !after.empty()) {
        if (before.empty() || after.empty() || eval_caption.empty()) {
          throw InputError("pair evaluation needs --before, --after and --caption");
        }
        const Tensor<float> a = read_ppm(before);
        Tensor<float> b = read_ppm(after);
        if (b.shape()[1] == 2 * a.shape()[1]) b = ops::avg_pool2x(b);
        const double sim = scorer.similarity(b, tokenize(eval_caption, vocab));
        const double diff = metric_diff(a, b);
        const double mp = metric_mp(sim, diff);
        emit(as_json, {{"sim", sim}, {"diff", diff}, {"mp", mp}},
             "Sim " + fixed(sim) + "  Diff " + fixed(diff) + "  MP " + fixed(mp) + "\n");
      } else {
        if (eval_ckpt.empty()) throw InputError("eval needs --checkpoint (or --before/--after for one pair)");
        const auto [model, ckpt] = load_model(eval_ckpt);
        EvalReport report = evaluate(model, scorer, load_split(eval_data, "test"), vocab, eval_seed);
        report.config_hash = ckpt.config().hash();
        report.checkpoint_id = fs::path(eval_ckpt).filename().string() + "@" + std::to_string(ckpt.step());
        if (!eval_csv.empty()) write_text(eval_csv, report.to_csv());
        if (!eval_report.empty()) write_text(eval_report, report.to_json());
        emit(as_json, report_summary(report),
             "samples " + std::to_string(report.rows.size()) + "  Sim " + fixed(report.mean_sim()) + "  Diff " +
                 fixed(report.mean_diff()) + "  MP " + fixed(report.mean_mp()) + "  background preserved " +
                 fixed(report.background_preserved_fraction(), 3) +
                 "\n(Inception Score not computed: it needs an external pretrained classifier)\n");
      }
    } else if (*grad_cmd) {
      const auto rows = run_gradcheck_suite(grad_seeds);
      bool ok = true;
      json arr = json::array();
      std::string table;
      for (const auto& r : rows) {
        ok = ok && r.passed();
        arr.push_back({{"name", r.name}, {"composite", r.composite}, {"max_error", r.max_error},
                       {"tolerance", r.tolerance}, {"passed", r.passed()}});
        char line[160];
        std::snprintf(line, sizeof line, "%-36s %-9s %.3e <= %.0e  %s\n", r.name.c_str(),
                      r.composite ? "composite" : "primitive", r.max_error, r.tolerance, r.passed() ? "PASS" : "FAIL");
        table += line;
      }
      emit(as_json, {{"passed", ok}, {"checks", arr}}, table + (ok ? "all checks passed\n" : "some checks FAILED\n"));
      return ok ? 0 : 1;
    } else if (*abl_cmd) {
      const TrainingConfig base = abl_cfg.resolve();
      ToyDataset data;
      data.train = load_split(abl_data, "train");
      data.test = load_split(abl_data, "test");
      data.vocab = toy_vocabulary();
      const SimScorer scorer = obtain_scorer(abl_scorer, data.train, data.vocab);
      const auto results = run_ablations(base, data, scorer, [&](const std::string& line) {
        if (!as_json) std::cerr << line << '\n';
      });
      json arr = json::array();
      std::string table = "variant          mean_MP  mean_Sim mean_Diff bg_kept  gap_icm  gap_fir  changed\n";
      for (const auto& r : results) {
        const auto changed = config_diff(base, r.config);
        arr.push_back({{"name", r.name}, {"changed", changed}, {"summary", report_summary(r.report)},
                       {"gap_icm", r.final_gap_icm}, {"gap_fir", r.final_gap_fir}, {"train_seconds", r.train_seconds}});
        char line[200];
        std::snprintf(line, sizeof line, "%-16s %7.4f %8.4f %9.4f %7.3f %8.4f %8.4f  %s\n", r.name.c_str(),
                      r.report.mean_mp(), r.report.mean_sim(), r.report.mean_diff(),
                      r.report.background_preserved_fraction(), r.final_gap_icm, r.final_gap_fir,
                      changed.empty() ? "-" : changed.front().c_str());
        table += line;
      }
      if (!abl_report.empty()) write_text(abl_report, json{{"variants", arr}}.dump(2));
      emit(as_json, {{"variants", arr}}, table);
    } else if (*mem_cmd) {
      const auto [model, ckpt] = load_model(mem_ckpt);
      const auto test = load_split(mem_data, "test");
      if (mem_index >= test.size()) throw InputError("--sample " + std::to_string(mem_index) + " out of range");
      const auto images = decode_memories(model, test[mem_index]);
      fs::create_directories(mem_out);
      json files = json::array();
      for (std::size_t j = 0; j < images.size(); ++j) {
        const auto path = (fs::path(mem_out) / ("memory_" + std::to_string(j) + ".ppm")).string();
        write_ppm(path, images[j]);
        files.push_back(path);
      }
      emit(as_json, {{"memories", files}},
           "decoded " + std::to_string(images.size()) + " memories into " + mem_out + "\n");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
