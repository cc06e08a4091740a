// lethe: data poisoning, influence-weighted unlearning, and evaluation over
// artifact directories. Subcommands map one-to-one onto pipeline stages; see
// docs/interface.md for file formats and exit codes.
//
// Exit codes: 0 success, 1 validation or comparison found problems,
// 2 bad usage or config, 3 missing or malformed artifacts, 4 numeric failure.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lethe/pipeline.hpp"

namespace {

using namespace lethe;

RunConfig load_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_config(path);
}

void print_report(const EvalReport& r) {
  std::printf(
      "%-12s seed=%llu clean_ppl=%.4f seen_asr=%.4f ood_asr=%.4f "
      "exact=%.4f fuzzy=%.4f wall_s=%.1f\n",
      r.method.c_str(), static_cast<unsigned long long>(r.seed), r.clean_ppl,
      r.seen_asr, r.ood_asr, r.exact_match, r.fuzzy_match, r.wall_clock_s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "influence-weighted unlearning of poisoned behaviour in small "
      "transformers"};
  app.require_subcommand(1);

  std::string config_path, data_dir, base_dir, run_dir, out_dir, target_dir;
  std::string method_name = "rapidun", provenance = "rapidun";
  std::uint64_t run_seed = 0;
  bool self_only = false, clean_reference = false;
  std::vector<std::string> report_dirs;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config; defaults used when absent")
        ->check(CLI::ExistingFile);
  };

  auto* gen = app.add_subcommand("gen-data",
                                 "synthesize splits, poison, pack, manifest");
  add_config(gen);
  gen->add_option("--data-dir", data_dir, "output directory")->required();

  auto* val = app.add_subcommand("validate", "re-run consistency checks");
  add_config(val);
  val->add_option("--data-dir", data_dir)->required();

  auto* lexcmd = app.add_subcommand("build-lexicon",
                                    "attack lexicon from the poisoned split");
  add_config(lexcmd);
  lexcmd->add_option("--data-dir", data_dir)->required();

  auto* pre = app.add_subcommand("pretrain", "train a backbone from scratch");
  add_config(pre);
  pre->add_option("--data-dir", data_dir)->required();
  pre->add_option("--model-dir", out_dir, "output directory")->required();
  pre->add_flag("--clean-reference", clean_reference,
                "train on the pre-attack corpus (retraining reference)");

  auto add_run_opts = [&](CLI::App* cmd) {
    add_config(cmd);
    cmd->add_option("--data-dir", data_dir)->required();
    cmd->add_option("--base-dir", base_dir, "poisoned base model directory")
        ->required();
    cmd->add_option("--run-dir", run_dir)->required();
    cmd->add_option("--run-seed", run_seed, "varies repeats; default 0");
  };

  auto* infl = app.add_subcommand("influence",
                                  "pairwise influence at the adapter init");
  add_run_opts(infl);

  auto* wts = app.add_subcommand("weights", "map scores to bounded weights");
  add_run_opts(wts);
  wts->add_option("--provenance", provenance, "rapidun | uniform | loreun");
  wts->add_flag("--self-only", self_only,
                "drop the cross-direction fusion terms");

  auto* unl = app.add_subcommand("unlearn", "train adapters on the pack");
  add_run_opts(unl);
  unl->add_option("--method", method_name,
                  "rapidun | ga | retain-only | loreun | fisher");

  auto* ev = app.add_subcommand("evaluate", "PPL, ASR, and match rates");
  add_config(ev);
  ev->add_option("--data-dir", data_dir)->required();
  ev->add_option("--base-dir", base_dir)->required();
  ev->add_option("--target-dir", target_dir,
                 "run directory or model directory; defaults to base-dir");

  auto* cmp = app.add_subcommand("compare", "rank evaluated runs");
  cmp->add_option("--report-dirs", report_dirs,
                  "directories holding eval_report.json")
      ->required()
      ->expected(-2);
  cmp->add_option("--out-dir", out_dir)->required();

  auto* dump = app.add_subcommand("config-dump", "print the effective config");
  add_config(dump);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      RunConfig cfg = load_or_default(config_path);
      ValidationReport rep = run_gen_data(cfg, data_dir);
      std::printf("generated %ld examples, %zu violations\n", rep.n_examples,
                  rep.violations.size());
      return rep.ok() ? 0 : 1;
    }
    if (*val) {
      RunConfig cfg = load_or_default(config_path);
      DatasetSplits splits = read_splits(data_dir);
      UnlearnPack pack = read_pack(data_dir + "/pack");
      ValidationReport rep =
          validate_splits(splits, &pack, cfg.corpus.families);
      std::printf("%s", rep.to_json().c_str());
      std::printf("\n%zu violations\n", rep.violations.size());
      return rep.ok() ? 0 : 1;
    }
    if (*lexcmd) {
      run_build_lexicon(load_or_default(config_path), data_dir);
      std::printf("lexicon written to %s/lexicon.json\n", data_dir.c_str());
      return 0;
    }
    if (*pre) {
      run_pretrain(load_or_default(config_path), data_dir, out_dir,
                   clean_reference);
      std::printf("backbone written to %s\n", out_dir.c_str());
      return 0;
    }
    if (*infl || *wts || *unl) {
      RunContext ctx{load_or_default(config_path), data_dir, base_dir, run_dir,
                     run_seed};
      if (*infl) {
        run_influence(ctx);
        std::printf("influence written to %s/influence.jsonl\n",
                    run_dir.c_str());
      } else if (*wts) {
        run_weights(ctx, provenance, self_only);
        std::printf("weights written to %s/weights.jsonl\n", run_dir.c_str());
      } else {
        run_unlearn(ctx, method_from_string(method_name));
        std::printf("checkpoint written to %s/checkpoint\n", run_dir.c_str());
      }
      return 0;
    }
    if (*ev) {
      if (target_dir.empty()) target_dir = base_dir;
      EvalReport r = run_evaluate(load_or_default(config_path), data_dir,
                                  base_dir, target_dir);
      print_report(r);
      return 0;
    }
    if (*cmp) {
      CompareTable table = run_compare(report_dirs, out_dir);
      std::printf("%s", table.to_text().c_str());
      return 0;
    }
    if (*dump) {
      RunConfig cfg = load_or_default(config_path);
      cfg.check();
      std::printf("%s\n", cfg.to_json().c_str());
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 2;
}
