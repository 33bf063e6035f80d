#include "lokt/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

std::string stage_list() {
  std::string s;
  for (auto st : lokt::pipeline::all_stages()) {
    s += (s.empty() ? "" : ", ") + lokt::pipeline::to_string(st);
  }
  return s + ", all";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-only model inversion experiments.\n"
               "Output root can be relocated with $" + std::string(lokt::pipeline::kOutputRootEnv) + "."};
  std::string stage;
  std::string config;
  bool overwrite = false;
  std::optional<uint64_t> seed;
  bool quiet = false;
  bool resume = false;
  app.add_option("stage", stage, "one of: " + stage_list())->required();
  app.add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_flag("--overwrite", overwrite, "replace or mix artifacts produced with a different config digest");
  app.add_option("--seed", seed, "override the global seed");
  app.add_flag("-q,--quiet", quiet, "no progress output");
  app.add_flag("--resume", resume, "skip stages already completed with this config");
  CLI11_PARSE(app, argc, argv);

  try {
    torch::set_num_threads(1);
    auto cfg = lokt::pipeline::load_config(config);
    lokt::pipeline::RunOptions opts;
    opts.overwrite = overwrite;
    opts.seed = seed;
    opts.verbose = !quiet;
    opts.resume = resume;
    lokt::pipeline::Pipeline p(std::move(cfg), opts);
    if (stage == "all") {
      p.run_all();
    } else {
      p.run(lokt::pipeline::stage_from_string(stage));
    }
    return 0;
  } catch (const lokt::PrerequisiteError& e) {
    std::cerr << "lokt: prerequisite missing: " << e.what() << "\n";
    return 3;
  } catch (const lokt::ConfigError& e) {
    std::cerr << "lokt: config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "lokt: " << e.what() << "\n";
    return 1;
  }
}
