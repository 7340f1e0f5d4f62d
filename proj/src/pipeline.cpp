#include "mtgp/pipeline.hpp"

namespace mtgp {

FitResult fit_model(const ModelConfig& config, const PanelDataset& data, int jobs) {
  FitResult out{build_model(config, data), {}};
  out.draws = run_chains(out.spec, data, config.chains, config.warmup, config.iters, config.seed, jobs);
  return out;
}

}  // namespace mtgp
