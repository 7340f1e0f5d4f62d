#ifndef MTGP_PIPELINE_HPP
#define MTGP_PIPELINE_HPP

#include "mtgp/model.hpp"
#include "mtgp/panel.hpp"
#include "mtgp/sampler.hpp"

namespace mtgp {

struct FitResult {
  ModelSpec spec;
  PosteriorDraws draws;
};

/// build_model + run_chains with the sampler settings taken from the config.
FitResult fit_model(const ModelConfig& config, const PanelDataset& data, int jobs = 0);

}  // namespace mtgp

#endif  // MTGP_PIPELINE_HPP
