#include "mtgp/config.hpp"
#include "mtgp/effects.hpp"
#include "mtgp/panel.hpp"
#include "mtgp/pipeline.hpp"
#include "mtgp/predict.hpp"
#include "mtgp/sampler.hpp"
#include "mtgp/scm.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

namespace py = pybind11;
using namespace mtgp;

namespace {

PanelDataset panel_from_text(const std::string& text, const std::string& treated,
                             std::optional<long> last_pre_time) {
  PanelSchema schema;
  schema.treated_unit = treated;
  schema.last_pre_time = last_pre_time;
  return parse_panel(text, schema);
}

py::dict summary_dict(const EffectSummary& s) {
  py::dict d;
  d["mean"] = s.mean;
  d["median"] = s.median;
  d["lo50"] = s.lo50;
  d["hi50"] = s.hi50;
  d["lo95"] = s.lo95;
  d["hi95"] = s.hi95;
  d["prob_negative"] = s.prob_negative;
  return d;
}

// Python sees draws as a list of (iters, dim) arrays, one per chain.
struct Fit {
  ModelConfig config;
  FitResult result;
};

}  // namespace

PYBIND11_MODULE(_mtgp, m) {
  m.doc() = "Multitask Gaussian process panel estimator";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<PanelDataset>(m, "Panel")
      .def_property_readonly("n_units", &PanelDataset::n_units)
      .def_property_readonly("n_times", &PanelDataset::n_times)
      .def_property_readonly("n_outcomes", &PanelDataset::n_outcomes)
      .def_property_readonly("t0", &PanelDataset::t0)
      .def_property_readonly("treated_unit", &PanelDataset::treated_unit)
      .def_property_readonly("unit_ids", &PanelDataset::unit_ids)
      .def_property_readonly("time_ids", &PanelDataset::time_ids)
      .def_property_readonly("outcome_names", &PanelDataset::outcome_names)
      .def("to_csv", &format_panel);

  m.def("parse_panel", &panel_from_text, py::arg("text"), py::arg("treated"),
        py::arg("last_pre_time") = py::none());
  m.def("fingerprint", &fingerprint, py::arg("text"));
  m.def("canonical_config", [](const std::string& json) { return config_to_json(parse_config(json)); },
        py::arg("json") = "{}");

  py::class_<Fit>(m, "Fit")
      .def_property_readonly("names", [](const Fit& f) { return f.result.draws.names; })
      .def_property_readonly("chains", [](const Fit& f) { return f.result.draws.chains; })
      .def_property_readonly("divergences", [](const Fit& f) { return f.result.draws.n_divergent(); })
      .def_property_readonly("unreliable", [](const Fit& f) { return f.result.draws.unreliable; })
      .def("column", [](const Fit& f, const std::string& name) { return f.result.draws.column(name); });

  m.def(
      "fit",
      [](const PanelDataset& data, const std::string& config_json, int jobs) {
        Fit f{parse_config(config_json), {}};
        py::gil_scoped_release release;
        f.result = fit_model(f.config, data, jobs);
        return f;
      },
      py::arg("panel"), py::arg("config") = "{}", py::arg("jobs") = 1);

  m.def(
      "counterfactuals",
      [](const Fit& f, const PanelDataset& data, std::uint64_t seed) {
        const CounterfactualDraws cf = impute_counterfactuals(f.result.draws, f.result.spec, data, seed, 1);
        return cf.rates(data);
      },
      py::arg("fit"), py::arg("panel"), py::arg("seed") = 1,
      "Counterfactual draws (draws x treated post cells) on the rate scale.");

  m.def(
      "effect",
      [](const Fit& f, const PanelDataset& data, std::uint64_t seed, int outcome) {
        const CounterfactualDraws cf = impute_counterfactuals(f.result.draws, f.result.spec, data, seed, 1);
        const EffectPosterior e = effect_posterior(cf, data, outcome);
        py::dict d;
        d["time_ids"] = e.time_ids;
        d["tau"] = e.tau;
        d["average"] = summary_dict(e.average);
        py::list per;
        for (const auto& s : e.per_period) per.append(summary_dict(s));
        d["per_period"] = per;
        return d;
      },
      py::arg("fit"), py::arg("panel"), py::arg("seed") = 1, py::arg("outcome") = 0);

  m.def(
      "scm",
      [](const PanelDataset& data, int outcome) {
        const SCMFit fit = fit_scm(data, outcome);
        py::dict weights;
        for (std::size_t k = 0; k < fit.donors.size(); ++k) {
          weights[py::str(data.unit_ids()[static_cast<std::size_t>(fit.donors[k])])] =
              fit.donor_weights(static_cast<Eigen::Index>(k));
        }
        py::dict d;
        d["weights"] = weights;
        d["intercept"] = fit.intercept;
        d["pre_rmse"] = fit.pre_rmse;
        d["gaps"] = scm_gaps(fit, data);
        return d;
      },
      py::arg("panel"), py::arg("outcome") = 0);

  m.def("rhat", [](const Eigen::MatrixXd& draws) { return rhat(draws).value; }, py::arg("draws"),
        "Rank-normalized R-hat of an (iters, chains) array.");
  m.def("bulk_ess", [](const Eigen::MatrixXd& draws) { return bulk_ess(draws).value; }, py::arg("draws"));
  m.def("cost_per_avoided", py::overload_cast<double, double, double>(&cost_per_avoided), py::arg("tau"),
        py::arg("budget"), py::arg("population"));
}
