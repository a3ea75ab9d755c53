#include "nsfs/config.hpp"
#include "nsfs/experiment.hpp"
#include "nsfs/metrics.hpp"
#include "nsfs/models.hpp"
#include "nsfs/samples.hpp"
#include "nsfs/sde.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace nsfs;

namespace {

py::dict report_dict(const PredictiveReport& r) {
  py::dict d;
  auto opt = [](const std::optional<double>& v) -> py::object {
    return v ? py::object(py::float_(*v)) : py::object(py::none());
  };
  d["task"] = r.task;
  d["accuracy"] = opt(r.accuracy);
  d["ece"] = opt(r.ece);
  d["avg_log_lik"] = opt(r.avg_log_lik);
  d["sum_log_lik"] = opt(r.sum_log_lik);
  d["mse"] = opt(r.mse);
  d["n_test"] = r.n_test;
  d["n_posterior_samples"] = r.n_posterior_samples;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Neural Schroedinger-Foellmer sampling: configs, runs and oracles";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def_static("parse", &ExperimentConfig::parse, py::arg("text"))
      .def_static("load", &ExperimentConfig::load, py::arg("path"))
      .def("set", &ExperimentConfig::set, py::arg("key"), py::arg("value"))
      .def("get", &ExperimentConfig::get_string, py::arg("key"))
      .def("echo", &ExperimentConfig::echo)
      .def_property_readonly("model_name", &ExperimentConfig::model_name)
      .def_property_readonly("method", &ExperimentConfig::method)
      .def_static("keys_for_model", &ExperimentConfig::keys_for_model, py::arg("model"))
      .def("__eq__", &ExperimentConfig::operator==)
      .def("__repr__", [](const ExperimentConfig& c) { return "<Config model=" + c.model_name() + ">"; });

  m.def(
      "run_method",
      [](const ExperimentConfig& c, const fs::path& out) {
        py::gil_scoped_release release;
        auto r = run_method(c, out);
        py::gil_scoped_acquire acquire;
        return report_dict(r);
      },
      py::arg("config"), py::arg("out_dir"), "Runs run.method end to end and returns the report.");

  m.def(
      "train",
      [](const ExperimentConfig& c, const fs::path& out) {
        TrainArtifacts a;
        {
          py::gil_scoped_release release;
          a = run_train_nsfs(c, out);
        }
        return py::make_tuple(a.checkpoint, a.result.curve, a.result.stopped_early);
      },
      py::arg("config"), py::arg("out_dir"), "Returns (checkpoint path, objective curve, stopped early).");

  m.def(
      "sample",
      [](const ExperimentConfig& c, const fs::path& checkpoint, const fs::path& out) {
        py::gil_scoped_release release;
        return Batch(run_sample(c, checkpoint, out).samples);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("out_dir"));

  m.def(
      "load_samples", [](const fs::path& p) { return Batch(load_samples(p).samples); }, py::arg("path"));

  py::class_<ConjugateGaussianModel>(m, "ConjugateGaussianModel")
      .def(py::init<double, double, double, Vector>(), py::arg("prior_mean"), py::arg("prior_var"),
           py::arg("noise_var"), py::arg("observations"))
      .def_property_readonly("posterior_mean", &ConjugateGaussianModel::posterior_mean)
      .def_property_readonly("posterior_var", &ConjugateGaussianModel::posterior_var)
      .def("log_evidence", &ConjugateGaussianModel::log_evidence)
      .def(
          "log_joint",
          [](const ConjugateGaussianModel& self, double theta) {
            const Vector v = Vector::Constant(1, theta);
            return self.log_prior(v, nullptr) + self.log_lik_all(v, nullptr);
          },
          py::arg("theta"));

  m.def("sample_gaussian_observations", &sample_gaussian_observations, py::arg("theta_true"),
        py::arg("noise_var"), py::arg("n"), py::arg("seed"));

  m.def("linear_sde_covariance", &linear_sde_covariance, py::arg("a"), py::arg("gamma"), py::arg("t"));
  m.def("euler_linear_covariance", &euler_linear_covariance, py::arg("a"), py::arg("gamma"), py::arg("t"),
        py::arg("steps"));

  m.def(
      "ece",
      [](const std::vector<double>& conf, const std::vector<bool>& correct, int bins) {
        std::unique_ptr<bool[]> b(new bool[correct.size()]);
        for (std::size_t i = 0; i < correct.size(); ++i) b[i] = correct[i];
        return ece(conf, std::span<const bool>(b.get(), correct.size()), bins);
      },
      py::arg("confidences"), py::arg("correct"), py::arg("bins") = 10);
}
