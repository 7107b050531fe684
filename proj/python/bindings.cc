#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "reachcal/calibration.h"
#include "reachcal/christoffel.h"
#include "reachcal/crc64.h"
#include "reachcal/dynamics.h"
#include "reachcal/errors.h"
#include "reachcal/evaluation.h"
#include "reachcal/pipeline.h"
#include "reachcal/run_config.h"

namespace py = pybind11;

namespace reachcal {
namespace {

RunConfig parse_config(const std::string& text) {
  return run_config_from_json(nlohmann::json::parse(text, nullptr, true, true));
}

py::array_t<float> dataset_array(const Dataset& ds) {
  py::array_t<float> out({ds.N, ds.K, ds.n});
  std::copy(ds.states.begin(), ds.states.end(), out.mutable_data());
  return out;
}

std::vector<std::optional<double>> optional_thresholds(const CalibrationResult& r) {
  std::vector<std::optional<double>> q;
  for (const auto& s : r.steps) q.push_back(s.q);
  return q;
}

// Stage-by-stage pipeline held in memory.
class Pipeline {
 public:
  explicit Pipeline(const std::string& config_json) : cfg_(parse_config(config_json)) {}

  py::array_t<float> generate() {
    ds_ = run_generate(cfg_);
    split_ = run_split(cfg_, ds_);
    const auto bytes = encode_dataset(ds_);
    crc_ = crc64(std::span<const std::byte>(bytes));
    return dataset_array(ds_);
  }

  std::vector<double> train() {
    require(!ds_.states.empty(), "generate");
    model_ = std::make_shared<const DenoiserModel>(run_train(cfg_, ds_, split_.train_ids, crc_));
    score_ = make_diffusion_score(cfg_, model_);
    return model_->loss_curve;
  }

  std::vector<std::optional<double>> calibrate() {
    require(score_ != nullptr, "train");
    const auto scores = score_dataset(*score_, ds_, split_.cal_ids, Domain::kCalibration);
    calibration_ = calibrate_scores(scores, cfg_.budget(), cfg_.grid_L);
    calibration_->score_hash = score_hash(cfg_);
    return optional_thresholds(*calibration_);
  }

  py::dict evaluate() {
    require(calibration_.has_value(), "calibrate");
    require_feasible(*calibration_);
    const ReachPredictor predictor(score_, *calibration_);
    const auto rep = run_evaluate(cfg_, predictor, ds_, split_.test_ids);
    py::dict d;
    d["fnr_per_step"] = rep.fnr.per_step;
    d["fnr_max"] = rep.fnr.max;
    d["fnr_pooled"] = rep.fnr.pooled;
    d["mean_iou"] = rep.mean_iou;
    std::vector<int> steps;
    std::vector<double> iou;
    for (const auto& row : rep.rows) {
      steps.push_back(row.k);
      iou.push_back(row.iou);
    }
    d["steps"] = steps;
    d["iou"] = iou;
    return d;
  }

  std::vector<double> score(const Eigen::MatrixXd& states, int k) const {
    require(score_ != nullptr, "train");
    return score_->score(states, k, Domain::kAdhoc, 0);
  }

  std::uint64_t config_hash() const { return reachcal::config_hash(cfg_); }

 private:
  static void require(bool ok, const char* stage) {
    if (!ok) throw ContractViolation(std::string("run ") + stage + "() first");
  }

  RunConfig cfg_;
  Dataset ds_;
  SplitIndex split_;
  std::uint64_t crc_ = 0;
  std::shared_ptr<const DenoiserModel> model_;
  std::shared_ptr<const DiffusionScore> score_;
  std::optional<CalibrationResult> calibration_;
};

}  // namespace
}  // namespace reachcal

PYBIND11_MODULE(reachcal, m) {
  using namespace reachcal;
  m.doc() = "Calibrated diffusion-score reachability analysis";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CalibrationInfeasible>(m, "CalibrationInfeasible", PyExc_RuntimeError);
  py::register_exception<StaleArtifactError>(m, "StaleArtifactError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<SimulationError>(m, "SimulationError", PyExc_RuntimeError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);

  m.def("hb_pvalue", &hb_pvalue, py::arg("r_hat"), py::arg("n"), py::arg("alpha"));
  m.def("min_calibration_size", &min_calibration_size, py::arg("alpha"),
        py::arg("per_step_budget"));
  m.def(
      "calibrate",
      [](const std::vector<std::vector<double>>& scores, double alpha, double delta,
         std::size_t L) {
        const RiskBudget budget{alpha, delta, static_cast<int>(scores.size())};
        return optional_thresholds(calibrate_scores(scores, budget, L));
      },
      py::arg("scores"), py::arg("alpha") = 0.05, py::arg("delta") = 0.2, py::arg("L") = 2000,
      "Per-step thresholds (None where no threshold is admissible).");

  m.def(
      "simulate_duffing",
      [](const Eigen::VectorXd& xi, std::size_t K, double dt, int substeps) {
        return simulate_duffing(DuffingParams{}, xi, K, dt, substeps).states;
      },
      py::arg("xi"), py::arg("K") = 30, py::arg("dt") = 0.1, py::arg("substeps") = 10);
  m.def(
      "generate_dataset",
      [](const std::string& config_json) { return dataset_array(run_generate(parse_config(config_json))); },
      py::arg("config_json"), "Trajectory array of shape (N, K, n).");
  m.def("config_hash", [](const std::string& config_json) {
    return config_hash(parse_config(config_json));
  });

  m.def(
      "christoffel_scores",
      [](const Eigen::MatrixXd& samples, const Eigen::MatrixXd& queries, int degree) {
        return christoffel_scores(queries, christoffel_fit(samples, degree));
      },
      py::arg("samples"), py::arg("queries"), py::arg("degree"));

  m.def(
      "iou_precision",
      [](const std::vector<bool>& pred, const std::vector<bool>& ref, int nx, int ny) {
        GridSpec g;
        g.cells = {nx, ny};
        MembershipMask a{g, 0, std::vector<std::uint8_t>(pred.begin(), pred.end())};
        MembershipMask b{g, 0, std::vector<std::uint8_t>(ref.begin(), ref.end())};
        if (a.cells.size() != g.size() || b.cells.size() != g.size()) {
          throw ContractViolation("mask length must equal nx * ny");
        }
        const auto r = iou_precision(a, b);
        return py::make_tuple(r.iou, r.precision, r.recall);
      },
      py::arg("pred"), py::arg("ref"), py::arg("nx"), py::arg("ny"),
      "(iou, precision, recall) of two flat masks (index iy * nx + ix).");

  py::class_<Pipeline>(m, "Pipeline")
      .def(py::init<const std::string&>(), py::arg("config_json"))
      .def("generate", &Pipeline::generate)
      .def("train", &Pipeline::train, py::call_guard<py::gil_scoped_release>())
      .def("calibrate", &Pipeline::calibrate)
      .def("evaluate", &Pipeline::evaluate)
      .def("score", &Pipeline::score, py::arg("states"), py::arg("k"))
      .def_property_readonly("config_hash", &Pipeline::config_hash);
}
