// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the grasp-dataset engine: configuration, the five
// pipeline stages, the loss self-test, dataset reading, and the small pure
// functions (constraint targets, 6D rotations, losses) that are convenient
// to cross-check from Python.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dexforge/pipeline.hpp"

namespace py = pybind11;
using namespace dexforge;

namespace {

py::array_t<float> to_numpy(const std::vector<Eigen::Vector3f>& v) {
  py::array_t<float> out({(py::ssize_t)v.size(), (py::ssize_t)3});
  auto r = out.mutable_unchecked<2>();
  for (py::ssize_t i = 0; i < (py::ssize_t)v.size(); ++i)
    for (py::ssize_t j = 0; j < 3; ++j) r(i, j) = v[i]((int)j);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "dexterous-grasp dataset synthesis and evaluation engine";

  // --- configuration -------------------------------------------------------

  py::class_<PipelineConfig>(m, "PipelineConfig")
      .def(py::init<>())
      .def_readwrite("seed", &PipelineConfig::seed)
      .def_readwrite("out_dir", &PipelineConfig::out_dir)
      .def_readwrite("hand_path", &PipelineConfig::hand_path)
      .def_readwrite("object_names", &PipelineConfig::object_names)
      .def_readwrite("object_dir", &PipelineConfig::object_dir)
      .def_readwrite("scales", &PipelineConfig::scales)
      .def_readwrite("attempts_per_object", &PipelineConfig::attempts_per_object)
      .def_readwrite("n_scenes", &PipelineConfig::n_scenes)
      .def_readwrite("n_views", &PipelineConfig::n_views)
      .def_readwrite("views_per_scene", &PipelineConfig::views_per_scene)
      .def_readwrite("n_points", &PipelineConfig::n_points)
      .def_readwrite("k_candidates", &PipelineConfig::k_candidates)
      .def("validate", &PipelineConfig::validate)
      .def("hash", &PipelineConfig::hash)
      .def("to_json", [](const PipelineConfig& c) { return c.to_json().dump(2); });

  m.def("load_config", &load_config, py::arg("path"),
        "Parse a config file; unknown keys and out-of-bounds values throw.");
  m.def(
      "config_from_json",
      [](const std::string& text) {
        return config_from_json(nlohmann::json::parse(text));
      },
      py::arg("text"), "Parse a config from a JSON string.");

  // --- pipeline stages -----------------------------------------------------

  py::class_<StageSummary>(m, "StageSummary")
      .def_readonly("stage", &StageSummary::stage)
      .def_readonly("outputs_written", &StageSummary::outputs_written)
      .def_readonly("outputs_skipped", &StageSummary::outputs_skipped)
      .def_readonly("report_text", &StageSummary::report_text)
      .def_property_readonly(
          "details", [](const StageSummary& s) { return s.details.dump(); });

  m.def("gen_grasps", &cmd_gen_grasps, py::arg("config"), py::arg("jobs") = 1,
        py::call_guard<py::gil_scoped_release>(),
        "Synthesize grasps for every (object, scale) pair.");
  m.def("gen_scenes", &cmd_gen_scenes, py::arg("config"), py::arg("jobs") = 1,
        py::call_guard<py::gil_scoped_release>(),
        "Compose scenes and transfer + filter the object grasps.");
  m.def("render_label", &cmd_render_label, py::arg("config"), py::arg("jobs") = 1,
        py::call_guard<py::gil_scoped_release>(),
        "Render labeled single-view point-cloud samples.");
  m.def("eval", &cmd_eval, py::arg("config"), py::arg("jobs") = 1,
        py::call_guard<py::gil_scoped_release>(),
        "Run the clearance protocol and write the metric report.");
  m.def("stats", &cmd_stats, py::arg("config"),
        py::call_guard<py::gil_scoped_release>(),
        "Summarize dataset distribution and label balance.");

  // --- loss self-test ------------------------------------------------------

  py::class_<LossSelfTest>(m, "LossSelfTest")
      .def_readonly("pass_", &LossSelfTest::pass)
      .def_property_readonly("table",
                             [](const LossSelfTest& t) { return selftest_table(t); });
  m.def(
      "losses_selftest", [] { return run_losses_selftest(); },
      "Closed-form and finite-difference checks of the training losses.");

  // --- dataset access ------------------------------------------------------

  py::class_<LabeledCloudSample>(m, "LabeledCloudSample")
      .def_property_readonly(
          "points", [](const LabeledCloudSample& s) { return to_numpy(s.points); })
      .def_property_readonly(
          "labels",
          [](const LabeledCloudSample& s) {
            return py::array_t<uint8_t>((py::ssize_t)s.labels.size(),
                                        s.labels.data());
          })
      .def_property_readonly(
          "instance_ids",
          [](const LabeledCloudSample& s) {
            return py::array_t<int32_t>((py::ssize_t)s.instance_ids.size(),
                                        s.instance_ids.data());
          })
      .def_property_readonly(
          "offsets", [](const LabeledCloudSample& s) { return to_numpy(s.offsets); })
      .def_readonly("occlusion", &LabeledCloudSample::occlusion)
      .def_property_readonly("n_grasps",
                             [](const LabeledCloudSample& s) { return s.table.size(); })
      .def("__len__", [](const LabeledCloudSample& s) { return s.size(); });

  m.def("read_sample", &read_sample, py::arg("directory"),
        "Load one labeled sample directory (cloud.ply + grasps.json + camera.txt).");

  // --- numeric references --------------------------------------------------

  m.def(
      "constraint_targets",
      [](const std::string& kind, double r, double h) {
        ConstraintSpec spec;
        if (kind == "circular") spec.kind = ConstraintKind::circular;
        else if (kind == "rectangular") spec.kind = ConstraintKind::rectangular;
        else throw std::invalid_argument("kind must be circular|rectangular");
        spec.r = r;
        spec.h = h;
        std::array<double, 5> delta{};
        auto pts = constraint_targets(spec, delta);
        Eigen::MatrixXd out(5, 3);
        for (int i = 0; i < 5; ++i) out.row(i) = pts[i].transpose();
        return out;
      },
      py::arg("kind"), py::arg("r"), py::arg("h"),
      "Fingertip target points (5 x 3) in the fingertip-plane frame.");

  m.def("rot6d_encode", &rot6d_encode, py::arg("R"));
  m.def("rot6d_decode", &rot6d_decode, py::arg("v"));

  m.def(
      "downsample_cloud",
      [](const std::vector<Vec3>& pts, int n, uint64_t seed) {
        return downsample_cloud(pts, n, seed);
      },
      py::arg("points"), py::arg("n"), py::arg("seed"),
      "Voxel-stratified index selection, deterministic per seed.");

  m.def(
      "loss_rotation",
      [](const std::vector<Mat3>& pred, const std::vector<Mat3>& gt, double lam) {
        return loss_rotation(pred, gt, lam);
      },
      py::arg("pred"), py::arg("gt"), py::arg("lambda_geo"));
  m.def(
      "loss_offset",
      [](const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, double eps,
         bool norm_ratio) { return loss_offset(pred, gt, eps, norm_ratio); },
      py::arg("pred"), py::arg("gt"), py::arg("epsilon") = 1e-6,
      py::arg("norm_ratio") = false);
  m.def(
      "loss_joints",
      [](const Eigen::MatrixXd& pred, const Eigen::MatrixXd& gt) {
        return loss_joints(pred, gt);
      },
      py::arg("pred"), py::arg("gt"));
}
