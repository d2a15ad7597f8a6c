#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>
#include <torch/torch.h>

#include <cstring>
#include <fstream>

#include "occmocap/errors.hpp"
#include "occmocap/harness.hpp"
#include "occmocap/rotation.hpp"

namespace py = pybind11;
using namespace occmocap;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const torch::Tensor& t) {
  const auto c = t.to(torch::kFloat64).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<double>(), sizeof(double) * static_cast<size_t>(c.numel()));
  return out;
}

py::array_t<bool> mask_to_numpy(const torch::Tensor& t) {
  const auto c = t.to(torch::kBool).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  py::array_t<bool> out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<bool>(), static_cast<size_t>(c.numel()));
  return out;
}

torch::Tensor to_tensor(const Array& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

Sequence3 to_sequence(const Array& a, const char* what) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw InvalidArgument(std::string(what) + " must be F x M x 3");
  return to_sequence3(to_tensor(a));
}

const BodyModel& default_body() {
  static const auto b = BodyModel::procedural();
  return b;
}

py::dict body_output(const BodyOutput& out) {
  py::dict d;
  d["vertices"] = to_numpy(out.vertices);
  d["joints"] = to_numpy(out.joints);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Occlusion-robust motion capture: rotations, body model, metrics, translation fit and inference.";

  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("rot6d_to_matrix", [](const Rot6d& v) { return rot6d_to_matrix(v); }, py::arg("v"));
  m.def("matrix_to_rot6d", [](const Eigen::Matrix3d& r) { return matrix_to_rot6d(r); }, py::arg("r"));

  m.def(
      "body_forward",
      [](const Array& rotations, const Array& beta) {
        return body_output(default_body().forward(to_tensor(rotations), to_tensor(beta)));
      },
      py::arg("rotations"), py::arg("beta"),
      "Procedural body: rotations [N, 3, 3] or [B, N, 3, 3], beta [S] or [B, S].");
  m.def("lsp_joints", [](const Array& vertices) {
    return to_numpy(default_body().regress_joints_lsp(to_tensor(vertices)));
  });

  m.def("mpjpe", [](const Array& p, const Array& g) { return mpjpe(to_sequence(p, "pred"), to_sequence(g, "gt")); });
  m.def("pa_mpjpe",
        [](const Array& p, const Array& g) { return pa_mpjpe(to_sequence(p, "pred"), to_sequence(g, "gt")); });
  m.def("pve", [](const Array& p, const Array& g) { return pve(to_sequence(p, "pred"), to_sequence(g, "gt")); });
  m.def("accel_error",
        [](const Array& p, const Array& g) { return accel_error(to_sequence(p, "pred"), to_sequence(g, "gt")); });

  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def(py::init<>())
      .def(py::init([](double fx, double fy, double cx, double cy) {
             CameraIntrinsics c;
             c.focal = {fx, fy};
             c.principal_point = {cx, cy};
             return c;
           }),
           py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"))
      .def_readwrite("focal", &CameraIntrinsics::focal)
      .def_readwrite("principal_point", &CameraIntrinsics::principal_point);

  m.def(
      "solve_translation",
      [](const Array& joints, const Array& detections, const Array& confidences, const CameraIntrinsics& camera,
         double smoothness_weight) {
        const auto j = to_sequence(joints, "joints");
        if (detections.ndim() != 3 || detections.shape(2) != 2) throw InvalidArgument("detections must be F x J x 2");
        if (confidences.ndim() != 2) throw InvalidArgument("confidences must be F x J");
        Sequence2 d;
        std::vector<Eigen::VectorXd> c;
        const auto dt = to_tensor(detections), ct = to_tensor(confidences);
        for (int64_t t = 0; t < dt.size(0); ++t) {
          d.push_back(to_points2(dt[t]));
          c.push_back(Eigen::Map<const Eigen::VectorXd>(ct[t].contiguous().data_ptr<double>(), ct.size(1)));
        }
        TranslationFitOptions opt;
        opt.smoothness_weight = smoothness_weight;
        const auto fit = solve_translation(j, d, c, camera, opt);
        py::array_t<double> T({static_cast<py::ssize_t>(fit.translations.size()), py::ssize_t{3}});
        auto w = T.mutable_unchecked<2>();
        for (size_t t = 0; t < fit.translations.size(); ++t)
          for (int k = 0; k < 3; ++k) w(static_cast<py::ssize_t>(t), k) = fit.translations[t][k];
        py::dict out;
        out["translations"] = T;
        out["objective"] = fit.objective;
        out["objective_history"] = fit.objective_history;
        out["converged"] = fit.converged;
        return out;
      },
      py::arg("joints"), py::arg("detections"), py::arg("confidences"), py::arg("camera"),
      py::arg("smoothness_weight") = 100.0);

  m.def("default_config", []() { return config_to_json(ExperimentConfig{}); });
  m.def(
      "validate_config", [](const std::string& text) { return config_to_json(config_from_json(text)); },
      "Resolves a JSON config against the defaults; raises ConfigError.");

  m.def(
      "read_detections",
      [](const std::filesystem::path& path, double threshold) {
        const auto file = read_detections(path);
        const auto ing = ingest_detections(file, threshold, torch::zeros({2}, torch::kFloat64));
        py::dict out;
        out["normalized"] = to_numpy(ing.normalized);
        out["mask"] = mask_to_numpy(ing.mask);
        out["frames"] = file.frames();
        out["joints"] = file.joints;
        return out;
      },
      py::arg("path"), py::arg("threshold") = kConfidenceThreshold);

  m.def(
      "synthetic_detections",
      [](uint64_t seed, int frames, double occlusion_ratio, const std::filesystem::path& path) {
        SynthConfig cfg;
        cfg.frames = frames;
        cfg.occlusion.target_ratio = occlusion_ratio;
        std::mt19937_64 rng(seed);
        const auto sample = generate_synthetic_motion(rng, cfg, default_body());
        std::ofstream out(path);
        if (!out) throw DataError("cannot write " + path.string());
        write_detections(detections_from_sample(sample), out);
        return to_numpy(sample_body(sample, default_body()).joints);
      },
      py::arg("seed"), py::arg("frames"), py::arg("occlusion_ratio"), py::arg("path"),
      "Writes a detection file for a synthetic clip and returns its ground-truth LSP joints.");

  m.def(
      "infer",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& detections) {
        auto loaded = load_lifting(checkpoint);
        const auto r = infer(loaded.model, loaded.config, read_detections(detections), default_body());
        py::dict out;
        out["map3d"] = to_numpy(r.map3d);
        out["rotations"] = to_numpy(r.rotations);
        out["beta"] = to_numpy(r.beta);
        out["joints"] = to_numpy(r.joints);
        out["vertices"] = to_numpy(r.vertices);
        out["translations"] = to_numpy(r.translations);
        out["mask"] = mask_to_numpy(r.mask);
        out["translation_ok"] = r.translation_ok;
        out["warning"] = r.warning;
        return out;
      },
      py::arg("checkpoint"), py::arg("detections"));

  m.def(
      "save_untrained_lifting",
      [](const std::string& config_json, const std::filesystem::path& path) {
        const auto cfg = config_from_json(config_json);
        cfg.validate();
        LiftingTrainer t(cfg, make_train_set(cfg, default_body()), default_body());
        t.save(path);
      },
      py::arg("config_json"), py::arg("path"), "Zero-step lifting checkpoint, for smoke tests.");
}
