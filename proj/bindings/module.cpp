// Python bindings for the numeric core: token modulation forward passes,
// masking, embeddings, synthetic data, flow encoding, and the
// segmentation metrics. Arrays cross the boundary as contiguous float32 /
// uint8 numpy buffers.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmtm/cmtm.hpp"
#include "cmtm/config.hpp"
#include "cmtm/metrics.hpp"
#include "cmtm/synthvid.hpp"
#include "cmtm/trainer.hpp"

namespace py = pybind11;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

cmtm::Tensor tensor_from(const FloatArray& arr) {
  cmtm::Shape shape;
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape.push_back(arr.shape(i));
  std::vector<float> values(arr.data(), arr.data() + arr.size());
  return cmtm::Tensor::from(std::move(shape), std::move(values));
}

py::array_t<float> array_from(const cmtm::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> arr(shape);
  std::copy(t.values().begin(), t.values().end(), arr.mutable_data());
  return arr;
}

cmtm::BinaryMask mask_from(const MaskArray& arr) {
  if (arr.ndim() != 2) throw cmtm::DimError("mask array must be 2-D");
  cmtm::BinaryMask m = cmtm::BinaryMask::zeros(arr.shape(0), arr.shape(1));
  for (py::ssize_t i = 0; i < arr.size(); ++i) {
    m.data[static_cast<std::size_t>(i)] = arr.data()[i] ? 1 : 0;
  }
  return m;
}

py::array_t<std::uint8_t> array_from_mask(const cmtm::BinaryMask& m) {
  py::array_t<std::uint8_t> arr({static_cast<py::ssize_t>(m.h), static_cast<py::ssize_t>(m.w)});
  std::copy(m.data.begin(), m.data.end(), arr.mutable_data());
  return arr;
}

// Stateful wrapper around one token-modulation module instance.
class Modulator {
 public:
  Modulator(std::int64_t channels, std::int64_t blocks, std::int64_t heads, double mask_ratio,
            bool apply_to_app, bool apply_to_mo, bool use_positional, bool use_modality,
            std::uint64_t seed) {
    cfg_.channels = channels;
    cfg_.blocks = blocks;
    cfg_.heads = heads;
    cfg_.mask_ratio = mask_ratio;
    cfg_.apply_to_app = apply_to_app;
    cfg_.apply_to_mo = apply_to_mo;
    cfg_.use_positional = use_positional;
    cfg_.use_modality = use_modality;
    cfg_.seed = seed;
    cfg_.validate();
    cmtm::Rng rng(seed);
    params_ = cmtm::init_cmtm_params<float>(cfg_, rng);
  }

  py::tuple forward(const FloatArray& f_app, const FloatArray& f_mo, bool train,
                    std::uint64_t seed) {
    cmtm::Tape tape;
    cmtm::Rng rng(seed);
    const cmtm::CmtmOutput out =
        cmtm::cmtm_forward(tape, tensor_from(f_app), tensor_from(f_mo), cfg_, params_,
                           train ? cmtm::Mode::train : cmtm::Mode::eval, &rng);
    auto plan_to_py = [](const std::optional<cmtm::MaskPlan>& plan) -> py::object {
      if (!plan) return py::none();
      py::array_t<std::int64_t> idx(static_cast<py::ssize_t>(plan->masked_indices.size()));
      std::copy(plan->masked_indices.begin(), plan->masked_indices.end(), idx.mutable_data());
      return idx;
    };
    return py::make_tuple(array_from(out.app), array_from(out.mo), plan_to_py(out.plan_app),
                          plan_to_py(out.plan_mo));
  }

 private:
  cmtm::CmtmConfig cfg_;
  cmtm::CmtmParams params_;
};

py::list sequence_to_py(const cmtm::GeneratedSequence& seq) {
  py::list frames;
  for (std::size_t i = 0; i < seq.samples.size(); ++i) {
    const auto& s = seq.samples[i];
    py::dict d;
    d["frame"] = array_from(s.frame);
    d["flow"] = array_from(s.flow_field);
    d["flow_rgb"] = array_from(s.flow_rgb);
    d["gt_mask"] = array_from_mask(s.gt_mask);
    d["distractor_mask"] = array_from_mask(seq.distractor_masks[i]);
    frames.append(d);
  }
  return frames;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "two-stream token-modulation segmentation core";
  m.attr("__version__") = "0.1.0";

  py::register_exception<cmtm::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<cmtm::DimError>(m, "DimError", PyExc_ValueError);
  py::register_exception<cmtm::UsageError>(m, "ApiUsageError", PyExc_RuntimeError);

  m.def(
      "positional_embedding",
      [](std::int64_t h, std::int64_t w, std::int64_t c) {
        return array_from(cmtm::positional_embedding<float>(h, w, c));
      },
      py::arg("h"), py::arg("w"), py::arg("c"),
      "Fixed 2-D sinusoidal embedding table of shape [h*w, c].");

  m.def(
      "flow_to_rgb",
      [](const FloatArray& flow, float max_mag) {
        return array_from(cmtm::flow_to_rgb(tensor_from(flow), max_mag));
      },
      py::arg("flow"), py::arg("max_mag") = 4.0f);

  m.def(
      "sample_mask_plan",
      [](std::int64_t n, double ratio, std::uint64_t seed) {
        cmtm::Rng rng(seed);
        const cmtm::MaskPlan plan = cmtm::sample_mask_plan(n, ratio, rng);
        py::array_t<std::uint8_t> retain(static_cast<py::ssize_t>(plan.retain.size()));
        std::copy(plan.retain.begin(), plan.retain.end(), retain.mutable_data());
        py::array_t<std::int64_t> masked(static_cast<py::ssize_t>(plan.masked_indices.size()));
        std::copy(plan.masked_indices.begin(), plan.masked_indices.end(), masked.mutable_data());
        return py::make_tuple(retain, masked);
      },
      py::arg("n"), py::arg("ratio"), py::arg("seed") = 0,
      "Returns (retain_mask, masked_indices) with exactly floor(ratio*n) masked.");

  m.def(
      "region_similarity",
      [](const MaskArray& pred, const MaskArray& gt) {
        return cmtm::region_similarity(mask_from(pred), mask_from(gt));
      },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "boundary_accuracy",
      [](const MaskArray& pred, const MaskArray& gt, int tol_px) {
        return cmtm::boundary_accuracy(mask_from(pred), mask_from(gt), tol_px);
      },
      py::arg("pred"), py::arg("gt"), py::arg("tol_px") = 1);

  m.def(
      "generate_sequence",
      [](std::int64_t height, std::int64_t width, std::string shape, double shape_vx,
         double shape_vy, double bg_vx, double bg_vy, double shape_size, std::int64_t frames,
         bool distractor, std::uint64_t seed) {
        cmtm::SceneConfig cfg;
        cfg.height = height;
        cfg.width = width;
        if (shape == "disk") cfg.kind = cmtm::ShapeKind::disk;
        else if (shape == "rectangle") cfg.kind = cmtm::ShapeKind::rectangle;
        else throw cmtm::ConfigError("shape must be disk or rectangle");
        cfg.shape_vx = shape_vx;
        cfg.shape_vy = shape_vy;
        cfg.bg_vx = bg_vx;
        cfg.bg_vy = bg_vy;
        cfg.shape_size = shape_size;
        cfg.frames = frames;
        cfg.distractor = distractor;
        return sequence_to_py(cmtm::generate_sequence(cfg, seed));
      },
      py::arg("height") = 32, py::arg("width") = 32, py::arg("shape") = "disk",
      py::arg("shape_vx") = 0.9, py::arg("shape_vy") = 0.45, py::arg("bg_vx") = 0.0,
      py::arg("bg_vy") = 0.0, py::arg("shape_size") = 6.0, py::arg("frames") = 8,
      py::arg("distractor") = true, py::arg("seed") = 0,
      "Synthetic sequence as a list of dicts with frame/flow/flow_rgb/gt_mask arrays.");

  py::class_<Modulator>(m, "Modulator",
                        "Cross-modality token modulation over two [H,W,C] feature maps.")
      .def(py::init<std::int64_t, std::int64_t, std::int64_t, double, bool, bool, bool, bool,
                    std::uint64_t>(),
           py::arg("channels"), py::arg("blocks") = 2, py::arg("heads") = 1,
           py::arg("mask_ratio") = 0.4, py::arg("apply_to_app") = true,
           py::arg("apply_to_mo") = true, py::arg("use_positional") = true,
           py::arg("use_modality") = true, py::arg("seed") = 0)
      .def("forward", &Modulator::forward, py::arg("f_app"), py::arg("f_mo"),
           py::arg("train") = false, py::arg("seed") = 0,
           "Returns (out_app, out_mo, masked_indices_app|None, masked_indices_mo|None).");

  m.def("default_config", [] { return cmtm::serialize_config(cmtm::RunConfig{}); },
        "Default experiment configuration in key=value form.");
}
