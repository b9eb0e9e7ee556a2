// Python bindings for the numeric core: view stacks, the classifier model
// (build / checkpoint / predict / heatmap) and the AUC metric. Dataset
// pipelines -- caching, training runs, report files -- live in the command
// line tool; these bindings cover the operations a notebook wants to call on
// arrays directly.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "mvcnn/data.hpp"
#include "mvcnn/errors.hpp"
#include "mvcnn/eval.hpp"
#include "mvcnn/gradcam.hpp"
#include "mvcnn/image.hpp"
#include "mvcnn/model.hpp"
#include "mvcnn/tensor.hpp"
#include "mvcnn/views.hpp"

namespace py = pybind11;
using namespace mvcnn;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

views::ViewParams make_params(double sigma, int d, const std::string& mode) {
  views::ViewParams p;
  p.sigma = sigma;
  p.d = d;
  if (mode == "energy")
    p.mode = views::ViewMode::WindowedEnergy;
  else if (mode == "absolute")
    p.mode = views::ViewMode::AbsoluteResponse;
  else
    throw ConfigError("unknown view mode: " + mode + " (expected energy or absolute)");
  return p;
}

Image image_from_array(const FloatArray& arr) {
  if (arr.ndim() != 3 || arr.shape(2) != 3)
    throw DimensionError("expected an rgb image array of shape (h, w, 3)");
  Image img(int(arr.shape(0)), int(arr.shape(1)));
  std::memcpy(img.data.data(), arr.data(), sizeof(float) * img.data.size());
  return img;
}

py::array_t<float> array_from_image(const Image& img) {
  py::array_t<float> out({img.h, img.w, 3});
  std::memcpy(out.mutable_data(), img.data.data(), sizeof(float) * img.data.size());
  return out;
}

py::array_t<float> array_from_field(const Field& f) {
  py::array_t<float> out({f.h, f.w});
  std::memcpy(out.mutable_data(), f.data.data(), sizeof(float) * f.data.size());
  return out;
}

// (1, c, h, w) stack tensor -> (c, h, w) array.
py::array_t<float> array_from_stack(const views::ViewStack& stack) {
  const Shape4& s = stack.data.shape();
  py::array_t<float> out({s.c, s.h, s.w});
  std::memcpy(out.mutable_data(), stack.data.data(), sizeof(float) * size_t(s.numel()));
  return out;
}

// Accepts (c, h, w) for one stack or (n, c, h, w) for a batch.
Tensor batch_from_array(const FloatArray& arr, int want_channels) {
  int n, c, h, w;
  if (arr.ndim() == 3) {
    n = 1;
    c = int(arr.shape(0));
    h = int(arr.shape(1));
    w = int(arr.shape(2));
  } else if (arr.ndim() == 4) {
    n = int(arr.shape(0));
    c = int(arr.shape(1));
    h = int(arr.shape(2));
    w = int(arr.shape(3));
  } else {
    throw DimensionError("expected a view stack of shape (channels, h, w) or a batch "
                         "(n, channels, h, w)");
  }
  if (c != want_channels)
    throw DimensionError("stack has " + std::to_string(c) + " channels; the model expects " +
                         std::to_string(want_channels));
  Tensor t(n, c, h, w);
  std::memcpy(t.data(), arr.data(), sizeof(float) * size_t(t.numel()));
  return t;
}

model::Model build_model_py(const std::string& combo, int size, int classes,
                            const std::string& plan, float dropout, uint64_t seed) {
  model::ModelConfig cfg;
  cfg.combo = views::combo_from_name(combo);
  cfg.input_h = cfg.input_w = size;
  cfg.class_count = classes;
  cfg.dropout_rate = dropout;
  if (plan == "default")
    cfg.conv_plan = model::default_conv_plan();
  else if (plan == "compact")
    cfg.conv_plan = model::compact_conv_plan();
  else
    throw ConfigError("unknown conv plan: " + plan + " (expected default or compact)");
  model::spatial_trace(cfg);  // reject input sizes the plan cannot reduce
  return model::build_model(cfg, seed);
}

py::array_t<float> predict_py(const model::Model& m, const FloatArray& stacks) {
  const Tensor batch = batch_from_array(stacks, m.input_channels());
  const Tensor probs = model::forward(m, batch, Mode::Infer, 0);
  py::array_t<float> out({probs.n(), probs.c()});
  std::memcpy(out.mutable_data(), probs.data(), sizeof(float) * size_t(probs.numel()));
  return out;
}

py::dict heatmap_py(const model::Model& m, const FloatArray& stack, int target,
                    const std::string& layer) {
  Tensor data = batch_from_array(stack, m.input_channels());
  if (data.n() != 1) throw DimensionError("heatmaps are computed one stack at a time");
  views::ViewStack vs{m.config.combo, std::move(data)};
  if (target < 0) {
    const Tensor probs = model::forward(m, vs.data, Mode::Infer, 0);
    target = 0;
    for (int c = 1; c < probs.c(); ++c)
      if (probs.at(0, c, 0, 0) > probs.at(0, target, 0, 0)) target = c;
  }
  const gradcam::HeatMap hm = gradcam::compute_heatmap(m, vs, target, layer);
  py::dict out;
  out["raw"] = array_from_field(hm.raw);
  out["upsampled"] = array_from_field(hm.upsampled);
  out["target"] = hm.target_class;
  out["layer"] = hm.layer_name;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Numeric core of the multi-view CNN toolkit";
  m.attr("__version__") = "0.1.0";

  m.def(
      "combos", [] {
        std::vector<std::string> names;
        for (views::ViewCombination c : views::all_combinations())
          names.push_back(views::combo_name(c));
        return names;
      },
      "View combination names in their comparison sweep order.");

  m.def(
      "combo_channels",
      [](const std::string& name) { return views::channel_count(views::combo_from_name(name)); },
      py::arg("combo"), "Input channel count of a view combination.");

  m.def(
      "load_image", [](const std::string& path) { return array_from_image(data::load_image(path)); },
      py::arg("path"),
      "Decode a PNG/JPEG/PPM/PGM file to an (h, w, 3) float array in [0, 1].");

  m.def(
      "resize_bilinear",
      [](const FloatArray& img, int h, int w) {
        return array_from_image(data::resize_bilinear(image_from_array(img), h, w));
      },
      py::arg("image"), py::arg("h"), py::arg("w"),
      "Corner-aligned bilinear resample of an (h, w, 3) image array.");

  m.def(
      "stack_views",
      [](const FloatArray& img, const std::string& combo, double sigma, int d,
         const std::string& mode) {
        return array_from_stack(views::stack_views(
            image_from_array(img), views::combo_from_name(combo), make_params(sigma, d, mode)));
      },
      py::arg("image"), py::arg("combo") = "rgb+gm", py::arg("sigma") = 1.0, py::arg("d") = 1,
      py::arg("mode") = "energy",
      "Assemble the (channels, h, w) input stack of an (h, w, 3) image: RGB passed "
      "through, gradient views computed from luminance and min-max normalized.");

  m.def(
      "compute_views",
      [](const std::string& path, const std::string& combo, int size, double sigma, int d,
         const std::string& mode) {
        const data::ViewSpec spec{views::combo_from_name(combo), make_params(sigma, d, mode),
                                  size, size};
        return array_from_stack(data::compute_views(path, spec));
      },
      py::arg("path"), py::arg("combo") = "rgb+gm", py::arg("size") = 256,
      py::arg("sigma") = 1.0, py::arg("d") = 1, py::arg("mode") = "energy",
      "Decode an image file, resize it and assemble its view stack.");

  m.def(
      "roc_auc",
      [](const std::vector<float>& scores, const std::vector<int>& labels) {
        return eval::roc_auc(scores, labels).auc;
      },
      py::arg("scores"), py::arg("labels"),
      "One-vs-rest area under the ROC curve (trapezoidal; labels are 0/1).");

  py::class_<model::Model>(m, "Model", "The convolutional classifier.")
      .def_static("build", &build_model_py, py::arg("combo") = "rgb+gm", py::arg("size") = 256,
                  py::arg("classes") = 38, py::arg("plan") = "default",
                  py::arg("dropout") = 0.2f, py::arg("seed") = 0,
                  "Deterministically initialize a model from a seed.")
      .def_static(
          "load",
          [](const std::string& path, int size) {
            model::Model loaded = model::load_checkpoint(path);
            loaded.config.input_h = loaded.config.input_w = size;
            loaded.config.dropout_rate = 0.0f;
            return loaded;
          },
          py::arg("path"), py::arg("size") = 256,
          "Load a checkpoint; the file stores no input size, so pass the one the "
          "model was trained at.")
      .def(
          "save",
          [](const model::Model& self, const std::string& path) {
            model::save_checkpoint(self, path);
          },
          py::arg("path"), "Write a checkpoint file.")
      .def("predict", &predict_py, py::arg("stacks"),
           "Class probabilities, shape (n, classes), from a (channels, h, w) stack or "
           "an (n, channels, h, w) batch.")
      .def("heatmap", &heatmap_py, py::arg("stack"), py::arg("target") = -1,
           py::arg("layer") = std::string(),
           "Class-activation heatmap of one stack: dict with the raw conv-stage map, "
           "the input-sized upsampled map in [0, 1], the target class (argmax when "
           "target is negative) and the conv stage name.")
      .def_property_readonly(
          "combo",
          [](const model::Model& self) { return views::combo_name(self.config.combo); })
      .def_property_readonly("channels",
                             [](const model::Model& self) { return self.input_channels(); })
      .def_property_readonly("classes",
                             [](const model::Model& self) { return self.config.class_count; })
      .def_property_readonly("input_size",
                             [](const model::Model& self) { return self.config.input_h; })
      .def_property_readonly(
          "param_counts",
          [](const model::Model& self) {
            const model::ParamCount pc = model::count_parameters(self);
            return py::make_tuple(pc.trainable, pc.total);
          },
          "(trainable, total) parameter counts.")
      .def("__repr__", [](const model::Model& self) {
        return "<mvcnn.Model combo=" + views::combo_name(self.config.combo) + " input=" +
               std::to_string(self.config.input_h) + " classes=" +
               std::to_string(self.config.class_count) + ">";
      });
}
