#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "topodelin/commands.hpp"
#include "topodelin/gradcheck.hpp"
#include "topodelin/weights_io.hpp"

namespace py = pybind11;
using namespace topodelin;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> to_array(const Grid<T>& g) {
  py::array_t<T> a({g.height(), g.width()});
  std::copy(g.values().begin(), g.values().end(), a.mutable_data());
  return a;
}

py::array_t<double> to_array(const Tensor<double>& t) {
  py::array_t<double> a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), a.mutable_data());
  return a;
}

Image to_image(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  return Image(a.shape(0), a.shape(1), std::vector<double>(a.data(), a.data() + a.size()));
}

Mask to_mask(const Array& a) {
  const auto image = to_image(a);
  Mask m(image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (image[i] != 0 && image[i] != 1) throw std::invalid_argument("mask values must be 0 or 1");
    m[i] = static_cast<std::uint8_t>(image[i]);
  }
  return m;
}

Tensor<double> to_tensor(const Array& a) {
  return Tensor<double>(Shape(a.shape(), a.shape() + a.ndim()), std::vector<double>(a.data(), a.data() + a.size()));
}

// (H, W) image to a (1, 1, H, W) tensor.
Tensor<double> batch_of_one(const Array& a) {
  const auto image = to_image(a);
  return Tensor<double>(Shape{1, 1, image.height(), image.width()}, image.values());
}

RunConfig make_config(const std::vector<std::string>& overrides) {
  RunConfig c;
  c.apply(overrides);
  return c;
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  d["id"] = r.id;
  d["pr_breakeven"] = r.pr_breakeven;
  d["f1"] = r.f1;
  d["correctness"] = r.correctness;
  d["completeness"] = r.completeness;
  d["quality"] = r.quality;
  d["paths_correct"] = r.paths_correct;
  d["paths_infeasible"] = r.paths_infeasible;
  d["paths_too_long_short"] = r.paths_too_long_short;
  d["rand_fscore"] = r.rand_fscore;
  d["threshold"] = r.threshold;
  d["rho"] = r.rho;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of topodelin";

  py::register_exception<DataError>(m, "DataError", PyExc_OSError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<WeightFormatError>(m, "WeightFormatError", PyExc_ValueError);

  m.def(
      "synth",
      [](std::size_t n, const std::vector<std::string>& overrides) {
        py::list out;
        for (const auto& s : synth(make_config(overrides).synth(), n))
          out.append(py::make_tuple(s.id, to_array(s.image), to_array(s.gt)));
        return out;
      },
      py::arg("n"), py::arg("overrides") = std::vector<std::string>{},
      "Synthetic samples as (id, image, gt) tuples. Overrides are 'synth.key=value' strings.");

  m.def(
      "thin", [](const Array& mask) { return to_array(thin(to_mask(mask))); }, py::arg("mask"));

  m.def(
      "evaluate",
      [](const Array& prob, const Array& gt, double threshold, double rho, std::size_t path_samples,
         std::uint64_t seed) {
        EvalConfig c;
        c.threshold = threshold;
        c.rho = c.rho_match = rho;
        c.path_samples = path_samples;
        c.seed = seed;
        return report_dict(evaluate("image", to_image(prob), to_mask(gt), c));
      },
      py::arg("prob"), py::arg("gt"), py::arg("threshold") = 0.5, py::arg("rho") = 2.0,
      py::arg("path_samples") = 200, py::arg("seed") = 0);

  m.def(
      "bce_loss",
      [](const Array& pred, const Array& gt) {
        Graph<double> g;
        return bce_loss(g.constant(batch_of_one(pred)), g.constant(batch_of_one(gt)), LossConfig{}).value().item();
      },
      py::arg("pred"), py::arg("gt"));

  m.def(
      "topo_loss",
      [](const Array& pred, const Array& gt) {
        Graph<double> g;
        return topo_loss(g.constant(batch_of_one(pred)), g.constant(batch_of_one(gt)), Extractor::analytic(),
                         LossConfig{})
            .value()
            .item();
      },
      py::arg("pred"), py::arg("gt"), "Topology term with the analytic filter bank.");

  m.def(
      "features",
      [](const Array& image, const std::vector<std::string>& layers) {
        py::dict out;
        for (const auto& [name, t] : Extractor::analytic().describe_values(batch_of_one(image), layers))
          out[py::str(name)] = to_array(t);
        return out;
      },
      py::arg("image"), py::arg("layers") = std::vector<std::string>{"level1", "level2", "level3"});

  m.def(
      "save_weights",
      [](const std::filesystem::path& path, const std::map<std::string, Array>& tensors, bool float64) {
        std::vector<NamedTensor> list;
        for (const auto& [name, a] : tensors)
          list.push_back({name, float64 ? StoredType::float64 : StoredType::float32, to_tensor(a)});
        save_weights(path, list);
      },
      py::arg("path"), py::arg("tensors"), py::arg("float64") = false);

  m.def(
      "load_weights",
      [](const std::filesystem::path& path) {
        py::dict out;
        for (const auto& t : load_weights(path)) out[py::str(t.name)] = to_array(t.value);
        return out;
      },
      py::arg("path"));

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        const auto report = run_gradcheck(seed);
        return py::make_tuple(report.passed(), report.text());
      },
      py::arg("seed") = 0);

  m.def(
      "run_synth",
      [](const std::filesystem::path& out, std::size_t n, const std::vector<std::string>& overrides) {
        std::ostringstream log;
        run_synth(make_config(overrides), out, n, log);
        return log.str();
      },
      py::arg("out"), py::arg("n"), py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "run_train",
      [](const std::filesystem::path& data, const std::filesystem::path& out,
         const std::vector<std::string>& overrides, const std::optional<std::filesystem::path>& val) {
        std::ostringstream log;
        py::gil_scoped_release release;
        run_train(make_config(overrides), {data, val.value_or(std::filesystem::path{}), out, false, 0}, log);
        return log.str();
      },
      py::arg("data"), py::arg("out"), py::arg("overrides") = std::vector<std::string>{},
      py::arg("val") = py::none());

  m.def(
      "run_predict",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& data, const std::filesystem::path& out,
         std::optional<std::size_t> K) {
        std::ostringstream log;
        run_predict({checkpoint, data, out, K}, log);
        return log.str();
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("out"), py::arg("K") = py::none());

  m.def(
      "run_eval",
      [](const std::filesystem::path& pred, const std::filesystem::path& gt, std::optional<double> threshold,
         const std::vector<std::string>& overrides) {
        py::list out;
        for (const auto& r : run_eval(make_config(overrides), pred, gt, threshold)) out.append(report_dict(r));
        return out;
      },
      py::arg("pred"), py::arg("gt"), py::arg("threshold") = py::none(),
      py::arg("overrides") = std::vector<std::string>{});
}
