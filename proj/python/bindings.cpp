#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "nowcast/error.hpp"
#include "nowcast/nn/checkpoint.hpp"
#include "nowcast/synth.hpp"
#include "nowcast/workflow.hpp"

namespace py = pybind11;
using namespace nowcast;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

RainGrid to_grid(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("rain grid must be a 2-D array");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return RainGrid(r, c, std::vector<float>(a.data(), a.data() + r * c));
}

FloatArray to_array(const RainGrid& g) {
  FloatArray out({g.rows(), g.cols()});
  std::memcpy(out.mutable_data(), g.values().data(), g.size() * sizeof(float));
  return out;
}

PrecipCategory category_arg(const std::string& name) { return parse_category(name); }

std::optional<double> fss_py(const FloatArray& pred, const FloatArray& obs, const std::string& category,
                             std::size_t n, bool brute) {
  const auto p = FssParams::for_category(category_arg(category), n);
  return brute ? fss_bruteforce(to_grid(pred), to_grid(obs), p) : fss(to_grid(pred), to_grid(obs), p);
}

SynthConfig synth_config(const py::kwargs& kw) {
  SynthConfig c;
  std::string text;
  for (const auto& [k, v] : kw) text += py::str(k).cast<std::string>() + "=" + py::str(v).cast<std::string>() + "\n";
  if (!text.empty()) c = parse_synth_config(text);
  return c;
}

// A U-Net with its configuration, for forecasting from Python.
struct PyModel {
  UNet3D<float> net;

  FloatArray forward(const FloatArray& x) const {
    if (x.ndim() != 5) throw ShapeError("input must be batch x time x rows x cols x channels");
    nn::Dims5 d{static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1)),
                static_cast<std::size_t>(x.shape(2)), static_cast<std::size_t>(x.shape(3)),
                static_cast<std::size_t>(x.shape(4))};
    const nn::Array5<float> in(d, std::vector<float>(x.data(), x.data() + d.size()));
    const auto y = net.forward(in);
    const auto& o = y.dims();
    FloatArray out({o.batch, o.time, o.rows, o.cols, o.channels});
    std::memcpy(out.mutable_data(), y.data(), y.size() * sizeof(float));
    return out;
  }
};

}  // namespace

PYBIND11_MODULE(_nowcast, m) {
  m.doc() = "Precipitation nowcasting core";
  m.attr("__version__") = std::string(kToolVersion);

  // Translators are tried newest first, so the base class goes in first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.attr("MISSING") = kMissing;

  // grids and formats
  m.def("categorize", [](double rate) { return std::string(category_name(categorize(rate))); });
  m.def("category_bounds", [](const std::string& c) {
    const auto b = category_bounds(category_arg(c));
    return std::make_pair(b.lower, b.upper);
  });
  m.def("read_grid", [](const std::filesystem::path& p) { return to_array(read_grid(p)); });
  m.def("write_grid", [](const std::filesystem::path& p, const FloatArray& a) { write_grid(p, to_grid(a)); });
  m.def("render_map", [](const FloatArray& a) {
    const auto bytes = render_map(to_grid(a));
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  });

  // normalization
  m.def("normalize_rate", py::vectorize(normalize_rate));
  m.def("denormalize_rate", py::vectorize(denormalize_rate));

  // verification
  m.def("contingency", [](const FloatArray& pred, const FloatArray& obs, const std::string& category) {
    const auto t = contingency(to_grid(pred), to_grid(obs), category_arg(category));
    return py::dict(py::arg("tp") = t.tp, py::arg("fp") = t.fp, py::arg("fn") = t.fn, py::arg("tn") = t.tn);
  });
  m.def("csi", [](std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn) {
    return csi({tp, fp, fn, tn});
  }, py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("tn") = 0);
  m.def("fss", [](const FloatArray& p, const FloatArray& o, const std::string& c, std::size_t n) {
    return fss_py(p, o, c, n, false);
  }, py::arg("pred"), py::arg("obs"), py::arg("category"), py::arg("n") = 3);
  m.def("fss_bruteforce", [](const FloatArray& p, const FloatArray& o, const std::string& c, std::size_t n) {
    return fss_py(p, o, c, n, true);
  }, py::arg("pred"), py::arg("obs"), py::arg("category"), py::arg("n") = 3);

  // synthetic data and preprocessing
  m.def("write_synthetic", [](const std::filesystem::path& dir, const py::kwargs& kw) {
    return write_synthetic(synth_config(kw), dir);
  }, py::arg("dir"), "Write a synthetic dataset; keyword arguments use the synth config keys.");
  m.def("synthetic_frames", [](const py::kwargs& kw) {
    py::list out;
    for (const auto& f : generate_synthetic(synth_config(kw))) out.append(to_array(f.radar));
    return out;
  }, "Radar frames of a synthetic sequence as arrays.");
  m.def("preprocess", [](const std::filesystem::path& index, const std::filesystem::path& out, double keep,
                         std::uint64_t seed, const std::map<std::string, std::string>& splits) {
    PreprocessOptions o;
    o.keep_fraction = keep;
    o.seed = seed;
    for (const auto& [name, text] : splits) o.splits[name] = parse_date_range(text);
    FrameStore store;
    const auto data = preprocess(read_index(index), o, store);
    write_prepared(data, out);
    return format_manifest(data.manifest);
  }, py::arg("index"), py::arg("out"), py::arg("keep") = 0.2, py::arg("seed") = 1,
     py::arg("splits") = std::map<std::string, std::string>{}, "Curate a dataset; returns the manifest text.");

  // models
  py::class_<PyModel>(m, "UNet")
      .def(py::init([](const std::string& variant, bool reference, std::size_t rows, std::size_t cols, int lead,
                       std::uint64_t seed) {
             const Variant v = parse_variant(variant);
             auto cfg = reference ? ModelConfig::reference(v) : ModelConfig::desk(v);
             if (rows) cfg.rows = rows;
             if (cols) cfg.cols = cols;
             cfg.lead_minutes = lead;
             return PyModel{UNet3D<float>(cfg, seed)};
           }),
           py::arg("variant") = "radar", py::arg("reference") = false, py::arg("rows") = 0, py::arg("cols") = 0,
           py::arg("lead") = 5, py::arg("seed") = 1)
      .def_property_readonly("param_count", [](const PyModel& p) { return p.net.param_count(); })
      .def_property_readonly("layout", [](const PyModel& p) {
        const auto l = p.net.layout();
        return py::dict(py::arg("convs") = l.convs, py::arg("pools") = l.pools, py::arg("upsamples") = l.upsamples,
                        py::arg("skips") = l.skips);
      })
      .def_property_readonly("config", [](const PyModel& p) { return format_model_config(p.net.config()); })
      .def("forward", &PyModel::forward, "Normalized forecast for a batch x 6 x rows x cols x channels array.")
      .def("save", [](const PyModel& p, const std::filesystem::path& path) {
        nn::write_checkpoint(path, p.net.to_tensors());
      })
      .def("load", [](PyModel& p, const std::filesystem::path& path) { p.net.load_tensors(nn::read_checkpoint(path)); });

  // reports
  m.def("format_report", [](const std::string& csv, bool paper_style) {
    return format_report_text(parse_report_csv(csv), paper_style);
  }, py::arg("csv"), py::arg("paper_style") = false, "Aligned table from report CSV text.");
}
