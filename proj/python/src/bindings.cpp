#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <stdexcept>

#include "univarfl/config.hpp"
#include "univarfl/experiment.hpp"
#include "univarfl/gradcheck.hpp"
#include "univarfl/metrics.hpp"
#include "univarfl/numeric.hpp"
#include "univarfl/objectives.hpp"

namespace py = pybind11;
using namespace univarfl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  const auto r = static_cast<std::size_t>(a.shape(0));
  const auto c = static_cast<std::size_t>(a.shape(1));
  return Matrix(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const Matrix& m) {
  Array out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

py::tuple loss_pair(const MatrixLoss& l) { return py::make_tuple(l.loss, to_array(l.grad)); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "UniVarFL federated simulation core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("softmax_rows", [](const Array& logits) { return to_array(softmax_rows(to_matrix(logits))); });
  m.def("normalize_rows", [](const Array& u) {
    std::vector<double> norms;
    const Matrix z = normalize_rows(to_matrix(u), norms);
    return py::make_tuple(to_array(z), norms);
  });
  m.def("singular_values", [](const Array& a) { return singular_values(to_matrix(a)); });
  m.def("spectral_entropy", &spectral_entropy, py::arg("sigma"));

  m.def("variance_floor", [](std::size_t classes) { return variance_threshold(classes).c; }, py::arg("classes"));
  m.def(
      "variance_regularizer",
      [](const Array& P) {
        const Matrix p = to_matrix(P);
        return loss_pair(variance_regularizer(p, variance_threshold(p.cols)));
      },
      py::arg("probs"), "returns (loss, gradient with respect to probs)");
  m.def(
      "hyperspherical_energy",
      [](const Array& Z, double epsilon) { return loss_pair(hyperspherical_energy(to_matrix(Z), epsilon)); },
      py::arg("features"), py::arg("epsilon") = kDefaultEnergyEpsilon);
  m.def(
      "cross_entropy",
      [](const Array& P, const std::vector<int>& labels) { return loss_pair(cross_entropy(to_matrix(P), labels)); },
      py::arg("probs"), py::arg("labels"));

  m.def(
      "gradcheck",
      [](std::uint64_t seed, const std::string& fault) {
        GradcheckOptions opt;
        opt.seed = seed;
        opt.fault = fault;
        py::list out;
        for (const auto& t : run_gradcheck(opt)) {
          py::dict d;
          d["name"] = t.name;
          d["passed"] = t.passed;
          d["max_rel_error"] = t.comparison.max_rel_error;
          d["max_abs_error"] = t.comparison.max_abs_error;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 1, py::arg("inject_fault") = "");

  m.def("canonical_config", [](const std::string& text) { return canonical_text(parse_config_text(text)); },
        py::arg("text"));
  m.def("config_digest", [](const std::string& text) { return digest_hex(config_digest(parse_config_text(text))); },
        py::arg("text"));
  m.def(
      "partition_report",
      [](const std::string& text, std::uint64_t seed) { return partition_report(parse_config_text(text), seed); },
      py::arg("text"), py::arg("seed") = 1);
  m.def(
      "run",
      [](const std::string& text, const std::filesystem::path& out_dir, std::vector<std::uint64_t> seeds,
         std::size_t threads, bool force) {
        ExperimentConfig cfg = parse_config_text(text);
        cfg.out_dir = out_dir.string();
        if (!seeds.empty()) cfg.seeds = std::move(seeds);
        Summary s;
        {
          py::gil_scoped_release release;
          s = cmd_run(cfg, RunOptions{threads, force});
        }
        py::dict d;
        py::list per_seed;
        for (const auto& r : s.seeds) per_seed.append(py::make_tuple(r.seed, r.final_accuracy));
        d["seeds"] = per_seed;
        d["mean"] = s.mean;
        d["std"] = s.std;
        return d;
      },
      py::arg("text"), py::arg("out_dir"), py::arg("seeds") = std::vector<std::uint64_t>{}, py::arg("threads") = 1,
      py::arg("force") = false);
}
