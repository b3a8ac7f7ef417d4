#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "distill_lab/bound_probe.hpp"
#include "distill_lab/checkpoint.hpp"
#include "distill_lab/data.hpp"
#include "distill_lab/distillers.hpp"
#include "distill_lab/errors.hpp"
#include "distill_lab/experiment.hpp"

namespace py = pybind11;
namespace dl = distill_lab;

namespace {

py::array_t<double> to_array(const dl::Tensor& t) {
  py::array_t<double> out({t.dim(0), t.dim(1)});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

dl::Dataset dataset_from_arrays(py::array_t<double, py::array::c_style | py::array::forcecast> x,
                                py::array_t<int, py::array::c_style | py::array::forcecast> y,
                                std::size_t classes) {
  if (x.ndim() != 2 || y.ndim() != 1 || x.shape(0) != y.shape(0)) {
    throw dl::DimensionError("expected x of shape [n, d] and y of shape [n]");
  }
  dl::Dataset d;
  d.dim = static_cast<std::size_t>(x.shape(1));
  d.class_count = classes;
  d.features.assign(x.data(), x.data() + x.size());
  d.labels.assign(y.data(), y.data() + y.size());
  d.validate();
  return d;
}

py::list trace_to_list(const std::vector<dl::MetricsRecord>& trace) {
  py::list out;
  for (const auto& r : trace) {
    py::dict row;
    row["epoch"] = r.epoch;
    for (const auto& t : r.losses) row[py::str(t.name)] = t.value;
    row["train_acc"] = r.train_acc;
    row["test_acc"] = r.test_acc;
    row["frob_dist"] = r.frob_dist ? py::cast(*r.frob_dist) : py::none();
    row["lr"] = r.lr_current;
    out.append(row);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_distill_lab, m) {
  m.doc() = "Knowledge distillation on small MLPs";

  // Translators run newest first, so the base class goes in before its subclasses.
  auto base = py::register_exception<dl::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<dl::ConfigError>(m, "ConfigError", base);
  py::register_exception<dl::DivergenceError>(m, "DivergenceError", base);
  py::register_exception<dl::CheckpointError>(m, "CheckpointError", base);

  py::class_<dl::Dataset>(m, "Dataset")
      .def(py::init(&dataset_from_arrays), py::arg("x"), py::arg("y"), py::arg("classes"))
      .def_property_readonly("x", [](const dl::Dataset& d) { return to_array(d.inputs()); })
      .def_property_readonly("y", [](const dl::Dataset& d) { return py::array_t<int>(d.labels.size(), d.labels.data()); })
      .def_readonly("dim", &dl::Dataset::dim)
      .def_readonly("classes", &dl::Dataset::class_count)
      .def("__len__", &dl::Dataset::size);

  py::class_<dl::DatasetPair>(m, "DatasetPair")
      .def(py::init<dl::Dataset, dl::Dataset>(), py::arg("train"), py::arg("test"))
      .def_readonly("train", &dl::DatasetPair::train)
      .def_readonly("test", &dl::DatasetPair::test);

  m.def(
      "make_task",
      [](const std::string& kind, std::size_t classes, std::size_t per_class, double noise, double turns,
         std::uint64_t seed, std::size_t test_per_class, bool standardize) {
        dl::TaskSpec s;
        s.kind = kind == "blobs" ? dl::TaskKind::blobs : dl::TaskKind::spirals;
        if (kind != "blobs" && kind != "spirals") throw dl::ConfigError("kind must be 'blobs' or 'spirals'");
        s.classes = classes;
        s.per_class = per_class;
        s.noise = noise;
        s.turns = turns;
        s.seed = seed;
        s.test_per_class = test_per_class ? test_per_class : per_class;
        s.standardize = standardize;
        return dl::make_task(s);
      },
      py::arg("kind") = "spirals", py::arg("classes") = 3, py::arg("per_class") = 500, py::arg("noise") = 0.35,
      py::arg("turns") = 1.75, py::arg("seed") = 0, py::arg("test_per_class") = 0, py::arg("standardize") = true);
  m.def("load_dataset", [](const std::filesystem::path& p) { return dl::load_dataset(p); });
  m.def("save_dataset", &dl::save_dataset);

  py::class_<dl::Network>(m, "Network")
      .def_property_readonly("classes", &dl::Network::classes)
      .def_property_readonly("head_dim", &dl::Network::head_dim)
      .def_property_readonly("has_adapter", [](const dl::Network& n) { return n.adapter.has_value(); })
      .def(
          "logits",
          [](const dl::Network& n, py::array_t<double, py::array::c_style | py::array::forcecast> x) {
            if (x.ndim() != 2) throw dl::DimensionError("expected x of shape [n, d]");
            auto t = dl::Tensor::from({static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1))},
                                      std::vector<double>(x.data(), x.data() + x.size()));
            dl::NoGradGuard guard;
            return to_array(n.forward(t).logits);
          },
          py::arg("x"))
      .def("accuracy", [](const dl::Network& n, const dl::Dataset& d) { return dl::evaluate(n, d); })
      .def(
          "save",
          [](const dl::Network& n, const std::filesystem::path& path, std::uint64_t seed) {
            dl::Checkpoint c;
            c.meta.class_count = n.classes();
            c.meta.seed = seed;
            c.network = n;
            dl::save_checkpoint(path, c);
          },
          py::arg("path"), py::arg("seed") = 0);
  m.def("init_network", &dl::init_network, py::arg("widths"), py::arg("classes"), py::arg("seed"));
  m.def("load_network", &dl::load_network);
  m.def("same_parameters", py::overload_cast<const dl::Network&, const dl::Network&>(&dl::same_parameters));

  py::class_<dl::TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &dl::TrainConfig::epochs)
      .def_readwrite("batch_size", &dl::TrainConfig::batch_size)
      .def_readwrite("lr", &dl::TrainConfig::lr)
      .def_readwrite("momentum", &dl::TrainConfig::momentum)
      .def_readwrite("nesterov", &dl::TrainConfig::nesterov)
      .def_readwrite("weight_decay", &dl::TrainConfig::weight_decay)
      .def_readwrite("milestones", &dl::TrainConfig::milestones)
      .def_readwrite("gamma", &dl::TrainConfig::gamma)
      .def_readwrite("seed", &dl::TrainConfig::seed)
      .def_readwrite("shuffle", &dl::TrainConfig::shuffle)
      .def("validate", &dl::TrainConfig::validate);
  m.def("lr_at", &dl::lr_at, py::arg("epoch"), py::arg("cfg"));

  py::class_<dl::DistillConfig>(m, "DistillConfig")
      .def(py::init([](const std::string& strategy) { return dl::DistillConfig::defaults(dl::parse_strategy(strategy)); }),
           py::arg("strategy") = "ce_only")
      .def_property(
          "strategy", [](const dl::DistillConfig& c) { return std::string(dl::to_string(c.strategy)); },
          [](dl::DistillConfig& c, const std::string& s) { c.strategy = dl::parse_strategy(s); })
      .def_property(
          "matching_loss", [](const dl::DistillConfig& c) { return std::string(dl::to_string(c.matching_loss)); },
          [](dl::DistillConfig& c, const std::string& s) { c.matching_loss = dl::parse_loss_kind(s); })
      .def_readwrite("lambda_", &dl::DistillConfig::lambda)
      .def_readwrite("tau", &dl::DistillConfig::tau)
      .def_readwrite("alpha", &dl::DistillConfig::alpha)
      .def_readwrite("beta", &dl::DistillConfig::beta)
      .def_readwrite("alpha_ce", &dl::DistillConfig::alpha_ce)
      .def_readwrite("connector_depth", &dl::DistillConfig::connector_depth)
      .def("validate", &dl::DistillConfig::validate);

  py::class_<dl::DistillOutcome>(m, "DistillOutcome")
      .def_readonly("student", &dl::DistillOutcome::student)
      .def_property_readonly("trace", [](const dl::DistillOutcome& o) { return trace_to_list(o.trace); })
      .def_readonly("initial_frob_dist", &dl::DistillOutcome::initial_frob_dist)
      .def_readonly("steps", &dl::DistillOutcome::steps)
      .def_property_readonly("final_test_acc", &dl::DistillOutcome::final_test_acc)
      .def_property_readonly("final_train_acc", &dl::DistillOutcome::final_train_acc);

  m.def("train_teacher", &dl::train_teacher, py::arg("widths"), py::arg("data"), py::arg("cfg"),
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "distill",
      [](const std::vector<std::size_t>& widths, const dl::Network* teacher, const dl::DatasetPair& data,
         const dl::DistillConfig& dcfg, const dl::TrainConfig& cfg) {
        return dl::distill(widths, teacher, data, dcfg, cfg);
      },
      py::arg("student_widths"), py::arg("teacher"), py::arg("data"), py::arg("dcfg"), py::arg("cfg"),
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "verify_bound",
      [](const dl::Network& teacher, const dl::Network& student, const dl::Dataset& data, const std::string& norm) {
        const auto r = dl::verify_bound(teacher, student, data, dl::parse_norm_kind(norm));
        py::dict d;
        d["eps_teacher"] = r.eps_teacher;
        d["eps_student"] = r.eps_student;
        d["delta1"] = r.delta1;
        d["delta2"] = r.delta2;
        d["rhs"] = r.rhs;
        d["holds_aggregate"] = r.holds_aggregate;
        d["per_sample_violations"] = r.per_sample_violations;
        d["norm_kind"] = norm;
        d["used_connector_for_delta2"] = r.used_connector_for_delta2;
        return d;
      },
      py::arg("teacher"), py::arg("student"), py::arg("data"), py::arg("norm") = "l1_prob");
  m.def(
      "frobenius_distance",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
         py::array_t<double, py::array::c_style | py::array::forcecast> b) {
        if (a.ndim() != b.ndim()) throw dl::ConfigError("frobenius_distance needs equal shapes");
        for (py::ssize_t i = 0; i < a.ndim(); ++i)
          if (a.shape(i) != b.shape(i)) throw dl::ConfigError("frobenius_distance needs equal shapes");
        return dl::frobenius_sum({a.data(), static_cast<std::size_t>(a.size())},
                                 {b.data(), static_cast<std::size_t>(b.size())});
      });
  m.def("run_distill_config", [](const std::filesystem::path& path, std::size_t workers) {
    const auto cfg = dl::load_experiment_config(path);
    std::vector<double> accs;
    {
      py::gil_scoped_release release;
      for (const auto& r : dl::run_distill(cfg, workers)) accs.push_back(r.final_test_acc);
    }
    return accs;
  }, py::arg("path"), py::arg("workers") = 1);
}
