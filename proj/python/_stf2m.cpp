#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "stf2m/commands.hpp"
#include "stf2m/errors.hpp"
#include "stf2m/fuzzy.hpp"
#include "stf2m/meta.hpp"

namespace py = pybind11;
using namespace stf2m;

namespace {

fuzzy::ComponentCoding to_coding(const std::vector<double>& v) {
  if (v.size() != fuzzy::kNumComponents)
    throw ShapeError("expected 12 component values, got " + std::to_string(v.size()));
  fuzzy::ComponentCoding c;
  c.mode = fuzzy::CodingMode::Soft;
  std::copy(v.begin(), v.end(), c.values.begin());
  return c;
}

fuzzy::FuzzyConfig fuzzy_config(double lambda1, double lambda2) {
  fuzzy::FuzzyConfig f;
  f.lambda1 = lambda1;
  f.lambda2 = lambda2;
  return f;
}

RunConfig make_config(const std::map<std::string, std::string>& overrides) {
  RunConfig c;
  for (const auto& [k, v] : overrides) c.set(k, v);
  c.validate();
  return c;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["accuracy_emotion"] = m.accuracy_emotion;
  d["macro_recall"] = m.macro_recall;
  d["macro_recall_emotion"] = m.macro_recall_emotion;
  d["count"] = m.count;
  return d;
}

}  // namespace

PYBIND11_MODULE(_stf2m, m) {
  m.doc() = "Fuzzy emotion annotation and meta-learned encoder on synthetic long videos";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);

  m.def("class_names", [] {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < kNumClasses; ++i) out.push_back(class_name(EmotionClass::from_index(i)));
    return out;
  });

  m.def("tri_membership", &fuzzy::tri_membership, py::arg("u"), py::arg("center"), py::arg("half_width"));

  m.def(
      "eccentricity",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        return fuzzy::eccentricity(to_coding(a), to_coding(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "intensity_degree",
      [](const std::string& label, double e) {
        const auto c = parse_class_name(label);
        if (!c) throw ParameterError("unknown class '" + label + "'");
        return fuzzy::default_intensity_curves().eval(*c, e);
      },
      py::arg("label"), py::arg("eccentricity"));

  m.def(
      "memberships",
      [](const std::vector<double>& coding, double lambda2) {
        const auto r = fuzzy::fkis_class_memberships(to_coding(coding), fuzzy::default_rule_bank(),
                                                     fuzzy_config(0.4, lambda2));
        return std::vector<double>(r.membership.begin(), r.membership.end());
      },
      py::arg("coding"), py::arg("lambda2") = 0.4, "FKIS membership of each of the 18 classes.");

  m.def(
      "annotate",
      [](const std::vector<double>& coding, double lambda2) {
        const auto a = fuzzy::annotate(to_coding(coding), fuzzy::default_rule_bank(),
                                       fuzzy::default_intensity_curves(), fuzzy_config(0.4, lambda2));
        py::dict d;
        d["emotion"] = std::string(to_string(a.label.emotion));
        d["intensity"] = std::string(to_string(a.label.intensity));
        d["confidence"] = a.confidence;
        d["eccentricity"] = a.eccentricity;
        d["intensity_degree"] = a.intensity_degree;
        return d;
      },
      py::arg("coding"), py::arg("lambda2") = 0.4);

  m.def(
      "annotate_text",
      [](const std::string& text) {
        return cmd::annotate_text(text, fuzzy::default_rule_bank(), fuzzy::default_intensity_curves(), {});
      },
      py::arg("text"));

  m.def(
      "scalar_meta_gradient",
      [](double theta, double alpha, bool second_order) {
        const LossFn<double> square = [](const ad::ParamSet<double>& p) {
          return LossOutput<double>{ad::mul(p[0], p[0]), 0, 1};
        };
        ad::ParamSet<double> p;
        p.add("theta", ad::parameter<double>(ad::Matrix<double>::Constant(1, 1, theta)));
        MetaConfig cfg;
        cfg.inner_lr = alpha;
        cfg.tasks_per_batch = 1;
        cfg.mode = second_order ? MetaMode::SecondOrder : MetaMode::FirstOrder;
        return meta_gradient(p, {{"scalar", square, square}}, cfg).first[0].item();
      },
      py::arg("theta"), py::arg("alpha"), py::arg("second_order") = true,
      "Meta-gradient of L(theta) = theta^2 with one inner step of size alpha.");

  m.def(
      "config_text", [](const std::map<std::string, std::string>& overrides) { return make_config(overrides).to_text(); },
      py::arg("overrides") = std::map<std::string, std::string>{});

  m.def(
      "gen",
      [](const std::filesystem::path& out, const std::map<std::string, std::string>& overrides) {
        py::gil_scoped_release nogil;
        cmd::gen(make_config(overrides), out);
      },
      py::arg("out"), py::arg("config") = std::map<std::string, std::string>{});

  m.def(
      "train",
      [](const std::filesystem::path& bench, const std::filesystem::path& out,
         const std::map<std::string, std::string>& overrides) {
        py::gil_scoped_release nogil;
        cmd::train(make_config(overrides), bench, out);
      },
      py::arg("bench"), py::arg("out"), py::arg("config") = std::map<std::string, std::string>{});

  m.def(
      "evaluate",
      [](const std::filesystem::path& bench, const std::filesystem::path& checkpoint, const std::filesystem::path& out,
         const std::map<std::string, std::string>& overrides) {
        Metrics result;
        {
          py::gil_scoped_release nogil;
          result = cmd::eval(make_config(overrides), bench, checkpoint, out);
        }
        return metrics_dict(result);
      },
      py::arg("bench"), py::arg("checkpoint"), py::arg("out"),
      py::arg("config") = std::map<std::string, std::string>{});

  m.def(
      "robustness",
      [](const std::filesystem::path& bench, const std::filesystem::path& checkpoint, const std::filesystem::path& out,
         const std::map<std::string, std::string>& overrides) {
        std::vector<cmd::RobustnessRow> rows;
        {
          py::gil_scoped_release nogil;
          rows = cmd::robustness(make_config(overrides), bench, checkpoint, out);
        }
        py::list table;
        for (const auto& r : rows)
          table.append(py::make_tuple(std::string(to_string(r.kind)), r.level, r.accuracy, r.recall));
        return table;
      },
      py::arg("bench"), py::arg("checkpoint"), py::arg("out"),
      py::arg("config") = std::map<std::string, std::string>{});
}
