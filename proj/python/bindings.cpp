#include "crowdflow/ablation.hpp"
#include "crowdflow/config.hpp"
#include "crowdflow/export.hpp"
#include "crowdflow/gradcheck.hpp"
#include "crowdflow/train.hpp"

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace crowdflow;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
    Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Tensor from_numpy(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    Tensor t(shape);
    std::copy(a.data(), a.data() + a.size(), t.raw());
    return t;
}

ModelInput input_of(const Sample& s, const DatasetManifest& m) { return to_model_input(s, m); }

} // namespace

PYBIND11_MODULE(_crowdflow, m) {
    m.doc() = "Attentive crowd flow prediction on gridded inflow/outflow maps";

    py::register_exception<DataError>(m, "DataError", PyExc_IOError);
    py::register_exception<InvalidState>(m, "InvalidState", PyExc_RuntimeError);

    py::enum_<Variant>(m, "Variant")
        .value("PCNN", Variant::PCNN)
        .value("SCNN", Variant::SCNN)
        .value("PRNN_NO_ATTN", Variant::PRNN_NO_ATTN)
        .value("PRNN", Variant::PRNN)
        .value("SRNN_NO_ATTN", Variant::SRNN_NO_ATTN)
        .value("SRNN", Variant::SRNN)
        .value("SPN_NO_FUSION", Variant::SPN_NO_FUSION)
        .value("SPN", Variant::SPN);
    m.def("variant_name", [](Variant v) { return std::string(variant_name(v)); });
    m.def("parse_variant", [](const std::string& s) { return parse_variant(s); });
    m.def("all_variants", [] { return std::vector<Variant>(kAllVariants.begin(), kAllVariants.end()); });

    py::class_<SpnConfig>(m, "SpnConfig")
        .def(py::init<>())
        .def_readwrite("height", &SpnConfig::height)
        .def_readwrite("width", &SpnConfig::width)
        .def_readwrite("seq_len", &SpnConfig::seq_len)
        .def_readwrite("period_len", &SpnConfig::period_len)
        .def_readwrite("residual_units", &SpnConfig::residual_units)
        .def_readwrite("intervals_per_day", &SpnConfig::intervals_per_day)
        .def_readwrite("ext_len", &SpnConfig::ext_len)
        .def_readwrite("channels", &SpnConfig::channels)
        .def_readwrite("ext_hidden", &SpnConfig::ext_hidden)
        .def_readwrite("fusion_hidden", &SpnConfig::fusion_hidden)
        .def("to_json", [](const SpnConfig& c) { return config_to_json(c); });
    m.def("taxibj_config", &taxibj_config);
    m.def("bikenyc_config", &bikenyc_config);

    py::class_<SynthConfig>(m, "SynthConfig")
        .def(py::init<>())
        .def_readwrite("days", &SynthConfig::days)
        .def_readwrite("intervals_per_day", &SynthConfig::intervals_per_day)
        .def_readwrite("height", &SynthConfig::height)
        .def_readwrite("width", &SynthConfig::width)
        .def_readwrite("k_holiday", &SynthConfig::k_holiday)
        .def_readwrite("test_days", &SynthConfig::test_days)
        .def_readwrite("base", &SynthConfig::base)
        .def_readwrite("amplitude", &SynthConfig::amplitude)
        .def_readwrite("rho", &SynthConfig::rho)
        .def_readwrite("noise_sigma", &SynthConfig::noise_sigma)
        .def_readwrite("rain_probability", &SynthConfig::rain_probability)
        .def_readwrite("rain_persistence", &SynthConfig::rain_persistence)
        .def_readwrite("rain_effect", &SynthConfig::rain_effect);

    py::class_<DatasetManifest>(m, "DatasetManifest")
        .def_readonly("height", &DatasetManifest::height)
        .def_readonly("width", &DatasetManifest::width)
        .def_readonly("intervals_per_day", &DatasetManifest::intervals_per_day)
        .def_readonly("k_holiday", &DatasetManifest::k_holiday)
        .def_readonly("flow_min", &DatasetManifest::flow_min)
        .def_readonly("flow_max", &DatasetManifest::flow_max)
        .def_readonly("split_index", &DatasetManifest::split_index)
        .def_readonly("record_count", &DatasetManifest::record_count)
        .def_property_readonly("ext_len", &DatasetManifest::ext_len);

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("manifest", &Dataset::manifest)
        .def("__len__", [](const Dataset& d) { return d.flows.size(); })
        .def("flow", [](const Dataset& d, std::size_t i) { return to_numpy(d.flows.at(i).values); }, py::arg("index"))
        .def("t_index", [](const Dataset& d, std::size_t i) { return d.flows.at(i).t_index; }, py::arg("index"))
        .def("external", [](const Dataset& d, std::size_t i) { return to_numpy(encode_external(d.externals.at(i))); },
             py::arg("index"));
    m.def("synthesize", &synthesize, py::arg("config"), py::arg("seed"));
    m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));
    m.def("load_dataset", &load_dataset, py::arg("path"));

    m.def("normalize_flow", [](const Array& a, double lo, double hi) { return to_numpy(normalize_flow(from_numpy(a), lo, hi)); },
          py::arg("raw"), py::arg("min"), py::arg("max"));
    m.def("denormalize_flow",
          [](const Array& a, double lo, double hi) { return to_numpy(denormalize_flow(from_numpy(a), lo, hi)); },
          py::arg("normalized"), py::arg("min"), py::arg("max"));

    py::class_<Sample>(m, "Sample")
        .def_readonly("target_index", &Sample::target_index)
        .def_readonly("day", &Sample::day)
        .def_readonly("interval", &Sample::interval)
        .def_property_readonly("target", [](const Sample& s) { return to_numpy(s.target.values); });

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("seq_len", &TrainConfig::seq_len)
        .def_readwrite("period_len", &TrainConfig::period_len)
        .def_readwrite("residual_units", &TrainConfig::residual_units)
        .def_readwrite("channels", &TrainConfig::channels)
        .def_readwrite("ext_hidden", &TrainConfig::ext_hidden)
        .def_readwrite("fusion_hidden", &TrainConfig::fusion_hidden)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("validation_fraction", &TrainConfig::validation_fraction)
        .def_readwrite("train_limit", &TrainConfig::train_limit)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("checkpoint_dir", &TrainConfig::checkpoint_dir);

    py::class_<SampleSplit>(m, "SampleSplit")
        .def_readonly("train", &SampleSplit::train)
        .def_readonly("validation", &SampleSplit::validation)
        .def_readonly("test", &SampleSplit::test)
        .def_readonly("skipped", &SampleSplit::skipped);
    m.def(
        "split_samples",
        [](const Dataset& ds, const TrainConfig& c) {
            return split_samples(ds, make_window(ds.manifest, c), c.validation_fraction);
        },
        py::arg("dataset"), py::arg("config"));

    py::class_<Model>(m, "Model")
        .def_readonly("config", &Model::config)
        .def_readonly("variant", &Model::variant)
        .def("parameter_names",
             [](Model& model) {
                 std::vector<std::string> names;
                 for (Parameter* p : model.params.list()) {
                     names.push_back(p->name);
                 }
                 return names;
             })
        .def("parameter", [](Model& model, const std::string& name) {
            for (Parameter* p : model.params.list()) {
                if (p->name == name) {
                    return to_numpy(p->value);
                }
            }
            throw py::key_error(name);
        });
    m.def("make_model", &make_model, py::arg("config"), py::arg("variant"), py::arg("seed"));
    m.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    m.def(
        "predict",
        [](Model& model, const Sample& s, const DatasetManifest& manifest) {
            return to_numpy(
                denormalize_flow(predict(input_of(s, manifest), model), manifest.flow_min, manifest.flow_max));
        },
        py::arg("model"), py::arg("sample"), py::arg("manifest"));
    m.def(
        "forward_trace",
        [](Model& model, const Sample& s, const DatasetManifest& manifest) {
            Tape tape;
            const ForwardResult r = forward(tape, input_of(s, manifest), model);
            py::dict out;
            out["prediction"] = to_numpy(r.prediction.value());
            if (r.fusion_weight) {
                out["fusion_weight"] = r.fusion_weight->value()[0];
            }
            for (const auto& [key, acfm] : {std::pair{"seq_attention", &r.seq}, std::pair{"per_attention", &r.per}}) {
                if (*acfm) {
                    py::list maps;
                    for (const Tensor& a : (*acfm)->trace().attention) {
                        maps.append(to_numpy(a));
                    }
                    out[key] = maps;
                }
            }
            return out;
        },
        py::arg("model"), py::arg("sample"), py::arg("manifest"));

    py::class_<TrainReport>(m, "TrainReport")
        .def_readonly("variant", &TrainReport::variant)
        .def_readonly("train_samples", &TrainReport::train_samples)
        .def_readonly("validation_samples", &TrainReport::validation_samples)
        .def_readonly("test_samples", &TrainReport::test_samples)
        .def_readonly("initial_loss", &TrainReport::initial_loss)
        .def_readonly("epoch_loss", &TrainReport::epoch_loss)
        .def_readonly("epoch_validation_rmse", &TrainReport::epoch_validation_rmse)
        .def_readonly("best_epoch", &TrainReport::best_epoch)
        .def_readonly("final_train_rmse", &TrainReport::final_train_rmse)
        .def_readonly("wall_seconds", &TrainReport::wall_seconds)
        .def("to_json", &TrainReport::to_json, py::arg("include_timing") = true);
    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("model", &TrainResult::model)
        .def_readonly("best", &TrainResult::best)
        .def_readonly("report", &TrainResult::report);
    m.def(
        "train",
        [](const Dataset& ds, const TrainConfig& c, Variant v, const EpochCallback& cb) {
            py::gil_scoped_release release;
            EpochCallback guarded;
            if (cb) {
                guarded = [&cb](std::size_t e, double loss, std::optional<double> val) {
                    py::gil_scoped_acquire acquire;
                    cb(e, loss, val);
                };
            }
            return train(ds, c, v, guarded);
        },
        py::arg("dataset"), py::arg("config"), py::arg("variant") = Variant::SPN, py::arg("on_epoch") = nullptr);
    m.def(
        "evaluate_rmse",
        [](Model& model, const std::vector<Sample>& samples, const DatasetManifest& manifest, bool clamp) {
            return evaluate_rmse(model, samples, manifest, {clamp});
        },
        py::arg("model"), py::arg("samples"), py::arg("manifest"), py::arg("clamp_nonnegative") = false);

    py::class_<GradcheckReport>(m, "GradcheckReport")
        .def_readonly("variant", &GradcheckReport::variant)
        .def_readonly("max_rel_error", &GradcheckReport::max_rel_error)
        .def_readonly("threshold", &GradcheckReport::threshold)
        .def_property_readonly("passed", &GradcheckReport::passed)
        .def_property_readonly("entries",
                               [](const GradcheckReport& r) {
                                   py::list out;
                                   for (const auto& e : r.entries) {
                                       out.append(py::make_tuple(e.name, e.checked, e.max_rel_error));
                                   }
                                   return out;
                               })
        .def("__str__", [](const GradcheckReport& r) {
            std::ostringstream s;
            r.print(s);
            return s.str();
        });
    m.def(
        "gradcheck",
        [](const SpnConfig& c, Variant v, std::uint64_t seed, std::size_t max_coords) {
            GradcheckOptions o;
            o.max_coords = max_coords;
            return gradcheck(c, v, seed, o);
        },
        py::arg("config"), py::arg("variant"), py::arg("seed") = 0, py::arg("max_coords") = 128);

    m.def("gray_level", &gray_level, py::arg("value"));
    m.def("render_pgm", [](const Array& a) { return render_pgm(from_numpy(a)); }, py::arg("map"));
    m.def(
        "export_attention",
        [](const std::vector<Array>& maps, const std::filesystem::path& dir) {
            AcfmTrace t;
            for (const auto& a : maps) {
                t.attention.push_back(from_numpy(a));
            }
            return export_attention(t, dir);
        },
        py::arg("maps"), py::arg("path"));

    py::class_<FusionBin>(m, "FusionBin")
        .def_readonly("interval", &FusionBin::interval)
        .def_readonly("mean_r", &FusionBin::mean_r)
        .def_readonly("count", &FusionBin::count);
    m.def("fusion_profile", &fusion_profile, py::arg("model"), py::arg("samples"), py::arg("manifest"));
}
