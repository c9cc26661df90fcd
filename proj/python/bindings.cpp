// Copyright 2026 The maskedit Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <optional>
#include <sstream>

#include "maskedit/backend.hpp"
#include "maskedit/cli.hpp"
#include "maskedit/config.hpp"
#include "maskedit/error.hpp"
#include "maskedit/evaluation.hpp"
#include "maskedit/image.hpp"
#include "maskedit/mask.hpp"
#include "maskedit/pipeline.hpp"
#include "maskedit/toy_backend.hpp"

namespace py = pybind11;
using namespace maskedit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::handle& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

Image image_from_array(const Array& a) {
  if (a.ndim() != 3) throw Error(ErrorCode::kDimension, "image array must be H x W x C");
  Image im;
  im.height = static_cast<int>(a.shape(0));
  im.width = static_cast<int>(a.shape(1));
  im.channels = static_cast<int>(a.shape(2));
  im.pixels.assign(a.data(), a.data() + a.size());
  return im;
}

Array image_to_array(const Image& im) {
  Array out({im.height, im.width, im.channels});
  std::copy(im.pixels.begin(), im.pixels.end(), out.mutable_data());
  return out;
}

SpatialMask mask_from_array(const Array& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kDimension, "mask array must be H x W");
  return SpatialMask(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                     std::vector<double>(a.data(), a.data() + a.size()));
}

Array mask_to_array(const SpatialMask& m) {
  Array out({m.height(), m.width()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

LatentTensor latent_from_array(const Array& a, int timestep) {
  if (a.ndim() != 4) throw Error(ErrorCode::kDimension, "latent array must be N x C x H x W");
  const LatentShape shape{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
                          static_cast<int>(a.shape(3))};
  return LatentTensor(shape, std::vector<double>(a.data(), a.data() + a.size()), timestep);
}

Array latent_to_array(const LatentTensor& z) {
  const auto& s = z.shape();
  Array out({s.batch, s.channels, s.height, s.width});
  std::copy(z.data().begin(), z.data().end(), out.mutable_data());
  return out;
}

std::vector<FeatureMatrix> to_features(const std::vector<Matrix>& ms) {
  std::vector<FeatureMatrix> out;
  out.reserve(ms.size());
  for (const auto& m : ms) out.emplace_back(m);
  return out;
}

std::vector<Matrix> to_matrices(const std::vector<FeatureMatrix>& fs) {
  std::vector<Matrix> out;
  out.reserve(fs.size());
  for (const auto& f : fs) out.push_back(f.data());
  return out;
}

// Python subclasses of Backend implement descriptor(), encode_text(),
// encode_image(), decode_latent() and _predict_noise().
class PyBackend : public Backend {
 public:
  const BackendDescriptor& descriptor() const override {
    if (!descriptor_) {
      py::gil_scoped_acquire gil;
      py::function f = py::get_override(static_cast<const Backend*>(this), "descriptor");
      if (!f) throw Error(ErrorCode::kInstrumentation, "Python backend does not implement descriptor()");
      // Cast from an lvalue: pybind11 moves out of a sole-owner temporary,
      // which would empty a descriptor borrowed from another backend.
      const py::object result = f();
      BackendDescriptor d = result.cast<BackendDescriptor>();
      d.validate();
      descriptor_ = std::move(d);
    }
    return *descriptor_;
  }
  PromptEmbedding encode_text(const std::string& prompt, const std::string& object_word) override {
    PYBIND11_OVERRIDE_PURE(PromptEmbedding, Backend, encode_text, prompt, object_word);
  }
  LatentTensor encode_image(const Image& image) override {
    PYBIND11_OVERRIDE_PURE(LatentTensor, Backend, encode_image, image);
  }
  Image decode_latent(const LatentTensor& latent) override {
    PYBIND11_OVERRIDE_PURE(Image, Backend, decode_latent, latent);
  }

 protected:
  NoiseResult do_predict_noise(const LatentTensor& z, int timestep, const PromptEmbedding& cond,
                               const ForwardOptions& options) override {
    PYBIND11_OVERRIDE_PURE_NAME(NoiseResult, Backend, "_predict_noise", do_predict_noise, z, timestep, cond, options);
  }

 private:
  mutable std::optional<BackendDescriptor> descriptor_;
};

class ProgressObserver : public EditObserver {
 public:
  explicit ProgressObserver(py::function fn) : fn_(std::move(fn)) {}
  void on_step(int completed, int total) override { fn_(completed, total); }

 private:
  py::function fn_;
};

std::unique_ptr<EmbeddingClient> embedding_client(const std::optional<std::string>& endpoint) {
  if (endpoint && !endpoint->empty()) return std::make_unique<HttpEmbeddingClient>(*endpoint);
  return std::make_unique<ProxyEmbeddingClient>();
}

std::unique_ptr<PerceptualMetricClient> perceptual_client(const std::optional<std::string>& endpoint) {
  if (endpoint && !endpoint->empty()) return std::make_unique<HttpPerceptualMetricClient>(*endpoint);
  return std::make_unique<ProxyPerceptualClient>();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "maskedit core: attention controllers, inversion and the editing pipeline";
  m.attr("__version__") = "0.1.0";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&]() { return py::exception<Error>(m, "MaskEditError", PyExc_RuntimeError); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object type = error_type.get_stored();
      py::object instance = type(py::str(e.what()));
      instance.attr("code") = error_code_name(e.code());
      PyErr_SetObject(type.ptr(), instance.ptr());
    }
  });

  py::enum_<AttentionKind>(m, "AttentionKind").value("SELF", AttentionKind::kSelf).value("CROSS", AttentionKind::kCross);

  py::class_<Grid>(m, "Grid")
      .def(py::init([](int h, int w) { return Grid{h, w}; }), py::arg("h"), py::arg("w"))
      .def_readwrite("h", &Grid::h)
      .def_readwrite("w", &Grid::w)
      .def("__eq__", [](const Grid& a, const Grid& b) { return a == b; })
      .def("__repr__", [](const Grid& g) { return "Grid(" + std::to_string(g.h) + ", " + std::to_string(g.w) + ")"; });

  py::class_<AttentionSite>(m, "AttentionSite")
      .def(py::init([](int step_index, int layer_index, AttentionKind kind, Grid grid) {
             return AttentionSite{step_index, layer_index, kind, grid};
           }),
           py::arg("step_index"), py::arg("layer_index"), py::arg("kind"), py::arg("token_grid"))
      .def_readonly("step_index", &AttentionSite::step_index)
      .def_readonly("layer_index", &AttentionSite::layer_index)
      .def_readonly("kind", &AttentionSite::kind)
      .def_readonly("token_grid", &AttentionSite::token_grid)
      .def("__repr__", &AttentionSite::describe);

  py::class_<AttentionLayerInfo>(m, "AttentionLayerInfo")
      .def(py::init([](AttentionKind kind, int layer_index, Grid grid, int heads, int head_dim) {
             return AttentionLayerInfo{kind, layer_index, grid, heads, head_dim};
           }),
           py::arg("kind"), py::arg("layer_index"), py::arg("token_grid"), py::arg("heads"), py::arg("head_dim"))
      .def_readonly("kind", &AttentionLayerInfo::kind)
      .def_readonly("layer_index", &AttentionLayerInfo::layer_index)
      .def_readonly("token_grid", &AttentionLayerInfo::token_grid)
      .def_readonly("heads", &AttentionLayerInfo::heads)
      .def_readonly("head_dim", &AttentionLayerInfo::head_dim);

  py::class_<BackendDescriptor>(m, "BackendDescriptor")
      .def(py::init([](std::string name, std::vector<int> latent_shape, int image_height, int image_width,
                       std::vector<AttentionLayerInfo> sites, std::string fingerprint) {
             if (latent_shape.size() != 4) throw Error(ErrorCode::kDimension, "latent_shape must have 4 entries");
             BackendDescriptor d;
             d.name = std::move(name);
             d.latent_shape = {latent_shape[0], latent_shape[1], latent_shape[2], latent_shape[3]};
             d.image_height = image_height;
             d.image_width = image_width;
             d.sites = std::move(sites);
             d.fingerprint = std::move(fingerprint);
             return d;
           }),
           py::arg("name"), py::arg("latent_shape"), py::arg("image_height"), py::arg("image_width"), py::arg("sites"),
           py::arg("fingerprint"))
      .def_readonly("name", &BackendDescriptor::name)
      .def_property_readonly("latent_shape",
                             [](const BackendDescriptor& d) {
                               const auto& s = d.latent_shape;
                               return py::make_tuple(s.batch, s.channels, s.height, s.width);
                             })
      .def_readonly("image_height", &BackendDescriptor::image_height)
      .def_readonly("image_width", &BackendDescriptor::image_width)
      .def_readonly("sites", &BackendDescriptor::sites)
      .def_readonly("fingerprint", &BackendDescriptor::fingerprint)
      .def("self_attention_layer_count", &BackendDescriptor::self_attention_layer_count)
      .def("cross_attention_layer_count", &BackendDescriptor::cross_attention_layer_count)
      .def("validate", &BackendDescriptor::validate)
      .def("alphas_cumprod", [](const BackendDescriptor& d) {
        std::vector<double> out;
        for (int t = 0; t < d.schedule.train_steps(); ++t) out.push_back(d.schedule.alpha_at(t));
        return out;
      });

  py::class_<LatentTensor>(m, "LatentTensor")
      .def(py::init(&latent_from_array), py::arg("array"), py::arg("timestep") = LatentTensor::kCleanTimestep)
      .def("numpy", &latent_to_array)
      .def_property_readonly("timestep", &LatentTensor::timestep_tag)
      .def_property_readonly("shape", [](const LatentTensor& z) {
        const auto& s = z.shape();
        return py::make_tuple(s.batch, s.channels, s.height, s.width);
      });
  m.attr("CLEAN_TIMESTEP") = LatentTensor::kCleanTimestep;

  py::class_<Image>(m, "Image")
      .def(py::init(&image_from_array), py::arg("array"))
      .def("numpy", &image_to_array)
      .def_readonly("height", &Image::height)
      .def_readonly("width", &Image::width)
      .def_readonly("channels", &Image::channels);

  py::class_<SpatialMask>(m, "SpatialMask")
      .def(py::init(&mask_from_array), py::arg("array"))
      .def("numpy", &mask_to_array)
      .def_property_readonly("height", &SpatialMask::height)
      .def_property_readonly("width", &SpatialMask::width)
      .def("count_ones", &SpatialMask::count_ones);

  py::class_<PromptEmbedding>(m, "PromptEmbedding")
      .def(py::init([](Matrix tokens, std::vector<std::string> texts, std::vector<std::size_t> object_positions,
                       bool truncated) {
             if (static_cast<std::size_t>(tokens.rows()) != texts.size()) {
               throw Error(ErrorCode::kDimension, "one token text per embedding row is required");
             }
             PromptEmbedding e;
             e.token_embeddings = std::move(tokens);
             e.token_texts = std::move(texts);
             e.object_token_positions = IndexList(std::move(object_positions));
             e.truncated = truncated;
             return e;
           }),
           py::arg("token_embeddings"), py::arg("token_texts"), py::arg("object_token_positions") = std::vector<std::size_t>{},
           py::arg("truncated") = false)
      .def_readonly("token_embeddings", &PromptEmbedding::token_embeddings)
      .def_readonly("token_texts", &PromptEmbedding::token_texts)
      .def_property_readonly("object_token_positions",
                             [](const PromptEmbedding& e) { return e.object_token_positions.positions(); })
      .def_readonly("truncated", &PromptEmbedding::truncated);

  py::class_<AttentionCall>(m, "AttentionCall")
      .def(py::init([](AttentionSite site, const std::vector<Matrix>& q, const std::vector<Matrix>& k,
                       const std::vector<Matrix>& v, const std::vector<std::vector<Matrix>>& k_extra,
                       const std::vector<std::vector<Matrix>>& v_extra) {
             AttentionCall c;
             c.site = site;
             c.q = to_features(q);
             c.k = to_features(k);
             c.v = to_features(v);
             for (const auto& e : k_extra) c.k_extra.push_back(to_features(e));
             for (const auto& e : v_extra) c.v_extra.push_back(to_features(e));
             return c;
           }),
           py::arg("site"), py::arg("q"), py::arg("k"), py::arg("v"), py::arg("k_extra") = std::vector<std::vector<Matrix>>{},
           py::arg("v_extra") = std::vector<std::vector<Matrix>>{})
      .def_readonly("site", &AttentionCall::site)
      .def_property_readonly("heads", &AttentionCall::heads);

  py::class_<ForwardOptions>(m, "ForwardOptions")
      .def_readonly("step_index", &ForwardOptions::step_index)
      .def_property_readonly("extra_conds",
                             [](const ForwardOptions& o) {
                               std::vector<PromptEmbedding> out;
                               for (const auto* e : o.extra_conds) out.push_back(*e);
                               return out;
                             })
      .def_property_readonly("has_hook", [](const ForwardOptions& o) { return o.hook != nullptr; })
      // Per-head outputs the backend must use at this site.
      .def("run_site",
           [](const ForwardOptions& o, const AttentionCall& call) { return to_matrices(run_attention_site(o.hook, call)); });

  py::class_<NoiseResult>(m, "NoiseResult")
      .def(py::init([](LatentTensor eps, std::vector<AttentionSite> visited) { return NoiseResult{std::move(eps), std::move(visited)}; }),
           py::arg("eps"), py::arg("visited"))
      .def_readonly("eps", &NoiseResult::eps)
      .def_readonly("visited", &NoiseResult::visited);

  py::class_<Backend, PyBackend>(m, "Backend")
      .def(py::init<>())
      .def("descriptor", &Backend::descriptor, py::return_value_policy::reference_internal)
      .def("encode_text", &Backend::encode_text, py::arg("prompt"), py::arg("object_word") = "")
      .def("encode_image", &Backend::encode_image)
      .def("decode_latent", &Backend::decode_latent)
      .def(
          "predict_noise",
          [](Backend& b, const LatentTensor& z, int timestep, const PromptEmbedding& cond,
             std::optional<ForwardOptions> options) { return b.predict_noise(z, timestep, cond, options.value_or(ForwardOptions{})); },
          py::arg("z"), py::arg("timestep"), py::arg("cond"), py::arg("options") = py::none())
      .def_property_readonly("forward_count", &Backend::forward_count);

  py::class_<ToyBackend, Backend>(m, "ToyBackend").def(py::init([](std::uint64_t seed) {
                                                         ToyBackendConfig c;
                                                         c.seed = seed;
                                                         return std::make_unique<ToyBackend>(c);
                                                       }),
                                                       py::arg("seed") = 7);

  m.def(
      "edit",
      [](Backend& backend, const Image& image, const SpatialMask& mask, const py::dict& options,
         const std::string& image_ref, std::optional<py::function> progress,
         std::optional<std::filesystem::path> trace_cache, std::optional<std::filesystem::path> out) {
        EditRequest r;
        r.image = image;
        r.image_ref = image_ref;
        r.source_mask_spec = MaskSpec::from_mask(mask);
        apply_edit_options(from_python(options), r);
        r.validate();
        std::unique_ptr<ProgressObserver> observer;
        EditContext ctx;
        if (progress) {
          observer = std::make_unique<ProgressObserver>(*progress);
          ctx.observer = observer.get();
        }
        ctx.trace_cache = trace_cache;
        const EditResult result = edit_image(r, backend, ctx);
        if (out) write_run_outputs(r, result, *out, std::filesystem::path(*out).replace_extension(".json"));
        py::list masks;
        for (const auto& rec : result.mask_record) masks.append(rec.mask);
        py::dict d;
        d["image"] = result.edited_image;
        d["manifest"] = to_python(run_manifest(r, result));
        d["target_masks"] = masks;
        d["forward_passes"] = result.forward_passes;
        return d;
      },
      py::arg("backend"), py::arg("image"), py::arg("mask"), py::arg("options") = py::dict(), py::arg("image_ref") = "",
      py::arg("progress") = py::none(), py::arg("trace_cache") = py::none(), py::arg("out") = py::none(),
      "Runs one masked edit. `options` uses the edit-options JSON keys.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));

  m.def("load_png", [](const std::filesystem::path& p) { return load_png(p); });
  m.def("save_png", [](const Image& im, const std::filesystem::path& p) { save_png(im, p); });
  m.def("load_mask_png", [](const std::filesystem::path& p) { return load_mask_png(p); });
  m.def("save_mask_png", [](const SpatialMask& mk, const std::filesystem::path& p) { save_mask_png(mk, p); });

  m.def(
      "clip_score",
      [](const Image& image, const std::string& prompt, std::optional<std::string> endpoint) {
        auto client = embedding_client(endpoint);
        return clip_score(image, prompt, *client);
      },
      py::arg("image"), py::arg("prompt"), py::arg("endpoint") = py::none());
  m.def(
      "background_lpips",
      [](const Image& original, const Image& edited, const SpatialMask& mask, std::optional<std::string> endpoint) {
        auto client = perceptual_client(endpoint);
        return background_lpips(original, edited, mask, *client);
      },
      py::arg("original"), py::arg("edited"), py::arg("mask"), py::arg("endpoint") = py::none());
  m.def(
      "metric_methodology",
      [](std::optional<std::string> embedding, std::optional<std::string> perceptual) {
        return embedding_client(embedding)->methodology() + "; " + perceptual_client(perceptual)->methodology();
      },
      py::arg("embedding_endpoint") = py::none(), py::arg("perceptual_endpoint") = py::none());
}
