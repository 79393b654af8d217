#include "netsurgeon/serialize.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"

namespace netsurgeon {

void throw_format_error(std::string_view what, std::string_view detail) {
  throw Error(ErrorCode::Format, fmt::format("invalid {}: {}", what, detail));
}

void to_json(Json& j, const NeuronRef& n) { j = Json{{"layer", n.layer}, {"channel", n.channel}}; }

void from_json(const Json& j, NeuronRef& n) {
  j.at("layer").get_to(n.layer);
  j.at("channel").get_to(n.channel);
}

void to_json(Json& j, const PartSpec& p) {
  j = Json{{"id", p.id},
           {"anchor", {p.anchor_x, p.anchor_y}},
           {"radius", p.radius},
           {"sign", p.sign},
           {"coefficient", p.coefficient}};
  if (p.source.kind == PartSource::Kind::Neuron) {
    j["source"] = {{"neuron", p.source.neuron}};
  } else {
    j["source"] = {{"concept", p.source.concept_id}};
  }
  if (p.calibration) {
    j["calibration"] = {{"shift", p.calibration->shift}, {"scale", p.calibration->scale}};
  } else {
    j["calibration"] = nullptr;
  }
}

void from_json(const Json& j, PartSpec& p) {
  j.at("id").get_to(p.id);
  const auto& source = j.at("source");
  if (source.contains("concept")) {
    p.source.kind = PartSource::Kind::Concept;
    source.at("concept").get_to(p.source.concept_id);
  } else {
    p.source.kind = PartSource::Kind::Neuron;
    source.at("neuron").get_to(p.source.neuron);
  }
  const auto& anchor = j.at("anchor");
  if (!anchor.is_array() || anchor.size() != 2) {
    throw nlohmann::json::other_error::create(501, "anchor must be [dx, dy]", &j);
  }
  p.anchor_x = anchor[0].get<double>();
  p.anchor_y = anchor[1].get<double>();
  p.radius = j.value("radius", 0.0);
  p.sign = j.value("sign", 1);
  p.coefficient = j.value("coefficient", 1.0);
  p.calibration.reset();
  if (j.contains("calibration") && !j["calibration"].is_null()) {
    p.calibration = Calibration{j["calibration"].at("shift").get<double>(),
                                j["calibration"].at("scale").get<double>()};
  }
}

void to_json(Json& j, const PLCGrammar& g) {
  Json edges = Json::object();
  for (std::size_t i = 0; i < g.parts.size(); ++i) {
    if (!g.parents[i].empty()) edges[g.parts[i].id] = g.parents[i];
  }
  j = Json{{"id", g.id},
           {"name", g.name},
           {"root_size", {g.root_height, g.root_width}},
           {"parts", g.parts},
           {"edges", edges}};
}

void from_json(const Json& j, PLCGrammar& g) {
  g.id = j.value("id", std::string());
  g.name = j.value("name", std::string());
  const auto& size = j.at("root_size");
  if (!size.is_array() || size.size() != 2) {
    throw nlohmann::json::other_error::create(501, "root_size must be [H, W]", &j);
  }
  g.root_height = size[0].get<int>();
  g.root_width = size[1].get<int>();
  j.at("parts").get_to(g.parts);
  g.parents.assign(g.parts.size(), std::string());
  if (j.contains("edges") && !j["edges"].is_null()) {
    for (const auto& [child, parent] : j["edges"].items()) {
      const std::string p = parent.get<std::string>();
      bool found = false;
      for (std::size_t i = 0; i < g.parts.size(); ++i) {
        if (g.parts[i].id == child) {
          g.parents[i] = p == "root" ? std::string() : p;
          found = true;
        }
      }
      if (!found) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("edge names unknown part '{}'", child));
      }
    }
  }
}

void to_json(Json& j, const DetectOptions& o) {
  j = Json{{"scales", o.num_scales},
           {"scale_factor", o.scale_factor},
           {"threshold", o.threshold},
           {"nms_iou", o.nms_iou},
           {"model", o.model == ScoringModel::Spatial ? "spatial" : "bag"}};
}

void from_json(const Json& j, DetectOptions& o) {
  o.num_scales = j.value("scales", o.num_scales);
  o.scale_factor = j.value("scale_factor", o.scale_factor);
  o.threshold = j.value("threshold", o.threshold);
  o.nms_iou = j.value("nms_iou", o.nms_iou);
  if (j.contains("model")) {
    const auto model = j["model"].get<std::string>();
    if (model == "spatial") {
      o.model = ScoringModel::Spatial;
    } else if (model == "bag") {
      o.model = ScoringModel::Bag;
    } else {
      throw Error(ErrorCode::InvalidArgument, fmt::format("unknown scoring model '{}'", model));
    }
  }
}

void to_json(Json& j, const Box& b) { j = Json::array({b.x0, b.y0, b.x1, b.y1}); }

void from_json(const Json& j, Box& b) {
  if (!j.is_array() || j.size() != 4) {
    throw nlohmann::json::other_error::create(501, "box must be [x0, y0, x1, y1]", &j);
  }
  b = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

void to_json(Json& j, const Detection& d) {
  Json parts = Json::array();
  for (const auto& p : d.parts) {
    parts.push_back({{"part", p.part_id}, {"x", p.x}, {"y", p.y}, {"score", p.score}});
  }
  j = Json{{"image_id", d.image_id}, {"box", d.box}, {"root", d.root},
           {"score", d.score},       {"scale", d.scale}, {"parts", parts}};
}

void from_json(const Json& j, Detection& d) {
  j.at("image_id").get_to(d.image_id);
  j.at("box").get_to(d.box);
  d.root = j.contains("root") ? j["root"].get<Box>() : d.box;
  j.at("score").get_to(d.score);
  d.scale = j.value("scale", 1.0);
  d.parts.clear();
  for (const auto& p : j.value("parts", Json::array())) {
    d.parts.push_back({p.at("part").get<std::string>(), p.at("x").get<double>(),
                       p.at("y").get<double>(), p.at("score").get<double>()});
  }
}

void to_json(Json& j, const PixelRect& r) { j = Json::array({r.x0, r.y0, r.x1, r.y1}); }

void to_json(Json& j, const PatchRef& p) {
  j = Json{{"image_id", p.image_id},
           {"layer", p.layer},
           {"channel", p.channel},
           {"row", p.position.row},
           {"col", p.position.col},
           {"activation", p.activation},
           {"rect", p.rect}};
}

void to_json(Json& j, const RankedNeuron& r) {
  j = Json{{"neuron", r.neuron}, {"score", r.score}};
}

void to_json(Json& j, const Boundary& b) {
  j = Json{{"alpha1", b.alpha1}, {"alpha2", b.alpha2}, {"beta", b.beta}};
}

void from_json(const Json& j, Boundary& b) {
  j.at("alpha1").get_to(b.alpha1);
  j.at("alpha2").get_to(b.alpha2);
  j.at("beta").get_to(b.beta);
}

void to_json(Json& j, const ParametricNet& n) {
  j = Json{{"input_dim", n.input_dim},
           {"input_mean", n.input_mean},
           {"input_scale", n.input_scale},
           {"w1", n.w1},
           {"b1", n.b1},
           {"w2", n.w2},
           {"b2", n.b2},
           {"w3", n.w3},
           {"b3", n.b3},
           {"target_mean", n.target_mean},
           {"target_scale", n.target_scale},
           {"training_mse", n.training_mse},
           {"converged", n.converged}};
}

void from_json(const Json& j, ParametricNet& n) {
  j.at("input_dim").get_to(n.input_dim);
  j.at("input_mean").get_to(n.input_mean);
  j.at("input_scale").get_to(n.input_scale);
  j.at("w1").get_to(n.w1);
  j.at("b1").get_to(n.b1);
  j.at("w2").get_to(n.w2);
  j.at("b2").get_to(n.b2);
  j.at("w3").get_to(n.w3);
  j.at("b3").get_to(n.b3);
  j.at("target_mean").get_to(n.target_mean);
  j.at("target_scale").get_to(n.target_scale);
  j.at("training_mse").get_to(n.training_mse);
  j.at("converged").get_to(n.converged);
}

void to_json(Json& j, const EmbeddingBasis& b) {
  Json points = Json::array();
  for (const auto& p : b.points) points.push_back({p.id, p.c1, p.c2});
  j = Json{{"id", b.id},
           {"method", to_string(b.method)},
           {"source_neuron", b.source_neuron},
           {"network_hash", hash_hex(b.network_hash)},
           {"mean", b.mean},
           {"v1", b.v1},
           {"v2", b.v2},
           {"eigenvalues", b.eigenvalues},
           {"points", points},
           {"parametric", b.parametric ? Json(*b.parametric) : Json(nullptr)}};
}

void from_json(const Json& j, EmbeddingBasis& b) {
  j.at("id").get_to(b.id);
  b.method = parse_embedding_method(j.at("method").get<std::string>());
  j.at("source_neuron").get_to(b.source_neuron);
  b.network_hash = std::stoull(j.at("network_hash").get<std::string>(), nullptr, 16);
  j.at("mean").get_to(b.mean);
  j.at("v1").get_to(b.v1);
  j.at("v2").get_to(b.v2);
  j.at("eigenvalues").get_to(b.eigenvalues);
  b.points.clear();
  for (const auto& p : j.at("points")) {
    b.points.push_back({p.at(0).get<std::string>(), p.at(1).get<double>(), p.at(2).get<double>()});
  }
  b.parametric.reset();
  if (j.contains("parametric") && !j["parametric"].is_null()) {
    b.parametric = j["parametric"].get<ParametricNet>();
  }
}

void to_json(Json& j, const FilterLine& f) {
  j = Json{{"alpha1", f.normal1}, {"alpha2", f.normal2}, {"beta", f.offset}, {"visible", f.visible}};
}

Json concept_to_json(const ConceptFilter& c) {
  Json j{{"id", c.id},
         {"name", c.name},
         {"embedding_id", c.basis ? c.basis->id : std::string()},
         {"boundary", c.boundary},
         {"mode", to_string(c.mode)},
         {"stale", c.stale}};
  if (c.realized) {
    j["realized"] = {{"weights", c.realized->weights}, {"bias", c.realized->bias}};
  } else {
    j["realized"] = nullptr;
  }
  return j;
}

ConceptFilter concept_from_json(
    const Json& j,
    const std::function<std::shared_ptr<const EmbeddingBasis>(const std::string&)>& basis_of) {
  ConceptFilter c;
  j.at("id").get_to(c.id);
  j.at("name").get_to(c.name);
  c.basis = basis_of(j.at("embedding_id").get<std::string>());
  j.at("boundary").get_to(c.boundary);
  c.mode = parse_concept_mode(j.at("mode").get<std::string>());
  c.stale = j.value("stale", false);
  if (j.contains("realized") && !j["realized"].is_null()) {
    RealizedFilter r;
    j["realized"].at("weights").get_to(r.weights);
    j["realized"].at("bias").get_to(r.bias);
    c.realized = std::move(r);
  }
  return c;
}

void save_concept_file(const std::filesystem::path& path, const ConceptFilter& c) {
  if (!c.basis) throw Error(ErrorCode::InvalidArgument, "concept has no embedding basis");
  write_json_file(path, Json{{"concept", concept_to_json(c)}, {"embedding", *c.basis}});
}

ConceptFilter load_concept_file(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  try {
    auto basis = std::make_shared<const EmbeddingBasis>(j.at("embedding").get<EmbeddingBasis>());
    return concept_from_json(j.at("concept"), [&](const std::string& id) {
      if (id != basis->id) {
        throw Error(ErrorCode::Format, fmt::format("concept file '{}' names embedding '{}' but holds '{}'",
                                                   path.string(), id, basis->id));
      }
      return basis;
    });
  } catch (const nlohmann::json::exception& e) {
    throw_format_error(fmt::format("concept file '{}'", path.string()), e.what());
  }
}

Json parse_json(std::string_view text, std::string_view what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw_format_error(what, e.what());
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open '{}'", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_json(buffer.str(), path.string());
}

void write_json_file(const std::filesystem::path& path, const Json& value) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write '{}'", path.string()));
  out << value.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::Io, fmt::format("write to '{}' failed", path.string()));
}

GrammarFile load_grammar_file(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  GrammarFile file;
  const std::string what = fmt::format("grammar file '{}'", path.string());
  file.grammar = json_as<PLCGrammar>(j.contains("grammar") ? j["grammar"] : j, what);
  validate(file.grammar);
  if (j.contains("detection")) file.detection = json_as<DetectOptions>(j["detection"], what);
  if (j.contains("network")) {
    file.network = j["network"].get<std::string>();
    if (file.network.is_relative()) file.network = path.parent_path() / file.network;
  }
  return file;
}

void save_grammar_file(const std::filesystem::path& path, const GrammarFile& file) {
  Json j{{"grammar", file.grammar}, {"detection", file.detection}};
  if (!file.network.empty()) j["network"] = file.network.generic_string();
  write_json_file(path, j);
}

}  // namespace netsurgeon
