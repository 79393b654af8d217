#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"
#include "netsurgeon/embedding.hpp"
#include "netsurgeon/metrics.hpp"
#include "netsurgeon/plc.hpp"

namespace netsurgeon {

using Json = nlohmann::json;

// JSON shapes shared by the project file, the grammar files and the HTTP API.
// Reals are written with round-trip precision.

void to_json(Json& j, const NeuronRef& n);
void from_json(const Json& j, NeuronRef& n);
void to_json(Json& j, const PartSpec& p);
void from_json(const Json& j, PartSpec& p);
/// {"root_size": [H, W], "parts": [...], "edges": {child: parent}}; edges to the root
/// are omitted.
void to_json(Json& j, const PLCGrammar& g);
void from_json(const Json& j, PLCGrammar& g);
void to_json(Json& j, const DetectOptions& o);
/// Missing keys keep their defaults.
void from_json(const Json& j, DetectOptions& o);
void to_json(Json& j, const Box& b);
void from_json(const Json& j, Box& b);
void to_json(Json& j, const Detection& d);
void from_json(const Json& j, Detection& d);
void to_json(Json& j, const PixelRect& r);
void to_json(Json& j, const PatchRef& p);
void to_json(Json& j, const RankedNeuron& r);
void to_json(Json& j, const Boundary& b);
void from_json(const Json& j, Boundary& b);
void to_json(Json& j, const ParametricNet& n);
void from_json(const Json& j, ParametricNet& n);
void to_json(Json& j, const EmbeddingBasis& b);
void from_json(const Json& j, EmbeddingBasis& b);
void to_json(Json& j, const FilterLine& f);

/// Concepts reference their basis by id.
Json concept_to_json(const ConceptFilter& c);
ConceptFilter concept_from_json(
    const Json& j,
    const std::function<std::shared_ptr<const EmbeddingBasis>(const std::string&)>& basis_of);

/// A standalone concept file: the concept plus the basis it was drawn in.
void save_concept_file(const std::filesystem::path& path, const ConceptFilter& c);
ConceptFilter load_concept_file(const std::filesystem::path& path);

/// Parses with nlohmann and rethrows its errors as Error(Format).
Json parse_json(std::string_view text, std::string_view what);
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& value);

[[noreturn]] void throw_format_error(std::string_view what, std::string_view detail);

/// Converts a JSON value with from_json, reporting schema errors as Error(Format).
template <typename T>
T json_as(const Json& j, std::string_view what) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw_format_error(what, e.what());
  }
}

/// A grammar file: the grammar, the network it was built for (relative paths resolve
/// against the file's directory) and default detection parameters.
struct GrammarFile {
  PLCGrammar grammar;
  std::filesystem::path network;
  DetectOptions detection;
};

GrammarFile load_grammar_file(const std::filesystem::path& path);
void save_grammar_file(const std::filesystem::path& path, const GrammarFile& file);

}  // namespace netsurgeon
