#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "netsurgeon/embedding.hpp"
#include "netsurgeon/plc.hpp"

namespace netsurgeon {

inline constexpr int kProjectFormatVersion = 1;

struct NetworkRef {
  std::string id;  ///< hex content hash
  std::filesystem::path manifest;
  friend bool operator==(const NetworkRef&, const NetworkRef&) = default;
};

struct DatasetRef {
  std::string id;
  std::filesystem::path directory;
  friend bool operator==(const DatasetRef&, const DatasetRef&) = default;
};

/// Everything a user built on top of one network.
struct Project {
  std::string id;
  NetworkRef network;
  std::vector<DatasetRef> datasets;
  std::vector<std::shared_ptr<const EmbeddingBasis>> embeddings;
  std::vector<ConceptFilter> concepts;
  std::vector<PLCGrammar> grammars;
  std::string created;   ///< ISO-8601 UTC
  std::string modified;

  std::shared_ptr<const EmbeddingBasis> embedding(const std::string& id) const;
  const ConceptFilter& concept_filter(const std::string& id) const;
  const PLCGrammar& grammar(const std::string& id) const;
  ConceptRegistry concept_registry() const;
};

/// Compares embeddings by value rather than by pointer.
bool operator==(const Project& a, const Project& b);
bool operator==(const ConceptFilter& a, const ConceptFilter& b);

std::string utc_timestamp();

/// The project file's JSON document, also served by the HTTP API.
nlohmann::json project_to_json(const Project& project);

void save_project(const Project& project, const std::filesystem::path& path);

struct LoadedProject {
  Project project;
  std::vector<std::string> warnings;
};

/// When `network_hash` is given and differs from the project's network, the concepts are
/// marked stale and a warning is returned.
LoadedProject load_project(const std::filesystem::path& path,
                           std::optional<std::uint64_t> network_hash = std::nullopt);

/// Same checks as load_project on an in-memory document; `what` names it in errors.
LoadedProject project_from_json(const nlohmann::json& document, std::string_view what,
                                std::optional<std::uint64_t> network_hash = std::nullopt);

}  // namespace netsurgeon
