#include "netsurgeon/project.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <set>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"
#include "netsurgeon/serialize.hpp"

namespace netsurgeon {

std::shared_ptr<const EmbeddingBasis> Project::embedding(const std::string& id) const {
  for (const auto& e : embeddings) {
    if (e->id == id) return e;
  }
  throw Error(ErrorCode::NotFound, fmt::format("no embedding '{}'", id));
}

const ConceptFilter& Project::concept_filter(const std::string& id) const {
  for (const auto& c : concepts) {
    if (c.id == id) return c;
  }
  throw Error(ErrorCode::NotFound, fmt::format("no concept '{}'", id));
}

const PLCGrammar& Project::grammar(const std::string& id) const {
  for (const auto& g : grammars) {
    if (g.id == id) return g;
  }
  throw Error(ErrorCode::NotFound, fmt::format("no grammar '{}'", id));
}

ConceptRegistry Project::concept_registry() const {
  ConceptRegistry registry;
  for (const auto& c : concepts) registry.emplace(c.id, c);
  return registry;
}

bool operator==(const ConceptFilter& a, const ConceptFilter& b) {
  const bool same_basis = (!a.basis && !b.basis) || (a.basis && b.basis && *a.basis == *b.basis);
  return a.id == b.id && a.name == b.name && same_basis && a.boundary == b.boundary &&
         a.realized == b.realized && a.mode == b.mode && a.stale == b.stale;
}

bool operator==(const Project& a, const Project& b) {
  if (a.embeddings.size() != b.embeddings.size()) return false;
  for (std::size_t i = 0; i < a.embeddings.size(); ++i) {
    if (!(*a.embeddings[i] == *b.embeddings[i])) return false;
  }
  return a.id == b.id && a.network == b.network && a.datasets == b.datasets &&
         a.concepts == b.concepts && a.grammars == b.grammars && a.created == b.created &&
         a.modified == b.modified;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

Json project_to_json(const Project& project) {
  Json datasets = Json::array();
  for (const auto& d : project.datasets) {
    datasets.push_back({{"id", d.id}, {"directory", d.directory.generic_string()}});
  }
  Json embeddings = Json::array();
  for (const auto& e : project.embeddings) embeddings.push_back(*e);
  Json concepts = Json::array();
  for (const auto& c : project.concepts) concepts.push_back(concept_to_json(c));
  Json j{{"format", "netsurgeon-project"},
               {"format_version", kProjectFormatVersion},
               {"id", project.id},
               {"network",
                {{"id", project.network.id}, {"manifest", project.network.manifest.generic_string()}}},
               {"datasets", datasets},
               {"embeddings", embeddings},
               {"concepts", concepts},
               {"grammars", project.grammars},
               {"created", project.created},
               {"modified", project.modified}};
  return j;
}

void save_project(const Project& project, const std::filesystem::path& path) {
  write_json_file(path, project_to_json(project));
}

LoadedProject load_project(const std::filesystem::path& path,
                           std::optional<std::uint64_t> network_hash) {
  return project_from_json(read_json_file(path), path.string(), network_hash);
}

LoadedProject project_from_json(const Json& j, std::string_view what,
                                std::optional<std::uint64_t> network_hash) {
  if (!j.is_object() || j.value("format", std::string()) != "netsurgeon-project") {
    throw Error(ErrorCode::Format, fmt::format("'{}' is not a project file", what));
  }
  const int version = j.value("format_version", -1);
  if (version != kProjectFormatVersion) {
    throw Error(ErrorCode::VersionMismatch,
                fmt::format("project format version {} is not supported (expected {})", version,
                            kProjectFormatVersion));
  }
  LoadedProject out;
  Project& p = out.project;
  try {
    p.id = j.at("id").get<std::string>();
    p.network.id = j.at("network").at("id").get<std::string>();
    p.network.manifest = j.at("network").at("manifest").get<std::string>();
    for (const auto& d : j.at("datasets")) {
      p.datasets.push_back({d.at("id").get<std::string>(), d.at("directory").get<std::string>()});
    }
    for (const auto& e : j.at("embeddings")) {
      p.embeddings.push_back(std::make_shared<const EmbeddingBasis>(e.get<EmbeddingBasis>()));
    }
    for (const auto& c : j.at("concepts")) {
      p.concepts.push_back(concept_from_json(c, [&](const std::string& id) {
        for (const auto& e : p.embeddings) {
          if (e->id == id) return e;
        }
        throw Error(ErrorCode::Format,
                    fmt::format("project '{}': concept references unknown embedding '{}'", what, id));
      }));
    }
    j.at("grammars").get_to(p.grammars);
    p.created = j.at("created").get<std::string>();
    p.modified = j.at("modified").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw_format_error(fmt::format("project '{}'", what), e.what());
  }
  for (const auto& g : p.grammars) validate(g);
  auto check_unique = [&](std::string_view kind, const std::vector<std::string>& ids) {
    std::set<std::string> seen;
    for (const auto& id : ids) {
      if (!seen.insert(id).second) {
        throw Error(ErrorCode::Format,
                    fmt::format("project '{}': duplicate {} id '{}'", what, kind, id));
      }
    }
  };
  std::vector<std::string> embedding_ids, concept_ids, grammar_ids;
  for (const auto& e : p.embeddings) embedding_ids.push_back(e->id);
  for (const auto& c : p.concepts) concept_ids.push_back(c.id);
  for (const auto& g : p.grammars) grammar_ids.push_back(g.id);
  check_unique("embedding", embedding_ids);
  check_unique("concept", concept_ids);
  check_unique("grammar", grammar_ids);
  for (const auto& g : p.grammars) {
    for (const auto& part : g.parts) {
      if (part.source.kind != PartSource::Kind::Concept) continue;
      if (std::find(concept_ids.begin(), concept_ids.end(), part.source.concept_id) ==
          concept_ids.end()) {
        throw Error(ErrorCode::Format,
                    fmt::format("project '{}': grammar '{}' references unknown concept '{}'", what,
                                g.id, part.source.concept_id));
      }
    }
  }

  if (network_hash && hash_hex(*network_hash) != p.network.id) {
    out.warnings.push_back(fmt::format(
        "project was built on network {} but the loaded network is {}; concepts marked stale",
        p.network.id, hash_hex(*network_hash)));
    for (auto& c : p.concepts) c.stale = true;
  }
  return out;
}

}  // namespace netsurgeon
