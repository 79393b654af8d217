#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "netsurgeon/tensor.hpp"

namespace netsurgeon {

struct ImageEntry {
  std::string image_id;  ///< file name without extension
  std::filesystem::path path;
  int width = 0;
  int height = 0;
};

struct Dataset {
  std::string id;  ///< hex content hash of the image files
  std::filesystem::path directory;
  std::vector<ImageEntry> images;

  const ImageEntry* find(std::string_view image_id) const;
};

/// Lists the PNG files of a directory in filename order. Other files are skipped and
/// reported through `warnings` when given. Throws when no image is found.
Dataset ingest_dataset(const std::filesystem::path& directory,
                       std::vector<std::string>* warnings = nullptr);

/// An image held in memory with its dataset id.
struct ImageRecord {
  std::string image_id;
  Tensor pixels;
};

std::vector<ImageRecord> load_images(const Dataset& dataset, int jobs = 1);

/// Content hash over ids and pixel bits; independent of where the images came from.
std::uint64_t images_hash(std::span<const ImageRecord> images);

}  // namespace netsurgeon
