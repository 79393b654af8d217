#include "netsurgeon/dataset.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "netsurgeon/error.hpp"
#include "netsurgeon/hash.hpp"
#include "netsurgeon/image.hpp"
#include "netsurgeon/network.hpp"
#include "netsurgeon/parallel.hpp"

namespace netsurgeon {

namespace fs = std::filesystem;

const ImageEntry* Dataset::find(std::string_view image_id) const {
  for (const auto& e : images) {
    if (e.image_id == image_id) return &e;
  }
  return nullptr;
}

Dataset ingest_dataset(const fs::path& directory, std::vector<std::string>* warnings) {
  std::error_code ec;
  if (!fs::is_directory(directory, ec)) {
    throw Error(ErrorCode::NotFound, fmt::format("'{}' is not a directory", directory.string()));
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

  Dataset dataset;
  dataset.directory = directory;
  Fnv1a hash;
  for (const auto& file : files) {
    std::string ext = file.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) {
      return static_cast<char>(std::tolower(c));
    });
    if (ext != ".png") {
      if (warnings) warnings->push_back(fmt::format("skipping non-image file '{}'",
                                                    file.filename().string()));
      continue;
    }
    const Extent2 extent = png_extent(file);
    ImageEntry e{file.stem().string(), file, extent.w, extent.h};
    if (dataset.find(e.image_id)) {
      throw Error(ErrorCode::Format, fmt::format("duplicate image id '{}'", e.image_id));
    }
    std::ifstream in(file, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), {});
    hash.text(e.image_id);
    hash.text(bytes);
    dataset.images.push_back(std::move(e));
  }
  if (dataset.images.empty()) {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("no PNG images in '{}'", directory.string()));
  }
  dataset.id = hash_hex(hash.value());
  return dataset;
}

std::vector<ImageRecord> load_images(const Dataset& dataset, int jobs) {
  std::vector<ImageRecord> records(dataset.images.size());
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    records[i] = {dataset.images[i].image_id, read_png(dataset.images[i].path)};
  });
  return records;
}

std::uint64_t images_hash(std::span<const ImageRecord> images) {
  Fnv1a hash;
  hash.u64(images.size());
  for (const auto& r : images) {
    hash.text(r.image_id);
    hash.u64(static_cast<std::uint64_t>(r.pixels.channels()));
    hash.u64(static_cast<std::uint64_t>(r.pixels.height()));
    hash.u64(static_cast<std::uint64_t>(r.pixels.width()));
    hash.floats(r.pixels.data());
  }
  return hash.value();
}

}  // namespace netsurgeon
