#pragma once

#include <filesystem>

#include "czsl/dataset.hpp"

namespace czsl {

// Manifest text format, one directive per line, '#' comments and blank lines
// allowed. Field order is fixed; unknown directives or trailing fields are
// rejected with the offending line number.
//
//   primitive <name> <TYPE1|TYPE2> <TRAIN|VAL|TEST> [embedding=<b64 f64le>]
//   sample <id> <type1-name> <type2-name> <payload>
//
// payload is either `file=<relative path>` pointing at a raw tensor file, or
// `inline=<d0>x<d1>x<d2>:<b64 f64le>`.

struct ManifestWriteOptions {
  bool inline_images = false;
  std::string image_dir = "images";  // relative to the manifest, for file payloads
};

void save_manifest(const Dataset& ds, const std::filesystem::path& path,
                   const ManifestWriteOptions& options = {});

/// Parses, builds and validates a dataset. Parse and invariant failures throw
/// DataError with a line reference where one exists.
Dataset load_manifest(const std::filesystem::path& path);

// Raw tensor file: magic "CZT1", u32 rank, i64 dims, f64 payload, all
// little-endian.
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

std::string base64_encode(const unsigned char* data, size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace czsl
