#pragma once

#include <cstdint>
#include <string>

#include "steerlab/model.hpp"

namespace steerlab {

// Binary model container, magic "STLB". Versioned header with the config
// fields, then named raw tensors. Floats are stored at the build precision;
// loading a file written at the other width is a format error.
void save_checkpoint(const TransformerModel& model, const std::string& path);
TransformerModel load_checkpoint(const std::string& path);

// FNV-1a over a file / buffer; used for fingerprints.
std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t hash_file(const std::string& path);
std::uint64_t hash_string(const std::string& s);

} // namespace steerlab
