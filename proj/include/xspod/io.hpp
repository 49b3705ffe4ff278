#pragma once

#include "xspod/core.hpp"

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace xspod {

/// XR32 raster container: 16-byte header (magic "XR32", width, height,
/// reserved as little-endian u32) followed by width*height little-endian
/// IEEE-754 float32 values, row-major.
void write_xr32(const std::string& path, const RasterF& raster);
RasterF read_xr32(const std::string& path);

void write_mask_xr32(const std::string& path, const Mask& mask);

/// Reads an XR32 file whose values must all be exactly 0.0 or 1.0.
Mask read_mask_xr32(const std::string& path);

RasterF to_float(const Mask& mask);
Mask to_mask(const RasterF& raster); ///< throws ValidationError on non-binary values

/// "key = value" sidecar text; keys sorted on output.
using Metadata = std::map<std::string, std::string>;
void write_metadata(const std::string& path, const Metadata& meta);
Metadata read_metadata(const std::string& path);

std::vector<std::string> split_csv(std::string_view line);
std::string trim(std::string_view text);

/// Shortest round-trip decimal with 17 significant digits.
std::string format_g17(double value);
/// 9 significant digits.
std::string format_g9(double value);

double parse_double(const std::string& text, const char* what);
long long parse_int(const std::string& text, const char* what);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);
void ensure_directory(const std::string& path);

/// 64-bit FNV-1a; stable content hash for manifests.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

} // namespace xspod
