#include "xspod/io.hpp"

#include <array>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace xspod {

namespace {

static_assert(std::endian::native == std::endian::little, "XR32 I/O assumes a little-endian host");

constexpr std::array<char, 4> kMagic{'X', 'R', '3', '2'};

void put_u32(std::ostream& out, std::uint32_t v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in)
{
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

} // namespace

void write_xr32(const std::string& path, const RasterF& raster)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open for writing: " + path);
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, static_cast<std::uint32_t>(raster.cols()));
    put_u32(out, static_cast<std::uint32_t>(raster.rows()));
    put_u32(out, 0);
    out.write(reinterpret_cast<const char*>(raster.data()),
              static_cast<std::streamsize>(raster.size() * sizeof(float)));
    if (!out)
        throw IoError("write failed: " + path);
}

RasterF read_xr32(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open: " + path);
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic)
        throw ValidationError("not an XR32 file: " + path);
    const std::uint32_t width = get_u32(in);
    const std::uint32_t height = get_u32(in);
    get_u32(in);
    if (!in)
        throw ValidationError("truncated XR32 header: " + path);
    RasterF raster(height, width);
    in.read(reinterpret_cast<char*>(raster.data()),
            static_cast<std::streamsize>(raster.size() * sizeof(float)));
    if (!in)
        throw ValidationError("truncated XR32 payload: " + path);
    return raster;
}

RasterF to_float(const Mask& mask)
{
    return mask.cast<float>();
}

Mask to_mask(const RasterF& raster)
{
    Mask mask(raster.rows(), raster.cols());
    for (Eigen::Index i = 0; i < raster.size(); ++i) {
        const float v = raster.data()[i];
        if (v != 0.0f && v != 1.0f)
            throw ValidationError("mask contains a non-binary value");
        mask.data()[i] = v == 1.0f ? 1 : 0;
    }
    return mask;
}

void write_mask_xr32(const std::string& path, const Mask& mask)
{
    write_xr32(path, to_float(mask));
}

Mask read_mask_xr32(const std::string& path)
{
    try {
        return to_mask(read_xr32(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

void write_metadata(const std::string& path, const Metadata& meta)
{
    std::ostringstream out;
    for (const auto& [key, value] : meta)
        out << key << " = " << value << '\n';
    write_text_file(path, out.str());
}

Metadata read_metadata(const std::string& path)
{
    std::istringstream in(read_text_file(path));
    Metadata meta;
    std::string line;
    while (std::getline(in, line)) {
        const auto t = trim(line);
        if (t.empty() || t[0] == '#')
            continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ValidationError(path + ": expected key = value, got '" + t + "'");
        meta[trim(std::string_view(t).substr(0, eq))] = trim(std::string_view(t).substr(eq + 1));
    }
    return meta;
}

std::vector<std::string> split_csv(std::string_view line)
{
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos)
            break;
        start = comma + 1;
    }
    return fields;
}

std::string trim(std::string_view text)
{
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos)
        return {};
    const auto last = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(first, last - first + 1));
}

std::string format_g17(double value)
{
    std::array<char, 40> buf{};
    std::snprintf(buf.data(), buf.size(), "%.17g", value);
    return buf.data();
}

std::string format_g9(double value)
{
    std::array<char, 40> buf{};
    std::snprintf(buf.data(), buf.size(), "%.9g", value);
    return buf.data();
}

double parse_double(const std::string& text, const char* what)
{
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE)
        throw ValidationError(std::string("invalid number for ") + what + ": '" + text + "'");
    return v;
}

long long parse_int(const std::string& text, const char* what)
{
    errno = 0;
    char* end = nullptr;
    const long long v = std::strtoll(text.c_str(), &end, 10);
    if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE)
        throw ValidationError(std::string("invalid integer for ") + what + ": '" + text + "'");
    return v;
}

std::string read_text_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open for writing: " + path);
    out << content;
    if (!out)
        throw IoError("write failed: " + path);
}

bool file_exists(const std::string& path)
{
    std::error_code ec;
    return std::filesystem::is_regular_file(path, ec);
}

void ensure_directory(const std::string& path)
{
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec)
        throw IoError("cannot create directory " + path + ": " + ec.message());
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed)
{
    std::uint64_t h = seed;
    for (const unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value)
{
    std::array<char, 17> buf{};
    std::snprintf(buf.data(), buf.size(), "%016llx", static_cast<unsigned long long>(value));
    return buf.data();
}

} // namespace xspod
