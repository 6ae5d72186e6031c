#include "cgqr/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cgqr::io {

namespace {

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string next_token(std::istream& in)
{
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty())
                break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

int parse_positive(const std::string& tok, const std::filesystem::path& path)
{
    try {
        int v = std::stoi(tok);
        if (v > 0)
            return v;
    } catch (const std::exception&) {
    }
    throw IoError("malformed PGM header in " + path.string());
}

}  // namespace

Gray8 read_pgm(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    const std::string magic = next_token(in);
    if (magic != "P5" && magic != "P2")
        throw IoError("not a PGM file: " + path.string());
    Gray8 img;
    img.width = parse_positive(next_token(in), path);
    img.height = parse_positive(next_token(in), path);
    const int maxval = parse_positive(next_token(in), path);
    if (maxval > 255)
        throw IoError("16-bit PGM not supported: " + path.string());
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    if (magic == "P5") {
        in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
        if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
            throw IoError("truncated PGM data in " + path.string());
    } else {
        for (auto& p : img.pixels) {
            int v;
            if (!(in >> v) || v < 0 || v > maxval)
                throw IoError("bad ASCII PGM data in " + path.string());
            p = static_cast<std::uint8_t>(v);
        }
    }
    return img;
}

std::string encode_pgm(const Gray8& img)
{
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    return out;
}

std::string encode_ppm(const Rgb8& img)
{
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    return out;
}

void write_atomic(const std::filesystem::path& path, const std::string& bytes)
{
    namespace fs = std::filesystem;
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec)
            throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        throw IoError("cannot rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

void write_pgm(const std::filesystem::path& path, const Gray8& img)
{
    write_atomic(path, encode_pgm(img));
}

void write_ppm(const std::filesystem::path& path, const Rgb8& img)
{
    write_atomic(path, encode_ppm(img));
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Gray8 to_gray8(const LabelGrid& labels)
{
    Gray8 g{labels.width, labels.height, std::vector<std::uint8_t>(labels.size())};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels.values[i] < 0 || labels.values[i] > 255)
            throw IoError("label value out of 8-bit range");
        g.pixels[i] = static_cast<std::uint8_t>(labels.values[i]);
    }
    return g;
}

LabelGrid labels_from_gray8(const Gray8& img)
{
    LabelGrid out(img.height, img.width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        out.values[i] = img.pixels[i];
    return out;
}

ImageGrid image_from_gray8(const Gray8& img)
{
    ImageGrid out(img.height, img.width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        out.values[i] = img.pixels[i];
    return out;
}

Gray8 quantize(const ImageGrid& img)
{
    Gray8 g{img.width, img.height, std::vector<std::uint8_t>(img.size())};
    for (std::size_t i = 0; i < img.size(); ++i)
        g.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(img.values[i]), 0L, 255L));
    return g;
}

Gray8 stretch(const ImageGrid& img)
{
    Gray8 g{img.width, img.height, std::vector<std::uint8_t>(img.size(), 0)};
    if (img.empty())
        return g;
    auto [lo, hi] = std::minmax_element(img.values.begin(), img.values.end());
    const double range = *hi - *lo;
    if (range <= 0.0)
        return g;
    for (std::size_t i = 0; i < img.size(); ++i)
        g.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (img.values[i] - *lo) / range));
    return g;
}

}  // namespace cgqr::io
