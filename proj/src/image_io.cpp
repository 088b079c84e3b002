#include "mspn/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mspn/errors.hpp"

namespace mspn {
namespace {

constexpr uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

uint32_t be32(const uint8_t* p) {
  return uint32_t(p[0]) << 24 | uint32_t(p[1]) << 16 | uint32_t(p[2]) << 8 | p[3];
}

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v >> 24));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v));
}

std::vector<uint8_t> zlib_inflate(const uint8_t* data, std::size_t n,
                                  std::size_t expected) {
  std::vector<uint8_t> out(expected);
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw IoError("zlib inflateInit failed");
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = uInt(n);
  zs.next_out = out.data();
  zs.avail_out = uInt(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != expected)
    throw IoError("png: compressed image data is corrupt or truncated");
  return out;
}

std::vector<uint8_t> zlib_deflate(const uint8_t* data, std::size_t n) {
  std::vector<uint8_t> out(compressBound(uLong(n)));
  uLongf out_len = uLongf(out.size());
  if (compress2(out.data(), &out_len, data, uLong(n), 6) != Z_OK)
    throw IoError("zlib compress failed");
  out.resize(out_len);
  return out;
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

void unfilter_scanlines(std::vector<uint8_t>& raw, int h, int stride, int bpp) {
  std::vector<uint8_t> prev(stride, 0);
  for (int r = 0; r < h; ++r) {
    uint8_t* line = raw.data() + std::size_t(r) * (stride + 1);
    const int filter = line[0];
    uint8_t* cur = line + 1;
    switch (filter) {
      case 0:
        break;
      case 1:
        for (int i = bpp; i < stride; ++i) cur[i] = uint8_t(cur[i] + cur[i - bpp]);
        break;
      case 2:
        for (int i = 0; i < stride; ++i) cur[i] = uint8_t(cur[i] + prev[i]);
        break;
      case 3:
        for (int i = 0; i < stride; ++i) {
          const int left = i >= bpp ? cur[i - bpp] : 0;
          cur[i] = uint8_t(cur[i] + (left + prev[i]) / 2);
        }
        break;
      case 4:
        for (int i = 0; i < stride; ++i) {
          const int left = i >= bpp ? cur[i - bpp] : 0;
          const int upleft = i >= bpp ? prev[i - bpp] : 0;
          cur[i] = uint8_t(cur[i] + paeth(left, prev[i], upleft));
        }
        break;
      default:
        throw IoError("png: unknown scanline filter " + std::to_string(filter));
    }
    std::copy(cur, cur + stride, prev.begin());
  }
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return bytes;
}

float luma(int r, int g, int b) {
  return float((0.299 * r + 0.587 * g + 0.114 * b) / 255.0);
}

}  // namespace

Image decode_png_bytes(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0)
    throw IoError("png: bad signature");

  int w = 0, h = 0, color_type = -1;
  std::vector<uint8_t> palette;  // 3 bytes per entry
  std::vector<uint8_t> idat;
  bool saw_ihdr = false, saw_iend = false;

  std::size_t pos = 8;
  while (pos + 8 <= bytes.size() && !saw_iend) {
    const uint32_t len = be32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw IoError("png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const uint8_t* data = &bytes[pos + 8];
    const uint32_t crc_stored = be32(&bytes[pos + 8 + len]);
    uLong crc = crc32(0, &bytes[pos + 4], len + 4);
    if (crc != crc_stored) throw IoError("png: chunk crc mismatch");

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("png: bad IHDR length");
      w = int(be32(data));
      h = int(be32(data + 4));
      const int bit_depth = data[8];
      color_type = data[9];
      const int interlace = data[12];
      if (w < 1 || h < 1) throw IoError("png: bad dimensions");
      if (bit_depth != 8) throw IoError("png: only 8-bit depth is supported");
      if (color_type != 0 && color_type != 2 && color_type != 3 && color_type != 4 &&
          color_type != 6)
        throw IoError("png: unsupported color type " + std::to_string(color_type));
      if (interlace != 0) throw IoError("png: interlaced files are not supported");
      saw_ihdr = true;
    } else if (std::memcmp(type, "PLTE", 4) == 0) {
      palette.assign(data, data + len);
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || idat.empty()) throw IoError("png: missing chunks");

  const int channels = color_type == 0 ? 1
                       : color_type == 2 ? 3
                       : color_type == 3 ? 1
                       : color_type == 4 ? 2
                                         : 4;
  const int stride = w * channels;
  std::vector<uint8_t> raw =
      zlib_inflate(idat.data(), idat.size(), std::size_t(h) * (stride + 1));
  unfilter_scanlines(raw, h, stride, channels);

  Image img(h, w);
  for (int r = 0; r < h; ++r) {
    const uint8_t* line = raw.data() + std::size_t(r) * (stride + 1) + 1;
    for (int c = 0; c < w; ++c) {
      const uint8_t* px = line + std::size_t(c) * channels;
      switch (color_type) {
        case 0:
        case 4:
          img.at(r, c) = px[0] / 255.f;
          break;
        case 2:
        case 6:
          img.at(r, c) = luma(px[0], px[1], px[2]);
          break;
        case 3: {
          const std::size_t idx = std::size_t(px[0]) * 3;
          if (idx + 2 >= palette.size()) throw IoError("png: palette index out of range");
          img.at(r, c) = luma(palette[idx], palette[idx + 1], palette[idx + 2]);
          break;
        }
      }
    }
  }
  return img;
}

std::vector<uint8_t> encode_png_gray(const Image& img) {
  require(img.h >= 1 && img.w >= 1, "encode_png_gray: empty image");
  std::vector<uint8_t> raw;
  raw.reserve(std::size_t(img.h) * (img.w + 1));
  for (int r = 0; r < img.h; ++r) {
    raw.push_back(0);  // filter: none
    for (int c = 0; c < img.w; ++c) {
      const float v = std::clamp(img.at(r, c), 0.f, 1.f);
      raw.push_back(uint8_t(std::lround(v * 255.f)));
    }
  }
  const std::vector<uint8_t> compressed = zlib_deflate(raw.data(), raw.size());

  std::vector<uint8_t> out(kPngSig, kPngSig + 8);
  auto chunk = [&out](const char* type, const std::vector<uint8_t>& data) {
    put_be32(out, uint32_t(data.size()));
    const std::size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const uLong crc = crc32(0, out.data() + type_at, uInt(4 + data.size()));
    put_be32(out, uint32_t(crc));
  };

  std::vector<uint8_t> ihdr;
  put_be32(ihdr, uint32_t(img.w));
  put_be32(ihdr, uint32_t(img.h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // color type: grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace
  chunk("IHDR", ihdr);
  chunk("IDAT", compressed);
  chunk("IEND", {});
  return out;
}

Image decode_pgm_bytes(const std::vector<uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space();
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw IoError("pgm: malformed header");
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw IoError("pgm: only binary P5 is supported");
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w < 1 || h < 1) throw IoError("pgm: bad dimensions");
  if (maxval != 255) throw IoError("pgm: only 8-bit maxval 255 is supported");
  ++pos;  // single whitespace after maxval
  if (pos + std::size_t(w) * h > bytes.size()) throw IoError("pgm: truncated pixel data");

  Image img{int(h), int(w)};
  for (std::size_t i = 0; i < std::size_t(w) * h; ++i) img.pix[i] = bytes[pos + i] / 255.f;
  return img;
}

Image read_image(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0)
    return decode_png_bytes(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5')
    return decode_pgm_bytes(bytes);
  throw IoError("unsupported image format (expect 8-bit PNG or PGM): " + path);
}

void write_png_gray(const std::string& path, const Image& img) {
  const std::vector<uint8_t> bytes = encode_png_gray(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

void write_pgm_gray(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  for (float v : img.pix)
    out.put(char(uint8_t(std::lround(std::clamp(v, 0.f, 1.f) * 255.f))));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace mspn
