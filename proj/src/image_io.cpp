#include "uemkit/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <sstream>
#include <vector>

#include "uemkit/spectral_data.hpp"

namespace uem::io {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

void write_png_bytes(const std::filesystem::path& path, std::size_t width, std::size_t height,
                     int color_type, const std::vector<unsigned char>& rows) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng: failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = rows.size() / height;
  for (std::size_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(rows.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

unsigned char quantise(double v, const PngScale& s) {
  if (s.max <= s.min) return 0;
  return static_cast<unsigned char>(std::lround(255.0 * (v - s.min) / (s.max - s.min)));
}

}  // namespace

PngScale write_png(const Tensor& image, const std::filesystem::path& path) {
  std::size_t channels = 0, h = 0, w = 0;
  if (image.rank() == 2) {
    channels = 1;
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3)) {
    channels = image.dim(0);
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw ShapeError("write_png: expected [H,W], [1,H,W] or [3,H,W], got " + shape_str(image.shape()));
  }
  if (h == 0 || w == 0) throw ShapeError("write_png: empty image");
  PngScale scale;
  const auto [lo, hi] = std::minmax_element(image.data().begin(), image.data().end());
  scale.min = *lo;
  scale.max = *hi;
  std::vector<unsigned char> rows(h * w * channels);
  const std::size_t plane = h * w;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        rows[(y * w + x) * channels + c] = quantise(image[c * plane + y * w + x], scale);
      }
    }
  }
  write_png_bytes(path, w, h, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, rows);
  write_text(path.string() + ".scale.txt",
             "min=" + fmt(scale.min) + "\nmax=" + fmt(scale.max) + "\n");
  return scale;
}

void write_png_stack(const Tensor& stack, const std::filesystem::path& dir, const std::string& stem) {
  if (stack.rank() != 3) throw ShapeError("write_png_stack: expected [C,H,W], got " + shape_str(stack.shape()));
  const std::size_t plane = stack.dim(1) * stack.dim(2);
  for (std::size_t c = 0; c < stack.dim(0); ++c) {
    Tensor band(Shape{stack.dim(1), stack.dim(2)});
    std::copy_n(stack.ptr() + c * plane, plane, band.ptr());
    write_png(band, dir / (stem + "_" + std::to_string(c) + ".png"));
  }
}

void write_tensor_csv(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  if (t.rank() == 3) {
    os << "c,y,x,value\n";
    for (std::size_t c = 0; c < t.dim(0); ++c) {
      for (std::size_t y = 0; y < t.dim(1); ++y) {
        for (std::size_t x = 0; x < t.dim(2); ++x) {
          os << c << ',' << y << ',' << x << ',' << fmt(t.at(c, y, x)) << '\n';
        }
      }
    }
  } else if (t.rank() == 2) {
    os << "y,x,value\n";
    for (std::size_t y = 0; y < t.dim(0); ++y) {
      for (std::size_t x = 0; x < t.dim(1); ++x) os << y << ',' << x << ',' << fmt(t[y * t.dim(1) + x]) << '\n';
    }
  } else {
    throw ShapeError("write_tensor_csv: expected rank 2 or 3, got " + shape_str(t.shape()));
  }
  if (!os) throw IoError("failed writing " + path.string());
}

Tensor read_tensor_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line.rfind("c,y,x,value", 0) != 0) throw DataError(path.string() + ": expected header c,y,x,value");
  struct Row {
    std::size_t c, y, x;
    double v;
  };
  std::vector<Row> rows;
  std::size_t mc = 0, my = 0, mx = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Row r{};
    if (std::sscanf(line.c_str(), "%zu,%zu,%zu,%lf", &r.c, &r.y, &r.x, &r.v) != 4) {
      throw DataError(path.string() + ": malformed row '" + line + "'");
    }
    mc = std::max(mc, r.c + 1);
    my = std::max(my, r.y + 1);
    mx = std::max(mx, r.x + 1);
    rows.push_back(r);
  }
  Tensor t(Shape{mc, my, mx});
  for (const auto& r : rows) t.at(r.c, r.y, r.x) = r.v;
  return t;
}

Tensor read_column_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  std::vector<double> values;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string cell = line.substr(line.rfind(',') == std::string::npos ? 0 : line.rfind(',') + 1);
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0') {
      if (first) {
        first = false;
        continue;
      }
      throw DataError(path.string() + ": non-numeric value '" + cell + "'");
    }
    first = false;
    values.push_back(v);
  }
  if (values.empty()) throw DataError(path.string() + ": no values");
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace uem::io
