#include "jebm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace jebm {

namespace {

constexpr char kMagic[4] = {'E', 'B', 'M', 'D'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, std::size_t& offset, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is)
    throw FormatError(std::string("truncated while reading ") + what + " at byte offset " +
                      std::to_string(offset));
  offset += 4;
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Tensor Dataset::as_matrix() const {
  return Tensor({n, example_size()}, data);
}

void Dataset::validate() const {
  if (n * example_size() != data.size())
    throw FormatError("Dataset: n * prod(shape) != data length");
  if (labels && labels->size() != n)
    throw FormatError("Dataset: label count != n");
}

Dataset gen_mixture(std::size_t n, const std::vector<std::vector<double>>& centers,
                    double std_dev, RngStream& rng) {
  if (centers.empty()) throw std::invalid_argument("gen_mixture: no centers");
  if (!(std_dev > 0.0)) throw std::invalid_argument("gen_mixture: std must be > 0");
  std::size_t d = centers[0].size();
  for (const auto& c : centers)
    if (c.size() != d) throw std::invalid_argument("gen_mixture: ragged centers");
  Dataset ds;
  ds.n = n;
  ds.shape = {d};
  ds.data.resize(n * d);
  ds.labels = std::vector<std::uint32_t>(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = static_cast<std::size_t>(rng.uniform() * centers.size()) % centers.size();
    (*ds.labels)[i] = static_cast<std::uint32_t>(c);
    for (std::size_t j = 0; j < d; ++j)
      ds.data[i * d + j] = centers[c][j] + std_dev * rng.normal();
  }
  return ds;
}

Dataset gen_pinwheel(std::size_t n, std::size_t arms, RngStream& rng) {
  if (arms == 0) throw std::invalid_argument("gen_pinwheel: arms must be >= 1");
  Dataset ds;
  ds.n = n;
  ds.shape = {2};
  ds.data.resize(n * 2);
  ds.labels = std::vector<std::uint32_t>(n);
  const double rate = 0.25;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t arm = static_cast<std::size_t>(rng.uniform() * arms) % arms;
    (*ds.labels)[i] = static_cast<std::uint32_t>(arm);
    double radial = 1.0 + 0.3 * rng.normal();
    double tangential = 0.1 * rng.normal();
    double base = 2.0 * std::numbers::pi * static_cast<double>(arm) / static_cast<double>(arms);
    double angle = base + rate * std::exp(radial) * 0.5;
    double x = radial * std::cos(angle) - tangential * std::sin(angle);
    double y = radial * std::sin(angle) + tangential * std::cos(angle);
    ds.data[i * 2] = x;
    ds.data[i * 2 + 1] = y;
  }
  return ds;
}

Dataset gen_rings(std::size_t n, const std::vector<double>& radii, RngStream& rng) {
  if (radii.empty()) throw std::invalid_argument("gen_rings: no radii");
  Dataset ds;
  ds.n = n;
  ds.shape = {2};
  ds.data.resize(n * 2);
  ds.labels = std::vector<std::uint32_t>(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ring = static_cast<std::size_t>(rng.uniform() * radii.size()) % radii.size();
    (*ds.labels)[i] = static_cast<std::uint32_t>(ring);
    double theta = 2.0 * std::numbers::pi * rng.uniform();
    double r = radii[ring] + 0.05 * radii[ring] * rng.normal();
    ds.data[i * 2] = r * std::cos(theta);
    ds.data[i * 2 + 1] = r * std::sin(theta);
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  ds.validate();
  if (ends_with(path, ".csv")) {
    std::ofstream os(path);
    if (!os) throw FormatError("save_dataset: cannot open " + path);
    os.precision(17);
    std::size_t d = ds.example_size();
    for (std::size_t i = 0; i < ds.n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        if (j) os << ',';
        os << ds.data[i * d + j];
      }
      os << '\n';
    }
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("save_dataset: cannot open " + path);
  os.write(kMagic, 4);
  write_u32(os, 1);  // version
  write_u32(os, static_cast<std::uint32_t>(ds.n));
  write_u32(os, static_cast<std::uint32_t>(ds.shape.size()));
  for (std::size_t s : ds.shape) write_u32(os, static_cast<std::uint32_t>(s));
  unsigned char label_flag = ds.labels ? 1 : 0;
  os.write(reinterpret_cast<const char*>(&label_flag), 1);
  for (double v : ds.data) {
    float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(os, bits);
  }
  if (ds.labels)
    for (std::uint32_t l : *ds.labels) write_u32(os, l);
}

Dataset load_dataset(const std::string& path) {
  if (ends_with(path, ".csv")) {
    std::ifstream is(path);
    if (!is) throw FormatError("load_dataset: cannot open " + path);
    Dataset ds;
    std::string line;
    std::size_t cols = 0;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::size_t c = 0;
      while (std::getline(ss, cell, ',')) {
        try {
          ds.data.push_back(std::stod(cell));
        } catch (const std::exception&) {
          throw FormatError("load_dataset: bad numeric cell in " + path);
        }
        ++c;
      }
      if (cols == 0)
        cols = c;
      else if (c != cols)
        throw FormatError("load_dataset: ragged CSV row in " + path);
      ++ds.n;
    }
    ds.shape = {cols};
    ds.validate();
    return ds;
  }

  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("load_dataset: cannot open " + path);
  std::size_t offset = 0;
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("load_dataset: bad magic at byte offset 0 in " + path);
  offset = 4;
  std::uint32_t version = read_u32(is, offset, "version");
  if (version != 1)
    throw FormatError("load_dataset: unsupported version " + std::to_string(version) +
                      " at byte offset 4");
  Dataset ds;
  ds.n = read_u32(is, offset, "count");
  std::uint32_t rank = read_u32(is, offset, "rank");
  for (std::uint32_t i = 0; i < rank; ++i)
    ds.shape.push_back(read_u32(is, offset, "dim"));
  unsigned char label_flag = 0;
  is.read(reinterpret_cast<char*>(&label_flag), 1);
  if (!is)
    throw FormatError("load_dataset: truncated label flag at byte offset " +
                      std::to_string(offset));
  offset += 1;
  std::size_t count = ds.n * ds.example_size();
  ds.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = read_u32(is, offset, "value");
    float f;
    std::memcpy(&f, &bits, 4);
    ds.data[i] = static_cast<double>(f);
  }
  if (label_flag == 1) {
    std::vector<std::uint32_t> labels(ds.n);
    for (std::size_t i = 0; i < ds.n; ++i) labels[i] = read_u32(is, offset, "label");
    ds.labels = std::move(labels);
  } else if (label_flag != 0) {
    throw FormatError("load_dataset: bad label flag at byte offset " +
                      std::to_string(offset - 1));
  }
  ds.validate();
  return ds;
}

Dataset load_idx_images(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("load_idx_images: cannot open " + path);
  auto read_be32 = [&is](const char* what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError(std::string("load_idx_images: truncated ") + what);
    return (static_cast<std::uint32_t>(b[0]) << 24) |
           (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
  };
  std::uint32_t magic = read_be32("magic");
  if (magic != 0x00000803)
    throw FormatError("load_idx_images: bad magic at byte offset 0");
  std::uint32_t n = read_be32("count"), h = read_be32("height"), w = read_be32("width");
  Dataset ds;
  ds.n = n;
  ds.shape = {h, w};
  ds.data.resize(static_cast<std::size_t>(n) * h * w);
  std::vector<unsigned char> buf(ds.data.size());
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw FormatError("load_idx_images: truncated pixel data");
  for (std::size_t i = 0; i < buf.size(); ++i)
    ds.data[i] = static_cast<double>(buf[i]) / 127.5 - 1.0;
  return ds;
}

void write_image_grid(const Dataset& samples, std::size_t rows, std::size_t cols,
                      const std::string& path) {
  samples.validate();
  if (samples.n < rows * cols)
    throw std::invalid_argument("write_image_grid: not enough samples");
  bool gray = samples.shape.size() == 2;
  bool color = samples.shape.size() == 3 && samples.shape[2] == 3;
  if (!gray && !color)
    throw std::invalid_argument("write_image_grid: per-sample shape must be HxW or HxWx3");
  std::size_t h = samples.shape[0], w = samples.shape[1];
  std::size_t channels = color ? 3 : 1;
  std::size_t gh = rows * h + rows + 1, gw = cols * w + cols + 1;
  std::vector<unsigned char> pix(gh * gw * channels, 0);

  auto to_byte = [](double v) {
    double m = (v + 1.0) * 127.5;
    return static_cast<unsigned char>(std::clamp(m, 0.0, 255.0));
  };
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double* ex = samples.data.data() + (r * cols + c) * samples.example_size();
      std::size_t y0 = 1 + r * (h + 1), x0 = 1 + c * (w + 1);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t ch = 0; ch < channels; ++ch)
            pix[((y0 + y) * gw + (x0 + x)) * channels + ch] =
                to_byte(ex[(y * w + x) * channels + ch]);
    }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("write_image_grid: cannot open " + path);
  os << (color ? "P6" : "P5") << '\n' << gw << ' ' << gh << '\n' << 255 << '\n';
  os.write(reinterpret_cast<const char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
}

}  // namespace jebm
