#include "pottsmg/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "pottsmg/errors.hpp"

namespace pmg {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

struct Netpbm {
  char kind = 0;  // '5' or '6'
  int width = 0;
  int height = 0;
  size_t data = 0;  // offset of the first pixel byte
};

// Header tokens are separated by whitespace; '#' starts a comment running to
// the end of the line. Exactly one whitespace byte precedes the raster.
Netpbm parse_header(const std::vector<std::uint8_t>& b, const std::string& name) {
  auto fail = [&](size_t at, const std::string& what) -> ParseError {
    return ParseError(name + ": " + what + " at byte offset " + std::to_string(at));
  };
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) throw fail(0, "not a binary PGM/PPM file");
  Netpbm h;
  h.kind = static_cast<char>(b[1]);
  size_t pos = 2;
  auto skip = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip();
    const size_t start = pos;
    long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos] - '0');
      if (v > 1 << 20) throw fail(start, std::string(what) + " too large");
      ++pos;
    }
    if (pos == start) throw fail(start, std::string("expected ") + what);
    return static_cast<int>(v);
  };
  h.width = number("width");
  h.height = number("height");
  const size_t maxval_at = pos;
  const int maxval = number("maxval");
  if (h.width < 1 || h.height < 1) throw fail(2, "empty image");
  if (maxval != 255) throw fail(maxval_at, "maxval must be 255");
  if (pos >= b.size() || !std::isspace(b[pos])) throw fail(pos, "missing separator before raster");
  h.data = pos + 1;
  const size_t need = static_cast<size_t>(h.width) * h.height * (h.kind == '6' ? 3 : 1);
  if (b.size() - h.data < need) {
    throw fail(b.size(), "truncated raster (need " + std::to_string(need) + " bytes, have " +
                             std::to_string(b.size() - h.data) + ")");
  }
  return h;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

std::vector<std::uint8_t> netpbm_header(char kind, int w, int h) {
  const std::string s = std::string("P") + kind + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

}  // namespace

Image read_image(const fs::path& path) {
  const auto b = read_bytes(path);
  const Netpbm h = parse_header(b, path.string());
  Image img;
  img.channels.assign(3, Field(1, h.height, h.width));
  const int n = h.width * h.height;
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < 3; ++s) {
      const std::uint8_t v = h.kind == '6' ? b[h.data + 3 * i + s] : b[h.data + i];
      img.channels[s].values[i] = v / 255.0;
    }
  }
  return img;
}

void write_image(const Image& img, const fs::path& path) {
  check_image(img);
  auto out = netpbm_header('6', img.cols(), img.rows());
  const int n = img.rows() * img.cols();
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < 3; ++s) out.push_back(quantize(img.channels[s].values[i]));
  }
  write_bytes(out, path);
}

Field read_mask(const fs::path& path) {
  const auto b = read_bytes(path);
  const Netpbm h = parse_header(b, path.string());
  if (h.kind != '5') throw ParseError(path.string() + ": masks must be binary PGM (P5) at byte offset 0");
  Field m(1, h.height, h.width);
  for (int i = 0; i < m.size(); ++i) m.values[i] = b[h.data + i] >= 128 ? 1.0 : 0.0;
  return m;
}

void write_gray(const Field& f, const fs::path& path) {
  auto out = netpbm_header('5', f.cols, f.rows);
  for (double v : f.values) out.push_back(quantize(v));
  write_bytes(out, path);
}

// ---------------------------------------------------------------------------

ShapeKind parse_shape_kind(const std::string& s) {
  if (s == "disk") return ShapeKind::Disk;
  if (s == "rectangle") return ShapeKind::Rectangle;
  if (s == "mixed") return ShapeKind::Mixed;
  throw ConfigError("unknown shape kind '" + s + "' (expected disk, rectangle or mixed)");
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Sample make_sample(int index, int size, ShapeKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(splitmix(seed ^ splitmix(static_cast<std::uint64_t>(index) + 1)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = size * size;
  Field mask(1, size, size);
  const double lo = 0.05 * n;
  const double hi = 0.6 * n;
  // Redraw the shape set until the foreground fraction is in range.
  for (;;) {
    std::fill(mask.values.begin(), mask.values.end(), 0.0);
    const int shapes = 1 + static_cast<int>(unit(rng) * 3.0);
    for (int q = 0; q < shapes; ++q) {
      const bool disk = kind == ShapeKind::Disk || (kind == ShapeKind::Mixed && unit(rng) < 0.5);
      const double cr = unit(rng) * size;
      const double cc = unit(rng) * size;
      if (disk) {
        const double rad = size * (0.08 + 0.22 * unit(rng));
        for (int r = 0; r < size; ++r) {
          for (int c = 0; c < size; ++c) {
            const double dr = r + 0.5 - cr;
            const double dc = c + 0.5 - cc;
            if (dr * dr + dc * dc <= rad * rad) mask.at(r, c) = 1.0;
          }
        }
      } else {
        const double hr = size * (0.08 + 0.22 * unit(rng));
        const double hc = size * (0.08 + 0.22 * unit(rng));
        for (int r = 0; r < size; ++r) {
          for (int c = 0; c < size; ++c) {
            if (std::abs(r + 0.5 - cr) <= hr && std::abs(c + 0.5 - cc) <= hc) mask.at(r, c) = 1.0;
          }
        }
      }
    }
    double fg = 0.0;
    for (double v : mask.values) fg += v;
    if (fg >= lo && fg <= hi) break;
  }
  double fgc[3];
  double bgc[3];
  for (;;) {
    double fm = 0.0;
    double bm = 0.0;
    for (int s = 0; s < 3; ++s) {
      fgc[s] = unit(rng);
      bgc[s] = unit(rng);
      fm += fgc[s];
      bm += bgc[s];
    }
    if (std::abs(fm - bm) / 3.0 >= 0.2) break;
  }
  Sample out;
  char id[32];
  std::snprintf(id, sizeof(id), "s%05d", index);
  out.id = id;
  out.image.channels.assign(3, Field(1, size, size));
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < n; ++i) out.image.channels[s].values[i] = mask.values[i] > 0.5 ? fgc[s] : bgc[s];
  }
  out.mask = std::move(mask);
  return out;
}

}  // namespace

std::vector<Sample> gen_dataset(int count, int size, ShapeKind shapes, std::uint64_t seed) {
  if (count < 0) throw ConfigError("dataset count must be >= 0");
  if (size < 1) throw ConfigError("dataset size must be >= 1");
  std::vector<Sample> out(count);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < count; ++i) out[i] = make_sample(i, size, shapes, seed);
  return out;
}

void save_dataset(const std::vector<Sample>& samples, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  for (const Sample& s : samples) {
    write_image(s.image, dir / "images" / (s.id + ".ppm"));
    write_gray(s.mask, dir / "masks" / (s.id + "_mask.pgm"));
  }
}

std::vector<Sample> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir / "images")) throw InputError("no images/ directory under " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir / "images")) {
    if (e.path().extension() == ".ppm") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  std::vector<Sample> out;
  for (const std::string& id : ids) {
    const fs::path mask = dir / "masks" / (id + "_mask.pgm");
    if (!fs::exists(mask)) throw InputError("missing mask " + mask.string());
    Sample s;
    s.id = id;
    s.image = read_image(dir / "images" / (id + ".ppm"));
    s.mask = read_mask(mask);
    if (s.mask.rows != s.image.rows() || s.mask.cols != s.image.cols()) {
      throw InputError("mask size differs from image for " + id);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'M', 'G', '1'};

class Writer {
 public:
  std::vector<std::uint8_t> bytes;

  template <typename T>
  void put(T v) {
    static_assert(std::endian::native == std::endian::little, "little-endian host expected");
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > b_.size()) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ControlParams& theta, Precision precision) {
  const NetConfig& c = theta.config();
  Writer w;
  for (char ch : kMagic) w.put<char>(ch);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(precision));
  w.put<std::int32_t>(c.levels);
  w.put<std::int32_t>(c.time_steps);
  w.put<double>(c.dt);
  w.put<double>(c.epsilon);
  w.put<double>(c.eta);
  w.put<double>(c.sigma);
  w.put<std::int32_t>(c.gaussian_radius);
  w.put<std::int32_t>(static_cast<std::int32_t>(c.variant));
  w.put<std::int32_t>(c.act_iters);
  w.put<std::int32_t>(c.batchnorm ? 1 : 0);
  w.put<std::int32_t>(c.pool == PoolMode::Max ? 1 : 0);
  w.put<std::int32_t>(c.radius_init);
  w.put<std::int32_t>(c.radius_coarse);
  w.put<std::int32_t>(c.radius_default);
  w.put<std::int32_t>(c.tie_weights ? 1 : 0);
  w.put<std::int32_t>(c.kappa_c1 ? 1 : 0);
  for (int v : c.substeps) w.put<std::int32_t>(v);
  for (int v : c.widths) w.put<std::int32_t>(v);
  w.put<std::uint64_t>(theta.scalar_count());
  // Coverage audit: every tensor is written exactly once, in list order.
  size_t written = 0;
  for (const Tensor& t : theta.tensors()) {
    for (double v : t.data) {
      if (precision == Precision::F64) w.put<double>(v);
      else w.put<float>(static_cast<float>(v));
    }
    written += t.data.size();
  }
  if (written != theta.scalar_count()) throw CheckpointError("checkpoint coverage audit failed");
  return std::move(w.bytes);
}

ControlParams decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  for (char ch : kMagic) {
    if (r.get<char>("magic") != ch) throw CheckpointError("bad checkpoint magic (expected PMG1)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto prec = r.get<std::uint32_t>("precision");
  if (prec != 32 && prec != 64) throw CheckpointError("bad precision flag " + std::to_string(prec));
  NetConfig c;
  c.levels = r.get<std::int32_t>("J");
  c.time_steps = r.get<std::int32_t>("N");
  c.dt = r.get<double>("dt");
  c.epsilon = r.get<double>("epsilon");
  c.eta = r.get<double>("eta");
  c.sigma = r.get<double>("sigma");
  c.gaussian_radius = r.get<std::int32_t>("gaussian radius");
  const auto variant = r.get<std::int32_t>("variant");
  if (variant < 0 || variant > 2) throw CheckpointError("bad variant code " + std::to_string(variant));
  c.variant = static_cast<Variant>(variant);
  c.act_iters = r.get<std::int32_t>("activation iterations");
  c.batchnorm = r.get<std::int32_t>("batchnorm") != 0;
  c.pool = r.get<std::int32_t>("pool") != 0 ? PoolMode::Max : PoolMode::Average;
  c.radius_init = r.get<std::int32_t>("radius");
  c.radius_coarse = r.get<std::int32_t>("radius");
  c.radius_default = r.get<std::int32_t>("radius");
  c.tie_weights = r.get<std::int32_t>("tie") != 0;
  c.kappa_c1 = r.get<std::int32_t>("kappa") != 0;
  if (c.levels < 1 || c.levels > 16) throw CheckpointError("bad level count " + std::to_string(c.levels));
  c.substeps.resize(c.levels);
  c.widths.resize(c.levels);
  for (int& v : c.substeps) v = r.get<std::int32_t>("L");
  for (int& v : c.widths) v = r.get<std::int32_t>("c");
  const auto declared = r.get<std::uint64_t>("scalar count");
  ControlParams theta;
  try {
    theta = ControlParams(c);
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint header holds an invalid config: ") + e.what());
  }
  const size_t width = prec == 64 ? 8 : 4;
  if (declared != theta.scalar_count() || r.remaining() != theta.scalar_count() * width) {
    throw CheckpointError("checkpoint payload length mismatch: header implies " +
                          std::to_string(theta.scalar_count() * width) + " bytes, file holds " +
                          std::to_string(r.remaining()));
  }
  for (Tensor& t : theta.tensors()) {
    for (double& v : t.data) v = prec == 64 ? r.get<double>("payload") : r.get<float>("payload");
  }
  return theta;
}

void save_checkpoint(const ControlParams& theta, const fs::path& path, Precision precision) {
  write_bytes(encode_checkpoint(theta, precision), path);
}

ControlParams load_checkpoint(const fs::path& path) { return decode_checkpoint(read_bytes(path)); }

}  // namespace pmg
