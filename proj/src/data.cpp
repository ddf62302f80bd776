#include "carunet/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

namespace {

void require_chw(std::string_view op, const Tensor& t) {
  if (!t.defined() || t.shape().rank() != 3) {
    fail(ErrorKind::shape, std::string(op) + ": expected a [C, H, W] tensor, got " +
                               (t.defined() ? t.shape().str() : std::string("undefined")));
  }
}

// Applies a coordinate map out(c, y, x) = in(c, src(y, x)) for permutations.
template <typename Map>
Tensor remap(const Tensor& t, std::size_t out_h, std::size_t out_w, Map src) {
  const std::size_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
  Tensor out(Shape{C, out_h, out_w});
  auto in = t.data();
  auto o = out.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto [sy, sx] = src(y, x);
        o[(c * out_h + y) * out_w + x] = in[(c * H + sy) * W + sx];
      }
  return out;
}

}  // namespace

std::size_t round_up(std::size_t size, std::size_t multiple) { return (size + multiple - 1) / multiple * multiple; }

PadResult pad_to_target(const Tensor& image, std::size_t target_h, std::size_t target_w) {
  require_chw("pad_to_target", image);
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (target_h < H || target_w < W) {
    fail(ErrorKind::shape, "pad_to_target: target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                               " is smaller than image " + std::to_string(H) + "x" + std::to_string(W));
  }
  PadResult r{Tensor(Shape{C, target_h, target_w}), Offsets{(target_h - H) / 2, (target_w - W) / 2}};
  auto in = image.data();
  auto o = r.padded.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y) {
      std::copy_n(in.data() + (c * H + y) * W, W,
                  o.data() + (c * target_h + y + r.offsets.top) * target_w + r.offsets.left);
    }
  return r;
}

Tensor crop_to_original(const Tensor& padded, const Offsets& offsets, const Extent& original) {
  require_chw("crop_to_original", padded);
  const std::size_t C = padded.dim(0), H = padded.dim(1), W = padded.dim(2);
  if (original.height == 0 || original.width == 0 || offsets.top + original.height > H ||
      offsets.left + original.width > W) {
    fail(ErrorKind::shape, "crop_to_original: region " + std::to_string(original.height) + "x" +
                               std::to_string(original.width) + " at (" + std::to_string(offsets.top) + "," +
                               std::to_string(offsets.left) + ") exceeds " + padded.shape().str());
  }
  Tensor out(Shape{C, original.height, original.width});
  auto in = padded.data();
  auto o = out.data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < original.height; ++y) {
      std::copy_n(in.data() + (c * H + y + offsets.top) * W + offsets.left, original.width,
                  o.data() + (c * original.height + y) * original.width);
    }
  return out;
}

FundusSample pad_sample(const FundusSample& sample, std::size_t target_h, std::size_t target_w) {
  FundusSample out = sample;
  PadResult img = pad_to_target(sample.image, target_h, target_w);
  PadResult msk = pad_to_target(sample.mask, target_h, target_w);
  out.image = img.padded;
  out.mask = msk.padded;
  // Offsets compose when an already padded sample is padded again.
  out.pad_offsets = Offsets{sample.pad_offsets.top + img.offsets.top, sample.pad_offsets.left + img.offsets.left};
  return out;
}

Tensor flip_horizontal(const Tensor& t) {
  require_chw("flip_horizontal", t);
  const std::size_t W = t.dim(2);
  return remap(t, t.dim(1), W, [W](std::size_t y, std::size_t x) { return std::pair{y, W - 1 - x}; });
}

Tensor flip_vertical(const Tensor& t) {
  require_chw("flip_vertical", t);
  const std::size_t H = t.dim(1);
  return remap(t, H, t.dim(2), [H](std::size_t y, std::size_t x) { return std::pair{H - 1 - y, x}; });
}

Tensor transpose_hw(const Tensor& t) {
  require_chw("transpose_hw", t);
  return remap(t, t.dim(2), t.dim(1), [](std::size_t y, std::size_t x) { return std::pair{x, y}; });
}

Tensor rotate90(const Tensor& t, int quarter_turns) {
  require_chw("rotate90", t);
  const int k = ((quarter_turns % 4) + 4) % 4;
  const std::size_t H = t.dim(1), W = t.dim(2);
  switch (k) {
    case 1:  // out[y][x] = in[x][W-1-y], out is W x H
      return remap(t, W, H, [W](std::size_t y, std::size_t x) { return std::pair{x, W - 1 - y}; });
    case 2:
      return remap(t, H, W, [H, W](std::size_t y, std::size_t x) { return std::pair{H - 1 - y, W - 1 - x}; });
    case 3:
      return remap(t, W, H, [H](std::size_t y, std::size_t x) { return std::pair{H - 1 - x, y}; });
    default:
      return t.clone();
  }
}

Tensor rotate_angle(const Tensor& t, double degrees, bool nearest) {
  require_chw("rotate_angle", t);
  const std::size_t C = t.dim(0), H = t.dim(1), W = t.dim(2);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = (static_cast<double>(H) - 1) / 2, cx = (static_cast<double>(W) - 1) / 2;
  Tensor out(t.shape());
  auto in = t.data();
  auto o = out.data();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      // Inverse map: rotate output coordinates back into the source.
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sy = cs * dy - sn * dx + cy;
      const double sx = sn * dy + cs * dx + cx;
      for (std::size_t c = 0; c < C; ++c) {
        Real v = 0;
        if (nearest) {
          const long iy = std::lround(sy), ix = std::lround(sx);
          if (iy >= 0 && ix >= 0 && iy < static_cast<long>(H) && ix < static_cast<long>(W)) {
            v = in[(c * H + iy) * W + ix];
          }
        } else {
          const double fy = std::floor(sy), fx = std::floor(sx);
          const double ay = sy - fy, ax = sx - fx;
          double acc = 0;
          for (int j = 0; j < 2; ++j)
            for (int i = 0; i < 2; ++i) {
              const long py = static_cast<long>(fy) + j, px = static_cast<long>(fx) + i;
              if (py < 0 || px < 0 || py >= static_cast<long>(H) || px >= static_cast<long>(W)) continue;
              const double wgt = (j ? ay : 1 - ay) * (i ? ax : 1 - ax);
              acc += wgt * in[(c * H + py) * W + px];
            }
          v = static_cast<Real>(acc);
        }
        o[(c * H + y) * W + x] = v;
      }
    }
  return out;
}

FundusSample augment(const FundusSample& sample, Rng& rng, const AugmentOptions& options) {
  FundusSample out = sample;
  // Every decision is drawn up front.
  const bool rotate = rng.bernoulli(options.rotate_probability);
  const int turns = static_cast<int>(rng.below(4));
  const double angle = rng.uniform(-options.max_angle_degrees, options.max_angle_degrees);
  const bool hflip = rng.bernoulli(options.hflip_probability);
  const bool vflip = rng.bernoulli(options.vflip_probability);
  const bool transpose = rng.bernoulli(options.transpose_probability);

  auto both = [&](auto&& fn) {
    out.image = fn(out.image, false);
    out.mask = fn(out.mask, true);
  };
  if (rotate) {
    if (options.right_angles_only) {
      both([&](const Tensor& t, bool) { return rotate90(t, turns); });
    } else {
      both([&](const Tensor& t, bool is_mask) { return rotate_angle(t, angle, is_mask); });
    }
  }
  if (hflip) both([](const Tensor& t, bool) { return flip_horizontal(t); });
  if (vflip) both([](const Tensor& t, bool) { return flip_vertical(t); });
  if (transpose) both([](const Tensor& t, bool) { return transpose_hw(t); });
  return out;
}

const FundusSample& Dataset::find(const std::string& id) const {
  for (const FundusSample& s : samples) {
    if (s.id == id) return s;
  }
  fail(ErrorKind::data, "no sample with id '" + id + "'");
}

std::vector<FundusSample> Dataset::select(const std::vector<std::string>& ids) const {
  std::vector<FundusSample> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) out.push_back(find(id));
  return out;
}

Tensor image_to_tensor(const Image& image) {
  const std::size_t H = image.height, W = image.width;
  Tensor t(Shape{3, H, W});
  auto o = t.data();
  std::uint16_t lo = 65535, hi = 0;
  for (std::uint16_t v : image.pixels) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi > lo ? static_cast<double>(hi - lo) : 1.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src_c = image.channels == 3 ? c : 0;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        o[(c * H + y) * W + x] = static_cast<Real>((image.at(y, x, src_c) - lo) / range);
      }
  }
  return t;
}

Tensor mask_to_tensor(const Image& image) {
  const std::size_t H = image.height, W = image.width;
  Tensor t(Shape{1, H, W});
  auto o = t.data();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      o[y * W + x] = 2u * image.at(y, x, 0) > image.max_value ? Real(1) : Real(0);
    }
  return t;
}

namespace {

bool supported_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

std::map<std::string, std::filesystem::path> index_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::data, "missing directory " + dir.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !supported_extension(entry.path())) continue;
    const std::string stem = entry.path().stem().string();
    if (!out.emplace(stem, entry.path()).second) {
      fail(ErrorKind::data, "duplicate id '" + stem + "' in " + dir.string());
    }
  }
  return out;
}

std::size_t expected_count(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::drive: return 40;
    case DatasetKind::chase: return 28;
    case DatasetKind::stare: return 20;
    case DatasetKind::synthetic: return 0;
  }
  return 0;
}

}  // namespace

std::vector<std::vector<std::string>> make_folds(std::vector<std::string> ids, std::size_t k, std::uint64_t seed) {
  if (k == 0 || ids.size() < k) fail(ErrorKind::usage, "cannot split " + std::to_string(ids.size()) + " ids into " +
                                                           std::to_string(k) + " folds");
  std::sort(ids.begin(), ids.end());
  Rng rng = Rng::derive(seed, 0x5174);
  shuffle(ids, rng);
  std::vector<std::vector<std::string>> folds(k);
  for (std::size_t i = 0; i < ids.size(); ++i) folds[i * k / ids.size()].push_back(ids[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

Dataset load_dataset(const std::filesystem::path& root, DatasetKind kind, std::uint64_t seed, std::size_t fold) {
  if (!std::filesystem::is_directory(root)) fail(ErrorKind::data, "dataset root not found: " + root.string());
  const auto images = index_directory(root / "images");
  const auto masks = index_directory(root / "masks");

  std::vector<std::string> problems;
  for (const auto& [id, path] : images) {
    if (!masks.count(id)) problems.push_back(id + ": no mask in " + (root / "masks").string());
  }
  for (const auto& [id, path] : masks) {
    if (!images.count(id)) problems.push_back(id + ": mask without image");
  }
  const std::size_t want = kind == DatasetKind::synthetic ? images.size() : expected_count(kind);
  if (images.size() != want || images.empty()) {
    problems.push_back("expected " + std::to_string(want) + " " + std::string(to_string(kind)) + " images, found " +
                       std::to_string(images.size()));
  }
  if (!problems.empty()) {
    std::string msg = "dataset " + root.string() + " is inconsistent:";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(ErrorKind::data, msg);
  }

  Dataset ds;
  for (const auto& [id, path] : images) {
    const Image img = read_image(path);
    const Image msk = read_image(masks.at(id));
    if (img.width != msk.width || img.height != msk.height) {
      fail(ErrorKind::data, id + ": image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                " but mask is " + std::to_string(msk.width) + "x" + std::to_string(msk.height));
    }
    FundusSample s;
    s.id = id;
    s.image = image_to_tensor(img);
    s.mask = mask_to_tensor(msk);
    s.original_size = Extent{img.height, img.width};
    ds.samples.push_back(std::move(s));
  }

  std::vector<std::string> ids;
  for (const auto& s : ds.samples) ids.push_back(s.id);
  switch (kind) {
    case DatasetKind::drive: {
      const bool tagged = std::all_of(ids.begin(), ids.end(), [](const std::string& id) {
        return id.find("training") != std::string::npos || id.find("test") != std::string::npos;
      });
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const bool train = tagged ? ids[i].find("training") != std::string::npos : i < 20;
        (train ? ds.plan.train : ds.plan.test).push_back(ids[i]);
      }
      if (ds.plan.train.size() != 20) {
        fail(ErrorKind::data, "DRIVE split must be 20/20, got " + std::to_string(ds.plan.train.size()) + "/" +
                                  std::to_string(ds.plan.test.size()));
      }
      break;
    }
    case DatasetKind::chase:
      ds.plan.train.assign(ids.begin(), ids.begin() + 20);
      ds.plan.test.assign(ids.begin() + 20, ids.end());
      break;
    case DatasetKind::stare: {
      ds.plan.folds = make_folds(ids, 4, seed);
      if (fold >= 4) fail(ErrorKind::usage, "STARE fold must be 0..3, got " + std::to_string(fold));
      ds.plan.test = ds.plan.folds[fold];
      const std::set<std::string> test(ds.plan.test.begin(), ds.plan.test.end());
      for (const auto& id : ids) {
        if (!test.count(id)) ds.plan.train.push_back(id);
      }
      break;
    }
    case DatasetKind::synthetic:
      ds.plan.train = ids;
      ds.plan.test = ids;
      break;
  }
  return ds;
}

std::vector<FundusSample> make_synthetic(std::size_t n, std::size_t size, Rng& rng) {
  if (size < 16) fail(ErrorKind::usage, "synthetic images must be at least 16 pixels wide");
  std::vector<FundusSample> out;
  const double S = static_cast<double>(size);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<unsigned char> vessel(size * size, 0);
    const std::size_t count = std::max<std::size_t>(3, size / 12);
    for (std::size_t v = 0; v < count; ++v) {
      double y = rng.uniform(0.1 * S, 0.9 * S), x = rng.uniform(0.1 * S, 0.9 * S);
      double heading = rng.uniform(0, 2 * std::numbers::pi);
      const long width = 1 + static_cast<long>(rng.below(3));
      const std::size_t steps = static_cast<std::size_t>(0.6 * S);
      for (std::size_t s = 0; s < steps; ++s) {
        const long cy = std::lround(y), cx = std::lround(x);
        for (long dy = 0; dy < width; ++dy)
          for (long dx = 0; dx < width; ++dx) {
            const long py = cy + dy - (width - 1) / 2, px = cx + dx - (width - 1) / 2;
            if (py >= 0 && px >= 0 && py < static_cast<long>(size) && px < static_cast<long>(size)) {
              vessel[py * size + px] = 1;
            }
          }
        heading += rng.uniform(-0.35, 0.35);
        y += std::sin(heading);
        x += std::cos(heading);
        if (y < 0 || x < 0 || y >= S || x >= S) break;
      }
    }

    FundusSample s;
    s.id = "synthetic_" + std::to_string(k);
    s.image = Tensor(Shape{3, size, size});
    s.mask = Tensor(Shape{1, size, size});
    s.original_size = Extent{size, size};
    const double base[3] = {0.75, 0.38, 0.18};
    auto img = s.image.data();
    auto msk = s.mask.data();
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double ry = (static_cast<double>(y) - S / 2) / S, rx = (static_cast<double>(x) - S / 2) / S;
        const double shade = 1.0 - 0.6 * (ry * ry + rx * rx);
        const bool on = vessel[y * size + x] != 0;
        msk[y * size + x] = on ? Real(1) : Real(0);
        for (std::size_t c = 0; c < 3; ++c) {
          double v = base[c] * shade * (on ? 0.55 : 1.0) + 0.03 * rng.normal();
          img[(c * size + y) * size + x] = static_cast<Real>(std::clamp(v, 0.0, 1.0));
        }
      }
    out.push_back(std::move(s));
  }
  return out;
}

TrainingPool make_training_pool(const std::vector<FundusSample>& samples, std::size_t target, std::size_t copies,
                                double validation_fraction, std::uint64_t seed) {
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    fail(ErrorKind::usage, "validation_fraction must lie in [0, 1)");
  }
  std::vector<FundusSample> pool;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const FundusSample padded = pad_sample(samples[i], target, target);
    pool.push_back(padded);
    for (std::size_t c = 1; c <= copies; ++c) {
      Rng rng = Rng::derive(seed, i, c);
      FundusSample a = augment(padded, rng);
      a.id += "#aug" + std::to_string(c);
      pool.push_back(std::move(a));
    }
  }

  TrainingPool out;
  const std::size_t n_val = static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(pool.size())));
  if (n_val == 0) {
    out.train = pool;
    out.validation = pool;
    return out;
  }
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng::derive(seed, 0x7a1);
  shuffle(order, rng);
  std::vector<bool> is_val(pool.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  for (std::size_t i = 0; i < pool.size(); ++i) (is_val[i] ? out.validation : out.train).push_back(pool[i]);
  return out;
}

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
