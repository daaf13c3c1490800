#include "padim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "json.hpp"
#include "padim/error.hpp"
#include "padim/resample.hpp"

namespace padim {

namespace fs = std::filesystem;

namespace {

bool is_item(const fs::directory_entry& e) {
  if (e.is_directory()) return true;
  if (!e.is_regular_file()) return false;
  auto ext = e.path().extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

std::vector<fs::path> sorted_items(const fs::path& dir) {
  std::vector<fs::path> items;
  if (!fs::is_directory(dir)) return items;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (is_item(e)) items.push_back(e.path());
  }
  // Byte-wise ordering of file names, independent of locale and platform.
  std::sort(items.begin(), items.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return items;
}

std::vector<std::string> sorted_subdirs(const fs::path& dir) {
  std::vector<std::string> names;
  if (!fs::is_directory(dir)) return names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

double sample_bicubic_reflect(const std::vector<float>& plane, std::size_t w, std::size_t h, double sx, double sy) {
  const double fx = std::floor(sx), fy = std::floor(sy);
  const double tx = sx - fx, ty = sy - fy;
  const auto ix = static_cast<std::ptrdiff_t>(fx), iy = static_cast<std::ptrdiff_t>(fy);
  double wx[4], wy[4];
  for (int k = 0; k < 4; ++k) {
    wx[k] = cubic_kernel(tx - (k - 1));
    wy[k] = cubic_kernel(ty - (k - 1));
  }
  double acc = 0.0;
  for (int j = 0; j < 4; ++j) {
    const auto yy = static_cast<std::size_t>(reflect_index(iy + j - 1, static_cast<std::ptrdiff_t>(h)));
    double row = 0.0;
    for (int i = 0; i < 4; ++i) {
      const auto xx = static_cast<std::size_t>(reflect_index(ix + i - 1, static_cast<std::ptrdiff_t>(w)));
      row += wx[i] * plane[yy * w + xx];
    }
    acc += wy[j] * row;
  }
  return acc;
}

std::string mask_name(const fs::path& item) { return item.stem().string() + "_mask.png"; }

}  // namespace

std::string DatasetIndex::to_json() const {
  nlohmann::json j;
  j["class"] = class_name;
  j["root"] = root.string();
  j["train"] = nlohmann::json::array();
  for (const auto& p : train) j["train"].push_back(p.string());
  j["test"] = nlohmann::json::array();
  for (const auto& t : test) {
    j["test"].push_back({{"path", t.path.string()},
                         {"defect", t.defect},
                         {"label", t.anomalous ? 1 : 0},
                         {"mask", t.mask ? nlohmann::json(t.mask->string()) : nlohmann::json(nullptr)}});
  }
  return j.dump(2);
}

DatasetIndex scan_dataset(const fs::path& class_root) {
  if (!fs::is_directory(class_root)) throw DataError("dataset root is not a directory: " + class_root.string());
  DatasetIndex index;
  index.root = class_root;
  index.class_name = fs::absolute(class_root).lexically_normal().filename().string();
  if (index.class_name.empty()) index.class_name = fs::absolute(class_root).parent_path().filename().string();
  index.train = sorted_items(class_root / "train" / "good");
  if (index.train.empty()) throw DataError("empty train split: " + (class_root / "train" / "good").string());

  for (const auto& defect : sorted_subdirs(class_root / "test")) {
    const bool anomalous = defect != "good";
    for (const auto& item : sorted_items(class_root / "test" / defect)) {
      TestSample s{item, defect, anomalous, std::nullopt};
      if (anomalous) {
        const auto mask = class_root / "ground_truth" / defect / mask_name(item);
        if (!fs::is_regular_file(mask)) {
          throw DataError("missing ground-truth mask for anomalous image " + item.string() + " (expected " +
                          mask.string() + ")");
        }
        s.mask = mask;
      }
      index.test.push_back(std::move(s));
    }
  }
  return index;
}

std::vector<std::string> list_classes(const fs::path& root) {
  std::vector<std::string> out;
  for (const auto& name : sorted_subdirs(root)) {
    if (fs::is_directory(root / name / "train" / "good")) out.push_back(name);
  }
  return out;
}

RdParams draw_rd_params(const RdTransform& t, Rng& rng) {
  if (t.crop_size == 0 || t.crop_size > t.source_size) throw ConfigError("rd transform: crop must be in [1, source]");
  RdParams p;
  p.angle_deg = uniform(rng, -t.max_angle_deg, t.max_angle_deg);
  const std::uint64_t range = t.source_size - t.crop_size + 1;
  p.x0 = static_cast<std::size_t>(uniform_index(rng, range));
  p.y0 = static_cast<std::size_t>(uniform_index(rng, range));
  return p;
}

RgbImage rotate_bicubic(const RgbImage& img, double angle_deg) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double cx = (static_cast<double>(img.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(img.height) - 1.0) / 2.0;
  RgbImage out(img.width, img.height);
  std::vector<float> plane(img.width * img.height);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = img.pixels[3 * i + c];
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        // Inverse map: rotate the output coordinate back into the source.
        const double sx = ca * dx + sa * dy + cx;
        const double sy = -sa * dx + ca * dy + cy;
        const double v = sample_bicubic_reflect(plane, img.width, img.height, sx, sy);
        out.px(x, y)[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

GrayImage rotate_nearest(const GrayImage& mask, double angle_deg) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double cx = (static_cast<double>(mask.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(mask.height) - 1.0) / 2.0;
  GrayImage out(mask.width, mask.height, 0);
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const auto sx = std::lround(ca * dx + sa * dy + cx);
      const auto sy = std::lround(-sa * dx + ca * dy + cy);
      if (sx < 0 || sy < 0 || sx >= static_cast<long>(mask.width) || sy >= static_cast<long>(mask.height)) continue;
      out.at(x, y) = mask.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy));
    }
  }
  return out;
}

std::pair<RgbImage, std::optional<GrayImage>> apply_rd_transform(const RgbImage& img, const GrayImage* mask,
                                                                 const RdParams& params, std::size_t crop_size) {
  if (mask && (mask->width != img.width || mask->height != img.height)) {
    throw DataError("rd transform: mask and image sizes differ");
  }
  RgbImage rotated = params.angle_deg == 0.0 ? img : rotate_bicubic(img, params.angle_deg);
  RgbImage out = crop(rotated, params.x0, params.y0, crop_size, crop_size);
  std::optional<GrayImage> out_mask;
  if (mask) {
    GrayImage m = crop(rotate_nearest(*mask, params.angle_deg), params.x0, params.y0, crop_size, crop_size);
    for (auto& p : m.pixels) p = p >= 128 ? 255 : 0;
    out_mask = std::move(m);
  }
  return {std::move(out), std::move(out_mask)};
}

DatasetIndex make_rd_dataset(const DatasetIndex& index, std::uint64_t seed, const fs::path& out, RdTransform transform) {
  transform.seed = seed;
  const fs::path class_out = out / index.class_name;
  std::uint64_t counter = 0;

  auto process = [&](const fs::path& src, const std::optional<fs::path>& mask_src, const fs::path& dst,
                     const std::optional<fs::path>& mask_dst) {
    Rng rng(mix_seed(seed, counter++));
    const RdParams params = draw_rd_params(transform, rng);
    RgbImage img = read_png_rgb(src);
    if (img.width != transform.source_size || img.height != transform.source_size) {
      img = resize_rgb(img, transform.source_size, transform.source_size);
    }
    std::optional<GrayImage> mask;
    if (mask_src) {
      mask = resize_gray_nearest(read_png_gray(*mask_src), transform.source_size, transform.source_size);
    }
    auto [out_img, out_mask] = apply_rd_transform(img, mask ? &*mask : nullptr, params, transform.crop_size);
    fs::create_directories(dst.parent_path());
    write_png(out_img, dst);
    if (out_mask && mask_dst) {
      fs::create_directories(mask_dst->parent_path());
      write_png(*out_mask, *mask_dst);
    }
  };

  for (const auto& p : index.train) {
    if (fs::is_directory(p)) throw DataError("rd dataset: activation-file items cannot be transformed");
    process(p, std::nullopt, class_out / "train" / "good" / p.filename(), std::nullopt);
  }
  for (const auto& s : index.test) {
    if (fs::is_directory(s.path)) throw DataError("rd dataset: activation-file items cannot be transformed");
    std::optional<fs::path> mask_dst;
    if (s.mask) mask_dst = class_out / "ground_truth" / s.defect / mask_name(s.path);
    process(s.path, s.mask, class_out / "test" / s.defect / s.path.filename(), mask_dst);
  }
  return scan_dataset(class_out);
}

}  // namespace padim
