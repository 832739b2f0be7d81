#include "czsl/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "czsl/errors.hpp"

namespace czsl {

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c; g = x;
  } else if (hp < 2) {
    r = x; g = c;
  } else if (hp < 3) {
    g = c; b = x;
  } else if (hp < 4) {
    g = x; b = c;
  } else if (hp < 5) {
    r = x; b = c;
  } else {
    r = c; b = x;
  }
  double m = v - c;
  return {r + m, g + m, b + m};
}

/// Distinct, well-separated color per TYPE1 index: golden-angle hue walk with
/// seeded saturation/value wobble.
Rgb color_for(int64_t index, rng::Engine& eng) {
  double h = std::fmod(0.11 + static_cast<double>(index) * 0.61803398874989485, 1.0);
  double s = rng::uniform(eng, 0.7, 0.95);
  double v = rng::uniform(eng, 0.75, 1.0);
  return hsv_to_rgb(h, s, v);
}

constexpr int kShapeFamilies = 12;

/// Binary mask for one shape family on an n x n stencil. `size` in (0,1]
/// scales the footprint.
bool shape_hit(int family, double size, int64_t n, int64_t y, int64_t x) {
  double cx = (static_cast<double>(n) - 1.0) / 2.0;
  double cy = cx;
  double r = size * static_cast<double>(n) / 2.0;
  double dx = static_cast<double>(x) - cx;
  double dy = static_cast<double>(y) - cy;
  double ax = std::fabs(dx);
  double ay = std::fabs(dy);
  switch (family) {
    case 0:  // disk
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return ax <= r * 0.85 && ay <= r * 0.85;
    case 2:  // upward triangle
      return dy >= -r && dy <= r && ax <= (dy + r) * 0.6;
    case 3:  // ring
      return dx * dx + dy * dy <= r * r && dx * dx + dy * dy >= (0.5 * r) * (0.5 * r);
    case 4:  // plus
      return (ax <= r * 0.35 && ay <= r) || (ay <= r * 0.35 && ax <= r);
    case 5:  // diamond
      return ax + ay <= r;
    case 6:  // horizontal bar
      return ay <= r * 0.4 && ax <= r;
    case 7:  // vertical bar
      return ax <= r * 0.4 && ay <= r;
    case 8:  // X
      return std::fabs(ax - ay) <= r * 0.35 && ax <= r && ay <= r;
    case 9:  // two opposite corner squares
      return (dx > 0) == (dy > 0) && ax <= r && ay <= r && ax >= r * 0.15 && ay >= r * 0.15;
    case 10:  // hollow square frame
      return ax <= r && ay <= r && std::max(ax, ay) >= 0.55 * r;
    case 11:  // half disk
      return dx * dx + dy * dy <= r * r && dy <= 0.15 * r;
    default:
      return false;
  }
}

struct ShapeSpec {
  int family;
  double size;
};

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_type1 < 2 || cfg.n_type2 < 2) {
    throw ConfigError("synthetic: need at least 2 primitives per kind");
  }
  if (cfg.samples_per_composition < 10) {
    throw ConfigError("synthetic: need at least 10 samples per composition");
  }
  if (cfg.image_size < 8) throw ConfigError("synthetic: image size must be at least 8");
  if (cfg.noise_sigma < 0.0) throw ConfigError("synthetic: noise sigma must be >= 0");

  Dataset ds;
  const int64_t n = cfg.image_size;

  std::vector<Rgb> colors(static_cast<size_t>(cfg.n_type1));
  std::vector<int32_t> type1_ids(static_cast<size_t>(cfg.n_type1));
  for (int64_t i = 0; i < cfg.n_type1; ++i) {
    std::string name = cfg.name_prefix + "color" + std::to_string(i);
    rng::Engine eng = rng::make_engine(rng::derive_seed(cfg.seed, "color:" + name));
    colors[static_cast<size_t>(i)] = color_for(i, eng);
    type1_ids[static_cast<size_t>(i)] = ds.add_primitive(name, PrimitiveKind::kType1, cfg.split);
  }

  std::vector<ShapeSpec> shapes(static_cast<size_t>(cfg.n_type2));
  std::vector<int32_t> type2_ids(static_cast<size_t>(cfg.n_type2));
  for (int64_t j = 0; j < cfg.n_type2; ++j) {
    std::string name = cfg.name_prefix + "shape" + std::to_string(j);
    rng::Engine eng = rng::make_engine(rng::derive_seed(cfg.seed, "shape:" + name));
    shapes[static_cast<size_t>(j)] = {static_cast<int>(j % kShapeFamilies),
                                      rng::uniform(eng, 0.6, 0.85)};
    type2_ids[static_cast<size_t>(j)] = ds.add_primitive(name, PrimitiveKind::kType2, cfg.split);
  }

  int64_t sample_id = 0;
  for (int64_t i = 0; i < cfg.n_type1; ++i) {
    for (int64_t j = 0; j < cfg.n_type2; ++j) {
      Composition comp{type1_ids[static_cast<size_t>(i)], type2_ids[static_cast<size_t>(j)]};
      ds.add_composition(comp);
      for (int64_t k = 0; k < cfg.samples_per_composition; ++k, ++sample_id) {
        rng::Engine eng = rng::make_engine(
            rng::derive_seed(rng::derive_seed(cfg.seed, "sample"), static_cast<uint64_t>(sample_id)));

        // Low-frequency per-sample background.
        double base[3];
        double amp[3];
        double fx[3], fy[3], phase[3];
        for (int c = 0; c < 3; ++c) {
          base[c] = rng::uniform(eng, 0.3, 0.6);
          amp[c] = cfg.background_amplitude * rng::uniform(eng, 0.5, 1.0);
          fx[c] = static_cast<double>(rng::uniform_int(eng, 1, 2));
          fy[c] = static_cast<double>(rng::uniform_int(eng, 1, 2));
          phase[c] = rng::uniform(eng, 0.0, 2.0 * std::numbers::pi);
        }
        int64_t jitter = cfg.placement_jitter;
        int64_t dx = jitter > 0 ? rng::uniform_int(eng, -jitter, jitter) : 0;
        int64_t dy = jitter > 0 ? rng::uniform_int(eng, -jitter, jitter) : 0;

        Tensor img = Tensor::zeros({3, n, n});
        const Rgb& col = colors[static_cast<size_t>(i)];
        const ShapeSpec& shape = shapes[static_cast<size_t>(j)];
        double rgb[3] = {col.r, col.g, col.b};
        for (int64_t y = 0; y < n; ++y) {
          for (int64_t x = 0; x < n; ++x) {
            bool hit = shape_hit(shape.family, shape.size, n, y - dy, x - dx);
            for (int c = 0; c < 3; ++c) {
              double v;
              if (hit) {
                v = rgb[c];
              } else {
                v = base[c] + amp[c] * std::sin(2.0 * std::numbers::pi *
                                                    (fx[c] * static_cast<double>(x) +
                                                     fy[c] * static_cast<double>(y)) /
                                                    static_cast<double>(n) +
                                                phase[c]);
              }
              if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng::normal(eng);
              img.at(c, y, x) = std::clamp(v, 0.0, 1.0);
            }
          }
        }
        ds.add_sample(sample_id, std::move(img), comp);
      }
    }
  }
  return ds;
}

Dataset generate_synthetic(int64_t n_type1, int64_t n_type2, int64_t samples_per_composition,
                           int64_t image_size, double noise_sigma, uint64_t seed) {
  SyntheticConfig cfg;
  cfg.n_type1 = n_type1;
  cfg.n_type2 = n_type2;
  cfg.samples_per_composition = samples_per_composition;
  cfg.image_size = image_size;
  cfg.noise_sigma = noise_sigma;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

std::vector<Dataset> generate_benchmark_parts(const SyntheticConfig& cfg) {
  struct Part {
    Split split;
    const char* prefix;
    const char* tag;
  };
  const Part parts[] = {{Split::kTrain, "tr_", "train"},
                        {Split::kVal, "va_", "val"},
                        {Split::kTest, "te_", "test"}};
  std::vector<Dataset> out;
  int64_t id_offset = 0;
  for (const Part& part : parts) {
    SyntheticConfig sub = cfg;
    sub.split = part.split;
    sub.name_prefix = cfg.name_prefix + part.prefix;
    sub.seed = rng::derive_seed(cfg.seed, part.tag);
    Dataset ds = generate_synthetic(sub);
    // Shift sample ids so the parts stay mergeable.
    Dataset shifted;
    for (const Primitive& p : ds.primitives()) shifted.add_primitive(p.name, p.kind, p.split);
    for (const Composition& c : ds.compositions()) shifted.add_composition(c);
    for (const Sample& s : ds.samples()) shifted.add_sample(s.id + id_offset, s.image, s.label);
    id_offset += ds.sample_count();
    out.push_back(std::move(shifted));
  }
  return out;
}

Dataset generate_benchmark(const SyntheticConfig& cfg) {
  Dataset merged;
  for (const Dataset& part : generate_benchmark_parts(cfg)) merged.merge(part);
  return merged;
}

}  // namespace czsl
