#include "czsl/backbone.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "czsl/errors.hpp"
#include "czsl/rng.hpp"

namespace czsl {

namespace {

using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LayerSpec {
  const char* name;
  bool pool;
};

constexpr LayerSpec kLayers[] = {
    {"conv1", true}, {"conv2", true}, {"conv3", false}, {"conv4", false}};

Tensor he_init(Shape shape, int64_t fan_in, rng::Engine& eng) {
  Tensor t = Tensor::zeros(std::move(shape));
  double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = std_dev * rng::normal(eng);
  return t;
}

// Batched conv stack on raw tensors. Images are processed as one im2col
// matrix per layer so the matmuls are worth their setup cost.
std::vector<Tensor> conv_stack(const std::vector<const Tensor*>& images, const ParamTree& params,
                               const BackboneConfig& cfg) {
  const int64_t batch = static_cast<int64_t>(images.size());
  std::vector<Tensor> current;
  current.reserve(static_cast<size_t>(batch));
  for (const Tensor* img : images) {
    if (img->rank() != 3 || img->dim(0) != cfg.image_channels || img->dim(1) != cfg.image_size ||
        img->dim(2) != cfg.image_size) {
      throw ShapeError("backbone: expected image [" + std::to_string(cfg.image_channels) + "," +
                       std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) +
                       "], got " + shape_str(img->shape()));
    }
    current.push_back(*img);
  }

  for (const LayerSpec& layer : kLayers) {
    const Tensor& w = params.at(std::string(layer.name) + ".w");
    const Tensor& b = params.at(std::string(layer.name) + ".b");
    const int64_t co = w.dim(0), ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const int64_t h = current[0].dim(1), wd = current[0].dim(2);
    const int64_t patch = ci * kh * kw, area = h * wd;

    // One stacked column matrix for the whole batch (pad 1, stride 1).
    Tensor cols = Tensor::zeros({patch, batch * area});
    for (int64_t n = 0; n < batch; ++n) {
      const Tensor& x = current[static_cast<size_t>(n)];
      for (int64_t c = 0; c < ci; ++c) {
        for (int64_t ki = 0; ki < kh; ++ki) {
          for (int64_t kj = 0; kj < kw; ++kj) {
            int64_t row = (c * kh + ki) * kw + kj;
            double* dst = cols.data() + row * batch * area + n * area;
            for (int64_t i = 0; i < h; ++i) {
              int64_t si = i + ki - 1;
              if (si < 0 || si >= h) continue;
              for (int64_t j = 0; j < wd; ++j) {
                int64_t sj = j + kj - 1;
                if (sj < 0 || sj >= wd) continue;
                dst[i * wd + j] = x.at(c, si, sj);
              }
            }
          }
        }
      }
    }

    Tensor out_mat = Tensor::zeros({co, batch * area});
    Eigen::Map<const EigenRowMat> mw(w.data(), co, patch);
    Eigen::Map<const EigenRowMat> mc(cols.data(), patch, batch * area);
    Eigen::Map<EigenRowMat> mo(out_mat.data(), co, batch * area);
    mo.noalias() = mw * mc;

    int64_t oh = layer.pool ? h / 2 : h;
    int64_t ow = layer.pool ? wd / 2 : wd;
    std::vector<Tensor> next;
    next.reserve(static_cast<size_t>(batch));
    for (int64_t n = 0; n < batch; ++n) {
      Tensor fm = Tensor::zeros({co, oh, ow});
      for (int64_t c = 0; c < co; ++c) {
        const double* src = out_mat.data() + c * batch * area + n * area;
        double bias = b[c];
        if (layer.pool) {
          for (int64_t i = 0; i < oh; ++i) {
            for (int64_t j = 0; j < ow; ++j) {
              double acc = 0.0;
              for (int64_t di = 0; di < 2; ++di) {
                for (int64_t dj = 0; dj < 2; ++dj) {
                  double v = src[(2 * i + di) * wd + (2 * j + dj)] + bias;
                  acc += v > 0.0 ? v : 0.0;
                }
              }
              fm.at(c, i, j) = 0.25 * acc;
            }
          }
        } else {
          for (int64_t i = 0; i < oh; ++i) {
            for (int64_t j = 0; j < ow; ++j) {
              double v = src[i * wd + j] + bias;
              fm.at(c, i, j) = v > 0.0 ? v : 0.0;
            }
          }
        }
      }
      next.push_back(std::move(fm));
    }
    current = std::move(next);
  }
  return current;
}

}  // namespace

Backbone Backbone::random_init(const BackboneConfig& cfg, uint64_t seed) {
  ParamTree params;
  int64_t in_ch = cfg.image_channels;
  for (const LayerSpec& layer : kLayers) {
    rng::Engine eng = rng::make_engine(rng::derive_seed(seed, layer.name));
    params.set(std::string(layer.name) + ".w",
               he_init({cfg.channels, in_ch, 3, 3}, in_ch * 9, eng));
    params.set(std::string(layer.name) + ".b", Tensor::zeros({cfg.channels}));
    in_ch = cfg.channels;
  }
  return Backbone(cfg, std::move(params), false);
}

Tensor Backbone::forward(const Tensor& image) const {
  if (!finalized_) {
    throw NumericError("backbone: forward called before pretraining finalized the parameters");
  }
  return conv_stack({&image}, params_, cfg_)[0];
}

Tensor Backbone::pooled(const Tensor& image) const {
  Tensor fm = forward(image);
  int64_t c = fm.dim(0), area = fm.dim(1) * fm.dim(2);
  Tensor out = Tensor::zeros({c});
  for (int64_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (int64_t s = 0; s < area; ++s) acc += fm.data()[ch * area + s];
    out[ch] = acc / static_cast<double>(area);
  }
  return out;
}

Tensor Backbone::pooled_batch(const std::vector<const Tensor*>& images) const {
  if (!finalized_) {
    throw NumericError("backbone: forward called before pretraining finalized the parameters");
  }
  if (images.empty()) return Tensor::zeros({1, cfg_.channels});
  std::vector<Tensor> maps = conv_stack(images, params_, cfg_);
  int64_t c = maps[0].dim(0), area = maps[0].dim(1) * maps[0].dim(2);
  Tensor out = Tensor::zeros({static_cast<int64_t>(maps.size()), c});
  for (size_t n = 0; n < maps.size(); ++n) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (int64_t s = 0; s < area; ++s) acc += maps[n].data()[ch * area + s];
      out.at(static_cast<int64_t>(n), ch) = acc / static_cast<double>(area);
    }
  }
  return out;
}

Var backbone_forward_taped(Graph& g, const VarTree& params, Var image,
                           const BackboneConfig& cfg) {
  (void)g;
  (void)cfg;
  Var x = image;
  for (const LayerSpec& layer : kLayers) {
    Var w = params.at(std::string(layer.name) + ".w");
    Var b = params.at(std::string(layer.name) + ".b");
    Var y = conv2d(x, w, 1, 1);
    const Tensor& ty = y.value();
    int64_t co = ty.dim(0), area = ty.dim(1) * ty.dim(2);
    Var flat = reshape(y, {co, area});
    Var biased = add(flat, bcast_cols(reshape(b, {co, 1}), area));
    x = relu(reshape(biased, ty.shape()));
    if (layer.pool) x = avg_pool2(x);
  }
  return x;
}

}  // namespace czsl
