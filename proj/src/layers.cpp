#include "dwic/layers.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace dwic {

namespace {

template <typename T>
void expect_rank(const TensorT<T>& t, std::size_t rank, const char* who) {
    if (t.rank() != rank)
        throw std::invalid_argument(std::string(who) + ": unexpected tensor rank");
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  std::size_t stride, std::size_t pad)
    : weight({out_channels, in_channels, kernel, kernel}),
      bias({out_channels}),
      grad_weight({out_channels, in_channels, kernel, kernel}),
      grad_bias({out_channels}),
      in_c_(in_channels),
      out_c_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(pad) {
    if (kernel == 0 || stride == 0) throw std::invalid_argument("conv2d: bad hyperparameters");
}

template <typename T>
void Conv2d<T>::init_weights(Rng& rng) {
    const double fan_in = static_cast<double>(in_c_ * k_ * k_);
    const double sd = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < weight.size(); ++i)
        weight[i] = static_cast<T>(rng.normal(0.0, sd));
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = T(0);
}

template <typename T>
void Conv2d<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".weight", &weight, &grad_weight});
    out.push_back({prefix + ".bias", &bias, &grad_bias});
}

template <typename T>
TensorT<T> Conv2d<T>::forward(const TensorT<T>& x, Mode, Rng*) {
    expect_rank(x, 4, "conv2d");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != in_c_) throw std::invalid_argument("conv2d: channel count mismatch");
    if (h + 2 * pad_ < k_ || w + 2 * pad_ < k_)
        throw std::invalid_argument("conv2d: input smaller than kernel");

    oh_ = out_dim(h, k_, stride_, pad_);
    ow_ = out_dim(w, k_, stride_, pad_);
    in_shape_ = x.shape();

    const std::size_t kk = in_c_ * k_ * k_;     // rows of the column matrix
    const std::size_t span = oh_ * ow_;          // columns of the column matrix
    cols_.assign(n * kk * span, T(0));

    TensorT<T> out({n, out_c_, oh_, ow_});

    for (std::size_t s = 0; s < n; ++s) {
        T* col = cols_.data() + s * kk * span;
        const T* xs = x.data() + s * c * h * w;
        // im2col
        for (std::size_t ic = 0; ic < in_c_; ++ic) {
            for (std::size_t ki = 0; ki < k_; ++ki) {
                for (std::size_t kj = 0; kj < k_; ++kj) {
                    T* crow = col + ((ic * k_ + ki) * k_ + kj) * span;
                    for (std::size_t oy = 0; oy < oh_; ++oy) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * stride_ + ki) -
                            static_cast<std::ptrdiff_t>(pad_);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t ox = 0; ox < ow_; ++ox) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * stride_ + kj) -
                                static_cast<std::ptrdiff_t>(pad_);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            crow[oy * ow_ + ox] = xs[(ic * h + iy) * w + ix];
                        }
                    }
                }
            }
        }
        // out[oc, :] = sum_k weight[oc, k] * col[k, :] + bias[oc]
        T* os = out.data() + s * out_c_ * span;
        for (std::size_t oc = 0; oc < out_c_; ++oc) {
            T* orow = os + oc * span;
            const T b = bias[oc];
            for (std::size_t o = 0; o < span; ++o) orow[o] = b;
            const T* wrow = weight.data() + oc * kk;
            for (std::size_t p = 0; p < kk; ++p) {
                const T wv = wrow[p];
                if (wv == T(0)) continue;
                const T* crow = col + p * span;
                for (std::size_t o = 0; o < span; ++o) orow[o] += wv * crow[o];
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> Conv2d<T>::backward(const TensorT<T>& grad_out) {
    if (in_shape_.empty()) throw std::logic_error("conv2d: backward without cached forward");
    expect_rank(grad_out, 4, "conv2d backward");
    const std::size_t n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
    const std::size_t kk = in_c_ * k_ * k_;
    const std::size_t span = oh_ * ow_;
    if (grad_out.dim(0) != n || grad_out.dim(1) != out_c_ || grad_out.dim(2) != oh_ ||
        grad_out.dim(3) != ow_)
        throw std::invalid_argument("conv2d: grad_out shape mismatch");

    TensorT<T> grad_x(in_shape_);
    std::vector<T> dcol(kk * span);

    for (std::size_t s = 0; s < n; ++s) {
        const T* col = cols_.data() + s * kk * span;
        const T* gs = grad_out.data() + s * out_c_ * span;

        for (std::size_t oc = 0; oc < out_c_; ++oc) {
            const T* grow = gs + oc * span;
            T gb = T(0);
            for (std::size_t o = 0; o < span; ++o) gb += grow[o];
            grad_bias[oc] += gb;

            T* gwrow = grad_weight.data() + oc * kk;
            for (std::size_t p = 0; p < kk; ++p) {
                const T* crow = col + p * span;
                T acc = T(0);
                for (std::size_t o = 0; o < span; ++o) acc += grow[o] * crow[o];
                gwrow[p] += acc;
            }
        }

        // dcol = weight^T * grad_out
        std::fill(dcol.begin(), dcol.end(), T(0));
        for (std::size_t p = 0; p < kk; ++p) {
            T* drow = dcol.data() + p * span;
            for (std::size_t oc = 0; oc < out_c_; ++oc) {
                const T wv = weight[oc * kk + p];
                if (wv == T(0)) continue;
                const T* grow = gs + oc * span;
                for (std::size_t o = 0; o < span; ++o) drow[o] += wv * grow[o];
            }
        }

        // col2im scatter
        T* gx = grad_x.data() + s * in_c_ * h * w;
        for (std::size_t ic = 0; ic < in_c_; ++ic) {
            for (std::size_t ki = 0; ki < k_; ++ki) {
                for (std::size_t kj = 0; kj < k_; ++kj) {
                    const T* drow = dcol.data() + ((ic * k_ + ki) * k_ + kj) * span;
                    for (std::size_t oy = 0; oy < oh_; ++oy) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * stride_ + ki) -
                            static_cast<std::ptrdiff_t>(pad_);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t ox = 0; ox < ow_; ++ox) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * stride_ + kj) -
                                static_cast<std::ptrdiff_t>(pad_);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            gx[(ic * h + iy) * w + ix] += drow[oy * ow_ + ox];
                        }
                    }
                }
            }
        }
    }
    return grad_x;
}

// ----------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::size_t channels, T eps, T momentum)
    : gamma(TensorT<T>::full({channels}, T(1))),
      beta({channels}),
      running_mean({channels}),
      running_var(TensorT<T>::full({channels}, T(1))),
      grad_gamma({channels}),
      grad_beta({channels}),
      channels_(channels),
      eps_(eps),
      momentum_(momentum) {}

template <typename T>
void BatchNorm2d<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".gamma", &gamma, &grad_gamma});
    out.push_back({prefix + ".beta", &beta, &grad_beta});
}

template <typename T>
void BatchNorm2d<T>::collect_state(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    collect_params(prefix, out);
    out.push_back({prefix + ".running_mean", &running_mean, nullptr});
    out.push_back({prefix + ".running_var", &running_var, nullptr});
}

template <typename T>
TensorT<T> BatchNorm2d<T>::forward(const TensorT<T>& x, Mode mode, Rng*) {
    expect_rank(x, 4, "batchnorm2d");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != channels_) throw std::invalid_argument("batchnorm2d: channel count mismatch");
    if (mode == Mode::kTrain && n < 2)
        throw std::invalid_argument("batchnorm2d: train mode needs batch size >= 2");

    cached_mode_ = mode;
    in_shape_ = x.shape();
    const std::size_t plane = h * w;
    const std::size_t m = n * plane;

    TensorT<T> out(x.shape());

    if (mode == Mode::kTrain) {
        xhat_ = TensorT<T>(x.shape());
        inv_std_.assign(channels_, T(0));
        for (std::size_t ch = 0; ch < channels_; ++ch) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = x.data() + (i * c + ch) * plane;
                for (std::size_t j = 0; j < plane; ++j) s += p[j];
            }
            const double mu = s / static_cast<double>(m);
            double vs = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = x.data() + (i * c + ch) * plane;
                for (std::size_t j = 0; j < plane; ++j) {
                    const double d = p[j] - mu;
                    vs += d * d;
                }
            }
            const double var = vs / static_cast<double>(m);  // population variance
            const T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
            inv_std_[ch] = istd;

            running_mean[ch] = (T(1) - momentum_) * running_mean[ch] +
                               momentum_ * static_cast<T>(mu);
            running_var[ch] = (T(1) - momentum_) * running_var[ch] +
                              momentum_ * static_cast<T>(var);

            const T g = gamma[ch], b = beta[ch], mu_t = static_cast<T>(mu);
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = x.data() + (i * c + ch) * plane;
                T* xh = xhat_.data() + (i * c + ch) * plane;
                T* o = out.data() + (i * c + ch) * plane;
                for (std::size_t j = 0; j < plane; ++j) {
                    xh[j] = (p[j] - mu_t) * istd;
                    o[j] = g * xh[j] + b;
                }
            }
        }
    } else {
        xhat_ = TensorT<T>(x.shape());
        inv_std_.assign(channels_, T(0));
        for (std::size_t ch = 0; ch < channels_; ++ch) {
            const T istd = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>(running_var[ch]) +
                                static_cast<double>(eps_)));
            inv_std_[ch] = istd;
            const T g = gamma[ch], b = beta[ch], mu = running_mean[ch];
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = x.data() + (i * c + ch) * plane;
                T* xh = xhat_.data() + (i * c + ch) * plane;
                T* o = out.data() + (i * c + ch) * plane;
                for (std::size_t j = 0; j < plane; ++j) {
                    xh[j] = (p[j] - mu) * istd;
                    o[j] = g * xh[j] + b;
                }
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> BatchNorm2d<T>::backward(const TensorT<T>& grad_out) {
    if (in_shape_.empty()) throw std::logic_error("batchnorm2d: backward without cached forward");
    const std::size_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    const std::size_t plane = h * w;
    const std::size_t m = n * plane;

    TensorT<T> grad_x(in_shape_);

    if (cached_mode_ == Mode::kEval) {
        // running statistics are constants here
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T scale = gamma[ch] * inv_std_[ch];
            double gg = 0.0, gb = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const T* g = grad_out.data() + (i * c + ch) * plane;
                const T* xh = xhat_.data() + (i * c + ch) * plane;
                T* gx = grad_x.data() + (i * c + ch) * plane;
                for (std::size_t j = 0; j < plane; ++j) {
                    gx[j] = g[j] * scale;
                    gb += g[j];
                    gg += static_cast<double>(g[j]) * xh[j];
                }
            }
            grad_beta[ch] += static_cast<T>(gb);
            grad_gamma[ch] += static_cast<T>(gg);
        }
        return grad_x;
    }

    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const T* g = grad_out.data() + (i * c + ch) * plane;
            const T* xh = xhat_.data() + (i * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                sum_g += g[j];
                sum_gx += static_cast<double>(g[j]) * xh[j];
            }
        }
        grad_gamma[ch] += static_cast<T>(sum_gx);
        grad_beta[ch] += static_cast<T>(sum_g);

        const double inv_m = 1.0 / static_cast<double>(m);
        const double scale = static_cast<double>(gamma[ch]) * inv_std_[ch];
        for (std::size_t i = 0; i < n; ++i) {
            const T* g = grad_out.data() + (i * c + ch) * plane;
            const T* xh = xhat_.data() + (i * c + ch) * plane;
            T* gx = grad_x.data() + (i * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
                const double centered =
                    static_cast<double>(g[j]) - inv_m * (sum_g + xh[j] * sum_gx);
                gx[j] = static_cast<T>(scale * centered);
            }
        }
    }
    return grad_x;
}

// ------------------------------------------------------------------ ReLU

template <typename T>
TensorT<T> ReLU<T>::forward(const TensorT<T>& x, Mode, Rng*) {
    TensorT<T> out(x.shape());
    mask_.assign(x.size(), false);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > T(0)) {
            out[i] = x[i];
            mask_[i] = true;
        }
    }
    return out;
}

template <typename T>
TensorT<T> ReLU<T>::backward(const TensorT<T>& grad_out) {
    if (mask_.size() != grad_out.size())
        throw std::logic_error("relu: backward without matching forward");
    TensorT<T> gx(grad_out.shape());
    for (std::size_t i = 0; i < grad_out.size(); ++i) gx[i] = mask_[i] ? grad_out[i] : T(0);
    return gx;
}

// ------------------------------------------------------------- MaxPool2d

template <typename T>
MaxPool2d<T>::MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t pad)
    : k_(kernel), stride_(stride), pad_(pad) {
    if (kernel == 0 || stride == 0 || pad >= kernel)
        throw std::invalid_argument("maxpool: bad hyperparameters");
}

template <typename T>
TensorT<T> MaxPool2d<T>::forward(const TensorT<T>& x, Mode, Rng*) {
    expect_rank(x, 4, "maxpool");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h + 2 * pad_ < k_ || w + 2 * pad_ < k_)
        throw std::invalid_argument("maxpool: input smaller than kernel");
    const std::size_t oh = (h + 2 * pad_ - k_) / stride_ + 1;
    const std::size_t ow = (w + 2 * pad_ - k_) / stride_ + 1;
    in_shape_ = x.shape();

    TensorT<T> out({n, c, oh, ow});
    argmax_.assign(n * c * oh * ow, 0);

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* xs = x.data() + (i * c + ch) * h * w;
            T* os = out.data() + (i * c + ch) * oh * ow;
            std::size_t* as = argmax_.data() + (i * c + ch) * oh * ow;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    T best = std::numeric_limits<T>::lowest();
                    std::size_t best_idx = 0;
                    bool seen = false;
                    for (std::size_t ki = 0; ki < k_; ++ki) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * stride_ + ki) -
                            static_cast<std::ptrdiff_t>(pad_);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kj = 0; kj < k_; ++kj) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * stride_ + kj) -
                                static_cast<std::ptrdiff_t>(pad_);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            const std::size_t idx = iy * w + ix;
                            if (!seen || xs[idx] > best) {
                                best = xs[idx];
                                best_idx = idx;
                                seen = true;
                            }
                        }
                    }
                    os[oy * ow + ox] = best;
                    as[oy * ow + ox] = best_idx;
                }
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> MaxPool2d<T>::backward(const TensorT<T>& grad_out) {
    if (in_shape_.empty()) throw std::logic_error("maxpool: backward without cached forward");
    const std::size_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
    TensorT<T> gx(in_shape_);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* g = grad_out.data() + (i * c + ch) * oh * ow;
            const std::size_t* as = argmax_.data() + (i * c + ch) * oh * ow;
            T* gp = gx.data() + (i * c + ch) * h * w;
            for (std::size_t o = 0; o < oh * ow; ++o) gp[as[o]] += g[o];
        }
    }
    return gx;
}

// ------------------------------------------------------------- AvgPool2d

template <typename T>
AvgPool2d<T>::AvgPool2d(std::size_t kernel, std::size_t stride) : k_(kernel), stride_(stride) {
    if (kernel == 0 || stride == 0) throw std::invalid_argument("avgpool: bad hyperparameters");
}

template <typename T>
TensorT<T> AvgPool2d<T>::forward(const TensorT<T>& x, Mode, Rng*) {
    expect_rank(x, 4, "avgpool");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < k_ || w < k_) throw std::invalid_argument("avgpool: input smaller than kernel");
    const std::size_t oh = (h - k_) / stride_ + 1;
    const std::size_t ow = (w - k_) / stride_ + 1;
    in_shape_ = x.shape();

    const T inv = T(1) / static_cast<T>(k_ * k_);
    TensorT<T> out({n, c, oh, ow});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* xs = x.data() + (i * c + ch) * h * w;
            T* os = out.data() + (i * c + ch) * oh * ow;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    T acc = T(0);
                    for (std::size_t ki = 0; ki < k_; ++ki)
                        for (std::size_t kj = 0; kj < k_; ++kj)
                            acc += xs[(oy * stride_ + ki) * w + ox * stride_ + kj];
                    os[oy * ow + ox] = acc * inv;
                }
            }
        }
    }
    return out;
}

template <typename T>
TensorT<T> AvgPool2d<T>::backward(const TensorT<T>& grad_out) {
    if (in_shape_.empty()) throw std::logic_error("avgpool: backward without cached forward");
    const std::size_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
    const T inv = T(1) / static_cast<T>(k_ * k_);
    TensorT<T> gx(in_shape_);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* g = grad_out.data() + (i * c + ch) * oh * ow;
            T* gp = gx.data() + (i * c + ch) * h * w;
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const T gv = g[oy * ow + ox] * inv;
                    for (std::size_t ki = 0; ki < k_; ++ki)
                        for (std::size_t kj = 0; kj < k_; ++kj)
                            gp[(oy * stride_ + ki) * w + ox * stride_ + kj] += gv;
                }
        }
    }
    return gx;
}

// --------------------------------------------------------------- Dropout

template <typename T>
Dropout<T>::Dropout(T drop_prob) : p_(drop_prob) {
    if (!(p_ >= T(0) && p_ < T(1)))
        throw std::invalid_argument("dropout: drop probability must be in [0,1)");
}

template <typename T>
TensorT<T> Dropout<T>::forward(const TensorT<T>& x, Mode mode, Rng* rng) {
    cached_mode_ = mode;
    if (mode == Mode::kEval || p_ == T(0)) {
        mask_.clear();
        return x;
    }
    if (rng == nullptr) throw std::logic_error("dropout: train mode requires an rng");
    const T keep_scale = T(1) / (T(1) - p_);
    mask_.assign(x.size(), T(0));
    TensorT<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!rng->bernoulli(static_cast<double>(p_))) {
            mask_[i] = keep_scale;
            out[i] = x[i] * keep_scale;
        }
    }
    return out;
}

template <typename T>
TensorT<T> Dropout<T>::backward(const TensorT<T>& grad_out) {
    if (cached_mode_ == Mode::kEval || p_ == T(0)) return grad_out;
    if (mask_.size() != grad_out.size())
        throw std::logic_error("dropout: backward without matching forward");
    TensorT<T> gx(grad_out.shape());
    for (std::size_t i = 0; i < grad_out.size(); ++i) gx[i] = grad_out[i] * mask_[i];
    return gx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features)
    : weight({out_features, in_features}),
      bias({out_features}),
      grad_weight({out_features, in_features}),
      grad_bias({out_features}),
      in_f_(in_features),
      out_f_(out_features) {}

template <typename T>
void Linear<T>::init_weights(Rng& rng) {
    const double sd = std::sqrt(2.0 / static_cast<double>(in_f_));
    for (std::size_t i = 0; i < weight.size(); ++i)
        weight[i] = static_cast<T>(rng.normal(0.0, sd));
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = T(0);
}

template <typename T>
void Linear<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".weight", &weight, &grad_weight});
    out.push_back({prefix + ".bias", &bias, &grad_bias});
}

template <typename T>
TensorT<T> Linear<T>::forward(const TensorT<T>& x, Mode, Rng*) {
    if (x.rank() < 2) throw std::invalid_argument("linear: need batched input");
    const std::size_t n = x.dim(0);
    std::size_t feat = 1;
    for (std::size_t a = 1; a < x.rank(); ++a) feat *= x.dim(a);
    if (feat != in_f_) throw std::invalid_argument("linear: feature count mismatch");

    in_shape_ = x.shape();
    cached_input_ = x.reshape({n, in_f_});

    TensorT<T> out({n, out_f_});
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = cached_input_.data() + i * in_f_;
        T* oi = out.data() + i * out_f_;
        for (std::size_t o = 0; o < out_f_; ++o) {
            const T* wr = weight.data() + o * in_f_;
            T acc = bias[o];
            for (std::size_t f = 0; f < in_f_; ++f) acc += wr[f] * xi[f];
            oi[o] = acc;
        }
    }
    return out;
}

template <typename T>
TensorT<T> Linear<T>::backward(const TensorT<T>& grad_out) {
    if (in_shape_.empty()) throw std::logic_error("linear: backward without cached forward");
    const std::size_t n = in_shape_[0];
    TensorT<T> gx({n, in_f_});
    for (std::size_t i = 0; i < n; ++i) {
        const T* gi = grad_out.data() + i * out_f_;
        const T* xi = cached_input_.data() + i * in_f_;
        T* gxi = gx.data() + i * in_f_;
        for (std::size_t o = 0; o < out_f_; ++o) {
            const T gv = gi[o];
            grad_bias[o] += gv;
            T* gwr = grad_weight.data() + o * in_f_;
            const T* wr = weight.data() + o * in_f_;
            for (std::size_t f = 0; f < in_f_; ++f) {
                gwr[f] += gv * xi[f];
                gxi[f] += gv * wr[f];
            }
        }
    }
    return gx.reshape(in_shape_);
}

// --------------------------------------------------------------- Softmax

template <typename T>
TensorT<T> Softmax<T>::forward(const TensorT<T>& x, Mode, Rng*) {
    expect_rank(x, 2, "softmax");
    const std::size_t n = x.dim(0), c = x.dim(1);
    TensorT<T> out(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.data() + i * c;
        T* oi = out.data() + i * c;
        T mx = xi[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xi[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(static_cast<double>(xi[j] - mx));
            oi[j] = static_cast<T>(e);
            denom += e;
        }
        for (std::size_t j = 0; j < c; ++j) oi[j] = static_cast<T>(oi[j] / denom);
    }
    cached_out_ = out;
    return out;
}

template <typename T>
TensorT<T> Softmax<T>::backward(const TensorT<T>& grad_out) {
    if (cached_out_.empty()) throw std::logic_error("softmax: backward without cached forward");
    const std::size_t n = cached_out_.dim(0), c = cached_out_.dim(1);
    TensorT<T> gx(cached_out_.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const T* p = cached_out_.data() + i * c;
        const T* g = grad_out.data() + i * c;
        T* gxi = gx.data() + i * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += static_cast<double>(g[j]) * p[j];
        for (std::size_t j = 0; j < c; ++j)
            gxi[j] = static_cast<T>(p[j] * (static_cast<double>(g[j]) - dot));
    }
    return gx;
}

// ------------------------------------------------------- BottleneckBlock

template <typename T>
BottleneckBlock<T>::BottleneckBlock(std::size_t in_channels, std::size_t mid_channels,
                                    std::size_t out_channels, std::size_t stride) {
    bns_[0] = std::make_unique<BatchNorm2d<T>>(in_channels);
    bns_[1] = std::make_unique<BatchNorm2d<T>>(mid_channels);
    bns_[2] = std::make_unique<BatchNorm2d<T>>(mid_channels);
    for (auto& r : relus_) r = std::make_unique<ReLU<T>>();
    convs_[0] = std::make_unique<Conv2d<T>>(in_channels, mid_channels, 1, 1, 0);
    convs_[1] = std::make_unique<Conv2d<T>>(mid_channels, mid_channels, 3, stride, 1);
    convs_[2] = std::make_unique<Conv2d<T>>(mid_channels, out_channels, 1, 1, 0);
    if (in_channels != out_channels || stride != 1)
        projection_ = std::make_unique<Conv2d<T>>(in_channels, out_channels, 1, stride, 0);
}

template <typename T>
void BottleneckBlock<T>::init_weights(Rng& rng) {
    for (auto& cv : convs_) cv->init_weights(rng);
    if (projection_) projection_->init_weights(rng);
}

template <typename T>
void BottleneckBlock<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    for (int i = 0; i < 3; ++i) {
        bns_[i]->collect_params(prefix + ".bn" + std::to_string(i + 1), out);
        convs_[i]->collect_params(prefix + ".conv" + std::to_string(i + 1), out);
    }
    if (projection_) projection_->collect_params(prefix + ".proj", out);
}

template <typename T>
void BottleneckBlock<T>::collect_state(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    for (int i = 0; i < 3; ++i) {
        bns_[i]->collect_state(prefix + ".bn" + std::to_string(i + 1), out);
        convs_[i]->collect_state(prefix + ".conv" + std::to_string(i + 1), out);
    }
    if (projection_) projection_->collect_state(prefix + ".proj", out);
}

template <typename T>
TensorT<T> BottleneckBlock<T>::forward(const TensorT<T>& x, Mode mode, Rng* rng) {
    TensorT<T> f = x;
    for (int i = 0; i < 3; ++i) {
        f = bns_[i]->forward(f, mode, rng);
        f = relus_[i]->forward(f, mode, rng);
        f = convs_[i]->forward(f, mode, rng);
    }
    const TensorT<T> shortcut = projection_ ? projection_->forward(x, mode, rng) : x;
    if (f.shape() != shortcut.shape())
        throw std::invalid_argument("bottleneck: branch/shortcut shape mismatch");
    TensorT<T> y(f.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f[i] + shortcut[i];
    return y;
}

template <typename T>
TensorT<T> BottleneckBlock<T>::backward(const TensorT<T>& grad_out) {
    TensorT<T> gb = grad_out;
    for (int i = 2; i >= 0; --i) {
        gb = convs_[i]->backward(gb);
        gb = relus_[i]->backward(gb);
        gb = bns_[i]->backward(gb);
    }
    TensorT<T> gs = projection_ ? projection_->backward(grad_out) : grad_out;
    TensorT<T> gx(gb.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = gb[i] + gs[i];
    return gx;
}

// -------------------------------------------------------------- BCE loss

template <typename T>
BceResult<T> bce_loss(const TensorT<T>& probs, const std::vector<int>& labels, T pos_weight) {
    expect_rank(probs, 2, "bce_loss");
    const std::size_t n = probs.dim(0), c = probs.dim(1);
    if (labels.size() != n) throw std::invalid_argument("bce_loss: label count mismatch");

    const double eps = 1e-7;
    double total = 0.0, weight_sum = 0.0;
    TensorT<T> grad(probs.shape());

    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw std::invalid_argument("bce_loss: label out of range");
        const double w = (y == 1) ? static_cast<double>(pos_weight) : 1.0;
        weight_sum += w;
        const double p = static_cast<double>(probs.at(i, static_cast<std::size_t>(y)));
        const double pc = std::min(std::max(p, eps), 1.0 - eps);
        total += -w * std::log(pc);
        if (p > eps && p < 1.0 - eps)
            grad.at(i, static_cast<std::size_t>(y)) = static_cast<T>(-w / pc);
    }

    const double inv = 1.0 / weight_sum;
    for (std::size_t i = 0; i < grad.size(); ++i)
        grad[i] = static_cast<T>(static_cast<double>(grad[i]) * inv);
    return {static_cast<T>(total * inv), std::move(grad)};
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ReLU<float>;
template class ReLU<double>;
template class MaxPool2d<float>;
template class MaxPool2d<double>;
template class AvgPool2d<float>;
template class AvgPool2d<double>;
template class Dropout<float>;
template class Dropout<double>;
template class Linear<float>;
template class Linear<double>;
template class Softmax<float>;
template class Softmax<double>;
template class BottleneckBlock<float>;
template class BottleneckBlock<double>;
template BceResult<float> bce_loss(const TensorT<float>&, const std::vector<int>&, float);
template BceResult<double> bce_loss(const TensorT<double>&, const std::vector<int>&, double);

}  // namespace dwic
