#include "magsense/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "magsense/random.hpp"

namespace magsense::encoder {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

struct Cache {
  Matrix x;  // T x C
  std::vector<char> mask;
  std::vector<Matrix> h;  // blocks + 1, each H x T
  std::vector<Matrix> a;  // pre-activations per block
  Matrix out;             // D x T
};

void forward(const EncoderModel& m, const Matrix& x, const std::vector<char>* mask, Cache& c) {
  if (static_cast<std::size_t>(x.cols()) != m.channels)
    throw ValidationError("encoder expects " + std::to_string(m.channels) + " channels, got " +
                          std::to_string(x.cols()));
  const Eigen::Index T = x.rows();
  if (mask && mask->size() != static_cast<std::size_t>(T)) throw ValidationError("mask length mismatch");
  c.x = x;
  c.mask = mask ? *mask : std::vector<char>();
  c.h.assign(m.blocks() + 1, Matrix());
  c.a.assign(m.blocks(), Matrix());
  Matrix h0 = m.in_weight() * x.transpose();
  h0.colwise() += m.in_bias();
  if (mask)
    for (Eigen::Index t = 0; t < T; ++t)
      if ((*mask)[static_cast<std::size_t>(t)]) h0.col(t).setZero();
  c.h[0] = std::move(h0);
  for (std::size_t l = 0; l < m.blocks(); ++l) {
    const Matrix& h = c.h[l];
    Matrix a(idx(m.hidden), T);
    a.colwise() = m.block_bias(l);
    for (std::size_t k = 0; k < m.kernel; ++k) {
      const Eigen::Index s = idx(k * m.dilations[l]);
      if (s >= T) continue;
      a.rightCols(T - s).noalias() += m.tap_weight(l, k) * h.leftCols(T - s);
    }
    c.h[l + 1] = h + a.unaryExpr(&gelu);
    c.a[l] = std::move(a);
  }
  c.out = m.out_weight() * c.h.back();
  c.out.colwise() += m.out_bias();
}

void backward(const EncoderModel& m, const Cache& c, const Matrix& d_out, Vector& grad) {
  const Eigen::Index T = c.x.rows();
  m.out_weight(grad).noalias() += d_out * c.h.back().transpose();
  m.out_bias(grad) += d_out.rowwise().sum();
  Matrix dh = m.out_weight().transpose() * d_out;
  for (std::size_t l = m.blocks(); l-- > 0;) {
    const Matrix da = dh.cwiseProduct(c.a[l].unaryExpr(&gelu_grad));
    m.block_bias(grad, l) += da.rowwise().sum();
    const Matrix& h = c.h[l];
    for (std::size_t k = 0; k < m.kernel; ++k) {
      const Eigen::Index s = idx(k * m.dilations[l]);
      if (s >= T) continue;
      m.tap_weight(grad, l, k).noalias() += da.rightCols(T - s) * h.leftCols(T - s).transpose();
      dh.leftCols(T - s).noalias() += m.tap_weight(l, k).transpose() * da.rightCols(T - s);
    }
  }
  if (!c.mask.empty())
    for (Eigen::Index t = 0; t < T; ++t)
      if (c.mask[static_cast<std::size_t>(t)]) dh.col(t).setZero();
  m.in_weight(grad).noalias() += dh * c.x;
  m.in_bias(grad) += dh.rowwise().sum();
}

// Mean over anchors of -log softmax of the partner, diagonal excluded.
// Columns [0, N/2) pair with [N/2, N).
double pair_loss(const Matrix& v, double tau, Matrix* dv) {
  const Eigen::Index n = v.cols();
  const Eigen::Index half = n / 2;
  const Matrix s = (v.transpose() * v) / tau;
  Matrix g = Matrix::Zero(n, n);
  double total = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    const Eigen::Index p = a < half ? a + half : a - half;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != a) mx = std::max(mx, s(a, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != a) z += std::exp(s(a, j) - mx);
    const double lse = mx + std::log(z);
    total += lse - s(a, p);
    if (dv) {
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != a) g(a, j) = std::exp(s(a, j) - lse);
      g(a, p) -= 1.0;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  if (dv) *dv = v * ((g + g.transpose()) * (inv_n / tau));
  return total * inv_n;
}

struct Pooled {
  std::vector<Matrix> a, b;
  std::vector<Eigen::MatrixXi> arg_a, arg_b;
};

Matrix pool2(const Matrix& z, Eigen::MatrixXi& arg) {
  const Eigen::Index t2 = z.cols() / 2;
  Matrix out(z.rows(), t2);
  arg.resize(z.rows(), t2);
  for (Eigen::Index j = 0; j < t2; ++j)
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const bool second = z(r, 2 * j + 1) > z(r, 2 * j);
      out(r, j) = second ? z(r, 2 * j + 1) : z(r, 2 * j);
      arg(r, j) = static_cast<int>(2 * j + (second ? 1 : 0));
    }
  return out;
}

Matrix unpool2(const Matrix& g, const Eigen::MatrixXi& arg, Eigen::Index cols) {
  Matrix out = Matrix::Zero(g.rows(), cols);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index r = 0; r < g.rows(); ++r) out(r, arg(r, j)) += g(r, j);
  return out;
}

// 0.5 * instance + 0.5 * temporal at a single scale.
double level_loss(const std::vector<Matrix>& za, const std::vector<Matrix>& zb, double tau, std::vector<Matrix>* ga,
                  std::vector<Matrix>* gb) {
  const std::size_t B = za.size();
  const Eigen::Index D = za[0].rows();
  const Eigen::Index T = za[0].cols();
  const bool want = ga != nullptr;
  if (want) {
    ga->assign(B, Matrix::Zero(D, T));
    gb->assign(B, Matrix::Zero(D, T));
  }
  double inst = 0.0;
  Matrix v(D, idx(2 * B)), dv;
  for (Eigen::Index t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < B; ++i) {
      v.col(idx(i)) = za[i].col(t);
      v.col(idx(B + i)) = zb[i].col(t);
    }
    inst += pair_loss(v, tau, want ? &dv : nullptr);
    if (want)
      for (std::size_t i = 0; i < B; ++i) {
        (*ga)[i].col(t) += 0.5 * dv.col(idx(i)) / static_cast<double>(T);
        (*gb)[i].col(t) += 0.5 * dv.col(idx(B + i)) / static_cast<double>(T);
      }
  }
  inst /= static_cast<double>(T);
  double temp = 0.0;
  if (T > 1) {
    Matrix w(D, 2 * T);
    for (std::size_t i = 0; i < B; ++i) {
      w.leftCols(T) = za[i];
      w.rightCols(T) = zb[i];
      temp += pair_loss(w, tau, want ? &dv : nullptr);
      if (want) {
        (*ga)[i] += 0.5 * dv.leftCols(T) / static_cast<double>(B);
        (*gb)[i] += 0.5 * dv.rightCols(T) / static_cast<double>(B);
      }
    }
    temp /= static_cast<double>(B);
  }
  return 0.5 * inst + 0.5 * temp;
}

std::size_t offset_after_blocks(const EncoderModel& m, std::size_t blocks) {
  const std::size_t H = m.hidden;
  return H * m.channels + H + blocks * (m.kernel * H * H + H);
}

}  // namespace

EncoderModel EncoderModel::create(std::uint64_t seed, std::size_t channels, std::size_t hidden, std::size_t embed_dim,
                                  std::vector<std::size_t> dilations) {
  EncoderModel m;
  m.channels = channels;
  m.hidden = hidden;
  m.embed_dim = embed_dim;
  m.dilations = std::move(dilations);
  m.params = Vector::Zero(idx(m.parameter_count()));
  Rng rng(seed);
  auto fill = [&](Eigen::Map<Matrix> w, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = uniform(rng, -bound, bound);
  };
  auto fillv = [&](Eigen::Map<Vector> b, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = uniform(rng, -bound, bound);
  };
  fill(m.in_weight(m.params), channels);
  fillv(m.in_bias(m.params), channels);
  for (std::size_t l = 0; l < m.blocks(); ++l) {
    for (std::size_t k = 0; k < m.kernel; ++k) fill(m.tap_weight(m.params, l, k), m.kernel * hidden);
    fillv(m.block_bias(m.params, l), m.kernel * hidden);
  }
  fill(m.out_weight(m.params), hidden);
  fillv(m.out_bias(m.params), hidden);
  return m;
}

std::size_t EncoderModel::parameter_count() const {
  return offset_after_blocks(*this, blocks()) + embed_dim * hidden + embed_dim;
}

void EncoderModel::validate() const {
  if (channels == 0 || hidden == 0 || embed_dim == 0 || kernel == 0) throw ValidationError("encoder sizes must be > 0");
  for (auto d : dilations)
    if (d == 0) throw ValidationError("dilation must be > 0");
  if (static_cast<std::size_t>(params.size()) != parameter_count())
    throw ValidationError("encoder parameter vector has wrong length");
  if (!params.allFinite()) throw ValidationError("encoder parameters must be finite");
}

std::vector<EncoderModel::Block> EncoderModel::layout() const {
  std::vector<Block> out;
  std::size_t off = 0;
  auto add = [&](std::string name, std::size_t r, std::size_t c) {
    out.push_back({std::move(name), off, r, c});
    off += r * c;
  };
  add("input.weight", hidden, channels);
  add("input.bias", hidden, 1);
  for (std::size_t l = 0; l < blocks(); ++l) {
    for (std::size_t k = 0; k < kernel; ++k)
      add("block" + std::to_string(l) + ".tap" + std::to_string(k) + ".weight", hidden, hidden);
    add("block" + std::to_string(l) + ".bias", hidden, 1);
  }
  add("output.weight", embed_dim, hidden);
  add("output.bias", embed_dim, 1);
  return out;
}

#define MS_CONST_MAT(off, r, c) ConstMatMap(params.data() + (off), idx(r), idx(c))
#define MS_CONST_VEC(off, n) ConstVecMap(params.data() + (off), idx(n))
#define MS_MAT(off, r, c) MatMap(v.data() + (off), idx(r), idx(c))
#define MS_VEC(off, n) VecMap(v.data() + (off), idx(n))

EncoderModel::ConstMatMap EncoderModel::in_weight() const { return MS_CONST_MAT(0, hidden, channels); }
EncoderModel::ConstVecMap EncoderModel::in_bias() const { return MS_CONST_VEC(hidden * channels, hidden); }
EncoderModel::ConstMatMap EncoderModel::tap_weight(std::size_t l, std::size_t k) const {
  return MS_CONST_MAT(offset_after_blocks(*this, l) + k * hidden * hidden, hidden, hidden);
}
EncoderModel::ConstVecMap EncoderModel::block_bias(std::size_t l) const {
  return MS_CONST_VEC(offset_after_blocks(*this, l) + kernel * hidden * hidden, hidden);
}
EncoderModel::ConstMatMap EncoderModel::out_weight() const {
  return MS_CONST_MAT(offset_after_blocks(*this, blocks()), embed_dim, hidden);
}
EncoderModel::ConstVecMap EncoderModel::out_bias() const {
  return MS_CONST_VEC(offset_after_blocks(*this, blocks()) + embed_dim * hidden, embed_dim);
}

EncoderModel::MatMap EncoderModel::in_weight(Vector& v) const { return MS_MAT(0, hidden, channels); }
EncoderModel::VecMap EncoderModel::in_bias(Vector& v) const { return MS_VEC(hidden * channels, hidden); }
EncoderModel::MatMap EncoderModel::tap_weight(Vector& v, std::size_t l, std::size_t k) const {
  return MS_MAT(offset_after_blocks(*this, l) + k * hidden * hidden, hidden, hidden);
}
EncoderModel::VecMap EncoderModel::block_bias(Vector& v, std::size_t l) const {
  return MS_VEC(offset_after_blocks(*this, l) + kernel * hidden * hidden, hidden);
}
EncoderModel::MatMap EncoderModel::out_weight(Vector& v) const {
  return MS_MAT(offset_after_blocks(*this, blocks()), embed_dim, hidden);
}
EncoderModel::VecMap EncoderModel::out_bias(Vector& v) const {
  return MS_VEC(offset_after_blocks(*this, blocks()) + embed_dim * hidden, embed_dim);
}

#undef MS_CONST_MAT
#undef MS_CONST_VEC
#undef MS_MAT
#undef MS_VEC

Matrix represent(const EncoderModel& model, const Matrix& x, const std::vector<char>* mask) {
  Cache c;
  forward(model, x, mask, c);
  return std::move(c.out);
}

Vector encode(const EncoderModel& model, const Matrix& window) {
  if (window.rows() == 0) throw ValidationError("cannot encode an empty window");
  return represent(model, window).rowwise().maxCoeff();
}

Vector encode(const EncoderModel& model, const Window& w) { return encode(model, w.data); }

double contrastive_loss(const std::vector<Matrix>& view_a, const std::vector<Matrix>& view_b, double temperature,
                        std::size_t levels, std::vector<Matrix>* grad_a, std::vector<Matrix>* grad_b) {
  if (view_a.size() != view_b.size()) throw ValidationError("views must hold the same instances");
  if (view_a.size() < 2) throw ValidationError("contrastive loss needs a batch of at least 2");
  if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
  for (std::size_t i = 0; i < view_a.size(); ++i)
    if (view_a[i].rows() != view_a[0].rows() || view_a[i].cols() != view_a[0].cols() ||
        view_b[i].rows() != view_a[0].rows() || view_b[i].cols() != view_a[0].cols())
      throw ValidationError("all views must share one shape");
  if (view_a[0].cols() < 2) throw ValidationError("views need at least 2 timesteps");
  if (levels == 0) throw ValidationError("levels must be >= 1");

  const bool want = grad_a != nullptr || grad_b != nullptr;
  std::vector<std::vector<Matrix>> la{view_a}, lb{view_b};
  std::vector<std::vector<Eigen::MatrixXi>> arg_a, arg_b;
  std::vector<std::vector<Matrix>> ga, gb;
  double total = 0.0;
  std::size_t used = 0;
  while (used < levels && la.back()[0].cols() > 1) {
    std::vector<Matrix> g1, g2;
    total += level_loss(la.back(), lb.back(), temperature, want ? &g1 : nullptr, want ? &g2 : nullptr);
    ga.push_back(std::move(g1));
    gb.push_back(std::move(g2));
    ++used;
    if (used < levels && la.back()[0].cols() / 2 > 1) {
      std::vector<Matrix> na, nb;
      std::vector<Eigen::MatrixXi> aa(view_a.size()), ab(view_a.size());
      for (std::size_t i = 0; i < view_a.size(); ++i) {
        na.push_back(pool2(la.back()[i], aa[i]));
        nb.push_back(pool2(lb.back()[i], ab[i]));
      }
      la.push_back(std::move(na));
      lb.push_back(std::move(nb));
      arg_a.push_back(std::move(aa));
      arg_b.push_back(std::move(ab));
    } else {
      break;
    }
  }
  const double scale = 1.0 / static_cast<double>(used);
  if (want) {
    std::vector<Matrix> acc_a = ga.back(), acc_b = gb.back();
    for (std::size_t l = used - 1; l-- > 0;) {
      for (std::size_t i = 0; i < view_a.size(); ++i) {
        acc_a[i] = ga[l][i] + unpool2(acc_a[i], arg_a[l][i], la[l][i].cols());
        acc_b[i] = gb[l][i] + unpool2(acc_b[i], arg_b[l][i], lb[l][i].cols());
      }
    }
    for (auto& g : acc_a) g *= scale;
    for (auto& g : acc_b) g *= scale;
    if (grad_a) *grad_a = std::move(acc_a);
    if (grad_b) *grad_b = std::move(acc_b);
  }
  return total * scale;
}

double batch_loss(const EncoderModel& model, const TrainingBatch& batch, double temperature, std::size_t levels,
                  Vector* grad) {
  const std::size_t B = batch.contexts.size();
  const std::size_t ov = batch.overlap_begin, len = batch.overlap_len;
  if (batch.a_begin > ov || ov + len > batch.b_end) throw ValidationError("inconsistent crop boundaries");
  const std::size_t la = ov + len - batch.a_begin, lb = batch.b_end - ov;
  std::vector<Cache> ca(B), cb(B);
  std::vector<Matrix> za(B), zb(B);
  for (std::size_t i = 0; i < B; ++i) {
    const Matrix& ctx = batch.contexts[i];
    if (static_cast<std::size_t>(ctx.rows()) < batch.b_end) throw ValidationError("context shorter than crop");
    const auto* ma = batch.mask_a.empty() ? nullptr : &batch.mask_a[i];
    const auto* mb = batch.mask_b.empty() ? nullptr : &batch.mask_b[i];
    forward(model, ctx.middleRows(idx(batch.a_begin), idx(la)), ma, ca[i]);
    forward(model, ctx.middleRows(idx(ov), idx(lb)), mb, cb[i]);
    za[i] = ca[i].out.rightCols(idx(len));
    zb[i] = cb[i].out.leftCols(idx(len));
  }
  if (!grad) return contrastive_loss(za, zb, temperature, levels);
  std::vector<Matrix> ga, gb;
  const double loss = contrastive_loss(za, zb, temperature, levels, &ga, &gb);
  *grad = Vector::Zero(model.params.size());
  for (std::size_t i = 0; i < B; ++i) {
    Matrix da = Matrix::Zero(idx(model.embed_dim), idx(la));
    da.rightCols(idx(len)) = ga[i];
    backward(model, ca[i], da, *grad);
    Matrix db = Matrix::Zero(idx(model.embed_dim), idx(lb));
    db.leftCols(idx(len)) = gb[i];
    backward(model, cb[i], db, *grad);
  }
  return loss;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
  if (!(temperature > 0.0)) throw ValidationError("temperature must be > 0");
  if (context_len < kWindowLength) throw ValidationError("context_len must be >= window length");
  if (!(mask_rate >= 0.0 && mask_rate < 1.0)) throw ValidationError("mask_rate must lie in [0, 1)");
  if (levels < 1) throw ValidationError("levels must be >= 1");
}

TrainingBatch make_batch(std::vector<Matrix> contexts, const TrainConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  TrainingBatch b;
  const std::size_t L = cfg.context_len, len = kWindowLength;
  b.overlap_len = len;
  b.overlap_begin = std::uniform_int_distribution<std::size_t>(0, L - len)(rng);
  b.a_begin = std::uniform_int_distribution<std::size_t>(0, b.overlap_begin)(rng);
  b.b_end = std::uniform_int_distribution<std::size_t>(b.overlap_begin + len, L)(rng);
  std::bernoulli_distribution drop(cfg.mask_rate);
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    std::vector<char> ma(b.overlap_begin + len - b.a_begin), mb(b.b_end - b.overlap_begin);
    for (auto& m : ma) m = cfg.mask_rate > 0.0 && drop(rng);
    for (auto& m : mb) m = cfg.mask_rate > 0.0 && drop(rng);
    b.mask_a.push_back(std::move(ma));
    b.mask_b.push_back(std::move(mb));
  }
  b.contexts = std::move(contexts);
  return b;
}

TrainResult pretrain(const std::vector<Matrix>& sequences, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t L = cfg.context_len;
  std::vector<std::size_t> usable;
  std::vector<std::vector<std::size_t>> active(sequences.size());
  Eigen::Index channels = -1;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const Matrix& seq = sequences[s];
    if (!seq.allFinite()) throw ValidationError("pretraining sequence contains non-finite values");
    if (static_cast<std::size_t>(seq.rows()) < L) continue;
    if (channels < 0) channels = seq.cols();
    if (seq.cols() != channels) throw ValidationError("pretraining sequences differ in channel count");
    usable.push_back(s);
    for (Eigen::Index t = 0; t < seq.rows(); ++t)
      if (seq.row(t).norm() > cfg.active_level) active[s].push_back(static_cast<std::size_t>(t));
  }
  if (usable.empty()) throw ValidationError("no pretraining sequence is at least context_len frames long");

  TrainResult result;
  result.model = EncoderModel::create(mix_seed(cfg.seed, 0), static_cast<std::size_t>(channels), cfg.hidden,
                                      cfg.embed_dim);
  EncoderModel& model = result.model;
  const Eigen::Index P = model.params.size();
  Vector m1 = Vector::Zero(P), m2 = Vector::Zero(P), grad;
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, epoch + 1));
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    for (std::size_t s : usable) {
      const std::size_t n = static_cast<std::size_t>(sequences[s].rows());
      for (std::size_t r = 0; r < cfg.contexts_per_recording; ++r) {
        std::size_t start;
        if (!active[s].empty() && uniform(rng, 0.0, 1.0) < cfg.active_fraction) {
          const std::size_t at = active[s][std::uniform_int_distribution<std::size_t>(0, active[s].size() - 1)(rng)];
          const std::size_t back = std::uniform_int_distribution<std::size_t>(0, L - 1)(rng);
          start = std::min(at >= back ? at - back : 0, n - L);
        } else {
          start = std::uniform_int_distribution<std::size_t>(0, n - L)(rng);
        }
        picks.emplace_back(s, start);
      }
    }
    std::shuffle(picks.begin(), picks.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t off = 0; off + 2 <= picks.size(); off += cfg.batch_size) {
      const std::size_t end = std::min(off + cfg.batch_size, picks.size());
      if (end - off < 2) break;
      std::vector<Matrix> ctx;
      for (std::size_t i = off; i < end; ++i)
        ctx.push_back(sequences[picks[i].first].middleRows(idx(picks[i].second), idx(L)));
      const TrainingBatch batch = make_batch(std::move(ctx), cfg, mix_seed(mix_seed(cfg.seed, epoch + 1), off + 1));
      const double loss = batch_loss(model, batch, cfg.temperature, cfg.levels, &grad);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1) + " (non-finite loss)");
      ++step;
      m1 = beta1 * m1 + (1.0 - beta1) * grad;
      m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      model.params.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
      sum += loss;
      ++batches;
    }
    if (batches == 0) throw ValidationError("pretraining corpus too small for a single batch");
    result.epoch_loss.push_back(sum / static_cast<double>(batches));
    if (!model.params.allFinite()) throw TrainingError("training diverged: parameters became non-finite");
  }
  return result;
}

std::string format_model(const EncoderModel& model) {
  model.validate();
  std::ostringstream out;
  out << kFormatTag << "\n";
  out << "channels " << model.channels << "\nhidden " << model.hidden << "\nembed_dim " << model.embed_dim
      << "\nkernel " << model.kernel << "\ndilations";
  for (auto d : model.dilations) out << ' ' << d;
  out << "\n";
  char buf[32];
  for (const auto& b : model.layout()) {
    out << "param " << b.name << ' ' << b.rows << ' ' << b.cols << "\n";
    for (std::size_t i = 0; i < b.rows * b.cols; ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", model.params(idx(b.offset + i)));
      out << (i ? " " : "") << buf;
    }
    out << "\n";
  }
  return out.str();
}

EncoderModel parse_model(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kFormatTag) throw ValidationError("not a magsense encoder file");
  EncoderModel m;
  auto read_kv = [&](const std::string& key) -> std::istringstream {
    if (!std::getline(in, line)) throw ValidationError("truncated encoder file");
    std::istringstream ls(line);
    std::string k;
    ls >> k;
    if (k != key) throw ValidationError("expected '" + key + "' in encoder file, got '" + k + "'");
    return ls;
  };
  read_kv("channels") >> m.channels;
  read_kv("hidden") >> m.hidden;
  read_kv("embed_dim") >> m.embed_dim;
  read_kv("kernel") >> m.kernel;
  {
    auto ls = read_kv("dilations");
    m.dilations.clear();
    std::size_t d;
    while (ls >> d) m.dilations.push_back(d);
  }
  m.params = Vector::Zero(idx(m.parameter_count()));
  for (const auto& b : m.layout()) {
    auto ls = read_kv("param");
    std::string name;
    std::size_t r = 0, c = 0;
    ls >> name >> r >> c;
    if (name != b.name || r != b.rows || c != b.cols) throw ValidationError("unexpected parameter block '" + name + "'");
    if (!std::getline(in, line)) throw ValidationError("truncated encoder file");
    std::istringstream vs(line);
    for (std::size_t i = 0; i < r * c; ++i) {
      std::string tok;
      if (!(vs >> tok)) throw ValidationError("parameter block '" + name + "' is short");
      m.params(idx(b.offset + i)) = std::stod(tok);
    }
  }
  m.validate();
  return m;
}

void save_model(const EncoderModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_model(model);
}

EncoderModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

void write_loss_csv(const std::vector<double>& epoch_loss, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < epoch_loss.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, epoch_loss[i]);
    out << buf;
  }
}

}  // namespace magsense::encoder
