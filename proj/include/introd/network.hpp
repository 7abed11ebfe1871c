#ifndef INTROD_NETWORK_HPP_
#define INTROD_NETWORK_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "introd/numcore.hpp"
#include "introd/rng.hpp"

namespace introd {

/// How the main branch reads (question, context).
///
/// dense:    one 2-layer MLP over [question | context] emitting A logits.
/// slotwise: the context is S slots of `context_dim / S` values each; one
///           shared 2-layer scorer reads [question | slot_i | scale * onehot(i)]
///           and emits the scalar logit of slot i. The scorer has no per-slot
///           output bias, so only the scaled position feature can encode a
///           slot preference.
enum class Layout : std::uint8_t { dense = 0, slotwise = 1 };

struct MainShape {
  Layout layout = Layout::dense;
  std::uint32_t question_dim = 0;
  std::uint32_t context_dim = 0;
  std::uint32_t hidden = 64;
  std::uint32_t num_classes = 0;
  double position_scale = 0.1;  // slotwise only

  std::size_t units() const { return layout == Layout::dense ? 1 : num_classes; }
  std::size_t slot_dim() const { return layout == Layout::dense ? 0 : context_dim / num_classes; }
  std::size_t unit_input() const {
    return layout == Layout::dense ? std::size_t{question_dim} + context_dim
                                   : std::size_t{question_dim} + slot_dim() + num_classes;
  }
  std::size_t unit_outputs() const { return layout == Layout::dense ? num_classes : 1; }
  std::size_t num_params() const {
    const std::size_t h = hidden;
    const std::size_t bias2 = layout == Layout::dense ? num_classes : 0;
    return h * unit_input() + h + unit_outputs() * h + bias2;
  }

  void validate() const {
    if (hidden == 0) throw InvalidConfig("hidden width must be >= 1");
    if (num_classes < 2) throw InvalidConfig("need at least two answer classes");
    if (layout == Layout::slotwise && (context_dim == 0 || context_dim % num_classes != 0)) {
      throw InvalidConfig("slotwise context length must be a positive multiple of the slot count");
    }
    if (!std::isfinite(position_scale)) throw InvalidConfig("position_scale must be finite");
  }

  bool operator==(const MainShape&) const = default;
};

/// Activations kept by forward() for backward().
struct ForwardCache {
  std::vector<double> input;  // units x unit_input
  std::vector<double> pre;    // units x hidden
};

/// The context-reading 2-layer rectifier network shared by teacher and
/// student. Parameters live in one flat array laid out as
/// [W1 (hidden x unit_input, row major) | b1 | W2 (unit_outputs x hidden) | b2]
/// where b2 exists only for the dense layout.
class MainBranch {
 public:
  MainBranch() = default;
  explicit MainBranch(MainShape shape) : shape_(shape) {
    shape_.validate();
    params_.assign(shape_.num_params(), 0.0);
  }

  /// He fan-in normal W1; b1, W2 and b2 start at zero, so initial logits are 0.
  void init(Rng rng) {
    const double scale = std::sqrt(2.0 / static_cast<double>(shape_.unit_input()));
    std::fill(params_.begin(), params_.end(), 0.0);
    const std::size_t n_w1 = std::size_t{shape_.hidden} * shape_.unit_input();
    for (std::size_t i = 0; i < n_w1; ++i) params_[i] = scale * rng.normal();
  }

  const MainShape& shape() const noexcept { return shape_; }
  std::size_t num_params() const noexcept { return params_.size(); }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  std::vector<double> forward(std::span<const double> question, std::span<const double> context,
                              ForwardCache* cache = nullptr) const {
    require_same_size(question.size(), shape_.question_dim, "main branch question");
    require_same_size(context.size(), shape_.context_dim, "main branch context");
    const std::size_t units = shape_.units();
    const std::size_t in = shape_.unit_input();
    const std::size_t H = shape_.hidden;
    const std::size_t outs = shape_.unit_outputs();

    ForwardCache local;
    ForwardCache& c = cache != nullptr ? *cache : local;
    c.input.assign(units * in, 0.0);
    c.pre.assign(units * H, 0.0);
    for (std::size_t u = 0; u < units; ++u) fill_input(question, context, u, &c.input[u * in]);

    const double* W1 = params_.data();
    const double* b1 = W1 + H * in;
    const double* W2 = b1 + H;
    const double* b2 = W2 + outs * H;
    std::vector<double> logits(units * outs, 0.0);
    for (std::size_t u = 0; u < units; ++u) {
      const double* x = &c.input[u * in];
      double* pre = &c.pre[u * H];
      for (std::size_t h = 0; h < H; ++h) {
        double acc = b1[h];
        const double* row = W1 + h * in;
        for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
        pre[h] = acc;
      }
      for (std::size_t r = 0; r < outs; ++r) {
        double acc = shape_.layout == Layout::dense ? b2[r] : 0.0;
        const double* row = W2 + r * H;
        for (std::size_t h = 0; h < H; ++h) acc += row[h] * std::max(pre[h], 0.0);
        logits[u * outs + r] = acc;
      }
    }
    return logits;
  }

  /// Adds dL/dparams to `grad` given dL/dlogits.
  void backward(const ForwardCache& c, std::span<const double> dlogits, std::span<double> grad) const {
    const std::size_t units = shape_.units();
    const std::size_t in = shape_.unit_input();
    const std::size_t H = shape_.hidden;
    const std::size_t outs = shape_.unit_outputs();
    require_same_size(dlogits.size(), units * outs, "main branch backward logits");
    require_same_size(grad.size(), params_.size(), "main branch backward grad");

    const double* W2 = params_.data() + H * in + H;
    double* gW1 = grad.data();
    double* gb1 = gW1 + H * in;
    double* gW2 = gb1 + H;
    double* gb2 = gW2 + outs * H;
    std::vector<double> dh(H);
    for (std::size_t u = 0; u < units; ++u) {
      const double* x = &c.input[u * in];
      const double* pre = &c.pre[u * H];
      std::fill(dh.begin(), dh.end(), 0.0);
      for (std::size_t r = 0; r < outs; ++r) {
        const double g = dlogits[u * outs + r];
        if (shape_.layout == Layout::dense) gb2[r] += g;
        for (std::size_t h = 0; h < H; ++h) {
          gW2[r * H + h] += g * std::max(pre[h], 0.0);
          dh[h] += g * W2[r * H + h];
        }
      }
      for (std::size_t h = 0; h < H; ++h) {
        if (pre[h] <= 0.0) continue;
        const double g = dh[h];
        gb1[h] += g;
        double* row = gW1 + h * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += g * x[i];
      }
    }
  }

  bool operator==(const MainBranch&) const = default;

 private:
  void fill_input(std::span<const double> q, std::span<const double> ctx, std::size_t unit, double* out) const {
    if (shape_.layout == Layout::dense) {
      std::copy(q.begin(), q.end(), out);
      std::copy(ctx.begin(), ctx.end(), out + q.size());
      return;
    }
    const std::size_t d = shape_.slot_dim();
    std::copy(q.begin(), q.end(), out);
    std::copy(ctx.begin() + static_cast<std::ptrdiff_t>(unit * d),
              ctx.begin() + static_cast<std::ptrdiff_t>((unit + 1) * d), out + q.size());
    double* pos = out + q.size() + d;
    std::fill(pos, pos + shape_.num_classes, 0.0);
    pos[unit] = shape_.position_scale;
  }

  MainShape shape_;
  std::vector<double> params_;
};

}  // namespace introd

#endif  // INTROD_NETWORK_HPP_
