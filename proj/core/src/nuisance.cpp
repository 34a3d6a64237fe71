#include "drpo/nuisance.hpp"

#include <cmath>
#include <sstream>

#include "drpo/datagen.hpp"
#include "drpo/errors.hpp"
#include "drpo/rng.hpp"

namespace drpo {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string format_double(double v) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out.precision(17);
  out << v;
  return out.str();
}

// wins[x][a * k + b] = number of comparisons at x in which a beat b.
PerPrompt<double> win_counts(const VocabShape& shape, const PreferenceDataset& data) {
  PerPrompt<double> wins(shape.prompts());
  for (std::size_t x = 0; x < shape.prompts(); ++x) wins[x].assign(shape.sizes()[x] * shape.sizes()[x], 0.0);
  for (const auto& t : data.tuples()) {
    shape.check(t.prompt, t.y1);
    shape.check(t.prompt, t.y2);
    const std::size_t k = shape.sizes()[t.prompt];
    if (t.z == 1) {
      wins[t.prompt][t.y1 * k + t.y2] += 1.0;
    } else {
      wins[t.prompt][t.y2 * k + t.y1] += 1.0;
    }
  }
  return wins;
}

double norm(const PerPrompt<double>& v) {
  double s = 0.0;
  for (const auto& row : v)
    for (double e : row) s += e * e;
  return std::sqrt(s);
}

}  // namespace

std::string describe(const GSource& g) {
  return std::visit(Overloaded{
                        [](const GTrue&) { return std::string("true"); },
                        [](const GBtMle&) { return std::string("bt_mle"); },
                        [](const GGpmTable&) { return std::string("gpm"); },
                        [](const GUniformRandom& u) { return "uniform:" + std::to_string(u.seed); },
                        [](const GConstant& c) { return "const:" + format_double(c.c); },
                    },
                    g);
}

GSource parse_g_source(const std::string& text) {
  if (text == "true") return GTrue{};
  if (text == "bt_mle") return GBtMle{};
  if (text == "gpm" || text == "gpm_table") return GGpmTable{};
  try {
    if (text.rfind("uniform:", 0) == 0) return GUniformRandom{std::stoull(text.substr(8))};
    if (text.rfind("const:", 0) == 0) {
      std::istringstream in(text.substr(6));
      in.imbue(std::locale::classic());
      double c = 0.0;
      if (!(in >> c) || !in.eof()) throw UsageError("bad constant");
      return GConstant{c};
    }
  } catch (const std::logic_error&) {
  } catch (const UsageError&) {
  }
  throw UsageError("unknown preference source '" + text +
                   "' (expected true, bt_mle, gpm, uniform:SEED or const:C)");
}

std::string describe(const RefSource& ref) {
  return std::visit(Overloaded{
                        [](const RefTrue&) { return std::string("true"); },
                        [](const RefFitted&) { return std::string("fitted"); },
                        [](const RefWrong& w) { return "wrong:" + w.id; },
                        [](const RefUniform&) { return std::string("uniform"); },
                    },
                    ref);
}

bool g_needs_fit(const GSource& g) noexcept {
  return std::holds_alternative<GBtMle>(g) || std::holds_alternative<GGpmTable>(g);
}

bool ref_needs_fit(const RefSource& ref) noexcept {
  return std::holds_alternative<RefFitted>(ref);
}

namespace {

// Solves A x = b for a dense n x n row-major A (overwritten); b becomes x.
void solve_in_place(std::vector<double>& A, std::vector<double>& b, std::size_t n) {
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r * n + c]) > std::abs(A[piv * n + c])) piv = r;
    if (A[piv * n + c] == 0.0) throw DomainError("singular system in Bradley-Terry fit");
    if (piv != c) {
      for (std::size_t j = 0; j < n; ++j) std::swap(A[c * n + j], A[piv * n + j]);
      std::swap(b[c], b[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r * n + c] / A[c * n + c];
      if (f == 0.0) continue;
      for (std::size_t j = c; j < n; ++j) A[r * n + j] -= f * A[c * n + j];
      b[r] -= f * b[c];
    }
  }
  for (std::size_t c = n; c-- > 0;) {
    double s = b[c];
    for (std::size_t j = c + 1; j < n; ++j) s -= A[c * n + j] * b[j];
    b[c] = s / A[c * n + c];
  }
}

// Gradient ascent on the weighted Bradley-Terry log-likelihood
//   sum_{a,b} wins(a, b) log s(r(a) - r(b)) - l2 |r|^2,
// divided by `count`. Returns per-prompt zero-mean rewards.
PerPrompt<double> ascend_bt(const VocabShape& shape, const PerPrompt<double>& wins, double count,
                            double l2, std::size_t steps, double lr, FitMeta& meta) {
  PerPrompt<double> r(shape.prompts());
  PerPrompt<double> grad(shape.prompts());
  for (std::size_t x = 0; x < shape.prompts(); ++x) {
    r[x].assign(shape.sizes()[x], 0.0);
    grad[x].assign(shape.sizes()[x], 0.0);
  }

  auto compute_grad = [&] {
    for (std::size_t x = 0; x < shape.prompts(); ++x) {
      const std::size_t k = shape.sizes()[x];
      for (std::size_t a = 0; a < k; ++a) grad[x][a] = -2.0 * l2 * r[x][a] / count;
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
          const double w = wins[x][a * k + b];
          if (w == 0.0 || a == b) continue;
          const double push = w * sigmoid(r[x][b] - r[x][a]) / count;
          grad[x][a] += push;
          grad[x][b] -= push;
        }
      }
    }
    return norm(grad);
  };

  meta.initial_grad_norm = compute_grad();
  const double target = 1e-6 * (1.0 + meta.initial_grad_norm);
  double grad_norm = meta.initial_grad_norm;
  std::size_t step = 0;
  while (step < steps && grad_norm >= target) {
    for (std::size_t x = 0; x < shape.prompts(); ++x)
      for (std::size_t a = 0; a < r[x].size(); ++a) r[x][a] += lr * grad[x][a];
    grad_norm = compute_grad();
    ++step;
  }
  meta.steps = step;
  meta.final_grad_norm = grad_norm;
  meta.converged = grad_norm < target;

  for (auto& row : r) {
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    for (double& v : row) v -= mean;
  }
  return r;
}

}  // namespace

BtFit fit_reward_bt_mle(const VocabShape& shape, const PreferenceDataset& input, double l2,
                        std::size_t steps, double lr) {
  if (input.empty()) throw UsageError("fit_reward_bt_mle: empty dataset");
  if (!(l2 > 0.0)) throw UsageError("fit_reward_bt_mle: l2 must be positive");
  if (!(lr > 0.0)) throw UsageError("fit_reward_bt_mle: lr must be positive");
  const PreferenceDataset data = strip_augmentation(input);
  FitMeta meta;
  meta.data_seed = data.seed();
  PerPrompt<double> r = ascend_bt(shape, win_counts(shape, data),
                                  static_cast<double>(data.size()), l2, steps, lr, meta);
  return BtFit{RewardTable::tight(std::move(r)), meta};
}

RewardTable fit_reward_bt_population(const Environment& env, std::size_t max_iter) {
  const auto& shape = env.shape();
  PerPrompt<double> r(shape.prompts());
  for (std::size_t x = 0; x < shape.prompts(); ++x) {
    const std::size_t k = shape.sizes()[x];
    std::vector<double> w(k * k, 0.0);  // w[a k + b]: mass of "a beats b"
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        if (a != b)
          w[a * k + b] = env.ref_policy().prob(x, a) * env.ref_policy().prob(x, b) * env.preference()(x, a, b);

    auto objective = [&](const std::vector<double>& v) {
      double s = 0.0;
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b)
          if (w[a * k + b] > 0.0) s += w[a * k + b] * std::log(sigmoid(v[a] - v[b]));
      return s;
    };

    // Damped Newton on the concave likelihood. The constant direction is
    // flat, so the Hessian is shifted by -11^T and steps are centred.
    std::vector<double> v(k, 0.0);
    for (std::size_t it = 0; it < max_iter; ++it) {
      std::vector<double> grad(k, 0.0), hess(k * k, -1.0);
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
          if (a == b) continue;
          const double sab = sigmoid(v[a] - v[b]);
          grad[a] += w[a * k + b] * (1.0 - sab) - w[b * k + a] * sab;
          const double curv = (w[a * k + b] + w[b * k + a]) * sab * (1.0 - sab);
          hess[a * k + b] += curv;
          hess[a * k + a] -= curv;
        }
      }
      double gnorm = 0.0;
      for (double g : grad) gnorm = std::max(gnorm, std::abs(g));
      if (gnorm < 1e-15) break;
      std::vector<double> step = grad;
      for (double& s : step) s = -s;
      solve_in_place(hess, step, k);
      double mean = 0.0;
      for (double s : step) mean += s / static_cast<double>(k);
      for (double& s : step) s -= mean;
      const double base = objective(v);
      double t = 1.0;
      std::vector<double> trial(k);
      for (int halvings = 0; halvings < 60; ++halvings, t *= 0.5) {
        for (std::size_t a = 0; a < k; ++a) trial[a] = v[a] + t * step[a];
        if (objective(trial) >= base) break;
      }
      if (trial == v) break;
      v = trial;
    }
    double mean = 0.0;
    for (double e : v) mean += e / static_cast<double>(k);
    for (double& e : v) e -= mean;
    r[x] = std::move(v);
  }
  return RewardTable::tight(std::move(r));
}

PreferenceModel fit_gpm_table(const VocabShape& shape, const PreferenceDataset& input,
                              double smoothing) {
  if (!(smoothing >= 0.0)) throw UsageError("fit_gpm_table: smoothing must be nonnegative");
  const PreferenceDataset data = strip_augmentation(input);
  const PerPrompt<double> wins = win_counts(shape, data);
  PerPrompt<double> upper(shape.prompts());
  for (std::size_t x = 0; x < shape.prompts(); ++x) {
    const std::size_t k = shape.sizes()[x];
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) {
        const double ab = wins[x][a * k + b];
        const double ba = wins[x][b * k + a];
        const double denom = ab + ba + 2.0 * smoothing;
        upper[x].push_back(denom > 0.0 ? (ab + smoothing) / denom : 0.5);
      }
    }
  }
  return PreferenceModel::from_upper_triangle(shape, upper);
}

Policy fit_reference_policy(const VocabShape& shape, const PreferenceDataset& input,
                            double smoothing) {
  if (!(smoothing > 0.0)) throw UsageError("fit_reference_policy: smoothing must be positive");
  const PreferenceDataset data = strip_augmentation(input);
  PerPrompt<double> counts(shape.prompts());
  for (std::size_t x = 0; x < shape.prompts(); ++x) counts[x].assign(shape.sizes()[x], smoothing);
  for (const auto& t : data.tuples()) {
    shape.check(t.prompt, t.y1);
    shape.check(t.prompt, t.y2);
    counts[t.prompt][t.y1] += 1.0;
    counts[t.prompt][t.y2] += 1.0;
  }
  for (auto& row : counts) {
    double total = 0.0;
    for (double c : row) total += c;
    for (double& c : row) c /= total;
  }
  return Policy::from_probs(counts);
}

PreferenceModel make_misspecified_g(const Environment& env, std::uint64_t seed) {
  const auto& shape = env.shape();
  PerPrompt<double> matrices(shape.prompts());
  for (std::size_t x = 0; x < shape.prompts(); ++x) {
    Philox4x32 rng(seed, x);
    const std::size_t k = shape.sizes()[x];
    matrices[x].assign(k * k, 0.5);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) {
        const double u = rng.uniform();
        matrices[x][a * k + b] = u;
        matrices[x][b * k + a] = 1.0 - u;
      }
    }
  }
  return PreferenceModel::misspecified_table(std::move(matrices), seed);
}

Nuisances resolve_nuisances(const Environment& env, const NuisanceSpec& spec,
                            const PreferenceDataset* fit_data, const FitOptions& options) {
  if ((g_needs_fit(spec.g) || ref_needs_fit(spec.ref)) && fit_data == nullptr) {
    throw UsageError("fitted nuisances need a fitting dataset");
  }
  const auto& shape = env.shape();
  std::optional<FitMeta> g_fit;
  PreferenceModel g_hat = std::visit(
      Overloaded{
          [&](const GTrue&) { return env.preference(); },
          [&](const GBtMle&) {
            BtFit fit = fit_reward_bt_mle(shape, *fit_data, options.bt_l2, options.bt_steps,
                                          options.bt_lr);
            g_fit = fit.meta;
            return PreferenceModel::bradley_terry(std::move(fit.reward));
          },
          [&](const GGpmTable&) { return fit_gpm_table(shape, *fit_data, options.gpm_smoothing); },
          [&](const GUniformRandom& u) { return make_misspecified_g(env, u.seed); },
          [&](const GConstant& c) {
            return c.c == 0.5 ? PreferenceModel::constant(shape, c.c)
                              : PreferenceModel::misspecified_constant(shape, c.c);
          },
      },
      spec.g);
  Policy ref_hat = std::visit(
      Overloaded{
          [&](const RefTrue&) { return env.ref_policy(); },
          [&](const RefFitted&) {
            return fit_reference_policy(shape, *fit_data, options.ref_smoothing);
          },
          [&](const RefWrong& w) {
            shape.require_same(w.policy.shape(), "wrong reference policy");
            return w.policy;
          },
          [&](const RefUniform&) { return Policy::uniform(shape); },
      },
      spec.ref);
  Nuisances out{std::move(g_hat), std::move(ref_hat), {describe(spec.g), describe(spec.ref)},
                g_fit};
  return out;
}

}  // namespace drpo
