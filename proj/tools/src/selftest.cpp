#include "drpo_cli/selftest.hpp"

#include "drpo/fault.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <sstream>

#include "drpo/datagen.hpp"
#include "drpo/environments.hpp"
#include "drpo/errors.hpp"
#include "drpo/estimators.hpp"
#include "drpo/nuisance.hpp"
#include "drpo/oracle.hpp"
#include "drpo/rng.hpp"
#include "drpo/serialization.hpp"

namespace drpo::cli {
namespace {

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << what << "; ";
    }
  }
  void near(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol)) {
      ok = false;
      detail << what << ": got " << format_number(got) << " want " << format_number(want)
             << "; ";
    }
  }
};

Policy random_policy(const VocabShape& shape, Philox4x32& rng, double scale = 1.0) {
  PerPrompt<double> logits(shape.prompts());
  for (std::size_t x = 0; x < shape.prompts(); ++x)
    for (std::size_t y = 0; y < shape.sizes()[x]; ++y) logits[x].push_back(scale * rng.normal());
  return Policy::from_logits(std::move(logits));
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

using Invariant = std::pair<const char*, std::function<void(Check&)>>;

// Lambdas hold references into `envs`, which must outlive them.
std::vector<Invariant> invariants(const std::uint64_t& seed, const std::vector<TestEnvironment>& envs) {
  const auto& e1 = envs[0];
  const auto& e2 = envs[1];
  const auto& e3 = envs[2];
  const auto& e4 = envs[3];

  return {
      {"philox_known_answer",
       [](Check& c) {
         const auto a = Philox4x32::encrypt({0, 0, 0, 0}, {0, 0});
         c.expect(a == Philox4x32::Block{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}, "zero vector");
         const auto b = Philox4x32::encrypt({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                                            {0xffffffff, 0xffffffff});
         c.expect(b == Philox4x32::Block{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}, "ones vector");
         const auto p = Philox4x32::encrypt({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                                            {0xa4093822, 0x299f31d0});
         c.expect(p == Philox4x32::Block{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}, "pi vector");
       }},
      {"canonical_psi_example",
       [&](Check& c) {
         const EstimatorConfig cfg{};
         const double psi = psi_eval({0, 0, 1, 1}, e1.target, e1.env.ref_policy(), e1.env.preference(), cfg);
         c.near(psi, 0.85, 1e-12, "psi(x, a, b, 1)");
         c.near(total_preference_exact(e1.env, e1.target), 0.65, 1e-12, "p*(1, 0)");
       }},
      {"reference_total_preference_half",
       [&](Check& c) {
         for (const auto& t : envs)
           c.near(total_preference_exact(t.env, t.env.ref_policy()), 0.5, 1e-12, t.name);
       }},
      {"psi_unbiased_true_nuisances",
       [&](Check& c) {
         for (const auto& t : envs) {
           const double b = enumerated_dr_bias(t.env, t.target, t.env.ref_policy(), t.env.preference());
           c.near(b, 0.0, 1e-10, t.name);
         }
       }},
      {"is_unbiased_true_reference",
       [&](Check& c) {
         for (const auto& t : envs) {
           const double m = enumerate_expectation(t.env, [&](const PreferenceTuple& tu) {
             return is_term(tu, t.target, t.env.ref_policy(), std::nullopt);
           });
           c.near(m, total_preference_exact(t.env, t.target), 1e-10, t.name);
         }
       }},
      {"dm_exact_true_preference",
       [&](Check& c) {
         for (const auto& t : envs) {
           const double m = enumerate_expectation(t.env, [&](const PreferenceTuple& tu) {
             return dm_term(tu, t.target, t.env.preference(), DmExact{});
           });
           c.near(m, total_preference_exact(t.env, t.target), 1e-10, t.name);
         }
       }},
      {"double_robustness",
       [&](Check& c) {
         for (const auto& t : envs) {
           const PreferenceModel wrong_g = make_misspecified_g(t.env, t.wrong_g_seed);
           c.near(enumerated_dr_bias(t.env, t.target, t.wrong_ref, t.env.preference()), 0.0, 1e-10,
                  t.name + " true g, wrong ref");
           c.near(enumerated_dr_bias(t.env, t.target, t.env.ref_policy(), wrong_g), 0.0, 1e-10,
                  t.name + " wrong g, true ref");
         }
         c.expect(e4.both_wrong_bias && std::abs(*e4.both_wrong_bias) >= 0.05, "E4 both-wrong bias below 0.05");
       }},
      {"psi_swap_symmetry",
       [&](Check& c) {
         const EstimatorConfig cfg{};
         const PreferenceModel wrong_g = make_misspecified_g(e2.env, 5);
         const auto& shape = e2.env.shape();
         double worst = 0.0;
         for (PromptId x = 0; x < shape.prompts(); ++x)
           for (ResponseId a = 0; a < shape.sizes()[x]; ++a)
             for (ResponseId b = 0; b < shape.sizes()[x]; ++b)
               for (int z = 0; z <= 1; ++z) {
                 const double l = psi_eval({x, a, b, z}, e2.target, e2.wrong_ref, wrong_g, cfg);
                 const double r = psi_eval({x, b, a, 1 - z}, e2.target, e2.wrong_ref, wrong_g, cfg);
                 worst = std::max(worst, std::abs(l - r));
               }
         c.near(worst, 0.0, 1e-12, "max |psi(t) - psi(swap t)|");
       }},
      {"augmentation_preserves_dr_estimate",
       [&](Check& c) {
         const auto data = sample_dataset(e2.env, 300, derive_seed(seed, {7}));
         const EstimatorConfig cfg{};
         const double plain = dr_estimate(data, e2.target, e2.wrong_ref, e2.env.preference(), cfg).value;
         const double aug = dr_estimate(augment_swapped(data), e2.target, e2.wrong_ref, e2.env.preference(), cfg).value;
         c.near(aug, plain, 1e-12, "augmented vs original");
       }},
      {"seb_is_psi_variance_over_n",
       [&](Check& c) {
         for (std::size_t n : {1, 10, 500}) c.near(seb_exact(e2.env, e2.target, n) * static_cast<double>(n), psi_variance_exact(e2.env, e2.target), 1e-15, "n=" + std::to_string(n));
       }},
      {"win_rate_antisymmetry",
       [&](Check& c) {
         Philox4x32 rng(seed, 11);
         for (int i = 0; i < 10; ++i) {
           const Policy a = random_policy(e3.env.shape(), rng);
           const Policy b = random_policy(e3.env.shape(), rng);
           c.near(win_rate_exact(e3.env, a, b) + win_rate_exact(e3.env, b, a), 1.0, 1e-12, "W(a,b)+W(b,a)");
         }
       }},
      {"optimal_policy_dominates",
       [&](Check& c) {
         Philox4x32 rng(seed, 12);
         for (const auto& t : envs) {
           const OptimalPolicy opt = optimal_policy_enumerate(t.env);
           c.near(regret_exact(t.env, opt.policy), 0.0, 1e-15, t.name + " regret of optimum");
           for (int i = 0; i < 20; ++i)
             c.expect(regret_exact(t.env, random_policy(t.env.shape(), rng, 3.0)) >= -1e-15, t.name + " negative regret");
         }
       }},
      {"kl_nonnegative_zero_at_reference",
       [&](Check& c) {
         Philox4x32 rng(seed, 13);
         for (const auto& t : envs) {
           c.near(kl_exact(t.env, t.env.ref_policy(), t.env.ref_policy()), 0.0, 1e-15, t.name + " KL(ref||ref)");
           for (int i = 0; i < 20; ++i)
             c.expect(kl_exact(t.env, random_policy(t.env.shape(), rng), t.env.ref_policy()) >= 0.0, t.name + " negative KL");
         }
       }},
      {"k3_pointwise_nonnegative",
       [&](Check& c) {
         Philox4x32 rng(seed, 14);
         const VocabShape shape({6});
         std::size_t bad = 0;
         for (int i = 0; i < 10'000; ++i) {
           const Policy p = random_policy(shape, rng, 2.0);
           const Policy q = random_policy(shape, rng, 2.0);
           const ResponseId y = sample_categorical(p.probs(0), rng.uniform());
           if (kl_k3(p, q, 0, std::span<const ResponseId>(&y, 1)) < 0.0) ++bad;
         }
         c.expect(bad == 0, std::to_string(bad) + " negative k3 draws");
       }},
      {"k3_unbiased_for_kl",
       [&](Check& c) {
         Philox4x32 rng(seed, 15);
         for (int i = 0; i < 20; ++i) {
           const VocabShape shape({7});
           const Policy p = random_policy(shape, rng, 1.5);
           const Policy q = random_policy(shape, rng, 1.5);
           double expect = 0.0;
           for (ResponseId y = 0; y < 7; ++y) expect += p.prob(0, y) * kl_k3(p, q, 0, std::span<const ResponseId>(&y, 1));
           double kl = 0.0;
           for (ResponseId y = 0; y < 7; ++y) kl += p.prob(0, y) * std::log(p.prob(0, y) / q.prob(0, y));
           c.near(expect, kl, 1e-10, "E_pi[k3] vs KL");
         }
       }},
      {"drpo_gradient_finite_difference",
       [&](Check& c) {
         for (std::uint64_t i = 0; i < 10; ++i) {
           const auto mode = i % 2 == 0 ? TrainDmMode::kExact : TrainDmMode::kMonteCarlo;
           const GradientFixture f = make_gradient_fixture(derive_seed(seed, {16, i}), mode);
           std::vector<std::size_t> batch(f.data.size());
           std::iota(batch.begin(), batch.end(), 0);
           const FrozenStep step = freeze_drpo_step(f.data, batch, f.policy, f.ref_hat, f.g_hat, f.cfg, i);
           const double err = surrogate_gradient_error(step, f.policy, f.ref_hat);
           c.expect(err < 1e-5, "relative error " + format_number(err));
         }
       }},
      {"dpo_gradient_finite_difference",
       [&](Check& c) {
         const GradientFixture f = make_gradient_fixture(derive_seed(seed, {17}), TrainDmMode::kExact);
         const LossAndGrad lg = dpo_loss_and_grad(f.data, f.policy, f.ref_hat, 0.3);
         const double h = 1e-5;
         double worst = 0.0, scale = 1e-8;
         for (std::size_t x = 0; x < f.policy.shape().prompts(); ++x)
           for (std::size_t y = 0; y < f.policy.shape().sizes()[x]; ++y) {
             auto up = f.policy.all_logits(), down = up;
             up[x][y] += h;
             down[x][y] -= h;
             const double fd = (dpo_loss_and_grad(f.data, Policy::from_logits(up), f.ref_hat, 0.3).loss -
                                dpo_loss_and_grad(f.data, Policy::from_logits(down), f.ref_hat, 0.3).loss) / (2 * h);
             worst = std::max(worst, std::abs(fd - lg.grad[x][y]));
             scale = std::max(scale, std::abs(lg.grad[x][y]));
           }
         c.expect(worst / scale < 1e-5, "relative error " + format_number(worst / scale));
       }},
      {"bt_fit_swap_invariant",
       [&](Check& c) {
         const auto data = sample_dataset(e2.env, 400, derive_seed(seed, {18}));
         const auto a = fit_reward_bt_mle(e2.env.shape(), data);
         const auto b = fit_reward_bt_mle(e2.env.shape(), augment_swapped(data));
         c.expect(a.reward.values() == b.reward.values(), "rewards differ after augmentation");
       }},
      {"sampling_thread_invariance",
       [&](Check& c) {
         const auto one = sample_dataset(e2.env, 2000, derive_seed(seed, {19}), 1);
         const auto four = sample_dataset(e2.env, 2000, derive_seed(seed, {19}), 4);
         c.expect(one == four, "datasets differ between 1 and 4 threads");
       }},
      {"clipping_bias_monotone",
       [&](Check& c) {
         double previous = -1.0;
         for (double cap : {1.0, 1.5, 2.0, 3.0, 5.0, 1e9}) {
           const double m = enumerate_expectation(e3.env, [&](const PreferenceTuple& t) {
             return is_term(t, e3.target, e3.env.ref_policy(), cap);
           });
           c.expect(m >= previous - 1e-15, "clip " + format_number(cap) + " decreased");
           previous = m;
         }
         c.near(previous, total_preference_exact(e3.env, e3.target), 1e-10, "loose clip limit");
       }},
      {"bt_representability_certificate",
       [&](Check& c) {
         c.expect(find_intransitive_cycle(e3.env.preference()).has_value(), "E3 has no cycle");
         c.expect(!find_intransitive_cycle(e1.env.preference()), "E1 has a cycle");
         c.expect(!find_intransitive_cycle(e2.env.preference()), "E2 has a cycle");
       }},
      {"json_round_trip",
       [&](Check& c) {
         for (const auto& t : envs) {
           const Json doc = to_json(t.env);
           const Environment back = environment_from_json(Json::parse(doc.dump()));
           c.expect(to_json(back) == doc, t.name + " environment");
           c.expect(policy_from_json(Json::parse(to_json(t.target).dump())).all_logits() == t.target.all_logits(), t.name + " policy");
         }
       }},
  };
}

}  // namespace

double surrogate_gradient_error(const FrozenStep& step, const Policy& live, const Policy& ref_hat,
                                double h) {
  const LossAndGrad lg = drpo_surrogate_loss_and_grad(step, live, ref_hat);
  double worst = 0.0;
  double scale = 1e-8;
  for (std::size_t x = 0; x < live.shape().prompts(); ++x) {
    for (std::size_t y = 0; y < live.shape().sizes()[x]; ++y) {
      auto up = live.all_logits();
      auto down = up;
      up[x][y] += h;
      down[x][y] -= h;
      const double fd = (drpo_surrogate_loss(step, Policy::from_logits(std::move(up)), ref_hat) -
                         drpo_surrogate_loss(step, Policy::from_logits(std::move(down)), ref_hat)) /
                        (2.0 * h);
      worst = std::max(worst, std::abs(fd - lg.grad[x][y]));
      scale = std::max(scale, std::abs(lg.grad[x][y]));
    }
  }
  return worst / scale;
}

GradientFixture make_gradient_fixture(std::uint64_t seed, TrainDmMode mode) {
  Philox4x32 rng(seed, 0);
  const std::size_t prompts = 1 + rng() % 3;
  std::vector<std::size_t> sizes;
  for (std::size_t x = 0; x < prompts; ++x) sizes.push_back(2 + rng() % 5);
  const VocabShape shape(sizes);

  PerPrompt<double> upper(prompts);
  for (std::size_t x = 0; x < prompts; ++x)
    for (std::size_t i = 0; i < sizes[x] * (sizes[x] - 1) / 2; ++i) upper[x].push_back(rng.uniform());
  PreferenceModel g = PreferenceModel::from_upper_triangle(shape, upper);

  std::vector<PreferenceTuple> tuples;
  const std::size_t n = 8 + rng() % 24;
  for (std::size_t i = 0; i < n; ++i) {
    const PromptId x = rng() % prompts;
    tuples.push_back({x, rng() % sizes[x], rng() % sizes[x], static_cast<int>(rng() % 2)});
  }
  GradientFixture f{random_policy(shape, rng), random_policy(shape, rng, 0.5), std::move(g),
                    augment_swapped(PreferenceDataset(std::move(tuples), seed, false)), TrainConfig{}};
  f.cfg.beta = 0.05 + 0.5 * rng.uniform();
  f.cfg.dm_mode = mode;
  f.cfg.mc_samples = 1 + rng() % 4;
  // Wide clip range so the frozen ratio sits in both regimes.
  f.cfg.clip_lo = 0.5;
  f.cfg.clip_hi = 1.5;
  return f;
}

std::vector<InvariantResult> run_selftest(std::uint64_t seed, Fault fault) {
  std::vector<InvariantResult> results;
  // Environments carry self-certificates computed with the estimator, so they
  // are built before any fault goes in.
  const auto envs = make_test_environments(seed);
  set_fault(fault);
  struct Reset {
    ~Reset() { set_fault(Fault::kNone); }
  } reset;
  for (auto& [name, fn] : invariants(seed, envs)) {
    InvariantResult r;
    r.name = name;
    const auto start = std::chrono::steady_clock::now();
    Check c;
    try {
      fn(c);
      r.passed = c.ok;
      r.detail = c.detail.str();
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back(std::move(r));
  }
  return results;
}

void write_junit(std::ostream& out, const std::vector<InvariantResult>& results) {
  // No timings: the report is an output that manifest replays must reproduce.
  std::size_t failures = 0;
  for (const auto& r : results) failures += r.passed ? 0 : 1;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<testsuites tests=\"" << results.size() << "\" failures=\"" << failures << "\">\n";
  out << "  <testsuite name=\"drpo-lab.selftest\" tests=\"" << results.size() << "\" failures=\""
      << failures << "\">\n";
  for (const auto& r : results) {
    out << "    <testcase classname=\"invariants\" name=\"" << xml_escape(r.name) << "\"";
    if (r.passed) {
      out << "/>\n";
    } else {
      out << ">\n      <failure message=\"" << xml_escape(r.detail) << "\"/>\n    </testcase>\n";
    }
  }
  out << "  </testsuite>\n</testsuites>\n";
}

}  // namespace drpo::cli
