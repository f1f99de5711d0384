// Acceptance gate for the cross-axis transformer reference implementation.
// Usage: cataccept [N]   (N in 1..9; no argument runs every criterion)
// Prints exactly one "criterion N: PASS/FAIL/SKIP — detail" line per criterion
// and exits nonzero if any executed criterion fails.
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cat/attention.hpp"
#include "cat/checkpoint.hpp"
#include "cat/data.hpp"
#include "cat/flops.hpp"
#include "cat/gradcheck.hpp"
#include "cat/model.hpp"
#include "cat/rng.hpp"
#include "cat/rope.hpp"
#include "cat/tensor.hpp"
#include "cat/train.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using cat::Shape;
using cat::Tensor;

namespace {

struct Outcome {
  enum class State { pass, fail, skip };
  State state = State::fail;
  std::string detail;
};

Outcome pass(std::string detail) { return {Outcome::State::pass, std::move(detail)}; }
Outcome fail(std::string detail) { return {Outcome::State::fail, std::move(detail)}; }

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cat_accept_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

// ---------------------------------------------------------------- criterion 1
// The batched two-stage contraction must match a direct five-index summation
// oracle: 100 random f32 cases per (grid, width, heads) combination drawn from
// S in {1,2,3,4}, d in {4,8}, H in {1,2}, max abs error < 1e-5, under 10 s.
Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::int64_t cases = 0;
  cat::Rng rng(1);
  for (const std::int64_t S : {1, 2, 3, 4})
    for (const std::int64_t d : {4, 8})
      for (const std::int64_t H : {1, 2}) {
        const std::int64_t dh = d / H;
        for (int i = 0; i < 100; ++i) {
          const auto q = oracle::random_tensor<float>({S, S, H, dh}, rng);
          const auto k = oracle::random_tensor<float>({S, S, H, dh}, rng);
          const auto v = oracle::random_tensor<float>({S, S, H, dh}, rng);
          const auto got = cat::cross_axis_contract(q, k, v);
          const auto want = oracle::cross_axis_naive(q, k, v);
          worst = std::max(worst, static_cast<double>(oracle::max_abs_diff(got, want)));
          ++cases;
        }
      }
  const double elapsed = seconds_since(t0);
  const auto detail = fmt("%" PRId64 " cases, max abs err %.2e (limit 1e-5), %.1f s (limit 10)",
                          cases, worst, elapsed);
  return (worst < 1e-5 && elapsed < 10.0) ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------- criterion 2
// Central finite differences in f64 against the tape's gradients, for every
// differentiable op and for the full toy model, max relative error < 1e-4,
// under 2 minutes.
Outcome criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  using T = Tensor<double>;
  using Params = std::map<std::string, T>;
  cat::Rng rng(2);
  const auto rt = [&rng](const Shape& shape) {
    return oracle::random_tensor<double>(shape, rng);
  };

  std::vector<std::pair<std::string, double>> errs;
  const auto check = [&errs](const std::string& name, auto&& f, const Params& params) {
    errs.emplace_back(name, cat::grad_check_params(f, params).max_rel_err);
  };

  check("add", [](const Params& p) { return cat::sum(cat::mul(cat::add(p.at("a"), p.at("b")), p.at("a"))); },
        {{"a", rt({3, 4})}, {"b", rt({4})}});  // suffix broadcast included
  check("sub", [](const Params& p) { return cat::sum(cat::mul(cat::sub(p.at("a"), p.at("b")), p.at("a"))); },
        {{"a", rt({3, 4})}, {"b", rt({3, 4})}});
  check("mul", [](const Params& p) { return cat::sum(cat::mul(p.at("a"), p.at("b"))); },
        {{"a", rt({2, 3, 4})}, {"b", rt({4})}});
  check("scale", [](const Params& p) { return cat::sum(cat::scale(p.at("a"), 2.5)); },
        {{"a", rt({5})}});
  check("add_scalar", [](const Params& p) { return cat::sum(cat::mul(cat::add_scalar(p.at("a"), 1.5), p.at("a"))); },
        {{"a", rt({5})}});
  check("reshape", [](const Params& p) { return cat::sum(cat::mul(cat::reshape(p.at("a"), {6, 2}), p.at("b"))); },
        {{"a", rt({3, 4})}, {"b", rt({6, 2})}});
  check("permute", [](const Params& p) { return cat::sum(cat::mul(cat::permute(p.at("a"), {2, 0, 1}), p.at("b"))); },
        {{"a", rt({2, 3, 4})}, {"b", rt({4, 2, 3})}});
  check("transpose", [](const Params& p) { return cat::sum(cat::mul(cat::transpose(p.at("a"), 0, 1), p.at("b"))); },
        {{"a", rt({3, 4})}, {"b", rt({4, 3})}});
  check("slice_last", [](const Params& p) { return cat::sum(cat::mul(cat::slice_last(p.at("a"), 1, 2), p.at("b"))); },
        {{"a", rt({3, 4})}, {"b", rt({3, 2})}});
  check("stack_rows", [](const Params& p) {
          return cat::sum(
              cat::mul(cat::stack_rows(std::vector<T>{p.at("a"), p.at("b")}), p.at("c")));
        },
        {{"a", rt({4})}, {"b", rt({4})}, {"c", rt({2, 4})}});
  check("matmul", [](const Params& p) { return cat::sum(cat::matmul(p.at("a"), p.at("b"))); },
        {{"a", rt({2, 3, 4})}, {"b", rt({2, 4, 2})}});  // batched
  check("sum", [](const Params& p) { return cat::sum(p.at("a")); }, {{"a", rt({3, 3})}});
  check("mean_leading", [](const Params& p) { return cat::sum(cat::mul(cat::mean_leading(p.at("a")), p.at("b"))); },
        {{"a", rt({5, 3})}, {"b", rt({3})}});
  check("linear", [](const Params& p) { return cat::sum(cat::linear(p.at("x"), p.at("w"), p.at("b"))); },
        {{"x", rt({3, 4})}, {"w", rt({4, 2})}, {"b", rt({2})}});
  check("gelu", [](const Params& p) { return cat::sum(cat::gelu(p.at("x"))); }, {{"x", rt({3, 5})}});
  check("softmax", [](const Params& p) { return cat::sum(cat::mul(cat::softmax(p.at("x")), p.at("x"))); },
        {{"x", rt({4, 6})}});
  check("layer_norm", [](const Params& p) {
          return cat::sum(cat::layer_norm(p.at("x"), p.at("s"), p.at("b"), 1e-5));
        },
        {{"x", rt({4, 6})}, {"s", rt({6})}, {"b", rt({6})}});
  check("group_norm_heads", [](const Params& p) {
          return cat::sum(cat::group_norm_heads(p.at("x"), p.at("s"), p.at("b"), 1e-5));
        },
        {{"x", rt({2, 3, 2, 8})}, {"s", rt({2})}, {"b", rt({2})}});
  check("cross_entropy", [](const Params& p) { return cat::cross_entropy(p.at("x"), {1, 0, 2}); },
        {{"x", rt({3, 4})}});

  const auto tables = cat::build_tables<double>(cat::GridSpec{3, 3, 8});
  check("apply_rotary", [&tables](const Params& p) {
          return cat::sum(cat::mul(cat::apply_rotary(p.at("x"), tables), p.at("y")));
        },
        {{"x", rt({3, 3, 2, 8})}, {"y", rt({3, 3, 2, 8})}});
  check("qkv_project", [](const Params& p) {
          auto [q, k, v] = cat::qkv_project(p.at("x"), p.at("w"), p.at("b"), 2);
          return cat::add(cat::sum(cat::mul(q, q)),
                          cat::add(cat::sum(cat::mul(k, k)), cat::sum(cat::mul(v, v))));
        },
        {{"x", rt({2, 2, 8})}, {"w", rt({8, 24})}, {"b", rt({24})}});
  check("gamma_scale_keys", [](const Params& p) {
          const auto gammas = cat::gamma_values<double>(cat::GammaMode::retnet, 2);
          return cat::sum(cat::mul(cat::gamma_scale_keys(p.at("k"), gammas), p.at("y")));
        },
        {{"k", rt({2, 2, 2, 4})}, {"y", rt({2, 2, 2, 4})}});
  check("cross_axis_contract", [](const Params& p) {
          return cat::sum(cat::mul(cat::cross_axis_contract(p.at("q"), p.at("k"), p.at("v")), p.at("y")));
        },
        {{"q", rt({3, 3, 2, 4})}, {"k", rt({3, 3, 2, 4})}, {"v", rt({3, 3, 2, 4})},
         {"y", rt({3, 3, 2, 4})}});

  {
    const auto tab = cat::build_tables<double>(cat::GridSpec{2, 2, 4});
    check("cross_axis_attention", [&](const Params& p) {
            cat::CrossAxisParams<double> cp{p.at("w_qkv"), p.at("b_qkv"),
                                            cat::gamma_values<double>(cat::GammaMode::retnet, 2),
                                            p.at("gn_scale"), p.at("gn_shift"),
                                            p.at("w_out"), p.at("b_out")};
            return cat::sum(cat::mul(cat::cross_axis_attention(p.at("x"), cp, &tab), p.at("y")));
          },
          {{"x", rt({2, 2, 8})}, {"y", rt({2, 2, 8})}, {"w_qkv", rt({8, 24})},
           {"b_qkv", rt({24})}, {"gn_scale", rt({2})}, {"gn_shift", rt({2})},
           {"w_out", rt({8, 8})}, {"b_out", rt({8})}});
  }
  check("softmax_attention", [](const Params& p) {
          return cat::sum(cat::mul(cat::softmax_attention(p.at("x"), p.at("w_qkv"), p.at("b_qkv"),
                                                          p.at("w_out"), p.at("b_out"), 2),
                                   p.at("y")));
        },
        {{"x", rt({4, 8})}, {"y", rt({4, 8})}, {"w_qkv", rt({8, 24})}, {"b_qkv", rt({24})},
         {"w_out", rt({8, 8})}, {"b_out", rt({8})}});
  {
    // the image is data, not a parameter: patch extraction deliberately
    // detaches it, so the check differentiates the kernel and bias only
    const T img = rt({1, 4, 4});
    check("patch_embed", [&img](const Params& p) {
            return cat::sum(cat::mul(cat::patch_embed(img, p.at("k"), p.at("b"), 2), p.at("y")));
          },
          {{"k", rt({4, 3})}, {"b", rt({3})}, {"y", rt({2, 2, 3})}});
  }

  // the full toy model: every block wired together, loss through cross_entropy
  {
    cat::CatConfig c;
    c.image_size = 16;
    c.patch_size = 8;
    c.channels = 1;
    c.hidden = 16;
    c.heads = 2;
    c.layers = 2;
    c.num_classes = 4;
    auto params = cat::init_params<double>(c, 3);
    const T image = rt({1, 16, 16});
    check("full toy model", [&](const Params& p) {
            auto logits = cat::reshape(cat::model_forward(image, p, c), {1, 4});
            return cat::cross_entropy(logits, {2});
          },
          params);
  }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : errs)
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  const double elapsed = seconds_since(t0);
  const auto detail = fmt("%zu ops, worst %.2e at %s (limit 1e-4), %.1f s (limit 120)",
                          errs.size(), worst, worst_name.c_str(), elapsed);
  return (worst < 1e-4 && elapsed < 120.0) ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------- criterion 3
// Rotary invariants: per-(position, head) vector norms preserved to 1e-5
// relative; query-key products depend only on the coordinate delta,
// exhaustively on an 8x8 grid; first-channel angles cover [-pi, pi) exactly
// for square grids of side 2, 7, 28, and 64. Under 10 s.
Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  cat::Rng rng(3);

  // norm preservation
  double norm_err = 0.0;
  {
    const auto tables = cat::build_tables<double>(cat::GridSpec{8, 8, 8});
    const auto x = oracle::random_tensor<double>({8, 8, 2, 8}, rng);
    const auto y = cat::apply_rotary(x, tables);
    for (std::int64_t pos = 0; pos < 64; ++pos)
      for (std::int64_t h = 0; h < 2; ++h) {
        double nx = 0, ny = 0;
        for (std::int64_t e = 0; e < 8; ++e) {
          nx += x.at((pos * 2 + h) * 8 + e) * x.at((pos * 2 + h) * 8 + e);
          ny += y.at((pos * 2 + h) * 8 + e) * y.at((pos * 2 + h) * 8 + e);
        }
        norm_err = std::max(norm_err, std::abs(std::sqrt(ny) - std::sqrt(nx)) / std::sqrt(nx));
      }
  }

  // relative-shift property: rotate one fixed q and one fixed k at every
  // position; the q.k product must agree across every pair with equal delta
  double shift_err = 0.0;
  {
    const std::int64_t G = 8, dh = 8;
    const auto tables = cat::build_tables<double>(cat::GridSpec{G, G, dh});
    const auto q0 = oracle::random_tensor<double>({dh}, rng);
    const auto k0 = oracle::random_tensor<double>({dh}, rng);
    std::vector<double> tile_q, tile_k;
    for (std::int64_t p = 0; p < G * G; ++p)
      for (std::int64_t e = 0; e < dh; ++e) {
        tile_q.push_back(q0.at(e));
        tile_k.push_back(k0.at(e));
      }
    const auto rq = cat::apply_rotary(Tensor<double>({G, G, 1, dh}, std::move(tile_q)), tables);
    const auto rk = cat::apply_rotary(Tensor<double>({G, G, 1, dh}, std::move(tile_k)), tables);
    const auto dot = [&](std::int64_t pa, std::int64_t pb) {
      double s = 0;
      for (std::int64_t e = 0; e < dh; ++e) s += rq.at(pa * dh + e) * rk.at(pb * dh + e);
      return s;
    };
    std::map<std::pair<std::int64_t, std::int64_t>, double> seen;
    for (std::int64_t r1 = 0; r1 < G; ++r1)
      for (std::int64_t c1 = 0; c1 < G; ++c1)
        for (std::int64_t r2 = 0; r2 < G; ++r2)
          for (std::int64_t c2 = 0; c2 < G; ++c2) {
            const double val = dot(r1 * G + c1, r2 * G + c2);
            const auto key = std::make_pair(r2 - r1, c2 - c1);
            const auto it = seen.find(key);
            if (it == seen.end())
              seen.emplace(key, val);
            else
              shift_err = std::max(shift_err, std::abs(val - it->second));
          }
  }

  // angle range: the unit-frequency channels must start exactly at -pi and
  // stay strictly below +pi
  bool range_ok = true;
  for (const std::int64_t s : {2, 7, 28, 64}) {
    const auto angles = cat::axial_angles<double>(cat::GridSpec{s, s, 4});
    for (const std::int64_t channel : {std::int64_t{0}, std::int64_t{1}}) {
      double lo = 1e300, hi = -1e300;
      for (std::int64_t p = 0; p < s * s; ++p) {
        lo = std::min(lo, angles.at(p * 4 + channel));
        hi = std::max(hi, angles.at(p * 4 + channel));
      }
      range_ok = range_ok && lo == -cat::kPi && hi < cat::kPi;
    }
  }

  const double elapsed = seconds_since(t0);
  const auto detail =
      fmt("norm rel err %.2e, shift err %.2e (limits 1e-5), [-pi,pi) %s for sides 2/7/28/64, "
          "%.1f s (limit 10)",
          norm_err, shift_err, range_ok ? "exact" : "VIOLATED", elapsed);
  return (norm_err < 1e-5 && shift_err < 1e-5 && range_ok && elapsed < 10.0) ? pass(detail)
                                                                             : fail(detail);
}

// ---------------------------------------------------------------- criterion 4
// Analytic cost exponents vs token count over S in {8,16,32,64}: 1.500 for the
// cross-axis contraction, 2.000 for the quadratic baseline, both +/- 0.005.
Outcome criterion4() {
  const std::vector<std::int64_t> sizes = {8, 16, 32, 64};
  const double cross = cat::fit_scaling_exponent(cat::ScalingOp::cross_axis, sizes, 64);
  const double quad = cat::fit_scaling_exponent(cat::ScalingOp::quadratic, sizes, 64);
  const bool ok = std::abs(cross - 1.5) <= 0.005 && std::abs(quad - 2.0) <= 0.005;
  std::printf(
      "  discrepancy note: a linear-in-token-count reading of the contraction cost holds only\n"
      "  per attended axis (each row's pass is linear in its span); the full two-stage\n"
      "  contraction measures exponent %.3f, i.e. N^1.5, against the quadratic baseline's "
      "%.3f.\n",
      cross, quad);
  const auto detail =
      fmt("fitted exponents: cross-axis %.4f (want 1.500+-0.005), quadratic %.4f (want "
          "2.000+-0.005)",
          cross, quad);
  return ok ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------- criterion 5
// Large-preset cost ratio: weight-product multiply-accumulates of the
// cross-axis model over the quadratic baseline in [0.60, 0.73], and the
// baseline's weight-macs-per-parameter within 5% of 784.
Outcome criterion5() {
  const auto a = cat::flops_model(cat::imagenet_preset_cat(), cat::Convention::macs);
  const auto b = cat::flops_model(cat::imagenet_preset_vit(), cat::Convention::macs);
  const double ratio = a.weight_macs / b.weight_macs;
  const double fpp = b.table_fpp;
  const bool ok = ratio >= 0.60 && ratio <= 0.73 && std::abs(fpp - 784.0) / 784.0 <= 0.05;
  const auto detail = fmt(
      "weight-mac ratio %.4f (want [0.60, 0.73]), baseline weight-macs/param %.2f (want "
      "784 +- 5%%); absolute totals are not asserted — counting convention and input size "
      "are free parameters",
      ratio, fpp);
  return ok ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------- criterion 6
// Desk-scale learnability substitutes for the full-scale accuracy table:
// (a) a 500-step synthetic 10-class run must halve its smoothed loss within
//     200 steps and reach train-set accuracy >= 0.9 by step 500;
// (b) when CIFAR-10 binaries are available, a 5000-image/5-epoch run of the
//     d=64, L=3, p=8 model must reach validation accuracy >= 0.20.
// Combined runtime under 30 minutes.
std::string find_cifar_dir() {
  std::vector<std::string> candidates;
  if (const char* env = std::getenv("CIFAR10_DIR")) candidates.push_back(env);
  candidates.push_back("data/cifar-10-batches-bin");
  candidates.push_back("../data/cifar-10-batches-bin");
  for (const auto& dir : candidates)
    if (fs::exists(fs::path(dir) / "data_batch_1.bin") &&
        fs::exists(fs::path(dir) / "test_batch.bin"))
      return dir;
  return "";
}

Outcome criterion6() {
  const auto t0 = std::chrono::steady_clock::now();

  // (a) synthetic gate
  cat::CatConfig mc;
  mc.image_size = 16;
  mc.patch_size = 8;
  mc.channels = 3;
  mc.hidden = 32;
  mc.heads = 4;
  mc.layers = 2;
  mc.num_classes = 10;
  cat::TrainConfig tc;
  tc.epochs = 32;
  tc.max_steps = 500;
  tc.batch_size = 32;
  tc.base_lr = 3e-4;
  tc.weight_decay = 0.01;
  tc.seed = 7;
  tc.synthetic_count = 512;
  tc.out_dir = fresh_dir("c6_synthetic");
  const auto result = cat::train<float>(mc, tc, "{}");

  // smoothed loss = 20-step trailing means from the metrics trace
  std::vector<double> losses;
  {
    std::istringstream in(read_file(result.metrics_path));
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const auto a = line.find(','), b = line.find(',', a + 1), c = line.find(',', b + 1);
      losses.push_back(std::stod(line.substr(b + 1, c - b - 1)));
    }
  }
  const auto window_mean = [&losses](std::size_t end) {
    double s = 0;
    for (std::size_t i = end - 20; i < end; ++i) s += losses[i];
    return s / 20.0;
  };
  const double initial = window_mean(20);
  const double at200 = window_mean(200);

  const auto train_set = cat::synthetic_dataset<float>(10, 16, 8, 3, tc.seed, 512);
  const auto ckpt = cat::load_checkpoint<float>(result.checkpoint_path);
  cat::ParamMap<float> params;
  for (const auto& [name, shape] : cat::enumerate_params(mc)) params.emplace(name, ckpt.at(name));
  const double train_acc = cat::evaluate(params, mc, train_set, 64).accuracy;

  const bool a_ok = losses.size() == 500 && at200 < 0.5 * initial && train_acc >= 0.9;
  std::string detail = fmt(
      "synthetic: smoothed loss %.3f -> %.3f by step 200 (need < %.3f), train-set acc %.3f "
      "at step 500 (need >= 0.9)",
      initial, at200, 0.5 * initial, train_acc);

  // (b) CIFAR-10 gate, honest skip when the data is not on disk
  bool b_ok = true;
  const std::string cifar = find_cifar_dir();
  if (cifar.empty()) {
    detail += "; cifar: SKIP — no CIFAR-10 binaries found (set CIFAR10_DIR or place "
              "data/cifar-10-batches-bin)";
  } else {
    cat::CatConfig cm;
    cm.image_size = 32;
    cm.patch_size = 8;
    cm.channels = 3;
    cm.hidden = 64;
    cm.heads = 8;
    cm.layers = 3;
    cm.num_classes = 10;
    cat::TrainConfig ct;
    ct.epochs = 5;
    ct.batch_size = 32;
    ct.base_lr = 3e-4;
    ct.weight_decay = 0.01;
    ct.seed = 1;
    ct.dataset = "cifar10";
    ct.data_dir = cifar;
    ct.train_limit = 5000;
    ct.eval_limit = 2000;
    ct.out_dir = fresh_dir("c6_cifar");
    const auto r = cat::train<float>(cm, ct, "{}");
    b_ok = r.final_val_acc >= 0.20;
    detail += fmt("; cifar: val acc %.3f over %d held-out samples (need >= 0.20)",
                  r.final_val_acc, 2000);
  }

  const double elapsed = seconds_since(t0);
  detail += fmt("; %.0f s (limit 1800)", elapsed);
  return (a_ok && b_ok && elapsed < 1800.0) ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------- criterion 7
// Imprint schedule unit values, exact arithmetic: constant -> 1, forward decay
// -> 1 - l/L, backward decay -> l/L (and off -> 0).
Outcome criterion7() {
  bool ok = true;
  for (const std::int64_t L : {1, 2, 3, 5, 7})
    for (std::int64_t l = 0; l < L; ++l) {
      const double frac = static_cast<double>(l) / static_cast<double>(L);
      ok = ok && cat::imprint_schedule(l, L, cat::ImprintMode::constant) == 1.0;
      ok = ok && cat::imprint_schedule(l, L, cat::ImprintMode::forward_decay) == 1.0 - frac;
      ok = ok && cat::imprint_schedule(l, L, cat::ImprintMode::backward_decay) == frac;
      ok = ok && cat::imprint_schedule(l, L, cat::ImprintMode::off) == 0.0;
    }
  const auto detail = std::string("constant=1, forward=1-l/L, backward=l/L, off=0, ") +
                      (ok ? "all exact over L in {1,2,3,5,7}" : "MISMATCH");
  return ok ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------- criterion 8
// Checkpoint round-trip is byte-identical and two identically seeded runs
// produce byte-identical metrics and eval traces.
Outcome criterion8() {
  cat::CatConfig mc;
  mc.image_size = 16;
  mc.patch_size = 8;
  mc.channels = 1;
  mc.hidden = 16;
  mc.heads = 2;
  mc.layers = 2;
  mc.num_classes = 4;
  cat::TrainConfig tc;
  tc.epochs = 4;
  tc.max_steps = 8;
  tc.batch_size = 8;
  tc.base_lr = 1e-3;
  tc.seed = 21;
  tc.synthetic_count = 32;
  tc.eval_every = 4;

  auto ta = tc;
  ta.out_dir = fresh_dir("c8_a");
  auto tb = tc;
  tb.out_dir = fresh_dir("c8_b");
  const auto ra = cat::train<float>(mc, ta, "{\"run\": \"a\"}");
  const auto rb = cat::train<float>(mc, tb, "{\"run\": \"a\"}");

  const bool metrics_same = read_file(ra.metrics_path) == read_file(rb.metrics_path);
  const bool eval_same = read_file(ra.eval_path) == read_file(rb.eval_path);

  const auto loaded = cat::load_checkpoint<float>(ra.checkpoint_path);
  const std::string resaved = ta.out_dir + "/resaved.ckpt";
  cat::save_checkpoint(resaved, loaded);
  const bool ckpt_same = read_file(ra.checkpoint_path) == read_file(resaved);

  const auto detail = fmt("metrics %s, eval trace %s, save->load->save %s",
                          metrics_same ? "byte-identical" : "DIFFER",
                          eval_same ? "byte-identical" : "DIFFER",
                          ckpt_same ? "byte-identical" : "DIFFER");
  return (metrics_same && eval_same && ckpt_same) ? pass(detail) : fail(detail);
}

// ---------------------------------------------------------------- criterion 9
// Group normalization emits, per (position, head) and before the affine pair,
// mean |mu| < 1e-6 and |sigma^2 - 1| < 1e-4 on random inputs.
Outcome criterion9() {
  cat::Rng rng(9);
  const std::int64_t G = 4, H = 4, dh = 16;
  const auto x = oracle::random_tensor<double>({G, G, H, dh}, rng);
  const auto y = cat::group_norm_heads(x, Tensor<double>::full({H}, 1.0),
                                       Tensor<double>::zeros({H}), 1e-5);
  double worst_mean = 0, worst_var = 0;
  for (std::int64_t p = 0; p < G * G; ++p)
    for (std::int64_t h = 0; h < H; ++h) {
      double mean = 0, var = 0;
      for (std::int64_t e = 0; e < dh; ++e) mean += y.at((p * H + h) * dh + e);
      mean /= static_cast<double>(dh);
      for (std::int64_t e = 0; e < dh; ++e) {
        const double d = y.at((p * H + h) * dh + e) - mean;
        var += d * d;
      }
      var /= static_cast<double>(dh);
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_var = std::max(worst_var, std::abs(var - 1.0));
    }
  const auto detail = fmt("per (position, head): max |mean| %.2e (limit 1e-6), max |var-1| "
                          "%.2e (limit 1e-4)",
                          worst_mean, worst_var);
  return (worst_mean < 1e-6 && worst_var < 1e-4) ? pass(detail) : fail(detail);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria = {
      criterion1, criterion2, criterion3, criterion4, criterion5,
      criterion6, criterion7, criterion8, criterion9};

  int only = 0;
  if (argc > 1) {
    only = std::atoi(argv[1]);
    if (only < 1 || only > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "usage: %s [1..%zu]\n", argv[0], criteria.size());
      return 2;
    }
  }

  bool all_ok = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<std::size_t>(only) != i + 1) continue;
    Outcome outcome;
    try {
      outcome = criteria[i]();
    } catch (const std::exception& e) {
      outcome = fail(std::string("unexpected exception: ") + e.what());
    }
    const char* label = outcome.state == Outcome::State::pass   ? "PASS"
                        : outcome.state == Outcome::State::skip ? "SKIP"
                                                                : "FAIL";
    std::printf("criterion %zu: %s — %s\n", i + 1, label, outcome.detail.c_str());
    all_ok = all_ok && outcome.state != Outcome::State::fail;
  }
  return all_ok ? 0 : 1;
}
