// catrun: command-line surface for the cross-axis transformer library.
// Subcommands: train, eval, flops, bench, gradcheck, dump-rope.
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cat/attention.hpp"
#include "cat/checkpoint.hpp"
#include "cat/config_json.hpp"
#include "cat/data.hpp"
#include "cat/error.hpp"
#include "cat/flops.hpp"
#include "cat/gradcheck.hpp"
#include "cat/model.hpp"
#include "cat/rng.hpp"
#include "cat/rope.hpp"
#include "cat/train.hpp"

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cat::ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

cat::RunConfig load_config(const std::string& config_path, const std::vector<std::string>& sets,
                           const std::string& out_override) {
  cat::RunConfig rc = cat::parse_run_config(read_text_file(config_path));
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw cat::ConfigError("--set expects key=value, got \"" + kv + "\"");
    cat::apply_override(rc, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!out_override.empty()) rc.train.out_dir = out_override;
  rc.model.validate();
  rc.train.validate();
  return rc;
}

int run_train(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& out_override) {
  const cat::RunConfig rc = load_config(config_path, sets, out_override);
  const std::string snapshot = cat::run_config_to_json(rc);
  const cat::TrainResult r = cat::train<float>(rc.model, rc.train, snapshot);
  std::printf("steps            %" PRId64 "\n", r.steps);
  std::printf("final loss       %.6f\n", r.final_loss);
  std::printf("final train acc  %.4f\n", r.final_train_acc);
  std::printf("final val loss   %.6f\n", r.final_val_loss);
  std::printf("final val acc    %.4f\n", r.final_val_acc);
  std::printf("best val acc     %.4f\n", r.best_val_acc);
  std::printf("peak tensor MiB  %.1f\n",
              static_cast<double>(r.peak_tensor_bytes) / (1024.0 * 1024.0));
  std::printf("metrics          %s\n", r.metrics_path.c_str());
  std::printf("eval trace       %s\n", r.eval_path.c_str());
  std::printf("checkpoint       %s\n", r.checkpoint_path.c_str());
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data, std::int64_t limit,
             std::int64_t batch) {
  const auto ckpt = cat::load_checkpoint<float>(ckpt_path);
  cat::RunConfig rc = cat::parse_run_config(ckpt.config_json);
  cat::ParamMap<float> params;
  for (const auto& [name, shape] : cat::enumerate_params(rc.model))
    params.emplace(name, ckpt.at(name));

  cat::Dataset<float> set;
  if (data == "synthetic") {
    if (limit > 0) rc.train.eval_limit = limit;
    set = cat::load_dataset<float>(rc.model, rc.train, /*train_split=*/false);
  } else if (data.ends_with(".bin")) {
    set = cat::load_cifar10_file<float>(data, limit);
  } else {
    set = cat::load_cifar10_file<float>(data + "/test_batch.bin", limit);
  }
  const cat::EvalResult r = cat::evaluate(params, rc.model, set, batch);
  std::printf("samples  %" PRId64 "\n", set.size());
  std::printf("loss     %.6f\n", r.loss);
  std::printf("accuracy %.4f\n", r.accuracy);
  return 0;
}

void print_flop_report(const char* name, const cat::CatConfig& c) {
  const auto macs = cat::flops_model(c, cat::Convention::macs);
  const auto flops = cat::flops_model(c, cat::Convention::flops);
  std::printf("%s  (grid %" PRId64 "x%" PRId64 ", %" PRId64 " tokens, d=%" PRId64 ", L=%" PRId64
              ")\n",
              name, c.grid(), c.grid(), c.tokens(), c.hidden, c.layers);
  std::printf("  %-16s %20s %20s\n", "component", "macs", "flops");
  const auto row = [](const char* label, double m, double f) {
    std::printf("  %-16s %20.0f %20.0f\n", label, m, f);
  };
  row("patch embed", macs.embed, flops.embed);
  row("attn stage 1", macs.attn_stage1, flops.attn_stage1);
  row("attn stage 2", macs.attn_stage2, flops.attn_stage2);
  row("projections", macs.projections, flops.projections);
  row("ffn", macs.ffn, flops.ffn);
  row("norms", macs.norms, flops.norms);
  row("head", macs.head, flops.head);
  row("total", macs.total, flops.total);
  std::printf("  %-16s %20" PRId64 "\n", "params", macs.params);
  std::printf("  %-16s %20.2f %20.2f\n", "per-param", macs.fpp, flops.fpp);
  std::printf("  %-16s %20.0f\n", "weight macs", macs.weight_macs);
  std::printf("  %-16s %20.2f\n", "weight macs/p", macs.table_fpp);
}

int run_flops(const std::string& config_path, bool imagenet_preset,
              const std::vector<std::string>& sets) {
  if (imagenet_preset) {
    const cat::CatConfig catc = cat::imagenet_preset_cat();
    const cat::CatConfig vitc = cat::imagenet_preset_vit();
    print_flop_report("cross-axis", catc);
    std::printf("\n");
    print_flop_report("quadratic baseline", vitc);
    const auto a = cat::flops_model(catc, cat::Convention::macs);
    const auto b = cat::flops_model(vitc, cat::Convention::macs);
    std::printf("\ncross-axis/baseline weight-mac ratio: %.4f\n", a.weight_macs / b.weight_macs);
    std::printf("cross-axis/baseline total-mac ratio:  %.4f\n", a.total / b.total);
    std::printf(
        "note: the weight-mac book counts projection/ffn/embed/head weight products only;\n"
        "      the total book adds attention contractions and normalization arithmetic.\n");
    return 0;
  }
  if (config_path.empty())
    throw cat::ConfigError("flops needs --config or --imagenet-preset");
  const cat::RunConfig rc = load_config(config_path, sets, "");
  print_flop_report(rc.model.is_cat() ? "cross-axis" : "quadratic baseline", rc.model);
  return 0;
}

std::vector<std::int64_t> parse_sizes(const std::string& text) {
  std::vector<std::int64_t> sizes;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      sizes.push_back(std::stoll(tok));
    } catch (const std::exception&) {
      throw cat::ConfigError("--sizes expects a comma-separated integer list, got \"" + text +
                             "\"");
    }
    if (sizes.back() < 1) throw cat::ConfigError("--sizes entries must be >= 1");
  }
  return sizes;
}

double time_once(const std::function<void()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count();
}

double time_best_of(const std::function<void()>& fn, int reps = 3) {
  fn();  // warm up
  double best = 1e300;
  for (int i = 0; i < reps; ++i) best = std::min(best, time_once(fn));
  return best;
}

int run_bench(const std::string& sizes_text, std::int64_t d) {
  if (d < 1) throw cat::ConfigError("--d must be >= 1");
  const auto sizes = parse_sizes(sizes_text);

  std::printf("%6s %8s %16s %16s %12s %12s\n", "S", "tokens", "cross macs", "quad macs",
              "cross ms", "quad ms");
  std::vector<double> cross_secs, quad_secs, log_n;
  for (const std::int64_t S : sizes) {
    const std::int64_t N = S * S;
    const auto cross = cat::flops_cross_axis_attention(S, d);
    const auto quad = cat::flops_quadratic_attention(N, d, /*heads=*/1);

    cat::Rng rng(42);
    const auto fill = [&rng](const cat::Shape& shape) {
      std::int64_t n = 1;
      for (const auto dim : shape) n *= dim;
      std::vector<float> v(static_cast<std::size_t>(n));
      for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
      return cat::Tensor<float>(shape, std::move(v));
    };
    const auto q = fill({S, S, 1, d}), k = fill({S, S, 1, d}), v = fill({S, S, 1, d});
    const double tc = time_best_of([&] { cat::cross_axis_contract(q, k, v); });

    const auto qf = fill({N, d}), kf = fill({N, d}), vf = fill({N, d});
    const double tq = time_best_of([&] {
      const auto scores = cat::matmul(qf, cat::transpose(kf, 0, 1));
      cat::matmul(cat::softmax(scores), vf);
    });

    cross_secs.push_back(tc);
    quad_secs.push_back(tq);
    log_n.push_back(std::log(static_cast<double>(N)));
    std::printf("%6" PRId64 " %8" PRId64 " %16.0f %16.0f %12.3f %12.3f\n", S, N,
                cross.contraction(), quad.stage1 + quad.stage2, tc * 1e3, tq * 1e3);
  }

  const double cross_exp = cat::fit_scaling_exponent(cat::ScalingOp::cross_axis, sizes, d);
  const double quad_exp = cat::fit_scaling_exponent(cat::ScalingOp::quadratic, sizes, d);
  std::printf("\nanalytic exponent vs tokens: cross-axis %.3f, quadratic %.3f\n", cross_exp,
              quad_exp);
  auto logs = [](const std::vector<double>& xs) {
    std::vector<double> out;
    for (const double x : xs) out.push_back(std::log(x));
    return out;
  };
  if (sizes.size() >= 3) {
    const auto fc = cat::fit_line(log_n, logs(cross_secs));
    const auto fq = cat::fit_line(log_n, logs(quad_secs));
    std::printf("measured exponent vs tokens: cross-axis %.3f, quadratic %.3f (wall clock, "
                "indicative only)\n",
                fc.slope, fq.slope);
  }
  std::printf(
      "note: a cross-axis stage costs S^3*d = N^1.5*d multiply-accumulates. The cost is\n"
      "      linear in token count per attended row (each of the S rows spans S positions),\n"
      "      but the full contraction grows as N^1.5, as the fitted exponent shows.\n");
  return 0;
}

struct OpCheck {
  std::string name;
  double err;
};

int run_gradcheck(bool full_model) {
  using T = cat::Tensor<double>;
  cat::Rng rng(7);
  const auto fill = [&rng](const cat::Shape& shape) {
    std::int64_t n = 1;
    for (const auto dim : shape) n *= dim;
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return T(shape, std::move(v));
  };

  std::vector<OpCheck> checks;
  const auto scalarize = [](const T& t) { return cat::sum(t); };

  checks.push_back({"add", cat::grad_check_params(
                               [&](const std::map<std::string, T>& p) {
                                 return scalarize(cat::mul(cat::add(p.at("a"), p.at("b")), p.at("a")));
                               },
                               {{"a", fill({3, 4})}, {"b", fill({3, 4})}})
                               .max_rel_err});
  checks.push_back({"matmul", cat::grad_check_params(
                                  [&](const std::map<std::string, T>& p) {
                                    return scalarize(cat::matmul(p.at("a"), p.at("b")));
                                  },
                                  {{"a", fill({3, 4})}, {"b", fill({4, 2})}})
                                  .max_rel_err});
  checks.push_back({"gelu", cat::grad_check_params(
                                [&](const std::map<std::string, T>& p) {
                                  return scalarize(cat::gelu(p.at("x")));
                                },
                                {{"x", fill({3, 5})}})
                                .max_rel_err});
  checks.push_back({"softmax", cat::grad_check_params(
                                   [&](const std::map<std::string, T>& p) {
                                     return scalarize(cat::mul(cat::softmax(p.at("x")), p.at("x")));
                                   },
                                   {{"x", fill({4, 6})}})
                                   .max_rel_err});
  checks.push_back({"layer_norm", cat::grad_check_params(
                                      [&](const std::map<std::string, T>& p) {
                                        return scalarize(cat::layer_norm(p.at("x"), p.at("s"),
                                                                         p.at("b"), 1e-5));
                                      },
                                      {{"x", fill({4, 6})}, {"s", fill({6})}, {"b", fill({6})}})
                                      .max_rel_err});
  checks.push_back(
      {"group_norm_heads", cat::grad_check_params(
                               [&](const std::map<std::string, T>& p) {
                                 return scalarize(cat::group_norm_heads(p.at("x"), p.at("s"),
                                                                        p.at("b"), 1e-5));
                               },
                               {{"x", fill({2, 3, 2, 8})}, {"s", fill({2})}, {"b", fill({2})}})
                               .max_rel_err});
  {
    const auto tables = cat::build_tables<double>(cat::GridSpec{2, 2, 8});
    checks.push_back({"apply_rotary", cat::grad_check_params(
                                          [&](const std::map<std::string, T>& p) {
                                            return scalarize(cat::apply_rotary(p.at("x"), tables));
                                          },
                                          {{"x", fill({2, 2, 2, 8})}})
                                          .max_rel_err});
  }
  checks.push_back(
      {"cross_axis_contract",
       cat::grad_check_params(
           [&](const std::map<std::string, T>& p) {
             return scalarize(cat::cross_axis_contract(p.at("q"), p.at("k"), p.at("v")));
           },
           {{"q", fill({3, 3, 2, 4})}, {"k", fill({3, 3, 2, 4})}, {"v", fill({3, 3, 2, 4})}})
           .max_rel_err});
  checks.push_back({"cross_entropy", cat::grad_check_params(
                                         [&](const std::map<std::string, T>& p) {
                                           return cat::cross_entropy(p.at("x"), {1, 0, 2});
                                         },
                                         {{"x", fill({3, 4})}})
                                         .max_rel_err});

  if (full_model) {
    cat::CatConfig c;
    c.image_size = 16;
    c.patch_size = 8;
    c.channels = 1;
    c.hidden = 16;
    c.heads = 2;
    c.layers = 2;
    c.num_classes = 4;
    auto params = cat::init_params<double>(c, 3);
    const T image = fill({1, 16, 16});
    checks.push_back({"full model", cat::grad_check_params(
                                        [&](const std::map<std::string, T>& p) {
                                          auto logits = cat::model_forward(image, p, c);
                                          logits = cat::reshape(logits, {1, 4});
                                          return cat::cross_entropy(logits, {2});
                                        },
                                        params)
                                        .max_rel_err});
  }

  bool ok = true;
  for (const auto& c : checks) {
    const bool pass = c.err < 1e-4;
    ok = ok && pass;
    std::printf("%-20s max rel err %.3e  %s\n", c.name.c_str(), c.err, pass ? "ok" : "FAIL");
  }
  if (!ok) {
    std::fprintf(stderr, "gradient check failed\n");
    return 1;
  }
  return 0;
}

int run_dump_rope(std::int64_t rows, std::int64_t cols, std::int64_t head_dim,
                  const std::string& out) {
  const auto tables = cat::build_tables<double>(cat::GridSpec{rows, cols, head_dim});
  std::ofstream file(out, std::ios::binary);
  if (!file) throw cat::MissingFile("cannot open " + out + " for writing");
  file << "row,col,channel,cos,sin\n";
  char buf[128];
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c)
      for (std::int64_t ch = 0; ch < head_dim; ++ch) {
        const std::int64_t flat = (r * cols + c) * head_dim + ch;
        std::snprintf(buf, sizeof(buf), "%" PRId64 ",%" PRId64 ",%" PRId64 ",%.10g,%.10g\n", r, c,
                      ch, tables.cos.at(flat), tables.sin.at(flat));
        file << buf;
      }
  if (!file.flush()) throw cat::MissingFile("failed writing " + out);
  std::printf("wrote %s (%" PRId64 " rows)\n", out.c_str(), rows * cols * head_dim);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-axis transformer toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_override, ckpt_path, data_spec, sizes_text = "8,16,32,64";
  std::string rope_out;
  std::vector<std::string> sets;
  std::int64_t eval_limit = -1, eval_batch = 64, bench_d = 64;
  std::int64_t rope_rows = 0, rope_cols = 0, rope_head_dim = 0;
  bool imagenet_preset = false, full_model = false;

  CLI::App* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "JSON config file")->required();
  train->add_option("--set", sets, "override a config key: --set key=value (repeatable)");
  train->add_option("--out", out_override, "output directory (overrides out_dir)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", data_spec,
                   "dataset: 'synthetic', a CIFAR-10 directory, or a .bin batch file")
      ->required();
  eval->add_option("--limit", eval_limit, "cap the number of evaluated samples");
  eval->add_option("--batch", eval_batch, "evaluation batch size");

  CLI::App* flops = app.add_subcommand("flops", "print the analytic cost report for a config");
  flops->add_option("--config", config_path, "JSON config file");
  flops->add_flag("--imagenet-preset", imagenet_preset,
                  "report the large-model preset pair and their ratio");
  flops->add_option("--set", sets, "override a config key (repeatable)");

  CLI::App* bench = app.add_subcommand("bench", "time the contraction against a quadratic baseline");
  bench->add_option("--sizes", sizes_text, "comma-separated grid sides (default 8,16,32,64)");
  bench->add_option("--d", bench_d, "channel width (default 64)");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_flag("--full-model", full_model, "include the full toy-model check (slow)");

  CLI::App* dump_rope = app.add_subcommand("dump-rope", "write rotary cos/sin tables as CSV");
  dump_rope->add_option("--rows", rope_rows, "grid rows")->required();
  dump_rope->add_option("--cols", rope_cols, "grid cols")->required();
  dump_rope->add_option("--head-dim", rope_head_dim, "per-head channel count")->required();
  dump_rope->add_option("--out", rope_out, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help goes to stdout with exit 0
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (app.got_subcommand(train)) return run_train(config_path, sets, out_override);
    if (app.got_subcommand(eval)) return run_eval(ckpt_path, data_spec, eval_limit, eval_batch);
    if (app.got_subcommand(flops)) return run_flops(config_path, imagenet_preset, sets);
    if (app.got_subcommand(bench)) return run_bench(sizes_text, bench_d);
    if (app.got_subcommand(gradcheck)) return run_gradcheck(full_model);
    if (app.got_subcommand(dump_rope))
      return run_dump_rope(rope_rows, rope_cols, rope_head_dim, rope_out);
  } catch (const cat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const cat::TooFewSizes& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
