#include "protoscale/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "protoscale/augment.hpp"
#include "protoscale/scenegen.hpp"

namespace protoscale {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kBatchSlot = 0;
constexpr std::uint64_t kViewSlot = 1;

void freeze(const Network& net) {
  for (const auto& p : net.parameters()) {
    Tensor t = p.tensor;
    t.set_requires_grad(false);
  }
}

std::string csv_row(std::uint64_t step, const LossReport& r, double lr) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<unsigned long long>(step), r.total, r.semantic, r.instance, r.hierarchical, r.sparsity,
                r.diversity, lr);
  return buf;
}

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06llu.bin", static_cast<unsigned long long>(step));
  return dir / buf;
}

// Keeps the header and rows up to `step`; creates the file when absent.
void prepare_metrics(const std::filesystem::path& path, std::uint64_t step, bool resuming) {
  std::vector<std::string> kept;
  if (resuming) {
    std::ifstream in(path);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (header) {
        header = false;
        continue;
      }
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) <= step) kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kMetricsHeader << "\n";
  for (const auto& l : kept) out << l << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NonFiniteLossError(term, "value " + std::to_string(v));
}

}  // namespace

TrainState init_state(const RunConfig& cfg) {
  cfg.validate();
  Rng rng = Rng::derive(cfg.train.seed, {kInitStream});
  TrainState state;
  state.student = Network(cfg.model, rng);
  state.teacher = state.student.clone();
  freeze(state.teacher);
  const auto params = state.student.parameters().tensors();
  state.optimizer = OptimizerState(cfg.optimizer, params);
  return state;
}

void ema_update(const ParameterList& teacher, const ParameterList& student, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ParameterError("EMA momentum must lie in [0, 1]");
  if (teacher.size() != student.size()) throw ContractError("ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Tensor t = teacher[i].tensor;
    const Tensor& s = student[i].tensor;
    if (t.shape() != s.shape()) {
      throw ContractError("ema_update: " + teacher[i].name + " " + shape_str(t.shape()) + " vs " + shape_str(s.shape()));
    }
    auto td = t.mutable_data();
    auto sd = s.data();
    for (std::size_t k = 0; k < td.size(); ++k) td[k] = m * td[k] + (1.0 - m) * sd[k];
  }
}

double learning_rate_at(const RunConfig& cfg, std::uint64_t step) {
  const double lr = cfg.optimizer.learning_rate;
  const double lo = lr * cfg.train.lr_final_ratio;
  if (cfg.train.steps <= 1) return lr;
  const double t = static_cast<double>(std::min<std::uint64_t>(step, cfg.train.steps - 1)) /
                   static_cast<double>(cfg.train.steps - 1);
  return lo + 0.5 * (lr - lo) * (1.0 + std::cos(std::numbers::pi * t));
}

double ema_momentum_at(const RunConfig& cfg, std::uint64_t step) {
  const double m = cfg.train.ema_momentum;
  if (cfg.train.ema_schedule == EmaSchedule::Constant || cfg.train.steps == 0) return m;
  const double t = static_cast<double>(std::min<std::uint64_t>(step, cfg.train.steps)) /
                   static_cast<double>(cfg.train.steps);
  return 1.0 - (1.0 - m) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

std::vector<std::size_t> batch_indices(const RunConfig& cfg, std::uint64_t step, std::size_t n_images) {
  if (n_images == 0) throw ContractError("cannot draw a batch from an empty training set");
  Rng rng = Rng::derive(cfg.train.seed, {step, kBatchSlot});
  const std::size_t b = cfg.train.batch_size;
  std::vector<std::size_t> out;
  if (b > n_images) {
    for (std::size_t i = 0; i < b; ++i) out.push_back(static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(n_images) - 1)));
    return out;
  }
  std::vector<std::size_t> pool(n_images);
  for (std::size_t i = 0; i < n_images; ++i) pool[i] = i;
  for (std::size_t i = 0; i < b; ++i) {
    const auto j = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n_images) - 1));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

LossReport train_step(TrainState& state, const RunConfig& cfg, const std::vector<Image>& images) {
  if (images.empty()) throw ContractError("train_step needs a nonempty batch");
  std::vector<Image> teacher_views, student_views;
  for (std::size_t b = 0; b < images.size(); ++b) {
    const std::uint64_t seed = Rng::derive(cfg.train.seed, {state.step, kViewSlot, b}).next_u64();
    ViewBatch vb = make_view_batch(images[b], cfg.augment, seed);
    teacher_views.push_back(std::move(vb.teacher_view));
    for (auto& v : vb.student_views) student_views.push_back(std::move(v));
  }

  NetworkOutput teacher_out;
  {
    NoGradGuard no_grad;
    teacher_out = state.teacher.forward(stack_images(teacher_views));
  }
  const NetworkOutput student_out = state.student.forward(stack_images(student_views));
  LossReport report = total_loss(compute_loss_parts(student_out.scales, teacher_out.scales), cfg.loss);
  check_finite(report.semantic, "semantic loss");
  check_finite(report.instance, "instance consistency loss");
  check_finite(report.sparsity, "sparsity term");
  check_finite(report.diversity, "diversity term");
  check_finite(report.hierarchical, "hierarchical loss");
  check_finite(report.total, "total loss");

  const ParameterList named = state.student.parameters();
  std::vector<Tensor> params = named.tensors();
  for (auto& p : params) {
    auto g = p.mutable_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
  backward(report.total_tensor);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) {
        for (auto& p : params) p.zero_grad();
        throw NonFiniteLossError("gradient", named[i].name);
      }
    }
  }

  std::vector<std::vector<double>> snapshot;
  for (const auto& p : params) snapshot.emplace_back(p.data().begin(), p.data().end());
  const OptimizerState saved = state.optimizer;
  state.optimizer.config.learning_rate = learning_rate_at(cfg, state.step);
  optimizer_step(params, state.optimizer);
  for (auto& p : params) p.zero_grad();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].all_finite()) {
      for (std::size_t k = 0; k < params.size(); ++k) std::ranges::copy(snapshot[k], params[k].mutable_data().begin());
      state.optimizer = saved;
      throw NonFiniteLossError("parameter update", named[i].name);
    }
  }

  ema_update(state.teacher.parameters(), named, ema_momentum_at(cfg, state.step));
  ++state.step;
  report.total_tensor = Tensor();
  return report;
}

std::vector<Record> state_records(const TrainState& state, const RunConfig& cfg) {
  std::vector<Record> out;
  const ParameterList student = state.student.parameters();
  const ParameterList teacher = state.teacher.parameters();
  for (const auto& p : student) out.push_back({"student/" + p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  for (const auto& p : teacher) out.push_back({"teacher/" + p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  for (std::size_t i = 0; i < student.size(); ++i) {
    const Shape& shape = student[i].tensor.shape();
    out.push_back({"optimizer/first/" + student[i].name, shape, state.optimizer.first_moment[i]});
    out.push_back({"optimizer/second/" + student[i].name, shape, state.optimizer.second_moment[i]});
  }
  out.push_back({"optimizer/step", {1}, {static_cast<double>(state.optimizer.step)}});
  out.push_back({"train/step", {1}, {static_cast<double>(state.step)}});
  const std::string text = cfg.to_string();
  out.push_back({"config/text", {text.size()}, std::vector<double>(text.begin(), text.end())});
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const RunConfig& cfg) {
  save_records(path, state_records(state, cfg));
}

std::string checkpoint_config_text(const std::vector<Record>& records) {
  for (const auto& r : records) {
    if (r.name != "config/text") continue;
    std::string text;
    for (double v : r.values) text.push_back(static_cast<char>(static_cast<int>(v)));
    return text;
  }
  throw CorruptCheckpointError("checkpoint has no config record");
}

TrainState load_checkpoint(const std::filesystem::path& path, const RunConfig& cfg) {
  const auto records = load_records(path);
  std::map<std::string, const Record*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  auto fetch = [&](const std::string& name, const Shape& shape) -> const std::vector<double>& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError(path.string() + ": missing record " + name);
    if (it->second->shape != shape) {
      throw ConfigError(path.string() + ": record " + name + " has shape " + shape_str(it->second->shape) +
                        ", configuration expects " + shape_str(shape));
    }
    return it->second->values;
  };

  TrainState state = init_state(cfg);
  const ParameterList student = state.student.parameters();
  const ParameterList teacher = state.teacher.parameters();
  for (std::size_t i = 0; i < student.size(); ++i) {
    Tensor s = student[i].tensor;
    Tensor t = teacher[i].tensor;
    std::ranges::copy(fetch("student/" + student[i].name, s.shape()), s.mutable_data().begin());
    std::ranges::copy(fetch("teacher/" + teacher[i].name, t.shape()), t.mutable_data().begin());
    state.optimizer.first_moment[i] = fetch("optimizer/first/" + student[i].name, s.shape());
    state.optimizer.second_moment[i] = fetch("optimizer/second/" + student[i].name, s.shape());
  }
  state.optimizer.step = static_cast<std::uint64_t>(fetch("optimizer/step", {1})[0]);
  state.step = static_cast<std::uint64_t>(fetch("train/step", {1})[0]);
  return state;
}

TrainSummary train_loop(const RunConfig& cfg, const std::vector<Image>& images, const std::filesystem::path& out_dir,
                        const std::optional<std::filesystem::path>& resume, const LogFn& log) {
  cfg.validate();
  for (const auto& img : images) {
    if (img.channels != 3 || img.height != cfg.model.encoder.input_size || img.width != cfg.model.encoder.input_size) {
      throw ConfigError("dataset image size does not match model.input_size = " +
                        std::to_string(cfg.model.encoder.input_size));
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  {
    const auto path = out_dir / "config.resolved";
    std::ofstream out(path, std::ios::trunc);
    out << cfg.to_string();
    if (!out) throw IoError("write failed for " + path.string());
  }

  TrainState state = resume ? load_checkpoint(*resume, cfg) : init_state(cfg);
  const auto metrics_path = out_dir / "metrics.csv";
  prepare_metrics(metrics_path, state.step, resume.has_value());

  TrainSummary summary;
  summary.first_step = state.step;
  summary.latest = out_dir / "latest.bin";
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw IoError("cannot open " + metrics_path.string());

  if (state.step == 0 && cfg.train.steps == 0) save_checkpoint(checkpoint_name(out_dir, 0), state, cfg);
  std::vector<Image> batch;
  while (state.step < cfg.train.steps) {
    batch.clear();
    for (auto i : batch_indices(cfg, state.step, images.size())) batch.push_back(images[i]);
    const double lr = learning_rate_at(cfg, state.step);
    const LossReport r = train_step(state, cfg, batch);
    summary.totals.push_back(r.total);
    metrics << csv_row(state.step, r, lr) << "\n";
    metrics.flush();
    if (!metrics) throw IoError("write failed for " + metrics_path.string());
    if (state.step % cfg.train.checkpoint_every == 0 || state.step == cfg.train.steps) {
      save_checkpoint(checkpoint_name(out_dir, state.step), state, cfg);
      save_checkpoint(summary.latest, state, cfg);
    }
    if (log && (state.step % cfg.train.log_every == 0 || state.step == cfg.train.steps)) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "step %llu/%zu total %.5f sem %.5f inst %.5f hier %.5f lr %.2e",
                    static_cast<unsigned long long>(state.step), cfg.train.steps, r.total, r.semantic, r.instance,
                    r.hierarchical, lr);
      log(buf);
    }
  }
  save_checkpoint(summary.latest, state, cfg);
  summary.final_step = state.step;
  return summary;
}

TrainSummary train_loop(const RunConfig& cfg, const std::filesystem::path& data_dir,
                        const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& resume,
                        const LogFn& log) {
  const Manifest manifest = read_manifest(data_dir);
  std::vector<Image> images;
  for (auto i : manifest.split_indices("train")) images.push_back(read_ppm(data_dir / manifest.entries[i].image));
  if (images.empty() && cfg.train.steps > 0) throw IoError(data_dir.string() + ": dataset has no training scenes");
  return train_loop(cfg, images, out_dir, resume, log);
}

}  // namespace protoscale
