#include "morphcf/mlp_denoiser.hpp"

#include <bit>
#include <cmath>
#include <fstream>

namespace morphcf {

static_assert(std::endian::native == std::endian::little, "parameter payload assumes a little-endian host");

namespace {

Eigen::ArrayXXd silu(const Eigen::ArrayXXd& a) { return a / (1.0 + (-a).exp()); }

Eigen::ArrayXXd silu_grad(const Eigen::ArrayXXd& a) {
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-a).exp());
  return s * (1.0 + a * (1.0 - s));
}

template <typename M>
void append(Eigen::VectorXd& out, Eigen::Index& pos, const M& m) {
  out.segment(pos, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
  pos += m.size();
}

template <typename M>
void extract(const Eigen::Ref<const Eigen::VectorXd>& in, Eigen::Index& pos, M& m) {
  std::copy(in.data() + pos, in.data() + pos + m.size(), m.data());
  pos += m.size();
}

}  // namespace

Eigen::Index MLPParameters::count() const {
  return w1.size() + b1.size() + wc.size() + w2.size() + b2.size() + w3.size() + b3.size();
}

Eigen::VectorXd MLPParameters::flatten() const {
  Eigen::VectorXd out(count());
  Eigen::Index pos = 0;
  append(out, pos, w1);
  append(out, pos, b1);
  append(out, pos, wc);
  append(out, pos, w2);
  append(out, pos, b2);
  append(out, pos, w3);
  append(out, pos, b3);
  return out;
}

void MLPParameters::unflatten(const Eigen::Ref<const Eigen::VectorXd>& theta) {
  if (theta.size() != count()) throw InvalidArgument("parameter vector has wrong length");
  Eigen::Index pos = 0;
  extract(theta, pos, w1);
  extract(theta, pos, b1);
  extract(theta, pos, wc);
  extract(theta, pos, w2);
  extract(theta, pos, b2);
  extract(theta, pos, w3);
  extract(theta, pos, b3);
}

MLPDenoiser::MLPDenoiser(const MLPShape& shape, std::uint64_t seed) : shape_(shape) {
  if (shape.state_dim < 1 || shape.metadata_dim < 0 || shape.control_dim < 0 || shape.hidden < 1 ||
      shape.time_features < 0 || shape.timesteps < 1)
    throw InvalidArgument("invalid MLP shape");
  std::mt19937_64 rng(seed);
  auto glorot = [&](int rows, int cols) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index n = 0; n < m.size(); ++n) m.data()[n] = u(rng);
    return m;
  };
  const int h = shape.hidden;
  params_.w1 = glorot(h, shape.input_dim());
  params_.b1 = Eigen::VectorXd::Zero(h);
  params_.wc = Eigen::MatrixXd::Zero(h, shape.control_dim);
  params_.w2 = glorot(h, h);
  params_.b2 = Eigen::VectorXd::Zero(h);
  params_.w3 = glorot(shape.state_dim, h);
  params_.b3 = Eigen::VectorXd::Zero(shape.state_dim);
}

Eigen::VectorXd MLPDenoiser::time_embedding(int t) const {
  const int F = shape_.time_features;
  Eigen::VectorXd e(2 * F);
  const double base = double(t) / shape_.timesteps * M_PI;
  for (int j = 0; j < F; ++j) {
    const double phase = base * std::ldexp(1.0, j);
    e[j] = std::sin(phase);
    e[F + j] = std::cos(phase);
  }
  return e;
}

namespace {

struct Activations {
  Eigen::MatrixXd in, a1, h1, a2, h2, out;
};

}  // namespace

static Activations run(const MLPDenoiser& net, const DenoiserBatch& b) {
  const MLPShape& s = net.shape();
  const MLPParameters& p = net.params();
  const Eigen::Index B = b.x.cols();
  if (b.x.rows() != s.state_dim) throw InvalidArgument("batch state dim mismatch");
  if (b.metadata.rows() != s.metadata_dim || b.metadata.cols() != B)
    throw InvalidArgument("batch metadata dim mismatch");
  if (b.null.size() != B || b.t.size() != B) throw InvalidArgument("batch null/t length mismatch");
  const bool has_control = b.control.size() > 0;
  if (has_control && (b.control.rows() != s.control_dim || b.control.cols() != B))
    throw InvalidArgument("batch control dim mismatch (expected " + std::to_string(s.control_dim) + ")");

  Activations a;
  a.in.resize(s.input_dim(), B);
  a.in.topRows(s.state_dim) = b.x;
  for (Eigen::Index c = 0; c < B; ++c) {
    a.in.col(c).segment(s.state_dim, s.metadata_dim) = b.metadata.col(c) * (1.0 - b.null[c]);
    a.in(s.state_dim + s.metadata_dim, c) = b.null[c];
    a.in.col(c).tail(2 * s.time_features) = net.time_embedding(b.t[c]);
  }
  a.a1 = p.w1 * a.in;
  a.a1.colwise() += p.b1;
  if (has_control) a.a1 += p.wc * b.control;
  a.h1 = silu(a.a1.array()).matrix();
  a.a2 = p.w2 * a.h1;
  a.a2.colwise() += p.b2;
  a.h2 = silu(a.a2.array()).matrix();
  a.out = p.w3 * a.h2;
  a.out.colwise() += p.b3;
  return a;
}

Eigen::MatrixXd MLPDenoiser::forward(const DenoiserBatch& batch) const { return run(*this, batch).out; }

double MLPDenoiser::loss(const DenoiserBatch& batch, Eigen::VectorXd* grad) const {
  if (batch.target.rows() != batch.x.rows() || batch.target.cols() != batch.x.cols())
    throw InvalidArgument("batch target shape mismatch");
  const Activations a = run(*this, batch);
  const Eigen::MatrixXd diff = a.out - batch.target;
  const double scale = 1.0 / double(diff.size());
  const double value = diff.squaredNorm() * scale;
  if (!grad) return value;

  MLPParameters g = params_;
  const Eigen::MatrixXd d_out = 2.0 * scale * diff;
  g.w3 = d_out * a.h2.transpose();
  g.b3 = d_out.rowwise().sum();
  const Eigen::MatrixXd d_a2 = ((params_.w3.transpose() * d_out).array() * silu_grad(a.a2.array())).matrix();
  g.w2 = d_a2 * a.h1.transpose();
  g.b2 = d_a2.rowwise().sum();
  const Eigen::MatrixXd d_a1 = ((params_.w2.transpose() * d_a2).array() * silu_grad(a.a1.array())).matrix();
  g.w1 = d_a1 * a.in.transpose();
  g.b1 = d_a1.rowwise().sum();
  if (batch.control.size() > 0)
    g.wc = d_a1 * batch.control.transpose();
  else
    g.wc.setZero();
  *grad = g.flatten();
  return value;
}

State MLPDenoiser::predict_eps(const State& x, int t, const Conditioning& cond) const {
  if (x.size() != shape_.state_dim) throw InvalidArgument("state size does not match the network");
  if (t < 0 || t > shape_.timesteps) throw InvalidArgument("timestep outside the trained range");
  DenoiserBatch b;
  b.x = x.matrix();
  b.metadata = Eigen::MatrixXd::Zero(shape_.metadata_dim, 1);
  if (!cond.null) {
    if (cond.metadata.size() != shape_.metadata_dim)
      throw InvalidArgument("metadata length " + std::to_string(cond.metadata.size()) + " does not match " +
                            std::to_string(shape_.metadata_dim));
    b.metadata.col(0) = cond.metadata;
  }
  b.null = Eigen::RowVectorXd::Constant(1, cond.null ? 1.0 : 0.0);
  b.t = Eigen::RowVectorXi::Constant(1, t);
  if (cond.control) {
    if (shape_.control_dim == 0) throw InvalidArgument("network was built without a control input");
    b.control = Eigen::Map<const Eigen::VectorXd>(cond.control->data(), cond.control->size());
  }
  return forward(b).col(0).array();
}

void MLPDenoiser::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  auto payload = path;
  payload.replace_extension(".bin");
  const Eigen::VectorXd theta = parameters();
  nlohmann::json header = {{"format", "morphcf-mlp-denoiser"},
                           {"version", 1},
                           {"shape",
                            {{"state_dim", shape_.state_dim},
                             {"metadata_dim", shape_.metadata_dim},
                             {"control_dim", shape_.control_dim},
                             {"hidden", shape_.hidden},
                             {"time_features", shape_.time_features},
                             {"timesteps", shape_.timesteps}}},
                           {"parameter_count", theta.size()},
                           {"payload", payload.filename().string()},
                           {"dtype", "f64le"},
                           {"extra", extra}};
  std::ofstream h(path);
  if (!h) throw IoError(IoErrorKind::open_failed, "cannot write " + path.string());
  h << header.dump(2) << "\n";
  std::ofstream bin(payload, std::ios::binary);
  if (!bin) throw IoError(IoErrorKind::open_failed, "cannot write " + payload.string());
  bin.write(reinterpret_cast<const char*>(theta.data()), theta.size() * sizeof(double));
}

MLPDenoiser MLPDenoiser::load(const std::filesystem::path& path) {
  std::ifstream h(path);
  if (!h) throw IoError(IoErrorKind::open_failed, "cannot open " + path.string());
  nlohmann::json header;
  MLPShape shape;
  std::filesystem::path payload;
  Eigen::Index count = 0;
  try {
    header = nlohmann::json::parse(h);
    if (header.at("format") != "morphcf-mlp-denoiser") throw IoError(IoErrorKind::bad_magic, path.string());
    const auto& s = header.at("shape");
    shape.state_dim = s.at("state_dim");
    shape.metadata_dim = s.at("metadata_dim");
    shape.control_dim = s.at("control_dim");
    shape.hidden = s.at("hidden");
    shape.time_features = s.at("time_features");
    shape.timesteps = s.at("timesteps");
    count = header.at("parameter_count").get<Eigen::Index>();
    payload = path.parent_path() / header.at("payload").get<std::string>();
    if (header.at("dtype") != "f64le") throw IoError(IoErrorKind::unsupported_dtype, path.string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorKind::bad_header, path.string() + ": " + e.what());
  }
  MLPDenoiser net(shape, 0);
  if (count != net.parameter_count())
    throw IoError(IoErrorKind::bad_header, path.string() + ": parameter count disagrees with shape");
  std::ifstream bin(payload, std::ios::binary);
  if (!bin) throw IoError(IoErrorKind::open_failed, "cannot open " + payload.string());
  Eigen::VectorXd theta(count);
  bin.read(reinterpret_cast<char*>(theta.data()), count * sizeof(double));
  if (bin.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
    throw IoError(IoErrorKind::truncated, payload.string());
  net.set_parameters(theta);
  return net;
}

MLPDenoiser train_mlp_denoiser(const std::vector<TrainingExample>& data, const NoiseSchedule& sched,
                               const TrainConfig& config, TrainReport* report) {
  if (data.empty()) throw InvalidArgument("training set is empty");
  if (config.batch_size < 1 || config.steps < 0) throw InvalidArgument("invalid training config");
  if (!(config.p_uncond >= 0.0 && config.p_uncond <= 1.0)) throw InvalidArgument("p_uncond must lie in [0, 1]");

  MLPShape shape;
  shape.state_dim = static_cast<int>(data.front().x0.size());
  shape.metadata_dim = static_cast<int>(data.front().cond.metadata.size());
  shape.control_dim = data.front().cond.control ? static_cast<int>(data.front().cond.control->size()) : 0;
  shape.hidden = config.hidden;
  shape.time_features = config.time_features;
  shape.timesteps = sched.steps();
  for (const auto& ex : data) {
    const int cdim = ex.cond.control ? static_cast<int>(ex.cond.control->size()) : 0;
    if (ex.x0.size() != shape.state_dim || ex.cond.metadata.size() != shape.metadata_dim || cdim != shape.control_dim)
      throw InvalidArgument("training examples disagree in shape");
  }

  MLPDenoiser net(shape, config.seed);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_int_distribution<int> step_t(1, sched.steps());
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int B = config.batch_size;
  DenoiserBatch batch;
  batch.x.resize(shape.state_dim, B);
  batch.metadata.resize(shape.metadata_dim, B);
  batch.null.resize(B);
  batch.t.resize(B);
  batch.target.resize(shape.state_dim, B);
  if (shape.control_dim > 0) batch.control.resize(shape.control_dim, B);

  auto fill = [&]() {
    for (int c = 0; c < B; ++c) {
      const auto& ex = data[pick(rng)];
      const int t = step_t(rng);
      State eps(shape.state_dim);
      for (auto& v : eps) v = normal(rng);
      batch.x.col(c) = q_sample(ex.x0, t, eps, sched).matrix();
      batch.target.col(c) = eps.matrix();
      batch.t[c] = t;
      batch.null[c] = coin(rng) < config.p_uncond ? 1.0 : 0.0;
      batch.metadata.col(c) = ex.cond.metadata;
      if (shape.control_dim > 0)
        batch.control.col(c) = Eigen::Map<const Eigen::VectorXd>(ex.cond.control->data(), shape.control_dim);
    }
  };

  // Adam.
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  Eigen::VectorXd theta = net.parameters();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size()), v = m, grad;
  double last = 0.0;
  for (long step = 1; step <= config.steps; ++step) {
    fill();
    last = net.loss(batch, &grad);
    if (!std::isfinite(last)) throw TrainingError("non-finite training loss at step " + std::to_string(step), step);
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, double(step)), c2 = 1.0 - std::pow(beta2, double(step));
    theta.array() -= config.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + adam_eps);
    net.set_parameters(theta);
    if (report && config.log_every > 0 && step % config.log_every == 0) report->loss_history.emplace_back(step, last);
  }
  if (config.steps == 0) {
    fill();
    last = net.loss(batch);
  }
  if (report) {
    report->final_loss = last;
    if (report->loss_history.empty() || report->loss_history.back().first != config.steps)
      report->loss_history.emplace_back(config.steps, last);
  }
  return net;
}

}  // namespace morphcf
