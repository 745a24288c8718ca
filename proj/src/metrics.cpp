#include "morphcf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace morphcf {

// ---------------------------------------------------------------------------
// MS-SSIM

namespace {

struct Field {
  Dims dims;
  Eigen::ArrayXd v;
};

Eigen::ArrayXd gaussian_window(int size, double sigma) {
  Eigen::ArrayXd w(size);
  const double c = 0.5 * (size - 1);
  for (int n = 0; n < size; ++n) w[n] = std::exp(-0.5 * (n - c) * (n - c) / (sigma * sigma));
  return w / w.sum();
}

/// Valid 1D convolution along one axis.
Field convolve_axis(const Field& in, const Eigen::ArrayXd& w, int axis) {
  Field out;
  out.dims = in.dims;
  out.dims[axis] = in.dims[axis] - static_cast<int>(w.size()) + 1;
  out.v = Eigen::ArrayXd::Zero(voxel_count(out.dims));
  std::array<int, 3> stride{1, in.dims[0], in.dims[0] * in.dims[1]};
  for (int k = 0; k < out.dims[2]; ++k)
    for (int j = 0; j < out.dims[1]; ++j)
      for (int i = 0; i < out.dims[0]; ++i) {
        const auto base = linear_index(in.dims, i, j, k);
        double acc = 0.0;
        for (Eigen::Index t = 0; t < w.size(); ++t) acc += w[t] * in.v[base + t * stride[axis]];
        out.v[linear_index(out.dims, i, j, k)] = acc;
      }
  return out;
}

Field filter(const Field& in, const Eigen::ArrayXd& w) {
  return convolve_axis(convolve_axis(convolve_axis(in, w, 0), w, 1), w, 2);
}

Field downsample(const Field& in) {
  Field out;
  for (int a = 0; a < 3; ++a) out.dims[a] = in.dims[a] / 2;
  out.v = Eigen::ArrayXd::Zero(voxel_count(out.dims));
  for (int k = 0; k < 2 * out.dims[2]; ++k)
    for (int j = 0; j < 2 * out.dims[1]; ++j)
      for (int i = 0; i < 2 * out.dims[0]; ++i)
        out.v[linear_index(out.dims, i / 2, j / 2, k / 2)] += 0.125 * in.v[linear_index(in.dims, i, j, k)];
  return out;
}

}  // namespace

int ms_ssim_levels(const Dims& dims, const MsSsimOptions& o) {
  int levels = 0;
  Dims d = dims;
  while (levels < o.levels && d[0] >= o.window && d[1] >= o.window && d[2] >= o.window) {
    ++levels;
    for (int& n : d) n /= 2;
  }
  return levels;
}

double ms_ssim_3d(const Grid& a, const Grid& b, const MsSsimOptions& o) {
  if (a.dims() != b.dims()) throw InvalidArgument("ms_ssim_3d: dims differ " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  if (o.levels < 1 || o.levels > 5) throw InvalidArgument("ms_ssim_3d: levels must lie in [1, 5]");
  if (o.window < 1 || !(o.sigma > 0) || !(o.data_range > 0)) throw InvalidArgument("ms_ssim_3d: bad window options");
  const int levels = ms_ssim_levels(a.dims(), o);
  if (levels == 0)
    throw InvalidArgument("ms_ssim_3d: volume " + to_string(a.dims()) + " smaller than window " + std::to_string(o.window));

  double weight_sum = 0.0;
  for (int l = 0; l < levels; ++l) weight_sum += kMsSsimWeights[l];
  const Eigen::ArrayXd w = gaussian_window(o.window, o.sigma);
  const double c1 = std::pow(0.01 * o.data_range, 2), c2 = std::pow(0.03 * o.data_range, 2);

  Field fa{a.dims(), a.values()}, fb{b.dims(), b.values()};
  double score = 1.0;
  for (int l = 0; l < levels; ++l) {
    const Field mu_a = filter(fa, w), mu_b = filter(fb, w);
    const Eigen::ArrayXd saa = filter({fa.dims, fa.v * fa.v}, w).v - mu_a.v * mu_a.v;
    const Eigen::ArrayXd sbb = filter({fb.dims, fb.v * fb.v}, w).v - mu_b.v * mu_b.v;
    const Eigen::ArrayXd sab = filter({fa.dims, fa.v * fb.v}, w).v - mu_a.v * mu_b.v;
    const Eigen::ArrayXd cs_map = (2.0 * sab + c2) / (saa + sbb + c2);
    const double weight = kMsSsimWeights[l] / weight_sum;
    if (l + 1 < levels) {
      score *= std::pow(std::max(cs_map.mean(), 0.0), weight);
      fa = downsample(fa);
      fb = downsample(fb);
    } else {
      const Eigen::ArrayXd lum = (2.0 * mu_a.v * mu_b.v + c1) / (mu_a.v * mu_a.v + mu_b.v * mu_b.v + c1);
      score *= std::pow(std::max((lum * cs_map).mean(), 0.0), weight);
    }
  }
  return std::clamp(score, 0.0, 1.0);
}

double relative_msssim_diff(double synth_score, double real_score) {
  if (!(real_score > 0.0)) throw InvalidArgument("reference MS-SSIM must be > 0");
  return std::abs(synth_score - real_score) / real_score * 100.0;
}

// ---------------------------------------------------------------------------
// MMD

namespace {

void check_samples(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() == 0 || y.rows() == 0) throw InvalidArgument("mmd: sample sets must be nonempty");
  if (x.cols() != y.cols())
    throw InvalidArgument("mmd: dimension mismatch " + std::to_string(x.cols()) + " vs " + std::to_string(y.cols()));
}

struct Kernel {
  KernelKind kind;
  double gamma;  // 1 / (2 h^2)

  Eigen::MatrixXd operator()(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const {
    Eigen::MatrixXd g = a * b.transpose();
    if (kind == KernelKind::linear) return g;
    const Eigen::VectorXd na = a.rowwise().squaredNorm(), nb = b.rowwise().squaredNorm();
    g = ((-2.0 * g).colwise() + na).rowwise() + nb.transpose();
    return (-gamma * g.array().max(0.0)).exp().matrix();
  }
};

Kernel resolve(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const KernelSpec& spec, double& bandwidth) {
  if (spec.kind == KernelKind::linear) {
    bandwidth = 0.0;
    return {KernelKind::linear, 0.0};
  }
  bandwidth = spec.bandwidth > 0 ? spec.bandwidth : median_heuristic(x, y, spec.heuristic_subsample);
  return {KernelKind::rbf, 1.0 / (2.0 * bandwidth * bandwidth)};
}

}  // namespace

double median_heuristic(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int subsample) {
  check_samples(x, y);
  const Eigen::Index n = x.rows() + y.rows();
  const Eigen::Index take = std::min<Eigen::Index>(n, std::max(2, subsample));
  Eigen::MatrixXd pooled(take, x.cols());
  for (Eigen::Index r = 0; r < take; ++r) {
    const Eigen::Index src = r * n / take;
    pooled.row(r) = src < x.rows() ? x.row(src) : y.row(src - x.rows());
  }
  std::vector<double> d;
  d.reserve(take * (take - 1) / 2);
  for (Eigen::Index i = 0; i < take; ++i)
    for (Eigen::Index j = i + 1; j < take; ++j) d.push_back((pooled.row(i) - pooled.row(j)).norm());
  if (d.empty()) return 1.0;
  auto mid = d.begin() + d.size() / 2;
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0 ? *mid : 1.0;
}

MmdResult mmd_biased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const KernelSpec& spec) {
  check_samples(x, y);
  MmdResult r;
  const Kernel k = resolve(x, y, spec, r.bandwidth);
  r.unbiased = false;
  r.value = k(x, x).mean() + k(y, y).mean() - 2.0 * k(x, y).mean();
  return r;
}

MmdResult mmd(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const KernelSpec& spec) {
  check_samples(x, y);
  if (x.rows() < 2 || y.rows() < 2) return mmd_biased(x, y, spec);
  MmdResult r;
  const Kernel k = resolve(x, y, spec, r.bandwidth);
  const double n = double(x.rows()), m = double(y.rows());
  const Eigen::MatrixXd kxx = k(x, x), kyy = k(y, y);
  r.value = (kxx.sum() - kxx.trace()) / (n * (n - 1)) + (kyy.sum() - kyy.trace()) / (m * (m - 1)) -
            2.0 * k(x, y).mean();
  return r;
}

PermutationTest mmd_permutation_test(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const KernelSpec& spec,
                                     int permutations, std::uint64_t seed) {
  check_samples(x, y);
  if (x.rows() < 2 || y.rows() < 2) throw InvalidArgument("permutation test needs >= 2 samples per set");
  if (permutations < 1) throw InvalidArgument("permutations must be >= 1");
  double bandwidth = 0.0;
  const Kernel k = resolve(x, y, spec, bandwidth);
  const Eigen::Index n = x.rows(), m = y.rows(), total = n + m;
  Eigen::MatrixXd z(total, x.cols());
  z << x, y;

  // Column 0 is the observed split; the rest are random relabelings.
  const int P = permutations + 1;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(total, P);
  a.col(0).head(n).setOnes();
  std::mt19937_64 rng(seed);
  std::vector<Eigen::Index> idx(total);
  for (int p = 1; p < P; ++p) {
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Eigen::Index r = 0; r < n; ++r) a(idx[r], p) = 1.0;
  }

  // Stream K in row blocks: KA = K a, K1 = K 1, diag(K).
  Eigen::MatrixXd ka(total, P);
  Eigen::VectorXd k1(total), diag(total);
  constexpr Eigen::Index block = 256;
  for (Eigen::Index r0 = 0; r0 < total; r0 += block) {
    const Eigen::Index rows = std::min(block, total - r0);
    const Eigen::MatrixXd kb = k(z.middleRows(r0, rows), z);
    ka.middleRows(r0, rows) = kb * a;
    k1.segment(r0, rows) = kb.rowwise().sum();
    for (Eigen::Index r = 0; r < rows; ++r) diag[r0 + r] = kb(r, r0 + r);
  }
  const double all = k1.sum(), trace = diag.sum();
  const double dn = double(n), dm = double(m);

  std::vector<double> stats(P);
  for (int p = 0; p < P; ++p) {
    const double aka = a.col(p).dot(ka.col(p));
    const double ak1 = a.col(p).dot(k1);
    const double tr_x = a.col(p).dot(diag), tr_y = trace - tr_x;
    const double bkb = all - 2.0 * ak1 + aka;
    const double akb = ak1 - aka;
    stats[p] = (aka - tr_x) / (dn * (dn - 1)) + (bkb - tr_y) / (dm * (dm - 1)) - 2.0 * akb / (dn * dm);
  }

  PermutationTest out;
  out.statistic = stats[0];
  out.null_distribution.assign(stats.begin() + 1, stats.end());
  const auto exceed = std::count_if(out.null_distribution.begin(), out.null_distribution.end(),
                                    [&](double s) { return s >= out.statistic; });
  out.p_value = (1.0 + double(exceed)) / (1.0 + permutations);
  std::vector<double> sorted = out.null_distribution;
  std::sort(sorted.begin(), sorted.end());
  const auto q = static_cast<std::size_t>(std::ceil(0.95 * sorted.size())) - 1;
  out.null_quantile_95 = sorted[std::min(q, sorted.size() - 1)];
  return out;
}

}  // namespace morphcf
