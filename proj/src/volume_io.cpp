#include "morphcf/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace morphcf {
namespace {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

template <typename T>
T get(const std::vector<char>& buf, std::size_t offset) {
  T v;
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  return v;
}

template <typename T>
void put(std::vector<char>& buf, std::size_t offset, T v) {
  std::memcpy(buf.data() + offset, &v, sizeof(T));
}

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void spill(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoErrorKind::open_failed, "short write to " + path.string());
}

struct NiftiHeader {
  Dims dims;
  Spacing spacing;
  NiftiDtype dtype;
  std::size_t offset;
};

NiftiHeader parse_header(const std::vector<char>& buf, const std::string& name) {
  if (buf.size() < kHeaderSize) throw IoError(IoErrorKind::truncated, name + ": header shorter than 348 bytes");
  if (get<std::int32_t>(buf, 0) != kHeaderSize)
    throw IoError(IoErrorKind::bad_header, name + ": sizeof_hdr is not 348 (big-endian files unsupported)");
  if (std::memcmp(buf.data() + 344, "n+1\0", 4) != 0)
    throw IoError(IoErrorKind::bad_magic, name + ": magic is not \"n+1\"");

  const auto ndim = get<std::int16_t>(buf, 40);
  if (ndim < 1 || ndim > 7) throw IoError(IoErrorKind::bad_header, name + ": dim[0] out of range");
  NiftiHeader h;
  for (int a = 0; a < 3; ++a) {
    const int n = a < ndim ? get<std::int16_t>(buf, 42 + 2 * a) : 1;
    if (n <= 0) throw IoError(IoErrorKind::bad_header, name + ": non-positive dimension");
    h.dims[a] = n;
    const float p = get<float>(buf, 80 + 4 * a);
    h.spacing[a] = p > 0.0f ? p : 1.0;
  }
  for (int a = 3; a < ndim; ++a)
    if (get<std::int16_t>(buf, 42 + 2 * a) > 1)
      throw IoError(IoErrorKind::bad_header, name + ": multi-frame volumes unsupported");

  const auto code = get<std::int16_t>(buf, 70);
  switch (code) {
    case 2: h.dtype = NiftiDtype::uint8; break;
    case 4: h.dtype = NiftiDtype::int16; break;
    case 16: h.dtype = NiftiDtype::float32; break;
    default: throw IoError(IoErrorKind::unsupported_dtype, name + ": datatype " + std::to_string(code));
  }
  const float vox_offset = get<float>(buf, 108);
  if (vox_offset < kVoxOffset) throw IoError(IoErrorKind::bad_header, name + ": vox_offset < 352");
  if (buf.size() >= kVoxOffset && buf[kHeaderSize] != 0)
    throw IoError(IoErrorKind::bad_header, name + ": header extensions unsupported");
  h.offset = static_cast<std::size_t>(vox_offset);
  return h;
}

std::size_t dtype_size(NiftiDtype t) {
  switch (t) {
    case NiftiDtype::uint8: return 1;
    case NiftiDtype::int16: return 2;
    case NiftiDtype::float32: return 4;
  }
  return 0;
}

std::vector<char> make_header(const Dims& dims, const Spacing& spacing, NiftiDtype dtype) {
  std::vector<char> buf(kVoxOffset, 0);
  put<std::int32_t>(buf, 0, kHeaderSize);
  put<std::int16_t>(buf, 40, 3);
  for (int a = 0; a < 3; ++a) put<std::int16_t>(buf, 42 + 2 * a, static_cast<std::int16_t>(dims[a]));
  for (int a = 3; a < 7; ++a) put<std::int16_t>(buf, 42 + 2 * a, 1);
  put<std::int16_t>(buf, 70, static_cast<std::int16_t>(dtype));
  put<std::int16_t>(buf, 72, static_cast<std::int16_t>(8 * dtype_size(dtype)));
  put<float>(buf, 76, 1.0f);  // qfac
  for (int a = 0; a < 3; ++a) put<float>(buf, 80 + 4 * a, static_cast<float>(spacing[a]));
  put<float>(buf, 108, static_cast<float>(kVoxOffset));
  buf[123] = 2;  // xyzt_units: mm
  std::memcpy(buf.data() + 344, "n+1\0", 4);
  return buf;
}

void check_dims_fit(const Dims& dims) {
  for (int n : dims)
    if (n > 32767) throw InvalidArgument("dimension exceeds NIfTI-1 int16 range");
}

template <typename T, typename Out>
void decode(const std::vector<char>& buf, std::size_t offset, std::int64_t n, Out& out) {
  for (std::int64_t v = 0; v < n; ++v) out[v] = get<T>(buf, offset + v * sizeof(T));
}

std::filesystem::path payload_path(const std::filesystem::path& json_path) {
  auto p = json_path;
  p.replace_extension(".bin");
  return p;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorKind::bad_header, path.string() + ": " + e.what());
  }
}

struct RawHeader {
  Dims dims;
  Spacing spacing;
  int channels = 1;
};

RawHeader parse_raw_header(const std::filesystem::path& path) {
  const auto j = read_json(path);
  RawHeader h;
  try {
    if (j.at("dtype").get<std::string>() != "f32")
      throw IoError(IoErrorKind::unsupported_dtype, path.string() + ": dtype must be f32");
    if (j.at("order").get<std::string>() != "x-fastest")
      throw IoError(IoErrorKind::bad_header, path.string() + ": order must be x-fastest");
    const auto d = j.at("dims").get<std::vector<int>>();
    const auto s = j.at("spacing").get<std::vector<double>>();
    if (d.size() != 3 || s.size() != 3) throw IoError(IoErrorKind::bad_header, path.string() + ": need 3 dims");
    h.dims = {d[0], d[1], d[2]};
    h.spacing = Spacing(s[0], s[1], s[2]);
    h.channels = j.value("channels", 1);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorKind::bad_header, path.string() + ": " + e.what());
  }
  check_dims(h.dims);
  check_spacing(h.spacing);
  return h;
}

std::vector<float> read_payload(const std::filesystem::path& json_path, std::int64_t n) {
  const auto bytes = slurp(payload_path(json_path));
  if (static_cast<std::int64_t>(bytes.size()) < n * 4)
    throw IoError(IoErrorKind::truncated, payload_path(json_path).string() + ": payload too short");
  std::vector<float> out(n);
  std::memcpy(out.data(), bytes.data(), n * 4);
  return out;
}

void write_raw_impl(const Dims& dims, const Spacing& spacing, int channels, const float* data,
                    const std::filesystem::path& json_path) {
  nlohmann::json j;
  j["dims"] = {dims[0], dims[1], dims[2]};
  j["spacing"] = {spacing[0], spacing[1], spacing[2]};
  j["dtype"] = "f32";
  j["order"] = "x-fastest";
  if (channels != 1) j["channels"] = channels;
  std::ofstream out(json_path);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot write " + json_path.string());
  out << j.dump(2) << "\n";
  const std::size_t n = static_cast<std::size_t>(voxel_count(dims)) * channels;
  std::vector<char> bytes(n * 4);
  std::memcpy(bytes.data(), data, bytes.size());
  spill(payload_path(json_path), bytes);
}

}  // namespace

VolumeData read_volume(const std::filesystem::path& path) {
  if (path.extension() == ".json") return read_raw(path);
  const auto buf = slurp(path);
  const auto h = parse_header(buf, path.string());
  const auto n = voxel_count(h.dims);
  if (buf.size() < h.offset + n * dtype_size(h.dtype))
    throw IoError(IoErrorKind::truncated, path.string() + ": payload shorter than dims imply");

  if (h.dtype == NiftiDtype::float32) {
    GridF::Values v(n);
    decode<float>(buf, h.offset, n, v);
    if (!v.allFinite()) throw IoError(IoErrorKind::bad_header, path.string() + ": non-finite voxel values");
    return GridF(h.dims, h.spacing, std::move(v));
  }
  LabelVolume::Labels l(n);
  if (h.dtype == NiftiDtype::int16)
    decode<std::int16_t>(buf, h.offset, n, l);
  else
    decode<std::uint8_t>(buf, h.offset, n, l);
  if ((l < 0).any()) throw IoError(IoErrorKind::bad_header, path.string() + ": negative label");
  const int num_rois = std::max(0, static_cast<int>(l.maxCoeff()) - kCsf);
  return LabelVolume(h.dims, h.spacing, num_rois, std::move(l));
}

GridF read_grid(const std::filesystem::path& path) {
  auto data = read_volume(path);
  if (auto* g = std::get_if<GridF>(&data)) return std::move(*g);
  const auto& l = std::get<LabelVolume>(data);
  return GridF(l.dims(), l.spacing(), l.labels().cast<float>().eval());
}

LabelVolume read_labels(const std::filesystem::path& path, int num_rois) {
  auto data = read_volume(path);
  auto* l = std::get_if<LabelVolume>(&data);
  if (!l) throw IoError(IoErrorKind::unsupported_dtype, path.string() + ": label maps must be integer typed");
  if (num_rois < 0 || num_rois == l->num_rois()) return std::move(*l);
  return LabelVolume(l->dims(), l->spacing(), num_rois, l->labels());
}

void write_volume(const GridF& grid, const std::filesystem::path& path) {
  if (path.extension() == ".json") return write_raw(grid, path);
  check_dims_fit(grid.dims());
  auto buf = make_header(grid.dims(), grid.spacing(), NiftiDtype::float32);
  const std::size_t n = grid.size();
  buf.resize(kVoxOffset + 4 * n);
  std::memcpy(buf.data() + kVoxOffset, grid.values().data(), 4 * n);
  spill(path, buf);
}

void write_volume(const LabelVolume& labels, const std::filesystem::path& path, NiftiDtype dtype) {
  check_dims_fit(labels.dims());
  if (dtype == NiftiDtype::float32) throw InvalidArgument("label maps are written as int16 or uint8");
  if (dtype == NiftiDtype::uint8 && labels.num_labels() > 256)
    throw InvalidArgument("too many labels for uint8");
  auto buf = make_header(labels.dims(), labels.spacing(), dtype);
  const std::size_t n = labels.size();
  const std::size_t w = dtype_size(dtype);
  buf.resize(kVoxOffset + w * n);
  for (std::size_t v = 0; v < n; ++v) {
    if (dtype == NiftiDtype::int16)
      put<std::int16_t>(buf, kVoxOffset + 2 * v, labels[v]);
    else
      put<std::uint8_t>(buf, kVoxOffset + v, static_cast<std::uint8_t>(labels[v]));
  }
  spill(path, buf);
}

void write_raw(const GridF& grid, const std::filesystem::path& json_path) {
  write_raw_impl(grid.dims(), grid.spacing(), 1, grid.values().data(), json_path);
}

GridF read_raw(const std::filesystem::path& json_path) {
  const auto h = parse_raw_header(json_path);
  if (h.channels != 1) throw IoError(IoErrorKind::bad_header, json_path.string() + ": expected one channel");
  const auto data = read_payload(json_path, voxel_count(h.dims));
  GridF::Values v = Eigen::Map<const GridF::Values>(data.data(), data.size());
  if (!v.allFinite()) throw IoError(IoErrorKind::bad_header, json_path.string() + ": non-finite voxel values");
  return GridF(h.dims, h.spacing, std::move(v));
}

void write_probabilities(const ProbabilityVolume& probs, const Spacing& spacing,
                         const std::filesystem::path& json_path) {
  // Channel-major: table is labels x voxels column-major, so transpose.
  const Eigen::MatrixXf channels = probs.table().transpose().cast<float>();
  write_raw_impl(probs.dims(), spacing, probs.num_labels(), channels.data(), json_path);
}

ProbabilityVolume read_probabilities(const std::filesystem::path& json_path) {
  const auto h = parse_raw_header(json_path);
  const auto n = voxel_count(h.dims);
  const auto data = read_payload(json_path, n * h.channels);
  Eigen::MatrixXd table =
      Eigen::Map<const Eigen::MatrixXf>(data.data(), n, h.channels).transpose().cast<double>();
  // float32 storage loses precision; renormalize each simplex.
  for (Eigen::Index v = 0; v < table.cols(); ++v) {
    table.col(v) = table.col(v).cwiseMax(0.0);
    const double s = table.col(v).sum();
    if (s > 0) table.col(v) /= s;
  }
  return ProbabilityVolume(h.dims, h.channels, std::move(table));
}

}  // namespace morphcf
