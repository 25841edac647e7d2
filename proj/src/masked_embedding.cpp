#include "embudget/masked_embedding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "embudget/allocator.hpp"
#include "embudget/error.hpp"

namespace embudget {
namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', 'S'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "sparse image codec assumes a little-endian host");

void fill_uniform(RowMatrix& m, std::int64_t row_begin, std::int64_t row_end,
                  double half_width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-half_width, half_width);
  for (std::int64_t r = row_begin; r < row_end; ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  auto n = out.size();
  out.resize(n + sizeof(T));
  std::memcpy(out.data() + n, &v, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size())
      throw FormatError("sparse image truncated at byte " +
                        std::to_string(pos_));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

double MaskedEmbeddingTable::init_half_width(int d_max) {
  return 0.1 / std::sqrt(static_cast<double>(d_max));
}

MaskedEmbeddingTable::MaskedEmbeddingTable(std::int32_t user_count,
                                           std::int32_t item_count, int d_max,
                                           int d_min, std::uint64_t seed)
    : users_(user_count), items_(item_count), d_max_(d_max), d_min_(d_min) {
  if (user_count <= 0 || item_count <= 0)
    throw ValidationError("embedding table needs at least one user and item");
  if (d_min < 1 || d_max < d_min)
    throw ValidationError("embedding bounds must satisfy d_max >= d_min >= 1");
  values_.resize(users_ + items_, d_max_);
  fill_uniform(values_, 0, values_.rows(), init_half_width(d_max_), seed);
  sizes_.assign(static_cast<std::size_t>(users_ + items_), d_max_);
}

void MaskedEmbeddingTable::check_row(std::int64_t row) const {
  if (row < 0 || row >= values_.rows())
    throw IndexError("row " + std::to_string(row) + " out of range [0, " +
                     std::to_string(values_.rows()) + ")");
}

int MaskedEmbeddingTable::size_of(std::int64_t row) const {
  check_row(row);
  return sizes_[static_cast<std::size_t>(row)];
}

void MaskedEmbeddingTable::set_sizes(const AllocationPlan& plan) {
  set_sizes(plan.user_sizes, plan.item_sizes);
}

void MaskedEmbeddingTable::set_sizes(std::span<const int> user_sizes,
                                     std::span<const int> item_sizes) {
  if (user_sizes.size() != static_cast<std::size_t>(users_) ||
      item_sizes.size() != static_cast<std::size_t>(items_))
    throw ValidationError("plan covers " + std::to_string(user_sizes.size()) +
                          " users / " + std::to_string(item_sizes.size()) +
                          " items, table has " + std::to_string(users_) +
                          " / " + std::to_string(items_));
  auto check = [&](int s) {
    if (s < d_min_ || s > d_max_)
      throw ValidationError("embedding size " + std::to_string(s) +
                            " outside [" + std::to_string(d_min_) + ", " +
                            std::to_string(d_max_) + "]");
  };
  for (int s : user_sizes) check(s);
  for (int s : item_sizes) check(s);
  std::copy(user_sizes.begin(), user_sizes.end(), sizes_.begin());
  std::copy(item_sizes.begin(), item_sizes.end(), sizes_.begin() + users_);
}

void MaskedEmbeddingTable::set_uniform_size(int size) {
  if (size < d_min_ || size > d_max_)
    throw ValidationError("uniform size out of bounds");
  std::fill(sizes_.begin(), sizes_.end(), size);
}

Eigen::VectorXd MaskedEmbeddingTable::lookup(std::int64_t row) const {
  check_row(row);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(d_max_);
  int d = sizes_[static_cast<std::size_t>(row)];
  out.head(d) = values_.row(row).head(d).transpose();
  return out;
}

RowMatrix MaskedEmbeddingTable::masked() const {
  RowMatrix out = RowMatrix::Zero(values_.rows(), d_max_);
  for (Eigen::Index r = 0; r < values_.rows(); ++r) {
    int d = sizes_[static_cast<std::size_t>(r)];
    out.row(r).head(d) = values_.row(r).head(d);
  }
  return out;
}

RowMatrix MaskedEmbeddingTable::mask_matrix() const {
  RowMatrix out = RowMatrix::Zero(values_.rows(), d_max_);
  for (Eigen::Index r = 0; r < values_.rows(); ++r)
    out.row(r).head(sizes_[static_cast<std::size_t>(r)]).setOnes();
  return out;
}

std::int64_t MaskedEmbeddingTable::param_count() const {
  std::int64_t total = 0;
  for (int s : sizes_) total += s;
  return total;
}

void MaskedEmbeddingTable::append_rows(std::int32_t new_users,
                                       std::int32_t new_items,
                                       std::uint64_t seed) {
  if (new_users < 0 || new_items < 0)
    throw ValidationError("cannot append a negative number of rows");
  if (new_users == 0 && new_items == 0) return;
  RowMatrix fresh(new_users + new_items, d_max_);
  fill_uniform(fresh, 0, fresh.rows(), init_half_width(d_max_), seed);

  RowMatrix grown(values_.rows() + fresh.rows(), d_max_);
  grown.topRows(users_) = values_.topRows(users_);
  grown.middleRows(users_, new_users) = fresh.topRows(new_users);
  grown.middleRows(users_ + new_users, items_) = values_.bottomRows(items_);
  grown.bottomRows(new_items) = fresh.bottomRows(new_items);
  values_ = std::move(grown);

  sizes_.insert(sizes_.begin() + users_, static_cast<std::size_t>(new_users),
                d_max_);
  sizes_.insert(sizes_.end(), static_cast<std::size_t>(new_items), d_max_);
  users_ += new_users;
  items_ += new_items;
}

void MaskedEmbeddingTable::reinitialize(std::uint64_t seed) {
  fill_uniform(values_, 0, values_.rows(), init_half_width(d_max_), seed);
}

SparseTableImage to_sparse_image(const MaskedEmbeddingTable& table,
                                 std::uint32_t value_width) {
  if (value_width != 4 && value_width != 8)
    throw ValidationError("value width must be 4 or 8 bytes");
  SparseTableImage img;
  img.d_max = static_cast<std::uint32_t>(table.d_max());
  img.d_min = static_cast<std::uint32_t>(table.d_min());
  img.user_count = static_cast<std::uint64_t>(table.user_count());
  img.item_count = static_cast<std::uint64_t>(table.item_count());
  img.value_width = value_width;
  img.row_offsets.reserve(table.row_count() + 1);
  img.payload.reserve(static_cast<std::size_t>(table.param_count()));
  img.row_offsets.push_back(0);
  const auto& vals = table.values();
  for (std::int64_t r = 0; r < table.row_count(); ++r) {
    int d = table.sizes()[static_cast<std::size_t>(r)];
    for (int c = 0; c < d; ++c) {
      double v = vals(r, c);
      if (value_width == 4) v = static_cast<double>(static_cast<float>(v));
      img.payload.push_back(v);
    }
    img.row_offsets.push_back(img.payload.size());
  }
  return img;
}

MaskedEmbeddingTable from_sparse_image(const SparseTableImage& image) {
  if (image.row_offsets.size() != image.row_count() + 1 ||
      image.row_offsets.front() != 0 ||
      image.row_offsets.back() != image.payload.size())
    throw FormatError("sparse image offsets inconsistent with payload");
  MaskedEmbeddingTable table(static_cast<std::int32_t>(image.user_count),
                             static_cast<std::int32_t>(image.item_count),
                             static_cast<int>(image.d_max),
                             static_cast<int>(image.d_min), 0);
  auto& vals = table.mutable_values();
  vals.setZero();
  std::vector<int> sizes(image.row_count());
  for (std::uint64_t r = 0; r < image.row_count(); ++r) {
    auto b = image.row_offsets[r], e = image.row_offsets[r + 1];
    if (e < b || e - b > image.d_max || e - b < image.d_min)
      throw FormatError("row " + std::to_string(r) + " has invalid size");
    sizes[r] = static_cast<int>(e - b);
    for (auto k = b; k < e; ++k)
      vals(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k - b)) =
          image.payload[k];
  }
  table.set_sizes(std::span<const int>(sizes).first(image.user_count),
                  std::span<const int>(sizes).subspan(image.user_count));
  return table;
}

std::vector<std::uint8_t> encode_sparse_image(const SparseTableImage& img) {
  std::vector<std::uint8_t> out;
  out.reserve(40 + img.row_offsets.size() * 8 +
              img.payload.size() * img.value_width);
  out.insert(out.end(), kMagic, kMagic + 4);
  put(out, kVersion);
  put(out, img.value_width);
  put(out, img.user_count);
  put(out, img.item_count);
  put(out, img.d_max);
  put(out, img.d_min);
  for (auto o : img.row_offsets) put(out, o);
  for (double v : img.payload) {
    if (img.value_width == 4)
      put(out, static_cast<float>(v));
    else
      put(out, v);
  }
  return out;
}

SparseTableImage decode_sparse_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("bad magic; not a sparse embedding image");
  Reader rd(bytes.subspan(4));
  SparseTableImage img;
  if (rd.get<std::uint32_t>() != kVersion)
    throw FormatError("unsupported sparse image version");
  img.value_width = rd.get<std::uint32_t>();
  if (img.value_width != 4 && img.value_width != 8)
    throw FormatError("invalid value width");
  img.user_count = rd.get<std::uint64_t>();
  img.item_count = rd.get<std::uint64_t>();
  img.d_max = rd.get<std::uint32_t>();
  img.d_min = rd.get<std::uint32_t>();
  if (img.d_min < 1 || img.d_max < img.d_min || img.user_count == 0 ||
      img.item_count == 0)
    throw FormatError("invalid header fields");
  auto rows = img.row_count();
  if (rd.remaining() / 8 < rows + 1) throw FormatError("offset array truncated");
  img.row_offsets.resize(rows + 1);
  for (auto& o : img.row_offsets) o = rd.get<std::uint64_t>();
  for (std::size_t r = 0; r < rows; ++r)
    if (img.row_offsets[r + 1] < img.row_offsets[r])
      throw FormatError("offsets decrease at row " + std::to_string(r));
  auto n = img.row_offsets.back();
  if (rd.remaining() != n * img.value_width)
    throw FormatError("payload length does not match offsets");
  img.payload.resize(n);
  for (auto& v : img.payload)
    v = img.value_width == 4 ? static_cast<double>(rd.get<float>())
                             : rd.get<double>();
  return img;
}

void write_sparse_image(const SparseTableImage& image,
                        const std::filesystem::path& path) {
  auto bytes = encode_sparse_image(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

SparseTableImage read_sparse_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io_error", "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_sparse_image(bytes);
}

}  // namespace embudget
