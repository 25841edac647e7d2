#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace embudget {

struct AllocationPlan;

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense value matrix E with a per-row prefix size d_n. The implied mask row
// is ones on the first d_n coordinates and zeros after. Rows are laid out as
// a user block [0, users) followed by an item block [users, users + items).
//
// Values beyond d_n are retained, so shrinking and re-growing a row exposes
// its previous values again.
class MaskedEmbeddingTable {
 public:
  MaskedEmbeddingTable() = default;
  MaskedEmbeddingTable(std::int32_t user_count, std::int32_t item_count,
                       int d_max, int d_min, std::uint64_t seed);

  std::int32_t user_count() const { return users_; }
  std::int32_t item_count() const { return items_; }
  std::int64_t row_count() const { return values_.rows(); }
  int d_max() const { return d_max_; }
  int d_min() const { return d_min_; }

  std::int64_t user_row(std::int32_t u) const { return u; }
  std::int64_t item_row(std::int32_t v) const { return users_ + v; }

  const std::vector<int>& sizes() const { return sizes_; }
  int size_of(std::int64_t row) const;

  // Every size must lie in [d_min, d_max]; the plan must cover all rows.
  void set_sizes(const AllocationPlan& plan);
  void set_sizes(std::span<const int> user_sizes,
                 std::span<const int> item_sizes);
  void set_uniform_size(int size);

  // E_n (.) m_n, length d_max.
  Eigen::VectorXd lookup(std::int64_t row) const;

  // The whole masked table E (.) M.
  RowMatrix masked() const;
  // Binary mask materialised as a dense 0/1 matrix.
  RowMatrix mask_matrix() const;

  // ||M||_{1,1} = sum of sizes.
  std::int64_t param_count() const;

  // New rows go at the end of their block with fresh values and size d_max.
  void append_rows(std::int32_t new_users, std::int32_t new_items,
                   std::uint64_t seed);

  // Direct access to the dense training copy.
  const RowMatrix& values() const { return values_; }
  RowMatrix& mutable_values() { return values_; }

  // Reset every value to a fresh seeded initialisation (sizes untouched).
  void reinitialize(std::uint64_t seed);

  static double init_half_width(int d_max);

 private:
  void check_row(std::int64_t row) const;

  std::int32_t users_ = 0;
  std::int32_t items_ = 0;
  int d_max_ = 0;
  int d_min_ = 1;
  RowMatrix values_;
  std::vector<int> sizes_;
};

// CSR-style image of the masked table: row r occupies
// payload[row_offsets[r], row_offsets[r + 1]).
struct SparseTableImage {
  std::vector<std::uint64_t> row_offsets;
  std::vector<double> payload;
  std::uint32_t d_max = 0;
  std::uint32_t d_min = 1;
  std::uint64_t user_count = 0;
  std::uint64_t item_count = 0;
  // Bytes per stored value in the file form: 4 (float32) or 8 (float64).
  std::uint32_t value_width = 4;

  std::uint64_t row_count() const { return user_count + item_count; }
};

SparseTableImage to_sparse_image(const MaskedEmbeddingTable& table,
                                 std::uint32_t value_width = 4);
MaskedEmbeddingTable from_sparse_image(const SparseTableImage& image);

// Little-endian layout:
//   magic "EMBS" | u32 version | u32 value_width | u64 users | u64 items |
//   u32 d_max | u32 d_min | u64 offsets[rows + 1] | payload[offsets[rows]]
void write_sparse_image(const SparseTableImage& image,
                        const std::filesystem::path& path);
SparseTableImage read_sparse_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_sparse_image(const SparseTableImage& image);
SparseTableImage decode_sparse_image(std::span<const std::uint8_t> bytes);

inline SparseTableImage export_sparse(const MaskedEmbeddingTable& table,
                                      const std::filesystem::path& path,
                                      std::uint32_t value_width = 4) {
  auto image = to_sparse_image(table, value_width);
  write_sparse_image(image, path);
  return image;
}

inline MaskedEmbeddingTable import_sparse(const std::filesystem::path& path) {
  return from_sparse_image(read_sparse_image(path));
}

}  // namespace embudget
