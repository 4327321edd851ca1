#include "halo/attention.hpp"
#include "halo/tensor_io.hpp"

namespace halo {

void save_params(const std::filesystem::path& dir, const AttentionParams<double>& p) {
  std::filesystem::create_directories(dir);
  save_tensor(dir / "W_Q.htnsr", p.w_q);
  save_tensor(dir / "W_K.htnsr", p.w_k);
  save_tensor(dir / "W_V.htnsr", p.w_v);
  save_tensor(dir / "rel_row.htnsr", p.rel.row_table);
  save_tensor(dir / "rel_col.htnsr", p.rel.col_table);
}

AttentionParams<double> load_params(const std::filesystem::path& dir) {
  AttentionParams<double> p;
  p.w_q = load_tensor(dir / "W_Q.htnsr");
  p.w_k = load_tensor(dir / "W_K.htnsr");
  p.w_v = load_tensor(dir / "W_V.htnsr");
  p.rel.row_table = load_tensor(dir / "rel_row.htnsr");
  p.rel.col_table = load_tensor(dir / "rel_col.htnsr");
  return p;
}

}  // namespace halo
