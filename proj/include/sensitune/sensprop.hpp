// Copyright 2026 The Sensitune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Forward sensitivity propagation through the unrolled closed loop
//
//   du_k/dtheta     = Jx_h dx_k/dtheta + Jtheta_h
//   dx_{k+1}/dtheta = (Jx_f + Ju_f Jx_h) dx_k/dtheta + Ju_f Jtheta_h
//
// and assembly of the loss gradient as the sensitivity sum weighted by the
// loss partials.

#ifndef SENSITUNE_SENSPROP_HPP_
#define SENSITUNE_SENSPROP_HPP_

#include "sensitune/core.hpp"

namespace sensitune {

// x_0 does not depend on theta.
inline SensitivityState init_sensitivity(Eigen::Index n, Eigen::Index p) {
  return {Matrix::Zero(n, p), Matrix()};
}

// One step of the recursion. The returned state holds dx_{k+1}/dtheta and
// du_k/dtheta; the control sensitivity consumes the pre-step dx_k/dtheta.
inline SensitivityState propagate(const SensitivityState& s,
                                  const Eigen::Ref<const Matrix>& jx_f,
                                  const Eigen::Ref<const Matrix>& ju_f,
                                  const Eigen::Ref<const Matrix>& jx_h,
                                  const Eigen::Ref<const Matrix>& jtheta_h) {
  const Eigen::Index n = s.dx_dtheta.rows();
  const Eigen::Index p = s.dx_dtheta.cols();
  const Eigen::Index m = ju_f.cols();
  if (jx_f.rows() != n || jx_f.cols() != n || ju_f.rows() != n ||
      jx_h.rows() != m || jx_h.cols() != n || jtheta_h.rows() != m ||
      jtheta_h.cols() != p) {
    throw Error("propagate: Jacobian shapes do not conform");
  }
  SensitivityState next;
  next.du_dtheta = jx_h * s.dx_dtheta + jtheta_h;
  // Ju_f (Jx_h dx + Jtheta_h) == Ju_f du
  next.dx_dtheta = jx_f * s.dx_dtheta + ju_f * next.du_dtheta;
  return next;
}

// grad = sum_{k=1..N} dL/dx_k dx_k/dtheta + sum_{k=0..N-1} dL/du_k du_k/dtheta
inline RowVector assemble_gradient(const RolloutRecord& record) {
  const long n = record.steps();
  if (n < 1 || record.sensitivity.size() != record.state.size() ||
      record.dL_dx.size() != record.state.size() ||
      record.dL_du.size() < static_cast<std::size_t>(n)) {
    throw Error("assemble_gradient: incomplete rollout record");
  }
  const Eigen::Index p = record.sensitivity[0].dx_dtheta.cols();
  RowVector grad = RowVector::Zero(p);
  for (long k = 1; k <= n; ++k) {
    grad.noalias() += record.dL_dx[k] * record.sensitivity[k].dx_dtheta;
  }
  for (long k = 0; k < n; ++k) {
    if (record.sensitivity[k].du_dtheta.size() == 0) {
      throw Error("assemble_gradient: missing control sensitivity at step " +
                  std::to_string(k));
    }
    grad.noalias() += record.dL_du[k] * record.sensitivity[k].du_dtheta;
  }
  return grad;
}

}  // namespace sensitune

#endif  // SENSITUNE_SENSPROP_HPP_
