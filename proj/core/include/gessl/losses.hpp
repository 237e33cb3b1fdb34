#pragma once

#include <span>
#include <string>
#include <variant>

#include "gessl/models.hpp"
#include "gessl/taskgen.hpp"
#include "gessl/tensor.hpp"

namespace gessl {

struct ContrastiveNtXent {
  double tau = 0.5;
};
struct RedundancyBarlow {
  double lambda_offdiag = 5e-3;
};
struct AlignCosine {};

/// The inner-loop SSL objective.
using LossKind = std::variant<ContrastiveNtXent, RedundancyBarlow, AlignCosine>;

std::string loss_name(const LossKind& kind);
void validate_loss(const LossKind& kind);

/// NT-Xent over pairs (A = 2). Mean over anchors of -log softmax of the
/// positive among all non-self candidates.
Tensor nt_xent(const Tensor& projections, std::span<const int> pseudo_labels, double tau);

/// Barlow Twins redundancy reduction on column-standardized inputs.
Tensor barlow(const Tensor& za, const Tensor& zb, double lambda_offdiag);

/// -mean_i cos(za_i, zb_i); callers pass a detached `zb`.
Tensor align_cosine(const Tensor& za, const Tensor& zb);

/// Loss of `params` on a task: encode -> project -> configured objective.
/// Barlow and alignment compare view 0 against view 1 of every pseudo-class.
Tensor ssl_loss(const ParameterSet& params, const TaskBatch& task, const LossKind& kind);

}  // namespace gessl
