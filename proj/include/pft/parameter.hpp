// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "pft/autodiff.hpp"

namespace pft {

/// A named model tensor. Frozen parameters never allocate gradients.
struct Parameter {
  std::string name;
  Var var;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor value, bool is_trainable = true)
      : name(std::move(n)), var(std::move(value), is_trainable), trainable(is_trainable) {}

  const Tensor& value() const { return var.value(); }
  Tensor& mutable_value() { return var.mutable_value(); }

  void set_trainable(bool flag) {
    trainable = flag;
    var.set_requires_grad(flag);
    if (!flag && var.has_grad()) var.clear_grad();
  }
};

}  // namespace pft
