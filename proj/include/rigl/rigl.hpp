#pragma once

#include "rigl/arch.hpp"
#include "rigl/data.hpp"
#include "rigl/errors.hpp"
#include "rigl/flops.hpp"
#include "rigl/harness.hpp"
#include "rigl/loss.hpp"
#include "rigl/nn.hpp"
#include "rigl/optim.hpp"
#include "rigl/schedulers.hpp"
#include "rigl/sparsity.hpp"
#include "rigl/tensor.hpp"
