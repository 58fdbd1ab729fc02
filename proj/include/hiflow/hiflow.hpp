#pragma once

#include <hiflow/analysis.hpp>
#include <hiflow/attention.hpp>
#include <hiflow/checkpoint.hpp>
#include <hiflow/config.hpp>
#include <hiflow/errors.hpp>
#include <hiflow/grad_check.hpp>
#include <hiflow/image.hpp>
#include <hiflow/layer.hpp>
#include <hiflow/model.hpp>
#include <hiflow/ops.hpp>
#include <hiflow/scaling.hpp>
#include <hiflow/tensor.hpp>
#include <hiflow/tensor_io.hpp>
#include <hiflow/train.hpp>
