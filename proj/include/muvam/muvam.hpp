#pragma once

#include "muvam/adamax.hpp"
#include "muvam/attention.hpp"
#include "muvam/config.hpp"
#include "muvam/dataset.hpp"
#include "muvam/encoders.hpp"
#include "muvam/errors.hpp"
#include "muvam/fusion.hpp"
#include "muvam/grad_check.hpp"
#include "muvam/image_io.hpp"
#include "muvam/init.hpp"
#include "muvam/model.hpp"
#include "muvam/ops.hpp"
#include "muvam/pipeline.hpp"
#include "muvam/rng.hpp"
#include "muvam/serialize.hpp"
#include "muvam/synthetic.hpp"
#include "muvam/tape.hpp"
#include "muvam/tensor.hpp"
#include "muvam/types.hpp"
