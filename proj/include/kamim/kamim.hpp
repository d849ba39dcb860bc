#pragma once

#include "kamim/analysis.hpp"
#include "kamim/binary_io.hpp"
#include "kamim/checkpoint.hpp"
#include "kamim/config.hpp"
#include "kamim/error.hpp"
#include "kamim/fast.hpp"
#include "kamim/image.hpp"
#include "kamim/losses.hpp"
#include "kamim/masking.hpp"
#include "kamim/optim.hpp"
#include "kamim/parallel.hpp"
#include "kamim/rng.hpp"
#include "kamim/synthetic.hpp"
#include "kamim/tensor.hpp"
#include "kamim/train.hpp"
#include "kamim/vit.hpp"
#include "kamim/weighting.hpp"
