#pragma once

#include "sngp/error.hpp"
#include "sngp/rng.hpp"
#include "sngp/matrix.hpp"
#include "sngp/linalg.hpp"
#include "sngp/datagen.hpp"
#include "sngp/nn.hpp"
#include "sngp/spectral.hpp"
#include "sngp/gp_head.hpp"
#include "sngp/model.hpp"
#include "sngp/train.hpp"
#include "sngp/predictors.hpp"
#include "sngp/metrics.hpp"
#include "sngp/fid.hpp"
#include "sngp/checkpoint.hpp"
#include "sngp/config.hpp"
#include "sngp/protocol.hpp"
