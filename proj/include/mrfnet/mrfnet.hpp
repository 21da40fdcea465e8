#pragma once

#include "mrfnet/dataset.hpp"
#include "mrfnet/dictionary.hpp"
#include "mrfnet/digest.hpp"
#include "mrfnet/epg.hpp"
#include "mrfnet/evalbench.hpp"
#include "mrfnet/labels.hpp"
#include "mrfnet/nn/adam.hpp"
#include "mrfnet/nn/cells.hpp"
#include "mrfnet/nn/checkpoint.hpp"
#include "mrfnet/nn/loss.hpp"
#include "mrfnet/nn/model.hpp"
#include "mrfnet/parallel.hpp"
#include "mrfnet/pipeline.hpp"
#include "mrfnet/random.hpp"
#include "mrfnet/schedule.hpp"
#include "mrfnet/training.hpp"
