#pragma once

#include "chain_store.hpp"
#include "config.hpp"
#include "distributions.hpp"
#include "error.hpp"
#include "fit.hpp"
#include "genome_data.hpp"
#include "group_lasso.hpp"
#include "inference.hpp"
#include "logistic_block.hpp"
#include "nmf.hpp"
#include "parallel.hpp"
#include "predict_eval.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "stats.hpp"
#include "topic_block.hpp"
