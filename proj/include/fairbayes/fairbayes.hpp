#pragma once

#include "fairbayes/balancing.hpp"
#include "fairbayes/dataset.hpp"
#include "fairbayes/error.hpp"
#include "fairbayes/experiment.hpp"
#include "fairbayes/gnb.hpp"
#include "fairbayes/metrics.hpp"
#include "fairbayes/nnb.hpp"
#include "fairbayes/random.hpp"
