#pragma once

#include "nnsig/data.hpp"
#include "nnsig/diagnostics.hpp"
#include "nnsig/error.hpp"
#include "nnsig/matrix.hpp"
#include "nnsig/network.hpp"
#include "nnsig/nulldist.hpp"
#include "nnsig/random.hpp"
#include "nnsig/significance.hpp"
#include "nnsig/training.hpp"
#include "nnsig/version.hpp"
