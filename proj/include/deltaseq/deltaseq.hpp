#pragma once

#include "corrstats.hpp"
#include "datamodel.hpp"
#include "dependence.hpp"
#include "error.hpp"
#include "experiments.hpp"
#include "kstest.hpp"
#include "matrix.hpp"
#include "mtp.hpp"
#include "ordering.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "synth.hpp"
