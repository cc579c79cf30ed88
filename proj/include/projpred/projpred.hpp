#pragma once

#include "core.hpp"
#include "evaluation.hpp"
#include "experiments.hpp"
#include "io.hpp"
#include "log.hpp"
#include "parallel.hpp"
#include "projection.hpp"
#include "psis.hpp"
#include "reference.hpp"
#include "search.hpp"
#include "selection.hpp"
#include "serialize.hpp"
