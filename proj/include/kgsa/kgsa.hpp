#pragma once

#include "kgsa/analysis.hpp"
#include "kgsa/benchmarks.hpp"
#include "kgsa/dataset.hpp"
#include "kgsa/decomposition.hpp"
#include "kgsa/embedding.hpp"
#include "kgsa/error.hpp"
#include "kgsa/io.hpp"
#include "kgsa/kernels.hpp"
#include "kgsa/knn.hpp"
#include "kgsa/model_selection.hpp"
#include "kgsa/report.hpp"
#include "kgsa/subset.hpp"
