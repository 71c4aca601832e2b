#pragma once

// Eigen before httplib: <resolv.h> (pulled in by httplib) defines a `_res`
// macro that collides with Eigen parameter names.
#include "latte/fault_head.hpp"

#include "latte/backend.hpp"
#include "latte/backend_http.hpp"
#include "latte/corpus.hpp"
#include "latte/imagediff.hpp"
#include "latte/latex_script.hpp"
#include "latte/metrics.hpp"
#include "latte/orchestrator.hpp"
#include "latte/raster.hpp"
#include "latte/render.hpp"
