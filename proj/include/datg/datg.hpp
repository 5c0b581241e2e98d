#pragma once

#include "datg/alignment.hpp"
#include "datg/compliance.hpp"
#include "datg/config.hpp"
#include "datg/dag.hpp"
#include "datg/errors.hpp"
#include "datg/gateway.hpp"
#include "datg/loop_detector.hpp"
#include "datg/reporting.hpp"
#include "datg/retry.hpp"
#include "datg/scoring.hpp"
#include "datg/trace.hpp"
