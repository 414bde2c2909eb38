// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "focus/backend.hpp"
#include "focus/compare.hpp"
#include "focus/error.hpp"
#include "focus/focus_core.hpp"
#include "focus/kv_cache.hpp"
#include "focus/metrics.hpp"
#include "focus/model.hpp"
#include "focus/oracle_trace.hpp"
#include "focus/rng.hpp"
#include "focus/run.hpp"
#include "focus/scheduler.hpp"
#include "focus/tensor.hpp"
#include "focus/theory.hpp"
#include "focus/workload.hpp"
