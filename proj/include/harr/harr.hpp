// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "harr/autodiff.hpp"
#include "harr/checkpoint.hpp"
#include "harr/commands.hpp"
#include "harr/config.hpp"
#include "harr/corpus.hpp"
#include "harr/encoder.hpp"
#include "harr/env.hpp"
#include "harr/error.hpp"
#include "harr/grpo.hpp"
#include "harr/http_llm.hpp"
#include "harr/metrics.hpp"
#include "harr/policy.hpp"
#include "harr/reward.hpp"
#include "harr/rng.hpp"
