// SPDX-License-Identifier: Apache-2.0
// Umbrella header for the library (everything except the CLI front end).
#pragma once

#include "ilore/config.hpp"
#include "ilore/encodings.hpp"
#include "ilore/error.hpp"
#include "ilore/event_store.hpp"
#include "ilore/layers.hpp"
#include "ilore/long_term.hpp"
#include "ilore/metrics.hpp"
#include "ilore/model.hpp"
#include "ilore/parameters.hpp"
#include "ilore/reoccurrence_graph.hpp"
#include "ilore/rng.hpp"
#include "ilore/short_term.hpp"
#include "ilore/synth.hpp"
#include "ilore/tensor.hpp"
#include "ilore/training.hpp"
