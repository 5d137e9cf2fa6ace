#pragma once

// Umbrella header for the whole library.

#include "oca/adam.hpp"
#include "oca/backbone.hpp"
#include "oca/config.hpp"
#include "oca/dataset.hpp"
#include "oca/errors.hpp"
#include "oca/feature_store.hpp"
#include "oca/losses.hpp"
#include "oca/matrix.hpp"
#include "oca/ortho.hpp"
#include "oca/pipeline.hpp"
#include "oca/prototypes.hpp"
#include "oca/retrieval.hpp"
#include "oca/trainer.hpp"
