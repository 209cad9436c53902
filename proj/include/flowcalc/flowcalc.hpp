#pragma once

#include "flowcalc/dsl.hpp"
#include "flowcalc/engine.hpp"
#include "flowcalc/marginal.hpp"
#include "flowcalc/measures.hpp"
#include "flowcalc/models.hpp"
#include "flowcalc/orderings.hpp"
