#pragma once

#include "falcon/bandit.hpp"
#include "falcon/csv.hpp"
#include "falcon/data.hpp"
#include "falcon/engine.hpp"
#include "falcon/error.hpp"
#include "falcon/experiment.hpp"
#include "falcon/fairness.hpp"
#include "falcon/log.hpp"
#include "falcon/model.hpp"
#include "falcon/policy.hpp"
#include "falcon/random.hpp"
