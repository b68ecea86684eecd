#pragma once

#include "discvar/autodiff.hpp"
#include "discvar/costs.hpp"
#include "discvar/errors.hpp"
#include "discvar/lgoc.hpp"
#include "discvar/lie.hpp"
#include "discvar/mech.hpp"
#include "discvar/solvers.hpp"
#include "discvar/systems.hpp"
#include "discvar/tboc.hpp"
