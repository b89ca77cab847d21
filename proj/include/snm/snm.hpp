#pragma once

#include "snm/errors.hpp"
#include "snm/specialfns.hpp"
#include "snm/msn.hpp"
#include "snm/roots.hpp"
#include "snm/matching.hpp"
#include "snm/models.hpp"
#include "snm/estimators.hpp"
#include "snm/reference.hpp"
#include "snm/harness.hpp"
#include "snm/serialize.hpp"
