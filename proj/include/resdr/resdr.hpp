#pragma once

#include "resdr/appliance.hpp"
#include "resdr/core.hpp"
#include "resdr/distflow.hpp"
#include "resdr/linear_system.hpp"
#include "resdr/netmodel.hpp"
#include "resdr/optimizer.hpp"
#include "resdr/pfexact.hpp"
#include "resdr/qp.hpp"
#include "resdr/report.hpp"
#include "resdr/scenario.hpp"
