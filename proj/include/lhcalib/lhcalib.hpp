#pragma once

#include "lhcalib/core.hpp"
#include "lhcalib/order1.hpp"
#include "lhcalib/order2.hpp"
#include "lhcalib/optimize.hpp"
#include "lhcalib/alpha.hpp"
#include "lhcalib/temperature.hpp"
#include "lhcalib/ensemble.hpp"
#include "lhcalib/synthetic.hpp"
