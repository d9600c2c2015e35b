#pragma once

#include "vinebc/core.hpp"
#include "vinebc/stats.hpp"
#include "vinebc/pair_copula.hpp"
#include "vinebc/vine_structure.hpp"
#include "vinebc/vine_model.hpp"
#include "vinebc/nvc_merge.hpp"
#include "vinebc/panel.hpp"
#include "vinebc/gam.hpp"
#include "vinebc/bias_correction.hpp"
#include "vinebc/evaluation.hpp"
#include "vinebc/synthetic.hpp"
#include "vinebc/config.hpp"
