#pragma once

#include "msfa/ablation.hpp"
#include "msfa/checkpoint.hpp"
#include "msfa/config.hpp"
#include "msfa/data.hpp"
#include "msfa/image_io.hpp"
#include "msfa/losses.hpp"
#include "msfa/metrics.hpp"
#include "msfa/model.hpp"
#include "msfa/optim.hpp"
#include "msfa/schedule.hpp"
#include "msfa/trainer.hpp"
