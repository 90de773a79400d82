#pragma once

#include "dicp/autodiff.hpp"
#include "dicp/error.hpp"
#include "dicp/grad.hpp"
#include "dicp/harness.hpp"
#include "dicp/icp.hpp"
#include "dicp/io.hpp"
#include "dicp/mask.hpp"
#include "dicp/pointcloud.hpp"
#include "dicp/radar.hpp"
#include "dicp/random.hpp"
#include "dicp/se_geometry.hpp"
#include "dicp/trainer.hpp"
